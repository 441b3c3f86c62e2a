//! Summation helpers shared across modules.

/// Pairwise (tree) summation. Error grows as O(log n) instead of O(n).
pub fn pairwise_sum<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    const BLOCK: usize = 32;
    // Fixed-size stack of partial sums, one slot per tree level.
    let mut levels: Vec<(usize, f64)> = Vec::new();
    let mut block = 0.0;
    let mut in_block = 0usize;
    for v in values {
        block += v;
        in_block += 1;
        if in_block == BLOCK {
            push_level(&mut levels, block);
            block = 0.0;
            in_block = 0;
        }
    }
    let mut total = block;
    while let Some((_, s)) = levels.pop() {
        total += s;
    }
    total
}

fn push_level(levels: &mut Vec<(usize, f64)>, value: f64) {
    let mut carry = (0usize, value);
    while let Some(&(height, s)) = levels.last() {
        if height != carry.0 {
            break;
        }
        levels.pop();
        carry = (height + 1, s + carry.1);
    }
    levels.push(carry);
}

/// Exactly accumulated sum of `f64` values (Shewchuk's non-overlapping partials).
///
/// [`ExactSum::value`] is the correctly rounded total, so it does not depend on
/// the order in which values were added and is monotone in the exact sum.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    /// Correctly rounded value of the accumulated sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut i) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[i];
        let mut lo = 0.0;
        while i > 0 {
            i -= 1;
            let x = hi;
            let y = p[i];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: round-half-even on the partials may need a nudge.
        if i > 0 && ((lo < 0.0 && p[i - 1] < 0.0) || (lo > 0.0 && p[i - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl Extend<f64> for ExactSum {
    fn extend<T: IntoIterator<Item = f64>>(&mut self, iter: T) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut s = Self::new();
        s.extend(iter);
        s
    }
}

/// Logistic sigmoid, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; maps 0 and 1 to negative and positive infinity.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}
