//! Vector files and manifests.
//!
//! A vector file is either TEXT (UTF-8, one decimal number per line, optional
//! trailing newline) or BINARY: the magic bytes `SSV1`, an unsigned 32-bit
//! little-endian count `n`, then `n` little-endian IEEE-754 `f32` values. The
//! format is detected from the first four bytes.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use softdice::{BinaryMask, ProbVector};

pub const MAGIC: &[u8; 4] = b"SSV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Text,
    Binary,
}

/// Problem with a vector file, located by line (TEXT) or byte offset (BINARY).
#[derive(Debug, Clone, PartialEq)]
pub enum VectorFileError {
    Format(String),
    Validation { location: String, message: String },
}

impl fmt::Display for VectorFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorFileError::Format(m) => write!(f, "format error: {m}"),
            VectorFileError::Validation { location, message } => {
                write!(f, "validation error at {location}: {message}")
            }
        }
    }
}

impl std::error::Error for VectorFileError {}

fn invalid(location: String, message: impl Into<String>) -> VectorFileError {
    VectorFileError::Validation {
        location,
        message: message.into(),
    }
}

/// Decodes raw bytes into values, each tagged with its location for error reports.
pub fn decode_vector(bytes: &[u8]) -> Result<(VectorFormat, Vec<(String, f64)>), VectorFileError> {
    if bytes.starts_with(MAGIC) {
        return decode_binary(&bytes[MAGIC.len()..]).map(|v| (VectorFormat::Binary, v));
    }
    decode_text(bytes).map(|v| (VectorFormat::Text, v))
}

fn decode_binary(body: &[u8]) -> Result<Vec<(String, f64)>, VectorFileError> {
    let header: [u8; 4] = body
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| VectorFileError::Format("short read: missing element count".into()))?;
    let n = u32::from_le_bytes(header) as usize;
    let data = &body[4..];
    let expected = n
        .checked_mul(4)
        .ok_or_else(|| VectorFileError::Format("element count overflows".into()))?;
    if data.len() < expected {
        return Err(VectorFileError::Format(format!(
            "short read: {n} values declared, {} bytes present",
            data.len()
        )));
    }
    if data.len() > expected {
        return Err(VectorFileError::Format(format!(
            "{} trailing bytes after {n} values",
            data.len() - expected
        )));
    }
    Ok(data
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes(c.try_into().expect("4-byte chunk"));
            (format!("byte offset {}", 8 + 4 * i), f64::from(v))
        })
        .collect())
}

fn decode_text(bytes: &[u8]) -> Result<Vec<(String, f64)>, VectorFileError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| VectorFileError::Format(format!("not UTF-8 text: {e}")))?;
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(VectorFileError::Format("empty vector file".into()));
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let location = format!("line {}", i + 1);
            let line = line.strip_suffix('\r').unwrap_or(line).trim();
            let value: f64 = line
                .parse()
                .map_err(|_| invalid(location.clone(), format!("`{line}` is not a number")))?;
            Ok((location, value))
        })
        .collect()
}

fn check_range(values: &[(String, f64)]) -> Result<(), VectorFileError> {
    for (location, v) in values {
        if !(0.0..=1.0).contains(v) {
            return Err(invalid(location.clone(), format!("{v} is outside [0, 1]")));
        }
    }
    Ok(())
}

pub fn parse_probs(bytes: &[u8]) -> Result<ProbVector, VectorFileError> {
    let (_, values) = decode_vector(bytes)?;
    check_range(&values)?;
    ProbVector::new(values.into_iter().map(|(_, v)| v).collect())
        .map_err(|e| VectorFileError::Format(e.to_string()))
}

pub fn parse_mask(bytes: &[u8]) -> Result<BinaryMask, VectorFileError> {
    let (_, values) = decode_vector(bytes)?;
    for (location, v) in &values {
        if *v != 0.0 && *v != 1.0 {
            return Err(invalid(location.clone(), format!("{v} is not 0 or 1")));
        }
    }
    BinaryMask::from_reals(&values.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
        .map_err(|e| VectorFileError::Format(e.to_string()))
}

pub fn read_probs(path: &Path) -> Result<ProbVector> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_probs(&bytes).with_context(|| format!("in {}", path.display()))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mask(&bytes).with_context(|| format!("in {}", path.display()))
}

/// TEXT encoding with shortest round-trip decimals.
pub fn encode_text(values: &[f64]) -> Vec<u8> {
    let mut out = String::new();
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

/// BINARY encoding; values are narrowed to `f32`.
pub fn encode_binary(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub prob_path: PathBuf,
    pub truth_path: Option<PathBuf>,
}

/// CSV with header `sample_id,prob_path[,truth_path]`. Relative paths resolve
/// against the manifest's directory; an empty `truth_path` means no truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let column = |name: &str| headers.iter().position(|h| h == name);
        let (Some(id_col), Some(prob_col)) = (column("sample_id"), column("prob_path")) else {
            bail!(
                "manifest {} needs `sample_id` and `prob_path` columns",
                path.display()
            );
        };
        let truth_col = column("truth_path");
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.with_context(|| format!("manifest row {}", line + 2))?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let sample_id = field(id_col).to_owned();
            if sample_id.is_empty() {
                bail!("manifest row {}: empty sample_id", line + 2);
            }
            if !seen.insert(sample_id.clone()) {
                bail!(
                    "manifest row {}: duplicate sample_id `{sample_id}`",
                    line + 2
                );
            }
            let prob = field(prob_col);
            if prob.is_empty() {
                bail!("sample `{sample_id}`: empty prob_path");
            }
            let truth_path = truth_col.map(field).filter(|t| !t.is_empty()).map(resolve);
            rows.push(ManifestRow {
                sample_id,
                prob_path: resolve(prob),
                truth_path,
            });
        }
        if rows.is_empty() {
            bail!("manifest {} has no rows", path.display());
        }
        Ok(Self { rows })
    }

    /// Whether truth masks are given; mixing rows with and without truth is an error.
    pub fn has_truth(&self) -> Result<bool> {
        let with = self.rows.iter().filter(|r| r.truth_path.is_some()).count();
        if with != 0 && with != self.rows.len() {
            bail!(
                "truth_path must be given for every row or for none ({with} of {} rows have one)",
                self.rows.len()
            );
        }
        Ok(with != 0)
    }
}

/// A manifest row with its files loaded and lengths checked.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub sample_id: String,
    pub probs: ProbVector,
    pub truth: Option<BinaryMask>,
}

pub fn load_row(row: &ManifestRow) -> Result<LoadedSample> {
    let ctx = || format!("sample `{}`", row.sample_id);
    let probs = read_probs(&row.prob_path).with_context(ctx)?;
    let truth = match &row.truth_path {
        Some(p) => {
            let mask = read_mask(p).with_context(ctx)?;
            if mask.len() != probs.len() {
                bail!(
                    "sample `{}`: probability map has {} values but truth has {}",
                    row.sample_id,
                    probs.len(),
                    mask.len()
                );
            }
            Some(mask)
        }
        None => None,
    };
    Ok(LoadedSample {
        sample_id: row.sample_id.clone(),
        probs,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_examples() {
        assert_eq!(parse_probs(b"0.5\n1.0\n").unwrap().as_slice(), &[0.5, 1.0]);
        assert_eq!(
            parse_probs(b"0.5\r\n0.25").unwrap().as_slice(),
            &[0.5, 0.25]
        );
        let err = parse_probs(b"1.5\n").unwrap_err();
        assert_eq!(
            err,
            VectorFileError::Validation {
                location: "line 1".into(),
                message: "1.5 is outside [0, 1]".into()
            }
        );
        assert!(matches!(
            parse_probs(b"0.1\n\n0.2\n"),
            Err(VectorFileError::Validation { .. })
        ));
        assert!(matches!(parse_probs(b""), Err(VectorFileError::Format(_))));
        assert!(matches!(
            parse_probs(b"abc"),
            Err(VectorFileError::Validation { .. })
        ));
    }

    #[test]
    fn binary_examples() {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        assert_eq!(parse_probs(&bytes).unwrap().as_slice(), &[0.25]);
        assert_eq!(encode_binary(&[0.25]), bytes);

        assert!(
            matches!(parse_probs(&bytes[..10]), Err(VectorFileError::Format(m)) if m.contains("short read"))
        );
        assert!(matches!(
            parse_probs(b"SSV1\x01"),
            Err(VectorFileError::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            parse_probs(&extra),
            Err(VectorFileError::Format(_))
        ));

        let bad = encode_binary(&[0.5, 2.0]);
        assert!(matches!(
            parse_probs(&bad),
            Err(VectorFileError::Validation { location, .. }) if location == "byte offset 12"
        ));
    }

    #[test]
    fn masks_must_be_binary() {
        assert_eq!(
            parse_mask(b"1\n0\n1.0\n").unwrap().as_slice(),
            &[true, false, true]
        );
        assert!(matches!(
            parse_mask(b"1\n0.5\n"),
            Err(VectorFileError::Validation { .. })
        ));
        assert!(parse_mask(&encode_binary(&[1.0, 0.0])).is_ok());
    }

    #[test]
    fn encodings_agree() {
        let values = [0.0, 0.25, 0.5, 1.0, 0.125];
        let a = parse_probs(&encode_text(&values)).unwrap();
        let b = parse_probs(&encode_binary(&values)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(
            &m,
            "sample_id,prob_path,truth_path\na,a.txt,ta.txt\nb,/abs/b.bin,tb.txt\n",
        )
        .unwrap();
        let manifest = Manifest::read(&m).unwrap();
        assert_eq!(manifest.rows.len(), 2);
        assert_eq!(manifest.rows[0].prob_path, dir.path().join("a.txt"));
        assert_eq!(manifest.rows[1].prob_path, PathBuf::from("/abs/b.bin"));
        assert!(manifest.has_truth().unwrap());

        std::fs::write(&m, "sample_id,prob_path\na,a.txt\na,b.txt\n").unwrap();
        assert!(Manifest::read(&m)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));

        std::fs::write(
            &m,
            "sample_id,prob_path,truth_path\na,a.txt,\nb,b.txt,t.txt\n",
        )
        .unwrap();
        assert!(Manifest::read(&m).unwrap().has_truth().is_err());

        std::fs::write(&m, "id,path\na,a.txt\n").unwrap();
        assert!(Manifest::read(&m).is_err());
    }

    #[test]
    fn load_row_checks_lengths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.txt"), "0.5\n0.7\n").unwrap();
        std::fs::write(dir.path().join("t.txt"), "1\n").unwrap();
        let row = ManifestRow {
            sample_id: "s".into(),
            prob_path: dir.path().join("p.txt"),
            truth_path: Some(dir.path().join("t.txt")),
        };
        let err = load_row(&row).unwrap_err().to_string();
        assert!(err.contains("sample `s`"), "{err}");
    }
}
