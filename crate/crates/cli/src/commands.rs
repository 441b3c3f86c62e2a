//! The five subcommands, each rendering its full output as a string.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use softdice::idc::{idc_enum, idc_full_truncated, idc_pb};
use softdice::selective::RcCurve;
use softdice::synth::{SweepReport, MAX_REJECTIONS};
use softdice::{
    amsp, ane, aurc, bounds, coverage_at_risk, dice_error, hamming_confidence, mmmc, oracle_curve,
    random_baseline, rc_curve, run_experiment, run_sweep, sdc, threshold, tla, tla_fit_tau,
    BinaryMask, DecisionThreshold, Error, Estimator, ExperimentReport, ProbVector,
    ScoredPrediction, SweepAxis, SynthConfig,
};

use crate::format::g17;
use crate::io::{load_row, LoadedSample, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreEstimator {
    Sdc,
    Amsp,
    Ane,
    Mmmc,
    Tla,
    Hamming,
}

impl ScoreEstimator {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "sdc" => Self::Sdc,
            "amsp" => Self::Amsp,
            "ane" => Self::Ane,
            "mmmc" => Self::Mmmc,
            "tla" => Self::Tla,
            "hamming" => Self::Hamming,
            other => {
                bail!("unknown estimator `{other}` (expected sdc, amsp, ane, mmmc, tla or hamming)")
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sdc => "sdc",
            Self::Amsp => "amsp",
            Self::Ane => "ane",
            Self::Mmmc => "mmmc",
            Self::Tla => "tla",
            Self::Hamming => "hamming",
        }
    }
}

/// Where the TLA threshold comes from.
#[derive(Debug, Clone)]
pub enum TauSource<'a> {
    Value(f64),
    Tuning(&'a Path),
}

fn load_all(manifest: &Manifest) -> Result<Vec<LoadedSample>> {
    manifest.rows.par_iter().map(load_row).collect()
}

fn score_one(
    estimator: ScoreEstimator,
    probs: &ProbVector,
    y_hat: &BinaryMask,
    tau: Option<f64>,
) -> Result<f64, Error> {
    Ok(match estimator {
        ScoreEstimator::Sdc => sdc(probs, y_hat)?,
        ScoreEstimator::Amsp => amsp(probs),
        ScoreEstimator::Ane => ane(probs),
        ScoreEstimator::Mmmc => mmmc(probs),
        ScoreEstimator::Tla => tla(probs, tau.expect("tau resolved before scoring")),
        ScoreEstimator::Hamming => hamming_confidence(probs, y_hat)?,
    })
}

/// `sample_id,estimator,score[,dice_error]`, rows in manifest order.
pub fn score(
    manifest: &Manifest,
    estimator: ScoreEstimator,
    gamma: DecisionThreshold,
    tau_source: Option<TauSource<'_>>,
) -> Result<String> {
    let tau = match (estimator, tau_source) {
        (ScoreEstimator::Tla, None) => {
            bail!("estimator `tla` needs a threshold: pass --tau or --tau-manifest")
        }
        (ScoreEstimator::Tla, Some(TauSource::Value(t))) => {
            Some(softdice::TlaThreshold::new(t)?.tau())
        }
        (ScoreEstimator::Tla, Some(TauSource::Tuning(path))) => {
            let tuning = load_all(&Manifest::read(path)?)?;
            let maps: Vec<ProbVector> = tuning.into_iter().map(|s| s.probs).collect();
            Some(tla_fit_tau(&maps, gamma)?.tau())
        }
        _ => None,
    };
    let with_truth = manifest.has_truth()?;
    let samples = load_all(manifest)?;
    let rows: Vec<(f64, Option<f64>)> = samples
        .par_iter()
        .map(|s| {
            let y_hat = threshold(&s.probs, gamma);
            let value = score_one(estimator, &s.probs, &y_hat, tau)
                .with_context(|| format!("sample `{}`", s.sample_id))?;
            let loss = s
                .truth
                .as_ref()
                .map(|y| dice_error(y, &y_hat))
                .transpose()
                .with_context(|| format!("sample `{}`", s.sample_id))?;
            Ok((value, loss))
        })
        .collect::<Result<_>>()?;

    let mut out = String::from("sample_id,estimator,score");
    out.push_str(if with_truth { ",dice_error\n" } else { "\n" });
    for (s, (value, loss)) in samples.iter().zip(rows) {
        write!(out, "{},{},{}", s.sample_id, estimator.name(), g17(value))?;
        if let Some(loss) = loss {
            write!(out, ",{}", g17(loss))?;
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a `score` CSV (needs `sample_id`, `score` and `dice_error` columns).
pub fn read_scores(path: &Path) -> Result<Vec<ScoredPrediction>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading scores {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("scores file {} has no `{name}` column", path.display()))
    };
    let (id_col, score_col, loss_col) = (
        column("sample_id")?,
        column("score")?,
        column("dice_error")?,
    );
    reader
        .records()
        .enumerate()
        .map(|(i, record)| {
            let record = record?;
            let id = record.get(id_col).unwrap_or("").to_owned();
            let number = |col: usize, what: &str| -> Result<f64> {
                let raw = record.get(col).unwrap_or("");
                raw.parse()
                    .with_context(|| format!("row {} (`{id}`): bad {what} `{raw}`", i + 2))
            };
            Ok(ScoredPrediction::new(
                id.clone(),
                number(score_col, "score")?,
                number(loss_col, "dice_error")?,
            ))
        })
        .collect()
}

/// `coverage,selective_risk[,oracle_risk,random_risk]` rows plus `# aurc=` trailers.
pub fn rc(
    batch: &[ScoredPrediction],
    references: bool,
    target_risk: Option<f64>,
) -> Result<String> {
    let curve = rc_curve(batch)?;
    let losses: Vec<(&str, f64)> = batch.iter().map(|s| (s.id.as_str(), s.loss)).collect();
    let oracle = references.then(|| oracle_curve(&losses)).transpose()?;
    let random = references.then(|| random_baseline(&losses)).transpose()?;

    let mut out = String::from("coverage,selective_risk");
    if references {
        out.push_str(",oracle_risk,random_risk");
    }
    out.push('\n');
    for (i, p) in curve.points().iter().enumerate() {
        write!(out, "{},{}", g17(p.coverage), g17(p.risk))?;
        if let (Some(o), Some(r)) = (&oracle, random) {
            write!(out, ",{},{}", g17(o.points()[i].risk), g17(r))?;
        }
        out.push('\n');
    }
    writeln!(out, "# aurc={}", g17(aurc(&curve)))?;
    if let (Some(o), Some(r)) = (&oracle, random) {
        writeln!(out, "# aurc_oracle={}", g17(aurc(o)))?;
        writeln!(out, "# aurc_random={}", g17(r))?;
    }
    if let Some(target) = target_risk {
        writeln!(
            out,
            "# coverage_at_risk={}",
            g17(coverage_at_risk(&curve, target))
        )?;
    }
    Ok(out)
}

/// Per-sample bound report with a max/mean summary of ε over nonzero rows.
pub fn bounds_table(manifest: &Manifest, gamma: DecisionThreshold) -> Result<String> {
    let samples = load_all(manifest)?;
    let mut out = String::from("sample_id,k,mu,lambda,s,b_lower,b_upper,eps,flag\n");
    let mut eps_values = Vec::new();
    for s in &samples {
        let y_hat = threshold(&s.probs, gamma);
        match bounds(&s.probs, &y_hat) {
            Ok(r) => {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},",
                    s.sample_id,
                    r.k,
                    g17(r.mu),
                    g17(r.lambda),
                    g17(r.s),
                    g17(r.b_lower),
                    g17(r.b_upper),
                    g17(r.eps)
                )?;
                eps_values.push(r.eps);
            }
            Err(Error::ZeroForeground) => {
                let st = softdice::foreground_stats(&s.probs, &y_hat)?;
                writeln!(
                    out,
                    "{},{},{},{},{},,,,zero_foreground",
                    s.sample_id,
                    st.k,
                    g17(st.mu),
                    g17(st.lambda),
                    g17(st.s)
                )?;
            }
            Err(e) => return Err(e).with_context(|| format!("sample `{}`", s.sample_id)),
        }
    }
    if eps_values.is_empty() {
        out.push_str("# Max(ε)=, Mean(ε)=\n");
    } else {
        let max = eps_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = eps_values.iter().sum::<f64>() / eps_values.len() as f64;
        writeln!(out, "# Max(ε)={}, Mean(ε)={}", g17(max), g17(mean))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdcMethod {
    Enum,
    Pb,
    Full,
}

impl IdcMethod {
    pub fn name(self) -> &'static str {
        match self {
            IdcMethod::Enum => "enum",
            IdcMethod::Pb => "pb",
            IdcMethod::Full => "full",
        }
    }
}

/// IDC of a single map. For `Full`, the map holds the untruncated parameters `q`.
pub fn idc_single(probs: &ProbVector, y_hat: &BinaryMask, method: IdcMethod) -> Result<String> {
    let value = match method {
        IdcMethod::Enum => idc_enum(probs, y_hat)?,
        IdcMethod::Pb => idc_pb(probs, y_hat)?,
        IdcMethod::Full => idc_full_truncated(probs, y_hat)?,
    };
    Ok(format!("method,idc\n{},{}\n", method.name(), g17(value)))
}

/// Resolved synthetic configuration, written next to the results.
#[derive(Debug, Serialize)]
pub struct SynthMetadata {
    pub n: usize,
    /// Absent when a sweep sets the logit mean per point.
    pub mu_z: Option<f64>,
    pub mu_z_source: &'static str,
    pub alpha_target: Option<f64>,
    pub rho_z: f64,
    pub rho_eta: f64,
    pub samples: usize,
    pub runs: usize,
    pub seed: u64,
    pub gamma: f64,
    pub loss: &'static str,
    pub estimators: Vec<&'static str>,
    pub sweep: Option<SweepMetadata>,
    pub generator: &'static str,
    pub max_rejections: usize,
}

#[derive(Debug, Serialize)]
pub struct SweepMetadata {
    pub axis: &'static str,
    pub grid: Vec<f64>,
    pub grid_origin: &'static str,
    /// Logit mean used at each grid point.
    pub mu_z: Vec<f64>,
}

pub const GENERATOR_NOTE: &str = "xoshiro256++ seeded by SplitMix64; run r uses seed^r for logits/labels and one jump() of that state for perturbation noise; Box-Muller normals";

impl SynthMetadata {
    pub fn new(config: &SynthConfig, alpha: Option<f64>, estimators: &[Estimator]) -> Self {
        Self {
            n: config.n,
            mu_z: Some(config.mu_z),
            mu_z_source: if alpha.is_some() {
                "calibrated"
            } else {
                "given"
            },
            alpha_target: alpha,
            rho_z: config.rho_z,
            rho_eta: config.rho_eta,
            samples: config.samples,
            runs: config.runs,
            seed: config.seed,
            gamma: config.gamma.value(),
            loss: config.loss.name(),
            estimators: estimators.iter().map(|e| e.name()).collect(),
            sweep: None,
            generator: GENERATOR_NOTE,
            max_rejections: MAX_REJECTIONS,
        }
    }
}

/// Files produced by `synth`, as (file name, contents), in a fixed order.
pub type OutputFiles = Vec<(String, String)>;

fn curve_table(curves: &[(Estimator, &RcCurve)]) -> Result<String> {
    let mut out = String::from("coverage");
    for (e, _) in curves {
        write!(out, ",{}", e.name())?;
    }
    out.push('\n');
    let len = curves.first().map_or(0, |(_, c)| c.len());
    for i in 0..len {
        out.push_str(&g17(curves[0].1.points()[i].coverage));
        for (_, c) in curves {
            write!(out, ",{}", g17(c.points()[i].risk))?;
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn experiment_files(
    report: &ExperimentReport,
    metadata: &SynthMetadata,
) -> Result<OutputFiles> {
    let mut files = vec![(
        "metadata.json".to_owned(),
        serde_json::to_string_pretty(metadata)? + "\n",
    )];
    let mut summary = String::from("estimator,run,aurc\n");
    let mut risk = String::from("run,seed,full_coverage_risk\n");
    for run in &report.runs {
        let curves: Vec<(Estimator, &RcCurve)> = run.curves.iter().map(|(e, c)| (*e, c)).collect();
        files.push((format!("rc_run{:02}.csv", run.run), curve_table(&curves)?));
        for (e, c) in &run.curves {
            writeln!(summary, "{},{},{}", e.name(), run.run, g17(aurc(c)))?;
        }
        writeln!(risk, "{},{},{}", run.run, run.seed, g17(run.mean_risk))?;
    }
    let mut bands = String::from("estimator,min,mean,max\n");
    for &e in &report.estimators {
        let b = report.aurc_band(e).expect("estimator was run");
        writeln!(
            bands,
            "{},{},{},{}",
            e.name(),
            g17(b.min),
            g17(b.mean),
            g17(b.max)
        )?;
    }
    files.push(("aurc_summary.csv".to_owned(), summary));
    files.push(("aurc_bands.csv".to_owned(), bands));
    files.push(("risk_summary.csv".to_owned(), risk));
    Ok(files)
}

pub fn sweep_files(sweep: &SweepReport, metadata: &SynthMetadata) -> Result<OutputFiles> {
    let mut table = String::from("axis_value,mu_z,rho_eta,estimator,min,mean,max\n");
    let mut runs = String::from("axis_value,estimator,run,aurc\n");
    let mut risk = String::from("axis_value,min,mean,max\n");
    for point in &sweep.points {
        let r = &point.report;
        let v = g17(point.value);
        for &e in &r.estimators {
            let b = r.aurc_band(e).expect("estimator was run");
            writeln!(
                table,
                "{v},{},{},{},{},{},{}",
                g17(r.config.mu_z),
                g17(r.config.rho_eta),
                e.name(),
                g17(b.min),
                g17(b.mean),
                g17(b.max)
            )?;
            for run in &r.runs {
                writeln!(
                    runs,
                    "{v},{},{},{}",
                    e.name(),
                    run.run,
                    g17(run.aurc(e).expect("curve"))
                )?;
            }
        }
        let b = r.risk_band();
        writeln!(risk, "{v},{},{},{}", g17(b.min), g17(b.mean), g17(b.max))?;
    }
    Ok(vec![
        (
            "metadata.json".to_owned(),
            serde_json::to_string_pretty(metadata)? + "\n",
        ),
        ("sweep.csv".to_owned(), table),
        ("sweep_runs.csv".to_owned(), runs),
        ("sweep_risk.csv".to_owned(), risk),
    ])
}

/// Runs a synthetic experiment (or sweep) and renders its output files.
pub fn synth(
    config: &SynthConfig,
    alpha: Option<f64>,
    estimators: &[Estimator],
    sweep: Option<(&SweepAxis, &'static str)>,
) -> Result<OutputFiles> {
    let mut estimators = estimators.to_vec();
    estimators.sort_unstable();
    estimators.dedup();
    let mut metadata = SynthMetadata::new(config, alpha, &estimators);
    match sweep {
        None => experiment_files(&run_experiment(config, &estimators)?, &metadata),
        Some((axis, origin)) => {
            let report = run_sweep(config, axis, &estimators)?;
            if !matches!(axis, SweepAxis::RhoEta(_)) {
                metadata.mu_z = None;
                metadata.mu_z_source = "sweep";
            }
            metadata.sweep = Some(SweepMetadata {
                axis: axis.name(),
                grid: axis.values().to_vec(),
                grid_origin: origin,
                mu_z: report.points.iter().map(|p| p.report.config.mu_z).collect(),
            });
            sweep_files(&report, &metadata)
        }
    }
}

/// Writes all files into a fresh directory, assembled under a temporary name
/// and renamed into place so a failure leaves nothing behind.
pub fn write_output_dir(out: &Path, files: &OutputFiles) -> Result<()> {
    if out.exists() {
        bail!("output directory {} already exists", out.display());
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let staging = tempfile::Builder::new()
        .prefix(".synth-")
        .tempdir_in(parent)
        .with_context(|| format!("creating staging directory in {}", parent.display()))?;
    for (name, contents) in files {
        std::fs::write(staging.path().join(name), contents)?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, out).map_err(|e| {
        let _ = std::fs::remove_dir_all(&staged);
        anyhow!("moving results into {}: {e}", out.display())
    })
}

/// Parses `start:stop:step` (inclusive stop) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let [start, stop, step] = [parts[0], parts[1], parts[2]].map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid bound `{p}`"))
        });
        let (start, stop, step) = (start?, stop?, step?);
        if !(step > 0.0) || stop < start {
            bail!("grid `{spec}` needs step > 0 and stop >= start");
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid value `{v}`"))
        })
        .collect()
}
