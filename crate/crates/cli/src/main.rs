use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use softdice::synth::CALIBRATION_DRAWS;
use softdice::{
    calibrate_mu_z, threshold, BinaryMask, DecisionThreshold, Estimator, LossMode, SweepAxis,
    SynthConfig,
};
use softdice_cli::commands::{self, IdcMethod, ScoreEstimator, TauSource};
use softdice_cli::format::emit;
use softdice_cli::io::{read_mask, read_probs, Manifest};

/// Image-level confidence scores, IDC bounds and risk-coverage analysis for
/// binary segmentation.
#[derive(Parser)]
#[command(name = "softdice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every sample of a manifest with one confidence estimator.
    Score(ScoreArgs),
    /// Risk-coverage curve and AURC from a scores CSV.
    Rc(RcArgs),
    /// Per-sample SDC/IDC ratio bounds.
    Bounds(BoundsArgs),
    /// Exact IDC of a single probability file.
    Idc(IdcArgs),
    /// Synthetic experiments with a known posterior.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// sdc, amsp, ane, mmmc, tla or hamming.
    #[arg(long)]
    estimator: String,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Entropy threshold for tla.
    #[arg(long, conflicts_with = "tau_manifest")]
    tau: Option<f64>,
    /// Tuning manifest from which tla fits its threshold.
    #[arg(long)]
    tau_manifest: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RcArgs {
    /// CSV with `sample_id`, `score` and `dice_error` columns.
    #[arg(long)]
    scores: PathBuf,
    /// Add oracle and random-abstention reference columns.
    #[arg(long)]
    references: bool,
    #[arg(long)]
    target_risk: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Enum,
    Pb,
    Full,
}

#[derive(Args)]
struct IdcArgs {
    /// Probability file; for `--method full` these are the untruncated
    /// Bernoulli parameters.
    #[arg(long)]
    probs: PathBuf,
    /// Prediction mask; defaults to thresholding the probabilities at `--gamma`.
    #[arg(long, conflicts_with = "gamma")]
    mask: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "pb")]
    method: MethodArg,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Conditional,
    Sampled,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; must not exist yet.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Logit mean, used as given.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "alpha")]
    mu_z: Option<f64>,
    /// Target foreground ratio; the logit mean is calibrated to it (default 0.25).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    rho_z: f64,
    #[arg(long, default_value_t = 0.0)]
    rho_eta: f64,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "conditional")]
    loss: LossArg,
    /// Comma-separated estimator names; defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Sweep axis (`mu-z`, `alpha` or `rho-eta`) and optional grid given as
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, num_args = 1..=2, value_names = ["AXIS", "GRID"], allow_hyphen_values = true)]
    sweep: Vec<String>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let estimator = ScoreEstimator::parse(&args.estimator)?;
    let tau = match (args.tau, &args.tau_manifest) {
        (Some(t), _) => Some(TauSource::Value(t)),
        (None, Some(p)) => Some(TauSource::Tuning(p)),
        (None, None) => None,
    };
    let manifest = Manifest::read(&args.manifest)?;
    let out = commands::score(
        &manifest,
        estimator,
        DecisionThreshold::new(args.gamma)?,
        tau,
    )?;
    emit(args.output.as_deref(), &out)
}

fn run_rc(args: RcArgs) -> Result<()> {
    let batch = commands::read_scores(&args.scores)?;
    let out = commands::rc(&batch, args.references, args.target_risk)?;
    emit(args.output.as_deref(), &out)
}

fn run_bounds(args: BoundsArgs) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let out = commands::bounds_table(&manifest, DecisionThreshold::new(args.gamma)?)?;
    emit(args.output.as_deref(), &out)
}

fn run_idc(args: IdcArgs) -> Result<()> {
    let probs = read_probs(&args.probs)?;
    let y_hat: BinaryMask = match &args.mask {
        Some(path) => {
            let mask = read_mask(path)?;
            if mask.len() != probs.len() {
                bail!(
                    "mask has {} values but probabilities have {}",
                    mask.len(),
                    probs.len()
                );
            }
            mask
        }
        None => threshold(&probs, DecisionThreshold::new(args.gamma.unwrap_or(0.5))?),
    };
    let method = match args.method {
        MethodArg::Enum => IdcMethod::Enum,
        MethodArg::Pb => IdcMethod::Pb,
        MethodArg::Full => IdcMethod::Full,
    };
    emit(
        args.output.as_deref(),
        &commands::idc_single(&probs, &y_hat, method)?,
    )
}

fn parse_sweep(args: &[String], n: usize) -> Result<Option<(SweepAxis, &'static str)>> {
    let Some(axis) = args.first() else {
        return Ok(None);
    };
    let grid = args.get(1).map(|g| commands::parse_grid(g)).transpose()?;
    let origin = if grid.is_some() {
        "user"
    } else {
        "default (reconstructed from figure axes)"
    };
    let axis = match (axis.replace('_', "-").as_str(), grid) {
        ("mu-z", Some(g)) => SweepAxis::MuZ(g),
        ("mu-z", None) => bail!("--sweep mu-z needs a grid"),
        ("alpha", Some(g)) => SweepAxis::Alpha(g),
        ("alpha", None) => SweepAxis::default_alpha(n),
        ("rho-eta", Some(g)) => SweepAxis::RhoEta(g),
        ("rho-eta", None) => SweepAxis::default_rho_eta(),
        (other, _) => bail!("unknown sweep axis `{other}` (expected mu-z, alpha or rho-eta)"),
    };
    Ok(Some((axis, origin)))
}

fn run_synth(args: SynthArgs) -> Result<()> {
    if args.out.exists() {
        bail!("output directory {} already exists", args.out.display());
    }
    let estimators = if args.estimators.is_empty() {
        Estimator::ALL.to_vec()
    } else {
        args.estimators
            .iter()
            .map(|name| {
                Estimator::from_name(name.trim()).with_context(|| {
                    let known: Vec<_> = Estimator::ALL.iter().map(|e| e.name()).collect();
                    format!(
                        "unknown estimator `{name}` (expected one of {})",
                        known.join(", ")
                    )
                })
            })
            .collect::<Result<_>>()?
    };
    let sweep = parse_sweep(&args.sweep, args.n)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()?;
    pool.install(|| {
        // Sweeps over the logit mean or alpha set it per point.
        let per_point = matches!(sweep, Some((SweepAxis::Alpha(_) | SweepAxis::MuZ(_), _)));
        let alpha = match args.mu_z {
            Some(_) => None,
            None if per_point => None,
            None => Some(args.alpha.unwrap_or(0.25)),
        };
        let mu_z = match (args.mu_z, alpha) {
            (Some(m), _) => m,
            (None, Some(a)) => {
                calibrate_mu_z(a, args.n, args.rho_z, args.seed).with_context(|| {
                    format!("calibrating mu_z to alpha {a} ({CALIBRATION_DRAWS} draws)")
                })?
            }
            (None, None) => 0.0,
        };
        let config = SynthConfig {
            n: args.n,
            mu_z,
            rho_z: args.rho_z,
            rho_eta: args.rho_eta,
            samples: args.samples,
            runs: args.runs,
            seed: args.seed,
            gamma: DecisionThreshold::new(args.gamma)?,
            loss: match args.loss {
                LossArg::Conditional => LossMode::ConditionalRisk,
                LossArg::Sampled => LossMode::Sampled,
            },
        };
        config.validate()?;
        let files = commands::synth(
            &config,
            alpha,
            &estimators,
            sweep.as_ref().map(|(a, o)| (a, *o)),
        )?;
        commands::write_output_dir(&args.out, &files)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => run_score(a),
        Command::Rc(a) => run_rc(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Idc(a) => run_idc(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
