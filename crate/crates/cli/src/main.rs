use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dcsurv::config::{load_model, save_model, RunConfig};
use dcsurv::data::{
    fit_preprocess, generate_synthetic, load_csv, write_csv, CensoringMode, DatasetSchema,
    SyntheticSpec, TimeDistribution,
};
use dcsurv::grids::{build_grid, event_histogram, GridSpec};
use dcsurv::losses::{
    comparison_factor, comparison_standard_error, count_pairs, estimate_comparison_probability,
    ComparisonSummary, MaskVariant,
};
use dcsurv::metrics::{evaluate_curves, AucWeighting};
use dcsurv::model::train_table;
use dcsurv::{Error, Result, Spacing, SurvivalCurve, SurvivalDataset};

#[derive(Parser)]
#[command(name = "dcsurv", version, about = "Discrete-time survival models with calibrated ranking losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic survival dataset as CSV.
    Synth(SynthArgs),
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a trained model on a test CSV with bootstrap resampling.
    Evaluate(EvaluateArgs),
    /// Count comparable pairs in a dataset, or sweep censoring rates on synthetic data.
    CompareCounts(CompareArgs),
    /// Per-node event and censoring counts for linear, logarithmic and quantile grids.
    GridInfo(GridArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Distribution {
    Uniform,
    Weibull,
    TwoCluster,
}

#[derive(Clone, Copy, ValueEnum)]
enum Censoring {
    /// Flip each event flag with probability c, keeping the time.
    Flags,
    /// Censor exactly round(c n) records, favouring late times.
    LateDropout,
    /// Competing uniform censoring time.
    Competing,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    censoring: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Distribution::Uniform)]
    distribution: Distribution,
    #[arg(long, value_enum, default_value_t = Censoring::Flags)]
    censoring_mode: Censoring,
    /// Late-dropout skew exponent.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DebugPredictions {
    /// Survival equal to the normalized rank of each record's observed time.
    Perfect,
    /// The same flat curve for everyone.
    Constant,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Directory holding model.ckpt and manifest.json.
    #[arg(long)]
    model: PathBuf,
    /// Test CSV in the training schema.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    /// Weight cases inside AUC(t) by inverse censoring probability.
    #[arg(long)]
    ipcw: bool,
    /// Replace model predictions (for checking the metric pipeline).
    #[arg(long, value_enum)]
    debug_predictions: Option<DebugPredictions>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct LabelColumns {
    #[arg(long, default_value = "time")]
    time_column: String,
    #[arg(long, default_value = "event")]
    event_column: String,
}

impl LabelColumns {
    fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            time_column: self.time_column.clone(),
            event_column: self.event_column.clone(),
            ..DatasetSchema::default()
        }
    }
}

#[derive(clap::Args)]
struct CompareArgs {
    #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
    data: Option<PathBuf>,
    #[command(flatten)]
    columns: LabelColumns,
    /// Comma-separated censoring rates for a synthetic sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Censoring::Flags)]
    censoring_mode: Censoring,
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    columns: LabelColumns,
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, bytes)?;
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn censoring_mode(mode: Censoring, strength: f64) -> CensoringMode {
    match mode {
        Censoring::Flags => CensoringMode::IndependentFlags,
        Censoring::LateDropout => CensoringMode::LateDropout { strength },
        Censoring::Competing => CensoringMode::Competing,
    }
}

/// Labels only: the comparison and grid commands ignore features.
fn load_outcomes(path: &Path, columns: &LabelColumns) -> Result<SurvivalDataset> {
    let table = load_csv(path, &columns.schema())?;
    SurvivalDataset::from_outcomes(&table.times, &table.events)
}

fn synth(args: SynthArgs) -> Result<()> {
    let distribution = match args.distribution {
        Distribution::Uniform => TimeDistribution::Uniform {
            low: 0.0,
            high: 100.0,
        },
        Distribution::Weibull => TimeDistribution::Weibull {
            shape: 1.5,
            scale: 20.0,
            coefficients: vec![0.8, -0.5, 0.0],
        },
        Distribution::TwoCluster => TimeDistribution::two_cluster(),
    };
    let data = generate_synthetic(&SyntheticSpec {
        n: args.n,
        censoring_rate: args.censoring,
        distribution,
        censoring: censoring_mode(args.censoring_mode, args.strength),
        seed: args.seed,
    })?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    emit(args.out.as_deref(), &buf)
}

fn train(config: &Path) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let cfg = RunConfig::from_toml(&text, config.parent().unwrap_or(Path::new(".")))?;
    let table = load_csv(&cfg.paths.data, &cfg.schema)?;
    let stats = fit_preprocess(&table)?;
    let (model, log) = train_table(&table, &stats, &cfg.model, &cfg.train)?;
    let dir = &cfg.paths.output_dir;
    let manifest = save_model(&model, dir, &cfg.schema, &cfg.metrics, Some(cfg.hash()?))?;
    fs::write(dir.join("config.toml"), &text)?;
    fs::write(dir.join("config.canonical.toml"), cfg.canonical()?)?;
    fs::write(dir.join("training_log.json"), json_bytes(&log)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "validation_loss", "improved"])?;
    for e in &log.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.validation_loss.to_string(),
            u8::from(e.improved).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(dir.join("training_log.csv"), bytes)?;
    eprintln!(
        "trained {} epochs (best {}), checkpoint sha256 {}",
        log.epochs.len(),
        log.best_epoch,
        manifest.checkpoint_sha256
    );
    Ok(())
}

fn debug_curves(kind: DebugPredictions, data: &SurvivalDataset, grid: &Arc<dcsurv::TimeGrid>) -> Result<Vec<SurvivalCurve>> {
    let times = data.times();
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let n = times.len() as f64;
    times
        .iter()
        .map(|t| {
            let v = match kind {
                DebugPredictions::Perfect => {
                    (sorted.partition_point(|s| s < t) + 1) as f64 / (n + 1.0)
                }
                DebugPredictions::Constant => 0.5,
            };
            SurvivalCurve::new(grid.clone(), vec![v; grid.len()])
        })
        .collect()
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, manifest) = load_model(&args.model)?;
    let table = load_csv(&args.data, &manifest.schema)?;
    let (data, predicted) = model.predict_table(&table)?;
    let curves = match args.debug_predictions {
        Some(kind) => debug_curves(kind, &data, model.grid())?,
        None => predicted,
    };
    let mut opts = manifest.metrics;
    if let Some(f) = args.folds {
        opts.bootstrap_folds = f;
    }
    opts.cdauc.tau1 = args.tau1.or(opts.cdauc.tau1);
    opts.cdauc.tau2 = args.tau2.or(opts.cdauc.tau2);
    if args.ipcw {
        opts.cdauc.weighting = AucWeighting::Ipcw;
    }
    let seed = args.seed.unwrap_or(model.config().seed);
    let report = evaluate_curves(&curves, &data, &opts, seed)?;
    emit(args.out.as_deref(), &json_bytes(&report)?)
}

#[derive(Serialize)]
struct DatasetComparison {
    #[serde(flatten)]
    summary: ComparisonSummary,
    normalized_event_event: f64,
    normalized_event_any: f64,
}

fn compare_counts(args: CompareArgs) -> Result<()> {
    let Some(rates) = args.sweep else {
        let path = args.data.as_deref().expect("clap requires data without sweep");
        let data = load_outcomes(path, &args.columns)?;
        let summary = comparison_factor(&data);
        let nn = (summary.n as f64).powi(2);
        let report = DatasetComparison {
            normalized_event_event: summary.event_event_pairs as f64 / nn,
            normalized_event_any: summary.event_any_pairs as f64 / nn,
            summary,
        };
        return emit(args.out.as_deref(), &json_bytes(&report)?);
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "censoring_rate",
        "observed_censoring_rate",
        "n",
        "pairs_event_event",
        "pairs_event_any",
        "observed_event_event",
        "observed_event_any",
        "estimated_event_event",
        "estimated_event_any",
        "standard_error_event_event",
        "standard_error_event_any",
        "factor_observed",
        "factor_estimated",
    ])?;
    for c in rates {
        let data = generate_synthetic(&SyntheticSpec {
            censoring: censoring_mode(args.censoring_mode, args.strength),
            ..SyntheticSpec::uniform(args.n, c, args.seed)
        })?;
        let (t, e) = (data.times(), data.events());
        let a = count_pairs(&t, &e, MaskVariant::EventEvent);
        let b = count_pairs(&t, &e, MaskVariant::EventAny);
        let nn = (args.n as f64).powi(2);
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        w.write_record([
            c.to_string(),
            data.censoring_rate().to_string(),
            args.n.to_string(),
            a.to_string(),
            b.to_string(),
            (a as f64 / nn).to_string(),
            (b as f64 / nn).to_string(),
            estimate_comparison_probability(c, MaskVariant::EventEvent)?.to_string(),
            estimate_comparison_probability(c, MaskVariant::EventAny)?.to_string(),
            comparison_standard_error(c, args.n, MaskVariant::EventEvent)?.to_string(),
            comparison_standard_error(c, args.n, MaskVariant::EventAny)?.to_string(),
            opt((a > 0).then(|| b as f64 / a as f64)),
            (1.0 / (1.0 - c)).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(args.out.as_deref(), &bytes)
}

fn grid_info(args: GridArgs) -> Result<()> {
    let data = load_outcomes(&args.data, &args.columns)?;
    if data.is_empty() {
        return Err(Error::Domain("dataset has no records".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["spacing", "node", "time", "events", "censored", "total"])?;
    for spacing in [Spacing::Linear, Spacing::Logarithmic, Spacing::Quantile] {
        let spec = GridSpec {
            t_max: args.t_max,
            t_min: args.t_min,
            ..GridSpec::new(spacing, args.nodes)
        };
        let grid = build_grid(&spec, &data)?;
        let name = serde_json::to_value(spacing)?;
        for (k, (count, t)) in event_histogram(&data, &grid).iter().zip(grid.nodes()).enumerate() {
            w.write_record([
                name.as_str().unwrap_or_default().to_string(),
                (k + 1).to_string(),
                t.to_string(),
                count.events.to_string(),
                count.censored.to_string(),
                count.total().to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(args.out.as_deref(), &bytes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train { config } => train(&config),
        Command::Evaluate(a) => evaluate(a),
        Command::CompareCounts(a) => compare_counts(a),
        Command::GridInfo(a) => grid_info(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={message}", e.kind());
            ExitCode::FAILURE
        }
    }
}
