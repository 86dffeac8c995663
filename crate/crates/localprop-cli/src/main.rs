//! Command-line front end: evaluate methods on a feature store, generate
//! synthetic stores, and sweep single parameters into CSV curves.
//!
//! Exit codes: 0 success, 1 bad arguments or evaluation failure, 2 store
//! read/write or format errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use localprop::{
    evaluate, read_store, sweep, sweep_csv, synth_generate, write_store, Error, EvalReport,
    Method, MethodConfig, SweepParam, TaskSpec,
};

#[derive(Parser)]
#[command(
    name = "localprop",
    version,
    about = "Few-shot classification over local feature graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one method over sampled episodes and write a JSON report
    Eval(EvalArgs),
    /// Generate a synthetic feature store
    Synth(SynthArgs),
    /// Evaluate along one parameter axis and write a CSV curve
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Path to the feature store
    #[arg(long)]
    features: PathBuf,

    /// One of gap-proto, matching, local-match, nbnn, global-lp, local-lp
    #[arg(long)]
    method: String,

    /// Classes per episode
    #[arg(long, default_value_t = 5)]
    ways: usize,

    /// Support images per class
    #[arg(long, default_value_t = 1)]
    shots: usize,

    /// Query images per class
    #[arg(long, default_value_t = 15)]
    queries_per_class: usize,

    /// Episodes to sample
    #[arg(long, default_value_t = 2000)]
    episodes: usize,

    /// Classify all queries of an episode jointly
    #[arg(long)]
    transductive: bool,

    /// Attention threshold on activation norms, relative to the maximum
    #[arg(long, default_value_t = 0.3)]
    tau: f64,

    /// Cluster budget per image
    #[arg(long, default_value_t = 60)]
    clusters: usize,

    /// Neighbors per node in the reciprocal k-NN graph
    /// (defaults to 50, or 5 for global-lp)
    #[arg(long)]
    knn: Option<usize>,

    /// Similarity sharpening exponent
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,

    /// Diffusion strength for feature propagation
    #[arg(long, default_value_t = 0.9)]
    alpha_feature: f64,

    /// Diffusion strength for label propagation
    #[arg(long, default_value_t = 0.9)]
    alpha_label: f64,

    /// Keep every spatial position instead of thresholding by norm
    #[arg(long)]
    no_attention: bool,

    /// Keep attended vectors as-is instead of clustering them
    #[arg(long)]
    no_pooling: bool,

    /// Build the label graph on raw vectors
    #[arg(long)]
    no_feature_propagation: bool,

    /// Base seed for episode sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output path (JSON report for eval, CSV for sweep)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    fn method(&self) -> Result<Method, Error> {
        Method::from_str(&self.method)
    }

    fn task(&self) -> TaskSpec {
        TaskSpec {
            ways: self.ways,
            shots: self.shots,
            queries_per_class: self.queries_per_class,
        }
    }

    fn config(&self, method: Method) -> MethodConfig {
        let defaults = MethodConfig::default();
        MethodConfig {
            tau: self.tau,
            clusters: self.clusters,
            knn: self
                .knn
                .unwrap_or(if method == Method::GlobalLp { 5 } else { 50 }),
            gamma: self.gamma,
            alpha_feature: self.alpha_feature,
            alpha_label: self.alpha_label,
            rho: defaults.rho,
            use_attention: !self.no_attention,
            use_pooling: !self.no_pooling,
            use_feature_propagation: !self.no_feature_propagation,
            transductive: self.transductive,
            seed: 0,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    classes: usize,

    #[arg(long, default_value_t = 50)]
    images_per_class: usize,

    /// Feature map width
    #[arg(long, default_value_t = 6)]
    width: usize,

    /// Feature map height
    #[arg(long, default_value_t = 6)]
    height: usize,

    /// Feature dimension
    #[arg(long, default_value_t = 32)]
    depth: usize,

    /// Fraction of positions covered by background clutter
    #[arg(long, default_value_t = 0.5)]
    clutter: f64,

    /// Within-class noise scale
    #[arg(long, default_value_t = 0.3)]
    noise: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value = "features.lpf")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,

    /// Parameter to vary: tau, clusters, knn, gamma, alpha-feature,
    /// alpha-label, or queries-per-class
    #[arg(long)]
    param: String,

    /// Comma-separated parameter values
    #[arg(long)]
    values: String,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format { .. } => 2,
        _ => 1,
    }
}

fn write_report(report: &EvalReport, path: &PathBuf) -> Result<(), Error> {
    let mut json = report.to_json();
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let method = args.method()?;
    let store = read_store(&args.features)?;
    let report = evaluate(
        &store,
        method,
        args.task(),
        &args.config(method),
        args.episodes,
        args.seed,
    )?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    write_report(&report, &out)?;
    println!(
        "{}: {:.4} \u{b1} {:.4}",
        report.method, report.mean_accuracy, report.ci95
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let store = synth_generate(
        args.classes,
        args.images_per_class,
        args.width,
        args.height,
        args.depth,
        args.clutter,
        args.noise,
        args.seed,
    )?;
    write_store(&store, &args.out)?;
    println!(
        "wrote {} classes x {} images ({}x{}x{}) to {}",
        store.class_count(),
        args.images_per_class,
        args.width,
        args.height,
        args.depth,
        args.out.display()
    );
    Ok(())
}

fn parse_values(list: &str) -> Result<Vec<f64>, Error> {
    list.split(',')
        .map(str::trim)
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("invalid sweep value {tok:?}")))
        })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let method = args.eval.method()?;
    let param = SweepParam::from_str(&args.param)?;
    let values = parse_values(&args.values)?;
    let store = read_store(&args.eval.features)?;
    let reports = sweep(
        &store,
        method,
        args.eval.task(),
        &args.eval.config(method),
        param,
        &values,
        args.eval.episodes,
        args.eval.seed,
    )?;
    let csv = sweep_csv(param, &values, &reports)?;
    let out = args
        .eval
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    std::fs::write(&out, &csv)?;
    for (value, report) in values.iter().zip(&reports) {
        println!(
            "{}={}: {:.4} \u{b1} {:.4}",
            param, value, report.mean_accuracy, report.ci95
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let benign = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match &cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
