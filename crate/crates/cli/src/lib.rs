//! Command-line experiment runner for the `fedntc` testbed.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fedntc::federation::Regime;
use fedntc::parallel::Parallelism;
use fedntc::sources::ImageFormat;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fedntc", version, about = "Federated nonlinear transform coding testbed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every lambda x seed point of a config into a new run directory.
    Train(TrainArgs),
    /// Re-evaluate a trained point from its checkpoints.
    Eval(EvalArgs),
    /// Write the analytic federated rate-distortion curve as CSV.
    Oracle(OracleArgs),
    /// Split labels into non-i.i.d. client shards.
    Partition(PartitionArgs),
    /// Plot results files as SVG, with the plotted points as CSV.
    Plot(PlotArgs),
    /// Finite-difference gradient checks of layers, rate loss and objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override any config key, e.g. `--set training.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    /// Replaces `training.lambda`; repeat for a sweep.
    #[arg(long)]
    pub lambda: Vec<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// First replicate seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Exact run directory to create instead of a timestamped one.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Run clients one after another (bit-exact across machines).
    #[arg(long)]
    pub sequential: bool,
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A point directory inside a run directory.
    pub point: PathBuf,
    /// Load the checkpoints into another regime's model.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Take the client variances from a config's Gaussian source.
    #[arg(long, conflicts_with = "variances")]
    pub config: Option<PathBuf>,
    /// Client variances, clients separated by `;`, e.g. `1,4;4,1`.
    #[arg(long)]
    pub variances: Option<String>,
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Output CSV; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Labelled dataset file.
    #[arg(long, conflicts_with = "classes")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_format, default_value = "raw-f64")]
    pub format: ImageFormat,
    /// Synthetic balanced label set: number of classes...
    #[arg(long)]
    pub classes: Option<u16>,
    /// ...and samples per class.
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long)]
    pub clients: usize,
    /// Shards per client `S`.
    #[arg(long)]
    pub shards: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop the remainder instead of requiring an exact split.
    #[arg(long)]
    pub trimmed: bool,
    /// Plan as JSON; only the summary is printed when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `results.csv` files, or run directories containing one.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Oracle CSV (`D,R,provenance`) drawn dashed.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Output SVG; the CSV is written alongside with the same stem.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    match s {
        "local" => Ok(Regime::Local),
        "fed" => Ok(Regime::Fed),
        "fedavg" => Ok(Regime::Fedavg),
        _ => Err(format!("unknown regime `{s}` (local, fed, fedavg)")),
    }
}

fn parse_format(s: &str) -> Result<ImageFormat, String> {
    match s {
        "raw-f64" => Ok(ImageFormat::RawF64),
        "cifar10-binary" => Ok(ImageFormat::Cifar10Binary),
        _ => Err(format!("unknown format `{s}` (raw-f64, cifar10-binary)")),
    }
}

fn parallelism(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p.display(), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("stdout", e)),
    }
}

fn train_overrides(a: &TrainArgs) -> Vec<String> {
    let mut o = a.overrides.clone();
    if let Some(r) = a.regime {
        o.push(format!("regime=\"{r}\""));
    }
    if !a.lambda.is_empty() {
        let list: Vec<String> = a.lambda.iter().map(|l| format!("{l:?}")).collect();
        o.push(format!("training.lambda=[{}]", list.join(", ")));
    }
    if let Some(t) = a.rounds {
        o.push(format!("training.rounds={t}"));
    }
    if let Some(s) = a.seed {
        o.push(format!("seeds.master={s}"));
    }
    if let Some(k) = a.replicates {
        o.push(format!("seeds.replicates={k}"));
    }
    if let Some(d) = &a.output_dir {
        o.push(format!("output_dir={}", toml::Value::String(d.display().to_string())));
    }
    if a.sequential {
        o.push("parallelism=\"sequential\"".into());
    }
    o
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = ExperimentConfig::load(&a.config, &train_overrides(&a))?;
            let dir = match &a.run_dir {
                Some(d) => experiment::claim_run_dir(d)?,
                None => experiment::fresh_run_dir(&cfg.output_dir, cfg.regime)?,
            };
            let quiet = a.quiet;
            let rows = experiment::run_experiment(&cfg, &dir, |name| {
                if !quiet {
                    eprintln!("training {name}");
                }
            })?;
            for r in &rows {
                println!(
                    "{} lambda={} seed={}: {:.4} bits/dim, mse {:.5}, loss {:.4}",
                    r.regime, r.lambda, r.seed, r.bits_per_dim, r.mse, r.loss
                );
            }
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval(a) => {
            let line = experiment::evaluate_point(&a.point, a.regime, parallelism(a.sequential))?;
            println!("{}", serde_json::to_string(&line).expect("log lines serialize"));
            Ok(())
        }
        Command::Oracle(a) => {
            let variances = match (&a.config, &a.variances) {
                (Some(c), None) => ExperimentConfig::load(c, &[])?
                    .variances()?
                    .ok_or_else(|| CliError::Usage("the config's source is not Gaussian".into()))?,
                (None, Some(v)) => commands::parse_variances(v)?,
                _ => return Err(CliError::Usage("give either --config or --variances".into())),
            };
            let curve = commands::oracle_curve(&variances, a.d_min, a.d_max, a.points)?;
            write_out(a.out.as_deref(), &curve.to_csv())
        }
        Command::Partition(a) => {
            let source = match (&a.labels, a.classes) {
                (Some(path), None) => commands::LabelSource::File { path, format: a.format },
                (None, Some(classes)) => commands::LabelSource::Balanced {
                    classes,
                    per_class: a.per_class,
                },
                _ => return Err(CliError::Usage("give either --labels or --classes".into())),
            };
            let report = commands::partition(source, a.clients, a.shards, a.seed, a.trimmed)?;
            println!(
                "{} clients, {} samples and {} shards each, at most {} classes per client, {} dropped",
                report.clients,
                report.samples_per_client,
                report.shards_per_client,
                report.max_distinct_labels,
                report.dropped
            );
            if let Some(out) = &a.out {
                let json = serde_json::to_string(&report).expect("plans serialize");
                write_out(Some(out), &json)?;
            }
            Ok(())
        }
        Command::Plot(a) => {
            let mut points = Vec::new();
            for p in &a.results {
                let file = if p.is_dir() { p.join(experiment::RESULTS_FILE) } else { p.clone() };
                points.extend(plot::trained_points(&experiment::read_results(&file)?));
            }
            if points.is_empty() {
                return Err(CliError::Usage("the results files hold no rows".into()));
            }
            if let Some(o) = &a.oracle {
                points.extend(plot::read_oracle(o)?);
            }
            let svg = plot::render_svg(&points)?;
            write_out(Some(&a.out), &svg)?;
            write_out(Some(&a.out.with_extension("csv")), &plot::points_csv(&points))
        }
        Command::Gradcheck(a) => {
            let lines = commands::gradcheck(a.seeds, a.tol);
            for l in &lines {
                println!(
                    "{} {}: {} seeds, {} coordinates ({} skipped at kinks), worst relative error {:.2e}",
                    if l.passed { "ok  " } else { "FAIL" },
                    l.name,
                    l.seeds,
                    l.checked,
                    l.skipped,
                    l.worst_rel_error
                );
            }
            match lines.iter().filter(|l| !l.passed).count() {
                0 => Ok(()),
                k => Err(CliError::Check(format!("{k} gradient checks failed"))),
            }
        }
    }
}

/// Caps rayon's pool at `FNTC_THREADS` when set.
pub fn configure_threads(value: Option<&str>) -> CliResult<()> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FNTC_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("FNTC_THREADS: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
