//! Training sweeps and re-evaluation of saved runs.
//!
//! A run directory holds the resolved `config.toml`, `results.csv` with one
//! row per sweep point, and one subdirectory per point containing
//! `log.jsonl`, `summary.json` and `checkpoints/`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedntc::federation::{evaluate, ClientEval, Federation, Regime, RoundRecord};
use fedntc::nncore::Checkpoint;
use fedntc::parallel::Parallelism;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const GLOBAL_CHECKPOINT: &str = "global.fntc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLine {
    pub id: usize,
    pub bits_per_sample: f64,
    pub mse: f64,
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub round: usize,
    pub regime: Regime,
    pub lambda: f64,
    pub per_client: Vec<ClientLine>,
    #[serde(rename = "R_n")]
    pub r_n: f64,
    #[serde(rename = "D_n")]
    pub d_n: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_db: Option<f64>,
}

impl LogLine {
    pub fn new(regime: Regime, lambda: f64, round: usize, per_client: &[ClientEval], r_n: f64, d_n: f64) -> Self {
        LogLine {
            round,
            regime,
            lambda,
            per_client: per_client
                .iter()
                .map(|c| ClientLine {
                    id: c.id,
                    bits_per_sample: c.bits_per_sample,
                    mse: c.mse,
                })
                .collect(),
            r_n,
            d_n,
            psnr_db: None,
        }
    }

    fn from_record(r: &RoundRecord) -> Self {
        LogLine {
            psnr_db: r.psnr_db,
            ..LogLine::new(r.regime, r.lambda, r.round, &r.per_client, r.r_n, r.d_n)
        }
    }
}

/// One row of `results.csv`: a sweep point averaged over the final window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub regime: Regime,
    pub lambda: f64,
    pub seed: u64,
    pub bits_per_sample: f64,
    pub bits_per_dim: f64,
    pub mse: f64,
    pub loss: f64,
    pub rounds_averaged: usize,
    pub bits_per_pixel: Option<f64>,
}

/// What a point directory needs to be rebuilt later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub regime: Regime,
    pub lambda: f64,
    pub seed: u64,
    pub clients: usize,
    pub result: ResultRow,
}

pub fn point_name(regime: Regime, lambda: f64, seed: u64) -> String {
    format!("{regime}_lambda-{lambda}_seed-{seed}")
}

pub fn client_checkpoint_name(id: usize) -> String {
    format!("client-{id:04}.fntc")
}

/// Fresh `<output_dir>/<UTC timestamp>-<regime>[-k]`; never an existing one.
pub fn fresh_run_dir(output_dir: &Path, regime: Regime) -> CliResult<PathBuf> {
    fs::create_dir_all(output_dir).map_err(|e| CliError::io(output_dir.display(), e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    for k in 1.. {
        let name = if k == 1 {
            format!("{stamp}-{regime}")
        } else {
            format!("{stamp}-{regime}-{k}")
        };
        let dir = output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(dir.display(), e)),
        }
    }
    unreachable!()
}

/// Claims `dir`, which must not exist yet.
pub fn claim_run_dir(dir: &Path) -> CliResult<PathBuf> {
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
    }
    fs::create_dir(dir).map_err(|e| CliError::io(format!("{} (run directories are never reused)", dir.display()), e))?;
    Ok(dir.to_path_buf())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

fn save_checkpoints(fed: &Federation, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let save = |ckpt: Checkpoint, name: String| {
        let path = dir.join(name);
        ckpt.save(&path).map_err(|e| CliError::io(path.display(), e))
    };
    save(fed.server_checkpoint(), GLOBAL_CHECKPOINT.into())?;
    for i in 0..fed.clients.len() {
        save(fed.client_checkpoint(i).map_err(CliError::training)?, client_checkpoint_name(i))?;
    }
    Ok(())
}

/// Trains every `λ × seed` point into `run_dir`, appending one results row
/// per finished point. `progress` sees each point name as it starts.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: &Path, mut progress: impl FnMut(&str)) -> CliResult<Vec<ResultRow>> {
    write_file(&run_dir.join(CONFIG_FILE), toml::to_string(&cfg.resolved).expect("tables serialize").as_bytes())?;
    let results_path = run_dir.join(RESULTS_FILE);
    let mut rows = Vec::new();
    for seed in cfg.seeds.seeds() {
        let data = cfg.client_data(seed)?;
        for &lambda in &cfg.lambdas {
            let name = point_name(cfg.regime, lambda, seed);
            progress(&name);
            let point_dir = run_dir.join(&name);
            fs::create_dir(&point_dir).map_err(|e| CliError::io(point_dir.display(), e))?;
            let dim = data[0].dim();
            let train = cfg.training_for(lambda);
            let mut fed = Federation::new(cfg.regime, &cfg.model, &train, data.clone(), seed, cfg.parallelism)
                .map_err(CliError::training)?;
            let log_path = point_dir.join(LOG_FILE);
            let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(log_path.display(), e))?);
            let trace = fed
                .run(|rec| {
                    let line = serde_json::to_string(&LogLine::from_record(rec)).expect("log lines serialize");
                    writeln!(log, "{line}").map_err(fedntc::Error::Io)
                })
                .map_err(CliError::training)?;
            log.flush().map_err(|e| CliError::io(log_path.display(), e))?;
            save_checkpoints(&fed, &point_dir.join(CHECKPOINT_DIR))?;

            let s = trace.summary;
            let row = ResultRow {
                regime: s.regime,
                lambda,
                seed,
                bits_per_sample: s.rate,
                bits_per_dim: s.rate / dim as f64,
                mse: s.distortion,
                loss: s.loss,
                rounds_averaged: s.rounds_averaged,
                bits_per_pixel: cfg.pixels_per_sample(dim).map(|p| s.rate / p),
            };
            let summary = PointSummary {
                regime: cfg.regime,
                lambda,
                seed,
                clients: data.len(),
                result: row.clone(),
            };
            write_file(
                &point_dir.join(SUMMARY_FILE),
                serde_json::to_string_pretty(&summary).expect("summaries serialize").as_bytes(),
            )?;
            append_row(&results_path, &row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

fn append_row(path: &Path, row: &ResultRow) -> CliResult<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path.display(), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|e| CliError::io(path.display(), e))?;
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    r.deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| CliError::io(path.display(), e))
}

/// Rebuilds a trained point from its checkpoints and evaluates every client
/// again. `regime` overrides the one the point was trained with; loading
/// fails cleanly when the checkpoints do not fit it.
pub fn evaluate_point(point_dir: &Path, regime: Option<Regime>, parallelism: Parallelism) -> CliResult<LogLine> {
    let summary_path = point_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&summary_path).map_err(|e| CliError::io(summary_path.display(), e))?;
    let summary: PointSummary = serde_json::from_str(&text).map_err(|e| CliError::io(summary_path.display(), e))?;
    let run_dir = point_dir
        .parent()
        .ok_or_else(|| CliError::Usage(format!("{} has no parent run directory", point_dir.display())))?;
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE), &[])?;
    let regime = regime.unwrap_or(summary.regime);
    let data = cfg.client_data(summary.seed)?;
    let train = cfg.training_for(summary.lambda);
    let mut fed =
        Federation::new(regime, &cfg.model, &train, data, summary.seed, parallelism).map_err(CliError::training)?;

    // read and restore everything into copies first so failures leave no
    // half-loaded state behind
    let ckpt_dir = point_dir.join(CHECKPOINT_DIR);
    let load = |name: String| {
        let path = ckpt_dir.join(&name);
        Checkpoint::load(&path).map_err(|e| CliError::io(path.display(), e))
    };
    let mut server = fed.server.clone();
    server
        .restore_from(&load(GLOBAL_CHECKPOINT.into())?)
        .map_err(|e| CliError::io(GLOBAL_CHECKPOINT, e))?;
    let mut clients = fed.clients.clone();
    for c in &mut clients {
        let name = client_checkpoint_name(c.id);
        c.restore_from(&load(name.clone())?).map_err(|e| CliError::io(name, e))?;
    }
    fed.server = server;
    fed.clients = clients;

    let per_client = evaluate(&fed.server, &fed.clients, parallelism).map_err(CliError::training)?;
    let rec = RoundRecord::new(
        train.rounds,
        regime,
        summary.lambda,
        per_client,
        Vec::new(),
        f64::NAN,
        train.psnr_peak,
    );
    Ok(LogLine::from_record(&rec))
}
