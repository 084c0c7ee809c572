//! Experiment configuration: a TOML tree with `regime`, `output_dir`,
//! `parallelism` and the `[source]`, `[model]`, `[training]` and `[seeds]`
//! tables. Unknown keys are rejected with their key path.

use std::path::{Path, PathBuf};

use fedntc::federation::{ClientData, ModelConfig, Regime, TrainConfig};
use fedntc::nncore::Tensor;
use fedntc::parallel::Parallelism;
use fedntc::rng::{derive_seed, Stream};
use fedntc::sources::{
    default_benchmark, load_image_dataset, partition_non_iid, to_patches, Dataset, Dealing, ImageFormat, SourceSpec,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceBlock {
    /// The heterogeneous Gaussian benchmark with an orthogonal map.
    Benchmark {
        clients: usize,
        sigma_large: f64,
        sigma_small: f64,
        separation: f64,
        map_seed: u64,
        train_samples: usize,
        eval_samples: usize,
    },
    /// Any Gaussian-latent source.
    Custom {
        spec: SourceSpec,
        train_samples: usize,
        eval_samples: usize,
    },
    /// Images on disk, split over clients by label shards.
    Dataset {
        path: PathBuf,
        format: ImageFormat,
        clients: usize,
        classes_per_client: usize,
        /// Share of every client's shard held out for evaluation.
        eval_fraction: f64,
        patch: Option<PatchBlock>,
        /// Colour channels per pixel; enables the bits-per-pixel column.
        channels: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchBlock {
    pub channels: usize,
    pub side: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsBlock {
    pub master: u64,
    pub replicates: u64,
}

impl Default for SeedsBlock {
    fn default() -> Self {
        SeedsBlock {
            master: 0,
            replicates: 1,
        }
    }
}

impl SeedsBlock {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.master..self.master + self.replicates
    }
}

/// Top level without the training table, which needs its `lambda` key
/// split off first.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Outline {
    regime: Regime,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    #[serde(default)]
    parallelism: Parallelism,
    source: SourceBlock,
    #[serde(default)]
    model: ModelConfig,
    training: Table,
    #[serde(default)]
    seeds: SeedsBlock,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub output_dir: PathBuf,
    pub parallelism: Parallelism,
    pub source: SourceBlock,
    pub model: ModelConfig,
    /// `training.lambda` is one value or a list; each entry is one sweep point.
    pub lambdas: Vec<f64>,
    pub training: TrainConfig,
    pub seeds: SeedsBlock,
    /// The tree after overrides, as written next to the results.
    pub resolved: Table,
}

fn at<T: DeserializeOwned>(prefix: &str, v: Value) -> CliResult<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        CliError::Config(format!("at `{key}`: {}", e.into_inner()))
    })
}

/// Parses a literal the way TOML would, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `key.path=value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad key `{key}`")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let outline: Outline = at("", Value::Table(table.clone()))?;
        let mut training = outline.training;
        let lambdas = match training.remove("lambda") {
            None => return Err(CliError::Config("at `training.lambda`: missing".into())),
            Some(Value::Array(a)) => a
                .into_iter()
                .enumerate()
                .map(|(i, v)| at::<f64>(&format!("training.lambda[{i}]"), v))
                .collect::<CliResult<Vec<f64>>>()?,
            Some(v) => vec![at::<f64>("training.lambda", v)?],
        };
        if lambdas.is_empty() {
            return Err(CliError::Config("at `training.lambda`: empty list".into()));
        }
        let mut train: TrainConfig = at("training", Value::Table(training))?;
        for &l in &lambdas {
            train.lambda = l;
            train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        outline.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if outline.seeds.replicates == 0 {
            return Err(CliError::Config("at `seeds.replicates`: must be at least 1".into()));
        }
        let cfg = ExperimentConfig {
            regime: outline.regime,
            output_dir: outline.output_dir,
            parallelism: outline.parallelism,
            source: outline.source,
            model: outline.model,
            lambdas,
            training: train,
            seeds: outline.seeds,
            resolved: table,
        };
        cfg.check_source()?;
        Ok(cfg)
    }

    fn check_source(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        match &self.source {
            SourceBlock::Benchmark {
                train_samples,
                eval_samples,
                ..
            }
            | SourceBlock::Custom {
                train_samples,
                eval_samples,
                ..
            } if *train_samples == 0 || *eval_samples == 0 => {
                bad("at `source`: train_samples and eval_samples must be positive".into())
            }
            SourceBlock::Benchmark {
                clients,
                sigma_large,
                sigma_small,
                separation,
                ..
            } => default_benchmark(*clients, *sigma_large, *sigma_small, *separation, 0)
                .map(|_| ())
                .map_err(|e| CliError::Config(format!("at `source`: {e}"))),
            SourceBlock::Custom { spec, .. } => spec
                .validate()
                .map_err(|e| CliError::Config(format!("at `source.spec`: {e}"))),
            SourceBlock::Dataset { eval_fraction, .. } if !(*eval_fraction > 0.0 && *eval_fraction < 1.0) => {
                bad(format!("at `source.eval_fraction`: must lie in (0, 1), got {eval_fraction}"))
            }
            SourceBlock::Dataset { .. } => Ok(()),
        }
    }

    /// Training settings for one sweep point.
    pub fn training_for(&self, lambda: f64) -> TrainConfig {
        TrainConfig {
            lambda,
            ..self.training.clone()
        }
    }

    /// Per-client latent variances when the source is Gaussian.
    pub fn variances(&self) -> CliResult<Option<Vec<Vec<f64>>>> {
        Ok(self.gaussian_spec()?.map(|s| s.variances()))
    }

    fn gaussian_spec(&self) -> CliResult<Option<SourceSpec>> {
        match &self.source {
            SourceBlock::Benchmark {
                clients,
                sigma_large,
                sigma_small,
                separation,
                map_seed,
                ..
            } => default_benchmark(*clients, *sigma_large, *sigma_small, *separation, *map_seed)
                .map(Some)
                .map_err(|e| CliError::Config(e.to_string())),
            SourceBlock::Custom { spec, .. } => Ok(Some(spec.clone())),
            SourceBlock::Dataset { .. } => Ok(None),
        }
    }

    /// Pixels per sample for image sources with a channel count.
    pub fn pixels_per_sample(&self, dim: usize) -> Option<f64> {
        match &self.source {
            SourceBlock::Dataset {
                channels: Some(c), ..
            } if *c > 0 => Some(dim as f64 / *c as f64),
            _ => None,
        }
    }

    /// Client shards for replicate `seed`.
    pub fn client_data(&self, seed: u64) -> CliResult<Vec<ClientData>> {
        if let Some(spec) = self.gaussian_spec()? {
            let (train, eval) = match &self.source {
                SourceBlock::Benchmark {
                    train_samples,
                    eval_samples,
                    ..
                }
                | SourceBlock::Custom {
                    train_samples,
                    eval_samples,
                    ..
                } => (*train_samples, *eval_samples),
                SourceBlock::Dataset { .. } => unreachable!("not a Gaussian source"),
            };
            return fedntc::federation::synthetic_clients(&spec, train, eval, seed).map_err(CliError::training);
        }
        let SourceBlock::Dataset {
            path,
            format,
            clients,
            classes_per_client,
            eval_fraction,
            patch,
            ..
        } = &self.source
        else {
            unreachable!("Gaussian sources handled above")
        };
        let mut data = load_image_dataset(path, *format).map_err(CliError::loading)?;
        if let Some(p) = patch {
            data = to_patches(&data, p.channels, p.side, p.size).map_err(|e| CliError::Config(e.to_string()))?;
        }
        dataset_clients(&data, *clients, *classes_per_client, *eval_fraction, seed)
    }
}

fn dataset_clients(data: &Dataset, n: usize, s: usize, eval_fraction: f64, seed: u64) -> CliResult<Vec<ClientData>> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| CliError::Config("at `source.path`: label shards need a labelled dataset".into()))?;
    let plan = partition_non_iid(labels, n, s, derive_seed(seed, Stream::Partition, &[]), Dealing::Random)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let d = data.dim();
    plan.assignments
        .iter()
        .map(|idx| {
            let held = ((idx.len() as f64 * eval_fraction).ceil() as usize).clamp(1, idx.len().saturating_sub(1));
            let (train, eval) = idx.split_at(idx.len() - held);
            let rows = |ids: &[usize]| {
                let v: Vec<f64> = ids.iter().flat_map(|&i| data.samples.row(i).to_vec()).collect();
                Tensor::new(vec![ids.len(), d], v)
            };
            let (train, eval) = (rows(train), rows(eval));
            train
                .and_then(|t| eval.and_then(|e| ClientData::new(t, e)))
                .map_err(|e| CliError::Config(format!("at `source`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
regime = "fed"

[source]
type = "benchmark"
clients = 2
sigma_large = 4.0
sigma_small = 1.0
separation = 1.0
map_seed = 3
train_samples = 10
eval_samples = 10

[training]
rounds = 2
lambda = [0.5, 2]
"#;

    #[test]
    fn parses_lambda_lists_and_scalars() {
        let c = ExperimentConfig::parse(BASE, &[]).unwrap();
        assert_eq!(c.lambdas, vec![0.5, 2.0]);
        assert_eq!(c.training.rounds, 2);
        let c = ExperimentConfig::parse(BASE, &["training.lambda=3".into()]).unwrap();
        assert_eq!(c.lambdas, vec![3.0]);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = ExperimentConfig::parse(BASE, &["training.lr_decay=0.5".into()]).unwrap_err();
        assert!(e.to_string().contains("lr_decay"), "{e}");
        let e = ExperimentConfig::parse(BASE, &["model.widths=[3]".into()]).unwrap_err();
        assert!(e.to_string().contains("model"), "{e}");
        let e = ExperimentConfig::parse(BASE, &["training.rounds=\"many\"".into()]).unwrap_err();
        assert!(e.to_string().contains("training.rounds"), "{e}");
        let e = ExperimentConfig::parse(BASE, &["colour=1".into()]).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn required_fields_have_no_defaults() {
        let e = ExperimentConfig::parse(&BASE.replace("regime = \"fed\"", ""), &[]).unwrap_err();
        assert!(e.to_string().contains("regime"), "{e}");
        let e = ExperimentConfig::parse(&BASE.replace("lambda = [0.5, 2]", ""), &[]).unwrap_err();
        assert!(e.to_string().contains("training.lambda"), "{e}");
    }

    #[test]
    fn downstream_constraints_are_checked_at_load() {
        for bad in ["training.participation=0", "training.lambda=[1, -1]", "source.separation=2.0", "seeds.replicates=0"] {
            assert!(matches!(ExperimentConfig::parse(BASE, &[bad.into()]), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_create_nested_tables_and_parse_literals() {
        let mut t = Table::new();
        apply_override(&mut t, "a.b.c=[1, 2]").unwrap();
        apply_override(&mut t, "a.name=fed").unwrap();
        assert_eq!(t["a"]["b"]["c"], Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert_eq!(t["a"]["name"], Value::String("fed".into()));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a.name.x=1").is_err());
    }

    #[test]
    fn dataset_shards_hold_out_an_eval_split() {
        let labels: Vec<u16> = (0..40).map(|i| (i / 10) as u16).collect();
        let samples = Tensor::new(vec![40, 2], (0..80).map(f64::from).collect()).unwrap();
        let data = Dataset::new(samples, Some(labels), fedntc::sources::Normalization::Raw).unwrap();
        let clients = dataset_clients(&data, 4, 1, 0.25, 0).unwrap();
        assert_eq!(clients.len(), 4);
        for c in &clients {
            assert_eq!(c.train.rows(), 7);
            assert_eq!(c.eval.rows(), 3);
        }
    }

    #[test]
    fn shipped_config_parses() {
        let c = ExperimentConfig::parse(include_str!("../../../configs/benchmark.toml"), &[]).unwrap();
        assert_eq!(c.lambdas.len(), 3);
        assert_eq!(c.seeds.seeds().count(), 3);
    }
}
