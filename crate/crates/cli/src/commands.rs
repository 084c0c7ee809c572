//! The smaller subcommands: analytic oracle curves, label partitions and
//! finite-difference gradient checks.

use std::path::Path;

use fedntc::entropy::{FactorizedEntropyModel, DEFAULT_FILTERS};
use fedntc::federation::{objective_grads, objective_with_noise, NtcModel, TransformPair, Want};
use fedntc::nncore::gradcheck::{grad_check_with_step, Differentiable, FnPair, FD_STEP};
use fedntc::nncore::{Activation, DenseLayer, GradCheckReport, ParamSet, Role, Tensor, TransformParams};
use fedntc::oracle::{linear_grid, RdCurve};
use fedntc::rng::{rng_from_seed, Rng};
use fedntc::sources::{load_image_dataset, partition_non_iid, partition_non_iid_trimmed, Dealing, ImageFormat, PartitionPlan};
use rand::Rng as _;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Parses `"1,4;4,1"` into one variance row per client.
pub fn parse_variances(text: &str) -> CliResult<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("`{v}` is not a number")))
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::Usage("every client needs the same number of variances".into()));
    }
    Ok(rows)
}

/// `R^fed(D)` in bits per dimension on an even grid. Without explicit
/// bounds the grid runs from 1% of the smallest variance up to the mean
/// variance, where the rate reaches zero.
pub fn oracle_curve(variances: &[Vec<f64>], lo: Option<f64>, hi: Option<f64>, points: usize) -> CliResult<RdCurve> {
    if points == 0 {
        return Err(CliError::Usage("need at least one grid point".into()));
    }
    let all: Vec<f64> = variances.iter().flatten().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = lo.unwrap_or(0.01 * min);
    let hi = hi.unwrap_or(mean);
    if !(lo > 0.0 && hi >= lo) {
        return Err(CliError::Usage(format!("bad distortion range [{lo}, {hi}]")));
    }
    let grid = if points == 1 { vec![lo] } else { linear_grid(lo, hi, points) };
    RdCurve::analytic_fed(variances, &grid).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct PartitionReport {
    pub clients: usize,
    pub samples_per_client: usize,
    pub shards_per_client: usize,
    pub max_distinct_labels: usize,
    pub dropped: usize,
    pub plan: PartitionPlan,
}

pub enum LabelSource<'a> {
    File { path: &'a Path, format: ImageFormat },
    Balanced { classes: u16, per_class: usize },
}

pub fn partition(labels: LabelSource, clients: usize, shards: usize, seed: u64, trimmed: bool) -> CliResult<PartitionReport> {
    let labels: Vec<u16> = match labels {
        LabelSource::File { path, format } => load_image_dataset(path, format)
            .map_err(CliError::loading)?
            .labels
            .ok_or_else(|| CliError::Usage(format!("{} has no labels", path.display())))?,
        LabelSource::Balanced { classes, per_class } => {
            (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
        }
    };
    let plan = if trimmed {
        partition_non_iid_trimmed(&labels, clients, shards, seed, Dealing::Random)
    } else {
        partition_non_iid(&labels, clients, shards, seed, Dealing::Random)
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(PartitionReport {
        clients: plan.clients(),
        samples_per_client: plan.samples_per_client,
        shards_per_client: plan.shards_per_client,
        max_distinct_labels: (0..plan.clients())
            .map(|c| plan.distinct_labels(&labels, c))
            .max()
            .unwrap_or(0),
        dropped: plan.dropped.len(),
        plan,
    })
}

fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, spread: f64) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-spread..spread)).collect())
        .expect("consistent shape")
}

struct TransformProbe<'a> {
    base: &'a TransformParams,
    x: &'a Tensor,
    w: &'a Tensor,
}

impl TransformProbe<'_> {
    fn at(&self, flat: &[f64]) -> TransformParams {
        let mut p = self.base.clone();
        p.load_flat(flat);
        p
    }
}

impl Differentiable for TransformProbe<'_> {
    fn value(&self, flat: &[f64]) -> f64 {
        let y = self.at(flat).forward(self.x).expect("shapes fixed");
        y.data().iter().zip(self.w.data()).map(|(a, b)| a * b).sum()
    }
    fn gradient(&self, flat: &[f64]) -> Vec<f64> {
        self.at(flat).backward(self.x, self.w).expect("shapes fixed").0.flatten()
    }
    fn pattern(&self, flat: &[f64]) -> Option<Vec<bool>> {
        let p = self.at(flat);
        Some(p.forward_cached(self.x).expect("shapes fixed").kink_pattern(&p))
    }
}

struct ObjectiveProbe<'a> {
    base: &'a NtcModel,
    x: &'a Tensor,
    noise: &'a Tensor,
    lambda: f64,
}

impl ObjectiveProbe<'_> {
    fn at(&self, flat: &[f64]) -> NtcModel {
        let mut m = self.base.clone();
        m.load_flat(flat);
        m
    }
}

impl Differentiable for ObjectiveProbe<'_> {
    fn value(&self, flat: &[f64]) -> f64 {
        let m = self.at(flat);
        let t = &m.transforms;
        objective_with_noise(self.x, &t.analysis, &t.synthesis, &m.entropy, self.lambda, self.noise)
            .map(|o| o.loss)
            .unwrap_or(f64::NAN)
    }
    fn gradient(&self, flat: &[f64]) -> Vec<f64> {
        let m = self.at(flat);
        let g = objective_grads(self.x, &m.transforms, &m.entropy, self.lambda, self.noise, Want::ALL)
            .expect("finite objective");
        NtcModel {
            transforms: g.transforms.expect("requested"),
            entropy: g.entropy.expect("requested"),
        }
        .flatten()
    }
    fn pattern(&self, flat: &[f64]) -> Option<Vec<bool>> {
        let m = self.at(flat);
        let t = &m.transforms;
        let ca = t.analysis.forward_cached(self.x).expect("shapes fixed");
        let mut y = ca.output(&t.analysis);
        y.add_assign(self.noise);
        let cs = t.synthesis.forward_cached(&y).expect("shapes fixed");
        let mut p = ca.kink_pattern(&t.analysis);
        p.extend(cs.kink_pattern(&t.synthesis));
        Some(p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub seeds: u64,
    pub worst_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Finite-difference checks of the dense layers, the rate loss and the
/// full objective over `seeds` random draws each.
pub fn gradcheck(seeds: u64, tol: f64) -> Vec<CheckLine> {
    let mut lines: Vec<CheckLine> = Vec::new();
    let mut record = |name: &str, r: GradCheckReport| {
        let line = match lines.iter_mut().find(|l| l.name == name) {
            Some(l) => l,
            None => {
                lines.push(CheckLine {
                    name: name.to_string(),
                    seeds: 0,
                    worst_rel_error: 0.0,
                    checked: 0,
                    skipped: 0,
                    passed: true,
                });
                lines.last_mut().expect("just pushed")
            }
        };
        line.seeds += 1;
        line.worst_rel_error = line.worst_rel_error.max(r.max_rel_error);
        line.checked += r.checked;
        line.skipped += r.skipped;
        line.passed &= r.passed;
    };
    for seed in 0..seeds {
        let mut rng = rng_from_seed(seed);
        for (name, act) in [("dense linear", Activation::None), ("dense leaky-relu", Activation::LeakyRelu)] {
            let p = TransformParams::from_layers(Role::Analysis, vec![DenseLayer::init(5, 4, act, &mut rng)])
                .expect("one layer");
            let x = random_tensor(&mut rng, 6, 5, 2.0);
            let w = random_tensor(&mut rng, 6, 4, 1.0);
            let probe = TransformProbe { base: &p, x: &x, w: &w };
            record(name, grad_check_with_step(&probe, &p.flatten(), tol, FD_STEP));
        }

        let m = {
            let mut m = FactorizedEntropyModel::new(3, &DEFAULT_FILTERS, rng.random_range(0.5..3.0), &mut rng)
                .expect("valid filters");
            for t in m.params_mut() {
                for v in t.data_mut() {
                    *v += rng.random_range(-0.6..0.6);
                }
            }
            m
        };
        let v = random_tensor(&mut rng, 6, 3, 3.0);
        let f = FnPair {
            value: |flat: &[f64]| {
                let mut mm = m.clone();
                mm.load_flat(flat);
                mm.rate_loss(&v).unwrap_or(f64::NAN)
            },
            gradient: |flat: &[f64]| {
                let mut mm = m.clone();
                mm.load_flat(flat);
                mm.rate_loss_grad(&v, true)
                    .expect("finite rate")
                    .grad_params
                    .expect("requested")
                    .flatten()
            },
        };
        record("rate loss", grad_check_with_step(&f, &m.flatten(), tol, FD_STEP));

        let model = NtcModel {
            transforms: TransformPair::new(
                TransformParams::init(Role::Analysis, &[4, 6, 3], &mut rng).expect("valid widths"),
                TransformParams::init(Role::Synthesis, &[3, 6, 4], &mut rng).expect("valid widths"),
            )
            .expect("matching dims"),
            entropy: m,
        };
        let x = random_tensor(&mut rng, 5, 4, 2.0);
        let noise = random_tensor(&mut rng, 5, 3, 0.5);
        let probe = ObjectiveProbe {
            base: &model,
            x: &x,
            noise: &noise,
            lambda: rng.random_range(0.1..3.0),
        };
        record("objective", grad_check_with_step(&probe, &model.flatten(), tol, FD_STEP));
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_lists_parse() {
        assert_eq!(parse_variances("1,4; 4,1").unwrap(), vec![vec![1.0, 4.0], vec![4.0, 1.0]]);
        assert!(parse_variances("1,4;4").is_err());
        assert!(parse_variances("1,x").is_err());
    }

    #[test]
    fn default_grid_ends_at_zero_rate() {
        let c = oracle_curve(&[vec![1.0, 4.0]], None, None, 11).unwrap();
        assert_eq!(c.points.len(), 11);
        assert!(c.points.last().unwrap().1.abs() < 1e-12);
        assert!(c.is_nonincreasing(0.0));
    }

    #[test]
    fn balanced_partition_reports_sizes() {
        let r = partition(LabelSource::Balanced { classes: 10, per_class: 100 }, 10, 2, 0, false).unwrap();
        assert_eq!(r.samples_per_client, 100);
        assert!(r.max_distinct_labels <= 4);
    }

    #[test]
    fn gradients_check_out() {
        let lines = gradcheck(2, 1e-4);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.passed && l.seeds == 2), "{lines:?}");
    }
}
