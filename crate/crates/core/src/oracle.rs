//! Analytic rate-distortion ground truth for Gaussian latents.
//!
//! Rates are in bits per dimension, distortions in squared error per
//! dimension.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::codec::IntTensor;
use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::sources::GenerativeMap;

/// Bisection tolerance on the water level.
pub const WATER_TOL: f64 = 1e-10;

/// `max(0, ½ log₂(σ² / D))`.
pub fn gaussian_rd(variance: f64, distortion: f64) -> Result<f64> {
    if !(variance > 0.0 && distortion > 0.0) || !variance.is_finite() || !distortion.is_finite() {
        return Err(Error::Domain(format!(
            "gaussian_rd needs positive variance and distortion, got {variance}, {distortion}"
        )));
    }
    Ok((0.5 * (variance / distortion).log2()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterFill {
    pub theta: f64,
    pub per_dim: Vec<f64>,
    /// Weighted mean rate over dimensions.
    pub rate: f64,
}

/// Reverse water-filling with dimension weights `w` (summing to one): picks
/// `θ` so that `Σ w_j min(θ, σ_j²) = d`.
fn weighted_waterfill(variances: &[f64], weights: &[f64], d: f64) -> Result<WaterFill> {
    if variances.is_empty() || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("variances must be positive and finite".into()));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Domain(format!("target distortion {d} must be positive")));
    }
    let mean_d = |theta: f64| -> f64 {
        variances
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v.min(theta))
            .sum()
    };
    let max_var = variances.iter().cloned().fold(0.0, f64::max);
    let theta = if mean_d(max_var) <= d {
        max_var
    } else {
        let (mut lo, mut hi) = (0.0, max_var);
        while hi - lo > WATER_TOL {
            let mid = 0.5 * (lo + hi);
            if mean_d(mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let per_dim: Vec<f64> = variances.iter().map(|v| v.min(theta)).collect();
    let rate = variances
        .iter()
        .zip(&per_dim)
        .zip(weights)
        .map(|((v, dj), w)| w * gaussian_rd(*v, *dj).expect("positive"))
        .sum();
    Ok(WaterFill { theta, per_dim, rate })
}

/// Optimal split of mean distortion `d_total` over independent Gaussian
/// components.
pub fn reverse_waterfill(variances: &[f64], d_total: f64) -> Result<WaterFill> {
    let w = vec![1.0 / variances.len().max(1) as f64; variances.len()];
    weighted_waterfill(variances, &w, d_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRd {
    /// Client-averaged rate.
    pub rate: f64,
    pub theta: f64,
    /// Per client `(D_i, R_i)`, both per dimension.
    pub per_client: Vec<(f64, f64)>,
}

/// Best client-averaged rate at client-averaged distortion `d`, found by one
/// water-filling pass over every client's dimensions at once.
pub fn fed_rd(variances: &[Vec<f64>], d: f64) -> Result<FedRd> {
    let n = variances.len();
    if n == 0 || variances.iter().any(|v| v.is_empty()) {
        return Err(Error::Domain("fed_rd needs at least one client with one dimension".into()));
    }
    let flat: Vec<f64> = variances.iter().flatten().copied().collect();
    let weights: Vec<f64> = variances
        .iter()
        .flat_map(|v| std::iter::repeat_n(1.0 / (n * v.len()) as f64, v.len()))
        .collect();
    let wf = weighted_waterfill(&flat, &weights, d)?;
    let mut per_client = Vec::with_capacity(n);
    let mut offset = 0;
    for v in variances {
        let dj = &wf.per_dim[offset..offset + v.len()];
        let di = dj.iter().sum::<f64>() / v.len() as f64;
        let ri = v
            .iter()
            .zip(dj)
            .map(|(s, x)| gaussian_rd(*s, *x).expect("positive"))
            .sum::<f64>()
            / v.len() as f64;
        per_client.push((di, ri));
        offset += v.len();
    }
    Ok(FedRd {
        rate: wf.rate,
        theta: wf.theta,
        per_client,
    })
}

/// `d(f(z), f(ẑ))` as mean squared error per ambient entry.
pub fn latent_distortion(map: &GenerativeMap, z: &Tensor, z_hat: &Tensor) -> Result<f64> {
    if !z.same_shape(z_hat) {
        return Err(Error::Shape(format!("{:?} vs {:?}", z.shape(), z_hat.shape())));
    }
    map.apply(z)?.mse(&map.apply(z_hat)?)
}

/// Plug-in entropy of each column's histogram, averaged over columns.
pub fn empirical_discrete_entropy(samples: &IntTensor) -> f64 {
    let (rows, cols) = match samples.shape.as_slice() {
        [n] => (*n, 1),
        [n, d] => (*n, *d),
        other => panic!("expected 1-d or 2-d samples, got {other:?}"),
    };
    let mut total = 0.0;
    for c in 0..cols {
        let mut hist: HashMap<i32, usize> = HashMap::new();
        for r in 0..rows {
            *hist.entry(samples.data[r * cols + c]).or_default() += 1;
        }
        total -= hist
            .values()
            .map(|&k| {
                let p = k as f64 / rows as f64;
                p * p.log2()
            })
            .sum::<f64>();
    }
    total / cols as f64
}

/// Entropy of `round(X)` for `X ~ N(0, σ²)`.
pub fn discretized_gaussian_entropy(sigma: f64) -> Result<f64> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let reach = (12.0 * sigma).ceil() as i64 + 1;
    Ok(-(-reach..=reach)
        .map(|k| {
            let p = normal.cdf(k as f64 + 0.5) - normal.cdf(k as f64 - 0.5);
            if p > 0.0 {
                p * p.log2()
            } else {
                0.0
            }
        })
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Empirical,
    Trained,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::Empirical => "empirical",
            Provenance::Trained => "trained",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    /// `(D, R)` pairs sorted by `D`.
    pub points: Vec<(f64, f64)>,
    pub provenance: Provenance,
}

impl RdCurve {
    pub fn new(mut points: Vec<(f64, f64)>, provenance: Provenance) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        RdCurve { points, provenance }
    }

    /// `R^fed` sampled on `grid`.
    pub fn analytic_fed(variances: &[Vec<f64>], grid: &[f64]) -> Result<Self> {
        let points = grid
            .iter()
            .map(|&d| Ok((d, fed_rd(variances, d)?.rate)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RdCurve::new(points, Provenance::Analytic))
    }

    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1 + tol)
    }

    /// Every sampled point sits on or below the chord of its neighbours.
    pub fn is_convex(&self, tol: f64) -> bool {
        self.points.windows(3).all(|w| {
            let (d0, r0) = w[0];
            let (d1, r1) = w[1];
            let (d2, r2) = w[2];
            if d2 <= d0 {
                return true;
            }
            let t = (d1 - d0) / (d2 - d0);
            r1 <= r0 + t * (r2 - r0) + tol
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("D,R,provenance\n");
        for (d, r) in &self.points {
            s.push_str(&format!("{d},{r},{}\n", self.provenance.as_str()));
        }
        s
    }
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(gaussian_rd(1.0, 1.0).unwrap(), 0.0);
        assert!((gaussian_rd(1.0, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_rd(1.0, 3.0).unwrap(), 0.0);
        assert!(gaussian_rd(0.0, 1.0).is_err());
        assert!(gaussian_rd(1.0, -1.0).is_err());
    }

    #[test]
    fn equal_variances_split_evenly() {
        let wf = reverse_waterfill(&[2.0; 5], 0.7).unwrap();
        assert!(wf.per_dim.iter().all(|d| (d - 0.7).abs() < 1e-9));
    }

    #[test]
    fn large_target_gives_zero_rate() {
        let wf = reverse_waterfill(&[1.0, 4.0], 4.0).unwrap();
        assert_eq!(wf.rate, 0.0);
        assert_eq!(wf.per_dim, vec![1.0, 4.0]);
    }

    #[test]
    fn active_dimensions_share_the_water_level() {
        let v = [0.3, 1.0, 2.5, 7.0, 11.0];
        let wf = reverse_waterfill(&v, 1.5).unwrap();
        for (s, d) in v.iter().zip(&wf.per_dim) {
            if d < s {
                assert!((d - wf.theta).abs() <= WATER_TOL);
            }
        }
        let mean: f64 = wf.per_dim.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.5).abs() < 1e-9);
    }

    #[test]
    fn bad_targets_are_domain_errors() {
        assert!(reverse_waterfill(&[1.0], 0.0).is_err());
        assert!(reverse_waterfill(&[1.0], f64::NAN).is_err());
        assert!(fed_rd(&[], 1.0).is_err());
    }

    #[test]
    fn rounded_unit_gaussian_entropy() {
        assert!((discretized_gaussian_entropy(1.0).unwrap() - 2.10).abs() < 0.01);
    }
}
