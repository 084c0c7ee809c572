//! Clients draw `z ~ N(0, diag σ_i²)` and observe `x = f(z)` through one
//! map `f` shared by everybody.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::nncore::{Activation, DenseLayer, Role, Tensor, TransformParams};
use crate::rng::{derive_seed, rng_for, rng_from_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapKind {
    /// First `d_z` columns of a random orthogonal `d_x × d_x` matrix.
    OrthogonalLinear { seed: u64 },
    /// Leaky-ReLU network with the given hidden widths.
    FixedMlp { seed: u64, hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub d_z: usize,
    pub d_x: usize,
    /// Latent standard deviations, one row of `d_z` per client.
    pub scales: Vec<Vec<f64>>,
    pub map: MapKind,
}

impl SourceSpec {
    pub fn clients(&self) -> usize {
        self.scales.len()
    }

    /// Per-client latent variances.
    pub fn variances(&self) -> Vec<Vec<f64>> {
        self.scales
            .iter()
            .map(|s| s.iter().map(|v| v * v).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.d_x < self.d_z {
            return Err(Error::Config(format!(
                "need 0 < d_z <= d_x, got d_z={} d_x={}",
                self.d_z, self.d_x
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("source needs at least one client".into()));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.len() != self.d_z {
                return Err(Error::Config(format!(
                    "client {i}: {} scales for d_z={}",
                    s.len(),
                    self.d_z
                )));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(format!("client {i}: scales must be positive")));
            }
        }
        if let MapKind::FixedMlp { hidden, .. } = &self.map {
            if hidden.contains(&0) {
                return Err(Error::Config("mlp hidden widths must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Variance profiles over `groups` disjoint blocks of coordinates. Client
/// `i` puts its large variance on block `i % groups`. `separation` in
/// `[0, 1]` blends from identical profiles (large variance spread evenly)
/// at 0 to fully disjoint blocks at 1; the total variance is the same for
/// every value. Returns standard deviations.
pub fn heterogeneous_scales(
    clients: usize,
    dim: usize,
    groups: usize,
    sigma_large: f64,
    sigma_small: f64,
    separation: f64,
) -> Result<Vec<Vec<f64>>> {
    if groups == 0 || !dim.is_multiple_of(groups) {
        return Err(Error::Config(format!("{groups} groups do not split {dim} dimensions")));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::Config(format!("separation {separation} outside [0, 1]")));
    }
    if !(sigma_small > 0.0 && sigma_large >= sigma_small) {
        return Err(Error::Config("need 0 < sigma_small <= sigma_large".into()));
    }
    let block = dim / groups;
    let (lo, hi) = (sigma_small * sigma_small, sigma_large * sigma_large);
    Ok((0..clients)
        .map(|i| {
            let g = i % groups;
            (0..dim)
                .map(|j| {
                    let active = if j / block == g { 1.0 } else { 0.0 };
                    let w = separation * active + (1.0 - separation) / groups as f64;
                    (lo + (hi - lo) * w).sqrt()
                })
                .collect()
        })
        .collect())
}

/// Benchmark source: `d = 16`, orthogonal `f`, clients split over up to
/// four groups of active coordinates with standard deviation
/// `sigma_large` against `sigma_small` elsewhere.
pub fn default_benchmark(clients: usize, sigma_large: f64, sigma_small: f64, separation: f64, map_seed: u64) -> Result<SourceSpec> {
    let groups = match clients {
        0 => return Err(Error::Config("benchmark needs at least one client".into())),
        1 => 1,
        2 | 3 => 2,
        _ => 4,
    };
    let spec = SourceSpec {
        d_z: 16,
        d_x: 16,
        scales: heterogeneous_scales(clients, 16, groups, sigma_large, sigma_small, separation)?,
        map: MapKind::OrthogonalLinear { seed: map_seed },
    };
    spec.validate()?;
    Ok(spec)
}

/// The fixed map `f`, realised as a dense stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeMap {
    kind: MapKind,
    net: TransformParams,
}

impl GenerativeMap {
    pub fn new(kind: &MapKind, d_z: usize, d_x: usize) -> Result<Self> {
        let net = match kind {
            MapKind::OrthogonalLinear { seed } => {
                let mut rng = rng_for(*seed, Stream::Map, &[]);
                let g = DMatrix::<f64>::from_fn(d_x, d_x, |_, _| rng.sample(StandardNormal));
                let qr = g.qr();
                let mut q = qr.q();
                // fix column signs so the draw is Haar-distributed
                let r = qr.r();
                for j in 0..d_x {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                let w: Vec<f64> = (0..d_x)
                    .flat_map(|row| (0..d_z).map(move |col| (row, col)))
                    .map(|(row, col)| q[(row, col)])
                    .collect();
                TransformParams::from_layers(
                    Role::Synthesis,
                    vec![DenseLayer {
                        weight: Tensor::new(vec![d_x, d_z], w)?,
                        bias: Tensor::zeros(&[d_x]),
                        activation: Activation::None,
                    }],
                )?
            }
            MapKind::FixedMlp { seed, hidden } => {
                let mut widths = vec![d_z];
                widths.extend_from_slice(hidden);
                widths.push(d_x);
                TransformParams::init(Role::Synthesis, &widths, &mut rng_for(*seed, Stream::Map, &[]))?
            }
        };
        Ok(GenerativeMap {
            kind: kind.clone(),
            net,
        })
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn is_orthogonal(&self) -> bool {
        matches!(self.kind, MapKind::OrthogonalLinear { .. })
    }

    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        self.net.forward(z)
    }

    /// `f⁻¹` on the range of an orthogonal map; `None` for the MLP.
    pub fn invert(&self, x: &Tensor) -> Option<Result<Tensor>> {
        if !self.is_orthogonal() {
            return None;
        }
        let q = &self.net.layers[0].weight;
        let (d_x, d_z) = (q.rows(), q.cols());
        Some((|| {
            if x.shape().len() != 2 || x.cols() != d_x {
                return Err(Error::Shape(format!("expected [B, {d_x}], got {:?}", x.shape())));
            }
            let mut out = Tensor::zeros(&[x.rows(), d_z]);
            for b in 0..x.rows() {
                let xr = x.row(b);
                let zr = out.row_mut(b);
                for (i, &xi) in xr.iter().enumerate() {
                    let qrow = &q.data()[i * d_z..(i + 1) * d_z];
                    for (z, &qv) in zr.iter_mut().zip(qrow) {
                        *z += qv * xi;
                    }
                }
            }
            Ok(out)
        })())
    }
}

/// One client's shard drawn from its own seed.
pub fn gen_client(map: &GenerativeMap, scales: &[f64], samples: usize, seed: u64) -> Result<Dataset> {
    if samples == 0 {
        return Err(Error::Config("samples per client must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let d_z = scales.len();
    let z: Vec<f64> = (0..samples * d_z)
        .map(|k| scales[k % d_z] * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z = Tensor::new(vec![samples, d_z], z)?;
    let x = map.apply(&z)?;
    let mut ds = Dataset::new(x, None, Normalization::Raw)?;
    ds.latents = Some(z);
    Ok(ds)
}

/// Shards for every client in `spec`, client `i` seeded from `(seed, i)`.
pub fn gen_synthetic(spec: &SourceSpec, samples_per_client: usize, seed: u64) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let map = GenerativeMap::new(&spec.map, spec.d_z, spec.d_x)?;
    spec.scales
        .iter()
        .enumerate()
        .map(|(i, s)| {
            gen_client(&map, s, samples_per_client, derive_seed(seed, Stream::Source, &[i as u64]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_map_has_orthonormal_columns() {
        let map = GenerativeMap::new(&MapKind::OrthogonalLinear { seed: 3 }, 5, 8).unwrap();
        let q = &map.net.layers[0].weight;
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = (0..8).map(|r| q.data()[r * 5 + a] * q.data()[r * 5 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blend_keeps_total_variance() {
        for s in [0.0, 0.3, 1.0] {
            let sc = heterogeneous_scales(4, 16, 4, 10.0, 1.0, s).unwrap();
            for row in &sc {
                let total: f64 = row.iter().map(|v| v * v).sum();
                let expect = 16.0 * 1.0 + (100.0 - 1.0) * 4.0;
                assert!((total - expect).abs() < 1e-9, "{total}");
            }
        }
        let same = heterogeneous_scales(3, 8, 2, 5.0, 1.0, 0.0).unwrap();
        assert_eq!(same[0], same[1]);
    }

    #[test]
    fn bad_group_count_is_config_error() {
        assert!(heterogeneous_scales(2, 10, 3, 2.0, 1.0, 1.0).is_err());
        assert!(heterogeneous_scales(2, 10, 2, 2.0, 1.0, 1.5).is_err());
    }
}
