use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform access to the tensors of a parameter container. Gradients use the
/// same container type as the parameters they belong to, so the two line up
/// entry by entry.
pub trait ParamSet {
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Flattens all parameters into one vector in container order.
    fn flatten(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        debug_assert_eq!(off, flat.len());
    }

    fn bit_eq_params(&self, other: &Self) -> bool
    where
        Self: Sized,
    {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bit_eq(y))
    }
}

/// Uniform average of parameter sets.
///
/// Each entry is averaged over its values in sorted order as an offset from
/// the smallest, so the result is bit-identical under any permutation of
/// `sets` and averaging identical sets returns them exactly.
pub fn average<P: ParamSet + Clone>(sets: &[&P]) -> Result<P> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Training("cannot average zero parameter sets".into()))?;
    let shapes: Vec<Vec<usize>> = first.params().iter().map(|t| t.shape().to_vec()).collect();
    for s in &sets[1..] {
        let ps = s.params();
        if ps.len() != shapes.len() || ps.iter().zip(&shapes).any(|(t, sh)| t.shape() != sh) {
            return Err(Error::Shape("averaging parameter sets of different layouts".into()));
        }
    }
    let flat: Vec<Vec<f64>> = sets.iter().map(|s| s.flatten()).collect();
    let n = sets.len() as f64;
    let mut column = vec![0.0; sets.len()];
    let mean: Vec<f64> = (0..flat[0].len())
        .map(|j| {
            for (c, f) in column.iter_mut().zip(&flat) {
                *c = f[j];
            }
            column.sort_by(f64::total_cmp);
            let base = column[0];
            base + column[1..].iter().map(|v| v - base).sum::<f64>() / n
        })
        .collect();
    let mut out = (*first).clone();
    out.load_flat(&mean);
    Ok(out)
}
