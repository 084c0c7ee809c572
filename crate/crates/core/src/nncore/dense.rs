//! Dense layer stacks used for the analysis and synthesis transforms.
//!
//! Each layer computes `z = x Wᵀ + b` followed by an optional leaky ReLU.
//! Weights are stored row-major with shape `[out, in]`; batches are `[B, in]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    None,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Analysis,
    Synthesis,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Analysis => "analysis",
            Role::Synthesis => "synthesis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        DenseLayer {
            weight: Tensor::new(vec![out_dim, in_dim], data).expect("consistent shape"),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }
}

/// An analysis (`g_a`) or synthesis (`g_s`) transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub role: Role,
    pub layers: Vec<DenseLayer>,
}

/// Intermediate values kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, `inputs[0]` is the batch itself.
    inputs: Vec<Tensor>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self, params: &TransformParams) -> Tensor {
        let last = self.pre.last().expect("at least one layer");
        let act = params.layers.last().expect("at least one layer").activation;
        last.map(|z| act.apply(z))
    }

    /// Sign pattern of every leaky pre-activation. Finite differences are
    /// only meaningful between points sharing a pattern.
    pub fn kink_pattern(&self, params: &TransformParams) -> Vec<bool> {
        let mut out = Vec::new();
        for (layer, pre) in params.layers.iter().zip(&self.pre) {
            if layer.activation == Activation::LeakyRelu {
                out.extend(pre.data().iter().map(|&z| z > 0.0));
            }
        }
        out
    }
}

impl TransformParams {
    /// Builds a stack through the given widths, e.g. `[16, 32, 16]`. Hidden
    /// layers use leaky ReLU, the last layer is affine.
    pub fn init(role: Role, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "transform widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n {
                    Activation::None
                } else {
                    Activation::LeakyRelu
                };
                DenseLayer::init(widths[k], widths[k + 1], act, rng)
            })
            .collect();
        Ok(TransformParams { role, layers })
    }

    pub fn from_layers(role: Role, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("transform needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != [layer.out_dim()] {
                return Err(Error::Dimension {
                    layer: k,
                    expected: layer.out_dim(),
                    got: layer.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(Error::Dimension {
                    layer: k,
                    expected: layers[k - 1].out_dim(),
                    got: layer.in_dim(),
                });
            }
        }
        Ok(TransformParams { role, layers })
    }

    /// The identity map on `dim` coordinates.
    pub fn identity(role: Role, dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        TransformParams {
            role,
            layers: vec![DenseLayer {
                weight: w,
                bias: Tensor::zeros(&[dim]),
                activation: Activation::None,
            }],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.output(self))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<ForwardCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if current.shape().len() != 2 || current.cols() != layer.in_dim() {
                return Err(Error::Dimension {
                    layer: k,
                    expected: layer.in_dim(),
                    got: current.cols(),
                });
            }
            let z = affine(layer, &current);
            let next = z.map(|v| layer.activation.apply(v));
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Reverse-mode gradients of `⟨upstream, forward(x)⟩`. Returns parameter
    /// gradients (same layout as `self`) and the gradient w.r.t. `x`.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<(TransformParams, Tensor)> {
        let cache = self.forward_cached(x)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor,
    ) -> Result<(TransformParams, Tensor)> {
        let batch = cache.inputs[0].rows();
        if upstream.shape() != [batch, self.out_dim()] {
            return Err(Error::Dimension {
                layer: self.layers.len() - 1,
                expected: self.out_dim(),
                got: upstream.cols(),
            });
        }
        let mut grads = self.zeros_like();
        let mut g = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            // dL/dz = dL/da * act'(z)
            let pre = cache.pre[k].data();
            for (gv, &z) in g.data_mut().iter_mut().zip(pre) {
                *gv *= layer.activation.derivative(z);
            }
            let input = &cache.inputs[k];
            let gl = &mut grads.layers[k];
            let gw = gl.weight.data_mut();
            for b in 0..batch {
                let gz = &g.data()[b * out_dim..(b + 1) * out_dim];
                let xin = &input.data()[b * in_dim..(b + 1) * in_dim];
                for (o, &gzo) in gz.iter().enumerate() {
                    if gzo == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (w, &xi) in row.iter_mut().zip(xin) {
                        *w += gzo * xi;
                    }
                }
            }
            let gb = gl.bias.data_mut();
            for gz in g.data().chunks_exact(out_dim) {
                for (acc, &v) in gb.iter_mut().zip(gz) {
                    *acc += v;
                }
            }
            let w = layer.weight.data();
            let mut gin = Tensor::zeros(&[batch, in_dim]);
            for b in 0..batch {
                let gz = &g.data()[b * out_dim..(b + 1) * out_dim];
                let dst = &mut gin.data_mut()[b * in_dim..(b + 1) * in_dim];
                for (o, &gzo) in gz.iter().enumerate() {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for (d, &wv) in dst.iter_mut().zip(row) {
                        *d += gzo * wv;
                    }
                }
            }
            g = gin;
        }
        Ok((grads, g))
    }

    pub fn zeros_like(&self) -> TransformParams {
        TransformParams {
            role: self.role,
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

fn affine(layer: &DenseLayer, x: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
    let batch = x.rows();
    let w = layer.weight.data();
    let bias = layer.bias.data();
    let mut z = Vec::with_capacity(batch * out_dim);
    for b in 0..batch {
        let xin = &x.data()[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let dot: f64 = row.iter().zip(xin).map(|(a, b)| a * b).sum();
            z.push(dot + bias[o]);
        }
    }
    Tensor::new(vec![batch, out_dim], z).expect("consistent shape")
}

impl ParamSet for TransformParams {
    fn param_names(&self) -> Vec<String> {
        let role = self.role.as_str();
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, _)| [format!("{role}/{k}/weight"), format!("{role}/{k}/bias")])
            .collect()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single(weight: Vec<f64>, bias: Vec<f64>, n_in: usize) -> TransformParams {
        let n_out = bias.len();
        TransformParams::from_layers(
            Role::Analysis,
            vec![DenseLayer {
                weight: Tensor::new(vec![n_out, n_in], weight).unwrap(),
                bias: Tensor::vector(bias).unwrap(),
                activation: Activation::None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let t = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(t.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weight_layer_returns_bias() {
        let t = single(vec![0.0; 4], vec![3.0, 3.0], 2);
        let x = Tensor::from_rows(&[vec![-7.0, 11.5], vec![0.1, 0.2]]).unwrap();
        assert_eq!(t.forward(&x).unwrap().data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = rng_from_seed(1);
        let t = TransformParams::init(Role::Analysis, &[3, 4, 2], &mut rng).unwrap();
        let x = Tensor::zeros(&[5, 2]);
        match t.forward(&x) {
            Err(Error::Dimension { layer, expected, got }) => {
                assert_eq!((layer, expected, got), (0, 3, 2));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn broken_chain_rejected() {
        let mut rng = rng_from_seed(2);
        let a = DenseLayer::init(3, 4, Activation::LeakyRelu, &mut rng);
        let b = DenseLayer::init(5, 2, Activation::None, &mut rng);
        assert!(matches!(
            TransformParams::from_layers(Role::Synthesis, vec![a, b]),
            Err(Error::Dimension { layer: 1, .. })
        ));
    }

    #[test]
    fn matches_scalar_reference_loop() {
        let mut rng = rng_from_seed(42);
        let t = TransformParams::init(Role::Analysis, &[3, 5, 2], &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![-0.7, 0.1, 0.4]]).unwrap();
        let got = t.forward(&x).unwrap();
        // independent composition
        for b in 0..2 {
            let mut h: Vec<f64> = x.row(b).to_vec();
            for layer in &t.layers {
                let w = layer.weight.data();
                let mut next = vec![0.0; layer.out_dim()];
                for o in 0..layer.out_dim() {
                    let mut acc = layer.bias.data()[o];
                    for i in 0..layer.in_dim() {
                        acc += w[o * layer.in_dim() + i] * h[i];
                    }
                    next[o] = match layer.activation {
                        Activation::None => acc,
                        Activation::LeakyRelu => acc.max(0.2 * acc),
                    };
                }
                h = next;
            }
            for (a, e) in got.row(b).iter().zip(&h) {
                assert!((a - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rng_from_seed(3);
        let t = TransformParams::init(Role::Synthesis, &[4, 6, 3], &mut rng).unwrap();
        let x = Tensor::filled(&[2, 4], 0.5);
        let (g, gx) = t.backward(&x, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.params().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_upstream_t_times_x() {
        let t = single(vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.0], vec![0.1, 0.2], 3);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let up = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let (g, _) = t.backward(&x, &up).unwrap();
        let gw = g.layers[0].weight.data();
        for o in 0..2 {
            for i in 0..3 {
                let expected: f64 = (0..2).map(|b| up.row(b)[o] * x.row(b)[i]).sum();
                assert!((gw[o * 3 + i] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(g.layers[0].bias.data(), &[1.5, 1.0]);
    }

    #[test]
    fn affine_stack_is_affine_on_basis_vectors() {
        let mut rng = rng_from_seed(9);
        let mut t = TransformParams::init(Role::Analysis, &[3, 4, 2], &mut rng).unwrap();
        for l in &mut t.layers {
            l.activation = Activation::None;
        }
        let f = |v: Vec<f64>| t.forward(&Tensor::from_rows(&[v]).unwrap()).unwrap().into_data();
        let f0 = f(vec![0.0; 3]);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut e = vec![0.0; 3];
                e[i] = 1.0;
                f(e).iter().zip(&f0).map(|(a, b)| a - b).collect()
            })
            .collect();
        let v = [0.3, -2.0, 1.7];
        let fv = f(v.to_vec());
        for o in 0..2 {
            let pred = f0[o] + (0..3).map(|i| v[i] * cols[i][o]).sum::<f64>();
            assert!((fv[o] - pred).abs() < 1e-12);
        }
    }
}
