//! Deep factorized entropy model.
//!
//! Every latent channel owns a univariate, strictly increasing CDF built from
//! a short chain of monotone maps:
//!
//! ```text
//! c(x) = sigmoid(f_K(... f_1(x)))
//! f_k(u) = g_k(softplus(H_k) u + b_k)
//! g_k(z) = z + tanh(a_k) ⊙ tanh(z)      (k < K; g_K is the identity)
//! ```
//!
//! `softplus(H_k) > 0` and `tanh(a_k) > -1` keep every stage increasing. The
//! probability of a unit-width bin centred at `v` is `c(v + ½) - c(v - ½)`,
//! which serves both noisy training latents and integer symbols.

mod table;

pub use table::{quantize_pmf, CdfTable, ChannelCdf, DEFAULT_PRECISION, DEFAULT_TAIL_MASS};

use std::f64::consts::LN_2;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{ParamSet, Tensor};
use crate::rng::Rng;

/// Likelihoods are floored here before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
pub const DEFAULT_FILTERS: [usize; 3] = [3, 3, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedEntropyModel {
    channels: usize,
    /// `[1, filters..., 1]`
    widths: Vec<usize>,
    /// Raw matrices, layer k has shape `[C, widths[k+1], widths[k]]`.
    matrices: Vec<Tensor>,
    /// Layer k has shape `[C, widths[k+1]]`.
    biases: Vec<Tensor>,
    /// Raw gates for every layer but the last, shape `[C, widths[k+1]]`.
    gates: Vec<Tensor>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Values derived once per batch from the raw parameters.
struct Effective {
    /// softplus(H) per layer, same layout as `matrices`.
    h: Vec<Vec<f64>>,
    /// tanh(a) per gated layer.
    a: Vec<Vec<f64>>,
    /// Start of each layer inside a tape.
    offs: Vec<usize>,
}

#[derive(Default)]
struct Scratch {
    gu: Vec<f64>,
    gprev: Vec<f64>,
    gz: Vec<f64>,
}

/// Per-scalar forward record used by the backward pass.
struct Tape {
    /// Pre-gate activations of every layer, concatenated.
    z: Vec<f64>,
    /// Layer outputs, concatenated.
    u: Vec<f64>,
    /// tanh(z) for gated layers (unused slots for the last layer).
    tz: Vec<f64>,
    input: f64,
}

impl FactorizedEntropyModel {
    /// Builds a model with unit-scale initial density when `init_scale` is 1.
    pub fn new(channels: usize, filters: &[usize], init_scale: f64, rng: &mut Rng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("entropy model needs at least one channel".into()));
        }
        if filters.contains(&0) {
            return Err(Error::Config(format!("filter widths must be positive: {filters:?}")));
        }
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::Config(format!("init scale must be positive, got {init_scale}")));
        }
        let mut widths = vec![1];
        widths.extend_from_slice(filters);
        widths.push(1);
        let depth = widths.len() - 1;
        let scale = init_scale.powf(1.0 / depth as f64);
        let mut matrices = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        let mut gates = Vec::with_capacity(depth - 1);
        for k in 0..depth {
            let (out, inp) = (widths[k + 1], widths[k]);
            let init = inverse_softplus(1.0 / scale / out as f64);
            matrices.push(Tensor::filled(&[channels, out, inp], init));
            let b: Vec<f64> = (0..channels * out).map(|_| rng.random_range(-0.5..0.5)).collect();
            biases.push(Tensor::new(vec![channels, out], b).expect("shape"));
            if k + 1 < depth {
                gates.push(Tensor::zeros(&[channels, out]));
            }
        }
        Ok(Self {
            channels,
            widths,
            matrices,
            biases,
            gates,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn filters(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    fn effective(&self) -> Effective {
        Effective {
            h: self
                .matrices
                .iter()
                .map(|m| m.data().iter().map(|&v| softplus(v)).collect())
                .collect(),
            a: self
                .gates
                .iter()
                .map(|g| g.data().iter().map(|&v| v.tanh()).collect())
                .collect(),
            offs: self.widths[1..]
                .iter()
                .scan(0, |o, &w| {
                    let start = *o;
                    *o += w;
                    Some(start)
                })
                .collect(),
        }
    }

    fn new_tape(&self) -> Tape {
        let n: usize = self.widths[1..].iter().sum();
        Tape {
            z: vec![0.0; n],
            u: vec![0.0; n],
            tz: vec![0.0; n],
            input: 0.0,
        }
    }

    /// Forward through the chain for one scalar, filling `tape`.
    fn logit_taped(&self, eff: &Effective, channel: usize, x: f64, tape: &mut Tape) -> f64 {
        let depth = self.depth();
        let Tape { z, u, tz, input } = tape;
        *input = x;
        let mut off = 0;
        for k in 0..depth {
            let (out, inp) = (self.widths[k + 1], self.widths[k]);
            let h = &eff.h[k][channel * out * inp..][..out * inp];
            let b = &self.biases[k].data()[channel * out..][..out];
            let (done, rest) = u.split_at_mut(off);
            let prev: &[f64] = if k == 0 {
                std::slice::from_ref(input)
            } else {
                &done[off - inp..]
            };
            let cur = &mut rest[..out];
            if k + 1 < depth {
                let a = &eff.a[k][channel * out..][..out];
                for i in 0..out {
                    let mut s = b[i];
                    for (w, p) in h[i * inp..][..inp].iter().zip(prev) {
                        s += w * p;
                    }
                    let t = s.tanh();
                    z[off + i] = s;
                    tz[off + i] = t;
                    cur[i] = s + a[i] * t;
                }
            } else {
                for i in 0..out {
                    let mut s = b[i];
                    for (w, p) in h[i * inp..][..inp].iter().zip(prev) {
                        s += w * p;
                    }
                    z[off + i] = s;
                    cur[i] = s;
                }
            }
            off += out;
        }
        u[off - 1]
    }

    /// Backward of the logit for one scalar. Accumulates gradients w.r.t. the
    /// *effective* parameters into `acc` and returns d logit / d x scaled by
    /// `upstream`.
    fn logit_backward(
        &self,
        eff: &Effective,
        channel: usize,
        tape: &Tape,
        upstream: f64,
        mut acc: Option<&mut FactorizedEntropyModel>,
        scratch: &mut Scratch,
    ) -> f64 {
        let depth = self.depth();
        let Scratch { gu, gprev, gz } = scratch;
        gu.clear();
        gu.push(upstream);
        for k in (0..depth).rev() {
            let (out, inp) = (self.widths[k + 1], self.widths[k]);
            let off = eff.offs[k];
            let h = &eff.h[k][channel * out * inp..][..out * inp];
            let prev: &[f64] = if k == 0 {
                std::slice::from_ref(&tape.input)
            } else {
                &tape.u[off - inp..off]
            };
            let gated = k + 1 < depth;
            gz.clear();
            if gated {
                let a = &eff.a[k][channel * out..][..out];
                let t = &tape.tz[off..off + out];
                gz.extend((0..out).map(|i| gu[i] * (1.0 + a[i] * (1.0 - t[i] * t[i]))));
            } else {
                gz.extend_from_slice(&gu[..out]);
            }
            if let Some(acc) = acc.as_deref_mut() {
                if gated {
                    let t = &tape.tz[off..off + out];
                    let ga = &mut acc.gates[k].data_mut()[channel * out..][..out];
                    for i in 0..out {
                        ga[i] += gu[i] * t[i];
                    }
                }
                let gb = &mut acc.biases[k].data_mut()[channel * out..][..out];
                for i in 0..out {
                    gb[i] += gz[i];
                }
                let gh = &mut acc.matrices[k].data_mut()[channel * out * inp..][..out * inp];
                for i in 0..out {
                    for (g, p) in gh[i * inp..][..inp].iter_mut().zip(prev) {
                        *g += gz[i] * p;
                    }
                }
            }
            gprev.clear();
            gprev.resize(inp, 0.0);
            for i in 0..out {
                for (g, w) in gprev.iter_mut().zip(&h[i * inp..][..inp]) {
                    *g += gz[i] * w;
                }
            }
            std::mem::swap(gu, gprev);
        }
        gu[0]
    }

    /// Converts accumulated effective-parameter gradients into raw ones.
    fn finish_raw_grads(&self, acc: &mut FactorizedEntropyModel) {
        for (g, raw) in acc.matrices.iter_mut().zip(&self.matrices) {
            for (gv, &r) in g.data_mut().iter_mut().zip(raw.data()) {
                *gv *= sigmoid(r);
            }
        }
        for (g, raw) in acc.gates.iter_mut().zip(&self.gates) {
            for (gv, &r) in g.data_mut().iter_mut().zip(raw.data()) {
                let a = r.tanh();
                *gv *= 1.0 - a * a;
            }
        }
    }

    /// Logit of the CDF, `c(x) = sigmoid(logit(x))`.
    pub fn logit(&self, channel: usize, x: f64) -> f64 {
        let eff = self.effective();
        let mut tape = self.new_tape();
        self.logit_taped(&eff, channel, x, &mut tape)
    }

    /// CDF of `channel` evaluated at every entry of `x`.
    pub fn cumulative(&self, channel: usize, x: &Tensor) -> Tensor {
        assert!(channel < self.channels, "channel {channel} out of range");
        let eff = self.effective();
        let mut tape = self.new_tape();
        x.map(|v| sigmoid(self.logit_taped(&eff, channel, v, &mut tape)))
    }

    /// Bin probability `c(v + ½) - c(v - ½)` for a `[B, C]` batch.
    pub fn likelihood(&self, v: &Tensor) -> Result<Tensor> {
        self.check_batch(v)?;
        let eff = self.effective();
        let mut tape = self.new_tape();
        let c = self.channels;
        let mut out = v.clone();
        for (idx, p) in out.data_mut().iter_mut().enumerate() {
            let ch = idx % c;
            let x = *p;
            let lu = self.logit_taped(&eff, ch, x + 0.5, &mut tape);
            let ll = self.logit_taped(&eff, ch, x - 0.5, &mut tape);
            *p = bin_probability(lu, ll);
        }
        Ok(out)
    }

    /// Probability of the integer `value` under `channel`.
    pub fn symbol_probability(&self, channel: usize, value: f64) -> f64 {
        let eff = self.effective();
        let mut tape = self.new_tape();
        self.symbol_probability_with(&eff, &mut tape, channel, value)
    }

    fn symbol_probability_with(&self, eff: &Effective, tape: &mut Tape, channel: usize, value: f64) -> f64 {
        let lu = self.logit_taped(eff, channel, value + 0.5, tape);
        let ll = self.logit_taped(eff, channel, value - 0.5, tape);
        bin_probability(lu, ll)
    }

    /// Probabilities of the integers `lo..=hi` under `channel`; entry `k`
    /// equals `symbol_probability(channel, lo + k)`.
    pub fn symbol_probabilities(&self, channel: usize, lo: i32, hi: i32) -> Vec<f64> {
        let eff = self.effective();
        let mut tape = self.new_tape();
        let edges: Vec<f64> = (lo..=hi.saturating_add(1))
            .map(|y| self.logit_taped(&eff, channel, y as f64 - 0.5, &mut tape))
            .collect();
        edges.windows(2).map(|w| bin_probability(w[1], w[0])).collect()
    }

    /// Mean over the batch of the summed `-log2` likelihoods, in bits per sample.
    ///
    /// Equal to [`rate_from_likelihoods`] applied to [`Self::likelihood`].
    pub fn rate_loss(&self, v: &Tensor) -> Result<f64> {
        Ok(rate_from_likelihoods(&self.likelihood(v)?))
    }

    /// Rate loss with gradients w.r.t. the inputs and optionally the model.
    pub fn rate_loss_grad(&self, v: &Tensor, want_params: bool) -> Result<RateGrad> {
        self.check_batch(v)?;
        let batch = v.rows();
        let c = self.channels;
        let eff = self.effective();
        let mut tu = self.new_tape();
        let mut tl = self.new_tape();
        let mut scratch = Scratch::default();
        let mut acc = want_params.then(|| self.zeros_like());
        let mut grad_input = Tensor::zeros(v.shape());
        let inv_b = 1.0 / batch as f64;
        let mut total = 0.0;
        for (idx, &x) in v.data().iter().enumerate() {
            let ch = idx % c;
            let lu = self.logit_taped(&eff, ch, x + 0.5, &mut tu);
            let ll = self.logit_taped(&eff, ch, x - 0.5, &mut tl);
            let p = bin_probability(lu, ll);
            let pf = p.max(LIKELIHOOD_FLOOR);
            total += -pf.log2();
            // Below the floor the gradient is passed straight through so
            // that mass is still pulled toward the sample.
            let dr_dp = -inv_b / (pf * LN_2);
            let gu = dr_dp * sigmoid_prime(lu);
            let gl = -dr_dp * sigmoid_prime(ll);
            let dx_u = self.logit_backward(&eff, ch, &tu, gu, acc.as_mut(), &mut scratch);
            let dx_l = self.logit_backward(&eff, ch, &tl, gl, acc.as_mut(), &mut scratch);
            grad_input.data_mut()[idx] = dx_u + dx_l;
        }
        if let Some(a) = acc.as_mut() {
            self.finish_raw_grads(a);
        }
        Ok(RateGrad {
            bits: total * inv_b,
            grad_input,
            grad_params: acc,
        })
    }

    fn check_batch(&self, v: &Tensor) -> Result<()> {
        if v.shape().len() != 2 || v.cols() != self.channels {
            return Err(Error::Shape(format!(
                "entropy model has {} channels, batch shape is {:?}",
                self.channels,
                v.shape()
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> FactorizedEntropyModel {
        FactorizedEntropyModel {
            channels: self.channels,
            widths: self.widths.clone(),
            matrices: self.matrices.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            biases: self.biases.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            gates: self.gates.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Searches for `x` with `c(x) = q` by bisection on the logit.
    pub fn quantile(&self, channel: usize, q: f64) -> Result<f64> {
        assert!(q > 0.0 && q < 1.0);
        let target = (q / (1.0 - q)).ln();
        let eff = self.effective();
        let mut tape = self.new_tape();
        let mut f = |x: f64| self.logit_taped(&eff, channel, x, &mut tape) - target;
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while f(lo) > 0.0 {
            lo *= 2.0;
            if lo < -1e7 {
                return Err(Error::Table(format!("channel {channel}: quantile {q} below -1e7")));
            }
        }
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e7 {
                return Err(Error::Table(format!("channel {channel}: quantile {q} above 1e7")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Quantizes the per-channel pmfs into integer coding tables.
    pub fn build_cdf_table(&self, precision: u32, tail_mass: f64) -> Result<CdfTable> {
        table::build(self, precision, tail_mass)
    }
}

/// Bits per sample implied by a `[B, C]` batch of likelihoods.
pub fn rate_from_likelihoods(likelihoods: &Tensor) -> f64 {
    let total: f64 = likelihoods
        .data()
        .iter()
        .map(|&p| -p.max(LIKELIHOOD_FLOOR).log2())
        .sum();
    total / likelihoods.rows() as f64
}

/// Gradient bundle returned by [`FactorizedEntropyModel::rate_loss_grad`].
#[derive(Debug, Clone)]
pub struct RateGrad {
    pub bits: f64,
    pub grad_input: Tensor,
    pub grad_params: Option<FactorizedEntropyModel>,
}

#[inline]
fn sigmoid_prime(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// `sigmoid(upper) - sigmoid(lower)`, evaluated on whichever side of the
/// median keeps precision.
#[inline]
fn bin_probability(upper: f64, lower: f64) -> f64 {
    if upper + lower > 0.0 {
        sigmoid(-lower) - sigmoid(-upper)
    } else {
        sigmoid(upper) - sigmoid(lower)
    }
}

impl ParamSet for FactorizedEntropyModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.matrices.len() {
            names.push(format!("entropy/matrix{k}"));
            names.push(format!("entropy/bias{k}"));
            if k < self.gates.len() {
                names.push(format!("entropy/gate{k}"));
            }
        }
        names
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for k in 0..self.matrices.len() {
            out.push(&self.matrices[k]);
            out.push(&self.biases[k]);
            if k < self.gates.len() {
                out.push(&self.gates[k]);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut gates = self.gates.iter_mut();
        for (m, b) in self.matrices.iter_mut().zip(self.biases.iter_mut()) {
            out.push(m);
            out.push(b);
            if let Some(g) = gates.next() {
                out.push(g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
