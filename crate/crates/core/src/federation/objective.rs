//! The per-client rate-distortion objective `R + λ·D` under the uniform
//! noise proxy, with hand-written gradients.

use serde::{Deserialize, Serialize};

use super::state::TransformPair;
use crate::codec::add_uniform_noise;
use crate::entropy::FactorizedEntropyModel;
use crate::error::{Error, Result};
use crate::nncore::{Tensor, TransformParams};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss: f64,
    /// Bits per sample.
    pub rate: f64,
    /// Mean squared error per entry.
    pub distortion: f64,
}

/// Which parameter groups to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub transforms: bool,
    pub entropy: bool,
}

impl Want {
    pub const ALL: Want = Want {
        transforms: true,
        entropy: true,
    };
    pub const TRANSFORMS: Want = Want {
        transforms: true,
        entropy: false,
    };
    pub const ENTROPY: Want = Want {
        transforms: false,
        entropy: true,
    };
}

#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub value: Objective,
    pub transforms: Option<TransformPair>,
    pub entropy: Option<FactorizedEntropyModel>,
}

fn check(value: Objective) -> Result<Objective> {
    if !value.loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss (rate {}, distortion {})",
            value.rate, value.distortion
        )));
    }
    Ok(value)
}

/// Loss on `x` with fresh uniform noise from `rng`.
pub fn client_objective(
    x: &Tensor,
    analysis: &TransformParams,
    synthesis: &TransformParams,
    model: &FactorizedEntropyModel,
    lambda: f64,
    rng: &mut Rng,
) -> Result<Objective> {
    let y = analysis.forward(x)?;
    let y_tilde = add_uniform_noise(&y, rng);
    value_at(x, &y_tilde, synthesis, model, lambda)
}

/// Loss with the noise supplied explicitly, `ỹ = g_a(x) + noise`.
pub fn objective_with_noise(
    x: &Tensor,
    analysis: &TransformParams,
    synthesis: &TransformParams,
    model: &FactorizedEntropyModel,
    lambda: f64,
    noise: &Tensor,
) -> Result<Objective> {
    let mut y = analysis.forward(x)?;
    if !y.same_shape(noise) {
        return Err(Error::Shape(format!("noise {:?} vs latents {:?}", noise.shape(), y.shape())));
    }
    y.add_assign(noise);
    value_at(x, &y, synthesis, model, lambda)
}

fn value_at(
    x: &Tensor,
    y_tilde: &Tensor,
    synthesis: &TransformParams,
    model: &FactorizedEntropyModel,
    lambda: f64,
) -> Result<Objective> {
    let rate = model.rate_loss(y_tilde)?;
    let distortion = x.mse(&synthesis.forward(y_tilde)?)?;
    check(Objective {
        loss: rate + lambda * distortion,
        rate,
        distortion,
    })
}

/// Loss and gradients at `ỹ = g_a(x) + noise`. The entropy model only
/// enters through the rate, so entropy-only requests skip `g_s` entirely.
pub fn objective_grads(
    x: &Tensor,
    pair: &TransformPair,
    model: &FactorizedEntropyModel,
    lambda: f64,
    noise: &Tensor,
    want: Want,
) -> Result<ObjectiveGrads> {
    let cache_a = pair.analysis.forward_cached(x)?;
    let mut y_tilde = cache_a.output(&pair.analysis);
    if !y_tilde.same_shape(noise) {
        return Err(Error::Shape(format!("noise {:?} vs latents {:?}", noise.shape(), y_tilde.shape())));
    }
    y_tilde.add_assign(noise);
    let rg = model.rate_loss_grad(&y_tilde, want.entropy)?;

    if !want.transforms {
        let distortion = x.mse(&pair.synthesis.forward(&y_tilde)?)?;
        let value = check(Objective {
            loss: rg.bits + lambda * distortion,
            rate: rg.bits,
            distortion,
        })?;
        return Ok(ObjectiveGrads {
            value,
            transforms: None,
            entropy: rg.grad_params,
        });
    }

    let cache_s = pair.synthesis.forward_cached(&y_tilde)?;
    let x_hat = cache_s.output(&pair.synthesis);
    let distortion = x.mse(&x_hat)?;
    let value = check(Objective {
        loss: rg.bits + lambda * distortion,
        rate: rg.bits,
        distortion,
    })?;
    let scale = 2.0 * lambda / x.len() as f64;
    let mut upstream = x_hat;
    for (u, &xv) in upstream.data_mut().iter_mut().zip(x.data()) {
        *u = scale * (*u - xv);
    }
    let (g_s, mut d_y) = pair.synthesis.backward_cached(&cache_s, &upstream)?;
    d_y.add_assign(&rg.grad_input);
    let (g_a, _) = pair.analysis.backward_cached(&cache_a, &d_y)?;
    Ok(ObjectiveGrads {
        value,
        transforms: Some(TransformPair {
            analysis: g_a,
            synthesis: g_s,
        }),
        entropy: rg.grad_params,
    })
}
