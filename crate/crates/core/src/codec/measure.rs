use serde::{Deserialize, Serialize};

use super::bitstream::{decode, encode};
use super::quantize::quantize_round;
use crate::entropy::{CdfTable, FactorizedEntropyModel, LIKELIHOOD_FLOOR};
use crate::error::{Error, Result};
use crate::nncore::{Tensor, TransformParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateMeasurement {
    pub samples: usize,
    /// Coded payload length.
    pub bits_total: u64,
    pub bits_per_sample: f64,
    /// Model cross-entropy of the hard-quantized latents, bits per sample.
    pub model_bits_per_sample: f64,
    /// Mean squared error per entry after decoding and synthesis.
    pub distortion: f64,
}

/// Widest per-channel symbol range evaluated through a lookup table.
const LOOKUP_SPAN: i64 = 1 << 12;

/// Cross-entropy of integer latents in bits per sample. Same value as
/// `model.rate_loss(y)`; symbols are scored once per distinct value.
fn integer_rate(model: &FactorizedEntropyModel, symbols: &[i32], channels: usize, y: &Tensor) -> Result<f64> {
    if symbols.is_empty() {
        return model.rate_loss(y);
    }
    let mut lookup = Vec::with_capacity(channels);
    for c in 0..channels {
        let col = symbols.iter().skip(c).step_by(channels);
        let lo = *col.clone().min().expect("nonempty");
        let hi = *col.max().expect("nonempty");
        if hi as i64 - lo as i64 >= LOOKUP_SPAN {
            return model.rate_loss(y);
        }
        lookup.push((lo, model.symbol_probabilities(c, lo, hi)));
    }
    let total: f64 = symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let (lo, probs) = &lookup[i % channels];
            -probs[(s - lo) as usize].max(LIKELIHOOD_FLOOR).log2()
        })
        .sum();
    Ok(total / y.rows() as f64)
}

/// Compresses `x` for real: quantize `g_a(x)`, range-code it, decode the
/// stream and reconstruct through `g_s`.
pub fn measure_rate(
    x: &Tensor,
    analysis: &TransformParams,
    synthesis: &TransformParams,
    model: &FactorizedEntropyModel,
    tables: &CdfTable,
) -> Result<RateMeasurement> {
    let y = analysis.forward(x)?;
    let y_hat = quantize_round(&y)?;
    let stream = encode(&y_hat.data, tables)?;
    let decoded = decode(&stream, tables)?;
    if decoded != y_hat.data {
        return Err(Error::Decode("decoded latents differ from the encoded ones".into()));
    }
    let y_dec = Tensor::new(y_hat.shape.clone(), decoded.iter().map(|&v| v as f64).collect())?;
    let x_hat = synthesis.forward(&y_dec)?;
    let samples = x.rows();
    let bits_total = stream.payload_bits();
    Ok(RateMeasurement {
        samples,
        bits_total,
        bits_per_sample: bits_total as f64 / samples as f64,
        model_bits_per_sample: integer_rate(model, &y_hat.data, y_hat.shape[1], &y_dec)?,
        distortion: x.mse(&x_hat)?,
    })
}
