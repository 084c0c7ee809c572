//! Per-round evaluation on real bitstreams.

use serde::{Deserialize, Serialize};

use super::config::Regime;
use super::state::{ClientState, ServerState};
use crate::codec::measure_rate;
use crate::entropy::CdfTable;
use crate::error::{Error, Result};
use crate::parallel::{map, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub id: usize,
    pub bits_per_sample: f64,
    pub mse: f64,
    /// Cross-entropy of the quantized latents under the model, for checking
    /// the coder against the model.
    pub model_bits_per_sample: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub regime: Regime,
    pub lambda: f64,
    pub per_client: Vec<ClientEval>,
    #[serde(rename = "R_n")]
    pub r_n: f64,
    #[serde(rename = "D_n")]
    pub d_n: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_db: Option<f64>,
    pub participants: Vec<usize>,
    pub train_loss: f64,
}

impl RoundRecord {
    pub fn new(
        round: usize,
        regime: Regime,
        lambda: f64,
        per_client: Vec<ClientEval>,
        participants: Vec<usize>,
        train_loss: f64,
        psnr_peak: Option<f64>,
    ) -> Self {
        let n = per_client.len() as f64;
        let r_n = per_client.iter().map(|c| c.bits_per_sample).sum::<f64>() / n;
        let d_n = per_client.iter().map(|c| c.mse).sum::<f64>() / n;
        RoundRecord {
            round,
            regime,
            lambda,
            per_client,
            r_n,
            d_n,
            loss: r_n + lambda * d_n,
            psnr_db: psnr_peak.map(|p| 10.0 * (p * p / d_n).log10()),
            participants,
            train_loss,
        }
    }

    pub fn point(&self) -> RdPoint {
        RdPoint {
            lambda: self.lambda,
            rate: self.r_n,
            distortion: self.d_n,
            round: self.round,
            regime: self.regime,
        }
    }
}

/// Client-averaged rate (bits per sample) and distortion (MSE).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub lambda: f64,
    pub rate: f64,
    pub distortion: f64,
    pub round: usize,
    pub regime: Regime,
}

/// Averages over the last rounds of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub regime: Regime,
    pub lambda: f64,
    pub rate: f64,
    pub distortion: f64,
    pub loss: f64,
    pub rounds_averaged: usize,
}

pub fn final_summary(records: &[RoundRecord], window: usize) -> Result<FinalSummary> {
    let last = records
        .last()
        .ok_or_else(|| Error::Training("no rounds to summarise".into()))?;
    let tail = &records[records.len().saturating_sub(window.max(1))..];
    let k = tail.len() as f64;
    let rate = tail.iter().map(|r| r.r_n).sum::<f64>() / k;
    let distortion = tail.iter().map(|r| r.d_n).sum::<f64>() / k;
    Ok(FinalSummary {
        regime: last.regime,
        lambda: last.lambda,
        rate,
        distortion,
        loss: tail.iter().map(|r| r.loss).sum::<f64>() / k,
        rounds_averaged: tail.len(),
    })
}

/// Measures every client on its evaluation split with the model it would
/// use to compress: its own (Local-NTC), global transforms with its own
/// entropy model (Fed-NTC), or the global model (FedAvg).
pub fn evaluate(server: &ServerState, clients: &[ClientState], par: Parallelism) -> Result<Vec<ClientEval>> {
    let cfg = &server.config;
    let shared_table: Option<CdfTable> = match (&server.regime, &server.entropy) {
        (Regime::Fedavg, Some(e)) => Some(e.build_cdf_table(cfg.precision, cfg.tail_mass)?),
        (Regime::Fedavg, None) => return Err(Error::Training("fedavg server has no entropy model".into())),
        _ => None,
    };
    let results = map(par, clients, |_, c| -> Result<ClientEval> {
        let (pair, entropy) = match server.regime {
            Regime::Local => (
                c.transforms
                    .as_ref()
                    .ok_or_else(|| Error::Training("client has no transforms".into()))?,
                &c.entropy,
            ),
            Regime::Fed => (server.global()?, &c.entropy),
            Regime::Fedavg => (server.global()?, server.entropy.as_ref().expect("checked above")),
        };
        let own;
        let table = match &shared_table {
            Some(t) => t,
            None => {
                own = entropy.build_cdf_table(cfg.precision, cfg.tail_mass)?;
                &own
            }
        };
        let m = measure_rate(&c.data.eval, &pair.analysis, &pair.synthesis, entropy, table)?;
        Ok(ClientEval {
            id: c.id,
            bits_per_sample: m.bits_per_sample,
            mse: m.distortion,
            model_bits_per_sample: m.model_bits_per_sample,
        })
    });
    results
        .into_iter()
        .zip(clients)
        .map(|(r, c)| r.map_err(|e| e.for_client(c.id)))
        .collect()
}
