use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Regime, TrainConfig};
use super::rounds::participant_count;
use crate::entropy::FactorizedEntropyModel;
use crate::error::{Error, Result};
use crate::nncore::{Checkpoint, OptimizerState, ParamSet, Role, Tensor, TransformParams};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::sources::{gen_synthetic, SourceSpec};

/// Analysis and synthesis transforms travelling together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPair {
    pub analysis: TransformParams,
    pub synthesis: TransformParams,
}

impl TransformPair {
    pub fn init(model: &ModelConfig, d_x: usize, master: u64) -> Result<Self> {
        let mut rng = rng_for(master, Stream::Init, &[0]);
        let mut widths = vec![d_x];
        widths.extend_from_slice(&model.hidden);
        widths.push(model.latent_dim);
        let analysis = TransformParams::init(Role::Analysis, &widths, &mut rng)?;
        widths.reverse();
        let synthesis = TransformParams::init(Role::Synthesis, &widths, &mut rng)?;
        TransformPair::new(analysis, synthesis)
    }

    pub fn new(analysis: TransformParams, synthesis: TransformParams) -> Result<Self> {
        if analysis.out_dim() != synthesis.in_dim() || analysis.in_dim() != synthesis.out_dim() {
            return Err(Error::Shape(format!(
                "g_a maps {} -> {}, g_s maps {} -> {}",
                analysis.in_dim(),
                analysis.out_dim(),
                synthesis.in_dim(),
                synthesis.out_dim()
            )));
        }
        Ok(TransformPair { analysis, synthesis })
    }

    pub fn latent_dim(&self) -> usize {
        self.analysis.out_dim()
    }

    pub fn source_dim(&self) -> usize {
        self.analysis.in_dim()
    }

    pub fn zeros_like(&self) -> Self {
        TransformPair {
            analysis: self.analysis.zeros_like(),
            synthesis: self.synthesis.zeros_like(),
        }
    }
}

impl ParamSet for TransformPair {
    fn param_names(&self) -> Vec<String> {
        let mut n = self.analysis.param_names();
        n.extend(self.synthesis.param_names());
        n
    }
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.analysis.params();
        p.extend(self.synthesis.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.analysis.params_mut();
        p.extend(self.synthesis.params_mut());
        p
    }
}

/// A complete compressor, the unit FedAvg averages.
#[derive(Debug, Clone, PartialEq)]
pub struct NtcModel {
    pub transforms: TransformPair,
    pub entropy: FactorizedEntropyModel,
}

impl ParamSet for NtcModel {
    fn param_names(&self) -> Vec<String> {
        let mut n = self.transforms.param_names();
        n.extend(self.entropy.param_names());
        n
    }
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.transforms.params();
        p.extend(self.entropy.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.transforms.params_mut();
        p.extend(self.entropy.params_mut());
        p
    }
}

/// A client's samples: `train` feeds optimizer steps, `eval` the per-round
/// rate and distortion measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Tensor,
    pub eval: Tensor,
}

impl ClientData {
    pub fn new(train: Tensor, eval: Tensor) -> Result<Self> {
        if train.shape().len() != 2 || eval.shape().len() != 2 || train.cols() != eval.cols() {
            return Err(Error::Shape(format!(
                "client data must be [N, d] matrices of equal width, got {:?} and {:?}",
                train.shape(),
                eval.shape()
            )));
        }
        Ok(ClientData { train, eval })
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }
}

/// Synthetic clients with `train` samples each plus `eval` held-out samples
/// drawn from an independent stream.
pub fn synthetic_clients(spec: &SourceSpec, train: usize, eval: usize, seed: u64) -> Result<Vec<ClientData>> {
    let tr = gen_synthetic(spec, train, seed)?;
    let ev = gen_synthetic(spec, eval, derive_seed(seed, Stream::Eval, &[]))?;
    tr.into_iter()
        .zip(ev)
        .map(|(a, b)| ClientData::new(a.samples, b.samples))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: ClientData,
    /// Personal entropy model; in FedAvg the client's last local copy of the
    /// global one.
    pub entropy: FactorizedEntropyModel,
    pub entropy_opt: OptimizerState,
    /// Owned transforms (Local-NTC) or the last local copy (FedAvg). Fed-NTC
    /// keeps its scratch copy only for the duration of a round.
    pub transforms: Option<TransformPair>,
    /// Optimizer for the owned transforms or for the local copies.
    pub transform_opt: Option<OptimizerState>,
    pub seed: u64,
}

impl ClientState {
    pub fn checkpoint_into(&self, ckpt: &mut Checkpoint) {
        let prefix = format!("client/{}/", self.id);
        ckpt.push_params(&prefix, &self.entropy);
        if let Some(t) = &self.transforms {
            ckpt.push_params(&prefix, t);
        }
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let prefix = format!("client/{}/", self.id);
        // stage both before writing either
        let mut entropy = self.entropy.clone();
        ckpt.restore_params(&prefix, &mut entropy)?;
        let transforms = match &self.transforms {
            Some(t) => {
                let mut t = t.clone();
                ckpt.restore_params(&prefix, &mut t)?;
                Some(t)
            }
            None => None,
        };
        self.entropy = entropy;
        if transforms.is_some() {
            self.transforms = transforms;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub regime: Regime,
    /// Global transforms; absent for Local-NTC.
    pub transforms: Option<TransformPair>,
    /// Global entropy model, FedAvg only.
    pub entropy: Option<FactorizedEntropyModel>,
    /// Rounds completed.
    pub round: usize,
    pub master_seed: u64,
    pub config: TrainConfig,
    pub clients: usize,
}

impl ServerState {
    pub fn global(&self) -> Result<&TransformPair> {
        self.transforms
            .as_ref()
            .ok_or_else(|| Error::Training(format!("{} regime has no global transforms", self.regime)))
    }

    /// Everything the server holds, as a checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        if let Some(t) = &self.transforms {
            c.push_params("global/", t);
        }
        if let Some(e) = &self.entropy {
            c.push_params("global/", e);
        }
        c
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut t = self.transforms.clone();
        if let Some(t) = &mut t {
            ckpt.restore_params("global/", t)?;
        }
        let mut e = self.entropy.clone();
        if let Some(e) = &mut e {
            ckpt.restore_params("global/", e)?;
        }
        self.transforms = t;
        self.entropy = e;
        Ok(())
    }
}

/// Server and client states for `regime` before the first round. All
/// parameters derive from `master`: one shared transform initialisation,
/// one entropy model per client (plus a global one for FedAvg).
pub fn init_states(
    regime: Regime,
    model: &ModelConfig,
    train: &TrainConfig,
    data: Vec<ClientData>,
    master: u64,
) -> Result<(ServerState, Vec<ClientState>)> {
    model.validate()?;
    train.validate()?;
    if data.is_empty() {
        return Err(Error::Config("at least one client is required".into()));
    }
    let d_x = data[0].dim();
    if let Some(i) = data.iter().position(|d| d.dim() != d_x) {
        return Err(Error::Shape(format!("client {i} has dimension {}, expected {d_x}", data[i].dim())));
    }
    if let Some(i) = data.iter().position(|d| d.train.rows() == 0 || d.eval.rows() == 0) {
        return Err(Error::Config(format!("client {i} has an empty shard")));
    }
    let n = data.len();
    if regime != Regime::Local && participant_count(train.participation, n) == 0 {
        return Err(Error::Config(format!(
            "participation {} selects no client out of {n}",
            train.participation
        )));
    }
    let pair = TransformPair::init(model, d_x, master)?;
    let new_entropy = |coords: &[u64]| {
        FactorizedEntropyModel::new(
            model.latent_dim,
            &model.filters,
            model.init_scale,
            &mut rng_for(master, Stream::Init, coords),
        )
    };
    let server = ServerState {
        regime,
        transforms: (regime != Regime::Local).then(|| pair.clone()),
        entropy: if regime == Regime::Fedavg {
            Some(new_entropy(&[2])?)
        } else {
            None
        },
        round: 0,
        master_seed: master,
        config: train.clone(),
        clients: n,
    };
    let clients = data
        .into_iter()
        .enumerate()
        .map(|(id, data)| {
            let entropy = new_entropy(&[1, id as u64])?;
            let entropy_opt = OptimizerState::new(train.optimizer, train.lr, &entropy)?;
            let transforms = (regime == Regime::Local).then(|| pair.clone());
            let transform_opt = Some(OptimizerState::new(train.optimizer, train.lr, &pair)?);
            Ok(ClientState {
                id,
                data,
                entropy,
                entropy_opt,
                transforms,
                transform_opt,
                seed: derive_seed(master, Stream::ClientSeed, &[id as u64]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((server, clients))
}
