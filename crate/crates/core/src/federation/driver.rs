use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Regime, TrainConfig};
use super::eval::{evaluate, final_summary, FinalSummary, RoundRecord};
use super::rounds::{fed_ntc_round, fedavg_round, local_ntc_round};
use super::state::{init_states, ClientData, ClientState, ServerState};
use crate::error::{Error, Result};
use crate::nncore::Checkpoint;
use crate::parallel::Parallelism;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<RoundRecord>,
    pub summary: FinalSummary,
}

/// A server with its clients, driven round by round.
#[derive(Debug, Clone)]
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub parallelism: Parallelism,
}

impl Federation {
    pub fn new(
        regime: Regime,
        model: &ModelConfig,
        train: &TrainConfig,
        data: Vec<ClientData>,
        master_seed: u64,
        parallelism: Parallelism,
    ) -> Result<Self> {
        let (server, clients) = init_states(regime, model, train, data, master_seed)?;
        Ok(Federation {
            server,
            clients,
            parallelism,
        })
    }

    pub fn regime(&self) -> Regime {
        self.server.regime
    }

    /// Trains one round, then evaluates every client.
    pub fn round(&mut self) -> Result<RoundRecord> {
        let par = self.parallelism;
        let t = match self.server.regime {
            Regime::Local => local_ntc_round(&mut self.server, &mut self.clients, par)?,
            Regime::Fed => fed_ntc_round(&mut self.server, &mut self.clients, par)?,
            Regime::Fedavg => fedavg_round(&mut self.server, &mut self.clients, par)?,
        };
        let per_client = evaluate(&self.server, &self.clients, par)?;
        let cfg = &self.server.config;
        Ok(RoundRecord::new(
            self.server.round,
            self.server.regime,
            cfg.lambda,
            per_client,
            t.participants,
            t.train_loss,
            cfg.psnr_peak,
        ))
    }

    /// Runs the remaining rounds, handing each record to `on_round`.
    pub fn run(&mut self, mut on_round: impl FnMut(&RoundRecord) -> Result<()>) -> Result<Trace> {
        let mut records = Vec::with_capacity(self.server.config.rounds);
        while self.server.round < self.server.config.rounds {
            let rec = self.round()?;
            on_round(&rec)?;
            records.push(rec);
        }
        let summary = final_summary(&records, self.server.config.final_window)?;
        Ok(Trace { records, summary })
    }

    pub fn server_checkpoint(&self) -> Checkpoint {
        self.server.checkpoint()
    }

    pub fn client_checkpoint(&self, id: usize) -> Result<Checkpoint> {
        let c = self
            .clients
            .get(id)
            .ok_or_else(|| Error::Config(format!("no client {id}")))?;
        let mut ckpt = Checkpoint::new();
        c.checkpoint_into(&mut ckpt);
        Ok(ckpt)
    }
}

fn run_regime(
    regime: Regime,
    model: &ModelConfig,
    train: &TrainConfig,
    data: Vec<ClientData>,
    seed: u64,
    par: Parallelism,
) -> Result<(Federation, Trace)> {
    let mut fed = Federation::new(regime, model, train, data, seed, par)?;
    let trace = fed.run(|_| Ok(()))?;
    Ok((fed, trace))
}

pub fn train_local_ntc(
    model: &ModelConfig,
    train: &TrainConfig,
    data: Vec<ClientData>,
    seed: u64,
    par: Parallelism,
) -> Result<(Federation, Trace)> {
    run_regime(Regime::Local, model, train, data, seed, par)
}

pub fn train_fed_ntc(
    model: &ModelConfig,
    train: &TrainConfig,
    data: Vec<ClientData>,
    seed: u64,
    par: Parallelism,
) -> Result<(Federation, Trace)> {
    run_regime(Regime::Fed, model, train, data, seed, par)
}

pub fn train_fedavg(
    model: &ModelConfig,
    train: &TrainConfig,
    data: Vec<ClientData>,
    seed: u64,
    par: Parallelism,
) -> Result<(Federation, Trace)> {
    run_regime(Regime::Fedavg, model, train, data, seed, par)
}
