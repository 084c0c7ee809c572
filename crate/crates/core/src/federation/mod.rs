//! The three training regimes as round-based state machines.
//!
//! * Local-NTC: each client trains its own transforms and entropy model.
//! * Fed-NTC: the server averages transforms; entropy models never leave
//!   their client.
//! * FedAvg: one global model, entropy model included.

mod config;
mod driver;
mod eval;
mod objective;
mod rounds;
mod state;

pub use config::{ModelConfig, Regime, TrainConfig};
pub use driver::{train_fed_ntc, train_fedavg, train_local_ntc, Federation, Trace};
pub use eval::{evaluate, final_summary, ClientEval, FinalSummary, RdPoint, RoundRecord};
pub use objective::{client_objective, objective_grads, objective_with_noise, Objective, ObjectiveGrads, Want};
pub use rounds::{
    fed_ntc_round, fedavg_round, local_ntc_round, participant_count, sample_participants, RoundTraining,
};
pub use state::{init_states, synthetic_clients, ClientData, ClientState, NtcModel, ServerState, TransformPair};
