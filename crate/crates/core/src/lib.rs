//! Testbed for federated nonlinear transform coding.
//!
//! Clients hold heterogeneous data generated by a shared map applied to
//! client-specific latent sources. Three training regimes are provided:
//!
//! * **Local-NTC** – every client trains its own transforms and entropy model.
//! * **Fed-NTC** – analysis/synthesis transforms are averaged on a server,
//!   entropy models stay personal to each client.
//! * **FedAvg** – one global model, entropy model included, averaged per round.
//!
//! Rates are measured on real range-coded bitstreams and compared against
//! analytic Gaussian rate-distortion functions from [`oracle`].

pub mod codec;
pub mod entropy;
pub mod error;
pub mod federation;
pub mod nncore;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod sources;

pub use error::{Error, Result};
