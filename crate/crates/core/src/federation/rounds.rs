//! One communication round of each regime.

use rand::Rng as _;

use super::config::{Regime, TrainConfig};
use super::objective::{objective_grads, Want};
use super::state::{ClientState, NtcModel, ServerState, TransformPair};
use crate::entropy::FactorizedEntropyModel;
use crate::error::{Error, Result};
use crate::nncore::{average, OptimizerState, Tensor};
use crate::parallel::{map_mut, Parallelism};
use crate::rng::{rng_for, Rng, Stream};

/// `round(r·n)`, halves away from zero.
pub fn participant_count(r: f64, n: usize) -> usize {
    ((r * n as f64).round() as usize).min(n)
}

/// Participants of `round`, sorted by id, drawn without replacement from a
/// stream that depends only on the master seed and the round.
pub fn sample_participants(master: u64, round: usize, n: usize, r: f64) -> Vec<usize> {
    let k = participant_count(r, n);
    let mut rng = rng_for(master, Stream::Participation, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    ids
}

fn client_rng(client: &ClientState, round: usize) -> Rng {
    rng_for(client.seed, Stream::ClientRound, &[round as u64])
}

/// Mini-batch drawn with replacement, followed by its noise draw.
fn draw(train: &Tensor, batch: usize, latent: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..train.rows())).collect();
    let x = train.select_rows(&idx);
    let noise = Tensor::new(
        vec![batch, latent],
        (0..batch * latent).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )
    .expect("consistent shape");
    (x, noise)
}

/// Optimizer for a local copy: the client's own when state is carried over,
/// a fresh one otherwise.
fn local_opt<P: crate::nncore::ParamSet>(cfg: &TrainConfig, kept: Option<&OptimizerState>, p: &P) -> Result<OptimizerState> {
    match kept {
        Some(o) if cfg.keep_optimizer_state => Ok(o.clone()),
        _ => OptimizerState::new(cfg.optimizer, cfg.lr, p),
    }
}

/// Joint steps on transforms and entropy model with the given optimizers.
#[allow(clippy::too_many_arguments)]
fn joint_steps(
    cfg: &TrainConfig,
    steps: usize,
    data: &Tensor,
    pair: &mut TransformPair,
    entropy: &mut FactorizedEntropyModel,
    opt_t: &mut OptimizerState,
    opt_e: &mut OptimizerState,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..steps {
        let (x, noise) = draw(data, cfg.batch, pair.latent_dim(), rng);
        let g = objective_grads(&x, pair, entropy, cfg.lambda, &noise, Want::ALL)?;
        opt_t.step(pair, g.transforms.as_ref().expect("requested"))?;
        opt_e.step(entropy, g.entropy.as_ref().expect("requested"))?;
        total += g.value.loss;
    }
    Ok(total / steps as f64)
}

fn collect_errors<T>(results: Vec<Result<T>>, clients: &[ClientState]) -> Result<Vec<T>> {
    results
        .into_iter()
        .zip(clients)
        .map(|(r, c)| r.map_err(|e| e.for_client(c.id)))
        .collect()
}

/// Summary of one round's training half.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTraining {
    pub participants: Vec<usize>,
    /// Mean training loss over participants' steps.
    pub train_loss: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Every client takes `local_steps` joint steps on its own model.
pub fn local_ntc_round(server: &mut ServerState, clients: &mut [ClientState], par: Parallelism) -> Result<RoundTraining> {
    expect_regime(server, Regime::Local)?;
    let cfg = server.config.clone();
    let round = server.round;
    let results = map_mut(par, clients, |_, c| -> Result<f64> {
        let mut rng = client_rng(c, round);
        let pair = c.transforms.as_mut().ok_or_else(|| Error::Training("client has no transforms".into()))?;
        let opt_t = c.transform_opt.as_mut().ok_or_else(|| Error::Training("client has no optimizer".into()))?;
        joint_steps(&cfg, cfg.local_steps, &c.data.train, pair, &mut c.entropy, opt_t, &mut c.entropy_opt, &mut rng)
    });
    let losses = collect_errors(results, clients)?;
    server.round += 1;
    Ok(RoundTraining {
        participants: (0..clients.len()).collect(),
        train_loss: mean(&losses),
    })
}

/// Sampled clients first fit their entropy model to the received globals,
/// then train a scratch copy of the transforms; the server replaces the
/// globals by the average of the returned copies.
pub fn fed_ntc_round(server: &mut ServerState, clients: &mut [ClientState], par: Parallelism) -> Result<RoundTraining> {
    expect_regime(server, Regime::Fed)?;
    let cfg = server.config.clone();
    let round = server.round;
    let participants = sample_participants(server.master_seed, round, clients.len(), cfg.participation);
    let mut selected = vec![false; clients.len()];
    for &i in &participants {
        selected[i] = true;
    }
    let global = server.global()?.clone();
    let results = map_mut(par, clients, |i, c| -> Result<Option<(TransformPair, f64)>> {
        if !selected[i] {
            return Ok(None);
        }
        let mut rng = client_rng(c, round);
        let mut loss = 0.0;
        for _ in 0..cfg.entropy_steps {
            let (x, noise) = draw(&c.data.train, cfg.batch, global.latent_dim(), &mut rng);
            let g = objective_grads(&x, &global, &c.entropy, cfg.lambda, &noise, Want::ENTROPY)?;
            c.entropy_opt.step(&mut c.entropy, g.entropy.as_ref().expect("requested"))?;
            loss += g.value.loss;
        }
        let mut scratch = global.clone();
        let mut opt = local_opt(&cfg, c.transform_opt.as_ref(), &scratch)?;
        for _ in 0..cfg.transform_steps {
            let (x, noise) = draw(&c.data.train, cfg.batch, global.latent_dim(), &mut rng);
            let g = objective_grads(&x, &scratch, &c.entropy, cfg.lambda, &noise, Want::TRANSFORMS)?;
            opt.step(&mut scratch, g.transforms.as_ref().expect("requested"))?;
            loss += g.value.loss;
        }
        if cfg.keep_optimizer_state {
            c.transform_opt = Some(opt);
        }
        Ok(Some((scratch, loss / (cfg.entropy_steps + cfg.transform_steps) as f64)))
    });
    let returned: Vec<(TransformPair, f64)> = collect_errors(results, clients)?.into_iter().flatten().collect();
    let sets: Vec<&TransformPair> = returned.iter().map(|(p, _)| p).collect();
    server.transforms = Some(average(&sets)?);
    server.round += 1;
    Ok(RoundTraining {
        participants,
        train_loss: mean(&returned.iter().map(|(_, l)| *l).collect::<Vec<_>>()),
    })
}

/// Sampled clients copy the whole global model, take `fedavg_steps` joint
/// steps and the server averages everything.
pub fn fedavg_round(server: &mut ServerState, clients: &mut [ClientState], par: Parallelism) -> Result<RoundTraining> {
    expect_regime(server, Regime::Fedavg)?;
    let cfg = server.config.clone();
    let round = server.round;
    let participants = sample_participants(server.master_seed, round, clients.len(), cfg.participation);
    let mut selected = vec![false; clients.len()];
    for &i in &participants {
        selected[i] = true;
    }
    let global = NtcModel {
        transforms: server.global()?.clone(),
        entropy: server
            .entropy
            .clone()
            .ok_or_else(|| Error::Training("fedavg server has no entropy model".into()))?,
    };
    let results = map_mut(par, clients, |i, c| -> Result<Option<(NtcModel, f64)>> {
        if !selected[i] {
            return Ok(None);
        }
        let mut rng = client_rng(c, round);
        let mut local = global.clone();
        let mut opt_t = local_opt(&cfg, c.transform_opt.as_ref(), &local.transforms)?;
        let mut opt_e = local_opt(&cfg, Some(&c.entropy_opt), &local.entropy)?;
        let loss = joint_steps(
            &cfg,
            cfg.fedavg_steps,
            &c.data.train,
            &mut local.transforms,
            &mut local.entropy,
            &mut opt_t,
            &mut opt_e,
            &mut rng,
        )?;
        c.transforms = Some(local.transforms.clone());
        c.entropy = local.entropy.clone();
        if cfg.keep_optimizer_state {
            c.transform_opt = Some(opt_t);
            c.entropy_opt = opt_e;
        }
        Ok(Some((local, loss)))
    });
    let returned: Vec<(NtcModel, f64)> = collect_errors(results, clients)?.into_iter().flatten().collect();
    let sets: Vec<&NtcModel> = returned.iter().map(|(m, _)| m).collect();
    let avg = average(&sets)?;
    server.transforms = Some(avg.transforms);
    server.entropy = Some(avg.entropy);
    server.round += 1;
    Ok(RoundTraining {
        participants,
        train_loss: mean(&returned.iter().map(|(_, l)| *l).collect::<Vec<_>>()),
    })
}

fn expect_regime(server: &ServerState, regime: Regime) -> Result<()> {
    if server.regime != regime {
        return Err(Error::Config(format!(
            "server is set up for {}, not {regime}",
            server.regime
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn participant_count_rounds_half_away_from_zero() {
        assert_eq!(participant_count(0.1, 100), 10);
        assert_eq!(participant_count(0.25, 10), 3);
        assert_eq!(participant_count(0.05, 10), 1);
        assert_eq!(participant_count(0.04, 10), 0);
        assert_eq!(participant_count(1.0, 7), 7);
    }

    #[test]
    fn participants_are_sorted_distinct_and_reproducible() {
        for round in 0..20 {
            let p = sample_participants(3, round, 50, 0.2);
            assert_eq!(p.len(), 10);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
            assert!(p.iter().all(|&i| i < 50));
            assert_eq!(p, sample_participants(3, round, 50, 0.2));
        }
        assert_ne!(sample_participants(3, 0, 50, 0.2), sample_participants(3, 1, 50, 0.2));
        assert_eq!(sample_participants(9, 4, 6, 1.0), (0..6).collect::<Vec<_>>());
    }
}
