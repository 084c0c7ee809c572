use fedntc::entropy::{FactorizedEntropyModel, DEFAULT_FILTERS};
use fedntc::federation::{
    objective_grads, objective_with_noise, synthetic_clients, ClientData, Federation, ModelConfig, Regime,
    TrainConfig, TransformPair, Want,
};
use fedntc::nncore::{Checkpoint, Role, Tensor, TransformParams};
use fedntc::parallel::Parallelism;
use fedntc::rng::rng_from_seed;
use fedntc::sources::{default_benchmark, SourceSpec};
use rand::Rng as _;

const REGIMES: [Regime; 3] = [Regime::Local, Regime::Fed, Regime::Fedavg];

fn spec(n: usize, sep: f64) -> SourceSpec {
    default_benchmark(n, 4.0, 1.0, sep, 11).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![16],
        ..ModelConfig::default()
    }
}

fn small_training(rounds: usize, participation: f64) -> TrainConfig {
    TrainConfig {
        rounds,
        entropy_steps: 3,
        transform_steps: 3,
        local_steps: 4,
        fedavg_steps: 4,
        participation,
        lr: 1e-2,
        final_window: 3,
        ..TrainConfig::default()
    }
}

fn federation(regime: Regime, n: usize, cfg: &TrainConfig, seed: u64, par: Parallelism) -> Federation {
    let data = synthetic_clients(&spec(n, 1.0), 30, 40, seed).unwrap();
    Federation::new(regime, &small_model(), cfg, data, seed, par).unwrap()
}

fn random_tensor(seed: u64, rows: usize, cols: usize, spread: f64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
}

fn entropy_model(channels: usize, seed: u64) -> FactorizedEntropyModel {
    FactorizedEntropyModel::new(channels, &DEFAULT_FILTERS, 2.0, &mut rng_from_seed(seed)).unwrap()
}

#[test]
fn identity_transforms_without_noise_have_zero_distortion() {
    let x = random_tensor(1, 20, 4, 3.0);
    let ga = TransformParams::identity(Role::Analysis, 4);
    let gs = TransformParams::identity(Role::Synthesis, 4);
    let zero = Tensor::zeros(&[20, 4]);
    let m = entropy_model(4, 2);
    let o = objective_with_noise(&x, &ga, &gs, &m, 5.0, &zero).unwrap();
    assert_eq!(o.distortion, 0.0);
    assert_eq!(o.loss, o.rate);
}

#[test]
fn objective_is_rate_plus_weighted_distortion() {
    let mut rng = rng_from_seed(3);
    let ga = TransformParams::init(Role::Analysis, &[6, 8, 3], &mut rng).unwrap();
    let gs = TransformParams::init(Role::Synthesis, &[3, 8, 6], &mut rng).unwrap();
    let m = entropy_model(3, 4);
    let x = random_tensor(5, 12, 6, 2.0);
    let noise = random_tensor(6, 12, 3, 0.5);
    let mut y = ga.forward(&x).unwrap();
    y.add_assign(&noise);
    let rate = m.rate_loss(&y).unwrap();
    let distortion = x.mse(&gs.forward(&y).unwrap()).unwrap();
    for lambda in [1e-9, 0.3, 4.0] {
        let o = objective_with_noise(&x, &ga, &gs, &m, lambda, &noise).unwrap();
        assert!((o.rate - rate).abs() < 1e-12);
        assert!((o.distortion - distortion).abs() < 1e-12);
        assert!((o.loss - (rate + lambda * distortion)).abs() < 1e-9);
    }
    // vanishing lambda leaves the rate alone
    let o = objective_with_noise(&x, &ga, &gs, &m, 1e-12, &noise).unwrap();
    assert!((o.loss - o.rate).abs() < 1e-9);
}

#[test]
fn partial_gradient_requests_agree_with_the_full_one() {
    let mut rng = rng_from_seed(8);
    let pair = TransformPair::new(
        TransformParams::init(Role::Analysis, &[5, 7, 2], &mut rng).unwrap(),
        TransformParams::init(Role::Synthesis, &[2, 7, 5], &mut rng).unwrap(),
    )
    .unwrap();
    let m = entropy_model(2, 9);
    let x = random_tensor(10, 9, 5, 2.0);
    let noise = random_tensor(11, 9, 2, 0.5);
    let all = objective_grads(&x, &pair, &m, 2.0, &noise, Want::ALL).unwrap();
    let t = objective_grads(&x, &pair, &m, 2.0, &noise, Want::TRANSFORMS).unwrap();
    let e = objective_grads(&x, &pair, &m, 2.0, &noise, Want::ENTROPY).unwrap();
    assert_eq!(all.transforms, t.transforms);
    assert_eq!(all.entropy, e.entropy);
    assert!(t.entropy.is_none() && e.transforms.is_none());
    assert!((all.value.loss - e.value.loss).abs() < 1e-12);
}

#[test]
fn local_training_loss_decreases() {
    for seed in 0..5 {
        let cfg = TrainConfig {
            rounds: 100,
            local_steps: 1,
            lr: 1e-3,
            lambda: 1.0,
            ..TrainConfig::default()
        };
        let data = synthetic_clients(&spec(1, 1.0), 200, 20, seed).unwrap();
        let mut fed = Federation::new(Regime::Local, &small_model(), &cfg, data, seed, Parallelism::Sequential).unwrap();
        let trace = fed.run(|_| Ok(())).unwrap();
        let mean = |r: &[fedntc::federation::RoundRecord]| r.iter().map(|x| x.train_loss).sum::<f64>() / r.len() as f64;
        let (head, tail) = (mean(&trace.records[..10]), mean(&trace.records[90..]));
        assert!(tail < head, "seed {seed}: {head} -> {tail}");
    }
}

#[test]
fn participation_selects_round_r_n_clients() {
    let cfg = small_training(3, 0.1);
    let data = synthetic_clients(&spec(100, 1.0), 4, 4, 2).unwrap();
    let mut fed = Federation::new(Regime::Fed, &small_model(), &cfg, data, 2, Parallelism::Parallel).unwrap();
    for _ in 0..3 {
        let rec = fed.round().unwrap();
        assert_eq!(rec.participants.len(), 10);
        assert_eq!(rec.per_client.len(), 100);
    }
}

#[test]
fn local_regime_trains_everyone() {
    let mut fed = federation(Regime::Local, 5, &small_training(2, 0.2), 1, Parallelism::Parallel);
    assert_eq!(fed.round().unwrap().participants, vec![0, 1, 2, 3, 4]);
}

#[test]
fn single_client_fed_round_uses_that_client() {
    let mut fed = federation(Regime::Fed, 1, &small_training(2, 1.0), 4, Parallelism::Sequential);
    let before = fed.server.transforms.clone().unwrap();
    let entropy_before = fed.clients[0].entropy.clone();
    let rec = fed.round().unwrap();
    assert_eq!(rec.participants, vec![0]);
    assert_ne!(fed.server.transforms.clone().unwrap(), before);
    assert_ne!(fed.clients[0].entropy, entropy_before);
}

#[test]
fn non_participants_keep_their_state() {
    for regime in [Regime::Fed, Regime::Fedavg] {
        let mut fed = federation(regime, 8, &small_training(4, 0.25), 3, Parallelism::Parallel);
        for _ in 0..4 {
            let before: Vec<Vec<u8>> = (0..8).map(|i| fed.client_checkpoint(i).unwrap().to_bytes()).collect();
            let rec = fed.round().unwrap();
            assert_eq!(rec.participants.len(), 2);
            for i in (0..8).filter(|i| !rec.participants.contains(i)) {
                assert_eq!(fed.client_checkpoint(i).unwrap().to_bytes(), before[i], "{regime} client {i}");
            }
        }
    }
}

#[test]
fn fed_server_never_holds_entropy_parameters() {
    let mut fed = federation(Regime::Fed, 4, &small_training(3, 0.5), 5, Parallelism::Parallel);
    for _ in 0..3 {
        fed.round().unwrap();
        assert!(fed.server.entropy.is_none());
        assert!(fed.server_checkpoint().names().all(|n| !n.contains("entropy")));
    }
    let avg = federation(Regime::Fedavg, 4, &small_training(1, 0.5), 5, Parallelism::Parallel);
    assert!(avg.server_checkpoint().names().any(|n| n.contains("entropy")));
    let local = federation(Regime::Local, 4, &small_training(1, 0.5), 5, Parallelism::Parallel);
    assert_eq!(local.server_checkpoint().names().count(), 0);
}

#[test]
fn sequential_and_parallel_runs_are_bit_identical() {
    for regime in REGIMES {
        let cfg = small_training(4, 0.5);
        let mut seq = federation(regime, 4, &cfg, 7, Parallelism::Sequential);
        let mut par = federation(regime, 4, &cfg, 7, Parallelism::Parallel);
        assert_eq!(seq.run(|_| Ok(())).unwrap(), par.run(|_| Ok(())).unwrap());
        assert_eq!(seq.server_checkpoint().to_bytes(), par.server_checkpoint().to_bytes());
        for i in 0..4 {
            assert_eq!(seq.client_checkpoint(i).unwrap().to_bytes(), par.client_checkpoint(i).unwrap().to_bytes());
        }
    }
}

#[test]
fn runs_depend_on_the_seed() {
    let cfg = small_training(2, 1.0);
    let a = federation(Regime::Fed, 2, &cfg, 1, Parallelism::Sequential).run(|_| Ok(())).unwrap();
    let b = federation(Regime::Fed, 2, &cfg, 2, Parallelism::Sequential).run(|_| Ok(())).unwrap();
    assert_ne!(a.summary, b.summary);
}

#[test]
fn evaluation_matches_record_averages() {
    let mut fed = federation(Regime::Fed, 3, &small_training(1, 1.0), 8, Parallelism::Parallel);
    let rec = fed.round().unwrap();
    let r = rec.per_client.iter().map(|c| c.bits_per_sample).sum::<f64>() / 3.0;
    assert!((rec.r_n - r).abs() < 1e-12);
    assert!((rec.loss - (rec.r_n + rec.lambda * rec.d_n)).abs() < 1e-12);
    for c in &rec.per_client {
        // barely trained, so a few outliers take the escape path
        assert!(
            c.bits_per_sample > 0.98 * c.model_bits_per_sample
                && c.bits_per_sample < 1.1 * c.model_bits_per_sample + 2.0,
            "{c:?}"
        );
    }
}

#[test]
fn checkpoints_restore_exactly() {
    for regime in REGIMES {
        let cfg = small_training(2, 1.0);
        let mut trained = federation(regime, 2, &cfg, 9, Parallelism::Sequential);
        trained.run(|_| Ok(())).unwrap();
        let mut fresh = federation(regime, 2, &cfg, 9, Parallelism::Sequential);
        let server = Checkpoint::from_bytes(&trained.server_checkpoint().to_bytes()).unwrap();
        fresh.server.restore_from(&server).unwrap();
        for i in 0..2 {
            let c = Checkpoint::from_bytes(&trained.client_checkpoint(i).unwrap().to_bytes()).unwrap();
            fresh.clients[i].restore_from(&c).unwrap();
        }
        assert_eq!(fresh.server_checkpoint().to_bytes(), trained.server_checkpoint().to_bytes());
        let eval = |f: &Federation| fedntc::federation::evaluate(&f.server, &f.clients, Parallelism::Sequential).unwrap();
        assert_eq!(eval(&fresh), eval(&trained), "{regime}");
    }
}

#[test]
fn optimizer_state_can_be_reset_each_participation() {
    for regime in [Regime::Fed, Regime::Fedavg] {
        let keep = small_training(3, 1.0);
        let reset = TrainConfig {
            keep_optimizer_state: false,
            ..keep.clone()
        };
        let a = federation(regime, 2, &keep, 12, Parallelism::Sequential).run(|_| Ok(())).unwrap();
        let b = federation(regime, 2, &reset, 12, Parallelism::Sequential).run(|_| Ok(())).unwrap();
        assert_eq!(a.records[0], b.records[0], "{regime}: first round has no history to carry");
        assert_ne!(a.records[2], b.records[2]);
        assert!(b.summary.loss.is_finite());
    }
}

#[test]
fn invalid_setups_are_config_errors() {
    let data = || synthetic_clients(&spec(4, 1.0), 5, 5, 1).unwrap();
    let bad = TrainConfig {
        participation: 0.1,
        ..small_training(1, 0.1)
    };
    // round(0.1 * 4) = 0 participants
    assert!(Federation::new(Regime::Fed, &small_model(), &bad, data(), 1, Parallelism::Sequential).is_err());
    assert!(Federation::new(Regime::Local, &small_model(), &bad, data(), 1, Parallelism::Sequential).is_ok());
    let zero_rounds = TrainConfig {
        rounds: 0,
        ..small_training(1, 1.0)
    };
    assert!(Federation::new(Regime::Fed, &small_model(), &zero_rounds, data(), 1, Parallelism::Sequential).is_err());
    assert!(Federation::new(Regime::Fed, &small_model(), &small_training(1, 1.0), vec![], 1, Parallelism::Sequential).is_err());
}

fn pooled(clients: &[ClientData]) -> ClientData {
    let d = clients[0].dim();
    let cat = |f: fn(&ClientData) -> &Tensor| {
        let data: Vec<f64> = clients.iter().flat_map(|c| f(c).data().to_vec()).collect();
        Tensor::new(vec![data.len() / d, d], data).unwrap()
    };
    ClientData::new(cat(|c| &c.train), cat(|c| &c.eval)).unwrap()
}

#[test]
fn fedavg_on_homogeneous_clients_tracks_centralized_training() {
    let homogeneous = default_benchmark(4, 4.0, 1.0, 0.0, 3).unwrap();
    let cfg = TrainConfig {
        rounds: 60,
        fedavg_steps: 10,
        local_steps: 10,
        participation: 1.0,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let model = small_model();
    let data = synthetic_clients(&homogeneous, 200, 256, 4).unwrap();
    let central = vec![pooled(&data)];
    let fedavg = Federation::new(Regime::Fedavg, &model, &cfg, data, 4, Parallelism::Parallel)
        .unwrap()
        .run(|_| Ok(()))
        .unwrap()
        .summary
        .loss;
    let centralized = Federation::new(Regime::Local, &model, &cfg, central, 4, Parallelism::Parallel)
        .unwrap()
        .run(|_| Ok(()))
        .unwrap()
        .summary
        .loss;
    let gap = (fedavg - centralized) / centralized;
    assert!(gap < 0.05, "fedavg {fedavg} vs centralized {centralized}");
}
