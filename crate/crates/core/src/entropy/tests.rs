use rand::Rng as _;

use super::*;
use crate::nncore::gradcheck::{grad_check_with_step, FnPair, FD_STEP};
use crate::rng::rng_from_seed;

/// Random model with parameters pushed away from their initial values so the
/// gates and matrices are not all equal.
fn random_model(channels: usize, seed: u64) -> FactorizedEntropyModel {
    let mut rng = rng_from_seed(seed);
    let scale = rng.random_range(0.5..3.0);
    let mut m = FactorizedEntropyModel::new(channels, &DEFAULT_FILTERS, scale, &mut rng).unwrap();
    for t in m.params_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.6..0.6);
        }
    }
    m
}

#[test]
fn cumulative_is_monotone_on_sorted_probes() {
    for seed in 0..5 {
        let m = random_model(3, seed);
        let mut rng = rng_from_seed(100 + seed);
        let mut probes: Vec<f64> = (0..10_000).map(|_| rng.random_range(-40.0..40.0)).collect();
        probes.sort_by(f64::total_cmp);
        let x = Tensor::vector(probes).unwrap();
        for c in 0..3 {
            let cdf = m.cumulative(c, &x);
            assert!(cdf.data().windows(2).all(|w| w[0] <= w[1]), "seed {seed} channel {c}");
        }
    }
}

#[test]
fn cumulative_saturates() {
    for seed in 0..10 {
        let m = random_model(2, seed);
        let x = Tensor::vector(vec![-1e4, 1e4]).unwrap();
        for c in 0..2 {
            let v = m.cumulative(c, &x);
            assert!(v.data()[0] < 1e-6);
            assert!(v.data()[1] > 1.0 - 1e-6);
        }
    }
}

#[test]
fn implied_density_integrates_to_one() {
    // trapezoid rule on a central-difference derivative of c
    let m = random_model(2, 7);
    let h = 1e-4;
    let step = 0.01;
    let grid: Vec<f64> = (0..=10_000).map(|i| -50.0 + i as f64 * step).collect();
    for c in 0..2 {
        let plus = m.cumulative(c, &Tensor::vector(grid.iter().map(|x| x + h).collect()).unwrap());
        let minus = m.cumulative(c, &Tensor::vector(grid.iter().map(|x| x - h).collect()).unwrap());
        let dens: Vec<f64> = plus
            .data()
            .iter()
            .zip(minus.data())
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let integral: f64 = dens.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        assert!((integral - 1.0).abs() < 1e-3, "channel {c}: {integral}");
    }
}

#[test]
fn integer_likelihoods_form_a_pmf() {
    for seed in 0..5 {
        let m = random_model(4, seed);
        let rows: Vec<Vec<f64>> = (-100..=100).map(|k| vec![k as f64; 4]).collect();
        let p = m.likelihood(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for c in 0..4 {
            let s: f64 = (0..rows.len()).map(|r| p.row(r)[c]).sum();
            assert!((s - 1.0).abs() < 1e-6, "seed {seed} channel {c}: {s}");
        }
    }
}

#[test]
fn likelihood_is_positive_and_matches_cdf_difference() {
    let m = random_model(2, 3);
    let mut rng = rng_from_seed(9);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| vec![rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)])
        .collect();
    let v = Tensor::from_rows(&rows).unwrap();
    let p = m.likelihood(&v).unwrap();
    assert!(p.data().iter().all(|&x| x > 0.0));
    for c in 0..2 {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let up = m.cumulative(c, &Tensor::vector(col.iter().map(|x| x + 0.5).collect()).unwrap());
        let lo = m.cumulative(c, &Tensor::vector(col.iter().map(|x| x - 0.5).collect()).unwrap());
        for r in 0..rows.len() {
            let diff = up.data()[r] - lo.data()[r];
            // the upper-tail branch evaluates 1 - c directly, so allow one rounding
            assert!((p.row(r)[c] - diff).abs() <= 1e-15, "{} vs {diff}", p.row(r)[c]);
        }
    }
}

#[test]
fn rate_of_half_likelihoods_is_one_bit_per_channel() {
    let p = Tensor::filled(&[7, 10], 0.5);
    assert!((rate_from_likelihoods(&p) - 10.0).abs() < 1e-12);
}

#[test]
fn rate_loss_matches_independent_recomputation() {
    let m = random_model(3, 11);
    let mut rng = rng_from_seed(4);
    let rows: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..3).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let v = Tensor::from_rows(&rows).unwrap();
    let p = m.likelihood(&v).unwrap();
    let manual: f64 = -p.data().iter().map(|x| x.max(1e-9).log2()).sum::<f64>() / 64.0;
    assert!((m.rate_loss(&v).unwrap() - manual).abs() < 1e-12);
}

fn batch(seed: u64, rows: usize, channels: usize, spread: f64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..channels).map(|_| rng.random_range(-spread..spread)).collect())
        .collect();
    Tensor::from_rows(&data).unwrap()
}

#[test]
fn rate_loss_gradient_wrt_params_matches_finite_differences() {
    for seed in 0..10 {
        let m = random_model(2, 200 + seed);
        let v = batch(300 + seed, 6, 2, 3.0);
        let f = FnPair {
            value: |flat: &[f64]| {
                let mut mm = m.clone();
                mm.load_flat(flat);
                mm.rate_loss(&v).unwrap()
            },
            gradient: |flat: &[f64]| {
                let mut mm = m.clone();
                mm.load_flat(flat);
                mm.rate_loss_grad(&v, true).unwrap().grad_params.unwrap().flatten()
            },
        };
        let r = grad_check_with_step(&f, &m.flatten(), 1e-4, FD_STEP);
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn rate_loss_gradient_wrt_inputs_matches_finite_differences() {
    for seed in 0..10 {
        let m = random_model(3, 400 + seed);
        let v = batch(500 + seed, 5, 3, 4.0);
        let shape = v.shape().to_vec();
        let f = FnPair {
            value: |flat: &[f64]| {
                let t = Tensor::new(shape.clone(), flat.to_vec()).unwrap();
                m.rate_loss(&t).unwrap()
            },
            gradient: |flat: &[f64]| {
                let t = Tensor::new(shape.clone(), flat.to_vec()).unwrap();
                m.rate_loss_grad(&t, false).unwrap().grad_input.into_data()
            },
        };
        let r = grad_check_with_step(&f, v.data(), 1e-4, FD_STEP);
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn table_invariants_hold() {
    for seed in 0..5 {
        let m = random_model(3, seed);
        let t = m.build_cdf_table(16, 1.0 / 256.0).unwrap();
        t.validate().unwrap();
        for ch in &t.channels {
            assert_eq!(ch.cdf[0], 0);
            assert_eq!(*ch.cdf.last().unwrap(), 1 << 16);
            assert!(ch.cdf.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn table_counts_track_model_probabilities() {
    for precision in [12, 16] {
        let m = random_model(2, 21);
        let t = m.build_cdf_table(precision, 1.0 / 256.0).unwrap();
        let total = (1u64 << precision) as f64;
        let bound = 2f64.powi(1 - precision as i32) + 1e-9;
        for (c, ch) in t.channels.iter().enumerate() {
            for y in ch.y_min..=ch.y_max {
                let slot = ch.slot_of(y);
                let table_p = ch.freq(slot) as f64 / total;
                let model_p = m.symbol_probability(c, y as f64);
                assert!((table_p - model_p).abs() <= bound, "{table_p} vs {model_p}");
            }
        }
    }
}

#[test]
fn table_off_support_mass_below_tail() {
    let m = random_model(2, 5);
    for tail in [1e-3, 1.0 / 256.0, 9e-3] {
        let t = m.build_cdf_table(16, tail).unwrap();
        for (c, ch) in t.channels.iter().enumerate() {
            let inside: f64 = (ch.y_min..=ch.y_max).map(|y| m.symbol_probability(c, y as f64)).sum();
            assert!(1.0 - inside < tail);
        }
    }
}

#[test]
fn table_argmax_matches_model_argmax() {
    for seed in 0..8 {
        let m = random_model(2, 40 + seed);
        let t = m.build_cdf_table(16, 1.0 / 256.0).unwrap();
        for (c, ch) in t.channels.iter().enumerate() {
            let best_model = (ch.y_min..=ch.y_max)
                .max_by(|&a, &b| {
                    m.symbol_probability(c, a as f64)
                        .total_cmp(&m.symbol_probability(c, b as f64))
                })
                .unwrap();
            let best_table = (ch.y_min..=ch.y_max).max_by_key(|&y| ch.freq(ch.slot_of(y))).unwrap();
            assert_eq!(best_model, best_table, "seed {seed} channel {c}");
        }
    }
}

#[test]
fn near_deterministic_model_concentrates_counts() {
    let mut rng = rng_from_seed(3);
    let m = FactorizedEntropyModel::new(1, &DEFAULT_FILTERS, 0.01, &mut rng).unwrap();
    let t = m.build_cdf_table(16, 1.0 / 256.0).unwrap();
    let ch = &t.channels[0];
    let n = ch.num_slots() as u32;
    let top = (0..ch.num_slots()).map(|s| ch.freq(s)).max().unwrap();
    assert!(top >= (1 << 16) - (n - 1));
}

#[test]
fn degenerate_support_is_a_table_error() {
    // a very flat density needs far more than 2^8 symbols
    let mut rng = rng_from_seed(1);
    let m = FactorizedEntropyModel::new(1, &DEFAULT_FILTERS, 500.0, &mut rng).unwrap();
    assert!(matches!(m.build_cdf_table(8, 1.0 / 256.0), Err(Error::Table(_))));
    assert!(matches!(m.build_cdf_table(16, 0.5), Err(Error::Table(_))));
}


#[test]
fn symbol_probabilities_match_single_symbol_queries() {
    let m = random_model(2, 13);
    for c in 0..2 {
        let p = m.symbol_probabilities(c, -7, 9);
        assert_eq!(p.len(), 17);
        for (k, y) in (-7..=9).enumerate() {
            assert_eq!(p[k], m.symbol_probability(c, y as f64));
        }
    }
}
