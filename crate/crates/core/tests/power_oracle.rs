//! Independent oracles for the closed-form power allocation: exhaustive
//! simplex grid search for optimality, and the load/minimum-power identity
//! for feasibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starnoma_core::power::{
    check_feasibility, cluster_rates, min_power_coefficients, optimal_power, sinr_floor,
};

/// Brute-force maximizer of the cluster sum rate over the probability
/// simplex (step `1e-3`), subject to every slot meeting its QoS floor.
fn grid_search_best(gains: &[f64], floors: &[f64], step: f64) -> Option<f64> {
    let k = gains.len();
    let n = (1.0 / step).round() as usize;
    let mut best: Option<f64> = None;
    let mut eval = |rho: &[f64]| {
        let rates = cluster_rates(gains, rho);
        for (r, f) in rates.iter().zip(floors) {
            if *r < (1.0 + f).log2() - 1e-12 {
                return;
            }
        }
        let total: f64 = rates.iter().sum();
        if best.map_or(true, |b| total > b) {
            best = Some(total);
        }
    };
    match k {
        2 => {
            for i in 0..=n {
                let r0 = i as f64 * step;
                eval(&[r0, 1.0 - r0]);
            }
        }
        3 => {
            for i in 0..=n {
                let r0 = i as f64 * step;
                for j in 0..=(n - i) {
                    let r1 = j as f64 * step;
                    eval(&[r0, r1, 1.0 - r0 - r1]);
                }
            }
        }
        _ => panic!("grid oracle supports 2 or 3 users"),
    }
    best
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

#[test]
fn closed_form_matches_grid_oracle() {
    // 100 random feasible instances, gains log-uniform in [1, 1e3],
    // QoS floor 0.1 bits/s/Hz, grid step 1e-3, tolerance 1e-3 bits/s/Hz
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let floor_bits = 0.1;
    let r = sinr_floor(floor_bits);
    let mut done = 0;
    while done < 100 {
        let k = if done % 2 == 0 { 2 } else { 3 };
        let mut gains: Vec<f64> = (0..k).map(|_| log_uniform(&mut rng, 1.0, 1e3)).collect();
        gains.sort_by(|a, b| a.partial_cmp(b).unwrap()); // slot order = ascending gain
        let floors = vec![r; k];
        let alloc = match optimal_power(&gains, &floors) {
            Ok(a) => a,
            Err(_) => continue, // resample infeasible draws
        };
        let closed_form: f64 = cluster_rates(&gains, &alloc.rho).iter().sum();
        let grid = grid_search_best(&gains, &floors, 1e-3)
            .expect("feasible instance must have a feasible grid point");
        assert!(
            closed_form >= grid - 1e-3,
            "instance {done}: closed form {closed_form} below grid {grid} (gains {gains:?})"
        );
        done += 1;
    }
}

#[test]
fn closed_form_dominates_every_grid_point_small_instances() {
    // stronger check on a handful of instances: the closed form beats every
    // feasible grid point, not only the best one
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..5 {
        let gains = {
            let mut g: Vec<f64> = (0..2).map(|_| log_uniform(&mut rng, 1.0, 100.0)).collect();
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g
        };
        let floors = vec![sinr_floor(0.1); 2];
        let alloc = optimal_power(&gains, &floors).unwrap();
        let best: f64 = cluster_rates(&gains, &alloc.rho).iter().sum();
        let n = 1000;
        for i in 0..=n {
            let rho0 = i as f64 / n as f64;
            let rho = [rho0, 1.0 - rho0];
            let rates = cluster_rates(&gains, &rho);
            if rates.iter().zip(&floors).all(|(r, f)| *r >= (1.0 + f).log2()) {
                let total: f64 = rates.iter().sum();
                assert!(best >= total - 1e-9, "rho {rho:?} beats closed form");
            }
        }
    }
}

#[test]
fn feasibility_test_agrees_with_min_power_construction() {
    // 10^4 random instances: the load test agrees with sum(rho_min) <= 1,
    // and the identity load == sum(rho_min) holds to 1e-12
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for trial in 0..10_000 {
        let k = rng.gen_range(1..=4);
        let gains: Vec<f64> = (0..k).map(|_| log_uniform(&mut rng, 0.01, 1e3)).collect();
        let floors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.2)).collect();
        let f = check_feasibility(&gains, &floors).unwrap();
        let rho_min = min_power_coefficients(&gains, &floors).unwrap();
        let total: f64 = rho_min.iter().sum();
        assert!(
            (f.load - total).abs() <= 1e-12 * f.load.max(1.0),
            "trial {trial}: load {} vs sum {}",
            f.load,
            total
        );
        assert_eq!(f.feasible, total <= 1.0, "trial {trial}");
    }
}

#[test]
fn minimum_power_hits_floors_exactly() {
    // allocating exactly rho_min gives every slot exactly its floor rate
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..100 {
        let k = rng.gen_range(1..=4);
        let gains: Vec<f64> = (0..k).map(|_| log_uniform(&mut rng, 0.5, 100.0)).collect();
        let floors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let rho_min = min_power_coefficients(&gains, &floors).unwrap();
        let rates = cluster_rates(&gains, &rho_min);
        for (rate, f) in rates.iter().zip(&floors) {
            let target = (1.0 + f).log2();
            assert!((rate - target).abs() < 1e-10, "rate {rate} vs floor {target}");
        }
    }
}
