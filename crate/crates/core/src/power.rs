//! Closed-form intra-cluster power allocation.
//!
//! With the decoding order fixed and the beams frozen, each cluster's power
//! split decouples and reduces to a one-dimensional family: give every
//! earlier-decoded user exactly its QoS floor and hand all remaining power
//! to the last-decoded (strongest-gain) user. All functions below index
//! users in *slot order* (slot 0 decoded first); callers map users to slots
//! through the decoding order.
//!
//! The cluster rate in slot order depends only on the equivalent gains:
//! `R_k = log2(1 + G_k rho_k / (G_k sum_{n>k} rho_n + 1))`.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear SINR floor for a rate floor in bits/s/Hz.
pub fn sinr_floor(r_min_bits: f64) -> f64 {
    2f64.powf(r_min_bits) - 1.0
}

/// Power split of one cluster, slot-indexed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Coefficients by decoding slot, summing to exactly one.
    pub rho: Vec<f64>,
    pub feasible: bool,
    /// `1 - load`; nonnegative iff the QoS floors are attainable.
    pub margin: f64,
}

fn check_gains(gains: &[f64]) -> Result<()> {
    if gains.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
        return Err(Error::Domain("equivalent gains must be positive".into()));
    }
    Ok(())
}

/// Minimum coefficients meeting every QoS floor with equality, by the
/// backward recursion `rho_k = r_k (sum_{n>k} rho_n + 1/G_k)`.
pub fn min_power_coefficients(gains: &[f64], sinr_floors: &[f64]) -> Result<Vec<f64>> {
    check_gains(gains)?;
    if gains.len() != sinr_floors.len() {
        return Err(Error::Dimension("gains and floors must match".into()));
    }
    let k_c = gains.len();
    let mut rho = vec![0.0; k_c];
    let mut tail = 0.0;
    for k in (0..k_c).rev() {
        rho[k] = sinr_floors[k] * (tail + 1.0 / gains[k]);
        tail += rho[k];
    }
    Ok(rho)
}

/// Feasibility of the QoS floors under a unit power budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Feasibility {
    /// `sum_k (r_k / G_k) prod_{i<k} (r_i + 1)`; feasible iff `<= 1`.
    pub load: f64,
    pub feasible: bool,
    pub margin: f64,
}

/// Evaluates the load test. The load equals the sum of the minimum power
/// coefficients, an identity the tests pin to 1e-12.
pub fn check_feasibility(gains: &[f64], sinr_floors: &[f64]) -> Result<Feasibility> {
    check_gains(gains)?;
    if gains.len() != sinr_floors.len() {
        return Err(Error::Dimension("gains and floors must match".into()));
    }
    let mut load = 0.0;
    let mut prefix = 1.0; // prod_{i<k} (r_i + 1)
    for (g, r) in gains.iter().zip(sinr_floors) {
        load += r / g * prefix;
        prefix *= r + 1.0;
    }
    Ok(Feasibility { load, feasible: load <= 1.0, margin: 1.0 - load })
}

/// Optimal coefficients: the forward recursion pins slots `0..K-2` to their
/// QoS floors and gives the residual to the last slot. Errors with
/// [`Error::InfeasiblePower`] when the floors cannot be met.
pub fn optimal_power(gains: &[f64], sinr_floors: &[f64]) -> Result<PowerAllocation> {
    let feas = check_feasibility(gains, sinr_floors)?;
    if !feas.feasible {
        return Err(Error::InfeasiblePower { cluster: usize::MAX, load: feas.load });
    }
    let k_c = gains.len();
    let mut rho = vec![0.0; k_c];
    let mut used = 0.0;
    for k in 0..k_c.saturating_sub(1) {
        let r = sinr_floors[k];
        rho[k] = r / (1.0 + r) * (1.0 - used + 1.0 / gains[k]);
        used += rho[k];
    }
    rho[k_c - 1] = 1.0 - used;
    Ok(PowerAllocation { rho, feasible: true, margin: feas.margin })
}

/// Cluster rates at a slot-ordered power split, from first principles.
pub fn cluster_rates(gains: &[f64], rho: &[f64]) -> Vec<f64> {
    let k_c = gains.len();
    (0..k_c)
        .map(|k| {
            let tail: f64 = rho[k + 1..].iter().sum();
            let sinr = gains[k] * rho[k] / (gains[k] * tail + 1.0);
            (1.0 + sinr).log2()
        })
        .collect()
}

/// Cluster sum rate of an optimal allocation, computed from the rates
/// themselves rather than any printed closed form; asserts (in debug
/// builds) that all but the last slot sit exactly on their floors.
pub fn cluster_objective(gains: &[f64], alloc: &PowerAllocation, sinr_floors: &[f64]) -> f64 {
    let rates = cluster_rates(gains, &alloc.rho);
    if cfg!(debug_assertions) {
        for k in 0..gains.len().saturating_sub(1) {
            let floor = (1.0 + sinr_floors[k]).log2();
            debug_assert!(
                (rates[k] - floor).abs() < 1e-9,
                "slot {k} rate {} != floor {floor}",
                rates[k]
            );
        }
    }
    rates.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sinr_floor_values() {
        assert_relative_eq!(sinr_floor(1.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(sinr_floor(0.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(sinr_floor(0.1), 2f64.powf(0.1) - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn min_power_single_user() {
        // K=1, G=1, R_min=1 (r=1) -> rho_min = 1
        let rho = min_power_coefficients(&[1.0], &[1.0]).unwrap();
        assert_relative_eq!(rho[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn min_power_two_users() {
        // G=(10,10), r=(1,1) -> rho_min = (0.2, 0.1)
        let rho = min_power_coefficients(&[10.0, 10.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(rho[1], 0.1, epsilon = 1e-15);
        assert_relative_eq!(rho[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn min_power_zero_floors() {
        let rho = min_power_coefficients(&[3.0, 5.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!(rho.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn min_power_rejects_bad_gains() {
        assert!(min_power_coefficients(&[0.0], &[1.0]).is_err());
        assert!(min_power_coefficients(&[-2.0], &[1.0]).is_err());
    }

    #[test]
    fn feasibility_examples() {
        // zero floors: load 0
        let f = check_feasibility(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(f.load, 0.0);
        assert!(f.feasible);

        // G=(1,2), r=(1,1): load = 1 + (1/2)*2 = 2 -> infeasible
        let f = check_feasibility(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(f.load, 2.0, epsilon = 1e-15);
        assert!(!f.feasible);

        // G=(10,10), r=(1,1): load 0.3, margin 0.7
        let f = check_feasibility(&[10.0, 10.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(f.load, 0.3, epsilon = 1e-15);
        assert_relative_eq!(f.margin, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn load_equals_min_power_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for _ in 0..200 {
            let k = rng.gen_range(1..=4);
            let gains: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..100.0)).collect();
            let floors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.5)).collect();
            let f = check_feasibility(&gains, &floors).unwrap();
            let rho_min = min_power_coefficients(&gains, &floors).unwrap();
            let total: f64 = rho_min.iter().sum();
            assert!((f.load - total).abs() <= 1e-12 * f.load.max(1.0));
        }
    }

    #[test]
    fn optimal_single_user_gets_everything() {
        let a = optimal_power(&[2.0], &[0.5]).unwrap();
        assert_eq!(a.rho, vec![1.0]);
    }

    #[test]
    fn optimal_two_user_worked_instance() {
        // G=(10,10), r=(1,1): rho* = (0.55, 0.45); rates (1, log2(5.5))
        let a = optimal_power(&[10.0, 10.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(a.rho[0], 0.55, epsilon = 1e-15);
        assert_relative_eq!(a.rho[1], 0.45, epsilon = 1e-15);
        let rates = cluster_rates(&[10.0, 10.0], &a.rho);
        assert_relative_eq!(rates[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(rates[1], 5.5f64.log2(), epsilon = 1e-12);
        let obj = cluster_objective(&[10.0, 10.0], &a, &[1.0, 1.0]);
        assert_relative_eq!(obj, 1.0 + 5.5f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn optimal_zero_floors_degenerate() {
        // all power to the last (strongest) slot: rate log2(1 + G_max)
        let gains = [2.0, 5.0, 9.0];
        let a = optimal_power(&gains, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.rho, vec![0.0, 0.0, 1.0]);
        let obj = cluster_objective(&gains, &a, &[0.0, 0.0, 0.0]);
        assert_relative_eq!(obj, 10f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn optimal_rejects_infeasible() {
        match optimal_power(&[1.0, 2.0], &[1.0, 1.0]) {
            Err(crate::Error::InfeasiblePower { load, .. }) => {
                assert_relative_eq!(load, 2.0, epsilon = 1e-12)
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn rho_sums_to_exactly_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
        for _ in 0..500 {
            let k = rng.gen_range(1..=4);
            let gains: Vec<f64> = (0..k).map(|_| rng.gen_range(1.0..1000.0)).collect();
            let floors = vec![sinr_floor(0.1); k];
            if let Ok(a) = optimal_power(&gains, &floors) {
                let total: f64 = a.rho.iter().sum();
                assert_eq!(total, 1.0, "sum {total:e} for rho {:?}", a.rho);
                // feasible iff last coefficient covers its own floor
                let rho_min = min_power_coefficients(&gains, &floors).unwrap();
                assert!(a.rho[k - 1] >= rho_min[k - 1] - 1e-12);
            }
        }
    }

    #[test]
    fn margin_sign_matches_optimal_power_success() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(46);
        for _ in 0..500 {
            let k = rng.gen_range(1..=3);
            let gains: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..50.0)).collect();
            let floors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0)).collect();
            let f = check_feasibility(&gains, &floors).unwrap();
            let attempt = optimal_power(&gains, &floors);
            assert_eq!(f.margin >= 0.0, attempt.is_ok());
        }
    }
}
