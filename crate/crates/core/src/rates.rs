//! SINR and rate algebra for clustered NOMA downlink with SIC.
//!
//! Within a cluster every user shares one beam; user signals are superposed
//! with power coefficients `rho` summing to one. The decoding order maps SIC
//! slots to users: the slot-k user decodes (and cancels) the messages of
//! slots before it and treats later slots as interference. Index semantics
//! throughout: interference sums run over decoding *slots* after `k`, and
//! all rates are `log2(1 + SINR)` in bits/s/Hz.

use crate::scenario::ChannelSet;
use crate::star::{combined_channel_with_profile, RisState};
use crate::{CVec, Error, Result};
use serde::{Deserialize, Serialize};

/// Per-cluster SIC decoding permutation: `order[c][k]` is the user decoded
/// in slot `k` (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodingOrder {
    pub per_cluster: Vec<Vec<usize>>,
}

impl DecodingOrder {
    /// Identity order (slot k decodes user k).
    pub fn identity(users_per_cluster: &[usize]) -> Self {
        DecodingOrder {
            per_cluster: users_per_cluster.iter().map(|&k| (0..k).collect()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, perm) in self.per_cluster.iter().enumerate() {
            let mut seen = vec![false; perm.len()];
            for &u in perm {
                if u >= perm.len() || seen[u] {
                    return Err(Error::Usage(format!("cluster {c}: not a permutation")));
                }
                seen[u] = true;
            }
        }
        Ok(())
    }

    /// Slot of a given user.
    pub fn slot_of(&self, cluster: usize, user: usize) -> usize {
        self.per_cluster[cluster].iter().position(|&u| u == user).expect("user in order")
    }

    pub fn user_at(&self, cluster: usize, slot: usize) -> usize {
        self.per_cluster[cluster][slot]
    }
}

/// Beamformed channel powers `p[c][u][d] = |h_{c,u} w_d|^2` for every user
/// and every beam, precomputed once per rate evaluation.
#[derive(Debug, Clone)]
pub struct LinkPowers {
    pub p: Vec<Vec<Vec<f64>>>,
}

impl LinkPowers {
    pub fn compute(channels: &ChannelSet, ris: &RisState, beams: &[CVec]) -> Result<Self> {
        let c_total = channels.num_clusters();
        let mut p = Vec::with_capacity(c_total);
        for c in 0..c_total {
            let profile = ris.profile(channels.side(c));
            let mut pc = Vec::with_capacity(channels.g[c].len());
            for u in 0..channels.g[c].len() {
                let h = combined_channel_with_profile(channels, &profile, c, u)?;
                pc.push(beams.iter().map(|w| h.dot(w).norm_sqr()).collect());
            }
            p.push(pc);
        }
        Ok(LinkPowers { p })
    }

    pub fn num_clusters(&self) -> usize {
        self.p.len()
    }

    pub fn users_in(&self, c: usize) -> usize {
        self.p[c].len()
    }

    fn inter_cluster(&self, c: usize, user: usize) -> f64 {
        (0..self.num_clusters()).filter(|&d| d != c).map(|d| self.p[c][user][d]).sum()
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if noise <= 0.0 || !noise.is_finite() {
        return Err(Error::Domain(format!("noise power must be positive, got {noise}")));
    }
    Ok(())
}

/// SINR of the slot-k user decoding its own message: desired power over
/// (later-slot intra-cluster power + inter-cluster power + noise).
pub fn sinr_self(
    powers: &LinkPowers,
    rho_by_user: &[Vec<f64>],
    order: &DecodingOrder,
    c: usize,
    k_slot: usize,
    noise: f64,
) -> Result<f64> {
    check_noise(noise)?;
    let user = order.user_at(c, k_slot);
    sinr_at_decoder(powers, rho_by_user, order, c, user, k_slot, noise)
}

/// SINR of the slot-j user decoding the slot-k user's message (`j > k`).
pub fn sinr_cross(
    powers: &LinkPowers,
    rho_by_user: &[Vec<f64>],
    order: &DecodingOrder,
    c: usize,
    j_slot: usize,
    k_slot: usize,
    noise: f64,
) -> Result<f64> {
    check_noise(noise)?;
    if j_slot <= k_slot {
        return Err(Error::Usage(format!(
            "cross SINR needs a later decoder: j={j_slot} k={k_slot}"
        )));
    }
    let decoder = order.user_at(c, j_slot);
    sinr_at_decoder(powers, rho_by_user, order, c, decoder, k_slot, noise)
}

/// Shared kernel of the two SINRs above: the message of slot `k_slot`
/// evaluated at `decoder`'s channel.
fn sinr_at_decoder(
    powers: &LinkPowers,
    rho_by_user: &[Vec<f64>],
    order: &DecodingOrder,
    c: usize,
    decoder: usize,
    k_slot: usize,
    noise: f64,
) -> Result<f64> {
    let own = powers.p[c][decoder][c];
    let msg_user = order.user_at(c, k_slot);
    let rho_k = rho_by_user[c][msg_user];
    let later: f64 = (k_slot + 1..order.per_cluster[c].len())
        .map(|n| rho_by_user[c][order.user_at(c, n)])
        .sum();
    let denom = own * later + powers.inter_cluster(c, decoder) + noise;
    Ok(own * rho_k / denom)
}

/// Equivalent-combined channel gain: a user's own beamformed power over
/// inter-cluster interference plus noise. The sorting key for the decoding
/// order; independent of the power coefficients.
pub fn equivalent_gain(powers: &LinkPowers, c: usize, user: usize, noise: f64) -> f64 {
    powers.p[c][user][c] / (powers.inter_cluster(c, user) + noise)
}

/// All equivalent gains, `[cluster][user]`.
pub fn equivalent_gains(powers: &LinkPowers, noise: f64) -> Vec<Vec<f64>> {
    (0..powers.num_clusters())
        .map(|c| (0..powers.users_in(c)).map(|u| equivalent_gain(powers, c, u, noise)).collect())
        .collect()
}

/// Sorts each cluster's users by ascending equivalent gain; ties broken by
/// ascending user index. Reads only the gains, never the power coefficients.
pub fn decoding_order(gains: &[Vec<f64>]) -> DecodingOrder {
    let per_cluster = gains
        .iter()
        .map(|g| {
            let mut idx: Vec<usize> = (0..g.len()).collect();
            idx.sort_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap().then(a.cmp(&b)));
            idx
        })
        .collect();
    DecodingOrder { per_cluster }
}

/// Full rate accounting of one decision state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub per_cluster: Vec<ClusterRates>,
    pub sum_rate: f64,
}

/// Slot-indexed rates of one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRates {
    pub order: Vec<usize>,
    pub self_sinr: Vec<f64>,
    pub self_rate: Vec<f64>,
    /// `cross_rate[j][k]`, populated for `j > k`: slot-j user decoding the
    /// slot-k message.
    pub cross_rate: Vec<Vec<f64>>,
}

/// Builds the full rate report; `rho_by_user[c][u]` are power coefficients
/// per cluster summing to one.
pub fn rate_report(
    powers: &LinkPowers,
    rho_by_user: &[Vec<f64>],
    order: &DecodingOrder,
    noise: f64,
) -> Result<RateReport> {
    check_noise(noise)?;
    order.validate()?;
    let mut per_cluster = Vec::with_capacity(powers.num_clusters());
    let mut sum = 0.0;
    for c in 0..powers.num_clusters() {
        let k_c = powers.users_in(c);
        let mut self_sinr = Vec::with_capacity(k_c);
        let mut self_rate = Vec::with_capacity(k_c);
        let mut cross_rate = vec![vec![0.0; k_c]; k_c];
        for k in 0..k_c {
            let s = sinr_self(powers, rho_by_user, order, c, k, noise)?;
            self_sinr.push(s);
            let r = (1.0 + s).log2();
            self_rate.push(r);
            sum += r;
            for j in k + 1..k_c {
                let sc = sinr_cross(powers, rho_by_user, order, c, j, k, noise)?;
                cross_rate[j][k] = (1.0 + sc).log2();
            }
        }
        per_cluster.push(ClusterRates {
            order: order.per_cluster[c].clone(),
            self_sinr,
            self_rate,
            cross_rate,
        });
    }
    Ok(RateReport { per_cluster, sum_rate: sum })
}

/// Tolerance for SIC rate comparisons, bits/s/Hz.
pub const SIC_TOL: f64 = 1e-9;

/// Checks every SIC decoding condition `R_{j->k} >= R_{k->k}` (slots
/// `j > k`); returns the violated `(cluster, j_slot, k_slot)` triples.
pub fn verify_sic(report: &RateReport) -> Vec<(usize, usize, usize)> {
    let mut violations = Vec::new();
    for (c, cl) in report.per_cluster.iter().enumerate() {
        let k_c = cl.self_rate.len();
        for k in 0..k_c {
            for j in k + 1..k_c {
                if cl.cross_rate[j][k] < cl.self_rate[k] - SIC_TOL {
                    violations.push((c, j, k));
                }
            }
        }
    }
    violations
}

/// Overall achievable sum rate.
pub fn sum_rate(report: &RateReport) -> f64 {
    report.per_cluster.iter().map(|c| c.self_rate.iter().sum::<f64>()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_user_powers(own: f64) -> LinkPowers {
        LinkPowers { p: vec![vec![vec![own]]] }
    }

    #[test]
    fn single_user_unit_sinr() {
        let lp = single_user_powers(1.0);
        let order = DecodingOrder::identity(&[1]);
        let rho = vec![vec![1.0]];
        let s = sinr_self(&lp, &rho, &order, 0, 0, 1.0).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        let rep = rate_report(&lp, &rho, &order, 1.0).unwrap();
        assert_relative_eq!(rep.sum_rate, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn last_decoded_user_sees_no_intra_cluster_interference() {
        // two users; slot-1 (last) user has empty later-slot sum
        let lp = LinkPowers { p: vec![vec![vec![4.0], vec![2.0]]] };
        let order = DecodingOrder::identity(&[2]);
        let rho = vec![vec![0.7, 0.3]];
        let s_last = sinr_self(&lp, &rho, &order, 0, 1, 1.0).unwrap();
        assert_relative_eq!(s_last, 2.0 * 0.3 / 1.0, epsilon = 1e-15);
    }

    #[test]
    fn noise_must_be_positive() {
        let lp = single_user_powers(1.0);
        let order = DecodingOrder::identity(&[1]);
        assert!(sinr_self(&lp, &[vec![1.0]], &order, 0, 0, 0.0).is_err());
        assert!(sinr_self(&lp, &[vec![1.0]], &order, 0, 0, -1.0).is_err());
    }

    #[test]
    fn cross_sinr_hand_computed() {
        // single cluster, 2 users: |h_2 w|^2 = 2 sigma^2, rho = (0.8, 0.2)
        // SINR_{2->1} = 2*0.8 / (2*0.2 + 1) = 1.142857...
        let lp = LinkPowers { p: vec![vec![vec![1.0], vec![2.0]]] };
        let order = DecodingOrder::identity(&[2]);
        let rho = vec![vec![0.8, 0.2]];
        let s = sinr_cross(&lp, &rho, &order, 0, 1, 0, 1.0).unwrap();
        assert_relative_eq!(s, 1.6 / 1.4, epsilon = 1e-12);
    }

    #[test]
    fn cross_equals_self_for_identical_channels() {
        let lp = LinkPowers { p: vec![vec![vec![3.0], vec![3.0]]] };
        let order = DecodingOrder::identity(&[2]);
        let rho = vec![vec![0.6, 0.4]];
        let s_self = sinr_self(&lp, &rho, &order, 0, 0, 1.0).unwrap();
        let s_cross = sinr_cross(&lp, &rho, &order, 0, 1, 0, 1.0).unwrap();
        assert_relative_eq!(s_self, s_cross, epsilon = 1e-15);
    }

    #[test]
    fn cross_rejects_bad_slots() {
        let lp = LinkPowers { p: vec![vec![vec![1.0], vec![1.0]]] };
        let order = DecodingOrder::identity(&[2]);
        assert!(sinr_cross(&lp, &[vec![0.5, 0.5]], &order, 0, 0, 0, 1.0).is_err());
        assert!(sinr_cross(&lp, &[vec![0.5, 0.5]], &order, 0, 0, 1, 1.0).is_err());
    }

    #[test]
    fn zero_power_message_gives_zero_sinr() {
        let lp = LinkPowers { p: vec![vec![vec![1.0], vec![2.0]]] };
        let order = DecodingOrder::identity(&[2]);
        let rho = vec![vec![0.0, 1.0]];
        let s = sinr_cross(&lp, &rho, &order, 0, 1, 0, 1.0).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn equivalent_gain_single_cluster() {
        let lp = single_user_powers(5.0);
        assert_relative_eq!(equivalent_gain(&lp, 0, 0, 2.0), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn equivalent_gain_beam_scaling() {
        // scaling w_c by alpha scales the gain by |alpha|^2
        let lp = LinkPowers { p: vec![vec![vec![4.0, 1.0]], vec![vec![1.0, 1.0]]] };
        let g0 = equivalent_gain(&lp, 0, 0, 1.0);
        let lp2 = LinkPowers { p: vec![vec![vec![16.0, 1.0]], vec![vec![1.0, 4.0]]] };
        let g1 = equivalent_gain(&lp2, 0, 0, 1.0);
        assert_relative_eq!(g1, 4.0 * g0, epsilon = 1e-12);
    }

    #[test]
    fn decoding_order_sorting_and_ties() {
        let order = decoding_order(&[vec![5.0, 2.0]]);
        assert_eq!(order.per_cluster[0], vec![1, 0]);
        let order = decoding_order(&[vec![3.0, 3.0, 1.0]]);
        assert_eq!(order.per_cluster[0], vec![2, 0, 1]);
        let order = decoding_order(&[vec![1.0]]);
        assert_eq!(order.per_cluster[0], vec![0]);
    }

    #[test]
    fn sic_vacuous_for_singleton_cluster() {
        let lp = single_user_powers(1.0);
        let order = DecodingOrder::identity(&[1]);
        let rep = rate_report(&lp, &[vec![1.0]], &order, 1.0).unwrap();
        assert!(verify_sic(&rep).is_empty());
    }

    #[test]
    fn reversed_order_on_strict_instance_violates_sic() {
        // gain-ascending order would be (weak, strong); force the reverse
        let lp = LinkPowers { p: vec![vec![vec![100.0], vec![0.1]]] };
        let order = DecodingOrder { per_cluster: vec![vec![0, 1]] }; // strong first
        let rho = vec![vec![0.5, 0.5]];
        let rep = rate_report(&lp, &rho, &order, 1.0).unwrap();
        assert!(!verify_sic(&rep).is_empty());
    }

    #[test]
    fn sum_rate_reductions() {
        let lp = LinkPowers { p: vec![vec![vec![0.0], vec![0.0]]] };
        let order = DecodingOrder::identity(&[2]);
        let rep = rate_report(&lp, &[vec![0.5, 0.5]], &order, 1.0).unwrap();
        assert_eq!(sum_rate(&rep), 0.0);
        assert_eq!(rep.sum_rate, 0.0);
    }

    #[test]
    fn report_matches_scalar_reimplementation() {
        // independent from-scratch evaluation of the SINR formula on a
        // random 2-cluster instance
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let users = [2usize, 3];
            let p: Vec<Vec<Vec<f64>>> = users
                .iter()
                .map(|&k| {
                    (0..k)
                        .map(|_| (0..2).map(|_| rng.gen_range(0.01..10.0)).collect())
                        .collect()
                })
                .collect();
            let lp = LinkPowers { p: p.clone() };
            let noise = rng.gen_range(0.1..2.0);
            let rho: Vec<Vec<f64>> = users
                .iter()
                .map(|&k| {
                    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let gains = equivalent_gains(&lp, noise);
            let order = decoding_order(&gains);
            let rep = rate_report(&lp, &rho, &order, noise).unwrap();
            for c in 0..2 {
                let k_c = users[c];
                for k in 0..k_c {
                    let u = order.user_at(c, k);
                    let own = p[c][u][c];
                    let later: f64 =
                        (k + 1..k_c).map(|n| rho[c][order.user_at(c, n)]).sum();
                    let inter: f64 =
                        (0..2).filter(|&d| d != c).map(|d| p[c][u][d]).sum();
                    let sinr = own * rho[c][u] / (own * later + inter + noise);
                    assert_relative_eq!(rep.per_cluster[c].self_sinr[k], sinr, epsilon = 1e-12);
                }
            }
        }
    }
}
