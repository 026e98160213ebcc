//! Transmit (active) beamforming by successive convex approximation.
//!
//! With powers and surface coefficients frozen, each iteration lifts the
//! beams to PSD matrices `W_c = w_c w_c^H`, replaces the rate of each user
//! by a first-order expansion in the slack pair `(A, B)` (inverse desired
//! power, interference-plus-noise), and solves the resulting SDP without
//! the rank-one constraint; the optimum is rank-one anyway, and the beams
//! are recovered from the principal eigenpair.
//!
//! All channel quantities are noise-normalized (`h / sigma`), so the noise
//! term is 1 in every constraint and the SDP data stays well-scaled.

use crate::conic::linalg::rank_one_extract;
use crate::conic::{ConicProgram, LinExpr, PsdVar, ScalarVar, Sense, SolverOptions};
use crate::rates::{self, DecodingOrder, LinkPowers};
use crate::scenario::ChannelSet;
use crate::star::{combined_channel_with_profile, RisState};
use crate::{CMat, CVec, Error, Result};

/// Numerical headroom added to the QoS floor inside the SDPs so extracted
/// solutions remain QoS-feasible under the solver tolerance.
pub(crate) const QOS_MARGIN: f64 = 1e-6;

/// Clamp for degenerate desired powers when initializing slacks.
const SLACK_CLAMP: f64 = 1e18;

/// Slack expansion point, `[cluster][slot]`.
#[derive(Debug, Clone)]
pub struct SlackState {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// True when some desired power was degenerate and had to be clamped.
    pub clamped: bool,
}

/// Active beamforming vectors, one per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveBeams {
    pub w: Vec<CVec>,
}

impl ActiveBeams {
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|w| w.norm_squared()).sum()
    }

    /// Rescales onto the power budget if the total exceeds it (used to clean
    /// up solver-tolerance excess; never scales up).
    pub fn clamp_power(&mut self, p_max: f64) {
        let total = self.total_power();
        if total > p_max {
            let f = (p_max / total).sqrt();
            for w in &mut self.w {
                *w *= crate::C64::new(f, 0.0);
            }
        }
    }
}

/// Everything the beamforming stages need about the current outer state:
/// noise-normalized combined channels, slot-ordered powers, and budgets.
#[derive(Debug, Clone)]
pub struct BeamformingContext {
    /// `h_{c,u} / sigma`, `[cluster][user]`, length `N_T`.
    pub h_norm: Vec<Vec<CVec>>,
    /// Power coefficients by decoding slot, `[cluster][slot]`.
    pub rho_slot: Vec<Vec<f64>>,
    pub order: DecodingOrder,
    /// QoS floor, bits/s/Hz.
    pub r_min: f64,
    /// Transmit power budget, watts.
    pub p_max: f64,
}

impl BeamformingContext {
    pub fn new(
        channels: &ChannelSet,
        ris: &RisState,
        rho_by_user: &[Vec<f64>],
        order: &DecodingOrder,
        r_min: f64,
        p_max: f64,
        noise_w: f64,
    ) -> Result<Self> {
        if noise_w <= 0.0 {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        let inv_sigma = crate::C64::new(1.0 / noise_w.sqrt(), 0.0);
        let mut h_norm = Vec::with_capacity(channels.num_clusters());
        for c in 0..channels.num_clusters() {
            let profile = ris.profile(channels.side(c));
            let mut hc = Vec::with_capacity(channels.g[c].len());
            for u in 0..channels.g[c].len() {
                hc.push(combined_channel_with_profile(channels, &profile, c, u)? * inv_sigma);
            }
            h_norm.push(hc);
        }
        let rho_slot = order
            .per_cluster
            .iter()
            .enumerate()
            .map(|(c, perm)| perm.iter().map(|&u| rho_by_user[c][u]).collect())
            .collect();
        Ok(BeamformingContext {
            h_norm,
            rho_slot,
            order: order.clone(),
            r_min,
            p_max,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.h_norm.len()
    }

    pub fn users_in(&self, c: usize) -> usize {
        self.h_norm[c].len()
    }

    pub fn num_antennas(&self) -> usize {
        self.h_norm[0][0].len()
    }

    /// Normalized desired power `|h w_c|^2 / sigma^2` of the slot-k user.
    fn own_power(&self, beams: &ActiveBeams, c: usize, k_slot: usize) -> f64 {
        let u = self.order.user_at(c, k_slot);
        self.h_norm[c][u].dot(&beams.w[c]).norm_sqr()
    }

    /// Interference-plus-noise (normalized) of the slot-k user.
    fn interference(&self, beams: &ActiveBeams, c: usize, k_slot: usize) -> f64 {
        let u = self.order.user_at(c, k_slot);
        let own = self.h_norm[c][u].dot(&beams.w[c]).norm_sqr();
        let tail: f64 = self.rho_slot[c][k_slot + 1..].iter().sum();
        let inter: f64 = (0..self.num_clusters())
            .filter(|&d| d != c)
            .map(|d| self.h_norm[c][u].dot(&beams.w[d]).norm_sqr())
            .sum();
        own * tail + inter + 1.0
    }

    /// Genuine sum rate (bits/s/Hz) at the given beams, straight from the
    /// SINR definitions with noise normalized to 1.
    pub fn true_sum_rate(&self, beams: &ActiveBeams) -> f64 {
        let p: Vec<Vec<Vec<f64>>> = (0..self.num_clusters())
            .map(|c| {
                (0..self.users_in(c))
                    .map(|u| beams.w.iter().map(|w| self.h_norm[c][u].dot(w).norm_sqr()).collect())
                    .collect()
            })
            .collect();
        let lp = LinkPowers { p };
        let rho_by_user: Vec<Vec<f64>> = (0..self.num_clusters())
            .map(|c| {
                let mut r = vec![0.0; self.users_in(c)];
                for (k, &u) in self.order.per_cluster[c].iter().enumerate() {
                    r[u] = self.rho_slot[c][k];
                }
                r
            })
            .collect();
        rates::rate_report(&lp, &rho_by_user, &self.order, 1.0)
            .map(|r| r.sum_rate)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Feasible slack point evaluated at the current beams: `A = 1/(own * rho)`
/// (clamped on degenerate links), `B` = interference-plus-noise.
pub fn init_slacks(ctx: &BeamformingContext, beams: &ActiveBeams) -> SlackState {
    let mut a = Vec::with_capacity(ctx.num_clusters());
    let mut b = Vec::with_capacity(ctx.num_clusters());
    let mut clamped = false;
    for c in 0..ctx.num_clusters() {
        let k_c = ctx.users_in(c);
        let mut ac = Vec::with_capacity(k_c);
        let mut bc = Vec::with_capacity(k_c);
        for k in 0..k_c {
            let desired = ctx.own_power(beams, c, k) * ctx.rho_slot[c][k];
            if desired <= 1.0 / SLACK_CLAMP {
                ac.push(SLACK_CLAMP);
                clamped = true;
            } else {
                ac.push(1.0 / desired);
            }
            bc.push(ctx.interference(beams, c, k));
        }
        a.push(ac);
        b.push(bc);
    }
    SlackState { a, b, clamped }
}

/// `log2(1 + 1/(a b))`, the rate as a function of the slack pair.
pub fn surrogate_rate(a: f64, b: f64) -> f64 {
    (1.0 + 1.0 / (a * b)).log2()
}

/// First-order expansion of [`surrogate_rate`] around `(a0, b0)`; a global
/// under-estimator by joint convexity, exact at the expansion point.
pub fn taylor_bound(a: f64, b: f64, a0: f64, b0: f64) -> Result<f64> {
    for v in [a, b, a0, b0] {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::Domain(format!("taylor bound needs positive slacks, got {v}")));
        }
    }
    let log2e = std::f64::consts::LOG2_E;
    let f0 = surrogate_rate(a0, b0);
    let denom = 1.0 + a0 * b0;
    Ok(f0 - log2e * (a - a0) / (a0 * denom) - log2e * (b - b0) / (b0 * denom))
}

/// Handles into the SDP for reading the solution back.
pub struct ActiveSdpVars {
    pub w: Vec<PsdVar>,
    pub a: Vec<Vec<ScalarVar>>,
    pub b: Vec<Vec<ScalarVar>>,
    pub r: Vec<Vec<ScalarVar>>,
}

/// Builds the convexified beam program at the given expansion point:
/// maximize the sum of rate variables subject to the linearized rate rows,
/// QoS floors, hyperbolic desired-power couplings, interference bounds, and
/// the total power budget; one PSD block per cluster beam.
pub fn build_active_sdp(
    ctx: &BeamformingContext,
    slacks: &SlackState,
) -> Result<(ConicProgram, ActiveSdpVars)> {
    let n_t = ctx.num_antennas();
    let mut prog = ConicProgram::new();
    let w: Vec<PsdVar> =
        (0..ctx.num_clusters()).map(|c| prog.add_psd(&format!("W{c}"), n_t)).collect();
    let mut vars = ActiveSdpVars { w, a: Vec::new(), b: Vec::new(), r: Vec::new() };
    let mut objective = LinExpr::new();
    let log2e = std::f64::consts::LOG2_E;

    for c in 0..ctx.num_clusters() {
        let k_c = ctx.users_in(c);
        let mut a_row = Vec::with_capacity(k_c);
        let mut b_row = Vec::with_capacity(k_c);
        let mut r_row = Vec::with_capacity(k_c);
        for k in 0..k_c {
            let u = ctx.order.user_at(c, k);
            let rho_k = ctx.rho_slot[c][k];
            let a_v = prog.add_scalar(&format!("A{c}_{k}"));
            let b_v = prog.add_scalar(&format!("B{c}_{k}"));
            let r_v = prog.add_scalar(&format!("R{c}_{k}"));
            objective = objective.plus_scalar(r_v, 1.0);

            // |h w|^2 = tr(W H) with H_ij = conj(h_i) h_j for the row channel h
            let h = &ctx.h_norm[c][u];
            let h_herm = CMat::from_fn(n_t, n_t, |i, j| h[i].conj() * h[j]);

            if rho_k <= 1e-15 {
                // zero-power message: the rate is identically zero and the
                // hyperbolic coupling is unsatisfiable; only legal when the
                // QoS floor is zero
                if ctx.r_min > 0.0 {
                    return Err(Error::InfeasiblePower { cluster: c, load: f64::INFINITY });
                }
                prog.add_eq(LinExpr::var(r_v), 0.0);
                a_row.push(a_v);
                b_row.push(b_v);
                r_row.push(r_v);
                continue;
            }

            // linearized rate row: r + dA*a + dB*b <= f0 + dA*a0 + dB*b0
            let (a0, b0) = (slacks.a[c][k], slacks.b[c][k]);
            let f0 = surrogate_rate(a0, b0);
            let denom = 1.0 + a0 * b0;
            let da = log2e / (a0 * denom);
            let db = log2e / (b0 * denom);
            prog.add_le(
                LinExpr::var(r_v).plus_scalar(a_v, da).plus_scalar(b_v, db),
                f0 + da * a0 + db * b0,
            );
            // QoS floor with numerical headroom
            prog.add_ge(LinExpr::var(r_v), ctx.r_min + QOS_MARGIN);
            // desired power: 1/a <= rho * tr(W_c H)
            prog.add_hyperbolic(
                LinExpr::trace(vars.w[c], h_herm.scale(rho_k)),
                LinExpr::var(a_v),
            );
            // interference bound: b >= tail * tr(W_c H) + sum_d tr(W_d H) + 1
            let tail: f64 = ctx.rho_slot[c][k + 1..].iter().sum();
            let mut expr = LinExpr::var(b_v);
            if tail > 0.0 {
                expr = expr.plus_trace(vars.w[c], h_herm.scale(-tail));
            }
            for d in 0..ctx.num_clusters() {
                if d != c {
                    expr = expr.plus_trace(vars.w[d], -h_herm.clone());
                }
            }
            prog.add_ge(expr, 1.0);

            a_row.push(a_v);
            b_row.push(b_v);
            r_row.push(r_v);
        }
        vars.a.push(a_row);
        vars.b.push(b_row);
        vars.r.push(r_row);
    }

    // total power budget
    let mut power = LinExpr::new();
    for &wv in &vars.w {
        power = power.plus_trace(wv, CMat::identity(n_t, n_t));
    }
    prog.add_le(power, ctx.p_max);

    prog.set_objective(Sense::Maximize, objective);
    Ok((prog, vars))
}

/// Outcome of the SCA loop.
#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub beams: ActiveBeams,
    /// SDP objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// A solve failed mid-run; `beams` is the best iterate seen.
    pub solver_failed: bool,
    /// Max rank-one residual `1 - lambda_max/tr` over clusters, per solve.
    pub rank_residuals: Vec<f64>,
    /// Worst PSD block eigenvalue over all accepted solves.
    pub min_psd_eig: f64,
    pub iterations: usize,
}

/// Iterates expansion-point updates and SDP solves until the objective
/// converges (relative change below `tol`), then returns the rank-one beams
/// of the best iterate by true sum rate.
pub fn sca_active(
    ctx: &BeamformingContext,
    init: &ActiveBeams,
    tol: f64,
    max_iters: usize,
    solver: &SolverOptions,
) -> Result<ScaOutcome> {
    let mut slacks = init_slacks(ctx, init);
    let mut best_beams = init.clone();
    let mut best_rate = ctx.true_sum_rate(init);
    let mut trace: Vec<f64> = Vec::new();
    let mut rank_residuals = Vec::new();
    let mut min_psd = f64::INFINITY;
    let mut converged = false;
    let mut solver_failed = false;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        let (prog, vars) = build_active_sdp(ctx, &slacks)?;
        let res = prog.solve(solver);
        if !res.is_optimal() {
            solver_failed = true;
            break;
        }
        min_psd = min_psd.min(res.residuals.min_psd_eig);

        // recover beams and track the genuinely best iterate
        let mut w = Vec::with_capacity(ctx.num_clusters());
        let mut worst_residual = 0.0f64;
        for c in 0..ctx.num_clusters() {
            let (vec, residual) = rank_one_extract(&res.blocks[vars.w[c].index()]);
            worst_residual = worst_residual.max(residual);
            w.push(vec);
        }
        rank_residuals.push(worst_residual);
        let mut candidate = ActiveBeams { w };
        candidate.clamp_power(ctx.p_max);
        let cand_rate = ctx.true_sum_rate(&candidate);
        if cand_rate > best_rate {
            best_rate = cand_rate;
            best_beams = candidate;
        }

        // expansion point moves to the solution
        for c in 0..ctx.num_clusters() {
            for k in 0..ctx.users_in(c) {
                let a = res.scalars[vars.a[c][k].index()];
                let b = res.scalars[vars.b[c][k].index()];
                if a > 0.0 && b > 0.0 {
                    slacks.a[c][k] = a;
                    slacks.b[c][k] = b;
                }
            }
        }

        let obj = res.objective;
        let done = trace
            .last()
            .map(|&prev| (obj - prev).abs() / prev.abs().max(1e-12) < tol)
            .unwrap_or(false);
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }

    Ok(ScaOutcome {
        beams: best_beams,
        objective_trace: trace,
        converged,
        solver_failed,
        rank_residuals,
        min_psd_eig: if min_psd.is_finite() { min_psd } else { 0.0 },
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_user_ctx(h: CVec, p_max: f64) -> BeamformingContext {
        BeamformingContext {
            h_norm: vec![vec![h]],
            rho_slot: vec![vec![1.0]],
            order: DecodingOrder::identity(&[1]),
            r_min: 0.0,
            p_max,
        }
    }

    #[test]
    fn slack_init_single_user() {
        let h = CVec::from_vec(vec![C64::new(1.0, 0.0)]);
        let ctx = single_user_ctx(h, 1.0);
        let beams = ActiveBeams { w: vec![CVec::from_vec(vec![C64::new(1.0, 0.0)])] };
        let s = init_slacks(&ctx, &beams);
        assert_relative_eq!(s.a[0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.b[0][0], 1.0, epsilon = 1e-15);
        assert!(!s.clamped);
        // rate identity at the expansion point
        assert_relative_eq!(surrogate_rate(s.a[0][0], s.b[0][0]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(ctx.true_sum_rate(&beams), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slack_init_clamps_zero_beam() {
        let h = CVec::from_vec(vec![C64::new(1.0, 0.0)]);
        let ctx = single_user_ctx(h, 1.0);
        let beams = ActiveBeams { w: vec![CVec::from_vec(vec![C64::new(0.0, 0.0)])] };
        let s = init_slacks(&ctx, &beams);
        assert!(s.clamped);
        assert!(s.a[0][0] >= 1e17);
    }

    #[test]
    fn slack_rate_identity_random_instances() {
        // log2(1 + 1/(a b)) at the initialized slacks equals the SINR-based
        // rate at the same iterate
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut h_rand = |rng: &mut ChaCha8Rng| {
            CVec::from_fn(3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        };
        for _ in 0..20 {
            let ctx = BeamformingContext {
                h_norm: vec![
                    vec![h_rand(&mut rng), h_rand(&mut rng)],
                    vec![h_rand(&mut rng)],
                ],
                rho_slot: vec![vec![0.7, 0.3], vec![1.0]],
                order: DecodingOrder::identity(&[2, 1]),
                r_min: 0.0,
                p_max: 2.0,
            };
            let beams = ActiveBeams { w: vec![h_rand(&mut rng), h_rand(&mut rng)] };
            let s = init_slacks(&ctx, &beams);
            let mut total = 0.0;
            for c in 0..2 {
                for k in 0..ctx.users_in(c) {
                    total += surrogate_rate(s.a[c][k], s.b[c][k]);
                }
            }
            assert_relative_eq!(total, ctx.true_sum_rate(&beams), epsilon = 1e-9);
        }
    }

    #[test]
    fn taylor_exact_at_expansion_point() {
        let r = taylor_bound(1.3, 2.1, 1.3, 2.1).unwrap();
        assert_relative_eq!(r, surrogate_rate(1.3, 2.1), epsilon = 1e-14);
    }

    #[test]
    fn taylor_worked_example() {
        // a0 = b0 = 1, (a, b) = (2, 2): bound = 1 - log2(e), true value
        // log2(1.25); the bound must sit below
        let r = taylor_bound(2.0, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(r, 1.0 - std::f64::consts::LOG2_E, epsilon = 1e-14);
        assert!(r <= surrogate_rate(2.0, 2.0));
    }

    #[test]
    fn taylor_is_global_under_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for _ in 0..1000 {
            let a0 = 10f64.powf(rng.gen_range(-3.0..3.0));
            let b0 = 10f64.powf(rng.gen_range(-3.0..3.0));
            let a = 10f64.powf(rng.gen_range(-3.0..3.0));
            let b = 10f64.powf(rng.gen_range(-3.0..3.0));
            let bound = taylor_bound(a, b, a0, b0).unwrap();
            assert!(
                bound <= surrogate_rate(a, b) + 1e-12,
                "bound {bound} above f {} at a={a} b={b} a0={a0} b0={b0}",
                surrogate_rate(a, b)
            );
        }
    }

    #[test]
    fn taylor_rejects_nonpositive() {
        assert!(taylor_bound(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(taylor_bound(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn active_sdp_structural_audit() {
        // constraint counts: per user a rate pair (linearized + QoS), an
        // interference bound, and a hyperbolic block; one power row overall
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let mut h_rand = |rng: &mut ChaCha8Rng| {
            CVec::from_fn(4, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        };
        let ctx = BeamformingContext {
            h_norm: vec![
                vec![h_rand(&mut rng), h_rand(&mut rng), h_rand(&mut rng)],
                vec![h_rand(&mut rng), h_rand(&mut rng), h_rand(&mut rng)],
            ],
            rho_slot: vec![vec![0.5, 0.3, 0.2], vec![0.5, 0.3, 0.2]],
            order: DecodingOrder::identity(&[3, 3]),
            r_min: 0.1,
            p_max: 1.0,
        };
        let beams = ActiveBeams { w: vec![h_rand(&mut rng), h_rand(&mut rng)] };
        let slacks = init_slacks(&ctx, &beams);
        let (prog, _) = build_active_sdp(&ctx, &slacks).unwrap();
        let total_users = 6;
        assert_eq!(prog.num_inequalities(), total_users * 3 + 1);
        assert_eq!(prog.num_psd_constraints(), total_users);
        assert_eq!(prog.num_psd_vars(), 2);
        assert_eq!(prog.num_equalities(), 0);
    }
}
