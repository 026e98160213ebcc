//! Surface-coefficient optimization by sequential rank-one constraint
//! relaxation.
//!
//! With beams and powers frozen, the per-side coefficient vectors are lifted
//! to PSD matrices `U_p = u_p u_p^H` whose diagonals carry the power splits.
//! The rank-one requirement is replaced by `e^H U_p e >= eps * tr(U_p)`
//! (with `e` the previous iterate's principal eigenvector), and `eps` is
//! driven from 0 towards 1: each solvable iteration advances `eps` by the
//! step size, an unsolvable one keeps the previous iterate and halves the
//! step. At termination `lambda_max/tr >= eps >= 1 - rho_tol` certifies the
//! rank-one residual on both sides.
//!
//! The rate rows are re-linearized at the previous accepted solution each
//! iteration, which preserves the block-coordinate improvement property.

use crate::active::{surrogate_rate, QOS_MARGIN};
use crate::conic::linalg::{max_eigpair, rank_one_extract};
use crate::conic::{ConicProgram, LinExpr, PsdVar, ScalarVar, Sense, SolverOptions};
use crate::rates::{self, DecodingOrder, LinkPowers};
use crate::scenario::{ChannelSet, Side};
use crate::star::{factored_channel, RisKind, RisState, RisVariant, StarCoefficients};
use crate::{C64, CMat, CVec, Error, Result};

/// Per-side element layout of the lifted coefficient blocks.
#[derive(Debug, Clone)]
pub struct SideLayout {
    pub kind: RisKind,
    /// Surface elements participating on each side.
    pub t_indices: Vec<usize>,
    pub r_indices: Vec<usize>,
    /// Energy-splitting couples the diagonals; single-function surfaces pin
    /// them to one.
    pub coupled: bool,
}

impl SideLayout {
    pub fn from_variant(variant: &RisVariant) -> Self {
        SideLayout {
            kind: variant.kind,
            t_indices: variant.t_mask.clone(),
            r_indices: variant.r_mask.clone(),
            coupled: variant.kind == RisKind::StarEs,
        }
    }

    fn indices(&self, side: Side) -> &[usize] {
        match side {
            Side::Transmission => &self.t_indices,
            Side::Reflection => &self.r_indices,
        }
    }
}

/// Relaxation loop state: the accepted per-side blocks and the relaxation
/// parameters.
#[derive(Debug, Clone)]
pub struct RelaxationState {
    pub u_t: CMat,
    pub u_r: CMat,
    pub eps: f64,
    pub delta: f64,
    pub iteration: usize,
}

/// Context for the coefficient stage: factored channels restricted to each
/// side's elements, noise-normalized.
#[derive(Debug, Clone)]
pub struct PassiveContext {
    /// `hbar[c][u][d]`: `diag(g^H) F w_d / sigma` restricted to the side of
    /// cluster `c`.
    pub hbar: Vec<Vec<Vec<CVec>>>,
    pub sides: Vec<Side>,
    pub layout: SideLayout,
    pub rho_slot: Vec<Vec<f64>>,
    pub order: DecodingOrder,
    pub r_min: f64,
}

impl PassiveContext {
    pub fn new(
        channels: &ChannelSet,
        beams: &[CVec],
        layout: SideLayout,
        rho_by_user: &[Vec<f64>],
        order: &DecodingOrder,
        r_min: f64,
        noise_w: f64,
    ) -> Result<Self> {
        if noise_w <= 0.0 {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        let inv_sigma = 1.0 / noise_w.sqrt();
        let mut hbar = Vec::with_capacity(channels.num_clusters());
        for c in 0..channels.num_clusters() {
            let idx = layout.indices(channels.side(c));
            let mut hc = Vec::with_capacity(channels.g[c].len());
            for u in 0..channels.g[c].len() {
                let per_beam: Vec<CVec> = beams
                    .iter()
                    .map(|w| {
                        let full = factored_channel(channels, c, u, w);
                        CVec::from_fn(idx.len(), |i, _| full[idx[i]].scale(inv_sigma))
                    })
                    .collect();
                hc.push(per_beam);
            }
            hbar.push(hc);
        }
        let rho_slot = order
            .per_cluster
            .iter()
            .enumerate()
            .map(|(c, perm)| perm.iter().map(|&u| rho_by_user[c][u]).collect())
            .collect();
        Ok(PassiveContext {
            hbar,
            sides: channels.sides.clone(),
            layout,
            rho_slot,
            order: order.clone(),
            r_min,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.hbar.len()
    }

    pub fn users_in(&self, c: usize) -> usize {
        self.hbar[c].len()
    }

    fn side_dim(&self, side: Side) -> usize {
        self.layout.indices(side).len()
    }

    /// `u_p` restricted to a side's elements, from a full-size state.
    fn side_u(&self, state: &RisState, side: Side) -> CVec {
        let profile = state.profile(side);
        let idx = self.layout.indices(side);
        CVec::from_fn(idx.len(), |i, _| profile[idx[i]].conj())
    }

    /// Beamformed powers `|u^H hbar|^2` for the per-side vectors `u`.
    fn link_powers(&self, u_t: &CVec, u_r: &CVec) -> LinkPowers {
        let p = (0..self.num_clusters())
            .map(|c| {
                let u = match self.sides[c] {
                    Side::Transmission => u_t,
                    Side::Reflection => u_r,
                };
                (0..self.users_in(c))
                    .map(|k| {
                        self.hbar[c][k]
                            .iter()
                            .map(|hb| u.dotc(hb).norm_sqr())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        LinkPowers { p }
    }

    /// True sum rate at per-side coefficient vectors (noise normalized).
    pub fn true_sum_rate(&self, u_t: &CVec, u_r: &CVec) -> f64 {
        let lp = self.link_powers(u_t, u_r);
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

    /// Slot-ordered slack point `(a, b)` at per-side vectors.
    fn slacks_at(&self, u_t: &CVec, u_r: &CVec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let lp = self.link_powers(u_t, u_r);
        let mut a = Vec::with_capacity(self.num_clusters());
        let mut b = Vec::with_capacity(self.num_clusters());
        for c in 0..self.num_clusters() {
            let k_c = self.users_in(c);
            let mut ac = Vec::with_capacity(k_c);
            let mut bc = Vec::with_capacity(k_c);
            for k in 0..k_c {
                let u = self.order.user_at(c, k);
                let own = lp.p[c][u][c];
                let desired = own * self.rho_slot[c][k];
                ac.push(if desired <= 1e-18 { 1e18 } else { 1.0 / desired });
                let tail: f64 = self.rho_slot[c][k + 1..].iter().sum();
                let inter: f64 = (0..self.num_clusters())
                    .filter(|&d| d != c)
                    .map(|d| lp.p[c][u][d])
                    .sum();
                bc.push(own * tail + inter + 1.0);
            }
            a.push(ac);
            b.push(bc);
        }
        (a, b)
    }
}

/// Eigenvalue-to-trace ratio of a PSD block (1 for rank-one matrices).
pub fn eig_ratio(u: &CMat) -> Result<f64> {
    let trace = u.trace().re;
    if trace <= 0.0 {
        return Err(Error::Domain("eigenvalue ratio of a zero-trace block".into()));
    }
    let (lam, _) = max_eigpair(u)?;
    Ok(lam / trace)
}

/// Relaxation parameter update: `min(1, ratio + delta)`.
pub fn update_epsilon(ratio: f64, delta: f64) -> f64 {
    (ratio + delta).min(1.0)
}

struct TrSdpVars {
    u_t: Option<PsdVar>,
    u_r: Option<PsdVar>,
    r: Vec<Vec<ScalarVar>>,
    a: Vec<Vec<ScalarVar>>,
    b: Vec<Vec<ScalarVar>>,
}

/// Builds the relaxed coefficient program at the given expansion point. The
/// relaxed rank-one rows use the previous iterate's principal eigenvectors
/// and the shared relaxation parameter `eps` (omitted при `eps == 0`, where
/// the constraint is vacuous).
fn build_tr_sdp(
    ctx: &PassiveContext,
    a0: &[Vec<f64>],
    b0: &[Vec<f64>],
    eps: f64,
    e_t: Option<&CVec>,
    e_r: Option<&CVec>,
) -> Result<(ConicProgram, TrSdpVars)> {
    let mut prog = ConicProgram::new();
    let dim_t = ctx.side_dim(Side::Transmission);
    let dim_r = ctx.side_dim(Side::Reflection);
    let u_t = (dim_t > 0).then(|| prog.add_psd("Ut", dim_t));
    let u_r = (dim_r > 0).then(|| prog.add_psd("Ur", dim_r));
    let block_of = |side: Side| match side {
        Side::Transmission => u_t,
        Side::Reflection => u_r,
    };

    let mut vars = TrSdpVars { u_t, u_r, r: Vec::new(), a: Vec::new(), b: Vec::new() };
    let mut objective = LinExpr::new();
    let log2e = std::f64::consts::LOG2_E;

    for c in 0..ctx.num_clusters() {
        let side = ctx.sides[c];
        let block = block_of(side)
            .ok_or_else(|| Error::Config(format!("cluster {c} on a side with no elements")))?;
        let k_c = ctx.users_in(c);
        let mut r_row = Vec::with_capacity(k_c);
        let mut a_row = Vec::with_capacity(k_c);
        let mut b_row = Vec::with_capacity(k_c);
        for k in 0..k_c {
            let u = ctx.order.user_at(c, k);
            let rho_k = ctx.rho_slot[c][k];
            let a_v = prog.add_scalar(&format!("A{c}_{k}"));
            let b_v = prog.add_scalar(&format!("B{c}_{k}"));
            let r_v = prog.add_scalar(&format!("R{c}_{k}"));
            objective = objective.plus_scalar(r_v, 1.0);

            if rho_k <= 1e-15 {
                if ctx.r_min > 0.0 {
                    return Err(Error::InfeasiblePower { cluster: c, load: f64::INFINITY });
                }
                prog.add_eq(LinExpr::var(r_v), 0.0);
                r_row.push(r_v);
                a_row.push(a_v);
                b_row.push(b_v);
                continue;
            }

            // |u^H hbar|^2 = tr(U Hbar) with Hbar = hbar hbar^H
            let own = &ctx.hbar[c][u][c];
            let own_herm = own * own.adjoint();

            let (av0, bv0) = (a0[c][k], b0[c][k]);
            let f0 = surrogate_rate(av0, bv0);
            let denom = 1.0 + av0 * bv0;
            let da = log2e / (av0 * denom);
            let db = log2e / (bv0 * denom);
            prog.add_le(
                LinExpr::var(r_v).plus_scalar(a_v, da).plus_scalar(b_v, db),
                f0 + da * av0 + db * bv0,
            );
            prog.add_ge(LinExpr::var(r_v), ctx.r_min + QOS_MARGIN);
            prog.add_hyperbolic(
                LinExpr::trace(block, own_herm.scale(rho_k)),
                LinExpr::var(a_v),
            );

            let tail: f64 = ctx.rho_slot[c][k + 1..].iter().sum();
            let mut expr = LinExpr::var(b_v);
            if tail > 0.0 {
                expr = expr.plus_trace(block, own_herm.scale(-tail));
            }
            for d in 0..ctx.num_clusters() {
                if d != c {
                    let hb = &ctx.hbar[c][u][d];
                    expr = expr.plus_trace(block, -(hb * hb.adjoint()));
                }
            }
            prog.add_ge(expr, 1.0);

            r_row.push(r_v);
            a_row.push(a_v);
            b_row.push(b_v);
        }
        vars.r.push(r_row);
        vars.a.push(a_row);
        vars.b.push(b_row);
    }

    // diagonal structure
    if ctx.layout.coupled {
        // energy splitting: [U_t]_mm + [U_r]_mm = 1 over the shared elements
        let (bt, br) = (u_t.expect("coupled layout has both sides"), u_r.expect("coupled"));
        for m in 0..dim_t {
            let mut e_t_m = CMat::zeros(dim_t, dim_t);
            e_t_m[(m, m)] = C64::new(1.0, 0.0);
            let mut e_r_m = CMat::zeros(dim_r, dim_r);
            e_r_m[(m, m)] = C64::new(1.0, 0.0);
            prog.add_eq(LinExpr::trace(bt, e_t_m).plus_trace(br, e_r_m), 1.0);
        }
    } else {
        // single-function surfaces: unit amplitude on every own element
        for (blk, dim) in [(u_t, dim_t), (u_r, dim_r)] {
            if let Some(b) = blk {
                for m in 0..dim {
                    let mut e_m = CMat::zeros(dim, dim);
                    e_m[(m, m)] = C64::new(1.0, 0.0);
                    prog.add_eq(LinExpr::trace(b, e_m), 1.0);
                }
            }
        }
    }

    // relaxed rank-one rows: e^H U e >= eps * tr(U), vacuous at eps == 0
    if eps > 0.0 {
        for (blk, evec, dim) in [(u_t, e_t, dim_t), (u_r, e_r, dim_r)] {
            if let (Some(b), Some(e)) = (blk, evec) {
                let coef = e * e.adjoint() - CMat::identity(dim, dim).scale(eps);
                prog.add_ge(LinExpr::trace(b, coef), 0.0);
            }
        }
    }

    prog.set_objective(Sense::Maximize, objective);
    Ok((prog, vars))
}

/// Outcome of the relaxation loop.
#[derive(Debug, Clone)]
pub struct RelaxationOutcome {
    pub state: RisState,
    /// `(eps used, objective)` of each accepted solve.
    pub trace: Vec<(f64, f64)>,
    /// Certified rank-one residual per side (`1 - lambda_max/tr`).
    pub rank_residual_t: f64,
    pub rank_residual_r: f64,
    pub converged: bool,
    /// The extracted coefficients did not beat the initial ones, so the
    /// initial state was kept.
    pub kept_initial: bool,
    pub iterations: usize,
    pub min_psd_eig: f64,
}

/// Tuning knobs of the relaxation loop.
#[derive(Debug, Clone, Copy)]
pub struct RelaxationParams {
    /// Initial step size for the relaxation parameter.
    pub step0: f64,
    /// Rank-one certification tolerance (`|1 - eps| <= rho_tol` stops).
    pub rho_tol: f64,
    /// Relative objective convergence tolerance.
    pub obj_tol: f64,
    pub max_iters: usize,
}

impl Default for RelaxationParams {
    fn default() -> Self {
        RelaxationParams { step0: 0.1, rho_tol: 1e-3, obj_tol: 1e-4, max_iters: 100 }
    }
}

/// Runs the sequential relaxation from the given coefficient state and
/// returns the extracted coefficients (or the initial state if no iterate
/// improved on it).
pub fn sequential_relaxation(
    ctx: &PassiveContext,
    init: &RisState,
    params: &RelaxationParams,
    solver: &SolverOptions,
) -> Result<RelaxationOutcome> {
    let u_t0 = ctx.side_u(init, Side::Transmission);
    let u_r0 = ctx.side_u(init, Side::Reflection);
    let mut state = RelaxationState {
        u_t: &u_t0 * u_t0.adjoint(),
        u_r: &u_r0 * u_r0.adjoint(),
        eps: 0.0,
        delta: params.step0,
        iteration: 0,
    };
    let (mut a0, mut b0) = ctx.slacks_at(&u_t0, &u_r0);
    let init_rate = ctx.true_sum_rate(&u_t0, &u_r0);

    let mut trace: Vec<(f64, f64)> = Vec::new();
    let mut min_psd = f64::INFINITY;
    let mut converged = false;
    let dim_t = ctx.side_dim(Side::Transmission);
    let dim_r = ctx.side_dim(Side::Reflection);

    while state.iteration < params.max_iters {
        state.iteration += 1;
        let e_t = principal_or_none(&state.u_t);
        let e_r = principal_or_none(&state.u_r);
        let (prog, vars) =
            build_tr_sdp(ctx, &a0, &b0, state.eps, e_t.as_ref(), e_r.as_ref())?;
        let res = prog.solve(solver);
        let eps_used = state.eps;

        if res.is_optimal() {
            min_psd = min_psd.min(res.residuals.min_psd_eig);
            if let Some(b) = vars.u_t {
                state.u_t = res.blocks[b.index()].clone();
            }
            if let Some(b) = vars.u_r {
                state.u_r = res.blocks[b.index()].clone();
            }
            for c in 0..ctx.num_clusters() {
                for k in 0..ctx.users_in(c) {
                    let a = res.scalars[vars.a[c][k].index()];
                    let b = res.scalars[vars.b[c][k].index()];
                    if a > 0.0 && b > 0.0 {
                        a0[c][k] = a;
                        b0[c][k] = b;
                    }
                }
            }
            state.delta = params.step0;
            let obj = res.objective;
            let obj_converged = trace
                .last()
                .map(|&(_, prev)| (obj - prev).abs() / prev.abs().max(1e-12) < params.obj_tol)
                .unwrap_or(false);
            trace.push((eps_used, obj));
            if (1.0 - eps_used).abs() <= params.rho_tol && obj_converged {
                converged = true;
                break;
            }
        } else {
            // keep the previous iterate and halve the step
            state.delta /= 2.0;
            if state.delta < 1e-8 {
                break;
            }
        }

        let ratio_t = if dim_t > 0 { eig_ratio(&state.u_t).unwrap_or(1.0) } else { 1.0 };
        let ratio_r = if dim_r > 0 { eig_ratio(&state.u_r).unwrap_or(1.0) } else { 1.0 };
        state.eps = update_epsilon(ratio_t.min(ratio_r), state.delta);
    }

    // extract coefficients and keep whichever state truly performs better
    let (u_t_vec, res_t) = rank_one_extract(&state.u_t);
    let (u_r_vec, res_r) = rank_one_extract(&state.u_r);
    let final_rate = ctx.true_sum_rate(&u_t_vec, &u_r_vec);
    let kept_initial = final_rate < init_rate - 1e-12;
    let state_out = if kept_initial {
        init.clone()
    } else {
        extract_state(ctx, &state, &u_t_vec, &u_r_vec, init)?
    };
    Ok(RelaxationOutcome {
        state: state_out,
        trace,
        rank_residual_t: if kept_initial { 0.0 } else { res_t },
        rank_residual_r: if kept_initial { 0.0 } else { res_r },
        converged,
        kept_initial,
        iterations: state.iteration,
        min_psd_eig: if min_psd.is_finite() { min_psd } else { 0.0 },
    })
}

fn principal_or_none(u: &CMat) -> Option<CVec> {
    if u.nrows() == 0 || u.trace().re <= 0.0 {
        return None;
    }
    max_eigpair(u).ok().map(|(_, e)| e)
}

/// Rebuilds a full-size coefficient state from the per-side solutions. The
/// energy-splitting state takes its transmit split from the diagonal of the
/// transmit block and sets the reflect split to the exact complement, which
/// projects the solver's equality residual onto the physical constraint.
/// Phases come from the extracted vectors (`u` entries are conjugated
/// phasors); masked-out elements keep the initial state's phases.
fn extract_state(
    ctx: &PassiveContext,
    state: &RelaxationState,
    u_t_vec: &CVec,
    u_r_vec: &CVec,
    init: &RisState,
) -> Result<RisState> {
    let m = init.num_elements();
    let t_idx = &ctx.layout.t_indices;
    let r_idx = &ctx.layout.r_indices;
    match ctx.layout.kind {
        RisKind::StarEs => {
            let mut beta_t = vec![0.0; m];
            let mut theta_t = vec![0.0; m];
            let mut theta_r = vec![0.0; m];
            for (i, &mi) in t_idx.iter().enumerate() {
                beta_t[mi] = state.u_t[(i, i)].re.clamp(0.0, 1.0);
                theta_t[mi] = (-u_t_vec[i].arg()).rem_euclid(2.0 * std::f64::consts::PI);
            }
            for (i, &mi) in r_idx.iter().enumerate() {
                theta_r[mi] = (-u_r_vec[i].arg()).rem_euclid(2.0 * std::f64::consts::PI);
            }
            let beta_r: Vec<f64> = beta_t.iter().map(|b| 1.0 - b).collect();
            Ok(RisState::Star(StarCoefficients::new(beta_t, beta_r, theta_t, theta_r)?))
        }
        RisKind::ConventionalSplit => {
            let mut beta_t = vec![0.0; m];
            let mut theta_t = vec![0.0; m];
            let mut theta_r = vec![0.0; m];
            if let RisState::Split { coeffs, .. } = init {
                theta_t.copy_from_slice(coeffs.theta(Side::Transmission));
                theta_r.copy_from_slice(coeffs.theta(Side::Reflection));
            }
            for (i, &mi) in t_idx.iter().enumerate() {
                beta_t[mi] = 1.0;
                theta_t[mi] = (-u_t_vec[i].arg()).rem_euclid(2.0 * std::f64::consts::PI);
            }
            for (i, &mi) in r_idx.iter().enumerate() {
                theta_r[mi] = (-u_r_vec[i].arg()).rem_euclid(2.0 * std::f64::consts::PI);
            }
            let beta_r: Vec<f64> = beta_t.iter().map(|b| 1.0 - b).collect();
            let coeffs = StarCoefficients::new(beta_t, beta_r, theta_t, theta_r)?;
            let variant = RisVariant {
                kind: RisKind::ConventionalSplit,
                t_mask: t_idx.clone(),
                r_mask: r_idx.clone(),
            };
            Ok(RisState::Split { coeffs, variant })
        }
        RisKind::ConventionalDouble => {
            let theta_of = |vec: &CVec, idx: &[usize]| {
                let mut th = vec![0.0; m];
                for (i, &mi) in idx.iter().enumerate() {
                    th[mi] = (-vec[i].arg()).rem_euclid(2.0 * std::f64::consts::PI);
                }
                th
            };
            let t = StarCoefficients::new(
                vec![1.0; m],
                vec![0.0; m],
                theta_of(u_t_vec, t_idx),
                vec![0.0; m],
            )?;
            let r = StarCoefficients::new(
                vec![0.0; m],
                vec![1.0; m],
                vec![0.0; m],
                theta_of(u_r_vec, r_idx),
            )?;
            Ok(RisState::Double { t, r })
        }
    }
}
