//! Energy-splitting surface coefficients and combined channels.
//!
//! Every element splits its incident signal into a transmitted and a
//! reflected part with amplitudes `sqrt(beta_t)`, `sqrt(beta_r)` and phases
//! `theta_t`, `theta_r`; energy conservation couples the amplitudes through
//! `beta_t + beta_r = 1`. Amplitudes are stored as the power split `beta`
//! (not its square root), matching the diagonal entries of the lifted
//! matrices used in the coefficient optimization.
//!
//! Convention: the coefficient vector `u_p` stores conjugated phasors, so
//! `Theta_p = diag(u_p^H)` carries `sqrt(beta) e^{j theta}` on its diagonal.
//! Any consistent choice yields identical beamformed powers `|h w|^2`; this
//! one makes `h w = u_p^H (diag(g^H) F w)` hold verbatim, which the
//! coefficient optimization relies on.

use crate::scenario::{ChannelSet, Side};
use crate::{C64, CMat, CVec, Error, Result};
use serde::{Deserialize, Serialize};

const TAU: f64 = 2.0 * std::f64::consts::PI;

fn normalize_phase(theta: f64) -> f64 {
    theta.rem_euclid(TAU)
}

/// Per-element amplitudes (as power splits) and phases of both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarCoefficients {
    beta_t: Vec<f64>,
    beta_r: Vec<f64>,
    theta_t: Vec<f64>,
    theta_r: Vec<f64>,
}

impl StarCoefficients {
    /// Validates `beta in [0,1]`, `beta_t + beta_r = 1` per element (to
    /// 1e-9), and normalizes phases into `[0, 2pi)`.
    pub fn new(
        beta_t: Vec<f64>,
        beta_r: Vec<f64>,
        theta_t: Vec<f64>,
        theta_r: Vec<f64>,
    ) -> Result<Self> {
        let m = beta_t.len();
        if beta_r.len() != m || theta_t.len() != m || theta_r.len() != m {
            return Err(Error::Dimension("coefficient vectors must share a length".into()));
        }
        for i in 0..m {
            let (bt, br) = (beta_t[i], beta_r[i]);
            if !(-1e-9..=1.0 + 1e-9).contains(&bt) || !(-1e-9..=1.0 + 1e-9).contains(&br) {
                return Err(Error::Constraint(format!(
                    "element {i}: beta ({bt}, {br}) outside [0,1]"
                )));
            }
            if (bt + br - 1.0).abs() > 1e-9 {
                return Err(Error::Constraint(format!(
                    "element {i}: beta_t + beta_r = {} != 1",
                    bt + br
                )));
            }
        }
        Ok(StarCoefficients {
            beta_t: beta_t.iter().map(|b| b.clamp(0.0, 1.0)).collect(),
            beta_r: beta_r.iter().map(|b| b.clamp(0.0, 1.0)).collect(),
            theta_t: theta_t.into_iter().map(normalize_phase).collect(),
            theta_r: theta_r.into_iter().map(normalize_phase).collect(),
        })
    }

    /// Even power split with zero phases.
    pub fn even_split(m: usize) -> Self {
        StarCoefficients {
            beta_t: vec![0.5; m],
            beta_r: vec![0.5; m],
            theta_t: vec![0.0; m],
            theta_r: vec![0.0; m],
        }
    }

    /// Even power split with phases drawn uniformly from `[0, 2pi)`.
    pub fn even_split_random_phases(m: usize, rng: &mut impl rand::Rng) -> Self {
        StarCoefficients {
            beta_t: vec![0.5; m],
            beta_r: vec![0.5; m],
            theta_t: (0..m).map(|_| rng.gen::<f64>() * TAU).collect(),
            theta_r: (0..m).map(|_| rng.gen::<f64>() * TAU).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.beta_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_t.is_empty()
    }

    pub fn beta(&self, side: Side) -> &[f64] {
        match side {
            Side::Transmission => &self.beta_t,
            Side::Reflection => &self.beta_r,
        }
    }

    pub fn theta(&self, side: Side) -> &[f64] {
        match side {
            Side::Transmission => &self.theta_t,
            Side::Reflection => &self.theta_r,
        }
    }

    /// Diagonal entries `sqrt(beta) e^{j theta}` of the requested side.
    pub fn profile(&self, side: Side) -> CVec {
        let beta = self.beta(side);
        let theta = self.theta(side);
        CVec::from_fn(beta.len(), |i, _| {
            C64::from_polar(beta[i].sqrt(), theta[i])
        })
    }

    /// The coefficient vector `u_p` (conjugated phasors, see module docs).
    pub fn u_vector(&self, side: Side) -> CVec {
        self.profile(side).map(|z| z.conj())
    }

    /// Worst-case deviation of `beta_t + beta_r` from 1.
    pub fn energy_defect(&self) -> f64 {
        self.beta_t
            .iter()
            .zip(&self.beta_r)
            .map(|(t, r)| (t + r - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Splits one incident sample into its transmitted and reflected parts.
/// Energy conservation `|t|^2 + |r|^2 = |s|^2` holds whenever
/// `beta_t + beta_r = 1`.
pub fn split_signal(
    s: C64,
    beta_t: f64,
    theta_t: f64,
    beta_r: f64,
    theta_r: f64,
) -> Result<(C64, C64)> {
    for b in [beta_t, beta_r] {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Constraint(format!("beta {b} outside [0,1]")));
        }
    }
    let t = C64::from_polar(beta_t.sqrt(), theta_t) * s;
    let r = C64::from_polar(beta_r.sqrt(), theta_r) * s;
    Ok((t, r))
}

/// Diagonal coefficient matrix `Theta_p` of the requested side.
pub fn theta_matrix(coeffs: &StarCoefficients, side: Side) -> CMat {
    CMat::from_diagonal(&coeffs.profile(side))
}

/// Combined channel row `h = g^H Theta_side F` of one user, returned as a
/// plain (unconjugated) coefficient vector: `h w = h.dot(w)`.
pub fn combined_channel(
    channels: &ChannelSet,
    coeffs: &StarCoefficients,
    cluster: usize,
    user: usize,
) -> Result<CVec> {
    let side = channels.side(cluster);
    combined_channel_with_profile(channels, &coeffs.profile(side), cluster, user)
}

/// Same as [`combined_channel`] but with an explicit per-side profile, used
/// by the conventional-surface variants.
pub fn combined_channel_with_profile(
    channels: &ChannelSet,
    profile: &CVec,
    cluster: usize,
    user: usize,
) -> Result<CVec> {
    let g = &channels.g[cluster][user];
    let m = channels.num_elements();
    if g.len() != m || profile.len() != m {
        return Err(Error::Dimension(format!(
            "combined channel: g={} profile={} M={}",
            g.len(),
            profile.len(),
            m
        )));
    }
    // h_n = sum_m conj(g_m) phi_m F[m, n]
    let weights = CVec::from_fn(m, |i, _| g[i].conj() * profile[i]);
    Ok(channels.f.transpose() * weights)
}

/// The factorized channel `diag(g^H) F w` that the coefficient optimization
/// works in: `h w = u_p^H (diag(g^H) F w)`.
pub fn factored_channel(channels: &ChannelSet, cluster: usize, user: usize, w: &CVec) -> CVec {
    let g = &channels.g[cluster][user];
    let fw = &channels.f * w;
    CVec::from_fn(channels.num_elements(), |i, _| g[i].conj() * fw[i])
}

/// Which surface architecture a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RisKind {
    /// Energy-splitting surface: all elements serve both sides.
    StarEs,
    /// Two conventional single-function surfaces sharing the element budget
    /// (`M` total: first half transmit-only, second half reflect-only).
    ConventionalSplit,
    /// Two conventional full-size surfaces (`2M` total elements).
    ConventionalDouble,
}

/// Surface architecture plus its per-side element masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RisVariant {
    pub kind: RisKind,
    pub t_mask: Vec<usize>,
    pub r_mask: Vec<usize>,
}

impl RisVariant {
    pub fn star_es(m: usize) -> Self {
        RisVariant {
            kind: RisKind::StarEs,
            t_mask: (0..m).collect(),
            r_mask: (0..m).collect(),
        }
    }

    /// First `ceil(M/2)` elements transmit-only, the rest reflect-only. For
    /// odd `M` the transmit side gets the extra element.
    pub fn conventional_split(m: usize) -> Self {
        let half = m.div_ceil(2);
        RisVariant {
            kind: RisKind::ConventionalSplit,
            t_mask: (0..half).collect(),
            r_mask: (half..m).collect(),
        }
    }

    pub fn conventional_double(m: usize) -> Self {
        RisVariant {
            kind: RisKind::ConventionalDouble,
            t_mask: (0..m).collect(),
            r_mask: (0..m).collect(),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let in_range = |mask: &[usize]| mask.iter().all(|&i| i < m);
        if !in_range(&self.t_mask) || !in_range(&self.r_mask) {
            return Err(Error::Config("variant mask index out of range".into()));
        }
        match self.kind {
            RisKind::ConventionalSplit => {
                let mut all: Vec<usize> =
                    self.t_mask.iter().chain(&self.r_mask).copied().collect();
                all.sort_unstable();
                let expected: Vec<usize> = (0..m).collect();
                if all != expected {
                    return Err(Error::Config("split masks must partition the elements".into()));
                }
            }
            RisKind::StarEs | RisKind::ConventionalDouble => {
                if self.t_mask.len() != m || self.r_mask.len() != m {
                    return Err(Error::Config("masks must cover all elements".into()));
                }
            }
        }
        Ok(())
    }
}

/// Effective coefficient state of a surface architecture. The conventional
/// double variant carries two independent coefficient sets, one per
/// single-function surface; each set satisfies the energy constraint on its
/// own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RisState {
    Star(StarCoefficients),
    Split { coeffs: StarCoefficients, variant: RisVariant },
    Double { t: StarCoefficients, r: StarCoefficients },
}

impl RisState {
    /// Effective per-side diagonal profile seen by users on `side`.
    pub fn profile(&self, side: Side) -> CVec {
        match self {
            RisState::Star(c) => c.profile(side),
            RisState::Split { coeffs, .. } => coeffs.profile(side),
            RisState::Double { t, r } => match side {
                Side::Transmission => t.profile(side),
                Side::Reflection => r.profile(side),
            },
        }
    }

    pub fn num_elements(&self) -> usize {
        match self {
            RisState::Star(c) => c.len(),
            RisState::Split { coeffs, .. } => coeffs.len(),
            RisState::Double { t, .. } => t.len(),
        }
    }

    /// The coefficient set a report should show for the energy-splitting
    /// model; `None` for the double variant which has no single coupled set.
    pub fn star_coefficients(&self) -> Option<&StarCoefficients> {
        match self {
            RisState::Star(c) => Some(c),
            RisState::Split { coeffs, .. } => Some(coeffs),
            RisState::Double { .. } => None,
        }
    }

    pub fn energy_defect(&self) -> f64 {
        match self {
            RisState::Star(c) => c.energy_defect(),
            RisState::Split { coeffs, .. } => coeffs.energy_defect(),
            RisState::Double { t, r } => t.energy_defect().max(r.energy_defect()),
        }
    }
}

/// Projects free coefficients onto a variant's constraint set.
///
/// * `star_es`: identity.
/// * `conventional_split`: elements in the transmit mask get `beta_t = 1`,
///   the rest `beta_r = 1`; phases are kept.
/// * `conventional_double`: two independent full-amplitude coefficient sets,
///   one per surface, seeded with the input phases.
pub fn apply_variant_constraints(coeffs: &StarCoefficients, variant: &RisVariant) -> Result<RisState> {
    let m = coeffs.len();
    variant.validate(m)?;
    match variant.kind {
        RisKind::StarEs => Ok(RisState::Star(coeffs.clone())),
        RisKind::ConventionalSplit => {
            let mut beta_t = vec![0.0; m];
            for &i in &variant.t_mask {
                beta_t[i] = 1.0;
            }
            let beta_r: Vec<f64> = beta_t.iter().map(|b| 1.0 - b).collect();
            let projected = StarCoefficients::new(
                beta_t,
                beta_r,
                coeffs.theta(Side::Transmission).to_vec(),
                coeffs.theta(Side::Reflection).to_vec(),
            )?;
            Ok(RisState::Split { coeffs: projected, variant: variant.clone() })
        }
        RisKind::ConventionalDouble => {
            let t = StarCoefficients::new(
                vec![1.0; m],
                vec![0.0; m],
                coeffs.theta(Side::Transmission).to_vec(),
                vec![0.0; m],
            )?;
            let r = StarCoefficients::new(
                vec![0.0; m],
                vec![1.0; m],
                vec![0.0; m],
                coeffs.theta(Side::Reflection).to_vec(),
            )?;
            Ok(RisState::Double { t, r })
        }
    }
}
