//! Simulation geometry, path loss, and Rician channel generation.
//!
//! All randomness is derived from a single master seed. Each link draws from
//! its own ChaCha sub-stream keyed by a stable tag, so enlarging the system
//! (more users, more elements) never perturbs the draws of unrelated links.

use crate::{C64, CMat, CVec, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Which half-space of the surface a cluster occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Transmission space (behind the surface, `y >= ris_y` in the standard
    /// geometry; the boundary plane itself counts as transmission side).
    Transmission,
    /// Reflection space (`y < ris_y`).
    Reflection,
}

/// Scenario description in file units: dB/dBm for powers, meters for
/// geometry. Converted once to linear SI units by [`ScenarioConfig::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub cluster_centers: Vec<[f64; 3]>,
    pub cluster_radius: f64,
    /// Number of BS antennas.
    pub num_antennas: usize,
    /// Number of surface elements.
    pub num_elements: usize,
    /// Number of clusters; defaults to `cluster_centers.len()`.
    #[serde(default)]
    pub num_clusters: Option<usize>,
    pub users_per_cluster: Vec<usize>,
    pub path_loss_exponent_br: f64,
    pub path_loss_exponent_ru: f64,
    /// Path loss at the 1 m reference distance, dB.
    pub path_loss_ref_db: f64,
    pub rician_k_br_db: f64,
    pub rician_k_ru_db: f64,
    pub noise_power_dbm: f64,
    pub p_max_dbm: f64,
    /// Per-user QoS floor, bits/s/Hz.
    pub r_min_bits: f64,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// The standard simulation point: three clusters of three users each,
    /// one cluster on the reflection side and two on the transmission side.
    pub fn default_scenario() -> Self {
        ScenarioConfig {
            bs_position: [0.0, 0.0, 20.0],
            ris_position: [0.0, 30.0, 20.0],
            cluster_centers: vec![[0.0, 25.0, 0.0], [0.0, 35.0, 0.0], [5.0, 30.0, 0.0]],
            cluster_radius: 5.0,
            num_antennas: 4,
            num_elements: 10,
            num_clusters: None,
            users_per_cluster: vec![3, 3, 3],
            path_loss_exponent_br: 2.2,
            path_loss_exponent_ru: 2.2,
            path_loss_ref_db: -30.0,
            rician_k_br_db: 3.0,
            rician_k_ru_db: 3.0,
            noise_power_dbm: -90.0,
            p_max_dbm: 35.0,
            r_min_bits: 0.1,
            rng_seed: 1,
        }
    }

    /// Validates the configuration and converts to linear units.
    pub fn build(&self) -> Result<Scenario> {
        let c = self.cluster_centers.len();
        if c == 0 {
            return Err(Error::Config("no clusters".into()));
        }
        if let Some(nc) = self.num_clusters {
            if nc != c {
                return Err(Error::Config(format!(
                    "num_clusters {} != cluster_centers.len() {}",
                    nc, c
                )));
            }
        }
        if self.users_per_cluster.len() != c {
            return Err(Error::Config(format!(
                "users_per_cluster has {} entries for {} clusters",
                self.users_per_cluster.len(),
                c
            )));
        }
        if self.users_per_cluster.iter().any(|&k| k == 0) {
            return Err(Error::Config("every cluster needs at least one user".into()));
        }
        if self.num_antennas == 0 || self.num_elements == 0 {
            return Err(Error::Config("antenna and element counts must be >= 1".into()));
        }
        if self.cluster_radius <= 0.0 {
            return Err(Error::Config("cluster_radius must be positive".into()));
        }
        if self.path_loss_exponent_br <= 0.0 || self.path_loss_exponent_ru <= 0.0 {
            return Err(Error::Config("path loss exponents must be positive".into()));
        }
        if self.r_min_bits < 0.0 {
            return Err(Error::Config("r_min_bits must be nonnegative".into()));
        }
        let sides = self
            .cluster_centers
            .iter()
            .map(|p| side_of(p, &self.ris_position))
            .collect();
        Ok(Scenario {
            config: self.clone(),
            noise_w: crate::dbm_to_watts(self.noise_power_dbm),
            p_max_w: crate::dbm_to_watts(self.p_max_dbm),
            kappa_br: crate::db_to_linear(self.rician_k_br_db),
            kappa_ru: crate::db_to_linear(self.rician_k_ru_db),
            r_min: self.r_min_bits,
            sides,
        })
    }
}

/// Side labeling is a pure function of geometry: the surface plane is
/// `y = ris_y`; the plane itself counts as transmission side, matching the
/// standard layout where one cluster center sits on the plane.
pub fn side_of(position: &[f64; 3], ris_position: &[f64; 3]) -> Side {
    if position[1] >= ris_position[1] {
        Side::Transmission
    } else {
        Side::Reflection
    }
}

/// Validated scenario with powers in watts and ratios in linear scale.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub noise_w: f64,
    pub p_max_w: f64,
    pub kappa_br: f64,
    pub kappa_ru: f64,
    /// QoS floor, bits/s/Hz.
    pub r_min: f64,
    /// Per-cluster side labels.
    pub sides: Vec<Side>,
}

impl Scenario {
    pub fn num_clusters(&self) -> usize {
        self.config.cluster_centers.len()
    }

    pub fn num_users(&self) -> usize {
        self.config.users_per_cluster.iter().sum()
    }

    pub fn users_in(&self, cluster: usize) -> usize {
        self.config.users_per_cluster[cluster]
    }
}

/// Channels of one Monte-Carlo trial.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS -> surface channel matrix, `M x N_T`.
    pub f: CMat,
    /// Surface -> user vectors, `[cluster][user]`, each of length `M`.
    pub g: Vec<Vec<CVec>>,
    /// Drawn user positions, `[cluster][user]`.
    pub user_positions: Vec<Vec<[f64; 3]>>,
    /// Per-cluster side labels (every user inherits its cluster's label).
    pub sides: Vec<Side>,
    /// How many user positions had to be re-drawn (degenerate geometry).
    pub position_resamples: u32,
}

impl ChannelSet {
    pub fn num_elements(&self) -> usize {
        self.f.nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.f.ncols()
    }

    pub fn num_clusters(&self) -> usize {
        self.g.len()
    }

    pub fn side(&self, cluster: usize) -> Side {
        self.sides[cluster]
    }
}

/// Distance-dependent power gain `10^(eps0/10) * d^(-exponent)` with a 1 m
/// reference distance, linear scale.
pub fn path_loss(d: f64, exponent: f64, eps0_db: f64) -> Result<f64> {
    if d <= 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("path loss needs d > 0, got {d}")));
    }
    Ok(crate::db_to_linear(eps0_db) * d.powf(-exponent))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform linear array steering vector with half-wavelength spacing; the
/// array axis is the global x axis and `target`/`origin` fix the departure
/// direction. Entries have unit magnitude.
pub fn steering_vector(len: usize, origin: &[f64; 3], target: &[f64; 3]) -> CVec {
    let d = dist(origin, target);
    let cos_axis = if d > 0.0 { (target[0] - origin[0]) / d } else { 0.0 };
    CVec::from_fn(len, |k, _| {
        let phase = std::f64::consts::PI * k as f64 * cos_axis;
        C64::new(phase.cos(), phase.sin())
    })
}

fn gaussian_c64(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im).scale(std::f64::consts::FRAC_1_SQRT_2)
}

/// Rician-fades a unit-magnitude LoS component and applies the link path
/// loss: `sqrt(pl) * (sqrt(k/(1+k)) los + sqrt(1/(1+k)) nlos)` with i.i.d.
/// unit-variance circularly symmetric Gaussian NLoS entries.
pub fn rician_channel(
    los: &CMat,
    rician_k_db: f64,
    path_loss_linear: f64,
    rng: &mut ChaCha8Rng,
) -> CMat {
    let kappa = crate::db_to_linear(rician_k_db);
    let w_los = (kappa / (1.0 + kappa)).sqrt();
    let w_nlos = (1.0 / (1.0 + kappa)).sqrt();
    let amp = path_loss_linear.sqrt();
    CMat::from_fn(los.nrows(), los.ncols(), |i, j| {
        (los[(i, j)].scale(w_los) + gaussian_c64(rng).scale(w_nlos)).scale(amp)
    })
}

// Sub-stream tags. Per-user tags are keyed by (cluster, in-cluster index)
// with fixed spacing, so adding users to one cluster never perturbs the
// draws of any other link.
const STREAM_F: u64 = 0;
const STREAM_USER_BASE: u64 = 16;
const STREAMS_PER_USER: u64 = 4;
const MAX_USERS_PER_CLUSTER: u64 = 64;

fn substream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Generates the full channel set for one trial, deterministically from the
/// scenario's seed.
pub fn build_channel_set(scn: &Scenario) -> Result<ChannelSet> {
    let cfg = &scn.config;
    let m = cfg.num_elements;
    let n_t = cfg.num_antennas;
    let seed = cfg.rng_seed;

    // BS -> surface link
    let d_br = dist(&cfg.bs_position, &cfg.ris_position);
    let pl_br = path_loss(d_br, cfg.path_loss_exponent_br, cfg.path_loss_ref_db)?;
    let a_ris = steering_vector(m, &cfg.ris_position, &cfg.bs_position);
    let a_bs = steering_vector(n_t, &cfg.bs_position, &cfg.ris_position);
    let f_los = &a_ris * a_bs.adjoint();
    let mut rng_f = substream(seed, STREAM_F);
    let f = rician_channel(&f_los, cfg.rician_k_br_db, pl_br, &mut rng_f);

    if cfg.users_per_cluster.iter().any(|&k| k as u64 > MAX_USERS_PER_CLUSTER) {
        return Err(Error::Config(format!(
            "at most {MAX_USERS_PER_CLUSTER} users per cluster supported"
        )));
    }
    let mut g = Vec::with_capacity(scn.num_clusters());
    let mut positions = Vec::with_capacity(scn.num_clusters());
    let mut resamples = 0u32;
    for c in 0..scn.num_clusters() {
        let center = cfg.cluster_centers[c];
        let mut gc = Vec::with_capacity(cfg.users_per_cluster[c]);
        let mut pc = Vec::with_capacity(cfg.users_per_cluster[c]);
        for k in 0..cfg.users_per_cluster[c] {
            let tag = STREAM_USER_BASE
                + (c as u64 * MAX_USERS_PER_CLUSTER + k as u64) * STREAMS_PER_USER;
            let mut rng_pos = substream(seed, tag);
            let mut rng_ch = substream(seed, tag + 1);
            // uniform draw over the disc at z = 0
            let mut pos;
            let mut d_ru;
            let mut attempts = 0;
            loop {
                let r = cfg.cluster_radius * rng_pos.gen::<f64>().sqrt();
                let phi = 2.0 * std::f64::consts::PI * rng_pos.gen::<f64>();
                pos = [center[0] + r * phi.cos(), center[1] + r * phi.sin(), 0.0];
                d_ru = dist(&pos, &cfg.ris_position);
                if d_ru > 1e-9 {
                    break;
                }
                resamples += 1;
                attempts += 1;
                if attempts > 100 {
                    return Err(Error::Config(
                        "user co-located with the surface after 100 redraws".into(),
                    ));
                }
            }
            let pl_ru = path_loss(d_ru, cfg.path_loss_exponent_ru, cfg.path_loss_ref_db)?;
            let g_los = steering_vector(m, &cfg.ris_position, &pos);
            let g_los_m = CMat::from_fn(m, 1, |i, _| g_los[i]);
            let gv = rician_channel(&g_los_m, cfg.rician_k_ru_db, pl_ru, &mut rng_ch);
            gc.push(gv.column(0).into_owned());
            pc.push(pos);
        }
        g.push(gc);
        positions.push(pc);
    }

    Ok(ChannelSet {
        f,
        g,
        user_positions: positions,
        sides: scn.sides.clone(),
        position_resamples: resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_reference_values() {
        // -30 dB at 1 m regardless of exponent
        assert_relative_eq!(path_loss(1.0, 2.2, -30.0).unwrap(), 1.0e-3, max_relative = 1e-12);
        assert_relative_eq!(path_loss(1.0, 3.7, -30.0).unwrap(), 1.0e-3, max_relative = 1e-12);
        // inverse-square decade
        assert_relative_eq!(path_loss(10.0, 2.0, -30.0).unwrap(), 1.0e-5, max_relative = 1e-12);
        assert!(path_loss(0.0, 2.0, -30.0).is_err());
        assert!(path_loss(-1.0, 2.0, -30.0).is_err());
    }

    #[test]
    fn rician_pure_los_limit() {
        let los = CMat::from_element(4, 3, C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = rician_channel(&los, 90.0, 0.25, &mut rng); // kappa = 1e9
        for z in ch.iter() {
            assert_relative_eq!(z.re, 0.5, epsilon = 1e-3);
            assert!(z.im.abs() < 1e-3);
        }
    }

    #[test]
    fn rician_rayleigh_limit_power() {
        // kappa = 0: mean power per entry converges to the path loss
        let los = CMat::from_element(1, 1, C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pl = 0.3;
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let ch = rician_channel(&los, -300.0, pl, &mut rng);
            acc += ch[(0, 0)].norm_sqr();
        }
        let mean = acc / n as f64;
        assert!((mean - pl).abs() < 0.05 * pl, "mean {mean} vs {pl}");
    }

    #[test]
    fn rician_3db_power_ratio() {
        // deterministic vs random part power ratio ~ 10^0.3
        let los = CMat::from_element(1, 1, C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut mean = C64::new(0.0, 0.0);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let ch = rician_channel(&los, 3.0, 1.0, &mut rng);
            mean += ch[(0, 0)];
            samples.push(ch[(0, 0)]);
        }
        mean /= C64::new(n as f64, 0.0);
        let det_power = mean.norm_sqr();
        let scatter_power: f64 =
            samples.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
        let ratio = det_power / scatter_power;
        let kappa = crate::db_to_linear(3.0);
        assert!((ratio - kappa).abs() < 0.1 * kappa, "ratio {ratio} vs kappa {kappa}");
    }

    #[test]
    fn channel_set_shapes_and_determinism() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.num_elements = 10;
        cfg.num_antennas = 4;
        let scn = cfg.build().unwrap();
        let ch1 = build_channel_set(&scn).unwrap();
        let ch2 = build_channel_set(&scn).unwrap();
        assert_eq!(ch1.f.nrows(), 10);
        assert_eq!(ch1.f.ncols(), 4);
        assert_eq!(ch1.g.iter().map(|c| c.len()).sum::<usize>(), 9);
        for gc in &ch1.g {
            for gv in gc {
                assert_eq!(gv.len(), 10);
            }
        }
        // bit-identical across rebuilds
        assert_eq!(ch1.f, ch2.f);
        for (a, b) in ch1.g.iter().flatten().zip(ch2.g.iter().flatten()) {
            assert_eq!(a, b);
        }
        assert_eq!(ch1.user_positions, ch2.user_positions);
    }

    #[test]
    fn bs_ris_power_scaling_matches_path_loss() {
        // 30 m link at exponent 2.2 and -30 dB reference
        let cfg = ScenarioConfig::default_scenario();
        let scn = cfg.build().unwrap();
        let expected = path_loss(30.0, 2.2, -30.0).unwrap();
        // average over many seeds
        let trials = 200;
        let mut acc = 0.0;
        for seed in 0..trials {
            let mut c = cfg.clone();
            c.rng_seed = seed;
            let ch = build_channel_set(&c.build().unwrap()).unwrap();
            acc += ch.f.iter().map(|z| z.norm_sqr()).sum::<f64>()
                / (ch.f.nrows() * ch.f.ncols()) as f64;
        }
        let mean = acc / trials as f64;
        assert!(
            (mean - expected).abs() < 0.05 * expected,
            "mean {mean:.3e} vs expected {expected:.3e}"
        );
        let _ = scn;
    }

    #[test]
    fn side_labels_from_geometry() {
        let cfg = ScenarioConfig::default_scenario();
        let scn = cfg.build().unwrap();
        assert_eq!(scn.sides[0], Side::Reflection); // y = 25 < 30
        assert_eq!(scn.sides[1], Side::Transmission); // y = 35 > 30
        assert_eq!(scn.sides[2], Side::Transmission); // y = 30, on the plane
        let ch = build_channel_set(&scn).unwrap();
        assert_eq!(ch.sides, scn.sides);
    }

    #[test]
    fn adding_a_user_does_not_perturb_existing_links() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.users_per_cluster = vec![2, 1, 1];
        let ch_small = build_channel_set(&cfg.build().unwrap()).unwrap();
        cfg.users_per_cluster = vec![3, 2, 1];
        let ch_big = build_channel_set(&cfg.build().unwrap()).unwrap();
        assert_eq!(ch_small.f, ch_big.f);
        assert_eq!(ch_small.g[0][0], ch_big.g[0][0]);
        assert_eq!(ch_small.g[0][1], ch_big.g[0][1]);
        // links in later clusters are untouched by the growth of cluster 0
        assert_eq!(ch_small.g[1][0], ch_big.g[1][0]);
        assert_eq!(ch_small.g[2][0], ch_big.g[2][0]);
        assert_eq!(ch_small.user_positions[1][0], ch_big.user_positions[1][0]);
    }
}
