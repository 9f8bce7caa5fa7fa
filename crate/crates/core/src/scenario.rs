//! Network geometry, large-scale channel gains and user-centric clusters.
//!
//! Gains are stored in linear scale and normalized by the receiver noise
//! power expressed in dBm, so `gains[(l, k)] * P` is an SNR when `P` is in
//! milliwatts. Power budgets are therefore kept in milliwatts as well.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::real_psd_sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UePlacement {
    #[default]
    Uniform,
}

/// Deployment and propagation parameters. Defaults describe a 1 km² urban
/// microcell with a 4×4 AP grid at 3.7 GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub area_side_m: f64,
    /// AP grid as `[rows, cols]`; `L = rows * cols`.
    pub ap_grid: [usize; 2],
    pub antennas_per_ap: usize,
    pub num_ues: usize,
    pub ue_placement: UePlacement,
    pub height_diff_m: f64,
    pub pathloss_slope_db: f64,
    pub pathloss_intercept_db: f64,
    pub shadow_std_db: f64,
    pub shadow_decorr_m: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub cluster_size: usize,
    pub ap_power_dbm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            area_side_m: 1000.0,
            ap_grid: [4, 4],
            antennas_per_ap: 4,
            num_ues: 16,
            ue_placement: UePlacement::Uniform,
            height_diff_m: 10.0,
            pathloss_slope_db: 35.3,
            pathloss_intercept_db: -34.5,
            shadow_std_db: 7.82,
            shadow_decorr_m: 13.0,
            bandwidth_hz: 100e6,
            noise_figure_db: 7.0,
            cluster_size: 4,
            ap_power_dbm: 30.0,
        }
    }
}

impl GeometryConfig {
    pub fn num_aps(&self) -> usize {
        self.ap_grid[0] * self.ap_grid[1]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_side_m", self.area_side_m),
            ("shadow_decorr_m", self.shadow_decorr_m),
            ("bandwidth_hz", self.bandwidth_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("height_diff_m", self.height_diff_m), ("shadow_std_db", self.shadow_std_db)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [
            ("pathloss_slope_db", self.pathloss_slope_db),
            ("pathloss_intercept_db", self.pathloss_intercept_db),
            ("noise_figure_db", self.noise_figure_db),
            ("ap_power_dbm", self.ap_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.ap_grid[0] == 0 || self.ap_grid[1] == 0 {
            return Err(Error::InvalidConfig("AP grid must have at least one AP".into()));
        }
        if self.antennas_per_ap == 0 || self.num_ues == 0 {
            return Err(Error::InvalidConfig("antennas_per_ap and num_ues must be positive".into()));
        }
        if self.cluster_size == 0 || self.cluster_size > self.num_aps() {
            return Err(Error::InvalidConfig(format!(
                "cluster_size must lie in 1..={}, got {}",
                self.num_aps(),
                self.cluster_size
            )));
        }
        Ok(())
    }
}

/// A validated network instance. AP and UE indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub num_aps: usize,
    pub antennas: usize,
    pub num_ues: usize,
    /// Per-AP power budgets in milliwatts.
    pub power_budgets: Vec<f64>,
    pub sinr_targets: Vec<f64>,
    /// `clusters[k]`: serving APs of UE `k`, strongest first.
    pub clusters: Vec<Vec<usize>>,
    /// `gains[(l, k)]`: noise-normalized linear gain between AP `l` and UE `k`.
    pub gains: DMatrix<f64>,
    #[serde(default)]
    pub ap_positions: Vec<[f64; 2]>,
    #[serde(default)]
    pub ue_positions: Vec<[f64; 2]>,
}

impl NetworkScenario {
    pub fn new(
        antennas: usize,
        power_budgets: Vec<f64>,
        sinr_targets: Vec<f64>,
        clusters: Vec<Vec<usize>>,
        gains: DMatrix<f64>,
    ) -> Result<Self> {
        let scn = Self {
            num_aps: gains.nrows(),
            antennas,
            num_ues: gains.ncols(),
            power_budgets,
            sinr_targets,
            clusters,
            gains,
            ap_positions: Vec::new(),
            ue_positions: Vec::new(),
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, k) = (self.num_aps, self.num_ues);
        if l == 0 || k == 0 || self.antennas == 0 {
            return Err(Error::InvalidConfig("empty network".into()));
        }
        if self.gains.shape() != (l, k) {
            return Err(Error::Dimension(format!("gains are {:?}, expected ({l}, {k})", self.gains.shape())));
        }
        if self.power_budgets.len() != l || self.sinr_targets.len() != k || self.clusters.len() != k {
            return Err(Error::Dimension("budgets/targets/clusters length mismatch".into()));
        }
        if let Some(p) = self.power_budgets.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidConfig(format!("power budget {p} is not positive")));
        }
        if let Some(g) = self.sinr_targets.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidConfig(format!("SINR target {g} is not positive")));
        }
        if let Some(g) = self.gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidConfig(format!("channel gain {g} is not strictly positive")));
        }
        for (ue, set) in self.clusters.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidConfig(format!("UE {ue} has an empty cluster")));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != set.len() || sorted.iter().any(|&ap| ap >= l) {
                return Err(Error::InvalidConfig(format!("UE {ue} has an invalid cluster {set:?}")));
            }
        }
        Ok(())
    }

    /// Copy of the scenario with every UE demanding the same SINR.
    pub fn with_uniform_target(&self, gamma: f64) -> Self {
        let mut scn = self.clone();
        scn.sinr_targets = vec![gamma; self.num_ues];
        scn
    }

    pub fn total_budget(&self) -> f64 {
        self.power_budgets.iter().sum()
    }

    pub fn serves(&self, ap: usize, ue: usize) -> bool {
        self.clusters[ue].contains(&ap)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scn: Self = serde_json::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn dbm_to_milliwatts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Thermal noise power in dBm over `bandwidth_hz` with the given noise figure.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Channel gain in dB relative to the noise floor.
pub fn gain_db(cfg: &GeometryConfig, distance_m: f64, shadowing_db: f64, noise_dbm: f64) -> f64 {
    -cfg.pathloss_slope_db * distance_m.log10() + cfg.pathloss_intercept_db + shadowing_db - noise_dbm
}

/// AP coordinates: cell centres of a `rows × cols` grid spanning the square area.
pub fn ap_grid_positions(cfg: &GeometryConfig) -> Vec<[f64; 2]> {
    let [rows, cols] = cfg.ap_grid;
    let dx = cfg.area_side_m / cols as f64;
    let dy = cfg.area_side_m / rows as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push([(c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy]);
        }
    }
    out
}

fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Shadow fading in dB as an `L × K` matrix: correlated across the UEs seen by
/// one AP with covariance `ρ² 2^(−δ/δ₀)`, independent across APs.
pub fn shadowing_db<R: Rng>(cfg: &GeometryConfig, ue_positions: &[[f64; 2]], num_aps: usize, rng: &mut R) -> DMatrix<f64> {
    let k_count = ue_positions.len();
    let variance = cfg.shadow_std_db * cfg.shadow_std_db;
    let corr = DMatrix::from_fn(k_count, k_count, |i, j| {
        let d = planar_distance(ue_positions[i], ue_positions[j]);
        variance * 2f64.powf(-d / cfg.shadow_decorr_m)
    });
    let corr_sqrt = real_psd_sqrt(&corr);
    let mut out = DMatrix::zeros(num_aps, k_count);
    for l in 0..num_aps {
        let white = DVector::from_iterator(k_count, (0..k_count).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.set_row(l, &(&corr_sqrt * white).transpose());
    }
    out
}

/// Draws one UE drop: positions, correlated shadowing, gains and clusters.
/// SINR targets are initialised to 1; use [`NetworkScenario::with_uniform_target`].
pub fn generate_scenario(cfg: &GeometryConfig, seed: u64) -> Result<NetworkScenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l_count = cfg.num_aps();
    let k_count = cfg.num_ues;

    let ap_positions = ap_grid_positions(cfg);
    let ue_positions: Vec<[f64; 2]> = (0..k_count)
        .map(|_| match cfg.ue_placement {
            UePlacement::Uniform => [
                rng.random_range(0.0..cfg.area_side_m),
                rng.random_range(0.0..cfg.area_side_m),
            ],
        })
        .collect();

    let shadow = shadowing_db(cfg, &ue_positions, l_count, &mut rng);
    let noise_dbm = noise_power_dbm(cfg.bandwidth_hz, cfg.noise_figure_db);
    let min_distance = cfg.height_diff_m.max(1.0);
    let mut gains = DMatrix::zeros(l_count, k_count);
    for (l, ap) in ap_positions.iter().enumerate() {
        for (k, ue) in ue_positions.iter().enumerate() {
            let horizontal = planar_distance(*ap, *ue);
            let distance = (horizontal.powi(2) + cfg.height_diff_m.powi(2)).sqrt().max(min_distance);
            gains[(l, k)] = db_to_linear(gain_db(cfg, distance, shadow[(l, k)], noise_dbm));
        }
    }

    let clusters = assign_clusters(&gains, cfg.cluster_size);
    let budget = dbm_to_milliwatts(cfg.ap_power_dbm);
    let mut scn = NetworkScenario::new(
        cfg.antennas_per_ap,
        vec![budget; l_count],
        vec![1.0; k_count],
        clusters,
        gains,
    )?;
    scn.ap_positions = ap_positions;
    scn.ue_positions = ue_positions;
    Ok(scn)
}

/// The `q` strongest APs for every UE, strongest first; equal gains go to the
/// lower AP index. `q` is clamped to the number of APs.
pub fn assign_clusters(gains: &DMatrix<f64>, q: usize) -> Vec<Vec<usize>> {
    let q = q.min(gains.nrows());
    (0..gains.ncols())
        .map(|k| {
            let mut order: Vec<usize> = (0..gains.nrows()).collect();
            order.sort_by(|&a, &b| gains[(b, k)].total_cmp(&gains[(a, k)]).then(a.cmp(&b)));
            order.truncate(q);
            order
        })
        .collect()
}
