//! Monte-Carlo feasibility sweeps over UE drops.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{build_simlike_statistics, sample_ensemble, CsiEnsemble};
use crate::duality::{
    subgradient_ascent, sum_power_feasibility, write_trajectory, AscentOptions, FeasibilityProblem,
    FeasibilityStatus, TrajectoryPoint,
};
use crate::error::{Error, Result};
use crate::precoders::PrecoderKind;
use crate::scenario::{generate_scenario, GeometryConfig, NetworkScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    PerAp,
    SumPower,
}

impl PowerMode {
    pub fn name(&self) -> &'static str {
        match self {
            PowerMode::PerAp => "per_ap",
            PowerMode::SumPower => "sum_power",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "per_ap" => Ok(PowerMode::PerAp),
            "sum_power" => Ok(PowerMode::SumPower),
            other => Err(Error::InvalidConfig(format!("unknown power mode '{other}'"))),
        }
    }
}

fn default_precoders() -> Vec<PrecoderKind> {
    vec![PrecoderKind::Centralized, PrecoderKind::Local]
}

fn default_modes() -> Vec<PowerMode> {
    vec![PowerMode::PerAp, PowerMode::SumPower]
}

fn default_drops() -> usize {
    100
}

fn default_samples() -> usize {
    crate::channel::DEFAULT_SAMPLES
}

/// A full sweep description, normally read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub geometry: GeometryConfig,
    /// SINR targets; mutually exclusive with `rates`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Rate targets in bit/s/Hz.
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default = "default_precoders")]
    pub precoders: Vec<PrecoderKind>,
    #[serde(default = "default_modes")]
    pub modes: Vec<PowerMode>,
    #[serde(default = "default_drops")]
    pub drops: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: AscentOptions,
    #[serde(default)]
    pub log_trajectories: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            gammas: Vec::new(),
            rates: vec![1.0, 2.0, 3.0, 4.0],
            precoders: default_precoders(),
            modes: default_modes(),
            drops: default_drops(),
            samples: default_samples(),
            seed: 0,
            solver: AscentOptions::default(),
            log_trajectories: false,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !self.gammas.is_empty() && !self.rates.is_empty() {
            return Err(Error::InvalidConfig("give either gammas or rates, not both".into()));
        }
        let targets = self.targets()?;
        if targets.is_empty() || self.precoders.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidConfig("targets, precoders and modes must be nonempty".into()));
        }
        if targets.iter().any(|(g, _)| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidConfig("SINR targets must be positive".into()));
        }
        if self.drops == 0 || self.samples == 0 {
            return Err(Error::InvalidConfig("drops and samples must be at least 1".into()));
        }
        if self.solver.alphas.is_empty() || self.solver.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        Ok(())
    }

    /// `(γ, rate)` pairs in sweep order.
    pub fn targets(&self) -> Result<Vec<(f64, f64)>> {
        if self.rates.is_empty() {
            Ok(self.gammas.iter().map(|&g| (g, (1.0 + g).log2())).collect())
        } else {
            self.rates.iter().map(|&r| Ok((rate_to_gamma(r)?, r))).collect()
        }
    }
}

/// `γ = 2^R − 1`.
pub fn rate_to_gamma(rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::InvalidConfig(format!("rate must be nonnegative, got {rate}")));
    }
    Ok(2f64.powf(rate) - 1.0)
}

/// Independent per-drop seed derived from the master seed, the drop index and a purpose tag.
pub fn child_seed(master: u64, drop: usize, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((drop as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub drop: usize,
    pub seed: u64,
    pub gamma: f64,
    pub precoder: PrecoderKind,
    pub mode: PowerMode,
    pub status: FeasibilityStatus,
    pub iterations: usize,
    pub restarts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DropRecord {
    pub fn excluded(&self) -> bool {
        self.status == FeasibilityStatus::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub gamma: f64,
    pub rate: f64,
    pub precoder: PrecoderKind,
    pub mode: PowerMode,
    pub feasible: usize,
    pub drops: usize,
    pub excluded: usize,
    /// `feasible / (drops − excluded)`, zero when every drop was excluded.
    pub rate_feasible: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellSummary>,
    pub records: Vec<DropRecord>,
    pub timing: Timing,
    /// Trajectories keyed by a file stem, only kept when requested.
    #[serde(skip)]
    pub trajectories: Vec<(String, Vec<TrajectoryPoint>)>,
}

/// Scenario and ensemble of one drop, shared by every cell.
pub fn drop_instance(spec: &ExperimentSpec, drop: usize) -> Result<(NetworkScenario, CsiEnsemble)> {
    let scn = generate_scenario(&spec.geometry, child_seed(spec.seed, drop, "scenario"))?;
    let stats = build_simlike_statistics(&scn);
    let ens = sample_ensemble(&stats, spec.samples, child_seed(spec.seed, drop, "ensemble"))?;
    Ok((scn, ens))
}

type DropOutput = (Vec<DropRecord>, Vec<(String, Vec<TrajectoryPoint>)>);

fn run_drop(spec: &ExperimentSpec, targets: &[(f64, f64)], drop: usize) -> Result<DropOutput> {
    let (scn, ens) = drop_instance(spec, drop)?;
    let seed = child_seed(spec.seed, drop, "scenario");
    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for (gi, &(gamma, _)) in targets.iter().enumerate() {
        for &kind in &spec.precoders {
            let problem = FeasibilityProblem::new(
                &ens,
                scn.clusters.clone(),
                vec![gamma; scn.num_ues],
                scn.power_budgets.clone(),
                kind,
            )?;
            for &mode in &spec.modes {
                let outcome = match mode {
                    PowerMode::PerAp => subgradient_ascent(&problem, &spec.solver),
                    PowerMode::SumPower => sum_power_feasibility(&problem, &spec.solver.inner),
                };
                let mut record = DropRecord {
                    drop,
                    seed,
                    gamma,
                    precoder: kind,
                    mode,
                    status: FeasibilityStatus::Inconclusive,
                    iterations: 0,
                    restarts: 0,
                    error: None,
                };
                match outcome {
                    Ok(v) => {
                        record.status = v.status;
                        record.iterations = v.iterations;
                        record.restarts = v.restarts_used;
                        if spec.log_trajectories {
                            let stem = format!("drop{drop:04}_g{gi:02}_{}_{}", kind.name(), mode.name());
                            trajectories.push((stem, v.trajectory));
                        }
                    }
                    Err(e) => {
                        log::warn!("drop {drop}, gamma {gamma}, {}: {e}", kind.name());
                        record.error = Some(e.to_string());
                    }
                }
                records.push(record);
            }
        }
    }
    Ok((records, trajectories))
}

/// Evaluates every `(γ, precoder, mode)` cell on every drop. Drops run on the
/// rayon pool and are merged in drop order, so results do not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let targets = spec.targets()?;
    let start = Instant::now();
    let per_drop: Vec<DropOutput> =
        (0..spec.drops).into_par_iter().map(|d| run_drop(spec, &targets, d)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for (r, t) in per_drop {
        records.extend(r);
        trajectories.extend(t);
    }
    let mut cells = Vec::new();
    for &(gamma, rate) in &targets {
        for &precoder in &spec.precoders {
            for &mode in &spec.modes {
                let cell: Vec<&DropRecord> = records
                    .iter()
                    .filter(|r| r.gamma == gamma && r.precoder == precoder && r.mode == mode)
                    .collect();
                let feasible = cell.iter().filter(|r| r.status == FeasibilityStatus::Feasible).count();
                let excluded = cell.iter().filter(|r| r.excluded()).count();
                let kept = cell.len() - excluded;
                cells.push(CellSummary {
                    gamma,
                    rate,
                    precoder,
                    mode,
                    feasible,
                    drops: cell.len(),
                    excluded,
                    rate_feasible: if kept == 0 { 0.0 } else { feasible as f64 / kept as f64 },
                    mean_iterations: cell.iter().map(|r| r.iterations as f64).sum::<f64>() / cell.len().max(1) as f64,
                });
            }
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        cells,
        records,
        timing: Timing { wall_time_s: start.elapsed().as_secs_f64() },
        trajectories,
    })
}

pub const CSV_HEADER: [&str; 8] = ["gamma", "rate", "precoder", "mode", "feasible", "drops", "excluded", "rate_feasible"];

/// Writes the summary table as CSV.
pub fn write_csv(cells: &[CellSummary], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for c in cells {
        w.write_record([
            c.gamma.to_string(),
            c.rate.to_string(),
            c.precoder.name().to_string(),
            c.mode.name().to_string(),
            c.feasible.to_string(),
            c.drops.to_string(),
            c.excluded.to_string(),
            c.rate_feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `results.json` and, when present, one JSON-lines
/// trajectory file per cell and drop under `trajectories/`. Returns the CSV path.
pub fn emit_results(res: &ExperimentResult, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    write_csv(&res.cells, &csv_path)?;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(res)?)?;
    if !res.trajectories.is_empty() {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir)?;
        for (stem, points) in &res.trajectories {
            write_trajectory(points, fs::File::create(tdir.join(format!("{stem}.jsonl")))?)?;
        }
    }
    Ok(csv_path)
}
