//! Virtual uplink machinery for the per-AP power-constrained downlink.
//!
//! For noise levels `σ = 1 + λ` the optimal uplink powers are the fixed point
//! of `T_σ(p)_k = γ_k p_k / u_k(p, σ)`, where `u_k` is the UL SINR of the MMSE
//! combiner. The downlink precoder is recovered by rescaling the normalized
//! combiners with `q = (D − B)⁻¹(D − Bᵀ)p`. The partial dual is then maximized
//! over `λ ≥ 0` by projected subgradient steps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{mean_and_stderr, CsiEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{c, condition_number_real, solve_checked_real};
use crate::metrics::{
    column_sigma_norms, cross_moments, dl_sinrs, per_ap_column_powers, per_ap_power_samples, ul_sinrs,
    StochasticPrecoder, StochasticVector, UlSinr,
};
use crate::precoders::{mmse_combiners, MmseParams, PrecoderKind};

/// A downlink feasibility instance: one ensemble, clusters, targets and budgets.
#[derive(Debug, Clone)]
pub struct FeasibilityProblem<'a> {
    pub ens: &'a CsiEnsemble,
    pub clusters: Vec<Vec<usize>>,
    pub gammas: Vec<f64>,
    /// Per-AP power budgets `P_l`.
    pub budgets: Vec<f64>,
    pub kind: PrecoderKind,
}

impl<'a> FeasibilityProblem<'a> {
    pub fn new(
        ens: &'a CsiEnsemble,
        clusters: Vec<Vec<usize>>,
        gammas: Vec<f64>,
        budgets: Vec<f64>,
        kind: PrecoderKind,
    ) -> Result<Self> {
        let problem = Self { ens, clusters, gammas, budgets, kind };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.len() != self.ens.num_ues || self.clusters.len() != self.ens.num_ues {
            return Err(Error::Dimension("targets and clusters must have one entry per UE".into()));
        }
        if self.budgets.len() != self.ens.num_aps {
            return Err(Error::Dimension("one power budget per AP is required".into()));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidConfig("SINR targets must be positive".into()));
        }
        if self.budgets.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidConfig("power budgets must be positive".into()));
        }
        Ok(())
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    fn combiners(&self, p: &[f64], sigma: &[f64]) -> Result<StochasticPrecoder> {
        let params = MmseParams::new(p.to_vec(), sigma.to_vec())?;
        mmse_combiners(self.kind, self.ens, &params, &self.clusters)
    }
}

/// Inner-loop start `p_k = γ_k / E‖h_k‖²`. Since `u_k(p, σ) ≤ p_k E‖h_k‖²` for
/// `σ ≥ 1`, this start satisfies `p ≤ T_σ(p)` and the iterates increase
/// monotonically. `None` when some UE has no channel energy at all.
pub fn initial_powers(problem: &FeasibilityProblem) -> Option<Vec<f64>> {
    let ens = problem.ens;
    let energy: Vec<f64> = (0..ens.num_ues)
        .map(|k| ens.samples().iter().map(|s| s.channel.column(k).norm_squared()).sum::<f64>() / ens.len() as f64)
        .collect();
    if energy.iter().any(|e| *e <= 0.0) {
        return None;
    }
    Some(problem.gammas.iter().zip(&energy).map(|(g, e)| g / e).collect())
}

/// Optimal combiners for `(p, σ)` and the UL SINRs `u_k(p, σ)` they achieve.
pub fn optimal_combining(
    p: &[f64],
    sigma: &[f64],
    problem: &FeasibilityProblem,
) -> Result<(StochasticPrecoder, Vec<UlSinr>)> {
    let v = problem.combiners(p, sigma)?;
    let u = ul_sinrs(&v, p, sigma, problem.ens)?;
    Ok((v, u))
}

/// `u_k(p, σ)` together with the maximizing combiner of UE `k`.
pub fn u_k(p: &[f64], sigma: &[f64], problem: &FeasibilityProblem, k: usize) -> Result<(UlSinr, StochasticVector)> {
    let (v, u) = optimal_combining(p, sigma, problem)?;
    Ok((u[k], v.column(k)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Powers(Vec<f64>),
    /// `u_k = 0`: no coherent signal, the target of UE `ue` is unreachable.
    NoSignal { ue: usize },
}

fn map_from(p: &[f64], u: &[UlSinr], gammas: &[f64]) -> SweepOutcome {
    if let Some(ue) = u.iter().position(|s| s.degenerate || s.value <= 0.0) {
        return SweepOutcome::NoSignal { ue };
    }
    SweepOutcome::Powers(p.iter().zip(u).zip(gammas).map(|((pk, uk), g)| g * pk / uk.value).collect())
}

/// One application of `T_σ`.
pub fn fixed_point_map(p: &[f64], sigma: &[f64], problem: &FeasibilityProblem) -> Result<SweepOutcome> {
    let (_, u) = optimal_combining(p, sigma, problem)?;
    Ok(map_from(p, &u, &problem.gammas))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerOptions {
    /// Stop once `‖p' − p‖ / ‖p‖ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Abort when `Σ p` exceeds this value; only meaningful for monotone runs.
    pub power_cap: Option<f64>,
    pub record_history: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000, power_cap: None, record_history: false }
    }
}

#[derive(Debug, Clone)]
pub struct UplinkSolution {
    /// Powers at which `combiners` were formed; `u_k(p, σ) = γ_k` up to `tol`.
    pub p: Vec<f64>,
    pub combiners: StochasticPrecoder,
    pub sinrs: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum UplinkOutcome {
    Converged(Box<UplinkSolution>),
    NoSignal { ue: usize, iterations: usize },
    CapExceeded { p: Vec<f64>, iterations: usize },
    NotConverged { p: Vec<f64>, iterations: usize },
}

/// Uplink powers beyond this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e150;

fn vec_norm(v: &[f64]) -> f64 {
    // Scaled so that diverging iterates do not overflow to inf.
    let m = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

/// Fixed-point iteration `p ← T_σ(p)` from `p_init`.
pub fn solve_uplink_powers(
    sigma: &[f64],
    problem: &FeasibilityProblem,
    opts: &InnerOptions,
    p_init: &[f64],
) -> Result<UplinkOutcome> {
    if p_init.len() != problem.ens.num_ues || p_init.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidConfig("initial uplink powers must be positive, one per UE".into()));
    }
    let mut p = p_init.to_vec();
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        if opts.record_history {
            history.push(p.clone());
        }
        let (v, u) = optimal_combining(&p, sigma, problem)?;
        let next = match map_from(&p, &u, &problem.gammas) {
            SweepOutcome::Powers(next) => next,
            SweepOutcome::NoSignal { ue } => return Ok(UplinkOutcome::NoSignal { ue, iterations: it }),
        };
        if next.iter().any(|x| !(x.is_finite() && *x < DIVERGENCE_LIMIT)) {
            return Ok(UplinkOutcome::NotConverged { p, iterations: it });
        }
        let diff: Vec<f64> = next.iter().zip(&p).map(|(a, b)| a - b).collect();
        if vec_norm(&diff) <= opts.tol * vec_norm(&p) {
            return Ok(UplinkOutcome::Converged(Box::new(UplinkSolution {
                sinrs: u.iter().map(|s| s.value).collect(),
                p,
                combiners: v,
                iterations: it,
                history,
            })));
        }
        if let Some(cap) = opts.power_cap {
            if next.iter().sum::<f64>() > cap {
                return Ok(UplinkOutcome::CapExceeded { p: next, iterations: it });
            }
        }
        p = next;
    }
    Ok(UplinkOutcome::NotConverged { p, iterations: opts.max_iter })
}

/// Rescales every column to `E‖v_k‖²_σ = 1`; zero columns are left untouched.
pub fn normalize_columns(v: &StochasticPrecoder, sigma: &[f64], ens: &CsiEnsemble) -> Result<StochasticPrecoder> {
    let norms = column_sigma_norms(v, sigma, ens)?;
    let factors: Vec<_> = norms.iter().map(|n| if *n > 0.0 { c(1.0 / n.sqrt()) } else { c(1.0) }).collect();
    Ok(v.scale_columns(&factors))
}

/// Coupling matrices of a set of combiners: `B_kj = E|h_kᴴ v_j|²`,
/// `D_kk = (1 + 1/γ_k)|E[h_kᴴ v_k]|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCoupling {
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl PowerCoupling {
    pub fn new(v: &StochasticPrecoder, ens: &CsiEnsemble, gammas: &[f64]) -> Result<Self> {
        let m = cross_moments(v, ens)?;
        let d = DVector::from_iterator(
            gammas.len(),
            gammas.iter().enumerate().map(|(k, g)| (1.0 + 1.0 / g) * m.mean[(k, k)].norm_sqr()),
        );
        Ok(Self { b: m.power, d })
    }

    pub fn d_minus_b(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d) - &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkPowers {
    pub q: Vec<f64>,
    pub condition_number: f64,
}

/// Solves `(D − B) q = (D − Bᵀ) p`. The combiners must be normalized to
/// `E‖v_k‖²_σ = 1` (see [`normalize_columns`]).
pub fn recover_downlink_powers(
    v: &StochasticPrecoder,
    p: &[f64],
    ens: &CsiEnsemble,
    gammas: &[f64],
) -> Result<DownlinkPowers> {
    let coupling = PowerCoupling::new(v, ens, gammas)?;
    let a = coupling.d_minus_b();
    let rhs = (DMatrix::from_diagonal(&coupling.d) - coupling.b.transpose()) * DVector::from_column_slice(p);
    let q = solve_checked_real(&a, &rhs, "downlink power recovery")?;
    Ok(DownlinkPowers { q: q.iter().copied().collect(), condition_number: condition_number_real(&a) })
}

/// `t_k = √q_k v_k`.
pub fn assemble_downlink_precoder(v: &StochasticPrecoder, q: &[f64]) -> StochasticPrecoder {
    let factors: Vec<_> = q.iter().map(|x| c(x.max(0.0).sqrt())).collect();
    v.scale_columns(&factors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    /// `1 + λ`.
    pub sigma: Vec<f64>,
    pub p: Vec<f64>,
    pub dual_value: f64,
}

/// Everything produced by one finite evaluation of the partial dual.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub state: DualState,
    /// `g_l = Σ_k E‖t_{l,k}‖² − P_l`.
    pub subgradient: Vec<f64>,
    pub q: Vec<f64>,
    /// The minimizing downlink precoder.
    pub precoder: StochasticPrecoder,
    pub per_ap_powers: Vec<f64>,
    pub inner_iterations: usize,
    pub recovery_condition: f64,
}

/// Result of evaluating `d̃(λ)`; the non-finite cases are statuses, not numbers.
#[derive(Debug, Clone)]
pub enum DualOutcome {
    Finite(Box<DualEvaluation>),
    /// `d̃ = +∞` because some UE has no coherent signal.
    NoSignal { ue: usize },
    /// The monotone inner iterates passed the power cap.
    CapExceeded { p: Vec<f64> },
    NotConverged { p: Vec<f64> },
}

/// `d̃(λ) = Σ_k E‖t_k‖²_{1+λ} − Σ_l λ_l P_l` at the minimizing precoder, and the subgradient.
pub fn partial_dual_value(
    lambda: &[f64],
    problem: &FeasibilityProblem,
    opts: &InnerOptions,
    p_init: Option<&[f64]>,
) -> Result<DualOutcome> {
    problem.validate()?;
    if lambda.len() != problem.ens.num_aps || lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidConfig("multipliers must be nonnegative, one per AP".into()));
    }
    let ens = problem.ens;
    let sigma: Vec<f64> = lambda.iter().map(|l| 1.0 + l).collect();
    let start = match p_init {
        Some(p) => p.to_vec(),
        None => match initial_powers(problem) {
            Some(p) => p,
            None => {
                let ue = (0..ens.num_ues)
                    .find(|&k| ens.samples().iter().all(|s| s.channel.column(k).norm_squared() == 0.0))
                    .unwrap_or(0);
                return Ok(DualOutcome::NoSignal { ue });
            }
        },
    };
    let sol = match solve_uplink_powers(&sigma, problem, opts, &start)? {
        UplinkOutcome::Converged(sol) => sol,
        UplinkOutcome::NoSignal { ue, .. } => return Ok(DualOutcome::NoSignal { ue }),
        UplinkOutcome::CapExceeded { p, .. } => return Ok(DualOutcome::CapExceeded { p }),
        UplinkOutcome::NotConverged { p, .. } => return Ok(DualOutcome::NotConverged { p }),
    };
    let v = normalize_columns(&sol.combiners, &sigma, ens)?;
    let rec = recover_downlink_powers(&v, &sol.p, ens, &problem.gammas)?;
    let t = assemble_downlink_precoder(&v, &rec.q);

    let blocks = per_ap_column_powers(&t, ens);
    let per_ap: Vec<f64> = blocks.row_iter().map(|r| r.sum()).collect();
    let weighted: f64 = per_ap.iter().zip(&sigma).map(|(p, s)| p * s).sum();
    let penalty: f64 = lambda.iter().zip(&problem.budgets).map(|(l, p)| l * p).sum();
    let subgradient = per_ap.iter().zip(&problem.budgets).map(|(p, b)| p - b).collect();
    Ok(DualOutcome::Finite(Box::new(DualEvaluation {
        state: DualState { lambda: lambda.to_vec(), sigma, p: sol.p, dual_value: weighted - penalty },
        subgradient,
        q: rec.q,
        precoder: t,
        per_ap_powers: per_ap,
        inner_iterations: sol.iterations,
        recovery_condition: rec.condition_number,
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityStatus {
    Feasible,
    InfeasibleSinr,
    InfeasiblePower,
    Inconclusive,
}

/// Last evaluated dual point: what it achieves and how it was reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub per_ap_powers: Vec<f64>,
    /// Standard errors of the per-AP power estimates.
    pub per_ap_power_stderr: Vec<f64>,
    pub sinrs: Vec<f64>,
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Certificate {
    fn from_evaluation(e: &DualEvaluation, ens: &CsiEnsemble) -> Result<Self> {
        let samples = per_ap_power_samples(&e.precoder, ens);
        let stderr = (0..ens.num_aps)
            .map(|l| mean_and_stderr(&samples.iter().map(|s| s[l]).collect::<Vec<_>>()).map(|(_, se)| se))
            .collect::<Result<_>>()?;
        Ok(Self {
            per_ap_powers: e.per_ap_powers.clone(),
            per_ap_power_stderr: stderr,
            sinrs: dl_sinrs(&e.precoder, ens)?,
            lambda: e.state.lambda.clone(),
            p: e.state.p.clone(),
            q: e.q.clone(),
        })
    }

    /// Per-AP powers within `P_l + tol` and SINRs at least `γ_k − tol`.
    pub fn satisfies(&self, budgets: &[f64], gammas: &[f64], tol: f64) -> bool {
        self.per_ap_powers.iter().zip(budgets).all(|(p, b)| *p <= b + tol)
            && self.sinrs.iter().zip(gammas).all(|(s, g)| *s >= g - tol)
    }
}

/// One outer iteration, logged for convergence plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub restart: usize,
    pub iteration: usize,
    pub alpha: f64,
    pub lambda: Vec<f64>,
    pub dual_value: f64,
    pub best_dual: f64,
    pub max_ap_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    pub certificate: Option<Certificate>,
    /// `d̃` at every evaluated dual point, in order.
    pub dual_trajectory: Vec<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Outer iterations over all restarts.
    pub iterations: usize,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentOptions {
    /// Initial step of every run; later entries are restarts.
    pub alphas: Vec<f64>,
    pub max_iter: usize,
    pub stagnation_window: usize,
    /// Relative best-dual improvement below which the window counts as stagnant.
    pub stagnation_tol: f64,
    pub certificate_tol: f64,
    pub inner: InnerOptions,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            alphas: vec![10.0, 17.0, 5.0],
            max_iter: 500,
            stagnation_window: 20,
            stagnation_tol: 1e-6,
            certificate_tol: 1e-6,
            inner: InnerOptions::default(),
        }
    }
}

struct Tracker<'p, 'a> {
    problem: &'p FeasibilityProblem<'a>,
    verdict: FeasibilityVerdict,
}

impl Tracker<'_, '_> {
    fn record(&mut self, restart: usize, iteration: usize, alpha: f64, e: &DualEvaluation, best: f64) {
        self.verdict.dual_trajectory.push(e.state.dual_value);
        self.verdict.trajectory.push(TrajectoryPoint {
            restart,
            iteration,
            alpha,
            lambda: e.state.lambda.clone(),
            dual_value: e.state.dual_value,
            best_dual: best,
            max_ap_power: e.per_ap_powers.iter().cloned().fold(0.0, f64::max),
        });
    }

    fn finish(mut self, status: FeasibilityStatus, last: Option<&DualEvaluation>) -> Result<FeasibilityVerdict> {
        if let Some(e) = last {
            if status == FeasibilityStatus::Feasible && e.recovery_condition > 1e10 {
                log::warn!("feasible exit with ill-conditioned power recovery (cond {:e})", e.recovery_condition);
            }
            self.verdict.certificate = Some(Certificate::from_evaluation(e, self.problem.ens)?);
        }
        self.verdict.status = status;
        Ok(self.verdict)
    }
}

/// Projected subgradient ascent on the partial dual with the feasibility early stops.
///
/// A sum-power pre-test at `λ = 0` runs first with the cap `Σ_l P_l`. Then
/// `λ ← max(λ + α/√i · g/‖g‖, 0)` until `d̃ > Σ_l P_l` (infeasible), `g ≤ 0`
/// (feasible), or stagnation, after which the next step size is tried.
pub fn subgradient_ascent(problem: &FeasibilityProblem, opts: &AscentOptions) -> Result<FeasibilityVerdict> {
    let p_sum = problem.total_budget();
    let zero = vec![0.0; problem.ens.num_aps];
    let mut tracker = Tracker {
        problem,
        verdict: FeasibilityVerdict {
            status: FeasibilityStatus::Inconclusive,
            certificate: None,
            dual_trajectory: Vec::new(),
            trajectory: Vec::new(),
            iterations: 0,
            restarts_used: 0,
        },
    };
    let first = match sum_power_pretest(problem, &opts.inner)? {
        DualOutcome::Finite(e) => e,
        DualOutcome::NoSignal { .. } => return tracker.finish(FeasibilityStatus::InfeasibleSinr, None),
        DualOutcome::CapExceeded { .. } => return tracker.finish(FeasibilityStatus::InfeasiblePower, None),
        DualOutcome::NotConverged { .. } => return tracker.finish(FeasibilityStatus::Inconclusive, None),
    };
    tracker.record(0, 0, 0.0, &first, first.state.dual_value);
    if first.state.dual_value > p_sum {
        return tracker.finish(FeasibilityStatus::InfeasiblePower, Some(&first));
    }
    if first.subgradient.iter().all(|g| *g <= 0.0) {
        return tracker.finish(FeasibilityStatus::Feasible, Some(&first));
    }

    let mut inner = opts.inner.clone();
    inner.power_cap = None;
    let mut last = first.clone();
    for (restart, &alpha) in opts.alphas.iter().enumerate() {
        tracker.verdict.restarts_used = restart + 1;
        let mut current = first.clone();
        let mut best_hist = vec![current.state.dual_value];
        debug_assert!(current.state.lambda == zero);
        for i in 1..=opts.max_iter {
            let g = &current.subgradient;
            let norm = vec_norm(g);
            let step = alpha / (i as f64).sqrt();
            let lambda: Vec<f64> =
                current.state.lambda.iter().zip(g).map(|(l, gl)| (l + step * gl / norm).max(0.0)).collect();
            let next = match partial_dual_value(&lambda, problem, &inner, Some(&current.state.p))? {
                DualOutcome::Finite(e) => e,
                other => {
                    log::debug!("restart {restart}: dual evaluation stopped at iteration {i}: {other:?}");
                    break;
                }
            };
            current = next;
            tracker.verdict.iterations += 1;
            let best = best_hist.last().copied().unwrap_or(f64::NEG_INFINITY).max(current.state.dual_value);
            best_hist.push(best);
            tracker.record(restart, i, alpha, &current, best);
            last = current.clone();

            if current.state.dual_value > p_sum {
                return tracker.finish(FeasibilityStatus::InfeasiblePower, Some(&current));
            }
            if current.subgradient.iter().all(|g| *g <= 0.0) {
                return tracker.finish(FeasibilityStatus::Feasible, Some(&current));
            }
            if i >= opts.stagnation_window {
                let gain = best - best_hist[i - opts.stagnation_window];
                if gain < opts.stagnation_tol * best.abs().max(1.0) {
                    let cert = Certificate::from_evaluation(&current, problem.ens)?;
                    if cert.satisfies(&problem.budgets, &problem.gammas, opts.certificate_tol) {
                        return tracker.finish(FeasibilityStatus::Feasible, Some(&current));
                    }
                    break;
                }
            }
        }
    }
    tracker.finish(FeasibilityStatus::Inconclusive, Some(&last))
}

fn sum_power_pretest(problem: &FeasibilityProblem, inner: &InnerOptions) -> Result<DualOutcome> {
    let mut opts = inner.clone();
    opts.power_cap = Some(problem.total_budget());
    partial_dual_value(&vec![0.0; problem.ens.num_aps], problem, &opts, None)
}

/// Feasibility under the sum-power constraint `Σ_l E‖t_l‖² ≤ Σ_l P_l`, decided by
/// the pre-test alone.
pub fn sum_power_feasibility(problem: &FeasibilityProblem, inner: &InnerOptions) -> Result<FeasibilityVerdict> {
    let p_sum = problem.total_budget();
    let mut verdict = FeasibilityVerdict {
        status: FeasibilityStatus::Inconclusive,
        certificate: None,
        dual_trajectory: Vec::new(),
        trajectory: Vec::new(),
        iterations: 0,
        restarts_used: 0,
    };
    match sum_power_pretest(problem, inner)? {
        DualOutcome::Finite(e) => {
            verdict.dual_trajectory.push(e.state.dual_value);
            verdict.status = if e.state.dual_value <= p_sum {
                FeasibilityStatus::Feasible
            } else {
                FeasibilityStatus::InfeasiblePower
            };
            verdict.certificate = Some(Certificate::from_evaluation(&e, problem.ens)?);
        }
        DualOutcome::NoSignal { .. } => verdict.status = FeasibilityStatus::InfeasibleSinr,
        DualOutcome::CapExceeded { .. } => verdict.status = FeasibilityStatus::InfeasiblePower,
        DualOutcome::NotConverged { .. } => {}
    }
    Ok(verdict)
}

/// Writes one JSON object per line.
pub fn write_trajectory<W: Write>(points: &[TrajectoryPoint], mut out: W) -> Result<()> {
    for p in points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;

    fn scalar_problem(ens: &CsiEnsemble, gamma: f64, budget: f64) -> FeasibilityProblem<'_> {
        FeasibilityProblem::new(ens, vec![vec![0]], vec![gamma], vec![budget], PrecoderKind::Full).unwrap()
    }

    fn unit_ens() -> CsiEnsemble {
        CsiEnsemble::perfect(1, 1, vec![CMatrix::from_element(1, 1, c(1.0))]).unwrap()
    }

    #[test]
    fn scalar_u_is_p_over_sigma() {
        let ens = unit_ens();
        let prob = scalar_problem(&ens, 3.0, 100.0);
        let (u, _) = u_k(&[1.7], &[2.0], &prob, 0).unwrap();
        assert!((u.value - 0.85).abs() < 1e-14);
    }

    #[test]
    fn scalar_map_is_constant() {
        let ens = unit_ens();
        let prob = scalar_problem(&ens, 3.0, 100.0);
        for p in [0.1, 6.0, 40.0] {
            match fixed_point_map(&[p], &[2.0], &prob).unwrap() {
                SweepOutcome::Powers(q) => assert!((q[0] - 6.0).abs() < 1e-12),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn scalar_chain() {
        let ens = unit_ens();
        let prob = scalar_problem(&ens, 3.0, 100.0);
        let sol = match solve_uplink_powers(&[2.0], &prob, &InnerOptions::default(), &[1.0]).unwrap() {
            UplinkOutcome::Converged(s) => s,
            other => panic!("{other:?}"),
        };
        assert!((sol.p[0] - 6.0).abs() < 1e-9);
        assert!(sol.iterations <= 3);
        let v = normalize_columns(&sol.combiners, &[2.0], &ens).unwrap();
        let rec = recover_downlink_powers(&v, &sol.p, &ens, &[3.0]).unwrap();
        assert!((rec.q[0] - 6.0).abs() < 1e-9);
        let t = assemble_downlink_precoder(&v, &rec.q);
        assert!((dl_sinrs(&t, &ens).unwrap()[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_dual_at_zero_is_min_power() {
        let ens = CsiEnsemble::perfect(1, 1, vec![CMatrix::from_element(1, 1, c(2.0))]).unwrap();
        let prob = scalar_problem(&ens, 3.0, 100.0);
        match partial_dual_value(&[0.0], &prob, &InnerOptions::default(), None).unwrap() {
            DualOutcome::Finite(e) => {
                assert!((e.state.dual_value - 0.75).abs() < 1e-9);
                assert!((e.subgradient[0] - (0.75 - 100.0)).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_signal_is_infeasible_sinr() {
        let sample = crate::channel::CsiSample {
            channel: CMatrix::from_element(1, 1, c(1.0)),
            estimate: CMatrix::zeros(1, 1),
        };
        let ens =
            CsiEnsemble::from_samples(1, 1, vec![sample], vec![CMatrix::from_element(1, 1, c(1.0))]).unwrap();
        let prob = FeasibilityProblem::new(&ens, vec![vec![0]], vec![1.0], vec![1.0], PrecoderKind::Local).unwrap();
        let v = subgradient_ascent(&prob, &AscentOptions::default()).unwrap();
        assert_eq!(v.status, FeasibilityStatus::InfeasibleSinr);
    }

    #[test]
    fn generous_budget_is_feasible_at_once() {
        let ens = unit_ens();
        let prob = scalar_problem(&ens, 3.0, 1e6);
        let v = subgradient_ascent(&prob, &AscentOptions::default()).unwrap();
        assert_eq!(v.status, FeasibilityStatus::Feasible);
        assert_eq!(v.iterations, 0);
        assert!(v.certificate.unwrap().satisfies(&[1e6], &[3.0], 1e-6));
    }

    #[test]
    fn tight_scalar_budget_is_infeasible_power() {
        let ens = unit_ens();
        let prob = scalar_problem(&ens, 3.0, 2.0);
        let v = subgradient_ascent(&prob, &AscentOptions::default()).unwrap();
        assert_eq!(v.status, FeasibilityStatus::InfeasiblePower);
    }

    #[test]
    fn k1_recovery_is_identity() {
        let h = CMatrix::from_row_slice(2, 1, &[c(0.7), c(-0.2)]);
        let ens = CsiEnsemble::perfect(2, 1, vec![h]).unwrap();
        let v = StochasticPrecoder {
            samples: vec![CMatrix::from_row_slice(2, 1, &[c(0.5), c(0.1)])],
            constraint: crate::metrics::ConstraintTag::Unconstrained,
            clusters: None,
        };
        let rec = recover_downlink_powers(&v, &[2.5], &ens, &[1.5]).unwrap();
        assert!((rec.q[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn trajectory_is_json_lines() {
        let pt = TrajectoryPoint {
            restart: 0,
            iteration: 1,
            alpha: 10.0,
            lambda: vec![0.5],
            dual_value: 1.0,
            best_dual: 1.0,
            max_ap_power: 2.0,
        };
        let mut buf = Vec::new();
        write_trajectory(&[pt.clone(), pt], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: TrajectoryPoint = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.iteration, 1);
    }
}
