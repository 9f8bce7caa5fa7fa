//! Property checks shared by the acceptance gate and the proptest suites.
//! Each returns the quantity compared against its tolerance.

use cellfree::channel::{build_simlike_statistics, sample_ensemble, CsiEnsemble};
use cellfree::duality::{
    initial_powers, partial_dual_value, solve_uplink_powers, DualEvaluation, DualOutcome, FeasibilityProblem,
    InnerOptions, UplinkOutcome,
};
use cellfree::metrics::{
    dl_sinr_breakdown, dl_sinrs, per_ap_powers, ul_sinr, ConstraintTag, StochasticPrecoder,
};
use cellfree::precoders::{
    centralized_mmse, full_mmse, local_team_mmse, mse_objective, tmmse_residual, MmseParams, PrecoderKind,
};
use cellfree::scenario::{generate_scenario, GeometryConfig};
use nalgebra::Complex;
use rand::Rng;

use super::*;

/// Local team MMSE vs the dense oracle on an `L = 2, K = 2, N = 1, S = 16`
/// instance: `(max coefficient deviation, max optimality residual)`.
pub fn oracle_check(seed: u64) -> (f64, f64) {
    let inst = random_local_instance(seed, 2, 2, 1, 16);
    let team = local_team_mmse(&inst.ens, &inst.params, &inst.clusters).unwrap();
    let v = team.assemble(&inst.ens).unwrap();
    let mut dev = 0.0_f64;
    let mut res = 0.0_f64;
    for k in 0..2 {
        let oracle = team_oracle(&inst.ens, &inst.params, &inst.clusters[k], k);
        dev = dev.max(max_abs_diff(&v.column(k), &oracle));
        res = res.max(tmmse_residual(&v, &inst.ens, &inst.params, k).unwrap());
    }
    (dev, res)
}

pub struct FixedPointReport {
    pub max_ratio: f64,
    pub max_u_error: f64,
    pub iterations: usize,
}

/// Fixed-point run on a random scenario with `L ≤ 4, K ≤ 4, N ≤ 2, S = 64`.
/// `None` when the drawn instance cannot meet its targets.
pub fn fixed_point_check(seed: u64) -> Option<FixedPointReport> {
    let mut r = rng(seed);
    let grids = [[1, 2], [2, 2], [1, 3], [1, 4], [1, 1]];
    let grid = grids[r.random_range(0..grids.len())];
    let l = grid[0] * grid[1];
    let cfg = GeometryConfig {
        area_side_m: 200.0,
        ap_grid: grid,
        antennas_per_ap: r.random_range(1..=2),
        num_ues: r.random_range(1..=4),
        cluster_size: r.random_range(1..=l),
        ..Default::default()
    };
    let scn = generate_scenario(&cfg, seed).unwrap();
    let ens = sample_ensemble(&build_simlike_statistics(&scn), 64, seed ^ 0x5eed).unwrap();
    let kind = if seed % 2 == 0 { PrecoderKind::Centralized } else { PrecoderKind::Local };
    let gamma = r.random_range(0.2..1.0);
    let sigma: Vec<f64> = (0..l).map(|_| r.random_range(1.0..2.0)).collect();
    let problem =
        FeasibilityProblem::new(&ens, scn.clusters.clone(), vec![gamma; scn.num_ues], scn.power_budgets.clone(), kind)
            .unwrap();
    let opts = InnerOptions { tol: 1e-13, max_iter: 20_000, power_cap: None, record_history: true };
    let sol = match solve_uplink_powers(&sigma, &problem, &opts, &initial_powers(&problem)?).unwrap() {
        UplinkOutcome::Converged(s) => s,
        _ => return None,
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let errs: Vec<f64> = sol
        .history
        .iter()
        .map(|p| norm(&p.iter().zip(&sol.p).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let floor = 1e-9 * norm(&sol.p);
    let burn_in = 2;
    let mut max_ratio = 0.0_f64;
    for i in burn_in..errs.len().saturating_sub(1) {
        if errs[i] <= floor || errs[i + 1] <= floor {
            break;
        }
        max_ratio = max_ratio.max(errs[i + 1] / errs[i]);
    }
    let max_u_error = sol.sinrs.iter().map(|u| (u - gamma).abs()).fold(0.0, f64::max);
    Some(FixedPointReport { max_ratio, max_u_error, iterations: sol.iterations })
}

/// Largest relative change of `|b_k|`, interference terms, SINRs and per-AP
/// powers under columnwise phase rotations of a random precoder.
pub fn phase_invariance_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inst = random_local_instance(seed, 2, 3, 2, 12);
    let ens = &inst.ens;
    let t = StochasticPrecoder {
        samples: (0..ens.len()).map(|_| random_cmatrix(&mut r, ens.dim(), ens.num_ues)).collect(),
        constraint: ConstraintTag::Unconstrained,
        clusters: None,
    };
    let phases: Vec<_> = (0..ens.num_ues).map(|_| Complex::from_polar(1.0, r.random_range(0.0..6.3))).collect();
    let rotated = t.scale_columns(&phases);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-300);
    let mut worst = 0.0_f64;
    for k in 0..ens.num_ues {
        let a = dl_sinr_breakdown(&t, ens, k).unwrap();
        let b = dl_sinr_breakdown(&rotated, ens, k).unwrap();
        worst = worst.max(rel(a.signal_mean.norm(), b.signal_mean.norm()));
        worst = worst.max(rel(a.variance, b.variance));
        for (x, y) in a.interference.iter().zip(&b.interference) {
            if *x != 0.0 {
                worst = worst.max(rel(*x, *y));
            }
        }
        worst = worst.max(rel(a.sinr(), b.sinr()));
    }
    for (x, y) in per_ap_powers(&t, ens).unwrap().iter().zip(per_ap_powers(&rotated, ens).unwrap()) {
        worst = worst.max(rel(*x, y));
    }
    worst
}

/// Small perfect-CSI instance on which the empirical dual is evaluated exactly.
pub fn dual_instance(seed: u64) -> (CsiEnsemble, Vec<Vec<usize>>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed ^ 0xd0a1);
    let ens = random_perfect_ensemble(seed, 2, 2, 2, 8, 0.5, 2.0);
    let clusters = if r.random_bool(0.5) { vec![vec![0, 1]; 2] } else { vec![random_cluster(&mut r, 2), random_cluster(&mut r, 2)] };
    let gammas = (0..2).map(|_| r.random_range(0.2..1.0)).collect();
    let budgets = (0..2).map(|_| r.random_range(0.5..2.0)).collect();
    (ens, clusters, gammas, budgets)
}

pub fn exact_inner() -> InnerOptions {
    InnerOptions { tol: 1e-13, max_iter: 50_000, power_cap: None, record_history: false }
}

pub fn evaluate(problem: &FeasibilityProblem, lambda: &[f64]) -> Box<DualEvaluation> {
    match partial_dual_value(lambda, problem, &exact_inner(), None).unwrap() {
        DualOutcome::Finite(e) => e,
        other => panic!("dual evaluation failed: {other:?}"),
    }
}

fn random_lambda(r: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    (0..l).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..3.0) }).collect()
}

/// `d̃(tλ₁ + (1−t)λ₂) − t d̃(λ₁) − (1−t) d̃(λ₂)`; concavity means this is ≥ 0.
pub fn concavity_gap(seed: u64) -> f64 {
    let (ens, clusters, gammas, budgets) = dual_instance(seed);
    let problem = FeasibilityProblem::new(&ens, clusters, gammas, budgets, PrecoderKind::Centralized).unwrap();
    let mut r = rng(seed ^ 0xc0c0);
    let (l1, l2) = (random_lambda(&mut r, 2), random_lambda(&mut r, 2));
    let t = r.random_range(0.05..0.95);
    let mid: Vec<f64> = l1.iter().zip(&l2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
    let d = |l: &[f64]| evaluate(&problem, l).state.dual_value;
    d(&mid) - t * d(&l1) - (1.0 - t) * d(&l2)
}

/// `d̃(λ) + g(λ)·(λ' − λ) − d̃(λ')`, nonnegative for a valid subgradient.
pub fn subgradient_gap(seed: u64) -> f64 {
    let (ens, clusters, gammas, budgets) = dual_instance(seed);
    let problem = FeasibilityProblem::new(&ens, clusters, gammas, budgets, PrecoderKind::Centralized).unwrap();
    let mut r = rng(seed ^ 0x5ab6);
    let (a, b) = (random_lambda(&mut r, 2), random_lambda(&mut r, 2));
    let ea = evaluate(&problem, &a);
    let eb = evaluate(&problem, &b);
    let lin: f64 = ea.subgradient.iter().zip(b.iter().zip(&a)).map(|(g, (x, y))| g * (x - y)).sum();
    ea.state.dual_value + lin - eb.state.dual_value
}

/// `Σ_k E‖t_k‖² − d̃(λ)` for a strictly feasible probe precoder; weak duality
/// means this is ≥ 0. Budgets are set to the probe's per-AP powers.
pub fn weak_duality_gap(seed: u64) -> f64 {
    let (ens, clusters, gammas, budgets) = dual_instance(seed);
    let mut r = rng(seed ^ 0x3ea7);
    let base = FeasibilityProblem::new(&ens, clusters.clone(), gammas.clone(), budgets, PrecoderKind::Centralized).unwrap();
    let probe = evaluate(&base, &random_lambda(&mut r, 2)).precoder.scale_columns(&[Complex::new(1.01, 0.0); 2]);
    let sinrs = dl_sinrs(&probe, &ens).unwrap();
    assert!(sinrs.iter().zip(&gammas).all(|(s, g)| s >= g));
    // Idle APs still need a positive budget; the probe stays feasible.
    let used = per_ap_powers(&probe, &ens).unwrap();
    let total: f64 = used.iter().sum();
    let probe_budgets: Vec<f64> = used.iter().map(|p| p.max(1e-9)).collect();
    let problem = FeasibilityProblem::new(&ens, clusters, gammas, probe_budgets, PrecoderKind::Centralized).unwrap();
    let lambda = random_lambda(&mut r, 2);
    total - evaluate(&problem, &lambda).state.dual_value
}

/// Exactness of the reductions `centralized(C = I, Ψ = 0, Ĥ = H) = full` and
/// `local(L = 1) = centralized`.
pub fn reductions_exact(seed: u64) -> bool {
    let ens = random_perfect_ensemble(seed, 3, 2, 2, 6, 0.3, 2.0);
    let params = MmseParams::new(vec![0.7, 1.9], vec![1.0, 1.4, 2.2]).unwrap();
    let full = full_mmse(&ens, &params).unwrap();
    let cent = centralized_mmse(&ens, &params, &vec![vec![0, 1, 2]; 2]).unwrap();
    let first = full.samples == cent.samples;

    let inst = random_local_instance(seed, 1, 3, 2, 6);
    let clusters = vec![vec![0]; 3];
    let local = local_team_mmse(&inst.ens, &inst.params, &clusters).unwrap().assemble(&inst.ens).unwrap();
    let cent = centralized_mmse(&inst.ens, &inst.params, &clusters).unwrap();
    first && local.samples == cent.samples
}

/// Smallest margin `J(probe) − J(team)` over 100 constrained random probes of
/// the local team solution, relative to `J(team)`.
pub fn team_probe_margin(seed: u64) -> f64 {
    let inst = random_local_instance(seed, 2, 2, 2, 10);
    let v = local_team_mmse(&inst.ens, &inst.params, &inst.clusters).unwrap().assemble(&inst.ens).unwrap();
    let mut r = rng(seed ^ 0x9b0e);
    let mut worst = f64::INFINITY;
    for k in 0..2 {
        let vk = v.column(k);
        let base = product_objective(&vk, &inst.ens, &inst.params, k);
        for i in 0..50 {
            let scale = 10f64.powi(-(i % 5) as i32);
            let probe = constrained_probe(&mut r, &vk, 2, &inst.clusters[k], scale);
            worst = worst.min((product_objective(&probe, &inst.ens, &inst.params, k) - base) / base);
        }
    }
    worst
}

/// Same probe test for the centralized MMSE with perfect CSI, where the
/// plain empirical objective is the right one; also checks that no probe
/// beats the MMSE combiner's UL SINR. Returns `(objective margin, SINR margin)`.
pub fn centralized_probe_margins(seed: u64) -> (f64, f64) {
    let ens = random_perfect_ensemble(seed, 2, 2, 2, 10, 0.3, 2.0);
    let mut r = rng(seed ^ 0x77);
    let clusters = vec![random_cluster(&mut r, 2), random_cluster(&mut r, 2)];
    let params = MmseParams::new(vec![r.random_range(0.3..3.0), r.random_range(0.3..3.0)], vec![1.0, 1.7]).unwrap();
    let v = centralized_mmse(&ens, &params, &clusters).unwrap();
    let (mut obj_margin, mut sinr_margin) = (f64::INFINITY, f64::INFINITY);
    for k in 0..2 {
        let vk = v.column(k);
        let base = mse_objective(&vk, &ens, &params, k).unwrap();
        let base_sinr = ul_sinr(&vk, &params.powers, &params.sigma, &ens, k).unwrap().value;
        for i in 0..50 {
            let scale = 10f64.powi(-(i % 5) as i32);
            let probe = constrained_probe(&mut r, &vk, 2, &clusters[k], scale);
            obj_margin = obj_margin.min((mse_objective(&probe, &ens, &params, k).unwrap() - base) / base);
            let s = ul_sinr(&probe, &params.powers, &params.sigma, &ens, k).unwrap().value;
            sinr_margin = sinr_margin.min((base_sinr - s) / base_sinr);
        }
    }
    (obj_margin, sinr_margin)
}
