//! The MMSE precoder family parametrized by virtual uplink powers `p` and
//! per-AP regularization `σ`.
//!
//! * [`full_mmse`]: regularized channel inversion with the true channel.
//! * [`centralized_mmse`]: cluster-restricted MMSE on shared estimates, with
//!   the error covariances entering the regularizer.
//! * [`local_team_mmse`]: per-AP local MMSE stages followed by a statistical
//!   correction stage that couples the APs through the `Π_l` matrices.
//! * [`local_scalar_baseline`]: the same local stages with scalar corrections.

use serde::{Deserialize, Serialize};

use crate::channel::{empirical_mean, CsiEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{c, condition_number, solve_checked, C64, CMatrix, CVector};
use crate::metrics::{ConstraintTag, StochasticPrecoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmseParams {
    /// Virtual uplink powers, one per UE.
    pub powers: Vec<f64>,
    /// Per-AP noise / regularization levels.
    pub sigma: Vec<f64>,
}

impl MmseParams {
    pub fn new(powers: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if powers.iter().chain(&sigma).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("MMSE parameters must be strictly positive".into()));
        }
        Ok(Self { powers, sigma })
    }

    fn check(&self, ens: &CsiEnsemble) -> Result<()> {
        if self.powers.len() != ens.num_ues || self.sigma.len() != ens.num_aps {
            return Err(Error::Dimension(format!(
                "parameters for {} UEs / {} APs, ensemble has {} / {}",
                self.powers.len(),
                self.sigma.len(),
                ens.num_ues,
                ens.num_aps
            )));
        }
        Ok(())
    }

    fn sqrt_powers(&self) -> Vec<C64> {
        self.powers.iter().map(|p| c(p.sqrt())).collect()
    }
}

/// Which member of the MMSE family realizes the implicit combiner optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    /// Perfect CSI shared by all APs, no clustering.
    Full,
    Centralized,
    Local,
    LocalScalarBaseline,
}

impl PrecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrecoderKind::Full => "full",
            PrecoderKind::Centralized => "centralized",
            PrecoderKind::Local => "local",
            PrecoderKind::LocalScalarBaseline => "local_scalar_baseline",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "full" => Ok(PrecoderKind::Full),
            "centralized" => Ok(PrecoderKind::Centralized),
            "local" => Ok(PrecoderKind::Local),
            "local_scalar_baseline" => Ok(PrecoderKind::LocalScalarBaseline),
            other => Err(Error::InvalidConfig(format!("unknown precoder type '{other}'"))),
        }
    }
}

/// Builds the MMSE combiners of every UE for the given family member.
pub fn mmse_combiners(
    kind: PrecoderKind,
    ens: &CsiEnsemble,
    params: &MmseParams,
    clusters: &[Vec<usize>],
) -> Result<StochasticPrecoder> {
    match kind {
        PrecoderKind::Full => full_mmse(ens, params),
        PrecoderKind::Centralized => centralized_mmse(ens, params, clusters),
        PrecoderKind::Local => local_team_mmse(ens, params, clusters)?.assemble(ens),
        PrecoderKind::LocalScalarBaseline => local_scalar_baseline(ens, params, clusters)?.assemble(ens),
    }
}

/// `A P Aᴴ` for a matrix `A` with `K` columns.
fn weighted_gram(a: &CMatrix, powers: &[f64]) -> CMatrix {
    let mut scaled = a.clone();
    for (k, p) in powers.iter().enumerate() {
        let mut col = scaled.column_mut(k);
        col *= c(*p);
    }
    scaled * a.adjoint()
}

/// Adds `σ_l` to the diagonal of each `N × N` block listed in `aps`.
fn add_block_regularizer(a: &mut CMatrix, aps: &[usize], sigma: &[f64], n: usize) {
    for (slot, &l) in aps.iter().enumerate() {
        for i in 0..n {
            a[(slot * n + i, slot * n + i)] += c(sigma[l]);
        }
    }
}

/// `V = (H P Hᴴ + Σ)⁻¹ H P^{1/2}` per sample, using the true channel.
pub fn full_mmse(ens: &CsiEnsemble, params: &MmseParams) -> Result<StochasticPrecoder> {
    params.check(ens)?;
    let n = ens.antennas;
    let all: Vec<usize> = (0..ens.num_aps).collect();
    let sqrt_p = params.sqrt_powers();
    let samples = ens
        .samples()
        .iter()
        .map(|s| {
            let mut a = weighted_gram(&s.channel, &params.powers);
            add_block_regularizer(&mut a, &all, &params.sigma, n);
            let mut rhs = s.channel.clone();
            for (k, f) in sqrt_p.iter().enumerate() {
                let mut col = rhs.column_mut(k);
                col *= *f;
            }
            solve_checked(&a, &rhs, "full MMSE")
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StochasticPrecoder { samples, constraint: ConstraintTag::Unconstrained, clusters: None })
}

/// `Σ_k p_k Ψ_{l,k}` for every AP.
fn weighted_error_covariances(ens: &CsiEnsemble, params: &MmseParams) -> Vec<CMatrix> {
    (0..ens.num_aps)
        .map(|l| {
            let mut acc = CMatrix::zeros(ens.antennas, ens.antennas);
            for (k, p) in params.powers.iter().enumerate() {
                acc += ens.error_covariance(l, k) * c(*p);
            }
            acc
        })
        .collect()
}

fn sorted_cluster(cluster: &[usize]) -> Vec<usize> {
    let mut aps = cluster.to_vec();
    aps.sort_unstable();
    aps
}

fn check_clusters(ens: &CsiEnsemble, clusters: &[Vec<usize>]) -> Result<()> {
    if clusters.len() != ens.num_ues {
        return Err(Error::Dimension(format!("{} clusters for {} UEs", clusters.len(), ens.num_ues)));
    }
    if clusters.iter().any(|set| set.is_empty() || set.iter().any(|&l| l >= ens.num_aps)) {
        return Err(Error::InvalidConfig("cluster sets must be nonempty subsets of the APs".into()));
    }
    Ok(())
}

/// Cluster-restricted MMSE with centralized CSI. Only the `N|L_k|` submatrix
/// indexed by the serving APs is inverted; the column vanishes elsewhere.
pub fn centralized_mmse(ens: &CsiEnsemble, params: &MmseParams, clusters: &[Vec<usize>]) -> Result<StochasticPrecoder> {
    params.check(ens)?;
    check_clusters(ens, clusters)?;
    let n = ens.antennas;
    let psi_bar = weighted_error_covariances(ens, params);
    let sorted: Vec<Vec<usize>> = clusters.iter().map(|s| sorted_cluster(s)).collect();
    let row_sets: Vec<Vec<usize>> = sorted
        .iter()
        .map(|aps| aps.iter().flat_map(|&l| ens.rows_of(l)).collect())
        .collect();

    let mut samples = Vec::with_capacity(ens.len());
    for s in ens.samples() {
        let mut out = CMatrix::zeros(ens.dim(), ens.num_ues);
        for (k, aps) in sorted.iter().enumerate() {
            let rows = &row_sets[k];
            let h_sub = s.estimate.select_rows(rows.iter());
            let mut a = weighted_gram(&h_sub, &params.powers);
            for (slot, &l) in aps.iter().enumerate() {
                let mut block = a.view_mut((slot * n, slot * n), (n, n));
                block += &psi_bar[l];
            }
            add_block_regularizer(&mut a, aps, &params.sigma, n);
            let rhs = CMatrix::from_column_slice(rows.len(), 1, (h_sub.column(k) * c(params.powers[k].sqrt())).as_slice());
            let v = solve_checked(&a, &rhs, "centralized MMSE")?;
            for (i, &r) in rows.iter().enumerate() {
                out[(r, k)] = v[(i, 0)];
            }
        }
        samples.push(out);
    }
    Ok(StochasticPrecoder {
        samples,
        constraint: ConstraintTag::Centralized,
        clusters: Some(clusters.to_vec()),
    })
}

/// Local MMSE stage of AP `l` for every sample:
/// `V_l = (Ĥ_l P Ĥ_lᴴ + Σ_k p_k Ψ_{l,k} + σ_l I)⁻¹ Ĥ_l P^{1/2}`.
pub fn local_mmse_stage(ens: &CsiEnsemble, params: &MmseParams, l: usize) -> Result<Vec<CMatrix>> {
    params.check(ens)?;
    let psi_bar = weighted_error_covariances(ens, params);
    local_stage_with(ens, params, l, &psi_bar[l])
}

fn local_stage_with(ens: &CsiEnsemble, params: &MmseParams, l: usize, psi_bar: &CMatrix) -> Result<Vec<CMatrix>> {
    let n = ens.antennas;
    let sqrt_p = params.sqrt_powers();
    (0..ens.len())
        .map(|s| {
            let h = ens.local_estimate(s, l);
            let mut a = weighted_gram(&h, &params.powers) + psi_bar;
            add_block_regularizer(&mut a, &[l], &params.sigma, n);
            let mut rhs = h;
            for (k, f) in sqrt_p.iter().enumerate() {
                let mut col = rhs.column_mut(k);
                col *= *f;
            }
            solve_checked(&a, &rhs, "local MMSE stage")
        })
        .collect()
}

/// `Π_l = E[P^{1/2} Ĥ_lᴴ V_l]` from a precomputed local stage.
pub fn pi_matrix(ens: &CsiEnsemble, params: &MmseParams, l: usize, stage: &[CMatrix]) -> Result<CMatrix> {
    let sqrt_p = CMatrix::from_diagonal(&CVector::from_vec(params.sqrt_powers()));
    empirical_mean((0..ens.len()).map(|s| &sqrt_p * ens.local_estimate(s, l).adjoint() * &stage[s]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStage {
    /// `c_{l,k}` for every AP (zero outside the cluster).
    pub coefficients: Vec<CVector>,
    /// Condition number of the block system; large values flag near-degeneracy.
    pub condition_number: f64,
}

/// Solves `c_{l,k} + Σ_{j ∈ L_k∖{l}} Π_j c_{j,k} = e_k` for `l ∈ L_k`.
pub fn solve_correction_stage(pis: &[CMatrix], cluster: &[usize], k: usize) -> Result<CorrectionStage> {
    let num_ues = pis.first().map_or(0, |p| p.nrows());
    if k >= num_ues || cluster.iter().any(|&l| l >= pis.len()) {
        return Err(Error::Dimension("correction stage: index out of range".into()));
    }
    let aps = sorted_cluster(cluster);
    let size = aps.len() * num_ues;
    let mut m = CMatrix::identity(size, size);
    let mut rhs = CMatrix::zeros(size, 1);
    for (a, _) in aps.iter().enumerate() {
        for (b, &j) in aps.iter().enumerate() {
            if a != b {
                m.view_mut((a * num_ues, b * num_ues), (num_ues, num_ues)).copy_from(&pis[j]);
            }
        }
        rhs[(a * num_ues + k, 0)] = c(1.0);
    }
    let x = solve_checked(&m, &rhs, "statistical precoding stage")?;
    let mut coefficients = vec![CVector::zeros(num_ues); pis.len()];
    for (a, &l) in aps.iter().enumerate() {
        coefficients[l] = x.fixed_columns::<1>(0).rows(a * num_ues, num_ues).into_owned();
    }
    Ok(CorrectionStage { coefficients, condition_number: condition_number(&m) })
}

/// Scalar variant: `c_{l,k} = a_{l,k} e_k` with the system projected onto `e_k`.
fn solve_scalar_correction(pis: &[CMatrix], cluster: &[usize], k: usize) -> Result<CorrectionStage> {
    let num_ues = pis.first().map_or(0, |p| p.nrows());
    let aps = sorted_cluster(cluster);
    let size = aps.len();
    let mut m = CMatrix::identity(size, size);
    for (a, _) in aps.iter().enumerate() {
        for (b, &j) in aps.iter().enumerate() {
            if a != b {
                m[(a, b)] = pis[j][(k, k)];
            }
        }
    }
    let x = solve_checked(&m, &CMatrix::from_element(size, 1, c(1.0)), "scalar precoding stage")?;
    let mut coefficients = vec![CVector::zeros(num_ues); pis.len()];
    for (a, &l) in aps.iter().enumerate() {
        coefficients[l][k] = x[(a, 0)];
    }
    Ok(CorrectionStage { coefficients, condition_number: condition_number(&m) })
}

/// Two-stage distributed precoder: `v_{l,k}[s] = V_l[s] c_{l,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTeamPrecoder {
    /// `stages[l][s]`: local MMSE stage of AP `l` in sample `s` (`N × K`).
    pub stages: Vec<Vec<CMatrix>>,
    /// `corrections[k]`: statistical stage of UE `k` across all APs.
    pub corrections: Vec<CorrectionStage>,
    pub pis: Vec<CMatrix>,
    pub clusters: Vec<Vec<usize>>,
}

impl LocalTeamPrecoder {
    /// Structured export of stages, corrections and `Π` for regression fixtures.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn assemble(&self, ens: &CsiEnsemble) -> Result<StochasticPrecoder> {
        let n = ens.antennas;
        let samples = (0..ens.len())
            .map(|s| {
                let mut m = CMatrix::zeros(ens.dim(), ens.num_ues);
                for (k, corr) in self.corrections.iter().enumerate() {
                    for &l in &self.clusters[k] {
                        let block = &self.stages[l][s] * &corr.coefficients[l];
                        m.view_mut((l * n, k), (n, 1)).copy_from(&block);
                    }
                }
                m
            })
            .collect();
        Ok(StochasticPrecoder {
            samples,
            constraint: ConstraintTag::Local,
            clusters: Some(self.clusters.clone()),
        })
    }

    /// Block of AP `l` in sample `s`, recomputed from `Ĥ_l[s]` and the stored statistics only.
    pub fn block_from_local_csi(
        &self,
        ens: &CsiEnsemble,
        params: &MmseParams,
        l: usize,
        s: usize,
    ) -> Result<CMatrix> {
        let n = ens.antennas;
        let h = ens.local_estimate(s, l);
        let mut psi_bar = CMatrix::zeros(n, n);
        for (k, p) in params.powers.iter().enumerate() {
            psi_bar += ens.error_covariance(l, k) * c(*p);
        }
        let mut a = weighted_gram(&h, &params.powers) + psi_bar;
        add_block_regularizer(&mut a, &[l], &params.sigma, n);
        let rhs = h * CMatrix::from_diagonal(&CVector::from_vec(params.sqrt_powers()));
        let stage = solve_checked(&a, &rhs, "local MMSE stage")?;
        let mut out = CMatrix::zeros(n, self.corrections.len());
        for (k, corr) in self.corrections.iter().enumerate() {
            if self.clusters[k].contains(&l) {
                out.set_column(k, &(&stage * &corr.coefficients[l]));
            }
        }
        Ok(out)
    }
}

fn local_stages_and_pis(
    ens: &CsiEnsemble,
    params: &MmseParams,
) -> Result<(Vec<Vec<CMatrix>>, Vec<CMatrix>)> {
    params.check(ens)?;
    let psi_bar = weighted_error_covariances(ens, params);
    let mut stages = Vec::with_capacity(ens.num_aps);
    let mut pis = Vec::with_capacity(ens.num_aps);
    for l in 0..ens.num_aps {
        let stage = local_stage_with(ens, params, l, &psi_bar[l])?;
        pis.push(pi_matrix(ens, params, l, &stage)?);
        stages.push(stage);
    }
    Ok((stages, pis))
}

/// Team MMSE precoder under local CSI and user-centric clustering.
pub fn local_team_mmse(ens: &CsiEnsemble, params: &MmseParams, clusters: &[Vec<usize>]) -> Result<LocalTeamPrecoder> {
    check_clusters(ens, clusters)?;
    let (stages, pis) = local_stages_and_pis(ens, params)?;
    let corrections = (0..ens.num_ues)
        .map(|k| solve_correction_stage(&pis, &clusters[k], k))
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalTeamPrecoder { stages, corrections, pis, clusters: clusters.to_vec() })
}

/// Local MMSE stages with one scalar coefficient per serving AP.
pub fn local_scalar_baseline(
    ens: &CsiEnsemble,
    params: &MmseParams,
    clusters: &[Vec<usize>],
) -> Result<LocalTeamPrecoder> {
    check_clusters(ens, clusters)?;
    let (stages, pis) = local_stages_and_pis(ens, params)?;
    let corrections = (0..ens.num_ues)
        .map(|k| solve_scalar_correction(&pis, &clusters[k], k))
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalTeamPrecoder { stages, corrections, pis, clusters: clusters.to_vec() })
}

/// Largest RMS violation, over `l ∈ L_k`, of the team-MMSE optimality conditions
/// `v_{l,k} = V_l (e_k − Σ_{j ≠ l} P^{1/2} E[Ĥ_jᴴ v_{j,k}])` under local CSI, where
/// cross-AP independence turns the conditional means into plain means.
/// The cluster defaults to all APs when the precoder carries none.
pub fn tmmse_residual(v: &StochasticPrecoder, ens: &CsiEnsemble, params: &MmseParams, k: usize) -> Result<f64> {
    params.check(ens)?;
    let n = ens.antennas;
    let cluster = match &v.clusters {
        Some(cl) => sorted_cluster(&cl[k]),
        None => (0..ens.num_aps).collect(),
    };
    let psi_bar = weighted_error_covariances(ens, params);
    let sqrt_p = CMatrix::from_diagonal(&CVector::from_vec(params.sqrt_powers()));

    let block = |s: usize, l: usize| v.samples[s].view((l * n, k), (n, 1)).into_owned();
    let coupling: Vec<CVector> = cluster
        .iter()
        .map(|&j| {
            let m = empirical_mean((0..ens.len()).map(|s| ens.local_estimate(s, j).adjoint() * block(s, j)))?;
            Ok(CVector::from_column_slice((&sqrt_p * m).as_slice()))
        })
        .collect::<Result<_>>()?;

    let mut worst = 0.0_f64;
    for (a, &l) in cluster.iter().enumerate() {
        let stage = local_stage_with(ens, params, l, &psi_bar[l])?;
        let mut target = CVector::zeros(ens.num_ues);
        target[k] = c(1.0);
        for (b, m) in coupling.iter().enumerate() {
            if a != b {
                target -= m;
            }
        }
        let ms: f64 = (0..ens.len())
            .map(|s| (block(s, l) - &stage[s] * &target).norm_squared())
            .sum::<f64>()
            / ens.len() as f64;
        worst = worst.max(ms.sqrt());
    }
    Ok(worst)
}

/// Empirical MMSE objective `E‖P^{1/2} Hᴴ v − e_k‖² + E‖v‖²_σ` with the true channel.
pub fn mse_objective(v: &[CVector], ens: &CsiEnsemble, params: &MmseParams, k: usize) -> Result<f64> {
    params.check(ens)?;
    if v.len() != ens.len() {
        return Err(Error::Dimension("MSE objective: sample count mismatch".into()));
    }
    let sqrt_p = params.sqrt_powers();
    let n = ens.antennas;
    let total: f64 = ens
        .samples()
        .iter()
        .zip(v)
        .map(|(s, vs)| {
            let g = s.channel.adjoint() * vs;
            let err: f64 = (0..ens.num_ues)
                .map(|j| {
                    let target = if j == k { c(1.0) } else { c(0.0) };
                    (sqrt_p[j] * g[j] - target).norm_sqr()
                })
                .sum();
            let reg: f64 = (0..ens.num_aps).map(|l| params.sigma[l] * vs.rows(l * n, n).norm_squared()).sum();
            err + reg
        })
        .sum();
    Ok(total / ens.len() as f64)
}
