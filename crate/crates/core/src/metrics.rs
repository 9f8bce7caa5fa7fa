//! Ergodic SINR bounds and power bookkeeping over an ensemble.
//!
//! Downlink SINRs use the hardening bound and uplink SINRs the
//! use-and-then-forget bound; all expectations are ensemble averages and
//! the receiver noise power is 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::CsiEnsemble;
use crate::error::{Error, Result};
use crate::linalg::{c, C64, CMatrix, CVector};

/// Information structure a stochastic precoder was built under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    Unconstrained,
    Centralized,
    Local,
}

/// Sample-indexed precoding (or combining) matrices, each `NL × K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPrecoder {
    pub samples: Vec<CMatrix>,
    pub constraint: ConstraintTag,
    pub clusters: Option<Vec<Vec<usize>>>,
}

/// One column of a stochastic precoder: a vector per sample.
pub type StochasticVector = Vec<CVector>;

impl StochasticPrecoder {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn zeros(ens: &CsiEnsemble, constraint: ConstraintTag) -> Self {
        Self {
            samples: vec![CMatrix::zeros(ens.dim(), ens.num_ues); ens.len()],
            constraint,
            clusters: None,
        }
    }

    pub fn num_ues(&self) -> usize {
        self.samples.first().map_or(0, |m| m.ncols())
    }

    pub fn column(&self, k: usize) -> StochasticVector {
        self.samples.iter().map(|m| m.column(k).into_owned()).collect()
    }

    pub fn set_column(&mut self, k: usize, v: &[CVector]) {
        for (m, col) in self.samples.iter_mut().zip(v) {
            m.set_column(k, col);
        }
    }

    /// Multiplies column `k` of every sample by `factors[k]`.
    pub fn scale_columns(&self, factors: &[C64]) -> Self {
        let mut out = self.clone();
        for m in &mut out.samples {
            for (k, f) in factors.iter().enumerate() {
                let mut col = m.column_mut(k);
                col *= *f;
            }
        }
        out
    }

    /// Checks that column `k` vanishes on APs outside `clusters[k]` in every sample.
    pub fn respects_clusters(&self, clusters: &[Vec<usize>], antennas: usize) -> bool {
        self.samples.iter().all(|m| {
            (0..m.ncols()).all(|k| {
                (0..m.nrows() / antennas)
                    .filter(|l| !clusters[k].contains(l))
                    .all(|l| m.view((l * antennas, k), (antennas, 1)).iter().all(|v| *v == c(0.0)))
            })
        })
    }
}

/// Ensemble moments of the effective channels `G = Hᴴ T`: `mean[(i, j)] = E[h_iᴴ t_j]`
/// and `power[(i, j)] = E[|h_iᴴ t_j|²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMoments {
    pub mean: CMatrix,
    pub power: DMatrix<f64>,
}

pub fn cross_moments(t: &StochasticPrecoder, ens: &CsiEnsemble) -> Result<CrossMoments> {
    check_dims(t, ens)?;
    let k = ens.num_ues;
    let mut mean = CMatrix::zeros(k, t.num_ues());
    let mut power = DMatrix::zeros(k, t.num_ues());
    for (sample, tm) in ens.samples().iter().zip(&t.samples) {
        let g = sample.channel.adjoint() * tm;
        mean += &g;
        power += g.map(|v| v.norm_sqr());
    }
    let inv = 1.0 / ens.len() as f64;
    Ok(CrossMoments { mean: mean * c(inv), power: power * inv })
}

fn check_dims(t: &StochasticPrecoder, ens: &CsiEnsemble) -> Result<()> {
    if t.samples.len() != ens.len() {
        return Err(Error::Dimension(format!("precoder has {} samples, ensemble {}", t.samples.len(), ens.len())));
    }
    if let Some(m) = t.samples.first() {
        if m.nrows() != ens.dim() {
            return Err(Error::Dimension(format!("precoder has {} rows, expected {}", m.nrows(), ens.dim())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrBreakdown {
    /// `E[h_kᴴ t_k]`.
    pub signal_mean: C64,
    /// `V(h_kᴴ t_k)`, clamped at zero.
    pub variance: f64,
    /// `E[|h_kᴴ t_j|²]` for every `j`; the entry `j = k` is zero.
    pub interference: Vec<f64>,
    pub noise: f64,
}

impl SinrBreakdown {
    pub fn sinr(&self) -> f64 {
        let signal = self.signal_mean.norm_sqr();
        if signal == 0.0 {
            return 0.0;
        }
        signal / (self.variance + self.interference.iter().sum::<f64>() + self.noise)
    }
}

fn breakdown_from(m: &CrossMoments, k: usize) -> SinrBreakdown {
    let b = m.mean[(k, k)];
    let variance = (m.power[(k, k)] - b.norm_sqr()).max(0.0);
    let interference = (0..m.power.ncols()).map(|j| if j == k { 0.0 } else { m.power[(k, j)] }).collect();
    SinrBreakdown { signal_mean: b, variance, interference, noise: 1.0 }
}

pub fn dl_sinr_breakdown(t: &StochasticPrecoder, ens: &CsiEnsemble, k: usize) -> Result<SinrBreakdown> {
    Ok(breakdown_from(&cross_moments(t, ens)?, k))
}

/// Hardening-bound downlink SINR of UE `k`.
pub fn dl_sinr(t: &StochasticPrecoder, ens: &CsiEnsemble, k: usize) -> Result<f64> {
    Ok(dl_sinr_breakdown(t, ens, k)?.sinr())
}

/// All downlink SINRs from a single pass over the ensemble.
pub fn dl_sinrs(t: &StochasticPrecoder, ens: &CsiEnsemble) -> Result<Vec<f64>> {
    let m = cross_moments(t, ens)?;
    Ok((0..t.num_ues()).map(|k| breakdown_from(&m, k).sinr()).collect())
}

/// Downlink rate in bit/s/Hz.
pub fn dl_rate(t: &StochasticPrecoder, ens: &CsiEnsemble, k: usize) -> Result<f64> {
    Ok(rate_from_sinr(dl_sinr(t, ens, k)?))
}

pub fn rate_from_sinr(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// `Σ_l σ_l E‖v_l‖²`.
pub fn sigma_norm_sq(v: &[CVector], sigma: &[f64], ens: &CsiEnsemble) -> Result<f64> {
    if v.len() != ens.len() || sigma.len() != ens.num_aps {
        return Err(Error::Dimension("sigma norm: sample or AP count mismatch".into()));
    }
    let n = ens.antennas;
    let total: f64 = v
        .iter()
        .map(|vs| {
            sigma
                .iter()
                .enumerate()
                .map(|(l, s)| s * vs.rows(l * n, n).norm_squared())
                .sum::<f64>()
        })
        .sum();
    Ok(total / ens.len() as f64)
}

/// Use-and-then-forget uplink SINR. `degenerate` marks an identically zero
/// combiner, for which the value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlSinr {
    pub value: f64,
    pub degenerate: bool,
}

pub fn ul_sinr(v: &[CVector], p: &[f64], sigma: &[f64], ens: &CsiEnsemble, k: usize) -> Result<UlSinr> {
    if p.len() != ens.num_ues {
        return Err(Error::Dimension("uplink powers do not match the UE count".into()));
    }
    let noise = sigma_norm_sq(v, sigma, ens)?;
    if noise == 0.0 {
        return Ok(UlSinr { value: 0.0, degenerate: true });
    }
    let kk = ens.num_ues;
    let mut mean = vec![c(0.0); kk];
    let mut power = vec![0.0; kk];
    for (sample, vs) in ens.samples().iter().zip(v) {
        let g = sample.channel.adjoint() * vs;
        for j in 0..kk {
            mean[j] += g[j];
            power[j] += g[j].norm_sqr();
        }
    }
    let inv = 1.0 / ens.len() as f64;
    Ok(UlSinr { value: ul_sinr_from_moments(&mean, &power, inv, p, noise, k), degenerate: false })
}

fn ul_sinr_from_moments(mean: &[C64], power: &[f64], inv: f64, p: &[f64], noise: f64, k: usize) -> f64 {
    let b = mean[k] * inv;
    let signal = p[k] * b.norm_sqr();
    if signal == 0.0 {
        return 0.0;
    }
    let variance = (power[k] * inv - b.norm_sqr()).max(0.0);
    let interference: f64 = (0..p.len()).filter(|&j| j != k).map(|j| p[j] * power[j] * inv).sum();
    signal / (p[k] * variance + interference + noise)
}

/// Uplink SINRs of every column of `v`, using the cross moments of `v`.
pub fn ul_sinrs(v: &StochasticPrecoder, p: &[f64], sigma: &[f64], ens: &CsiEnsemble) -> Result<Vec<UlSinr>> {
    let m = cross_moments(v, ens)?;
    let norms = column_sigma_norms(v, sigma, ens)?;
    Ok((0..v.num_ues())
        .map(|k| {
            if norms[k] == 0.0 {
                return UlSinr { value: 0.0, degenerate: true };
            }
            let mean: Vec<C64> = (0..ens.num_ues).map(|j| m.mean[(j, k)]).collect();
            let power: Vec<f64> = (0..ens.num_ues).map(|j| m.power[(j, k)]).collect();
            UlSinr { value: ul_sinr_from_moments(&mean, &power, 1.0, p, norms[k], k), degenerate: false }
        })
        .collect())
}

/// `E‖v_k‖²_σ` for every column.
pub fn column_sigma_norms(v: &StochasticPrecoder, sigma: &[f64], ens: &CsiEnsemble) -> Result<Vec<f64>> {
    check_dims(v, ens)?;
    let blocks = per_ap_column_powers(v, ens);
    Ok((0..v.num_ues())
        .map(|k| (0..ens.num_aps).map(|l| sigma[l] * blocks[(l, k)]).sum())
        .collect())
}

/// `E‖t_{l,k}‖²` as an `L × K` matrix.
pub fn per_ap_column_powers(t: &StochasticPrecoder, ens: &CsiEnsemble) -> DMatrix<f64> {
    let n = ens.antennas;
    let mut out = DMatrix::zeros(ens.num_aps, t.num_ues());
    for m in &t.samples {
        for k in 0..m.ncols() {
            for l in 0..ens.num_aps {
                out[(l, k)] += m.view((l * n, k), (n, 1)).norm_squared();
            }
        }
    }
    out / ens.len() as f64
}

/// Average transmit power of every AP, `Σ_k E‖t_{l,k}‖²`.
pub fn per_ap_powers(t: &StochasticPrecoder, ens: &CsiEnsemble) -> Result<Vec<f64>> {
    check_dims(t, ens)?;
    let m = per_ap_column_powers(t, ens);
    Ok(m.row_iter().map(|r| r.sum()).collect())
}

/// Per-sample transmit power of every AP, `samples × L`; used for standard errors.
pub fn per_ap_power_samples(t: &StochasticPrecoder, ens: &CsiEnsemble) -> Vec<Vec<f64>> {
    let n = ens.antennas;
    t.samples
        .iter()
        .map(|m| (0..ens.num_aps).map(|l| m.rows(l * n, n).norm_squared()).collect())
        .collect()
}
