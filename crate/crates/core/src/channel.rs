//! Channel statistics and frozen Monte-Carlo CSI ensembles.
//!
//! Every expectation downstream is an average over one [`CsiEnsemble`]. The
//! ensemble is drawn once per experiment so that all operators see identical
//! statistics and every iteration built on top of it is deterministic.

use std::fs;
use std::path::Path;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_psd_sqrt, C64, CMatrix, CVector};
use crate::scenario::NetworkScenario;

pub const DEFAULT_SAMPLES: usize = 100;

/// Per-link first and second order statistics, indexed by `(ap, ue)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStatistics {
    pub num_aps: usize,
    pub antennas: usize,
    pub num_ues: usize,
    means: Vec<CVector>,
    covariances: Vec<CMatrix>,
    error_covariances: Vec<CMatrix>,
}

impl ChannelStatistics {
    /// Builds statistics from row-major `(ap, ue)` lists. Checks that every
    /// covariance is Hermitian PSD and that `Ψ ⪯ K`.
    pub fn new(
        num_aps: usize,
        antennas: usize,
        num_ues: usize,
        means: Vec<CVector>,
        covariances: Vec<CMatrix>,
        error_covariances: Vec<CMatrix>,
    ) -> Result<Self> {
        let links = num_aps * num_ues;
        if means.len() != links || covariances.len() != links || error_covariances.len() != links {
            return Err(Error::Dimension(format!("expected {links} links per statistic")));
        }
        for (i, ((m, k), psi)) in means.iter().zip(&covariances).zip(&error_covariances).enumerate() {
            if m.len() != antennas || k.shape() != (antennas, antennas) || psi.shape() != (antennas, antennas) {
                return Err(Error::Dimension(format!("link {i} has wrong antenna dimension")));
            }
            hermitian_psd_sqrt(k).map_err(|e| Error::NotPsd(format!("covariance of link {i}: {e}")))?;
            hermitian_psd_sqrt(psi).map_err(|e| Error::NotPsd(format!("error covariance of link {i}: {e}")))?;
            hermitian_psd_sqrt(&(k - psi))
                .map_err(|e| Error::NotPsd(format!("K - Psi of link {i}: {e}")))?;
        }
        Ok(Self { num_aps, antennas, num_ues, means, covariances, error_covariances })
    }

    fn index(&self, ap: usize, ue: usize) -> usize {
        ap * self.num_ues + ue
    }

    pub fn mean(&self, ap: usize, ue: usize) -> &CVector {
        &self.means[self.index(ap, ue)]
    }

    pub fn covariance(&self, ap: usize, ue: usize) -> &CMatrix {
        &self.covariances[self.index(ap, ue)]
    }

    pub fn error_covariance(&self, ap: usize, ue: usize) -> &CMatrix {
        &self.error_covariances[self.index(ap, ue)]
    }
}

/// Zero-mean isotropic channels `K = κ I`; served links are perfectly
/// estimated and all other links are unknown (estimate equal to the mean).
pub fn build_simlike_statistics(scn: &NetworkScenario) -> ChannelStatistics {
    let n = scn.antennas;
    let mut means = Vec::with_capacity(scn.num_aps * scn.num_ues);
    let mut covs = Vec::with_capacity(means.capacity());
    let mut errs = Vec::with_capacity(means.capacity());
    for l in 0..scn.num_aps {
        for k in 0..scn.num_ues {
            let cov = CMatrix::identity(n, n) * c(scn.gains[(l, k)]);
            means.push(CVector::zeros(n));
            errs.push(if scn.serves(l, k) { CMatrix::zeros(n, n) } else { cov.clone() });
            covs.push(cov);
        }
    }
    ChannelStatistics {
        num_aps: scn.num_aps,
        antennas: n,
        num_ues: scn.num_ues,
        means,
        covariances: covs,
        error_covariances: errs,
    }
}

/// How estimates are shared between APs when precoders are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    /// AP `l` knows exactly its own estimate `Ĥ_l`.
    #[default]
    Local,
    /// All estimates are shared.
    Centralized,
}

/// One joint CSI realization: true channel and the stacked per-AP estimates,
/// both `NL × K`, AP `l` occupying rows `lN..(l+1)N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiSample {
    pub channel: CMatrix,
    pub estimate: CMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiEnsemble {
    pub seed: u64,
    pub num_aps: usize,
    pub antennas: usize,
    pub num_ues: usize,
    pub mode: CsiMode,
    /// Declared error covariances `Ψ_{l,k}`, row-major `(ap, ue)`.
    error_covariances: Vec<CMatrix>,
    samples: Vec<CsiSample>,
}

impl CsiEnsemble {
    /// Assembles an ensemble from explicit samples, e.g. deterministic test channels.
    pub fn from_samples(
        num_aps: usize,
        antennas: usize,
        samples: Vec<CsiSample>,
        error_covariances: Vec<CMatrix>,
    ) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyEnsemble)?;
        let num_ues = first.channel.ncols();
        let rows = num_aps * antennas;
        for s in &samples {
            if s.channel.shape() != (rows, num_ues) || s.estimate.shape() != (rows, num_ues) {
                return Err(Error::Dimension(format!(
                    "sample shape {:?}/{:?}, expected ({rows}, {num_ues})",
                    s.channel.shape(),
                    s.estimate.shape()
                )));
            }
        }
        if error_covariances.len() != num_aps * num_ues
            || error_covariances.iter().any(|p| p.shape() != (antennas, antennas))
        {
            return Err(Error::Dimension("error covariance list does not match the network".into()));
        }
        Ok(Self { seed: 0, num_aps, antennas, num_ues, mode: CsiMode::Local, error_covariances, samples })
    }

    /// Perfect-CSI ensemble (`Ĥ = H`, `Ψ = 0`) from a list of true channels.
    pub fn perfect(num_aps: usize, antennas: usize, channels: Vec<CMatrix>) -> Result<Self> {
        let num_ues = channels.first().ok_or(Error::EmptyEnsemble)?.ncols();
        let samples = channels
            .into_iter()
            .map(|h| CsiSample { estimate: h.clone(), channel: h })
            .collect();
        let zeros = vec![CMatrix::zeros(antennas, antennas); num_aps * num_ues];
        Self::from_samples(num_aps, antennas, samples, zeros)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[CsiSample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.num_aps * self.antennas
    }

    pub fn rows_of(&self, ap: usize) -> std::ops::Range<usize> {
        ap * self.antennas..(ap + 1) * self.antennas
    }

    /// `Ĥ_l` of sample `s` as an owned `N × K` matrix.
    pub fn local_estimate(&self, s: usize, ap: usize) -> CMatrix {
        self.samples[s].estimate.rows(ap * self.antennas, self.antennas).into_owned()
    }

    pub fn error_covariance(&self, ap: usize, ue: usize) -> &CMatrix {
        &self.error_covariances[ap * self.num_ues + ue]
    }

    pub fn with_mode(mut self, mode: CsiMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a stored ensemble and checks that it was drawn with `seed`.
    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let ens = Self::from_json(&fs::read_to_string(path)?)?;
        if ens.seed != seed {
            return Err(Error::InvalidConfig(format!(
                "ensemble file holds seed {}, expected {seed}",
                ens.seed
            )));
        }
        Ok(ens)
    }
}

fn standard_complex(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_iterator(
        n,
        (0..n).map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re * scale, im * scale)
        }),
    )
}

/// Draws `Ĥ_l ~ CN(μ, K − Ψ)` and `Z_l ~ CN(0, Ψ)` independently and sets `H_l = Ĥ_l + Z_l`.
pub fn sample_ensemble(stats: &ChannelStatistics, samples: usize, seed: u64) -> Result<CsiEnsemble> {
    if samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let (l_count, n, k_count) = (stats.num_aps, stats.antennas, stats.num_ues);
    let mut est_roots = Vec::with_capacity(l_count * k_count);
    let mut err_roots = Vec::with_capacity(l_count * k_count);
    for l in 0..l_count {
        for k in 0..k_count {
            let psi = stats.error_covariance(l, k);
            est_roots.push(hermitian_psd_sqrt(&(stats.covariance(l, k) - psi))?);
            err_roots.push(hermitian_psd_sqrt(psi)?);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut channel = CMatrix::zeros(l_count * n, k_count);
        let mut estimate = CMatrix::zeros(l_count * n, k_count);
        for l in 0..l_count {
            for k in 0..k_count {
                let idx = l * k_count + k;
                let est = stats.mean(l, k) + &est_roots[idx] * standard_complex(&mut rng, n);
                let err = &err_roots[idx] * standard_complex(&mut rng, n);
                let truth = &est + err;
                estimate.view_mut((l * n, k), (n, 1)).copy_from(&est);
                channel.view_mut((l * n, k), (n, 1)).copy_from(&truth);
            }
        }
        out.push(CsiSample { channel, estimate });
    }
    Ok(CsiEnsemble {
        seed,
        num_aps: l_count,
        antennas: n,
        num_ues: k_count,
        mode: CsiMode::Local,
        error_covariances: stats.error_covariances.clone(),
        samples: out,
    })
}

/// Values that can be averaged over an ensemble.
pub trait Averageable: Clone {
    fn accumulate(&mut self, other: &Self);
    fn scaled(self, factor: f64) -> Self;
}

impl Averageable for f64 {
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
    fn scaled(self, factor: f64) -> Self {
        self * factor
    }
}

impl Averageable for C64 {
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
    fn scaled(self, factor: f64) -> Self {
        self * factor
    }
}

impl Averageable for CMatrix {
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
    fn scaled(self, factor: f64) -> Self {
        self * c(factor)
    }
}

/// Sample mean with a fixed left-to-right summation order.
pub fn empirical_mean<T: Averageable>(values: impl IntoIterator<Item = T>) -> Result<T> {
    let mut iter = values.into_iter();
    let mut acc = iter.next().ok_or(Error::EmptyEnsemble)?;
    let mut count = 1usize;
    for v in iter {
        acc.accumulate(&v);
        count += 1;
    }
    Ok(acc.scaled(1.0 / count as f64))
}

/// Sample mean and its standard error (zero for a single sample).
pub fn mean_and_stderr(values: &[f64]) -> Result<(f64, f64)> {
    let mean = empirical_mean(values.iter().copied())?;
    let n = values.len();
    if n < 2 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}
