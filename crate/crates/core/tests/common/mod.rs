//! Shared builders and independent reference solvers for the integration tests.
#![allow(dead_code)]

pub mod checks;

use cellfree::channel::{CsiEnsemble, CsiSample};
use cellfree::linalg::{C64, CMatrix, CVector};
use cellfree::precoders::MmseParams;
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_cmatrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| cgauss(rng))
}

/// Random Hermitian PSD matrix of rank `n` scaled by `scale`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    let a = random_cmatrix(rng, n, n);
    (&a * a.adjoint()) * Complex::new(scale / n as f64, 0.0)
}

/// Random nonempty subset of `0..l`, sorted.
pub fn random_cluster(rng: &mut ChaCha8Rng, l: usize) -> Vec<usize> {
    loop {
        let set: Vec<usize> = (0..l).filter(|_| rng.random_bool(0.6)).collect();
        if !set.is_empty() {
            return set;
        }
    }
}

pub struct LocalInstance {
    pub ens: CsiEnsemble,
    pub clusters: Vec<Vec<usize>>,
    pub params: MmseParams,
}

/// Estimates with random per-link gains, random error covariances (some zero),
/// random clusters and random `(p, σ)`.
pub fn random_local_instance(seed: u64, l: usize, k: usize, n: usize, s: usize) -> LocalInstance {
    let mut rng = rng(seed);
    let gains: Vec<f64> = (0..l * k).map(|_| rng.random_range(0.2..3.0)).collect();
    let psis: Vec<CMatrix> = (0..l * k)
        .map(|_| {
            if rng.random_bool(0.5) {
                CMatrix::zeros(n, n)
            } else {
                let scale = rng.random_range(0.1..1.0);
                random_psd(&mut rng, n, scale)
            }
        })
        .collect();
    let samples = (0..s)
        .map(|_| {
            let mut est = CMatrix::zeros(n * l, k);
            for ap in 0..l {
                for ue in 0..k {
                    for i in 0..n {
                        est[(ap * n + i, ue)] = cgauss(&mut rng) * gains[ap * k + ue].sqrt();
                    }
                }
            }
            let chan = &est + random_cmatrix(&mut rng, n * l, k) * Complex::new(0.1, 0.0);
            CsiSample { channel: chan, estimate: est }
        })
        .collect();
    let clusters = (0..k).map(|_| random_cluster(&mut rng, l)).collect();
    let p = (0..k).map(|_| rng.random_range(0.3..3.0)).collect();
    let sigma = (0..l).map(|_| rng.random_range(0.5..2.0)).collect();
    LocalInstance {
        ens: CsiEnsemble::from_samples(l, n, samples, psis).unwrap(),
        clusters,
        params: MmseParams::new(p, sigma).unwrap(),
    }
}

/// Perfect-CSI ensemble with i.i.d. `CN(0, g)` entries and link gains `g` in `[lo, hi)`.
pub fn random_perfect_ensemble(seed: u64, l: usize, k: usize, n: usize, s: usize, lo: f64, hi: f64) -> CsiEnsemble {
    let mut rng = rng(seed);
    let gains: Vec<f64> = (0..l * k).map(|_| rng.random_range(lo..hi)).collect();
    let chans = (0..s)
        .map(|_| CMatrix::from_fn(n * l, k, |r, c| cgauss(&mut rng) * gains[(r / n) * k + c].sqrt()))
        .collect();
    CsiEnsemble::perfect(l, n, chans).unwrap()
}

/// `Σ_j p_j Ψ_{l,j} + σ_l I`.
pub fn local_regularizer(ens: &CsiEnsemble, params: &MmseParams, l: usize) -> CMatrix {
    let n = ens.antennas;
    let mut r = CMatrix::identity(n, n) * Complex::new(params.sigma[l], 0.0);
    for (j, p) in params.powers.iter().enumerate() {
        r += ens.error_covariance(l, j) * Complex::new(*p, 0.0);
    }
    r
}

/// Per-AP blocks `v_k[s][l]` of a stacked stochastic vector.
pub fn split_blocks(v: &[CVector], n: usize, l: usize) -> Vec<Vec<CVector>> {
    (0..l).map(|ap| v.iter().map(|vs| vs.rows(ap * n, n).into_owned()).collect()).collect()
}

/// Team objective of UE `k` when each AP's CSI is drawn independently from its
/// own empirical marginal:
/// `E‖P^{1/2}Ĥᴴv − e_k‖² + Σ_l E[v_lᴴ(Σ_j p_j Ψ_{l,j} + σ_l I)v_l]`, evaluated
/// in closed form from per-AP first and second moments.
pub fn product_objective(v: &[CVector], ens: &CsiEnsemble, params: &MmseParams, k: usize) -> f64 {
    let (n, l_count, kk, s) = (ens.antennas, ens.num_aps, ens.num_ues, ens.len() as f64);
    let blocks = split_blocks(v, n, l_count);
    let mut total = 0.0;
    for j in 0..kk {
        let mut mean_sum = Complex::new(0.0, 0.0);
        let mut var_sum = 0.0;
        for ap in 0..l_count {
            let vals: Vec<C64> = (0..ens.len())
                .map(|si| (ens.local_estimate(si, ap).column(j).adjoint() * &blocks[ap][si])[(0, 0)])
                .collect();
            let m: C64 = vals.iter().sum::<C64>() / s;
            let second: f64 = vals.iter().map(|x| x.norm_sqr()).sum::<f64>() / s;
            mean_sum += m;
            var_sum += second - m.norm_sqr();
        }
        let target = if j == k { 1.0 } else { 0.0 };
        let pj = params.powers[j];
        total += (mean_sum * pj.sqrt() - Complex::new(target, 0.0)).norm_sqr() + pj * var_sum;
    }
    for ap in 0..l_count {
        let r = local_regularizer(ens, params, ap);
        total += blocks[ap].iter().map(|b| (b.adjoint() * &r * b)[(0, 0)].re).sum::<f64>() / s;
    }
    total
}

/// Dense least-squares solution of the product-measure team problem for UE `k`:
/// one unknown block per (serving AP, sample), rows for every joint sample
/// tuple of the serving APs plus Cholesky rows for the regularizer.
pub fn team_oracle(ens: &CsiEnsemble, params: &MmseParams, cluster: &[usize], k: usize) -> Vec<CVector> {
    let (n, kk, s) = (ens.antennas, ens.num_ues, ens.len());
    let mut aps = cluster.to_vec();
    aps.sort_unstable();
    let m = aps.len();
    let unknowns = m * s * n;
    let tuples = s.pow(m as u32);
    let rows = tuples * kk + m * s * n;
    let mut a = CMatrix::zeros(rows, unknowns);
    let mut b = CMatrix::zeros(rows, 1);
    let w_fit = 1.0 / (tuples as f64).sqrt();
    let w_reg = 1.0 / (s as f64).sqrt();

    for t in 0..tuples {
        let mut idx = Vec::with_capacity(m);
        let mut rem = t;
        for _ in 0..m {
            idx.push(rem % s);
            rem /= s;
        }
        for j in 0..kk {
            let row = t * kk + j;
            for (slot, &ap) in aps.iter().enumerate() {
                let h = ens.local_estimate(idx[slot], ap);
                for i in 0..n {
                    a[(row, (slot * s + idx[slot]) * n + i)] = h[(i, j)].conj() * (params.powers[j].sqrt() * w_fit);
                }
            }
            if j == k {
                b[(row, 0)] = Complex::new(w_fit, 0.0);
            }
        }
    }
    for (slot, &ap) in aps.iter().enumerate() {
        let chol = local_regularizer(ens, params, ap).cholesky().expect("regularizer is positive definite");
        let lh = chol.l().adjoint();
        for si in 0..s {
            let col0 = (slot * s + si) * n;
            let row0 = tuples * kk + col0;
            for r in 0..n {
                for c in 0..n {
                    a[(row0 + r, col0 + c)] = lh[(r, c)] * w_reg;
                }
            }
        }
    }
    let x = a.svd(true, true).solve(&b, 1e-14).expect("svd solve");
    (0..s)
        .map(|si| {
            let mut v = CVector::zeros(ens.dim());
            for (slot, &ap) in aps.iter().enumerate() {
                for i in 0..n {
                    v[ap * n + i] = x[((slot * s + si) * n + i, 0)];
                }
            }
            v
        })
        .collect()
}

/// Random perturbation of `v` that keeps AP blocks outside `cluster` at zero
/// and lets each block vary freely per sample.
pub fn constrained_probe(rng: &mut ChaCha8Rng, v: &[CVector], n: usize, cluster: &[usize], scale: f64) -> Vec<CVector> {
    v.iter()
        .map(|vs| {
            let mut out = vs.clone();
            for &ap in cluster {
                for i in 0..n {
                    out[ap * n + i] += cgauss(rng) * scale;
                }
            }
            out
        })
        .collect()
}

pub fn max_abs_diff(a: &[CVector], b: &[CVector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).camax()).fold(0.0, f64::max)
}

pub fn dmatrix_of(values: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, values)
}
