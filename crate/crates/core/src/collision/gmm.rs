//! Gaussian mixture fit by EM with BIC model selection.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood gains less than this (relative).
    pub tol: f64,
    /// Added to covariance diagonals.
    pub reg: f64,
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iter: 500, tol: 1e-10, reg: 1e-8, restarts: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct Gmm {
    pub means: Vec<Vector3<f64>>,
    pub covs: Vec<Matrix3<f64>>,
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood at each EM iterate, starting from the seeded model.
    pub history: Vec<f64>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn n_free_params(&self) -> usize {
        10 * self.k() - 1
    }

    pub fn bic(&self, n_points: usize) -> f64 {
        -2.0 * self.log_likelihood + self.n_free_params() as f64 * (n_points as f64).ln()
    }
}

struct Component {
    inv: Matrix3<f64>,
    log_norm: f64,
}

fn components(gmm: &Gmm) -> Result<Vec<Component>> {
    gmm.covs
        .iter()
        .zip(&gmm.weights)
        .map(|(c, w)| {
            let chol = c.cholesky().ok_or(Error::NonFinite("mixture covariance"))?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Ok(Component { inv: chol.inverse(), log_norm: w.ln() - 0.5 * (log_det + 3.0 * LN_2PI) })
        })
        .collect()
}

/// E-step: fills `resp` (n × k, row-major) and returns the log-likelihood.
fn e_step(points: &[Vector3<f64>], gmm: &Gmm, resp: &mut [f64]) -> Result<f64> {
    let comps = components(gmm)?;
    let k = comps.len();
    let mut ll = 0.0;
    for (i, p) in points.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (j, c) in comps.iter().enumerate() {
            let d = p - gmm.means[j];
            row[j] = c.log_norm - 0.5 * d.dot(&(c.inv * d));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
        ll += lse;
    }
    if !ll.is_finite() {
        return Err(Error::NonFinite("mixture log-likelihood"));
    }
    Ok(ll)
}

fn m_step(points: &[Vector3<f64>], resp: &[f64], k: usize, reg: f64, fallback: &Matrix3<f64>) -> Gmm {
    let n = points.len();
    let mut gmm = Gmm {
        means: Vec::with_capacity(k),
        covs: Vec::with_capacity(k),
        weights: Vec::with_capacity(k),
        log_likelihood: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if nk < 1e-12 {
            gmm.means.push(points[j % n]);
            gmm.covs.push(*fallback);
            gmm.weights.push(1e-12);
            continue;
        }
        let mean = (0..n).fold(Vector3::zeros(), |acc, i| acc + points[i] * resp[i * k + j]) / nk;
        let mut cov = (0..n).fold(Matrix3::zeros(), |acc, i| {
            let d = points[i] - mean;
            acc + d * d.transpose() * resp[i * k + j]
        }) / nk;
        cov += Matrix3::identity() * reg;
        gmm.means.push(mean);
        gmm.covs.push(cov);
        gmm.weights.push(nk / n as f64);
    }
    let total: f64 = gmm.weights.iter().sum();
    gmm.weights.iter_mut().for_each(|w| *w /= total);
    gmm
}

fn kmeans_pp(points: &[Vector3<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    centers
}

fn covariance(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n
}

fn fit_once(points: &[Vector3<f64>], k: usize, opts: &EmOptions, rng: &mut impl Rng) -> Result<Gmm> {
    let n = points.len();
    let fallback = covariance(points) + Matrix3::identity() * opts.reg;
    let centers = kmeans_pp(points, k, rng);
    let mut resp = vec![0.0; n * k];
    for (i, p) in points.iter().enumerate() {
        let j = (0..k).min_by(|&a, &b| (p - centers[a]).norm_squared().total_cmp(&(p - centers[b]).norm_squared())).unwrap();
        resp[i * k + j] = 1.0;
    }
    let mut gmm = m_step(points, &resp, k, opts.reg, &fallback);
    let mut history = Vec::new();
    for _ in 0..opts.max_iter {
        let ll = e_step(points, &gmm, &mut resp)?;
        gmm.log_likelihood = ll;
        history.push(ll);
        let done = history.len() >= 2 && {
            let prev = history[history.len() - 2];
            (ll - prev).abs() <= opts.tol * ll.abs().max(1.0)
        };
        if done {
            break;
        }
        gmm = m_step(points, &resp, k, opts.reg, &fallback);
    }
    gmm.history = history;
    Ok(gmm)
}

/// Best of `opts.restarts` k-means++-seeded EM runs with `k` components.
pub fn fit_gmm(points: &[Vector3<f64>], k: usize, seed: u64, opts: &EmOptions) -> Result<Gmm> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!("cannot fit {k} components to {} points", points.len())));
    }
    let mut best: Option<Gmm> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ r as u64);
        let g = fit_once(points, k, opts, &mut rng)?;
        if best.as_ref().is_none_or(|b| g.log_likelihood > b.log_likelihood) {
            best = Some(g);
        }
    }
    Ok(best.unwrap())
}

/// Mixture summary of the end-effector's extreme points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mfpee {
    pub mu: Vec<[f64; 3]>,
    pub sigma: Vec<[[f64; 3]; 3]>,
    pub pi: Vec<f64>,
}

impl Mfpee {
    pub fn means(&self) -> Vec<Vector3<f64>> {
        self.mu.iter().map(|m| Vector3::from(*m)).collect()
    }

    pub fn from_gmm(g: &Gmm) -> Self {
        Mfpee {
            mu: g.means.iter().map(|m| [m.x, m.y, m.z]).collect(),
            sigma: g.covs.iter().map(|c| [0, 1, 2].map(|r| [c[(r, 0)], c[(r, 1)], c[(r, 2)]])).collect(),
            pi: g.weights.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSelection {
    pub best: Gmm,
    /// (K, BIC) for every K tried.
    pub bic: Vec<(usize, f64)>,
}

/// Fits K = 1..=k_max and keeps the lowest-BIC mixture.
pub fn select_mixture(points: &[Vector3<f64>], k_max: usize, seed: u64, opts: &EmOptions) -> Result<MixtureSelection> {
    let n = points.len();
    let mut best: Option<(Gmm, f64)> = None;
    let mut bic = Vec::new();
    for k in 1..=k_max.min(n) {
        let g = fit_gmm(points, k, seed, opts)?;
        let b = g.bic(n);
        bic.push((k, b));
        if best.as_ref().is_none_or(|(_, bb)| b < *bb) {
            best = Some((g, b));
        }
    }
    let (best, _) = best.ok_or_else(|| Error::InvalidArgument("empty point set".into()))?;
    Ok(MixtureSelection { best, bic })
}
