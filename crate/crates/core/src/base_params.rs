//! Reduction of the standard parameters to a minimal identifiable set.
//!
//! A regressor is stacked over random states and factored with Householder
//! QR. Columns are visited friction-first, then in natural order; a column
//! whose residual norm (after the reflections of all previously accepted
//! columns) falls below `tol · max‖column‖` is dependent. For dependent
//! columns `Ȳ_d = Ȳ_b·K_d` with `K_d = R₁⁻¹R₂`, so
//! `Ȳθ = Ȳ_b(θ_b-part + K_d·θ_d) = Ȳ_b·Kθ`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, is_friction_index, param_label, StateSample, StdParams, PARAMS_PER_JOINT};
use crate::error::{Error, Result};
use crate::urdf::KinematicChain;

pub const DEFAULT_RANK_TOL: f64 = 1e-7;
pub const DEFAULT_ACCEL_RANGE: f64 = 5.0;
pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseParamOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
    /// Joint accelerations are drawn uniformly in `±accel_range` rad/s².
    pub accel_range: f64,
}

impl Default for BaseParamOptions {
    fn default() -> Self {
        BaseParamOptions { n_samples: DEFAULT_SAMPLES, seed: 0, rank_tol: DEFAULT_RANK_TOL, accel_range: DEFAULT_ACCEL_RANGE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProjection {
    /// Independent standard-parameter columns, ascending.
    pub b_idx: Vec<usize>,
    /// Dependent columns, ascending.
    pub d_idx: Vec<usize>,
    /// `|b| × |d|` dependency coefficients.
    pub kd: DMatrix<f64>,
    /// `|b| × n_params`, `K = P_bᵀ + K_d·P_dᵀ`.
    pub k: DMatrix<f64>,
    pub rank: usize,
    pub n_params: usize,
}

/// Base parameter vector `θ_b = Kθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaseParams(pub DVector<f64>);

/// Draws states uniformly: positions inside the limits, velocities inside
/// the speed limits, accelerations in `±accel_range`.
pub fn random_states<R: Rng>(chain: &KinematicChain, n: usize, accel_range: f64, rng: &mut R) -> Vec<StateSample> {
    (0..n)
        .map(|k| {
            let q = DVector::from_iterator(chain.dof, chain.limits().map(|l| rng.gen_range(l.q_min..l.q_max)));
            let dq = DVector::from_iterator(chain.dof, chain.limits().map(|l| rng.gen_range(l.dq_min..l.dq_max)));
            let ddq = DVector::from_iterator(chain.dof, (0..chain.dof).map(|_| rng.gen_range(-accel_range..accel_range)));
            StateSample { t: k as f64, q, dq, ddq, tau: None }
        })
        .collect()
}

/// Applies the reflector `I − β·v·vᵀ` (acting on rows `k..`) to column `c`.
fn reflect(a: &mut DMatrix<f64>, v: &[f64], beta: f64, k: usize, c: usize) {
    let mut col = a.column_mut(c);
    let s: f64 = v.iter().zip(col.rows(k, v.len()).iter()).map(|(x, y)| x * y).sum();
    let s = beta * s;
    for (i, vi) in v.iter().enumerate() {
        col[k + i] -= s * vi;
    }
}

/// Selects independent columns of `y` and computes the dependency matrix.
///
/// `forced` columns are visited first and kept whenever they are not
/// numerically zero.
pub fn select_base_columns(y: &DMatrix<f64>, tol: f64, forced: &[usize]) -> Result<BaseProjection> {
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stacked regressor"));
    }
    let (m, n) = y.shape();
    let reference = (0..n).map(|j| y.column(j).norm()).fold(0.0, f64::max);
    if reference == 0.0 {
        return Err(Error::RankCollapse);
    }
    let threshold = tol * reference;
    let mut order: Vec<usize> = forced.to_vec();
    order.extend((0..n).filter(|j| !forced.contains(j)));

    let mut a = y.clone();
    let mut indep = Vec::new();
    let mut dep = Vec::new();
    let mut k = 0;
    for (pos, &col) in order.iter().enumerate() {
        if k == m {
            dep.push(col);
            continue;
        }
        let norm = a.column(col).rows(k, m - k).norm();
        let is_forced = pos < forced.len();
        if norm <= threshold && !(is_forced && norm > 1e-14 * reference) {
            if is_forced {
                warn!("forced column {} is numerically zero; treating as dependent", param_label(col));
            }
            dep.push(col);
            continue;
        }
        // Householder vector mapping the column tail onto ±norm·e_k.
        let x0 = a[(k, col)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a.column(col).rows(k, m - k).iter().copied().collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            let beta = 2.0 / vnorm2;
            for &c in order[pos..].iter().chain(dep.iter()) {
                reflect(&mut a, &v, beta, k, c);
            }
        }
        indep.push(col);
        k += 1;
    }
    let rank = indep.len();
    if rank == 0 {
        return Err(Error::RankCollapse);
    }

    // R₁ (rank × rank, upper triangular in visiting order) and R₂.
    let r1 = DMatrix::from_fn(rank, rank, |i, j| a[(i, indep[j])]);
    let r2 = DMatrix::from_fn(rank, dep.len(), |i, j| a[(i, dep[j])]);
    let kd_visit = r1.solve_upper_triangular(&r2).ok_or(Error::RankCollapse)?;
    if kd_visit.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("dependency coefficients"));
    }

    // Reorder rows/columns to ascending parameter index.
    let mut b_perm: Vec<usize> = (0..rank).collect();
    b_perm.sort_by_key(|&i| indep[i]);
    let mut d_perm: Vec<usize> = (0..dep.len()).collect();
    d_perm.sort_by_key(|&i| dep[i]);
    let b_idx: Vec<usize> = b_perm.iter().map(|&i| indep[i]).collect();
    let d_idx: Vec<usize> = d_perm.iter().map(|&i| dep[i]).collect();
    let kd = DMatrix::from_fn(rank, d_idx.len(), |i, j| kd_visit[(b_perm[i], d_perm[j])]);

    let mut kmat = DMatrix::zeros(rank, n);
    for (i, &b) in b_idx.iter().enumerate() {
        kmat[(i, b)] = 1.0;
        for (j, &d) in d_idx.iter().enumerate() {
            kmat[(i, d)] = kd[(i, j)];
        }
    }
    Ok(BaseProjection { b_idx, d_idx, kd, k: kmat, rank, n_params: n })
}

/// Friction columns of a chain, which are always kept.
pub fn friction_columns(dof: usize) -> Vec<usize> {
    (0..PARAMS_PER_JOINT * dof).filter(|&j| is_friction_index(j)).collect()
}

pub fn compute_base_projection(chain: &KinematicChain, n_samples: usize, seed: u64) -> Result<BaseProjection> {
    compute_base_projection_with(chain, &BaseParamOptions { n_samples, seed, ..Default::default() })
}

fn stacked_random_regressor(chain: &KinematicChain, opts: &BaseParamOptions) -> Result<DMatrix<f64>> {
    let needed = 2 * PARAMS_PER_JOINT * chain.dof;
    if opts.n_samples * chain.dof < needed {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for {} parameters",
            needed.div_ceil(chain.dof),
            PARAMS_PER_JOINT * chain.dof
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let states = random_states(chain, opts.n_samples, opts.accel_range, &mut rng);
    dynamics::stacked_regressor(chain, &states)
}

pub fn compute_base_projection_with(chain: &KinematicChain, opts: &BaseParamOptions) -> Result<BaseProjection> {
    let y = stacked_random_regressor(chain, opts)?;
    let forced = friction_columns(chain.dof);
    let proj = select_base_columns(&y, opts.rank_tol, &forced)?;
    for alt in [1e-8, 1e-6] {
        let other = select_base_columns(&y, alt, &forced)?;
        if other.rank != proj.rank {
            warn!(
                "chain `{}` is ill-conditioned: rank {} at tol {alt:e} vs {} at tol {:e}",
                chain.name, other.rank, proj.rank, opts.rank_tol
            );
        }
    }
    Ok(proj)
}

/// Ranks at the two probe tolerances 1e-8 and 1e-6, used to flag chains
/// whose rank depends on the threshold.
pub fn rank_sensitivity(chain: &KinematicChain, opts: &BaseParamOptions) -> Result<(usize, usize)> {
    let y = stacked_random_regressor(chain, opts)?;
    let forced = friction_columns(chain.dof);
    Ok((select_base_columns(&y, 1e-8, &forced)?.rank, select_base_columns(&y, 1e-6, &forced)?.rank))
}

impl BaseProjection {
    pub fn project(&self, params: &StdParams) -> Result<BaseParams> {
        if params.0.len() != self.n_params {
            return Err(Error::dim("standard parameters", self.n_params, params.0.len()));
        }
        Ok(BaseParams(&self.k * &params.0))
    }

    /// Columns `b_idx` of a full regressor (any number of rows).
    pub fn select(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.n_params {
            return Err(Error::dim("regressor columns", self.n_params, y.ncols()));
        }
        Ok(y.select_columns(&self.b_idx))
    }

    pub fn base_regressor(&self, chain: &KinematicChain, q: &[f64], dq: &[f64], ddq: &[f64]) -> Result<DMatrix<f64>> {
        self.select(&dynamics::regressor(chain, q, dq, ddq)?)
    }

    pub fn stacked_base_regressor(&self, chain: &KinematicChain, samples: &[StateSample]) -> Result<DMatrix<f64>> {
        self.select(&dynamics::stacked_regressor(chain, samples)?)
    }

    /// Labels of the base parameters, named after their representative
    /// standard parameter.
    pub fn labels(&self) -> Vec<String> {
        self.b_idx.iter().map(|&j| param_label(j)).collect()
    }

    /// Whether base parameter `i` represents a friction coefficient.
    pub fn is_friction(&self, i: usize) -> bool {
        is_friction_index(self.b_idx[i])
    }
}
