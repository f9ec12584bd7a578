//! Box-constrained least-squares identification of base parameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_params::BaseProjection;
use crate::dataset::Dataset;
use crate::dynamics::{is_friction_index, StateSample, StdParams, PARAMS_PER_JOINT};
use crate::error::{Error, Result};
use crate::excitation::condition_number;
use crate::urdf::KinematicChain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsOptions {
    /// Relative half-width of the box around each nominal inertial parameter.
    pub mu_margin: f64,
    /// Lower limit on the magnitude the margin is taken of.
    pub floor: f64,
    pub coulomb_cap: f64,
    pub viscous_cap: f64,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        BoundsOptions { mu_margin: 0.5, floor: 1e-3, coulomb_cap: 5.0, viscous_cap: 5.0 }
    }
}

/// Box on the standard parameters: inertial entries `nom ± margin·max(|nom|, floor)`,
/// friction entries `[0, cap]`.
pub fn standard_bounds(nominal: &StdParams, opts: &BoundsOptions) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(opts.mu_margin >= 0.0 && opts.floor >= 0.0 && opts.coulomb_cap >= 0.0 && opts.viscous_cap >= 0.0) {
        return Err(Error::InvalidArgument("bound margins and caps must be non-negative".into()));
    }
    let n = nominal.0.len();
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    for j in 0..n {
        if is_friction_index(j) {
            ub[j] = if j % PARAMS_PER_JOINT == 10 { opts.coulomb_cap } else { opts.viscous_cap };
        } else {
            let v = nominal.0[j];
            let w = opts.mu_margin * v.abs().max(opts.floor);
            lb[j] = v - w;
            ub[j] = v + w;
        }
    }
    Ok((lb, ub))
}

/// Image of a box under `x ↦ Kx`, row by row.
pub fn map_bounds(k: &DMatrix<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut lo = DVector::zeros(k.nrows());
    let mut hi = DVector::zeros(k.nrows());
    for r in 0..k.nrows() {
        for j in 0..k.ncols() {
            let (a, b) = (k[(r, j)] * lb[j], k[(r, j)] * ub[j]);
            lo[r] += a.min(b);
            hi[r] += a.max(b);
        }
    }
    (lo, hi)
}

/// Base-parameter box implied by the URDF nominal values.
pub fn build_bounds(chain: &KinematicChain, proj: &BaseProjection, opts: &BoundsOptions) -> Result<(DVector<f64>, DVector<f64>)> {
    let (lb, ub) = standard_bounds(&StdParams::nominal(chain), opts)?;
    let (lo, hi) = map_bounds(&proj.k, &lb, &ub);
    let rows: Vec<usize> = (0..lo.len()).filter(|&r| !(lo[r] < hi[r])).collect();
    if !rows.is_empty() {
        return Err(Error::EmptyBox { rows });
    }
    Ok((lo, hi))
}

/// A least-squares system `min ‖Ax − b‖` reduced to its triangular factor:
/// `‖Ax − b‖² = ‖Rx − c‖² + const`.
#[derive(Debug, Clone)]
pub struct LsSystem {
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    pub rows: usize,
}

fn triangularize(a: DMatrix<f64>, mut b: DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.ncols();
    let qr = a.qr();
    qr.q_tr_mul(&mut b);
    let r = qr.r();
    let k = r.nrows().min(n);
    (r, b.rows(0, k).into_owned())
}

impl LsSystem {
    pub fn from_dense(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dim("right-hand side", a.nrows(), b.len()));
        }
        let rows = a.nrows();
        let (r, c) = triangularize(a, b);
        Ok(LsSystem { r, c, rows }.padded())
    }

    fn padded(mut self) -> Self {
        let n = self.r.ncols();
        if self.r.nrows() < n {
            self.r = self.r.resize_vertically(n, 0.0);
            self.c = self.c.resize_vertically(n, 0.0);
        }
        self
    }

    /// Merges two systems over the same unknowns.
    pub fn stack(&self, other: &LsSystem) -> LsSystem {
        let n = self.r.ncols();
        let (m1, m2) = (self.r.nrows(), other.r.nrows());
        let mut a = DMatrix::zeros(m1 + m2, n);
        a.rows_mut(0, m1).copy_from(&self.r);
        a.rows_mut(m1, m2).copy_from(&other.r);
        let mut b = DVector::zeros(m1 + m2);
        b.rows_mut(0, m1).copy_from(&self.c);
        b.rows_mut(m1, m2).copy_from(&other.c);
        let (r, c) = triangularize(a, b);
        LsSystem { r, c, rows: self.rows + other.rows }.padded()
    }

    pub fn n(&self) -> usize {
        self.r.ncols()
    }

    pub fn column_norms(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.r.column_iter().map(|c| c.norm()))
    }

    /// Condition numbers of `A` with unit-norm columns and as given.
    pub fn conditions(&self) -> (f64, f64) {
        let norms = self.column_norms();
        let mut scaled = self.r.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            if norms[j] > 0.0 {
                col /= norms[j];
            }
        }
        (condition_number(&scaled), condition_number(&self.r))
    }
}

const CHUNK: usize = 256;

fn usable_samples(ds: &Dataset) -> Vec<&StateSample> {
    ds.usable().collect()
}

/// Triangular factor of the stacked base regressor and torques, assembled in
/// parallel chunks and merged in sample order.
pub fn assemble(chain: &KinematicChain, proj: &BaseProjection, samples: &[&StateSample]) -> Result<LsSystem> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples with finite states and torques".into()));
    }
    let parts = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let owned: Vec<StateSample> = chunk.iter().map(|s| (*s).clone()).collect();
            let a = proj.stacked_base_regressor(chain, &owned)?;
            let b = DVector::from_iterator(a.nrows(), owned.iter().flat_map(|s| s.tau.as_ref().unwrap().iter().copied()));
            LsSystem::from_dense(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = parts.into_iter();
    let first = it.next().unwrap();
    Ok(it.fold(first, |acc, p| acc.stack(&p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvlsOptions {
    /// Outer iterations; zero means `3n + 10`.
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Singular-value ratio below which the system is treated as rank deficient.
    pub rank_tol: f64,
    pub ridge: f64,
}

impl Default for BvlsOptions {
    fn default() -> Self {
        BvlsOptions { max_iter: 0, kkt_tol: 1e-8, rank_tol: 1e-12, ridge: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvlsSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_satisfied: bool,
    pub regularized: bool,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum State {
    Free,
    Lower,
    Upper,
}

fn solve_free(r: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, st: &[State]) -> DVector<f64> {
    let free: Vec<usize> = (0..st.len()).filter(|&j| st[j] == State::Free).collect();
    let mut rhs = c.clone();
    for j in 0..st.len() {
        if st[j] != State::Free {
            rhs.axpy(-x[j], &r.column(j), 1.0);
        }
    }
    let mut z = x.clone();
    if free.is_empty() {
        return z;
    }
    let rf = r.select_columns(&free);
    let k = free.len();
    let qr = rf.qr();
    qr.q_tr_mul(&mut rhs);
    let sol = qr.r().solve_upper_triangular(&rhs.rows(0, k).into_owned()).unwrap_or_else(|| DVector::from_element(k, f64::NAN));
    for (p, &j) in free.iter().enumerate() {
        z[j] = sol[p];
    }
    z
}

/// `min ‖Rx − c‖` subject to `lb ≤ x ≤ ub` by an active-set method that
/// frees one bound variable at a time and walks back to the box whenever the
/// free subproblem leaves it. Infinite bounds are allowed.
pub fn bvls(sys: &LsSystem, lb: &DVector<f64>, ub: &DVector<f64>, opts: &BvlsOptions) -> Result<BvlsSolution> {
    let n = sys.n();
    if lb.len() != n || ub.len() != n {
        return Err(Error::dim("parameter bounds", n, lb.len().min(ub.len())));
    }
    if let Some(j) = (0..n).find(|&j| !(lb[j] <= ub[j])) {
        return Err(Error::EmptyBox { rows: vec![j] });
    }

    // Work in unit-norm column coordinates.
    let norms = sys.column_norms().map(|v| if v > 0.0 { v } else { 1.0 });
    let mut r = sys.r.clone();
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col /= norms[j];
    }
    let mut c = sys.c.clone();
    let sv = r.singular_values();
    let regularized = !(sv.min() > opts.rank_tol * sv.max());
    if regularized {
        log::warn!("regressor is rank deficient (singular ratio {:.3e}); adding a ridge of {:e}", sv.min() / sv.max(), opts.ridge);
        let mut a = DMatrix::zeros(2 * n, n);
        a.rows_mut(0, n).copy_from(&r);
        a.rows_mut(n, n).fill_diagonal(opts.ridge.sqrt());
        let b = c.clone().resize_vertically(2 * n, 0.0);
        let (rr, cc) = triangularize(a, b);
        r = rr;
        c = cc;
    }
    let l = lb.component_mul(&norms);
    let u = ub.component_mul(&norms);

    let mut x = DVector::zeros(n);
    let mut st = vec![State::Free; n];
    for j in 0..n {
        x[j] = 0.0f64.clamp(l[j], u[j]);
        if x[j] == l[j] {
            st[j] = State::Lower;
        } else if x[j] == u[j] {
            st[j] = State::Upper;
        }
    }

    let grad = |x: &DVector<f64>| r.tr_mul(&(&r * x - &c));
    let scale = r.tr_mul(&c).amax().max(f64::MIN_POSITIVE);
    let tol = opts.kkt_tol * scale;
    let max_iter = if opts.max_iter == 0 { 3 * n + 10 } else { opts.max_iter };

    let mut iterations = 0;
    let mut converged = false;
    let mut skip: Vec<usize> = Vec::new();
    loop {
        // Inner loop: optimum over the free set, clipping at the box.
        for _ in 0..=n {
            let z = solve_free(&r, &c, &x, &st);
            let mut alpha = 1.0;
            let mut hit = None;
            for j in 0..n {
                if st[j] != State::Free {
                    continue;
                }
                let d = z[j] - x[j];
                let (a, bound) = if z[j] <= l[j] {
                    ((l[j] - x[j]) / d, State::Lower)
                } else if z[j] >= u[j] {
                    ((u[j] - x[j]) / d, State::Upper)
                } else {
                    continue;
                };
                let a = if a.is_finite() { a.clamp(0.0, 1.0) } else { 0.0 };
                if hit.is_none() || a < alpha {
                    alpha = a;
                    hit = Some((j, bound));
                }
            }
            match hit {
                None => {
                    x = z;
                    break;
                }
                Some((j0, b0)) => {
                    x += (&z - &x) * alpha;
                    for j in 0..n {
                        if st[j] != State::Free {
                            continue;
                        }
                        if j == j0 {
                            st[j] = b0;
                        } else if x[j] <= l[j] {
                            st[j] = State::Lower;
                        } else if x[j] >= u[j] {
                            st[j] = State::Upper;
                        }
                        match st[j] {
                            State::Lower => x[j] = l[j],
                            State::Upper => x[j] = u[j],
                            State::Free => {}
                        }
                    }
                }
            }
        }

        iterations += 1;
        if iterations > max_iter {
            break;
        }
        let g = grad(&x);
        let candidate = (0..n)
            .filter(|j| !skip.contains(j))
            .filter_map(|j| match st[j] {
                State::Lower if g[j] < -tol => Some((j, -g[j])),
                State::Upper if g[j] > tol => Some((j, g[j])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = candidate else {
            converged = true;
            break;
        };
        let prev = st[j];
        st[j] = State::Free;
        let z = solve_free(&r, &c, &x, &st);
        let moves_inward = match prev {
            State::Lower => z[j] > l[j],
            State::Upper => z[j] < u[j],
            State::Free => true,
        };
        if moves_inward {
            skip.clear();
        } else {
            st[j] = prev;
            skip.push(j);
        }
    }

    let g = grad(&x);
    let kkt_satisfied = (0..n).all(|j| match st[j] {
        State::Free => g[j].abs() <= tol,
        State::Lower => g[j] >= -tol,
        State::Upper => g[j] <= tol,
    });
    Ok(BvlsSolution {
        x: x.component_div(&norms),
        iterations,
        converged,
        kkt_satisfied,
        regularized,
        at_lower: (0..n).filter(|&j| st[j] == State::Lower).collect(),
        at_upper: (0..n).filter(|&j| st[j] == State::Upper).collect(),
    })
}

/// Stacked base regressor, torques and parameter box.
#[derive(Debug, Clone)]
pub struct IdentProblem {
    pub yb: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl IdentProblem {
    pub fn solve(&self, opts: &BvlsOptions) -> Result<BvlsSolution> {
        if self.lb.len() != self.yb.ncols() {
            return Err(Error::dim("parameter bounds", self.yb.ncols(), self.lb.len()));
        }
        bvls(&LsSystem::from_dense(self.yb.clone(), self.tau.clone())?, &self.lb, &self.ub, opts)
    }
}

/// Torque prediction quality of a parameter vector on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueFit {
    pub n_samples: usize,
    pub torque_rms_per_joint: Vec<f64>,
    pub max_abs_error_per_joint: Vec<f64>,
    pub cond_scaled: f64,
    pub cond_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub labels: Vec<String>,
    pub theta_b_hat: Vec<f64>,
    #[serde(flatten)]
    pub fit: TorqueFit,
    /// Indices whose estimate sits on a bound.
    pub active_bounds: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_satisfied: bool,
    pub regularized: bool,
}

fn torque_fit(
    chain: &KinematicChain,
    proj: &BaseProjection,
    theta_b: &DVector<f64>,
    samples: &[&StateSample],
    sys: &LsSystem,
) -> Result<TorqueFit> {
    let dof = chain.dof;
    let per_chunk = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sq = vec![0.0; dof];
            let mut mx = vec![0.0f64; dof];
            for s in chunk {
                let y = proj.base_regressor(chain, s.q.as_slice(), s.dq.as_slice(), s.ddq.as_slice())?;
                let err = y * theta_b - s.tau.as_ref().unwrap();
                for i in 0..dof {
                    sq[i] += err[i] * err[i];
                    mx[i] = mx[i].max(err[i].abs());
                }
            }
            Ok((sq, mx))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sq = vec![0.0; dof];
    let mut mx = vec![0.0f64; dof];
    for (s, m) in per_chunk {
        for i in 0..dof {
            sq[i] += s[i];
            mx[i] = mx[i].max(m[i]);
        }
    }
    let (cond_scaled, cond_raw) = sys.conditions();
    Ok(TorqueFit {
        n_samples: samples.len(),
        torque_rms_per_joint: sq.iter().map(|s| (s / samples.len() as f64).sqrt()).collect(),
        max_abs_error_per_joint: mx,
        cond_scaled,
        cond_raw,
    })
}

/// Fits the base parameters to every usable sample of `ds` within the box.
pub fn identify(
    chain: &KinematicChain,
    proj: &BaseProjection,
    ds: &Dataset,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    opts: &BvlsOptions,
) -> Result<IdentReport> {
    if ds.dof != chain.dof {
        return Err(Error::dim("dataset joints", chain.dof, ds.dof));
    }
    let samples = usable_samples(ds);
    let sys = assemble(chain, proj, &samples)?;
    let sol = bvls(&sys, lb, ub, opts)?;
    if !sol.converged || !sol.kkt_satisfied {
        log::warn!("bounded least squares stopped after {} iterations without meeting optimality checks", sol.iterations);
    }
    let fit = torque_fit(chain, proj, &sol.x, &samples, &sys)?;
    let mut active_bounds: Vec<usize> = sol.at_lower.iter().chain(&sol.at_upper).copied().collect();
    active_bounds.sort_unstable();
    Ok(IdentReport {
        labels: proj.labels(),
        theta_b_hat: sol.x.iter().copied().collect(),
        fit,
        active_bounds,
        iterations: sol.iterations,
        converged: sol.converged,
        kkt_satisfied: sol.kkt_satisfied,
        regularized: sol.regularized,
    })
}

/// Predicts torques on a held-out dataset with identified base parameters.
pub fn validate(chain: &KinematicChain, proj: &BaseProjection, theta_b_hat: &DVector<f64>, ds: &Dataset) -> Result<TorqueFit> {
    if ds.dof != chain.dof {
        return Err(Error::dim("dataset joints", chain.dof, ds.dof));
    }
    if theta_b_hat.len() != proj.rank {
        return Err(Error::dim("base parameters", proj.rank, theta_b_hat.len()));
    }
    let samples = usable_samples(ds);
    let sys = assemble(chain, proj, &samples)?;
    torque_fit(chain, proj, theta_b_hat, &samples, &sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, j| rng.gen_range(-1.0..1.0) * 10f64.powi(j as i32 % 4 - 2));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        (a, b)
    }

    fn objective(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (a * x - b).norm_squared()
    }

    #[test]
    fn unbounded_matches_plain_least_squares() {
        let (a, b) = random_problem(40, 8, 1);
        let inf = DVector::from_element(8, f64::INFINITY);
        let sol = bvls(&LsSystem::from_dense(a.clone(), b.clone()).unwrap(), &-&inf, &inf, &BvlsOptions::default()).unwrap();
        let reference = a.clone().svd(true, true).solve(&b, 0.0).unwrap();
        assert!((&sol.x - &reference).amax() <= 1e-8 * reference.amax());
        assert!(sol.converged && sol.kkt_satisfied && sol.at_lower.is_empty() && sol.at_upper.is_empty());
    }

    #[test]
    fn clamped_component_satisfies_sign_condition() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![2.0, -0.5, 0.3]);
        let lb = DVector::from_vec(vec![-1.0, -1.0, -1.0]);
        let ub = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let sol = bvls(&LsSystem::from_dense(a, b).unwrap(), &lb, &ub, &BvlsOptions::default()).unwrap();
        assert!((&sol.x - DVector::from_vec(vec![1.0, -0.5, 0.3])).amax() < 1e-14);
        assert_eq!(sol.x[0], 1.0);
        assert_eq!(sol.at_upper, vec![0]);
        assert!(sol.kkt_satisfied);
    }

    #[test]
    fn matches_brute_force_on_small_boxes() {
        // Enumerate every face of the box: the optimum is the best feasible
        // unconstrained solution over the free coordinates of some face.
        for seed in 0..20 {
            let (a, b) = random_problem(12, 4, 100 + seed);
            let lb = DVector::from_element(4, -0.3);
            let ub = DVector::from_element(4, 0.4);
            let sol = bvls(&LsSystem::from_dense(a.clone(), b.clone()).unwrap(), &lb, &ub, &BvlsOptions::default()).unwrap();
            let mut best = f64::INFINITY;
            for code in 0..81u32 {
                let mut fixed = DVector::zeros(4);
                let mut free = Vec::new();
                let mut cc = code;
                for j in 0..4 {
                    match cc % 3 {
                        0 => free.push(j),
                        1 => fixed[j] = lb[j],
                        _ => fixed[j] = ub[j],
                    }
                    cc /= 3;
                }
                let mut x = fixed.clone();
                if !free.is_empty() {
                    let af = a.select_columns(&free);
                    let rhs = &b - &a * &fixed;
                    let z = af.svd(true, true).solve(&rhs, 0.0).unwrap();
                    for (p, &j) in free.iter().enumerate() {
                        x[j] = z[p];
                    }
                }
                if (0..4).all(|j| x[j] >= lb[j] - 1e-12 && x[j] <= ub[j] + 1e-12) {
                    best = best.min(objective(&a, &b, &x));
                }
            }
            let got = objective(&a, &b, &sol.x);
            assert!(got <= best * (1.0 + 1e-10) + 1e-14, "seed {seed}: {got} vs {best}");
            assert!(sol.kkt_satisfied);
        }
    }

    #[test]
    fn rank_deficient_system_is_regularized() {
        let mut a = DMatrix::from_fn(10, 3, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0);
        let col = a.column(0).into_owned();
        a.set_column(2, &(col * 2.0));
        let b = DVector::from_fn(10, |i, _| i as f64);
        let inf = DVector::from_element(3, f64::INFINITY);
        let sol = bvls(&LsSystem::from_dense(a, b).unwrap(), &-&inf, &inf, &BvlsOptions::default()).unwrap();
        assert!(sol.regularized);
        assert!(sol.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_map_keeps_bounds() {
        let lb = DVector::from_vec(vec![-1.0, 0.0, 2.0]);
        let ub = DVector::from_vec(vec![1.0, 3.0, 4.0]);
        let (lo, hi) = map_bounds(&DMatrix::identity(3, 3), &lb, &ub);
        assert_eq!((lo, hi), (lb, ub));
    }

    #[test]
    fn zero_margin_gives_empty_box() {
        let chain = crate::urdf::parse_urdf(include_str!("../fixtures/two_link.urdf")).unwrap();
        let proj = crate::base_params::compute_base_projection(&chain, 200, 0).unwrap();
        let opts = BoundsOptions { mu_margin: 0.0, floor: 0.0, ..Default::default() };
        match build_bounds(&chain, &proj, &opts) {
            Err(Error::EmptyBox { rows }) => assert!(!rows.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stacking_equals_dense_factorization() {
        let (a, b) = random_problem(30, 5, 9);
        let whole = LsSystem::from_dense(a.clone(), b.clone()).unwrap();
        let top = LsSystem::from_dense(a.rows(0, 3).into_owned(), b.rows(0, 3).into_owned()).unwrap();
        let bottom = LsSystem::from_dense(a.rows(3, 27).into_owned(), b.rows(3, 27).into_owned()).unwrap();
        let merged = top.stack(&bottom);
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05, 1.0]);
        let lhs = (&whole.r * &x - &whole.c).norm_squared();
        let rhs = (&merged.r * &x - &merged.c).norm_squared();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.max(1.0));
    }
}
