use nalgebra::{DMatrix, DVector};

use crate::collision::CollisionModel;
use crate::error::{Error, Result};
use crate::fourier::{boundary_matrix, coefficient_bounds, BoundaryMode, FourierTrajectory};
use crate::linalg::symmetric_eigen;
use crate::urdf::KinematicChain;

/// Keeps the amplitude terms differentiable at zero.
const MAG_SMOOTHING: f64 = 1e-10;

fn smooth_mag(a: f64, b: f64) -> f64 {
    (a * a + b * b + MAG_SMOOTHING * MAG_SMOOTHING).sqrt()
}

/// Augmented-Lagrangian term `(max(0, λ + ρv)² − λ²)/(2ρ)` and its slope.
pub(crate) fn phr(v: f64, lambda: f64, rho: f64) -> (f64, f64) {
    let mu = (lambda + rho * v).max(0.0);
    ((mu * mu - lambda * lambda) / (2.0 * rho), mu)
}

/// Boundary equalities, amplitude sums and coefficient boxes of a Fourier
/// trajectory, with the equalities eliminated through per-joint null-space
/// bases: `c = B·z`.
#[derive(Debug, Clone)]
pub struct TrajectoryConstraints {
    pub mode: BoundaryMode,
    pub template: FourierTrajectory,
    pub q_range: Vec<f64>,
    pub speed: Vec<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    basis: DMatrix<f64>,
}

impl TrajectoryConstraints {
    pub fn new(chain: &KinematicChain, template: &FourierTrajectory, mode: BoundaryMode) -> Result<Self> {
        if template.dof() != chain.dof {
            return Err(Error::dim("trajectory joints", chain.dof, template.dof()));
        }
        let order = template.order();
        let w = template.omega_f;
        let width = 2 * order;
        let e = boundary_matrix(mode, order, w);
        let (values, vectors) = symmetric_eigen(&e.tr_mul(&e));
        let max = values.max().max(f64::MIN_POSITIVE);
        let mut null: Vec<usize> = (0..width).filter(|&k| values[k] <= 1e-12 * max).collect();
        null.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let m = null.len();

        let n = template.n_coeffs();
        let mut basis = DMatrix::zeros(n, m * chain.dof);
        let mut lb = DVector::zeros(n);
        let mut ub = DVector::zeros(n);
        let mut q_range = Vec::with_capacity(chain.dof);
        let mut speed = Vec::with_capacity(chain.dof);
        for (i, body) in chain.bodies.iter().enumerate() {
            let lim = &body.limits;
            let r = lim.range_about(template.q_offset[i]);
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("offset of joint `{}` is not strictly inside its limits", body.joint)));
            }
            if !(lim.dq_min < 0.0 && lim.dq_max > 0.0) {
                return Err(Error::InvalidArgument(format!("velocity limits of joint `{}` must bracket zero", body.joint)));
            }
            q_range.push(r);
            speed.push(lim.speed());
            for l in 0..order {
                let (lo, hi) = coefficient_bounds(r, lim.dq_min, lim.dq_max, w, l, order);
                for is_b in [false, true] {
                    let k = template.coeff_index(i, l, is_b);
                    lb[k] = lo;
                    ub[k] = hi;
                }
            }
            let row0 = template.coeff_index(i, 0, false);
            for (c, &k) in null.iter().enumerate() {
                basis.view_mut((row0, i * m + c), (width, 1)).copy_from(&vectors.column(k));
            }
        }
        Ok(TrajectoryConstraints { mode, template: template.clone(), q_range, speed, lb, ub, basis })
    }

    pub fn n_free(&self) -> usize {
        self.basis.ncols()
    }

    pub fn free_per_joint(&self) -> usize {
        self.basis.ncols() / self.template.dof()
    }

    pub fn expand(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z
    }

    /// Coordinates of the orthogonal projection of `c` onto the null space.
    pub fn reduce(&self, c: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(c)
    }

    /// Columns of the basis belonging to joint `i` (rows are all coefficients).
    pub(crate) fn joint_basis(&self, i: usize) -> DMatrix<f64> {
        let m = self.free_per_joint();
        let order = self.template.order();
        let row0 = self.template.coeff_index(i, 0, false);
        self.basis.view((row0, i * m), (2 * order, m)).into_owned()
    }

    pub fn n_inequalities(&self) -> usize {
        self.template.dof() * (2 + 4 * self.template.order())
    }

    /// Smooth inequality values `v ≤ 0`, per joint
    /// `[position sum, velocity sum, c − ub (2L), lb − c (2L)]`.
    pub fn values(&self, c: &DVector<f64>) -> Vec<f64> {
        let order = self.template.order();
        let w = self.template.omega_f;
        let mut out = Vec::with_capacity(self.n_inequalities());
        for i in 0..self.template.dof() {
            let (mut pos, mut vel) = (-w * self.q_range[i], -self.speed[i]);
            for l in 0..order {
                let mag = smooth_mag(c[self.template.coeff_index(i, l, false)], c[self.template.coeff_index(i, l, true)]);
                pos += mag / (l + 1) as f64;
                vel += mag;
            }
            out.push(pos);
            out.push(vel);
            let block = self.template.coeff_index(i, 0, false);
            for k in block..block + 2 * order {
                out.push(c[k] - self.ub[k]);
            }
            for k in block..block + 2 * order {
                out.push(self.lb[k] - c[k]);
            }
        }
        out
    }

    /// Adds `Σ PHR(v_k)` to the returned value and its gradient to `grad`.
    pub(crate) fn penalty(&self, c: &DVector<f64>, lambda: &[f64], rho: f64, grad: Option<&mut DVector<f64>>) -> f64 {
        let values = self.values(c);
        let mut total = 0.0;
        let mut slopes = vec![0.0; values.len()];
        for (k, v) in values.iter().enumerate() {
            let (p, mu) = phr(*v, lambda[k], rho);
            total += p;
            slopes[k] = mu;
        }
        if let Some(grad) = grad {
            let order = self.template.order();
            let per = 2 + 4 * order;
            for i in 0..self.template.dof() {
                let base = i * per;
                let (mu_pos, mu_vel) = (slopes[base], slopes[base + 1]);
                for l in 0..order {
                    let (ka, kb) = (self.template.coeff_index(i, l, false), self.template.coeff_index(i, l, true));
                    let mag = smooth_mag(c[ka], c[kb]);
                    let s = mu_pos / (l + 1) as f64 + mu_vel;
                    if s != 0.0 {
                        grad[ka] += s * c[ka] / mag;
                        grad[kb] += s * c[kb] / mag;
                    }
                }
                let block = self.template.coeff_index(i, 0, false);
                for k in 0..2 * order {
                    grad[block + k] += slopes[base + 2 + k] - slopes[base + 2 + 2 * order + k];
                }
            }
        }
        total
    }

    /// Largest violation using exact magnitudes and exact equalities.
    pub fn max_violation(&self, c: &DVector<f64>, chain: &KinematicChain) -> f64 {
        let traj = self.template.with_coeffs(c);
        crate::fourier::feasibility_residuals(&traj, chain, self.mode).map(|r| r.max_violation()).unwrap_or(f64::INFINITY)
    }

    /// Largest factor in `[0, 1]` by which joint `i`'s block can be scaled
    /// while keeping the amplitude sums and boxes satisfied.
    pub(crate) fn joint_scale_limit(&self, c: &DVector<f64>, i: usize) -> f64 {
        let order = self.template.order();
        let (mut pos, mut vel) = (0.0, 0.0);
        let mut s: f64 = f64::INFINITY;
        for l in 0..order {
            let (ka, kb) = (self.template.coeff_index(i, l, false), self.template.coeff_index(i, l, true));
            let mag = c[ka].hypot(c[kb]);
            pos += mag / (l + 1) as f64;
            vel += mag;
            for k in [ka, kb] {
                if c[k] > 0.0 {
                    s = s.min(self.ub[k] / c[k]);
                } else if c[k] < 0.0 {
                    s = s.min(self.lb[k] / c[k]);
                }
            }
        }
        if pos > 0.0 {
            s = s.min(self.template.omega_f * self.q_range[i] / pos);
        }
        if vel > 0.0 {
            s = s.min(self.speed[i] / vel);
        }
        s
    }

    /// Scales down any joint block that violates its amplitude sums or box.
    pub fn shrink_to_feasible(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = c.clone();
        let order = self.template.order();
        for i in 0..self.template.dof() {
            let s = self.joint_scale_limit(c, i);
            if s < 1.0 {
                let s = s * (1.0 - 1e-12);
                let block = self.template.coeff_index(i, 0, false);
                for k in block..block + 2 * order {
                    out[k] *= s;
                }
            }
        }
        out
    }
}

/// Collision inequalities `g ≥ margin + slack`, enforced on a time grid.
#[derive(Debug, Clone)]
pub struct CollisionConstraint {
    pub model: CollisionModel,
    pub times: Vec<f64>,
    pub margin: f64,
    /// Extra clearance demanded while optimizing.
    pub slack: f64,
}

impl CollisionConstraint {
    pub fn n_constraints(&self) -> usize {
        self.times.len() * self.model.len()
    }

    /// Smallest `g − margin` over the grid (negative means violated).
    pub fn min_clearance(&self, chain: &KinematicChain, traj: &FourierTrajectory) -> Result<f64> {
        let n = chain.dof;
        let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut worst = f64::INFINITY;
        for &t in &self.times {
            traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
            for g in self.model.residuals(chain, &q)? {
                worst = worst.min(g - self.margin);
            }
        }
        Ok(worst)
    }

    pub(crate) fn values(&self, chain: &KinematicChain, traj: &FourierTrajectory) -> Vec<f64> {
        let n = chain.dof;
        let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut out = Vec::with_capacity(self.n_constraints());
        let target = self.margin + self.slack;
        for &t in &self.times {
            traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
            match self.model.residuals(chain, &q) {
                Ok(g) => out.extend(g.into_iter().map(|g| target - g)),
                Err(_) => out.extend(std::iter::repeat_n(f64::INFINITY, self.model.len())),
            }
        }
        out
    }

    pub(crate) fn penalty(
        &self,
        chain: &KinematicChain,
        traj: &FourierTrajectory,
        lambda: &[f64],
        rho: f64,
        grad: Option<&mut DVector<f64>>,
    ) -> f64 {
        let n = chain.dof;
        let m = self.model.len();
        let target = self.margin + self.slack;
        let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut total = 0.0;
        let mut grad = grad;
        for (s, &t) in self.times.iter().enumerate() {
            traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
            let lam = &lambda[s * m..(s + 1) * m];
            let Ok(g) = self.model.residuals(chain, &q) else {
                return f64::INFINITY;
            };
            let active = g.iter().zip(lam).any(|(g, l)| *l > 0.0 || target - g > 0.0);
            if !active {
                continue;
            }
            let mut slopes = vec![0.0; m];
            for (k, gk) in g.iter().enumerate() {
                let (p, mu) = phr(target - gk, lam[k], rho);
                total += p;
                slopes[k] = mu;
            }
            let Some(grad) = grad.as_deref_mut() else {
                continue;
            };
            if slopes.iter().all(|s| *s == 0.0) {
                continue;
            }
            let Ok((_, jac)) = self.model.residuals_and_jacobian(chain, &q) else {
                continue;
            };
            // d(target − g)/dq = −J
            let mut dq_total = vec![0.0; n];
            for (k, mu) in slopes.iter().enumerate() {
                if *mu != 0.0 {
                    for j in 0..n {
                        dq_total[j] -= mu * jac[(k, j)];
                    }
                }
            }
            for l in 0..traj.order() {
                let basis = traj.basis(t, l);
                for (j, d) in dq_total.iter().enumerate() {
                    if *d != 0.0 {
                        grad[traj.coeff_index(j, l, false)] += d * basis[0][0];
                        grad[traj.coeff_index(j, l, true)] += d * basis[0][1];
                    }
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::urdf::parse_urdf;

    fn chain() -> KinematicChain {
        parse_urdf(include_str!("../../fixtures/two_link.urdf")).unwrap()
    }

    #[test]
    fn basis_spans_boundary_null_space() {
        let chain = chain();
        for (order, mode) in [(2, BoundaryMode::Derived), (5, BoundaryMode::Derived), (5, BoundaryMode::Literal)] {
            let w = std::f64::consts::TAU * 0.1;
            let tpl = FourierTrajectory::zeros(2, order, w, FourierTrajectory::mid_range_offset(&chain)).unwrap();
            let cons = TrajectoryConstraints::new(&chain, &tpl, mode).unwrap();
            assert_eq!(cons.free_per_joint(), 2 * order - 3);
            let e = boundary_matrix(mode, order, w);
            for i in 0..2 {
                let b = cons.joint_basis(i);
                assert!((&e * &b).amax() < 1e-12);
                let gram = b.tr_mul(&b);
                assert!((gram - DMatrix::identity(b.ncols(), b.ncols())).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn penalty_gradient_matches_differences() {
        let chain = chain();
        let w = std::f64::consts::TAU * 0.1;
        let tpl = FourierTrajectory::zeros(2, 3, w, FourierTrajectory::mid_range_offset(&chain)).unwrap();
        let cons = TrajectoryConstraints::new(&chain, &tpl, BoundaryMode::Derived).unwrap();
        let c = DVector::from_fn(tpl.n_coeffs(), |k, _| 0.6 * ((k as f64) * 1.3).sin());
        let lambda: Vec<f64> = (0..cons.n_inequalities()).map(|k| (k % 3) as f64 * 0.1).collect();
        let mut g = DVector::zeros(c.len());
        cons.penalty(&c, &lambda, 7.0, Some(&mut g));
        for k in 0..c.len() {
            let h = 1e-6;
            let mut p = c.clone();
            p[k] += h;
            let mut m = c.clone();
            m[k] -= h;
            let fd = (cons.penalty(&p, &lambda, 7.0, None) - cons.penalty(&m, &lambda, 7.0, None)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn shrink_restores_feasibility() {
        let chain = chain();
        let w = std::f64::consts::TAU * 0.1;
        let tpl = FourierTrajectory::zeros(2, 3, w, FourierTrajectory::mid_range_offset(&chain)).unwrap();
        let cons = TrajectoryConstraints::new(&chain, &tpl, BoundaryMode::Derived).unwrap();
        let z = DVector::from_element(cons.n_free(), 3.0);
        let c = cons.expand(&z);
        assert!(cons.max_violation(&c, &chain) > 0.1);
        let fixed = cons.shrink_to_feasible(&c);
        assert!(cons.max_violation(&fixed, &chain) <= 1e-12);
    }
}
