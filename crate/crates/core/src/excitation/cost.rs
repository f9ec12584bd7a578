//! Condition-number surrogate `r_c = ½(‖H‖_F + ‖H⁻¹‖_F)` with `H = ȲᵀȲ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::base_params::BaseProjection;
use crate::dynamics::{fill_regressor, viscous_index, Kinematics, PARAMS_PER_JOINT};
use crate::error::{Error, Result};
use crate::fourier::FourierTrajectory;
use crate::linalg::symmetric_eigen;
use crate::urdf::KinematicChain;

/// `H` counts as singular once `λ_min/λ_max` drops below this.
pub const SINGULAR_RATIO: f64 = 1e-14;

/// Velocities this close to zero are treated as exactly zero when forming
/// the Coulomb columns, so rest points do not flip sign with round-off.
pub const DQ_ZERO_TOL: f64 = 1e-9;

const Q_STEP: f64 = 1e-6;

struct Spectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    norm_h: f64,
    norm_hinv: f64,
}

impl Spectrum {
    fn of(y: &DMatrix<f64>) -> Option<Self> {
        if y.nrows() < y.ncols() || y.ncols() == 0 || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let h = y.tr_mul(y);
        let (values, vectors) = symmetric_eigen(&h);
        let max = values.max();
        let min = values.min();
        if !(max > 0.0) || min <= SINGULAR_RATIO * max {
            return None;
        }
        let norm_h = values.iter().map(|l| l * l).sum::<f64>().sqrt();
        let norm_hinv = values.iter().map(|l| l.powi(-2)).sum::<f64>().sqrt();
        Some(Spectrum { values, vectors, norm_h, norm_hinv })
    }

    fn value(&self) -> f64 {
        0.5 * (self.norm_h + self.norm_hinv)
    }

    /// `min_α r_c(αY) = √(‖H‖_F·‖H⁻¹‖_F)`.
    fn balanced_value(&self) -> f64 {
        (self.norm_h * self.norm_hinv).sqrt()
    }

    /// `M` with `∂r/∂Y = Y·M`, for `r_c` or its balanced form.
    fn gradient_kernel(&self, balanced: bool) -> DMatrix<f64> {
        let v = &self.vectors;
        let (wa, wb) = if balanced {
            let ratio = (self.norm_hinv / self.norm_h).sqrt();
            (ratio, 1.0 / ratio)
        } else {
            (1.0, 1.0)
        };
        let w = self.values.map(|l| wa * l / self.norm_h - wb * l.powi(-3) / self.norm_hinv);
        let mut vw = v.clone();
        for (j, wj) in w.iter().enumerate() {
            vw.column_mut(j).scale_mut(*wj);
        }
        vw * v.transpose()
    }
}

/// `r_c` of a stacked regressor; `+∞` when it is rank deficient.
pub fn surrogate_cost(y: &DMatrix<f64>) -> f64 {
    Spectrum::of(y).map_or(f64::INFINITY, |s| s.value())
}

/// `r_c` after the uniform rescaling `Y → αY` that minimizes it. Still an
/// upper bound on `cond(Y)`, and invariant to the units of `Y`.
pub fn balanced_surrogate_cost(y: &DMatrix<f64>) -> f64 {
    Spectrum::of(y).map_or(f64::INFINITY, |s| s.balanced_value())
}

/// 2-norm condition number via SVD; `+∞` for a rank-deficient matrix.
pub fn condition_number(y: &DMatrix<f64>) -> f64 {
    if y.ncols() == 0 || y.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = y.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnScaling {
    /// Columns divided by their Euclidean norm over the initial trajectories.
    #[default]
    UnitNorm,
    /// Raw SI columns.
    None,
    /// Raw columns times the single factor that minimizes `r_c`.
    Uniform,
}

/// Everything the cost needs besides the coefficients.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    pub chain: KinematicChain,
    pub proj: BaseProjection,
    /// Offset, order and fundamental frequency; coefficients are ignored.
    pub template: FourierTrajectory,
    pub times: Vec<f64>,
    pub f_s: f64,
    /// Multiplier applied to each base column before forming `H`.
    pub scaling: DVector<f64>,
    /// Evaluate `r_c` after the optimal uniform rescaling.
    pub balanced: bool,
}

fn snap(dq: &mut [f64]) {
    for v in dq.iter_mut() {
        if v.abs() < DQ_ZERO_TOL {
            *v = 0.0;
        }
    }
}

impl ObjectiveContext {
    pub fn new(chain: KinematicChain, proj: BaseProjection, template: FourierTrajectory, f_s: f64) -> Result<Self> {
        if template.dof() != chain.dof {
            return Err(Error::dim("trajectory joints", chain.dof, template.dof()));
        }
        if proj.n_params != PARAMS_PER_JOINT * chain.dof {
            return Err(Error::dim("projection parameters", PARAMS_PER_JOINT * chain.dof, proj.n_params));
        }
        let times = template.grid_times(f_s)?;
        if times.len() * chain.dof < proj.rank {
            return Err(Error::InvalidArgument(format!("{} samples cannot determine {} base parameters", times.len(), proj.rank)));
        }
        let scaling = DVector::from_element(proj.rank, 1.0);
        Ok(ObjectiveContext { chain, proj, template, times, f_s, scaling, balanced: false })
    }

    pub fn with_scaling(mut self, scaling: DVector<f64>) -> Result<Self> {
        if scaling.len() != self.proj.rank {
            return Err(Error::dim("column scaling", self.proj.rank, scaling.len()));
        }
        if scaling.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("column scaling must be positive".into()));
        }
        self.scaling = scaling;
        Ok(self)
    }

    pub fn n_coeffs(&self) -> usize {
        self.template.n_coeffs()
    }

    pub fn trajectory(&self, coeffs: &DVector<f64>) -> FourierTrajectory {
        self.template.with_coeffs(coeffs)
    }

    /// Unscaled stacked base regressor over the grid.
    pub fn base_stack(&self, coeffs: &DVector<f64>) -> DMatrix<f64> {
        let traj = self.trajectory(coeffs);
        let n = self.chain.dof;
        let b_idx = &self.proj.b_idx;
        let mut out = DMatrix::zeros(self.times.len() * n, b_idx.len());
        let mut full = DMatrix::zeros(n, PARAMS_PER_JOINT * n);
        let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (s, &t) in self.times.iter().enumerate() {
            traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
            snap(&mut dq);
            let kin = Kinematics::new(&self.chain, &q, &dq, &ddq);
            fill_regressor(&self.chain, &kin, &dq, true, &mut full, 0);
            for (k, &c) in b_idx.iter().enumerate() {
                for i in 0..n {
                    out[(s * n + i, k)] = full[(i, c)];
                }
            }
        }
        out
    }

    pub fn scaled_stack(&self, coeffs: &DVector<f64>) -> DMatrix<f64> {
        let mut y = self.base_stack(coeffs);
        for (k, s) in self.scaling.iter().enumerate() {
            y.column_mut(k).scale_mut(*s);
        }
        y
    }

    /// Column scaling making every base column unit-norm over the union of
    /// the given coefficient sets.
    pub fn unit_norm_scaling(&self, coeff_sets: &[DVector<f64>]) -> Result<DVector<f64>> {
        let mut sq: DVector<f64> = DVector::zeros(self.proj.rank);
        for c in coeff_sets {
            let y = self.base_stack(c);
            for k in 0..y.ncols() {
                sq[k] += y.column(k).norm_squared();
            }
        }
        if sq.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::RankCollapse);
        }
        Ok(sq.map(|v| 1.0 / v.sqrt()))
    }

    pub fn cost(&self, coeffs: &DVector<f64>) -> f64 {
        let y = self.scaled_stack(coeffs);
        if self.balanced {
            balanced_surrogate_cost(&y)
        } else {
            surrogate_cost(&y)
        }
    }

    /// Condition numbers of the scaled and raw stacks.
    pub fn conditions(&self, coeffs: &DVector<f64>) -> (f64, f64) {
        let raw = self.base_stack(coeffs);
        let mut scaled = raw.clone();
        for (k, s) in self.scaling.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*s);
        }
        (condition_number(&scaled), condition_number(&raw))
    }

    /// `r_c` and its gradient with respect to the flat coefficient vector.
    ///
    /// The gradient goes through `∂r_c/∂Ȳ` and then, sample by sample,
    /// through the regressor's dependence on the joint state. Positions use
    /// central differences; the regressor is quadratic in `q̇` and linear in
    /// `q̈`, so unit central steps are exact there. Coulomb columns are
    /// piecewise constant and contribute nothing.
    pub fn cost_and_gradient(&self, coeffs: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.chain.dof;
        let mut grad = DVector::zeros(self.n_coeffs());
        let y = self.scaled_stack(coeffs);
        let Some(spec) = Spectrum::of(&y) else {
            return (f64::INFINITY, grad);
        };
        let mut g = y * spec.gradient_kernel(self.balanced);
        for (k, s) in self.scaling.iter().enumerate() {
            g.column_mut(k).scale_mut(*s);
        }

        let traj = self.trajectory(coeffs);
        let b_idx = &self.proj.b_idx;
        let viscous: Vec<Option<usize>> = (0..n).map(|j| b_idx.iter().position(|&c| c == viscous_index(j))).collect();
        let mut full = DMatrix::zeros(n, PARAMS_PER_JOINT * n);
        let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut d_state = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (s, &t) in self.times.iter().enumerate() {
            traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
            snap(&mut dq);
            let row0 = s * n;
            let mut phi = |q: &[f64], dq: &[f64], ddq: &[f64]| -> f64 {
                let kin = Kinematics::new(&self.chain, q, dq, ddq);
                fill_regressor(&self.chain, &kin, dq, false, &mut full, 0);
                let mut acc = 0.0;
                for (k, &c) in b_idx.iter().enumerate() {
                    for i in 0..n {
                        acc += g[(row0 + i, k)] * full[(i, c)];
                    }
                }
                acc
            };
            for j in 0..n {
                let x = q[j];
                q[j] = x + Q_STEP;
                let plus = phi(&q, &dq, &ddq);
                q[j] = x - Q_STEP;
                let minus = phi(&q, &dq, &ddq);
                q[j] = x;
                d_state[0][j] = (plus - minus) / (2.0 * Q_STEP);

                let x = dq[j];
                dq[j] = x + 1.0;
                let plus = phi(&q, &dq, &ddq);
                dq[j] = x - 1.0;
                let minus = phi(&q, &dq, &ddq);
                dq[j] = x;
                d_state[1][j] = 0.5 * (plus - minus);
                if let Some(k) = viscous[j] {
                    d_state[1][j] += g[(row0 + j, k)];
                }

                let x = ddq[j];
                ddq[j] = x + 1.0;
                let plus = phi(&q, &dq, &ddq);
                ddq[j] = x - 1.0;
                let minus = phi(&q, &dq, &ddq);
                ddq[j] = x;
                d_state[2][j] = 0.5 * (plus - minus);
            }
            for l in 0..traj.order() {
                let basis = traj.basis(t, l);
                for j in 0..n {
                    for (side, is_b) in [(0, false), (1, true)] {
                        let d = d_state[0][j] * basis[0][side] + d_state[1][j] * basis[1][side] + d_state[2][j] * basis[2][side];
                        grad[traj.coeff_index(j, l, is_b)] += d;
                    }
                }
            }
        }
        let value = if self.balanced { spec.balanced_value() } else { spec.value() };
        (value, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let y = DMatrix::<f64>::identity(5, 3);
        assert!((surrogate_cost(&y) - 3f64.sqrt()).abs() < 1e-14);
        assert!((condition_number(&y) - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let expected = 0.5 * (17f64.sqrt() + 17f64.sqrt() / 4.0);
        assert!((surrogate_cost(&d) - expected).abs() < 1e-12);
        assert!((condition_number(&d) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_is_minimum_over_uniform_scaling() {
        let y = DMatrix::from_fn(8, 3, |i, j| ((i * 5 + j * 11) % 7) as f64 * 10f64.powi(j as i32) + 0.1);
        let b = balanced_surrogate_cost(&y);
        let best = (-400..400).map(|k| surrogate_cost(&(&y * 10f64.powf(k as f64 / 100.0)))).fold(f64::INFINITY, f64::min);
        assert!(b <= best * (1.0 + 1e-12));
        assert!(best <= b * 1.001);
        assert!(b >= condition_number(&y));
    }

    #[test]
    fn singular_is_infinite() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(surrogate_cost(&y).is_infinite());
        assert!(surrogate_cost(&DMatrix::zeros(1, 2)).is_infinite());
    }

    #[test]
    fn kernel_matches_matrix_gradient() {
        let y = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.3 * (i as f64) - j as f64);
        let spec = Spectrum::of(&y).unwrap();
        let g = &y * spec.gradient_kernel(false);
        let h = 1e-6;
        for i in 0..6 {
            for j in 0..3 {
                let mut p = y.clone();
                p[(i, j)] += h;
                let mut m = y.clone();
                m[(i, j)] -= h;
                let fd = (surrogate_cost(&p) - surrogate_cost(&m)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[(i, j)]);
            }
        }
    }
}
