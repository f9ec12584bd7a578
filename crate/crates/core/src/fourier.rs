//! Finite Fourier-series joint trajectories.
//!
//! Joint `i` follows
//! `q_i(t) = q_offset_i + Σ_l a_il/(ω_f l)·sin(ω_f l t) − b_il/(ω_f l)·cos(ω_f l t)`,
//! so `a` and `b` carry velocity units and the series is periodic in
//! `T = 2π/ω_f`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::StateSample;
use crate::error::{Error, Result};
use crate::urdf::KinematicChain;

/// How the rest-to-rest boundary equalities are written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// `q(0) = q_offset`, `q̇(0) = 0`, `q̈(0) = 0`, i.e.
    /// `Σ b_l/l = 0`, `Σ a_l = 0`, `Σ b_l·l = 0`.
    #[default]
    Derived,
    /// `Σ a_l/l = 0`, `Σ b_l = 0`, `Σ a_l·l = 0` as commonly printed.
    #[serde(rename = "paper-literal")]
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierTrajectory {
    /// `dof × L` sine-side coefficients (rad/s).
    pub a: DMatrix<f64>,
    /// `dof × L` cosine-side coefficients (rad/s).
    pub b: DMatrix<f64>,
    pub omega_f: f64,
    pub q_offset: DVector<f64>,
}

/// On-disk form: `{omega_f, L, q_offset[], a[][], b[][]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub omega_f: f64,
    #[serde(rename = "L")]
    pub order: usize,
    pub q_offset: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl FourierTrajectory {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, omega_f: f64, q_offset: DVector<f64>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::InvalidArgument("a and b must have equal shapes".into()));
        }
        if a.ncols() < 1 {
            return Err(Error::InvalidArgument("series order must be at least 1".into()));
        }
        if q_offset.len() != a.nrows() {
            return Err(Error::dim("q_offset", a.nrows(), q_offset.len()));
        }
        if !(omega_f > 0.0 && omega_f.is_finite()) {
            return Err(Error::InvalidArgument("fundamental frequency must be positive".into()));
        }
        if a.iter().chain(b.iter()).chain(q_offset.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Fourier coefficients"));
        }
        Ok(FourierTrajectory { a, b, omega_f, q_offset })
    }

    pub fn zeros(dof: usize, order: usize, omega_f: f64, q_offset: DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::zeros(dof, order), DMatrix::zeros(dof, order), omega_f, q_offset)
    }

    /// Offsets at the middle of each joint's position range.
    pub fn mid_range_offset(chain: &KinematicChain) -> DVector<f64> {
        DVector::from_iterator(chain.dof, chain.limits().map(|l| l.mid()))
    }

    pub fn dof(&self) -> usize {
        self.a.nrows()
    }

    pub fn order(&self) -> usize {
        self.a.ncols()
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega_f
    }

    pub fn fundamental_hz(&self) -> f64 {
        self.omega_f / TAU
    }

    pub fn n_coeffs(&self) -> usize {
        2 * self.dof() * self.order()
    }

    /// Position of `a_il` (or `b_il`) in the flat coefficient vector; joint
    /// blocks are `[a_i1..a_iL, b_i1..b_iL]`.
    pub fn coeff_index(&self, joint: usize, l: usize, is_b: bool) -> usize {
        let order = self.order();
        joint * 2 * order + if is_b { order } else { 0 } + l
    }

    pub fn coeffs(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.n_coeffs());
        for i in 0..self.dof() {
            for l in 0..self.order() {
                c[self.coeff_index(i, l, false)] = self.a[(i, l)];
                c[self.coeff_index(i, l, true)] = self.b[(i, l)];
            }
        }
        c
    }

    pub fn with_coeffs(&self, c: &DVector<f64>) -> Self {
        let mut out = self.clone();
        for i in 0..self.dof() {
            for l in 0..self.order() {
                out.a[(i, l)] = c[self.coeff_index(i, l, false)];
                out.b[(i, l)] = c[self.coeff_index(i, l, true)];
            }
        }
        out
    }

    /// Values of the basis functions multiplying `a_l` and `b_l` (harmonic
    /// `l` is 0-based) in `q`, `q̇` and `q̈` at time `t`.
    pub fn basis(&self, t: f64, l: usize) -> [[f64; 2]; 3] {
        let wl = self.omega_f * (l + 1) as f64;
        let (s, c) = (wl * t).sin_cos();
        [[s / wl, -c / wl], [c, s], [-wl * s, wl * c]]
    }

    pub fn evaluate_into(&self, t: f64, q: &mut [f64], dq: &mut [f64], ddq: &mut [f64]) {
        for i in 0..self.dof() {
            q[i] = self.q_offset[i];
            dq[i] = 0.0;
            ddq[i] = 0.0;
        }
        for l in 0..self.order() {
            let [bq, bdq, bddq] = self.basis(t, l);
            for i in 0..self.dof() {
                let (a, b) = (self.a[(i, l)], self.b[(i, l)]);
                q[i] += a * bq[0] + b * bq[1];
                dq[i] += a * bdq[0] + b * bdq[1];
                ddq[i] += a * bddq[0] + b * bddq[1];
            }
        }
    }

    pub fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.dof();
        let (mut q, mut dq, mut ddq) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
        self.evaluate_into(t, q.as_mut_slice(), dq.as_mut_slice(), ddq.as_mut_slice());
        (q, dq, ddq)
    }

    pub fn state(&self, t: f64) -> StateSample {
        let (q, dq, ddq) = self.evaluate(t);
        StateSample { t, q, dq, ddq, tau: None }
    }

    /// Number of samples per period at `f_s`.
    pub fn samples_per_period(&self, f_s: f64) -> usize {
        (f_s * self.period()).round() as usize
    }

    pub fn check_sampling(&self, f_s: f64) -> Result<()> {
        let nyquist = 2.0 * self.order() as f64 * self.fundamental_hz();
        if !(f_s > nyquist) {
            return Err(Error::SubNyquist { f_s, nyquist });
        }
        Ok(())
    }

    /// Sample times `k/f_s` covering exactly one period.
    pub fn grid_times(&self, f_s: f64) -> Result<Vec<f64>> {
        self.check_sampling(f_s)?;
        Ok((0..self.samples_per_period(f_s)).map(|k| k as f64 / f_s).collect())
    }

    pub fn sample_grid(&self, f_s: f64) -> Result<Vec<StateSample>> {
        Ok(self.grid_times(f_s)?.into_iter().map(|t| self.state(t)).collect())
    }

    pub fn to_file(&self) -> TrajectoryFile {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        TrajectoryFile {
            omega_f: self.omega_f,
            order: self.order(),
            q_offset: self.q_offset.iter().copied().collect(),
            a: rows(&self.a),
            b: rows(&self.b),
        }
    }

    pub fn from_file(f: &TrajectoryFile) -> Result<Self> {
        let dof = f.q_offset.len();
        let mat = |rows: &[Vec<f64>], what: &'static str| -> Result<DMatrix<f64>> {
            if rows.len() != dof {
                return Err(Error::dim(what, dof, rows.len()));
            }
            for r in rows {
                if r.len() != f.order {
                    return Err(Error::dim(what, f.order, r.len()));
                }
            }
            Ok(DMatrix::from_fn(dof, f.order, |i, l| rows[i][l]))
        };
        Self::new(mat(&f.a, "a rows")?, mat(&f.b, "b rows")?, f.omega_f, DVector::from_vec(f.q_offset.clone()))
    }
}

/// `3 × 2L` matrix of the boundary equalities of one joint, acting on
/// `[a_1..a_L, b_1..b_L]`.
pub fn boundary_matrix(mode: BoundaryMode, order: usize, omega_f: f64) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(3, 2 * order);
    for l in 0..order {
        let lf = (l + 1) as f64;
        match mode {
            BoundaryMode::Derived => {
                e[(0, order + l)] = -1.0 / (omega_f * lf);
                e[(1, l)] = 1.0;
                e[(2, order + l)] = omega_f * lf;
            }
            BoundaryMode::Literal => {
                e[(0, l)] = 1.0 / lf;
                e[(1, order + l)] = 1.0;
                e[(2, l)] = lf;
            }
        }
    }
    e
}

/// Box bounds `(lb, ub)` on harmonic `l` (0-based) of a joint.
pub fn coefficient_bounds(q_range: f64, dq_min: f64, dq_max: f64, omega_f: f64, l: usize, order: usize) -> (f64, f64) {
    let s = omega_f * (l + 1) as f64 * q_range / order as f64;
    ((-s).max(dq_min), s.min(dq_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResiduals {
    pub joint: String,
    /// Boundary equality values; zero when satisfied.
    pub boundary: [f64; 3],
    /// `Σ (1/l)·‖(a_l, b_l)‖ − ω_f·q_range`.
    pub position_amplitude: f64,
    /// `Σ ‖(a_l, b_l)‖ − q̇_max`.
    pub velocity_amplitude: f64,
    /// Per-coefficient `max(c − ub, lb − c)`, `[a_1..a_L, b_1..b_L]`.
    pub coefficient_box: Vec<f64>,
}

impl JointResiduals {
    pub fn max_violation(&self) -> f64 {
        let eq = self.boundary.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let ineq = self.coefficient_box.iter().chain([&self.position_amplitude, &self.velocity_amplitude]).fold(0.0_f64, |m, &x| m.max(x));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub mode: BoundaryMode,
    pub joints: Vec<JointResiduals>,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.joints.iter().map(JointResiduals::max_violation).fold(0.0, f64::max)
    }
}

pub fn feasibility_residuals(traj: &FourierTrajectory, chain: &KinematicChain, mode: BoundaryMode) -> Result<ConstraintReport> {
    if traj.dof() != chain.dof {
        return Err(Error::dim("trajectory joints", chain.dof, traj.dof()));
    }
    let order = traj.order();
    let w = traj.omega_f;
    let e = boundary_matrix(mode, order, w);
    let joints = chain
        .bodies
        .iter()
        .enumerate()
        .map(|(i, body)| {
            let lim = &body.limits;
            let q_range = lim.range_about(traj.q_offset[i]);
            let mut x = DVector::zeros(2 * order);
            for l in 0..order {
                x[l] = traj.a[(i, l)];
                x[order + l] = traj.b[(i, l)];
            }
            let eq = &e * &x;
            let mut pos = -w * q_range;
            let mut vel = -lim.speed();
            let mut boxes = vec![0.0; 2 * order];
            for l in 0..order {
                let (a, b) = (traj.a[(i, l)], traj.b[(i, l)]);
                let mag = a.hypot(b);
                pos += mag / (l + 1) as f64;
                vel += mag;
                let (lb, ub) = coefficient_bounds(q_range, lim.dq_min, lim.dq_max, w, l, order);
                boxes[l] = (a - ub).max(lb - a);
                boxes[order + l] = (b - ub).max(lb - b);
            }
            JointResiduals {
                joint: body.joint.clone(),
                boundary: [eq[0], eq[1], eq[2]],
                position_amplitude: pos,
                velocity_amplitude: vel,
                coefficient_box: boxes,
            }
        })
        .collect();
    Ok(ConstraintReport { mode, joints })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(order: usize, w: f64) -> FourierTrajectory {
        FourierTrajectory::zeros(1, order, w, DVector::zeros(1)).unwrap()
    }

    #[test]
    fn single_term_closed_form() {
        let w = 0.7;
        let mut tr = single(1, w);
        tr.a[(0, 0)] = w;
        let (q, dq, ddq) = tr.evaluate(0.0);
        assert_eq!((q[0], dq[0], ddq[0]), (0.0, w, 0.0));
        let t = 0.37;
        let (q, _, _) = tr.evaluate(t);
        assert!((q[0] - (w * t).sin()).abs() < 1e-15);
    }

    #[test]
    fn grid_count_and_nyquist() {
        let tr = FourierTrajectory::zeros(2, 5, TAU * 0.1, DVector::zeros(2)).unwrap();
        assert_eq!(tr.sample_grid(20.0).unwrap().len(), 200);
        let first = &tr.sample_grid(20.0).unwrap()[0];
        assert_eq!(first.q, tr.evaluate(0.0).0);
        assert!(matches!(tr.sample_grid(0.5 * 5.0 * 0.1), Err(Error::SubNyquist { .. })));
    }

    #[test]
    fn boundary_residuals_follow_mode() {
        let w = 0.5;
        let mut tr = single(3, w);
        tr.a[(0, 0)] = 0.2;
        tr.a[(0, 1)] = -0.3;
        tr.b[(0, 2)] = 0.1;
        let e = boundary_matrix(BoundaryMode::Derived, 3, w);
        let x = DVector::from_vec(vec![0.2, -0.3, 0.0, 0.0, 0.0, 0.1]);
        let r = &e * &x;
        let (q, dq, ddq) = tr.evaluate(0.0);
        assert!((r[0] - q[0]).abs() < 1e-15);
        assert!((r[1] - dq[0]).abs() < 1e-15);
        assert!((r[2] - ddq[0]).abs() < 1e-15);
        let lit = boundary_matrix(BoundaryMode::Literal, 3, w) * x;
        assert!((lit[0] - (0.2 - 0.15)).abs() < 1e-15);
        assert!((lit[1] - 0.1).abs() < 1e-15);
        assert!((lit[2] - (0.2 - 0.6)).abs() < 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let mut tr = FourierTrajectory::zeros(2, 2, 0.3, DVector::from_vec(vec![0.1, -0.2])).unwrap();
        tr.a[(1, 0)] = 0.125;
        tr.b[(0, 1)] = -0.5;
        let json = serde_json::to_string(&tr.to_file()).unwrap();
        assert!(json.contains("\"L\":2"));
        let back = FourierTrajectory::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, tr);
        let c = tr.coeffs();
        assert_eq!(tr.with_coeffs(&c), tr);
    }
}
