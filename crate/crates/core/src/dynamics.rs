//! Recursive Newton-Euler inverse dynamics and its linear-in-parameters
//! regressor.
//!
//! Standard parameters are stored per joint in the fixed order
//! `[m, mcx, mcy, mcz, ixx, ixy, ixz, iyy, iyz, izz, fs, fv]`, where the
//! first moments and the inertia are expressed in the body frame and the
//! inertia is taken about the body-frame origin (not the center of mass).
//! With that choice the torque is exactly linear in the parameters.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::urdf::KinematicChain;

pub const PARAMS_PER_JOINT: usize = 12;
pub const INERTIAL_PER_JOINT: usize = 10;

pub const PARAM_NAMES: [&str; PARAMS_PER_JOINT] = ["m", "mcx", "mcy", "mcz", "ixx", "ixy", "ixz", "iyy", "iyz", "izz", "fs", "fv"];

/// Index of the Coulomb coefficient of joint `i`.
pub fn coulomb_index(i: usize) -> usize {
    PARAMS_PER_JOINT * i + 10
}

/// Index of the viscous coefficient of joint `i`.
pub fn viscous_index(i: usize) -> usize {
    PARAMS_PER_JOINT * i + 11
}

pub fn is_friction_index(j: usize) -> bool {
    j % PARAMS_PER_JOINT >= INERTIAL_PER_JOINT
}

/// Human-readable label of standard parameter `j`, e.g. `L3.mcx` or `J5.fv`.
pub fn param_label(j: usize) -> String {
    let joint = j / PARAMS_PER_JOINT + 1;
    let k = j % PARAMS_PER_JOINT;
    let prefix = if k >= INERTIAL_PER_JOINT { 'J' } else { 'L' };
    format!("{prefix}{joint}.{}", PARAM_NAMES[k])
}

pub fn param_labels(dof: usize) -> Vec<String> {
    (0..PARAMS_PER_JOINT * dof).map(param_label).collect()
}

/// Full standard parameter vector, `12 · dof` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StdParams(pub DVector<f64>);

impl StdParams {
    pub fn zeros(dof: usize) -> Self {
        StdParams(DVector::zeros(PARAMS_PER_JOINT * dof))
    }

    pub fn dof(&self) -> usize {
        self.0.len() / PARAMS_PER_JOINT
    }

    /// Inertial nominals taken from the chain; friction set to zero.
    pub fn nominal(chain: &KinematicChain) -> Self {
        let mut p = Self::zeros(chain.dof);
        for (i, b) in chain.bodies.iter().enumerate() {
            let c = b.com;
            let io = b.inertia + b.mass * (c.norm_squared() * Matrix3::identity() - c * c.transpose());
            let base = PARAMS_PER_JOINT * i;
            let vals =
                [b.mass, b.mass * c.x, b.mass * c.y, b.mass * c.z, io[(0, 0)], io[(0, 1)], io[(0, 2)], io[(1, 1)], io[(1, 2)], io[(2, 2)]];
            p.0.rows_mut(base, INERTIAL_PER_JOINT).copy_from_slice(&vals);
        }
        p
    }

    pub fn with_friction(mut self, coulomb: &[f64], viscous: &[f64]) -> Result<Self> {
        let dof = self.dof();
        if coulomb.len() != dof {
            return Err(Error::dim("coulomb coefficients", dof, coulomb.len()));
        }
        if viscous.len() != dof {
            return Err(Error::dim("viscous coefficients", dof, viscous.len()));
        }
        for i in 0..dof {
            self.0[coulomb_index(i)] = coulomb[i];
            self.0[viscous_index(i)] = viscous[i];
        }
        Ok(self)
    }

    fn inertial(&self, i: usize) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let p = &self.0.as_slice()[PARAMS_PER_JOINT * i..];
        let m = p[0];
        let h = Vector3::new(p[1], p[2], p[3]);
        let io = Matrix3::new(p[4], p[5], p[6], p[5], p[7], p[8], p[6], p[8], p[9]);
        (m, h, io)
    }
}

/// One time sample of joint states, optionally with measured torques.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub ddq: DVector<f64>,
    pub tau: Option<DVector<f64>>,
}

impl StateSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.dq.iter().all(|x| x.is_finite())
            && self.ddq.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// World-frame kinematic quantities of every body for one state.
pub(crate) struct Kinematics {
    pub rot: Vec<Matrix3<f64>>,
    pub origin: Vec<Vector3<f64>>,
    pub axis: Vec<Vector3<f64>>,
    pub omega: Vec<Vector3<f64>>,
    pub omega_dot: Vec<Vector3<f64>>,
    /// Linear acceleration of the body origin, gravity folded in.
    pub accel: Vec<Vector3<f64>>,
}

impl Kinematics {
    pub fn new(chain: &KinematicChain, q: &[f64], dq: &[f64], ddq: &[f64]) -> Self {
        let n = chain.dof;
        let mut k = Kinematics {
            rot: Vec::with_capacity(n),
            origin: Vec::with_capacity(n),
            axis: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            omega_dot: Vec::with_capacity(n),
            accel: Vec::with_capacity(n),
        };
        let mut rot = Matrix3::identity();
        let mut pos = Vector3::zeros();
        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        let mut accel = -chain.gravity;
        for (i, body) in chain.bodies.iter().enumerate() {
            let t = chain.joint_transform(i, q[i]);
            let new_pos = pos + rot * t.translation.vector;
            let new_rot = rot * t.rotation.to_rotation_matrix().into_inner();
            let z = new_rot * body.axis.into_inner();
            if i > 0 {
                let d = new_pos - pos;
                accel += omega_dot.cross(&d) + omega.cross(&omega.cross(&d));
            }
            let wz = z * dq[i];
            omega_dot += omega.cross(&wz) + z * ddq[i];
            omega += wz;
            rot = new_rot;
            pos = new_pos;
            k.rot.push(rot);
            k.origin.push(pos);
            k.axis.push(z);
            k.omega.push(omega);
            k.omega_dot.push(omega_dot);
            k.accel.push(accel);
        }
        k
    }
}

fn check_state(chain: &KinematicChain, q: &[f64], dq: &[f64], ddq: &[f64]) -> Result<()> {
    chain.check_len("q", q)?;
    chain.check_len("dq", dq)?;
    chain.check_len("ddq", ddq)
}

/// Joint torques `τ = M(q)q̈ + C(q,q̇)q̇ + g(q) + f_st·sgn(q̇) + f_v·q̇`.
pub fn rnea(chain: &KinematicChain, q: &[f64], dq: &[f64], ddq: &[f64], params: &StdParams) -> Result<DVector<f64>> {
    check_state(chain, q, dq, ddq)?;
    if params.0.len() != PARAMS_PER_JOINT * chain.dof {
        return Err(Error::dim("standard parameters", PARAMS_PER_JOINT * chain.dof, params.0.len()));
    }
    let kin = Kinematics::new(chain, q, dq, ddq);
    let n = chain.dof;
    let mut tau = DVector::zeros(n);
    let mut f_next = Vector3::zeros();
    let mut n_next = Vector3::zeros();
    for i in (0..n).rev() {
        let (m, h_body, io_body) = params.inertial(i);
        let r = &kin.rot[i];
        let h = r * h_body;
        let io = r * io_body * r.transpose();
        let (w, wd, a) = (&kin.omega[i], &kin.omega_dot[i], &kin.accel[i]);
        let f = m * a + wd.cross(&h) + w.cross(&w.cross(&h));
        let mut nn = io * wd + w.cross(&(io * w)) + h.cross(a);
        if i + 1 < n {
            nn += n_next + (kin.origin[i + 1] - kin.origin[i]).cross(&f_next);
        }
        let f_tot = f + f_next;
        tau[i] = kin.axis[i].dot(&nn) + params.0[coulomb_index(i)] * sgn(dq[i]) + params.0[viscous_index(i)] * dq[i];
        f_next = f_tot;
        n_next = nn;
    }
    Ok(tau)
}

/// Unit inertia tensors in parameter order (ixx, ixy, ixz, iyy, iyz, izz).
const UNIT_INERTIA: [[(usize, usize); 2]; 6] =
    [[(0, 0), (0, 0)], [(0, 1), (1, 0)], [(0, 2), (2, 0)], [(1, 1), (1, 1)], [(1, 2), (2, 1)], [(2, 2), (2, 2)]];

/// Writes the regressor rows of one state into `out` starting at `row0`.
///
/// Column `j` is the torque produced by the unit parameter vector `e_j`.
/// The forward kinematic pass is shared by all columns; each column only
/// carries the wrench of its own body inward.
pub(crate) fn fill_regressor(chain: &KinematicChain, kin: &Kinematics, dq: &[f64], friction: bool, out: &mut DMatrix<f64>, row0: usize) {
    let n = chain.dof;
    for j in 0..n {
        let r = &kin.rot[j];
        let (w, wd, a) = (&kin.omega[j], &kin.omega_dot[j], &kin.accel[j]);
        let mut wrenches = [(Vector3::zeros(), Vector3::zeros()); INERTIAL_PER_JOINT];
        wrenches[0] = (*a, Vector3::zeros());
        for k in 0..3 {
            let h = r.column(k).into_owned();
            wrenches[1 + k] = (wd.cross(&h) + w.cross(&w.cross(&h)), h.cross(a));
        }
        let wb = r.transpose() * w;
        let wdb = r.transpose() * wd;
        for (k, entries) in UNIT_INERTIA.iter().enumerate() {
            let mut e = Matrix3::zeros();
            for &(p, s) in entries {
                e[(p, s)] = 1.0;
            }
            let nb = e * wdb + wb.cross(&(e * wb));
            wrenches[4 + k] = (Vector3::zeros(), r * nb);
        }
        let col0 = PARAMS_PER_JOINT * j;
        for i in 0..=j {
            let z = &kin.axis[i];
            let u = z.cross(&(kin.origin[j] - kin.origin[i]));
            for (k, (f, nn)) in wrenches.iter().enumerate() {
                out[(row0 + i, col0 + k)] = z.dot(nn) + u.dot(f);
            }
        }
        for i in j + 1..n {
            for k in 0..INERTIAL_PER_JOINT {
                out[(row0 + i, col0 + k)] = 0.0;
            }
        }
        for i in 0..n {
            let (fs, fv) = if i == j && friction { (sgn(dq[j]), dq[j]) } else { (0.0, 0.0) };
            out[(row0 + i, col0 + 10)] = fs;
            out[(row0 + i, col0 + 11)] = fv;
        }
    }
}

/// Regressor `Ȳ(q, q̇, q̈)` of size `dof × 12·dof` with `Ȳθ = rnea(θ)`.
pub fn regressor(chain: &KinematicChain, q: &[f64], dq: &[f64], ddq: &[f64]) -> Result<DMatrix<f64>> {
    check_state(chain, q, dq, ddq)?;
    let n = chain.dof;
    let mut out = DMatrix::zeros(n, PARAMS_PER_JOINT * n);
    let kin = Kinematics::new(chain, q, dq, ddq);
    fill_regressor(chain, &kin, dq, true, &mut out, 0);
    Ok(out)
}

/// Stacks the regressors of many states into one `(S·dof) × 12·dof` matrix.
pub fn stacked_regressor(chain: &KinematicChain, samples: &[StateSample]) -> Result<DMatrix<f64>> {
    let n = chain.dof;
    let mut out = DMatrix::zeros(samples.len() * n, PARAMS_PER_JOINT * n);
    for (k, s) in samples.iter().enumerate() {
        check_state(chain, s.q.as_slice(), s.dq.as_slice(), s.ddq.as_slice())?;
        let kin = Kinematics::new(chain, s.q.as_slice(), s.dq.as_slice(), s.ddq.as_slice());
        fill_regressor(chain, &kin, s.dq.as_slice(), true, &mut out, k * n);
    }
    Ok(out)
}

/// `τ_ext = τ_raw − τ_model`.
pub fn external_torque(tau_raw: &[f64], tau_model: &[f64]) -> Result<DVector<f64>> {
    if tau_raw.len() != tau_model.len() {
        return Err(Error::dim("torque vectors", tau_raw.len(), tau_model.len()));
    }
    Ok(DVector::from_iterator(tau_raw.len(), tau_raw.iter().zip(tau_model).map(|(r, m)| r - m)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(param_label(0), "L1.m");
        assert_eq!(param_label(12 * 2 + 3), "L3.mcz");
        assert_eq!(param_label(12 * 4 + 11), "J5.fv");
        assert_eq!(param_label(12 * 4 + 10), "J5.fs");
        assert!(is_friction_index(11) && !is_friction_index(9));
    }

    #[test]
    fn external_torque_arithmetic() {
        let e = external_torque(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(e.as_slice(), &[0.5, 1.5]);
        let z = external_torque(&[3.0, -1.0], &[3.0, -1.0]).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        assert!(external_torque(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(1e-300), 1.0);
    }
}
