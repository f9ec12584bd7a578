//! Random feasible starting trajectories.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::constraints::{CollisionConstraint, TrajectoryConstraints};
use crate::error::{Error, Result};
use crate::urdf::KinematicChain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    /// Rejection draws per joint before falling back to radial scaling.
    pub max_draws: usize,
    /// Whole-trajectory redraws allowed when a sample collides.
    pub max_collision_redraws: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { max_draws: 10_000, max_collision_redraws: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub coeffs: DVector<f64>,
    /// Total per-joint draws, summed over joints and redraws.
    pub draws: usize,
    /// Joints whose block came from the scaling fallback in the kept sample.
    pub fallback_joints: usize,
    pub collision_redraws: usize,
}

/// One joint block: uniform draws in the coefficient box projected onto the
/// boundary null space, kept when the amplitude sums and box hold. When no
/// draw passes, the last projected draw is scaled along its ray to
/// `s_max·U^(1/m)`, which is how a uniform point of an `m`-dimensional
/// star-shaped set distributes along a ray.
fn sample_joint<R: Rng>(cons: &TrajectoryConstraints, i: usize, rng: &mut R, opts: &SamplerOptions) -> (DVector<f64>, usize, bool) {
    let n = cons.template.n_coeffs();
    let order = cons.template.order();
    let block = cons.template.coeff_index(i, 0, false);
    let basis = cons.joint_basis(i);
    let m = basis.ncols();
    let mut c = DVector::zeros(n);
    if m == 0 {
        return (c, 0, false);
    }
    let mut draws = 0;
    let mut local = DVector::zeros(2 * order);
    for _ in 0..opts.max_draws.max(1) {
        draws += 1;
        for k in 0..2 * order {
            local[k] = rng.gen_range(cons.lb[block + k]..=cons.ub[block + k]);
        }
        let projected = &basis * basis.tr_mul(&local);
        c.rows_mut(block, 2 * order).copy_from(&projected);
        if cons.joint_scale_limit(&c, i) >= 1.0 {
            return (c, draws, false);
        }
    }
    let s_max = cons.joint_scale_limit(&c, i);
    let u: f64 = rng.gen();
    let s = s_max * u.powf(1.0 / m as f64) * (1.0 - 1e-12);
    c.rows_mut(block, 2 * order).scale_mut(s);
    (c, draws, true)
}

pub fn sample_feasible<R: Rng>(
    chain: &KinematicChain,
    cons: &TrajectoryConstraints,
    collision: Option<&CollisionConstraint>,
    rng: &mut R,
    opts: &SamplerOptions,
) -> Result<SampleOutcome> {
    let mut draws = 0;
    for redraw in 0..=opts.max_collision_redraws {
        let mut coeffs = DVector::zeros(cons.template.n_coeffs());
        let mut fallback_joints = 0;
        for i in 0..chain.dof {
            let (c, d, fb) = sample_joint(cons, i, rng, opts);
            coeffs += c;
            draws += d;
            fallback_joints += fb as usize;
        }
        let clear = match collision {
            Some(col) => col.min_clearance(chain, &cons.template.with_coeffs(&coeffs))? >= 0.0,
            None => true,
        };
        if clear {
            return Ok(SampleOutcome { coeffs, draws, fallback_joints, collision_redraws: redraw });
        }
    }
    Err(Error::Collision(format!(
        "no collision-free random trajectory in {} redraws; check that the offset pose is clear",
        opts.max_collision_redraws + 1
    )))
}
