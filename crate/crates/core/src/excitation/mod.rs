//! Excitation trajectory optimization.
//!
//! The cost is `log r_c` of the column-scaled stacked base regressor. The
//! boundary equalities are eliminated by a null-space parameterization;
//! amplitude sums, coefficient boxes and collision clearances enter an
//! augmented Lagrangian minimized by L-BFGS.

mod constraints;
mod cost;
mod lbfgs;
mod sampler;

pub use constraints::{CollisionConstraint, TrajectoryConstraints};
pub use cost::{balanced_surrogate_cost, condition_number, surrogate_cost, ColumnScaling, ObjectiveContext, DQ_ZERO_TOL, SINGULAR_RATIO};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, Objective, Termination};
pub use sampler::{sample_feasible, SampleOutcome, SamplerOptions};

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_params::BaseProjection;
use crate::collision::CollisionModel;
use crate::error::{Error, Result};
use crate::fourier::{BoundaryMode, FourierTrajectory, TrajectoryFile};
use crate::urdf::KinematicChain;

/// Violation threshold below which a trajectory counts as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-3;

const MERIT_WEIGHT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub step1_max_iter: usize,
    pub step2_max_iter: usize,
    /// Required clearance `g ≥ margin` for every collision residual.
    pub margin: f64,
    pub collision_slack: f64,
    /// Collision constraints are imposed on a grid this many times denser
    /// than the regressor grid.
    pub collision_oversample: usize,
    pub scaling: ColumnScaling,
    pub rho0: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    /// Outer-loop stopping tolerance on the smooth constraint values.
    pub feas_tol: f64,
    pub sampler: SamplerOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            n_starts: 3,
            seed: 0,
            step1_max_iter: 2000,
            step2_max_iter: 3000,
            margin: 0.05,
            collision_slack: 0.01,
            collision_oversample: 10,
            scaling: ColumnScaling::UnitNorm,
            rho0: 10.0,
            rho_max: 1e8,
            max_outer: 40,
            feas_tol: 1e-7,
            sampler: SamplerOptions::default(),
        }
    }
}

/// Cost, trajectory constraints and optional collision constraints.
#[derive(Debug, Clone)]
pub struct ExcitationProblem {
    pub ctx: ObjectiveContext,
    pub cons: TrajectoryConstraints,
    pub collision: Option<CollisionConstraint>,
}

impl ExcitationProblem {
    pub fn new(
        chain: &KinematicChain,
        proj: &BaseProjection,
        template: &FourierTrajectory,
        f_s: f64,
        mode: BoundaryMode,
        collision: Option<CollisionModel>,
        opts: &OptimizerOptions,
    ) -> Result<Self> {
        let ctx = ObjectiveContext::new(chain.clone(), proj.clone(), template.clone(), f_s)?;
        let cons = TrajectoryConstraints::new(chain, template, mode)?;
        let collision = match collision {
            Some(model) if !model.is_empty() => {
                if opts.collision_oversample == 0 {
                    return Err(Error::InvalidArgument("collision oversampling must be at least 1".into()));
                }
                Some(CollisionConstraint {
                    model,
                    times: template.grid_times(f_s * opts.collision_oversample as f64)?,
                    margin: opts.margin,
                    slack: opts.collision_slack,
                })
            }
            _ => None,
        };
        Ok(ExcitationProblem { ctx, cons, collision })
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.ctx.chain
    }

    /// `(coefficient violation, collision shortfall below margin)`.
    pub fn violations(&self, c: &DVector<f64>) -> (f64, f64) {
        let lin = self.cons.max_violation(c, self.chain());
        let col = match &self.collision {
            Some(col) => col.min_clearance(self.chain(), &self.ctx.trajectory(c)).map_or(f64::INFINITY, |v| (-v).max(0.0)),
            None => 0.0,
        };
        (lin, col)
    }

    pub fn max_violation(&self, c: &DVector<f64>) -> f64 {
        let (a, b) = self.violations(c);
        a.max(b)
    }

    pub fn sample_start(&self, rng: &mut ChaCha8Rng, opts: &SamplerOptions) -> Result<SampleOutcome> {
        sample_feasible(self.chain(), &self.cons, self.collision.as_ref(), rng, opts)
    }
}

struct Augmented<'a> {
    p: &'a ExcitationProblem,
    with_collision: bool,
    lam_lin: Vec<f64>,
    lam_col: Vec<f64>,
    rho: f64,
}

impl Augmented<'_> {
    fn penalties(&self, c: &DVector<f64>, grad: Option<&mut DVector<f64>>) -> f64 {
        let mut grad = grad;
        let mut total = self.p.cons.penalty(c, &self.lam_lin, self.rho, grad.as_deref_mut());
        if let (true, Some(col)) = (self.with_collision, &self.p.collision) {
            let traj = self.p.ctx.trajectory(c);
            total += col.penalty(self.p.chain(), &traj, &self.lam_col, self.rho, grad);
        }
        total
    }

    /// Smooth constraint values, linear first.
    fn constraint_values(&self, c: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let lin = self.p.cons.values(c);
        let col = match (self.with_collision, &self.p.collision) {
            (true, Some(col)) => col.values(self.p.chain(), &self.p.ctx.trajectory(c)),
            _ => Vec::new(),
        };
        (lin, col)
    }
}

impl Objective for Augmented<'_> {
    fn value(&mut self, z: &DVector<f64>) -> f64 {
        let c = self.p.cons.expand(z);
        let r = self.p.ctx.cost(&c);
        if !r.is_finite() {
            return f64::INFINITY;
        }
        r.ln() + self.penalties(&c, None)
    }

    fn value_grad(&mut self, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let c = self.p.cons.expand(z);
        let (r, g) = self.p.ctx.cost_and_gradient(&c);
        if !r.is_finite() {
            return (f64::INFINITY, DVector::zeros(z.len()));
        }
        let mut grad_c = g / r;
        let pen = self.penalties(&c, Some(&mut grad_c));
        (r.ln() + pen, self.p.cons.reduce(&grad_c))
    }
}

/// Outcome of one augmented-Lagrangian solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub r_c: f64,
    pub coefficient_violation: f64,
    pub collision_shortfall: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Best-so-far merit (`log r_c` plus weighted violation) after each
    /// outer iteration.
    pub merit_history: Vec<f64>,
}

fn run_step(
    p: &ExcitationProblem,
    z0: DVector<f64>,
    with_collision: bool,
    budget: usize,
    opts: &OptimizerOptions,
) -> (DVector<f64>, StepReport) {
    let mut aug = Augmented {
        p,
        with_collision,
        lam_lin: vec![0.0; p.cons.n_inequalities()],
        lam_col: vec![0.0; if with_collision { p.collision.as_ref().map_or(0, |c| c.n_constraints()) } else { 0 }],
        rho: opts.rho0,
    };
    let mut z = z0;
    let mut used = 0;
    let mut prev_viol = f64::INFINITY;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut merit_history = Vec::new();
    let mut outer = 0;
    while outer < opts.max_outer && used < budget {
        outer += 1;
        let inner = LbfgsOptions { max_iter: budget - used, ..Default::default() };
        let res = minimize(&mut aug, z, &inner);
        used += res.iterations;
        z = res.x;
        let c = p.cons.expand(&z);
        let (lin, col) = aug.constraint_values(&c);
        let viol = lin.iter().chain(&col).fold(0.0_f64, |m, v| m.max(*v));
        let merit = p.ctx.cost(&c).ln() + MERIT_WEIGHT * viol;
        if merit.is_finite() && best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, z.clone()));
        }
        merit_history.push(best.as_ref().map_or(f64::INFINITY, |(m, _)| *m));
        debug!(
            "outer {outer}: log r_c + pen = {:.6}, violation {viol:.3e}, rho {:.1e}, inner {} ({:?})",
            res.f, aug.rho, res.iterations, res.termination
        );
        if viol <= opts.feas_tol && res.termination != Termination::MaxIter {
            break;
        }
        for (l, v) in aug.lam_lin.iter_mut().zip(&lin) {
            *l = (*l + aug.rho * v).max(0.0);
        }
        for (l, v) in aug.lam_col.iter_mut().zip(&col) {
            *l = (*l + aug.rho * v).max(0.0);
        }
        if viol > 0.25 * prev_viol {
            aug.rho = (aug.rho * 10.0).min(opts.rho_max);
        }
        prev_viol = viol;
    }
    let z_best = best.map_or(z, |(_, z)| z);
    let c = p.cons.shrink_to_feasible(&p.cons.expand(&z_best));
    let (lin, col) = p.violations(&c);
    let report = StepReport {
        r_c: p.ctx.cost(&c),
        coefficient_violation: lin,
        collision_shortfall: if with_collision { col } else { 0.0 },
        iterations: used,
        outer_iterations: outer,
        merit_history,
    };
    (p.cons.reduce(&c), report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartReport {
    pub start: usize,
    pub sampler_draws: usize,
    pub sampler_fallback_joints: usize,
    pub initial_r_c: f64,
    pub initial_cond_scaled: f64,
    pub initial_cond_raw: f64,
    pub step1: StepReport,
    pub step2: Option<StepReport>,
    /// The optimized point lost to the sampled start and was discarded.
    pub kept_sample: bool,
    pub final_r_c: f64,
    pub final_violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptResult {
    pub trajectory: TrajectoryFile,
    pub r_c: f64,
    pub cond_scaled: f64,
    pub cond_raw: f64,
    pub constraint_max_violation: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub start_index: usize,
    /// `r_c` of the winning start after step 1 and after step 2.
    pub step1_r_c: f64,
    pub step2_r_c: f64,
    pub scaling: Vec<f64>,
    pub starts: Vec<StartReport>,
    pub seconds: f64,
}

impl OptResult {
    pub fn traj(&self) -> Result<FourierTrajectory> {
        FourierTrajectory::from_file(&self.trajectory)
    }
}

fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64 + 1);
    rng
}

fn run_start(p: &ExcitationProblem, start: usize, sample: &SampleOutcome, opts: &OptimizerOptions) -> (DVector<f64>, StartReport) {
    let c0 = &sample.coeffs;
    let initial_r_c = p.ctx.cost(c0);
    let (cs, cr) = p.ctx.conditions(c0);
    let (z1, step1) = run_step(p, p.cons.reduce(c0), false, opts.step1_max_iter, opts);
    info!("start {start}: r_c {initial_r_c:.4} -> {:.4} after step 1", step1.r_c);
    let (z2, step2) = if p.collision.is_some() {
        let (z, r) = run_step(p, z1, true, opts.step2_max_iter, opts);
        info!("start {start}: r_c {:.4} after step 2, collision shortfall {:.2e}", r.r_c, r.collision_shortfall);
        (z, Some(r))
    } else {
        (z1, None)
    };
    let c2 = p.cons.expand(&z2);
    let viol2 = p.max_violation(&c2);
    let r2 = p.ctx.cost(&c2);
    let sample_viol = p.max_violation(c0);
    let keep_sample = !(viol2 < FEASIBILITY_TOL && r2 <= initial_r_c) && sample_viol < FEASIBILITY_TOL;
    if keep_sample {
        warn!("start {start}: optimized point (r_c {r2:.4}, violation {viol2:.2e}) does not beat its sample");
    }
    let (c, r, v) = if keep_sample { (c0.clone(), initial_r_c, sample_viol) } else { (c2, r2, viol2) };
    let report = StartReport {
        start,
        sampler_draws: sample.draws,
        sampler_fallback_joints: sample.fallback_joints,
        initial_r_c,
        initial_cond_scaled: cs,
        initial_cond_raw: cr,
        step1,
        step2,
        kept_sample: keep_sample,
        final_r_c: r,
        final_violation: v,
    };
    (c, report)
}

/// Multi-start two-step optimization. Step 1 ignores collisions; step 2
/// warm-starts from it with the collision constraints added.
pub fn optimize(problem: &ExcitationProblem, opts: &OptimizerOptions) -> Result<OptResult> {
    if opts.n_starts == 0 {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    let clock = Instant::now();
    let samples =
        (0..opts.n_starts).map(|s| problem.sample_start(&mut start_rng(opts.seed, s), &opts.sampler)).collect::<Result<Vec<_>>>()?;
    let mut p = problem.clone();
    match opts.scaling {
        ColumnScaling::UnitNorm => {
            let sets: Vec<DVector<f64>> = samples.iter().map(|s| s.coeffs.clone()).collect();
            let scaling = p.ctx.unit_norm_scaling(&sets)?;
            p.ctx = p.ctx.with_scaling(scaling)?;
        }
        ColumnScaling::Uniform => p.ctx.balanced = true,
        ColumnScaling::None => {}
    }
    let results: Vec<(DVector<f64>, StartReport)> =
        (0..opts.n_starts).into_par_iter().map(|s| run_start(&p, s, &samples[s], opts)).collect();

    let rank =
        |r: &StartReport| (r.final_violation >= FEASIBILITY_TOL || !r.final_r_c.is_finite(), r.final_violation.max(0.0), r.final_r_c);
    let win = (0..results.len())
        .min_by(|&a, &b| {
            let (fa, va, ca) = rank(&results[a].1);
            let (fb, vb, cb) = rank(&results[b].1);
            fa.cmp(&fb).then(if fa { va.total_cmp(&vb) } else { ca.total_cmp(&cb) }).then(a.cmp(&b))
        })
        .unwrap();
    let (c, report) = &results[win];
    let (cond_scaled, cond_raw) = p.ctx.conditions(c);
    let feasible = report.final_violation < FEASIBILITY_TOL && report.final_r_c.is_finite();
    if !feasible {
        warn!("no start reached a feasible trajectory; returning the least-violating one");
    }
    let traj = p.ctx.trajectory(c);
    let starts: Vec<StartReport> = results.iter().map(|(_, r)| r.clone()).collect();
    Ok(OptResult {
        trajectory: traj.to_file(),
        r_c: report.final_r_c,
        cond_scaled,
        cond_raw,
        constraint_max_violation: report.final_violation,
        feasible,
        iterations: starts.iter().map(|s| s.step1.iterations + s.step2.as_ref().map_or(0, |r| r.iterations)).sum(),
        start_index: win,
        step1_r_c: report.step1.r_c,
        step2_r_c: report.step2.as_ref().map_or(report.step1.r_c, |r| r.r_c),
        scaling: p.ctx.scaling.iter().copied().collect(),
        starts,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Constraint check of a finished trajectory on a grid `factor` times
/// denser than `f_s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseCheck {
    pub factor: usize,
    pub samples: usize,
    pub coefficient_violation: f64,
    /// Largest excursion beyond a position limit.
    pub position_violation: f64,
    /// Largest `|q̇| − speed limit`.
    pub velocity_violation: f64,
    /// Smallest `g − margin`; `None` without collision constraints.
    pub collision_clearance: Option<f64>,
    pub max_violation: f64,
}

pub fn dense_check(
    chain: &KinematicChain,
    traj: &FourierTrajectory,
    mode: BoundaryMode,
    collision: Option<(&CollisionModel, f64)>,
    f_s: f64,
    factor: usize,
) -> Result<DenseCheck> {
    let times = traj.grid_times(f_s * factor as f64)?;
    let coefficient_violation = crate::fourier::feasibility_residuals(traj, chain, mode)?.max_violation();
    let n = chain.dof;
    let (mut q, mut dq, mut ddq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut pos, mut vel) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut clearance = f64::INFINITY;
    for &t in &times {
        traj.evaluate_into(t, &mut q, &mut dq, &mut ddq);
        for (i, lim) in chain.limits().enumerate() {
            pos = pos.max(q[i] - lim.q_max).max(lim.q_min - q[i]);
            vel = vel.max(dq[i] - lim.dq_max).max(lim.dq_min - dq[i]);
        }
        if let Some((model, margin)) = collision {
            for g in model.residuals(chain, &q)? {
                clearance = clearance.min(g - margin);
            }
        }
    }
    let collision_clearance = collision.map(|_| clearance);
    let max_violation = coefficient_violation.max(pos).max(vel).max(collision_clearance.map_or(0.0, |c| -c)).max(0.0);
    Ok(DenseCheck {
        factor,
        samples: times.len(),
        coefficient_violation,
        position_violation: pos,
        velocity_violation: vel,
        collision_clearance,
        max_violation,
    })
}
