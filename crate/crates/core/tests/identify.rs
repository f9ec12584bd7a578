mod common;

use common::*;
use excitation_id::base_params::{compute_base_projection, BaseProjection};
use excitation_id::dataset::Dataset;
use excitation_id::dynamics::StdParams;
use excitation_id::excitation::{ExcitationProblem, OptimizerOptions};
use excitation_id::fourier::{BoundaryMode, FourierTrajectory};
use excitation_id::identify::{build_bounds, identify, map_bounds, standard_bounds, validate, BoundsOptions, BvlsOptions};
use excitation_id::sim::{simulate_dataset, NoiseSpec};
use excitation_id::urdf::KinematicChain;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    chain: KinematicChain,
    proj: BaseProjection,
    theta: StdParams,
    traj: FourierTrajectory,
    validation: FourierTrajectory,
}

fn setup() -> Setup {
    let chain = two_link();
    let proj = compute_base_projection(&chain, 200, 0).unwrap();
    let theta = StdParams::nominal(&chain).with_friction(&[0.3, 0.2], &[0.1, 0.05]).unwrap();
    let tpl = FourierTrajectory::zeros(2, 5, 2.0 * std::f64::consts::PI * 0.1, FourierTrajectory::mid_range_offset(&chain)).unwrap();
    let opts = OptimizerOptions::default();
    let p = ExcitationProblem::new(&chain, &proj, &tpl, 20.0, BoundaryMode::Derived, None, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let traj = tpl.with_coeffs(&p.sample_start(&mut rng, &opts.sampler).unwrap().coeffs);
    let validation = tpl.with_coeffs(&p.sample_start(&mut rng, &opts.sampler).unwrap().coeffs);
    Setup { chain, proj, theta, traj, validation }
}

/// Dataset with exact accelerations and torques plus optional noise.
fn exact_dataset(s: &Setup, traj: &FourierTrajectory, f_s: f64, sigma: f64, seed: u64) -> Dataset {
    let mut ds = simulate_dataset(&s.chain, traj, &s.theta, &NoiseSpec { sigma_tau: sigma, seed, ..Default::default() }, f_s, 1).unwrap();
    for row in &mut ds.samples {
        row.ddq = traj.evaluate(row.t).2;
    }
    ds
}

fn truth(s: &Setup) -> DVector<f64> {
    s.proj.project(&s.theta).unwrap().0
}

#[test]
fn default_box_contains_the_true_base_parameters() {
    let s = setup();
    let (lo, hi) = build_bounds(&s.chain, &s.proj, &BoundsOptions::default()).unwrap();
    let t = truth(&s);
    for i in 0..t.len() {
        assert!(lo[i] <= t[i] && t[i] <= hi[i], "{}: {} not in [{}, {}]", i, t[i], lo[i], hi[i]);
    }
}

#[test]
fn mapped_box_contains_every_image_of_the_standard_box() {
    let s = setup();
    let (lb, ub) = standard_bounds(&s.theta, &BoundsOptions::default()).unwrap();
    let (lo, hi) = map_bounds(&s.proj.k, &lb, &ub);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let x = DVector::from_fn(lb.len(), |j, _| rng.gen_range(lb[j]..=ub[j]));
        let y = &s.proj.k * x;
        for i in 0..y.len() {
            assert!(lo[i] - 1e-12 <= y[i] && y[i] <= hi[i] + 1e-12);
        }
    }
}

#[test]
fn noiseless_data_recovers_base_parameters() {
    let s = setup();
    let ds = exact_dataset(&s, &s.traj, 100.0, 0.0, 0);
    let (lo, hi) = build_bounds(&s.chain, &s.proj, &BoundsOptions::default()).unwrap();
    let rep = identify(&s.chain, &s.proj, &ds, &lo, &hi, &BvlsOptions::default()).unwrap();
    let t = truth(&s);
    let est = DVector::from_vec(rep.theta_b_hat.clone());
    assert!((&est - &t).amax() / t.amax() < 1e-6, "{}", (&est - &t).amax());
    assert!(rep.fit.torque_rms_per_joint.iter().all(|&r| r < 1e-8));
    assert!(rep.converged && rep.kkt_satisfied);
    assert!(rep.active_bounds.is_empty());

    let held_out = exact_dataset(&s, &s.validation, 100.0, 0.0, 0);
    let fit = validate(&s.chain, &s.proj, &est, &held_out).unwrap();
    assert!(fit.torque_rms_per_joint.iter().all(|&r| r < 1e-8));
}

fn residual_norm(s: &Setup, ds: &Dataset, est: &[f64]) -> f64 {
    let fit = validate(&s.chain, &s.proj, &DVector::from_vec(est.to_vec()), ds).unwrap();
    fit.torque_rms_per_joint.iter().map(|r| r * r).sum::<f64>()
}

#[test]
fn tighter_boxes_never_fit_better() {
    let s = setup();
    let ds = exact_dataset(&s, &s.traj, 100.0, 0.5, 4);
    let mut prev = f64::INFINITY;
    for margin in [0.02, 0.1, 0.5, 2.0] {
        let opts = BoundsOptions { mu_margin: margin, ..Default::default() };
        let (lo, hi) = build_bounds(&s.chain, &s.proj, &opts).unwrap();
        let rep = identify(&s.chain, &s.proj, &ds, &lo, &hi, &BvlsOptions::default()).unwrap();
        let r = residual_norm(&s, &ds, &rep.theta_b_hat);
        assert!(r <= prev * (1.0 + 1e-12), "margin {margin}: {r} > {prev}");
        prev = r;
        for (i, x) in rep.theta_b_hat.iter().enumerate() {
            assert!(lo[i] <= *x && *x <= hi[i]);
        }
    }
}

#[test]
fn corrupted_torques_inflate_validation_error() {
    let s = setup();
    let clean = exact_dataset(&s, &s.traj, 100.0, 0.01, 5);
    let mut corrupt = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = corrupt.len();
    for k in 0..n / 10 {
        let row = &mut corrupt.samples[(k * 7919) % n];
        let tau = row.tau.as_mut().unwrap();
        for v in tau.iter_mut() {
            *v += rng.gen_range(-20.0..20.0);
        }
    }
    let (lo, hi) = build_bounds(&s.chain, &s.proj, &BoundsOptions::default()).unwrap();
    let held_out = exact_dataset(&s, &s.validation, 100.0, 0.0, 0);
    let rms = |ds: &Dataset| {
        let rep = identify(&s.chain, &s.proj, ds, &lo, &hi, &BvlsOptions::default()).unwrap();
        let fit = validate(&s.chain, &s.proj, &DVector::from_vec(rep.theta_b_hat), &held_out).unwrap();
        fit.torque_rms_per_joint.iter().cloned().fold(0.0, f64::max)
    };
    let (a, b) = (rms(&clean), rms(&corrupt));
    assert!(b > 5.0 * a, "clean {a}, corrupted {b}");
}

#[test]
fn validating_on_training_data_reproduces_the_fit() {
    let s = setup();
    let ds = exact_dataset(&s, &s.traj, 100.0, 0.1, 8);
    let (lo, hi) = build_bounds(&s.chain, &s.proj, &BoundsOptions::default()).unwrap();
    let rep = identify(&s.chain, &s.proj, &ds, &lo, &hi, &BvlsOptions::default()).unwrap();
    let fit = validate(&s.chain, &s.proj, &DVector::from_vec(rep.theta_b_hat.clone()), &ds).unwrap();
    for (a, b) in fit.torque_rms_per_joint.iter().zip(&rep.fit.torque_rms_per_joint) {
        assert!((a - b).abs() < 1e-12 * b.max(1.0));
    }
    for r in &fit.torque_rms_per_joint {
        assert!((r - 0.1).abs() < 0.02, "{r}");
    }
}

#[test]
fn rows_without_accelerations_are_skipped() {
    let s = setup();
    let mut ds = exact_dataset(&s, &s.traj, 100.0, 0.0, 0);
    for row in ds.samples.iter_mut().take(50) {
        row.ddq.fill(f64::NAN);
        row.tau.as_mut().unwrap().fill(1e6);
    }
    let (lo, hi) = build_bounds(&s.chain, &s.proj, &BoundsOptions::default()).unwrap();
    let rep = identify(&s.chain, &s.proj, &ds, &lo, &hi, &BvlsOptions::default()).unwrap();
    assert_eq!(rep.fit.n_samples, ds.len() - 50);
    let t = truth(&s);
    assert!((DVector::from_vec(rep.theta_b_hat) - &t).amax() / t.amax() < 1e-6);
}
