mod common;

use common::*;
use excitation_id::base_params::compute_base_projection;
use excitation_id::collision::{
    compute_hull, compute_mfpee, fit_gmm, read_point_cloud, resolve_all, CollisionModel, EllipsoidSpec, EmOptions, LinkEllipsoid,
};
use excitation_id::excitation::{dense_check, optimize, ExcitationProblem, OptimizerOptions};
use excitation_id::fourier::{BoundaryMode, FourierTrajectory};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            radius * Vector3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

#[test]
fn points_on_a_sphere_are_all_hull_vertices() {
    let pts = fibonacci_sphere(300, 0.05);
    let hull = compute_hull(&pts).unwrap();
    assert_eq!(hull.vertices, (0..300).collect::<Vec<_>>());
    // Euler: a triangulated sphere with V vertices has 2V − 4 faces.
    assert_eq!(hull.faces.len(), 2 * 300 - 4);
}

fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.3))).collect()
}

#[test]
fn hull_contains_cloud_and_vertices_are_extreme() {
    let pts = random_cloud(400, 1);
    let hull = compute_hull(&pts).unwrap();
    for p in &pts {
        assert!(hull.signed_distance(p) <= 1e-12);
    }
    // Every vertex lies strictly outside the hull of the remaining points.
    for &v in &hull.vertices {
        let others: Vec<Vector3<f64>> = pts.iter().enumerate().filter(|(i, _)| *i != v).map(|(_, p)| *p).collect();
        assert!(compute_hull(&others).unwrap().signed_distance(&pts[v]) > 0.0);
    }
    let reduced: Vec<Vector3<f64>> = hull.vertices.iter().map(|&i| pts[i]).collect();
    let again = compute_hull(&reduced).unwrap();
    assert_eq!(again.vertices, (0..reduced.len()).collect::<Vec<_>>());
}

#[test]
fn degenerate_clouds_are_rejected() {
    let flat: Vec<Vector3<f64>> = (0..20).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
    assert!(compute_hull(&flat).is_err());
    assert!(compute_hull(&flat[..3]).is_err());
}

#[test]
fn single_component_fit_is_sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Normal::new(0.0, 0.02).unwrap();
    let pts: Vec<Vector3<f64>> =
        (0..500).map(|_| Vector3::new(0.1 + g.sample(&mut rng), -0.2 + 2.0 * g.sample(&mut rng), g.sample(&mut rng))).collect();
    let fit = fit_gmm(&pts, 1, 0, &EmOptions::default()).unwrap();
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    assert!((fit.means[0] - mean).norm() < 1e-12);
    let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<nalgebra::Matrix3<f64>>() / pts.len() as f64;
    assert!((fit.covs[0] - cov).amax() < 1e-7);
    assert_eq!(fit.weights, vec![1.0]);
}

#[test]
fn em_log_likelihood_never_decreases() {
    let pts = random_cloud(300, 9);
    for k in 1..=5 {
        let fit = fit_gmm(&pts, k, 4, &EmOptions::default()).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "k={k}: {} -> {}", w[0], w[1]);
        }
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tool_cloud_reduces_to_a_few_feature_points() {
    let cloud = read_point_cloud(&std::fs::read_to_string(fixture("two_link_tool.csv")).unwrap()).unwrap();
    let fit = compute_mfpee(&cloud, 8, 0, &EmOptions::default()).unwrap();
    assert!(fit.hull_points.len() <= cloud.len());
    assert!(!fit.mfpee.mu.is_empty() && fit.mfpee.mu.len() <= 8);
    let hull = compute_hull(&fit.hull_points).unwrap();
    for m in fit.mfpee.means() {
        assert!(hull.signed_distance(&m) <= 1e-9);
    }
}

fn two_link_model(eps_scale: f64) -> CollisionModel {
    let chain = two_link();
    let specs: Vec<EllipsoidSpec> = serde_json::from_str(&std::fs::read_to_string(fixture("two_link_ellipsoids.json")).unwrap()).unwrap();
    let ells: Vec<LinkEllipsoid> = resolve_all(&specs, &chain)
        .unwrap()
        .into_iter()
        .map(|e| LinkEllipsoid::new(e.link, e.center, e.eps * eps_scale).unwrap())
        .collect();
    let pts = vec![Vector3::new(0.4, 0.0, 0.0), Vector3::new(0.3, 0.0, 0.02), Vector3::new(0.2, 0.0, 0.0)];
    CollisionModel::new(&chain, 1, pts, ells).unwrap()
}

#[test]
fn residuals_shrink_as_ellipsoids_grow() {
    let chain = two_link();
    let small = two_link_model(1.0);
    let large = two_link_model(1.3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let q = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
        let gs = small.residuals(&chain, &q).unwrap();
        let gl = large.residuals(&chain, &q).unwrap();
        for (a, b) in gs.iter().zip(&gl) {
            assert!(b <= a);
        }
    }
}

#[test]
fn residuals_do_not_depend_on_the_base_mount() {
    let chain = two_link();
    let mut moved = chain.clone();
    let mount = Isometry3::from_parts(Translation3::new(0.3, -1.2, 0.7), UnitQuaternion::from_euler_angles(0.4, -0.9, 2.1));
    moved.bodies[0].origin = mount * chain.bodies[0].origin;
    let model = two_link_model(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let q = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
        let a = model.residuals(&chain, &q).unwrap();
        let b = model.residuals(&moved, &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn ellipsoid_on_the_end_effector_link_is_rejected() {
    let chain = two_link();
    let e = LinkEllipsoid::new(1, Vector3::zeros(), Vector3::repeat(0.1)).unwrap();
    assert!(CollisionModel::new(&chain, 1, vec![Vector3::zeros()], vec![e]).is_err());
    assert!(LinkEllipsoid::new(0, Vector3::zeros(), Vector3::new(0.1, 0.0, 0.1)).is_err());
}

#[test]
fn optimized_trajectory_avoids_a_blocked_region() {
    let chain = two_link();
    let model = two_link_model(1.0);
    let blocked = (0..100).flat_map(|i| (0..100).map(move |j| (i, j))).any(|(i, j)| {
        let q = [-2.5 + 5.0 * i as f64 / 99.0, -2.5 + 5.0 * j as f64 / 99.0];
        model.residuals(&chain, &q).unwrap().iter().any(|&g| g < 0.0)
    });
    assert!(blocked, "the ellipsoid should be reachable inside the joint limits");

    let proj = compute_base_projection(&chain, 200, 0).unwrap();
    let tpl = FourierTrajectory::zeros(2, 5, 2.0 * std::f64::consts::PI * 0.1, FourierTrajectory::mid_range_offset(&chain)).unwrap();
    let opts = OptimizerOptions { n_starts: 2, seed: 3, ..Default::default() };
    let p = ExcitationProblem::new(&chain, &proj, &tpl, 20.0, BoundaryMode::Derived, Some(model.clone()), &opts).unwrap();
    let res = optimize(&p, &opts).unwrap();
    assert!(res.feasible);
    let traj = res.traj().unwrap();
    let check = dense_check(&chain, &traj, BoundaryMode::Derived, Some((&model, opts.margin)), 20.0, 10).unwrap();
    assert!(check.collision_clearance.unwrap() >= 0.0, "{:?}", check);
    assert!(check.max_violation < 1e-3);
}
