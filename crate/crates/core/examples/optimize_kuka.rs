use excitation_id::base_params::compute_base_projection;
use excitation_id::collision::{compute_mfpee, read_point_cloud, resolve_all, CollisionModel, EllipsoidSpec, EmOptions};
use excitation_id::excitation::{optimize, ColumnScaling, ExcitationProblem, OptimizerOptions};
use excitation_id::fourier::{BoundaryMode, FourierTrajectory};
use excitation_id::urdf::KinematicChain;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

// Takes a few minutes per start on one core; pass the number of starts as the
// first argument.
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_starts = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let chain = KinematicChain::from_urdf_file(fixture("kuka_like.urdf"))?;
    let proj = compute_base_projection(&chain, 200, 0)?;
    let cloud = read_point_cloud(&std::fs::read_to_string(fixture("rod_ee.csv"))?)?;
    let fit = compute_mfpee(&cloud, 8, 0, &EmOptions::default())?;
    let specs: Vec<EllipsoidSpec> = serde_json::from_str(&std::fs::read_to_string(fixture("kuka_like_ellipsoids.json"))?)?;
    let model = CollisionModel::new(&chain, chain.dof - 1, fit.mfpee.means(), resolve_all(&specs, &chain)?)?;

    let omega_f = 2.0 * std::f64::consts::PI * 0.1;
    let template = FourierTrajectory::zeros(chain.dof, 5, omega_f, FourierTrajectory::mid_range_offset(&chain))?;
    let opts = OptimizerOptions { n_starts, scaling: ColumnScaling::Uniform, ..Default::default() };
    let problem = ExcitationProblem::new(&chain, &proj, &template, 20.0, BoundaryMode::Derived, Some(model), &opts)?;
    let result = optimize(&problem, &opts)?;
    println!(
        "{} base parameters, {} coefficients: cond {:.1}, r_c {:.2} -> {:.2} over the two steps, feasible {}, {:.0} s",
        proj.rank,
        problem.ctx.n_coeffs(),
        result.cond_raw,
        result.step1_r_c,
        result.step2_r_c,
        result.feasible,
        result.seconds
    );
    Ok(())
}
