use excitation_id::base_params::compute_base_projection;
use excitation_id::collision::{compute_mfpee, read_point_cloud, resolve_all, CollisionModel, EllipsoidSpec, EmOptions};
use excitation_id::excitation::{dense_check, optimize, ExcitationProblem, OptimizerOptions};
use excitation_id::fourier::{BoundaryMode, FourierTrajectory};
use excitation_id::urdf::KinematicChain;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chain = KinematicChain::from_urdf_file(fixture("two_link.urdf"))?;
    let proj = compute_base_projection(&chain, 200, 0)?;
    let cloud = read_point_cloud(&std::fs::read_to_string(fixture("two_link_tool.csv"))?)?;
    let fit = compute_mfpee(&cloud, 8, 0, &EmOptions::default())?;
    let specs: Vec<EllipsoidSpec> = serde_json::from_str(&std::fs::read_to_string(fixture("two_link_ellipsoids.json"))?)?;
    let model = CollisionModel::new(&chain, 1, fit.mfpee.means(), resolve_all(&specs, &chain)?)?;

    let omega_f = 2.0 * std::f64::consts::PI * 0.1;
    let template = FourierTrajectory::zeros(chain.dof, 5, omega_f, FourierTrajectory::mid_range_offset(&chain))?;
    let opts = OptimizerOptions::default();
    let problem = ExcitationProblem::new(&chain, &proj, &template, 20.0, BoundaryMode::Derived, Some(model.clone()), &opts)?;
    let result = optimize(&problem, &opts)?;
    for s in &result.starts {
        println!("start {}: cond {:.1} -> r_c {:.3}", s.start, s.initial_cond_raw, s.final_r_c);
    }
    println!(
        "best start {}: r_c {:.3}, cond {:.2} (scaled {:.2}), max violation {:.1e}, {:.1} s",
        result.start_index, result.r_c, result.cond_raw, result.cond_scaled, result.constraint_max_violation, result.seconds
    );
    let dc = dense_check(&chain, &result.traj()?, BoundaryMode::Derived, Some((&model, opts.margin)), 20.0, 10)?;
    println!(
        "dense check on {} samples: max violation {:.1e}, min clearance {:.3}",
        dc.samples,
        dc.max_violation,
        dc.collision_clearance.unwrap_or(f64::NAN)
    );
    println!("{}", serde_json::to_string_pretty(&result.trajectory)?);
    Ok(())
}
