use excitation_id::base_params::compute_base_projection;
use excitation_id::dynamics::StdParams;
use excitation_id::filter::{filter_dataset, FilterOptions};
use excitation_id::fourier::FourierTrajectory;
use excitation_id::identify::{build_bounds, identify, BoundsOptions, BvlsOptions};
use excitation_id::sim::{simulate_dataset, NoiseSpec};
use excitation_id::urdf::KinematicChain;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chain = KinematicChain::from_urdf_file(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/two_link.urdf"))?;
    let proj = compute_base_projection(&chain, 200, 0)?;
    let a = DMatrix::from_row_slice(2, 3, &[0.25, -0.08, 0.04, 0.2, 0.06, -0.03]);
    let b = DMatrix::from_row_slice(2, 3, &[0.12, 0.1, -0.05, -0.15, 0.08, 0.04]);
    let traj = FourierTrajectory::new(a, b, 2.0 * std::f64::consts::PI * 0.1, FourierTrajectory::mid_range_offset(&chain))?;
    let truth = StdParams::nominal(&chain).with_friction(&[0.3, 0.2], &[0.1, 0.05])?;
    let theta_b = proj.project(&truth)?.0;
    let (lb, ub) = build_bounds(&chain, &proj, &BoundsOptions::default())?;
    let filter = FilterOptions { r: 1e5, h0_multiple: 1.0, ..Default::default() };

    for sigma_tau in [0.0, 0.05, 0.1] {
        let noise = NoiseSpec { sigma_tau, seed: 4, ..Default::default() };
        let raw = simulate_dataset(&chain, &traj, &truth, &noise, 1000.0, 2)?;
        let (filtered, _) = filter_dataset(&raw, &filter)?;
        let report = identify(&chain, &proj, &filtered, &lb, &ub, &BvlsOptions::default())?;
        let est = DVector::from_vec(report.theta_b_hat.clone());
        println!(
            "sigma_tau {sigma_tau:.2}: relative error {:.2e}, torque RMS {:.4?}, {} active bounds",
            (&est - &theta_b).amax() / theta_b.amax(),
            report.fit.torque_rms_per_joint,
            report.active_bounds.len()
        );
    }
    Ok(())
}
