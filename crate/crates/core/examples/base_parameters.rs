use excitation_id::base_params::{compute_base_projection, random_states};
use excitation_id::dynamics::{stacked_regressor, StdParams};
use excitation_id::urdf::KinematicChain;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["two_link.urdf", "kuka_like.urdf"] {
        let chain = KinematicChain::from_urdf_file(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR")))?;
        let proj = compute_base_projection(&chain, 200, 0)?;
        println!("{name}: {} standard parameters, {} base parameters", proj.n_params, proj.rank);
        println!("  {}", proj.labels().join(" "));

        let theta = StdParams::nominal(&chain);
        let theta_b = proj.project(&theta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = random_states(&chain, 20, 2.0, &mut rng);
        let y = stacked_regressor(&chain, &states)?;
        let err = (proj.select(&y)? * &theta_b.0 - &y * &theta.0).amax();
        println!("  max |Y_b theta_b - Y theta| on 20 random states: {err:.2e}");
    }
    Ok(())
}
