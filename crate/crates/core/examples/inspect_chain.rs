use excitation_id::urdf::KinematicChain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/kuka_like.urdf");
    let chain = KinematicChain::from_urdf_file(path)?;
    println!("{}: {} actuated joints, gravity {:?}", chain.name, chain.dof, chain.gravity.as_slice());
    for b in &chain.bodies {
        let l = &b.limits;
        println!(
            "  {:<8} -> {:<8} m={:.2} kg  q in [{:+.2}, {:+.2}] rad  |dq| <= {:.2} rad/s",
            b.joint,
            b.link,
            b.mass,
            l.q_min,
            l.q_max,
            l.speed()
        );
    }
    let q = vec![0.0; chain.dof];
    let frames = chain.link_frames(&q)?;
    let ee = chain.ee_frame(&frames, chain.dof - 1);
    println!("tool frame at q = 0: {:.3?}", ee.translation.vector.as_slice());
    Ok(())
}
