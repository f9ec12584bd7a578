use excitation_id::collision::{compute_mfpee, read_point_cloud, EmOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/rod_ee.csv"))?;
    let cloud = read_point_cloud(&text)?;
    let fit = compute_mfpee(&cloud, 8, 0, &EmOptions::default())?;
    println!("{} cloud points, {} on the convex hull", cloud.len(), fit.hull_points.len());
    for (k, bic) in &fit.bic {
        println!("  K={k}: BIC {bic:.1}");
    }
    println!("selected {} feature points:", fit.mfpee.mu.len());
    for (mu, pi) in fit.mfpee.mu.iter().zip(&fit.mfpee.pi) {
        println!("  [{:+.4}, {:+.4}, {:+.4}]  weight {pi:.3}", mu[0], mu[1], mu[2]);
    }
    Ok(())
}
