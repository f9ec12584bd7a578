use excitation_id::filter::TdState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, n, skip) = (0.001, 4000, 1000);
    let w = 2.0 * std::f64::consts::PI * 0.5;
    let noise = Normal::new(0.0, 1e-3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: Vec<f64> = (0..n).map(|k| (w * k as f64 * h).sin() + noise.sample(&mut rng)).collect();
    let truth = |k: usize| w * (w * k as f64 * h).cos();

    let fd_err = (skip..n).map(|k| ((v[k] - v[k - 1]) / h - truth(k)).abs()).fold(0.0, f64::max);
    println!("sin(2 pi 0.5 t) with 1e-3 noise, h = {h} s");
    println!("finite difference: max velocity error {fd_err:.3}");

    for h0_multiple in [5.0, 20.0] {
        let mut td = TdState::new(v[0], h, 1e3, h0_multiple * h)?;
        let x2: Vec<f64> = v
            .iter()
            .map(|&x| {
                td.step(x);
                td.x2
            })
            .collect();
        let err = |lag: usize| (skip..n).map(|k| (x2[k] - truth(k - lag)).abs()).fold(0.0, f64::max);
        let best = (0..200).min_by(|&a, &b| err(a).total_cmp(&err(b))).unwrap_or(0);
        println!(
            "tracking differentiator r=1e3 h0={h0_multiple}h: max error {:.3}, {:.3} after removing a {best}-sample lag",
            err(0),
            err(best)
        );
    }
    Ok(())
}
