use excitation_id::dataset::Dataset;
use excitation_id::dynamics::StateSample;
use excitation_id::filter::{fhan, filter_dataset, FilterOptions, TdState};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

const W: f64 = 2.0 * PI * 0.2;

fn velocity(t: f64) -> [f64; 2] {
    [0.8 * (W * t).sin() + 0.3 * (3.0 * W * t).cos(), -0.5 * (2.0 * W * t).cos()]
}

fn acceleration(t: f64) -> [f64; 2] {
    [0.8 * W * (W * t).cos() - 0.9 * W * (3.0 * W * t).sin(), W * (2.0 * W * t).sin()]
}

fn dataset(f_s: f64, duration: f64, sigma: f64, seed: u64) -> Dataset {
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (f_s * duration) as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / f_s;
            let v = velocity(t);
            let mut dq = DVector::from_row_slice(&v);
            if sigma > 0.0 {
                dq.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            }
            StateSample { t, q: DVector::zeros(2), dq, ddq: DVector::from_element(2, f64::NAN), tau: Some(DVector::zeros(2)) }
        })
        .collect();
    Dataset::new(2, samples).unwrap()
}

fn rms_errors(ds: &Dataset) -> (f64, f64, usize) {
    let (mut e1, mut e2, mut n) = (0.0, 0.0, 0);
    for s in ds.usable() {
        let v = velocity(s.t);
        let a = acceleration(s.t);
        for i in 0..2 {
            e1 += (s.dq[i] - v[i]).powi(2);
            e2 += (s.ddq[i] - a[i]).powi(2);
        }
        n += 2;
    }
    ((e1 / n as f64).sqrt(), (e2 / n as f64).sqrt(), n / 2)
}

#[test]
fn noiseless_velocities_are_tracked_closely() {
    let ds = dataset(1000.0, 10.0, 0.0, 0);
    let opts = FilterOptions { r: 1e5, h0_multiple: 1.0, ..Default::default() };
    let (out, summary) = filter_dataset(&ds, &opts).unwrap();
    let (e_dq, e_ddq, n) = rms_errors(&out);
    assert_eq!(n, summary.usable_samples);
    assert!(e_dq < 1e-3, "{e_dq}");
    assert!(e_ddq < 1e-2, "{e_ddq}");
}

#[test]
fn delay_compensation_reduces_error() {
    let ds = dataset(200.0, 20.0, 0.0, 0);
    let with = FilterOptions::default();
    let without = FilterOptions { delay_compensation: false, ..Default::default() };
    let (a, _, _) = rms_errors(&filter_dataset(&ds, &with).unwrap().0);
    let (b, _, _) = rms_errors(&filter_dataset(&ds, &without).unwrap().0);
    assert!(a < 0.25 * b, "compensated {a}, raw {b}");
}

#[test]
fn filtered_acceleration_beats_finite_differences_under_noise() {
    let f_s = 200.0;
    let ds = dataset(f_s, 20.0, 0.01, 3);
    let (out, _) = filter_dataset(&ds, &FilterOptions::default()).unwrap();
    let (_, e_td, _) = rms_errors(&out);
    let h = 1.0 / f_s;
    let (mut e_fd, mut n) = (0.0, 0);
    for k in 1..ds.len() - 1 {
        let t = ds.samples[k].t;
        if t < 2.0 {
            continue;
        }
        let a = acceleration(t);
        for i in 0..2 {
            let fd = (ds.samples[k + 1].dq[i] - ds.samples[k - 1].dq[i]) / (2.0 * h);
            e_fd += (fd - a[i]).powi(2);
            n += 1;
        }
    }
    let e_fd = (e_fd / n as f64).sqrt();
    assert!(e_td < 0.5 * e_fd, "td {e_td}, fd {e_fd}");
}

#[test]
fn bounded_input_gives_bounded_state() {
    let mut st = TdState::new(0.0, 1e-3, 1e3, 5e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = rand_distr::Uniform::new_inclusive(-1.0, 1.0);
    let (mut max1, mut max2) = (0.0f64, 0.0f64);
    for _ in 0..1_000_000 {
        st.step(u.sample(&mut rng));
        max1 = max1.max(st.x1.abs());
        max2 = max2.max(st.x2.abs());
    }
    assert!(st.x1.is_finite() && st.x2.is_finite());
    assert!(max1 < 2.0, "{max1}");
    assert!(max2 < 200.0, "{max2}");
}

#[test]
fn rest_at_the_target_is_a_fixpoint() {
    for (r, h0) in [(1.0, 0.1), (100.0, 0.05), (1e5, 1e-3)] {
        assert_eq!(fhan(0.0, 0.0, r, h0), 0.0);
        let mut st = TdState::new(0.42, h0 / 2.0, r, h0).unwrap();
        for _ in 0..1000 {
            st.step(0.42);
        }
        assert_eq!((st.x1, st.x2), (0.42, 0.0));
    }
}

#[test]
fn warm_up_rows_carry_no_acceleration() {
    let ds = dataset(100.0, 5.0, 0.0, 0);
    let opts = FilterOptions { warmup_s: 1.0, ..Default::default() };
    let (out, summary) = filter_dataset(&ds, &opts).unwrap();
    assert_eq!(summary.warmup_samples, 100);
    assert_eq!(summary.trailing_samples, 10);
    assert!(out.samples[..100].iter().all(|s| s.ddq.iter().all(|x| x.is_nan())));
    assert!(out.samples[100..490].iter().all(|s| s.ddq.iter().all(|x| x.is_finite())));
    assert!(out.samples[490..].iter().all(|s| s.ddq.iter().all(|x| x.is_nan())));
    assert_eq!(out.samples[7].q, ds.samples[7].q);
    assert_eq!(out.samples[7].tau, ds.samples[7].tau);
}
