//! Discrete tracking differentiator for measured joint velocities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Han's discrete time-optimal synthesis function.
pub fn fhan(e1: f64, e2: f64, r: f64, h0: f64) -> f64 {
    let d = r * h0;
    let d0 = h0 * d;
    let y = e1 + h0 * e2;
    let a0 = (d * d + 8.0 * r * y.abs()).sqrt();
    let a = if y.abs() > d0 { e2 + 0.5 * (a0 - d) * sign(y) } else { e2 + y / h0 };
    if a.abs() > d {
        -r * sign(a)
    } else {
        -r * a / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdState {
    pub x1: f64,
    pub x2: f64,
    pub h: f64,
    pub r: f64,
    pub h0: f64,
}

impl TdState {
    pub fn new(x1: f64, h: f64, r: f64, h0: f64) -> Result<Self> {
        if !(h > 0.0 && r > 0.0 && h0 >= h) || !x1.is_finite() || !r.is_finite() || !h0.is_finite() {
            return Err(Error::InvalidArgument(format!("tracking differentiator needs h > 0, r > 0, h0 >= h (h={h}, r={r}, h0={h0})")));
        }
        Ok(TdState { x1, x2: 0.0, h, r, h0 })
    }

    pub fn step(&mut self, v: f64) {
        let f = fhan(self.x1 - v, self.x2, self.r, self.h0);
        self.x1 += self.h * self.x2;
        self.x2 += self.h * f;
    }
}

pub fn td_step(mut state: TdState, v: f64) -> TdState {
    state.step(v);
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdParams {
    pub r: f64,
    /// Filtering horizon as a multiple of the sampling step.
    pub h0_multiple: f64,
}

impl Default for TdParams {
    fn default() -> Self {
        TdParams { r: 100.0, h0_multiple: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    pub r: f64,
    pub h0_multiple: f64,
    /// Leading span whose accelerations are withheld from regression.
    pub warmup_s: f64,
    /// Shift the tracks back by the small-signal lag of the differentiator.
    pub delay_compensation: bool,
    /// Per-joint overrides; empty means every joint uses `r` and `h0_multiple`.
    pub joints: Vec<TdParams>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        let td = TdParams::default();
        FilterOptions { r: td.r, h0_multiple: td.h0_multiple, warmup_s: 2.0, delay_compensation: true, joints: Vec::new() }
    }
}

impl FilterOptions {
    pub fn joint(&self, i: usize) -> TdParams {
        self.joints.get(i).copied().unwrap_or(TdParams { r: self.r, h0_multiple: self.h0_multiple })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFilterSummary {
    pub r: f64,
    pub h0: f64,
    /// RMS of filtered minus measured velocity over rows that kept a velocity.
    pub rms_dq_change: f64,
    pub lag_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub h: f64,
    pub samples: usize,
    pub warmup_samples: usize,
    /// Rows at the end with no compensated estimate.
    pub trailing_samples: usize,
    /// Rows carrying a finite acceleration.
    pub usable_samples: usize,
    pub joints: Vec<JointFilterSummary>,
}

fn run_td(v: &[f64], h: f64, p: TdParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut st = TdState::new(v[0], h, p.r, p.h0_multiple * h)?;
    let mut x1 = Vec::with_capacity(v.len());
    let mut x2 = Vec::with_capacity(v.len());
    for &vk in v {
        x1.push(st.x1);
        x2.push(st.x2);
        st.step(vk);
    }
    Ok((x1, x2))
}

fn at(seq: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        seq[i]
    } else {
        seq[i] * (1.0 - frac) + seq[i + 1] * frac
    }
}

/// Replaces each joint velocity by the tracked signal and each acceleration by
/// the tracked derivative; positions and torques pass through. Rows inside the
/// warm-up span, and rows too close to the end to be compensated, get NaN
/// accelerations.
pub fn filter_dataset(ds: &Dataset, opts: &FilterOptions) -> Result<(Dataset, FilterSummary)> {
    let n = ds.len();
    if !opts.joints.is_empty() && opts.joints.len() != ds.dof {
        return Err(Error::dim("per-joint filter parameters", ds.dof, opts.joints.len()));
    }
    if n < 2 {
        let mut out = ds.clone();
        for s in &mut out.samples {
            s.ddq.fill(f64::NAN);
        }
        return Ok((
            out,
            FilterSummary { h: 0.0, samples: n, warmup_samples: n, trailing_samples: 0, usable_samples: 0, joints: Vec::new() },
        ));
    }
    let h = ds.uniform_step()?;
    if ds.samples.iter().any(|s| s.dq.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("measured velocities"));
    }
    let tracks = (0..ds.dof)
        .into_par_iter()
        .map(|i| {
            let v: Vec<f64> = ds.samples.iter().map(|s| s.dq[i]).collect();
            run_td(&v, h, opts.joint(i)).map(|t| (v, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let warmup = ((opts.warmup_s / h).round().max(0.0) as usize).min(n);
    let lags: Vec<f64> = (0..ds.dof).map(|i| if opts.delay_compensation { 2.0 * opts.joint(i).h0_multiple } else { 0.0 }).collect();
    let max_lag = lags.iter().fold(0.0f64, |a, &b| a.max(b));
    let valid_end = n.saturating_sub(max_lag.ceil() as usize);

    let mut out = ds.clone();
    let mut joints = Vec::with_capacity(ds.dof);
    for (i, (v, (x1, x2))) in tracks.iter().enumerate() {
        let lag = lags[i];
        let mut sq = 0.0;
        for (k, s) in out.samples.iter_mut().enumerate() {
            if k < valid_end {
                s.dq[i] = at(x1, k as f64 + lag);
                s.ddq[i] = if lag > 0.0 { at(x2, k as f64 + lag - 0.5) } else { x2[k] };
            } else {
                s.dq[i] = x1[k];
                s.ddq[i] = f64::NAN;
            }
            if k < warmup {
                s.ddq[i] = f64::NAN;
            }
            sq += (s.dq[i] - v[k]).powi(2);
        }
        let p = opts.joint(i);
        joints.push(JointFilterSummary { r: p.r, h0: p.h0_multiple * h, rms_dq_change: (sq / n as f64).sqrt(), lag_samples: lag });
    }
    let usable_samples = out.samples.iter().filter(|s| s.ddq.iter().all(|x| x.is_finite())).count();
    Ok((out, FilterSummary { h, samples: n, warmup_samples: warmup, trailing_samples: n - valid_end, usable_samples, joints }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::StateSample;
    use nalgebra::DVector;

    fn run(v: impl Fn(f64) -> f64, h: f64, r: f64, h0: f64, steps: usize) -> Vec<TdState> {
        let mut st = TdState::new(v(0.0), h, r, h0).unwrap();
        (0..steps)
            .map(|k| {
                st.step(v(k as f64 * h));
                st
            })
            .collect()
    }

    #[test]
    fn constant_input_converges() {
        let last = *run(|_| 0.7, 0.01, 100.0, 0.05, 1).last().unwrap();
        assert!(last.x1 == 0.7 && last.x2 == 0.0);
        let mut st = TdState::new(-1.0, 0.01, 100.0, 0.05).unwrap();
        for _ in 0..2000 {
            st.step(0.7);
        }
        assert!((st.x1 - 0.7).abs() < 1e-6 && st.x2.abs() < 1e-6);
    }

    #[test]
    fn ramp_slope_within_one_percent() {
        let c = 0.8;
        let tr = run(|t| c * t, 0.01, 100.0, 0.05, 2000);
        for st in &tr[500..] {
            assert!((st.x2 - c).abs() < 0.01 * c, "{}", st.x2);
        }
    }

    #[test]
    fn sinusoid_derivative_error_bounded() {
        let w = 2.0 * std::f64::consts::PI * 0.1;
        let h = 0.01;
        let tr = run(|t| (w * t).sin(), h, 100.0, 5.0 * h, 6000);
        let worst = tr[2000..]
            .iter()
            .enumerate()
            .map(|(k, st)| {
                let t = (k + 2001) as f64 * h;
                (st.x2 - w * (w * t).cos()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TdState::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(TdState::new(0.0, 0.1, 1.0, 0.05).is_err());
        assert!(TdState::new(0.0, 0.1, -1.0, 0.5).is_err());
    }

    #[test]
    fn empty_dataset_passes_through() {
        let ds = Dataset::new(3, Vec::new()).unwrap();
        let (out, summary) = filter_dataset(&ds, &FilterOptions::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(summary.usable_samples, 0);
    }

    #[test]
    fn jittered_time_base_rejected() {
        let samples: Vec<StateSample> = [0.0, 0.1, 0.2, 0.31]
            .iter()
            .map(|&t| StateSample { t, q: DVector::zeros(1), dq: DVector::zeros(1), ddq: DVector::zeros(1), tau: None })
            .collect();
        let ds = Dataset::new(1, samples).unwrap();
        assert!(matches!(filter_dataset(&ds, &FilterOptions::default()), Err(Error::NonUniformSampling { index: 3 })));
    }
}
