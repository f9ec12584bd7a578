//! Synthetic measurement datasets from a trajectory and known parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dynamics::{rnea, StateSample, StdParams};
use crate::error::{Error, Result};
use crate::fourier::FourierTrajectory;
use crate::urdf::KinematicChain;

/// Rectangular external torque added to one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub joint: usize,
    pub start: f64,
    pub duration: f64,
    pub amplitude: f64,
}

impl Pulse {
    pub fn value(&self, t: f64) -> f64 {
        if t >= self.start && t < self.start + self.duration {
            self.amplitude
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_tau: f64,
    pub sigma_dq: f64,
    pub seed: u64,
    pub external_pulse: Option<Pulse>,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec::default()
    }
}

/// Samples `periods` whole periods of `traj` at `f_s`. Torques come from the
/// inverse dynamics with `theta`, plus white noise and the optional pulse;
/// velocities get white noise; accelerations are left as NaN. Sample `k` draws
/// its noise from its own stream, so the result does not depend on the thread
/// count.
pub fn simulate_dataset(
    chain: &KinematicChain,
    traj: &FourierTrajectory,
    theta: &StdParams,
    noise: &NoiseSpec,
    f_s: f64,
    periods: usize,
) -> Result<Dataset> {
    if traj.dof() != chain.dof {
        return Err(Error::dim("trajectory joints", chain.dof, traj.dof()));
    }
    if !(noise.sigma_tau >= 0.0 && noise.sigma_dq >= 0.0) {
        return Err(Error::InvalidArgument("noise standard deviations must be non-negative".into()));
    }
    if let Some(p) = &noise.external_pulse {
        if p.joint >= chain.dof {
            return Err(Error::InvalidArgument(format!("pulse joint {} out of range", p.joint)));
        }
    }
    traj.check_sampling(f_s)?;
    let n = traj.samples_per_period(f_s) * periods;
    let samples = (0..n)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 / f_s;
            let (q, mut dq, ddq) = traj.evaluate(t);
            let mut tau = rnea(chain, q.as_slice(), dq.as_slice(), ddq.as_slice(), theta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(k as u64);
            for i in 0..chain.dof {
                let e: f64 = StandardNormal.sample(&mut rng);
                tau[i] += noise.sigma_tau * e;
            }
            for i in 0..chain.dof {
                let e: f64 = StandardNormal.sample(&mut rng);
                dq[i] += noise.sigma_dq * e;
            }
            if let Some(p) = &noise.external_pulse {
                tau[p.joint] += p.value(t);
            }
            Ok(StateSample { t, q, dq, ddq: ddq.map(|_| f64::NAN), tau: Some(tau) })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(chain.dof, samples)
}
