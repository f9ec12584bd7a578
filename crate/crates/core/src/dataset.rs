//! Time-series datasets and their CSV form:
//! `t,q1..qN,dq1..dqN,ddq1..ddqN[,tau1..tauN]`, NaN written as an empty field.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::dynamics::StateSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dof: usize,
    pub samples: Vec<StateSample>,
}

fn field(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

impl Dataset {
    pub fn new(dof: usize, samples: Vec<StateSample>) -> Result<Self> {
        for s in &samples {
            for (what, v) in [("q", &s.q), ("dq", &s.dq), ("ddq", &s.ddq)] {
                if v.len() != dof {
                    return Err(Error::Dataset(format!("{what} has {} entries, expected {dof}", v.len())));
                }
            }
            if s.tau.as_ref().is_some_and(|t| t.len() != dof) {
                return Err(Error::Dataset(format!("tau length differs from {dof}")));
            }
        }
        Ok(Dataset { dof, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_torque(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.tau.is_some())
    }

    /// Samples whose states and torques are all finite.
    pub fn usable(&self) -> impl Iterator<Item = &StateSample> {
        self.samples.iter().filter(|s| s.is_finite() && s.tau.as_ref().is_some_and(|t| t.iter().all(|x| x.is_finite())))
    }

    /// Sampling step, checking the spacing is constant within `1e-9` s.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.samples.len() < 2 {
            return Err(Error::Dataset("need at least two samples for a sampling step".into()));
        }
        let h = self.samples[1].t - self.samples[0].t;
        if !(h > 0.0) {
            return Err(Error::NonUniformSampling { index: 1 });
        }
        let t0 = self.samples[0].t;
        for (k, s) in self.samples.iter().enumerate() {
            if (s.t - (t0 + k as f64 * h)).abs() > 1e-9 {
                return Err(Error::NonUniformSampling { index: k });
            }
        }
        Ok(h)
    }

    pub fn header(dof: usize, with_torque: bool) -> String {
        let mut cols = vec!["t".to_string()];
        for prefix in ["q", "dq", "ddq"].iter().chain(if with_torque { &["tau"][..] } else { &[][..] }) {
            cols.extend((1..=dof).map(|i| format!("{prefix}{i}")));
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let with_torque = self.has_torque();
        let mut out = Self::header(self.dof, with_torque);
        out.push('\n');
        for s in &self.samples {
            let mut row = vec![field(s.t)];
            for v in [&s.q, &s.dq, &s.ddq] {
                row.extend(v.iter().map(|x| field(*x)));
            }
            if let (true, Some(tau)) = (with_torque, &s.tau) {
                row.extend(tau.iter().map(|x| field(*x)));
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Dataset("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Dataset("first column must be `t`".into()));
        }
        let dof = cols.iter().filter(|c| c.starts_with('q') && c[1..].parse::<usize>().is_ok()).count();
        let with_torque = cols.len() == 1 + 4 * dof;
        if dof == 0 || (cols.len() != 1 + 3 * dof && !with_torque) {
            return Err(Error::Dataset(format!("unexpected header `{header}`")));
        }
        if cols != Self::header(dof, with_torque).split(',').collect::<Vec<_>>() {
            return Err(Error::Dataset(format!("unexpected header `{header}`")));
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>()
                    }
                })
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Dataset(format!("row {}: {e}", n + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Dataset(format!("row {} has {} fields, expected {}", n + 2, vals.len(), cols.len())));
            }
            let block = |k: usize| DVector::from_column_slice(&vals[1 + k * dof..1 + (k + 1) * dof]);
            samples.push(StateSample { t: vals[0], q: block(0), dq: block(1), ddq: block(2), tau: with_torque.then(|| block(3)) });
        }
        Dataset::new(dof, samples)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}
