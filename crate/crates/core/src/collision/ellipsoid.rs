use nalgebra::{DMatrix, Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::urdf::KinematicChain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkRef {
    Index(usize),
    Name(String),
}

/// Ellipsoid as written in config files, attached to a moving link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidSpec {
    pub link: LinkRef,
    pub center: [f64; 3],
    pub eps: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkEllipsoid {
    pub link: usize,
    pub center: Vector3<f64>,
    pub eps: Vector3<f64>,
}

impl LinkEllipsoid {
    pub fn new(link: usize, center: Vector3<f64>, eps: Vector3<f64>) -> Result<Self> {
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Collision(format!("ellipsoid semi-axes must be positive, got {eps:?}")));
        }
        Ok(LinkEllipsoid { link, center, eps })
    }

    /// xᵀAx − 1 for a point already expressed relative to the center.
    fn level(&self, x: &Vector3<f64>) -> f64 {
        x.component_div(&self.eps).norm_squared() - 1.0
    }

    fn level_grad(&self, x: &Vector3<f64>) -> Vector3<f64> {
        2.0 * x.component_div(&self.eps.component_mul(&self.eps))
    }
}

impl LinkRef {
    /// Index of the moving link this refers to.
    pub fn resolve(&self, chain: &KinematicChain) -> Result<usize> {
        match self {
            LinkRef::Index(i) if *i < chain.dof => Ok(*i),
            LinkRef::Index(i) => Err(Error::Collision(format!("link index {i} out of range (dof {})", chain.dof))),
            LinkRef::Name(name) => {
                chain.bodies.iter().position(|b| &b.link == name).ok_or_else(|| Error::Collision(format!("no moving link named `{name}`")))
            }
        }
    }
}

impl EllipsoidSpec {
    pub fn resolve(&self, chain: &KinematicChain) -> Result<LinkEllipsoid> {
        LinkEllipsoid::new(self.link.resolve(chain)?, Vector3::from(self.center), Vector3::from(self.eps))
    }
}

pub fn resolve_all(specs: &[EllipsoidSpec], chain: &KinematicChain) -> Result<Vec<LinkEllipsoid>> {
    specs.iter().map(|s| s.resolve(chain)).collect()
}

/// End-effector points checked against link ellipsoids.
#[derive(Debug, Clone)]
pub struct CollisionModel {
    pub ee_link: usize,
    pub points: Vec<Vector3<f64>>,
    pub ellipsoids: Vec<LinkEllipsoid>,
}

impl CollisionModel {
    pub fn new(chain: &KinematicChain, ee_link: usize, points: Vec<Vector3<f64>>, ellipsoids: Vec<LinkEllipsoid>) -> Result<Self> {
        if ee_link >= chain.dof {
            return Err(Error::Collision(format!("end-effector link {ee_link} out of range (dof {})", chain.dof)));
        }
        for e in &ellipsoids {
            if e.link >= chain.dof {
                return Err(Error::Collision(format!("ellipsoid link {} out of range", e.link)));
            }
            if e.link == ee_link {
                return Err(Error::Collision(format!("ellipsoid on link {} would be rigidly attached to the end-effector", e.link)));
            }
        }
        Ok(CollisionModel { ee_link, points, ellipsoids })
    }

    /// Number of residuals; ordered ellipsoid-major, then point.
    pub fn len(&self) -> usize {
        self.points.len() * self.ellipsoids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn world_points(&self, chain: &KinematicChain, frames: &[Isometry3<f64>]) -> Vec<Vector3<f64>> {
        let ee = chain.ee_frame(frames, self.ee_link);
        self.points.iter().map(|p| ee.transform_point(&(*p).into()).coords).collect()
    }

    /// g = xᵀAx − 1 per (ellipsoid, point); negative means penetration.
    pub fn residuals(&self, chain: &KinematicChain, q: &[f64]) -> Result<Vec<f64>> {
        let frames = chain.link_frames(q)?;
        let world = self.world_points(chain, &frames);
        let mut out = Vec::with_capacity(self.len());
        for e in &self.ellipsoids {
            let f = &frames[e.link];
            for p in &world {
                let x = f.inverse_transform_point(&(*p).into()).coords - e.center;
                out.push(e.level(&x));
            }
        }
        Ok(out)
    }

    /// Residuals together with their dof-column Jacobian.
    pub fn residuals_and_jacobian(&self, chain: &KinematicChain, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let frames = chain.link_frames(q)?;
        let world = self.world_points(chain, &frames);
        let axes: Vec<Vector3<f64>> = frames.iter().zip(&chain.bodies).map(|(f, b)| f.rotation * b.axis.into_inner()).collect();
        let mut g = Vec::with_capacity(self.len());
        let mut jac = DMatrix::zeros(self.len(), chain.dof);
        let ee = self.ee_link;
        let mut row = 0;
        for e in &self.ellipsoids {
            let f = &frames[e.link];
            let l = e.link;
            for p in &world {
                let x = f.inverse_transform_point(&(*p).into()).coords - e.center;
                g.push(e.level(&x));
                let dg = e.level_grad(&x);
                for j in 0..chain.dof {
                    let s = if l < j && j <= ee {
                        1.0
                    } else if ee < j && j <= l {
                        -1.0
                    } else {
                        continue;
                    };
                    let dp = axes[j].cross(&(p - frames[j].translation.vector));
                    let dx = f.rotation.inverse_transform_vector(&dp);
                    jac[(row, j)] = s * dg.dot(&dx);
                }
                row += 1;
            }
        }
        Ok((g, jac))
    }
}

/// Reads an `x,y,z` CSV (header optional) into points.
pub fn read_point_cloud(text: &str) -> Result<Vec<Vector3<f64>>> {
    let mut pts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Dataset(format!("point cloud line {}: expected 3 fields", n + 1)));
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => pts.push(Vector3::new(v[0], v[1], v[2])),
            Err(_) if pts.is_empty() && n == 0 => continue,
            Err(e) => return Err(Error::Dataset(format!("point cloud line {}: {e}", n + 1))),
        }
    }
    Ok(pts)
}
