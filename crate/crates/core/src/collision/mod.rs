//! End-effector geometry: hull reduction, mixture summary, ellipsoid checks.

mod ellipsoid;
mod gmm;
mod hull;

pub use ellipsoid::{read_point_cloud, resolve_all, CollisionModel, EllipsoidSpec, LinkEllipsoid, LinkRef};
pub use gmm::{fit_gmm, select_mixture, EmOptions, Gmm, Mfpee, MixtureSelection};
pub use hull::{compute_hull, Hull};

use nalgebra::Vector3;

use crate::error::Result;

pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Clone)]
pub struct MfpeeFit {
    pub mfpee: Mfpee,
    pub hull_points: Vec<Vector3<f64>>,
    pub bic: Vec<(usize, f64)>,
    pub history: Vec<f64>,
}

/// Hull vertices of the cloud, summarised by the lowest-BIC Gaussian mixture.
pub fn compute_mfpee(cloud: &[Vector3<f64>], k_max: usize, seed: u64, opts: &EmOptions) -> Result<MfpeeFit> {
    let hull = compute_hull(cloud)?;
    let hull_points: Vec<Vector3<f64>> = hull.vertices.iter().map(|&i| cloud[i]).collect();
    let sel = select_mixture(&hull_points, k_max, seed, opts)?;
    Ok(MfpeeFit { mfpee: Mfpee::from_gmm(&sel.best), hull_points, bic: sel.bic, history: sel.best.history })
}
