//! Incremental 3D convex hull.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(points: &[Vector3<f64>], v: [usize; 3]) -> Self {
        let n = (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]]));
        let normal = n / n.norm();
        Face { v, normal, offset: normal.dot(&points[v[0]]), alive: true }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Triangulated hull: outward-oriented facets over indices into the input.
#[derive(Debug, Clone)]
pub struct Hull {
    pub faces: Vec<[usize; 3]>,
    /// Sorted indices of the input points that are hull vertices.
    pub vertices: Vec<usize>,
    normals: Vec<(Vector3<f64>, f64)>,
}

impl Hull {
    /// Largest signed distance of `p` beyond any facet plane (≤ 0 inside).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normals.iter().map(|(n, d)| n.dot(p) - d).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn farthest<F: Fn(&Vector3<f64>) -> f64>(points: &[Vector3<f64>], f: F) -> (usize, f64) {
    points.iter().enumerate().map(|(i, p)| (i, f(p))).fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

pub fn compute_hull(points: &[Vector3<f64>]) -> Result<Hull> {
    if points.len() < 4 {
        return Err(Error::DegenerateCloud(format!("need at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("point cloud"));
    }
    let (lo, hi) =
        points.iter().fold((Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let scale = (hi - lo).norm();
    let eps = 1e-12 * scale.max(1.0);
    let degenerate = 1e-9 * scale;

    let i0 = farthest(points, |p| -p.x).0;
    let (i1, d1) = farthest(points, |p| (p - points[i0]).norm());
    if d1 <= degenerate {
        return Err(Error::DegenerateCloud("all points coincide".into()));
    }
    let dir = (points[i1] - points[i0]) / d1;
    let (i2, d2) = farthest(points, |p| {
        let r = p - points[i0];
        (r - dir * dir.dot(&r)).norm()
    });
    if d2 <= degenerate {
        return Err(Error::DegenerateCloud("points are collinear".into()));
    }
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
    let (i3, d3) = farthest(points, |p| n.dot(&(p - points[i0])).abs());
    if d3 <= degenerate {
        return Err(Error::DegenerateCloud("points are coplanar".into()));
    }

    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let add = |faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, v: [usize; 3]| {
        let id = faces.len();
        faces.push(Face::new(points, v));
        for k in 0..3 {
            edges.insert((v[k], v[(k + 1) % 3]), id);
        }
    };
    let centroid = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let f = Face::new(points, tri);
        let v = if f.distance(&centroid) > 0.0 { [tri[0], tri[2], tri[1]] } else { tri };
        add(&mut faces, &mut edges, v);
    }

    for (p_idx, p) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&p_idx) {
            continue;
        }
        let visible: Vec<usize> = faces.iter().enumerate().filter(|(_, f)| f.alive && f.distance(p) > eps).map(|(i, _)| i).collect();
        if visible.is_empty() {
            continue;
        }
        let mut horizon = Vec::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let across = edges[&(b, a)];
                if !visible.contains(&across) {
                    horizon.push((a, b));
                }
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
            let v = faces[fi].v;
            for k in 0..3 {
                edges.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        for (a, b) in horizon {
            add(&mut faces, &mut edges, [a, b, p_idx]);
        }
    }

    let alive: Vec<&Face> = faces.iter().filter(|f| f.alive).collect();
    let mut vertices: Vec<usize> = alive.iter().flat_map(|f| f.v).collect();
    vertices.sort_unstable();
    vertices.dedup();
    Ok(Hull { faces: alive.iter().map(|f| f.v).collect(), vertices, normals: alive.iter().map(|f| (f.normal, f.offset)).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_with_centroid() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vector3::new(x, y, z));
                }
            }
        }
        pts.push(Vector3::repeat(0.5));
        let h = compute_hull(&pts).unwrap();
        assert_eq!(h.vertices, (0..8).collect::<Vec<_>>());
        // Closed triangulated surface of a cube: 12 triangles.
        assert_eq!(h.faces.len(), 12);
        for p in &pts {
            assert!(h.signed_distance(p) <= 1e-10);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let flat: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert!(matches!(compute_hull(&flat), Err(Error::DegenerateCloud(_))));
        let line: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(compute_hull(&line), Err(Error::DegenerateCloud(_))));
        assert!(compute_hull(&line[..3]).is_err());
    }
}
