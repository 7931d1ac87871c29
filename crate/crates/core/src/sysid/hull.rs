//! Incremental 3D convex hull.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexHull {
    pub points: Vec<[f64; 3]>,
    /// Outward-oriented triangles indexing `points`; empty when degenerate.
    pub faces: Vec<[usize; 3]>,
    /// Set when the input is coplanar (or lower-dimensional).
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn make_face(pts: &[Vector3<f64>], a: usize, b: usize, c: usize) -> Face {
    let n = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
    let norm = n.norm();
    let normal = if norm > 0.0 { n / norm } else { n };
    Face {
        v: [a, b, c],
        normal,
        offset: normal.dot(&pts[a]),
        alive: true,
    }
}

impl ConvexHull {
    pub fn build(input: &[[f64; 3]]) -> Self {
        let pts: Vec<Vector3<f64>> = input.iter().map(v3).collect();
        let degenerate = |points: &[[f64; 3]]| Self {
            points: points.to_vec(),
            faces: Vec::new(),
            degenerate: true,
        };
        if pts.len() < 4 {
            return degenerate(input);
        }
        let scale = pts.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1e-300);
        let eps = 1e-12 * scale;

        // Initial tetrahedron from extreme points.
        let i0 = 0;
        let Some(i1) = (0..pts.len()).max_by(|&a, &b| {
            (pts[a] - pts[i0]).norm().total_cmp(&(pts[b] - pts[i0]).norm())
        }) else {
            return degenerate(input);
        };
        if (pts[i1] - pts[i0]).norm() <= eps {
            return degenerate(input);
        }
        let dir = (pts[i1] - pts[i0]).normalize();
        let line_dist = |p: &Vector3<f64>| {
            let d = p - pts[i0];
            (d - dir * d.dot(&dir)).norm()
        };
        let i2 = (0..pts.len())
            .max_by(|&a, &b| line_dist(&pts[a]).total_cmp(&line_dist(&pts[b])))
            .unwrap_or(0);
        if line_dist(&pts[i2]) <= eps {
            return degenerate(input);
        }
        let n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
        let plane_dist = |p: &Vector3<f64>| n.dot(&(p - pts[i0]));
        let i3 = (0..pts.len())
            .max_by(|&a, &b| plane_dist(&pts[a]).abs().total_cmp(&plane_dist(&pts[b]).abs()))
            .unwrap_or(0);
        if plane_dist(&pts[i3]).abs() <= eps {
            return degenerate(input);
        }

        let mut faces: Vec<Face> = Vec::new();
        let centroid = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
        for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
            let mut f = make_face(&pts, tri[0], tri[1], tri[2]);
            if f.normal.dot(&centroid) - f.offset > 0.0 {
                f = make_face(&pts, tri[0], tri[2], tri[1]);
            }
            faces.push(f);
        }

        let seed = [i0, i1, i2, i3];
        for (pi, p) in pts.iter().enumerate() {
            if seed.contains(&pi) {
                continue;
            }
            let visible: Vec<usize> = faces
                .iter()
                .enumerate()
                .filter(|(_, f)| f.alive && f.normal.dot(p) - f.offset > eps)
                .map(|(i, _)| i)
                .collect();
            if visible.is_empty() {
                continue;
            }
            // Horizon: directed edges of visible faces whose reverse is not
            // an edge of another visible face.
            let mut edges: Vec<(usize, usize)> = Vec::with_capacity(3 * visible.len());
            for &fi in &visible {
                let v = faces[fi].v;
                edges.extend([(v[0], v[1]), (v[1], v[2]), (v[2], v[0])]);
            }
            let horizon: Vec<(usize, usize)> = edges
                .iter()
                .copied()
                .filter(|&(a, b)| !edges.contains(&(b, a)))
                .collect();
            for &fi in &visible {
                faces[fi].alive = false;
            }
            for (a, b) in horizon {
                faces.push(make_face(&pts, a, b, pi));
            }
            if faces.len() > 4 * pts.len() {
                faces.retain(|f| f.alive);
            }
        }
        Self {
            points: input.to_vec(),
            faces: faces.into_iter().filter(|f| f.alive).map(|f| f.v).collect(),
            degenerate: false,
        }
    }

    /// Indices of points that are hull vertices.
    pub fn vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Whether `p` lies inside or on the hull within `tol`.
    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        if self.degenerate {
            return false;
        }
        let pts: Vec<Vector3<f64>> = self.points.iter().map(v3).collect();
        let q = v3(p);
        self.faces.iter().all(|f| {
            let face = make_face(&pts, f[0], f[1], f[2]);
            face.normal.dot(&q) - face.offset <= tol
        })
    }

    pub fn volume(&self) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let pts: Vec<Vector3<f64>> = self.points.iter().map(v3).collect();
        let o = pts[self.faces[0][0]];
        self.faces
            .iter()
            .map(|f| (pts[f[0]] - o).dot(&(pts[f[1]] - o).cross(&(pts[f[2]] - o))) / 6.0)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cube_hull() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 2.0] {
                for z in [0.0, 3.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        pts.push([0.5, 1.0, 1.5]);
        let h = ConvexHull::build(&pts);
        assert!(!h.degenerate);
        assert_abs_diff_eq!(h.volume(), 6.0, epsilon = 1e-12);
        assert_eq!(h.vertices().len(), 8);
        assert!(h.contains(&[0.5, 1.0, 1.5], 1e-12));
        assert!(!h.contains(&[1.5, 1.0, 1.5], 1e-12));
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let pts = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.3, 0.2, 1.0]];
        assert!(ConvexHull::build(&pts).degenerate);
        assert!(ConvexHull::build(&[[1.0, 2.0, 3.0]; 6]).degenerate);
    }

    proptest! {
        #[test]
        fn hull_contains_every_point(pts in proptest::collection::vec(
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| [a, b, c]), 4..80)) {
            let h = ConvexHull::build(&pts);
            if !h.degenerate {
                for p in &pts {
                    prop_assert!(h.contains(p, 1e-9));
                }
                // Closed, consistently oriented surface: every directed edge
                // has its reverse.
                let edges: Vec<(usize, usize)> = h.faces.iter()
                    .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]).collect();
                for &(a, b) in &edges {
                    prop_assert!(edges.contains(&(b, a)));
                }
                prop_assert!(h.volume() > 0.0);
            }
        }
    }
}
