//! The parametric polyhedral hypersurface: a closed oriented collection of
//! segments (d=2) or triangles (d=3) with piecewise linear fields on its
//! vertices, mass-lumped inner products and elementwise surface gradients.

use crate::la::{self, Mat3, Vec3};
use crate::{Error, Result};

/// Continuous piecewise linear scalar field (one value per vertex).
pub type ScalarField = Vec<f64>;
/// Piecewise linear vector field.
pub type VectorField = Vec<Vec3>;
/// Piecewise linear tensor field.
pub type TensorField = Vec<Mat3>;

/// Relative measure floor below which a simplex counts as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub dim: usize,
    pub vertices: Vec<Vec3>,
    /// `dim` vertex indices per simplex; the last slot is unused for d=2.
    /// The stored ordering orients the element normal into the exterior.
    pub simplices: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    pub fn new(dim: usize, vertices: Vec<Vec3>, simplices: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { dim, vertices, simplices };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    /// Vertex indices of simplex `j` (d of them).
    #[inline]
    pub fn simplex(&self, j: usize) -> &[usize] {
        &self.simplices[j][..self.dim]
    }

    /// Checks closedness and consistent orientation; never repairs.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidMesh(format!("unsupported dimension {}", self.dim)));
        }
        let nv = self.vertices.len();
        for s in &self.simplices {
            for &v in &s[..self.dim] {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!("vertex index {v} out of range")));
                }
            }
        }
        if self.dim == 2 {
            // closed oriented curve: every vertex once as tail, once as head
            let mut out_deg = vec![0usize; nv];
            let mut in_deg = vec![0usize; nv];
            for s in &self.simplices {
                out_deg[s[0]] += 1;
                in_deg[s[1]] += 1;
            }
            for k in 0..nv {
                if out_deg[k] != 1 || in_deg[k] != 1 {
                    return Err(Error::InvalidMesh(format!(
                        "vertex {k} has degree (out {}, in {}), expected (1, 1)",
                        out_deg[k], in_deg[k]
                    )));
                }
            }
        } else {
            // closed oriented triangulation: each edge in exactly two
            // triangles, traversed in opposite directions
            use std::collections::HashMap;
            let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
            for s in &self.simplices {
                for e in 0..3 {
                    let a = s[e];
                    let b = s[(e + 1) % 3];
                    if a == b {
                        return Err(Error::InvalidMesh("repeated vertex in triangle".into()));
                    }
                    let key = (a.min(b), a.max(b));
                    let sign = if a < b { 1 } else { -1 };
                    *edges.entry(key).or_insert(0) += sign;
                    let count = edges.get(&key).copied().unwrap();
                    if count.abs() > 1 {
                        return Err(Error::InvalidMesh(format!(
                            "edge ({},{}) traversed twice in the same direction",
                            key.0, key.1
                        )));
                    }
                }
            }
            let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
            for s in &self.simplices {
                for e in 0..3 {
                    let a = s[e];
                    let b = s[(e + 1) % 3];
                    *edge_use.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                }
            }
            for (&(a, b), &uses) in &edge_use {
                if uses != 2 {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a},{b}) belongs to {uses} triangles, expected 2"
                    )));
                }
                if edges[&(a, b)] != 0 {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a},{b}) has inconsistent orientation"
                    )));
                }
            }
            let mut used = vec![false; nv];
            for s in &self.simplices {
                for &v in &s[..3] {
                    used[v] = true;
                }
            }
            if used.iter().any(|u| !u) {
                return Err(Error::InvalidMesh("isolated vertex".into()));
            }
        }
        Ok(())
    }

    /// Unit normal (pointing into the exterior) and measure of simplex `j`.
    pub fn element_geometry(&self, j: usize) -> (Vec3, f64) {
        let s = &self.simplices[j];
        if self.dim == 2 {
            let t = la::sub(self.vertices[s[1]], self.vertices[s[0]]);
            let len = la::norm(t);
            (la::scale(1.0 / len, la::curve_normal_dir(t)), len)
        } else {
            let e1 = la::sub(self.vertices[s[1]], self.vertices[s[0]]);
            let e2 = la::sub(self.vertices[s[2]], self.vertices[s[0]]);
            let n = la::cross(e1, e2);
            let n2 = la::norm(n);
            (la::scale(1.0 / n2, n), 0.5 * n2)
        }
    }

    /// Returns the mesh with every vertex moved by `delta`.
    pub fn displaced(&self, delta: &VectorField) -> Self {
        assert_eq!(delta.len(), self.vertices.len());
        let vertices = self
            .vertices
            .iter()
            .zip(delta)
            .map(|(q, d)| la::add(*q, *d))
            .collect();
        Self { dim: self.dim, vertices, simplices: self.simplices.clone() }
    }
}

/// Cached per-element and per-vertex geometry of one surface configuration.
/// Rebuilt whenever vertices move.
pub struct SurfaceGeometry {
    pub dim: usize,
    pub normals: Vec<Vec3>,
    pub measures: Vec<f64>,
    /// P1 basis gradients: `grads[j][a]` is the (tangential) gradient of the
    /// hat function of local vertex `a` on simplex `j`.
    pub grads: Vec<[Vec3; 3]>,
    /// Lumped vertex weights |Lambda_k| / d.
    pub vertex_weights: Vec<f64>,
    /// Area-weighted vertex normals omega_k (|omega| <= 1).
    pub vertex_normals: VectorField,
    /// Simplices containing each vertex.
    pub vertex_stars: Vec<Vec<usize>>,
}

impl SurfaceGeometry {
    pub fn build(mesh: &SurfaceMesh) -> Result<Self> {
        let d = mesh.dim;
        let nj = mesh.num_simplices();
        let nv = mesh.num_vertices();
        let mut normals = Vec::with_capacity(nj);
        let mut measures = Vec::with_capacity(nj);
        let mut grads = vec![[la::ZERO_VEC; 3]; nj];
        let mut star_area = vec![0.0; nv];
        let mut omega = vec![la::ZERO_VEC; nv];
        let mut vertex_stars = vec![Vec::new(); nv];

        let mut mean_measure = 0.0;
        for j in 0..nj {
            let (nu, m) = mesh.element_geometry(j);
            mean_measure += m;
            normals.push(nu);
            measures.push(m);
        }
        mean_measure /= nj as f64;
        for j in 0..nj {
            if !(measures[j] > DEGENERACY_FLOOR * mean_measure) {
                return Err(Error::MeshQuality(format!(
                    "simplex {j} has measure {} below the degeneracy floor ({} x mean)",
                    measures[j], DEGENERACY_FLOOR
                )));
            }
        }
        for j in 0..nj {
            let s = &mesh.simplices[j];
            let m = measures[j];
            let nu = normals[j];
            if d == 2 {
                let t = la::scale(1.0 / m, la::sub(mesh.vertices[s[1]], mesh.vertices[s[0]]));
                grads[j][0] = la::scale(-1.0 / m, t);
                grads[j][1] = la::scale(1.0 / m, t);
            } else {
                let p = [mesh.vertices[s[0]], mesh.vertices[s[1]], mesh.vertices[s[2]]];
                for a in 0..3 {
                    let opp = la::sub(p[(a + 2) % 3], p[(a + 1) % 3]);
                    grads[j][a] = la::scale(1.0 / (2.0 * m), la::cross(nu, opp));
                }
            }
            for &k in mesh.simplex(j) {
                star_area[k] += m;
                omega[k] = la::axpy(m, nu, omega[k]);
                vertex_stars[k].push(j);
            }
        }
        let mut vertex_weights = vec![0.0; nv];
        for k in 0..nv {
            if star_area[k] == 0.0 {
                return Err(Error::InvalidMesh(format!("isolated vertex {k}")));
            }
            omega[k] = la::scale(1.0 / star_area[k], omega[k]);
            vertex_weights[k] = star_area[k] / d as f64;
        }
        Ok(Self {
            dim: d,
            normals,
            measures,
            grads,
            vertex_weights,
            vertex_normals: omega,
            vertex_stars,
        })
    }

    pub fn area(&self) -> f64 {
        self.measures.iter().sum()
    }

    /// min/max element measure ratio, the logged mesh quality indicator.
    pub fn quality(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &m in &self.measures {
            lo = lo.min(m);
            hi = hi.max(m);
        }
        lo / hi
    }

    /// Mass-lumped inner product of elementwise evaluable integrands:
    /// sum_j (|sigma_j|/d) sum_a f(j, a) g(j, a), where `a` runs over the
    /// local vertices of simplex j and the callbacks see one-sided limits.
    pub fn lumped<F, G>(&self, mesh: &SurfaceMesh, f: F, g: G) -> f64
    where
        F: Fn(usize, usize) -> f64,
        G: Fn(usize, usize) -> f64,
    {
        let d = self.dim as f64;
        let mut total = 0.0;
        for j in 0..mesh.num_simplices() {
            let w = self.measures[j] / d;
            for a in 0..self.dim {
                total += w * f(j, a) * g(j, a);
            }
        }
        total
    }

    /// Accumulates a mass-lumped functional against every scalar hat
    /// function: out[k] += sum_{j in Theta_k} (|sigma_j|/d) f(j, a_k).
    pub fn lumped_into_scalar<F>(&self, mesh: &SurfaceMesh, f: F, out: &mut [f64])
    where
        F: Fn(usize, usize) -> f64,
    {
        let d = self.dim as f64;
        for j in 0..mesh.num_simplices() {
            let w = self.measures[j] / d;
            for (a, &k) in mesh.simplex(j).iter().enumerate() {
                out[k] += w * f(j, a);
            }
        }
    }

    /// Vector analogue of `lumped_into_scalar`.
    pub fn lumped_into_vector<F>(&self, mesh: &SurfaceMesh, f: F, out: &mut [Vec3])
    where
        F: Fn(usize, usize) -> Vec3,
    {
        let d = self.dim as f64;
        for j in 0..mesh.num_simplices() {
            let w = self.measures[j] / d;
            for (a, &k) in mesh.simplex(j).iter().enumerate() {
                out[k] = la::axpy(w, f(j, a), out[k]);
            }
        }
    }

    /// Exact integral over the surface of an elementwise constant integrand.
    pub fn integrate_constant<F>(&self, f: F) -> f64
    where
        F: Fn(usize) -> f64,
    {
        self.measures.iter().enumerate().map(|(j, m)| m * f(j)).sum()
    }

    /// Surface gradient of a P1 scalar field on simplex `j` (constant there).
    pub fn gradient_scalar(&self, mesh: &SurfaceMesh, field: &[f64], j: usize) -> Vec3 {
        let mut g = la::ZERO_VEC;
        for (a, &k) in mesh.simplex(j).iter().enumerate() {
            g = la::axpy(field[k], self.grads[j][a], g);
        }
        g
    }

    /// Surface gradient of a P1 vector field: (grad_s v)_{i l} = d_l v_i.
    pub fn gradient_vector(&self, mesh: &SurfaceMesh, field: &[Vec3], j: usize) -> Mat3 {
        let mut g = la::ZERO_MAT;
        for (a, &k) in mesh.simplex(j).iter().enumerate() {
            let gr = self.grads[j][a];
            for i in 0..3 {
                for l in 0..3 {
                    g[i][l] += field[k][i] * gr[l];
                }
            }
        }
        g
    }

    /// Surface divergence of a P1 vector field on simplex `j`.
    pub fn divergence_vector(&self, mesh: &SurfaceMesh, field: &[Vec3], j: usize) -> f64 {
        let mut s = 0.0;
        for (a, &k) in mesh.simplex(j).iter().enumerate() {
            s += la::dot(field[k], self.grads[j][a]);
        }
        s
    }

    /// Row-wise surface divergence of a P1 tensor field:
    /// (div_s Z)_i = sum_l d_l Z_{i l}.
    pub fn divergence_tensor(&self, mesh: &SurfaceMesh, field: &[Mat3], j: usize) -> Vec3 {
        let mut s = la::ZERO_VEC;
        for (a, &k) in mesh.simplex(j).iter().enumerate() {
            s = la::add(s, la::mat_vec(field[k], self.grads[j][a]));
        }
        s
    }

    /// Projected symmetric gradient D_s(v) = P (grad v + grad v^T) P / 2 of a
    /// P1 vector field on simplex `j`.
    pub fn rate_of_deformation(&self, mesh: &SurfaceMesh, field: &[Vec3], j: usize) -> Mat3 {
        let g = self.gradient_vector(mesh, field, j);
        self.project_sym(g, j)
    }

    /// P (G + G^T) P / 2 with P the tangential projector of simplex `j`.
    pub fn project_sym(&self, g: Mat3, j: usize) -> Mat3 {
        let nu = self.normals[j];
        let sym = la::mat_scale(0.5, la::mat_add(g, la::transpose(g)));
        // P A P with P = I - nu nu^T
        let a_nu = la::mat_vec(sym, nu);
        let nu_a = la::vec_mat(nu, sym);
        let nan = la::dot(nu, a_nu);
        let mut out = sym;
        for i in 0..3 {
            for l in 0..3 {
                out[i][l] +=
                    -nu[i] * nu_a[l] - a_nu[i] * nu[l] + nan * nu[i] * nu[l];
            }
        }
        out
    }

    /// Enclosed volume via the divergence theorem on the polyhedral surface.
    pub fn enclosed_volume(&self, mesh: &SurfaceMesh) -> f64 {
        let d = self.dim as f64;
        let mut vol = 0.0;
        for j in 0..mesh.num_simplices() {
            let mut centroid = la::ZERO_VEC;
            for &k in mesh.simplex(j) {
                centroid = la::add(centroid, mesh.vertices[k]);
            }
            centroid = la::scale(1.0 / d, centroid);
            vol += self.measures[j] * la::dot(centroid, self.normals[j]);
        }
        vol / d
    }
}

/// Summary quantities of one surface configuration.
#[derive(Debug, Clone, Copy)]
pub struct GeometricDiagnostics {
    pub area: f64,
    pub enclosed_volume: f64,
    /// (1/4pi) <1, |kappa|^2 - |W|^2>^h; approaches the Euler characteristic
    /// for d=3 and is `None` when the curvature fields are not supplied.
    pub euler_characteristic_estimate: Option<f64>,
}

pub fn geometric_diagnostics(
    mesh: &SurfaceMesh,
    geo: &SurfaceGeometry,
    curvature: Option<(&VectorField, &TensorField)>,
) -> GeometricDiagnostics {
    let euler = curvature.map(|(kappa, w)| {
        let integrand = |_j: usize, k: usize| {
            la::dot(kappa[k], kappa[k]) - la::mat_frob2(w[k])
        };
        let mut total = 0.0;
        for j in 0..mesh.num_simplices() {
            let wgt = geo.measures[j] / geo.dim as f64;
            for &k in mesh.simplex(j) {
                total += wgt * integrand(j, k);
            }
        }
        total / (4.0 * std::f64::consts::PI)
    });
    GeometricDiagnostics {
        area: geo.area(),
        enclosed_volume: geo.enclosed_volume(mesh),
        euler_characteristic_estimate: euler,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::f64::consts::PI;

    #[test]
    fn segment_normal_and_measure() {
        let mesh = SurfaceMesh {
            dim: 2,
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            simplices: vec![[1, 0, 0]],
        };
        // segment from (1,0) to (0,0): tangent -x, normal rot_cw(-x) = +y...
        let (nu, m) = mesh.element_geometry(0);
        assert!((m - 1.0).abs() < 1e-15);
        assert!((nu[0] - 0.0).abs() < 1e-15 && (nu[1] + 1.0).abs() < 1e-15);
        // reversed orientation flips the normal, keeps the measure
        let mesh2 = SurfaceMesh {
            dim: 2,
            vertices: mesh.vertices.clone(),
            simplices: vec![[0, 1, 0]],
        };
        let (nu2, m2) = mesh2.element_geometry(0);
        assert!((m2 - 1.0).abs() < 1e-15);
        assert!((nu2[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_normal() {
        let mesh = SurfaceMesh {
            dim: 3,
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            simplices: vec![[0, 1, 2]],
        };
        let (nu, m) = mesh.element_geometry(0);
        assert!((m - 0.5).abs() < 1e-15);
        assert!((nu[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polygon_normals_radial() {
        let n = 64;
        let mesh = shapes::circle(1.0, n);
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let expected = 2.0 * (PI / n as f64).sin();
        for j in 0..n {
            assert!((geo.measures[j] - expected).abs() < 1e-13);
            // outward radial normal at the segment midpoint
            let s = mesh.simplex(j);
            let mid = la::scale(0.5, la::add(mesh.vertices[s[0]], mesh.vertices[s[1]]));
            let dir = la::normalize(mid);
            assert!(la::dot(geo.normals[j], dir) > 0.999);
        }
    }

    #[test]
    fn vertex_normals_ngon() {
        // regular n-gon: omega_k = cos(pi/n) * radial direction
        for n in [4usize, 64] {
            let mesh = shapes::circle(1.0, n);
            let geo = SurfaceGeometry::build(&mesh).unwrap();
            let want = (PI / n as f64).cos();
            for k in 0..n {
                let r = la::normalize(mesh.vertices[k]);
                let omega = geo.vertex_normals[k];
                assert!((la::norm(omega) - want).abs() < 1e-13);
                assert!(la::dot(la::normalize(omega), r) > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn vertex_normals_icosahedron() {
        let mesh = shapes::icosphere(1.0, 0);
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        for k in 0..mesh.num_vertices() {
            let omega = geo.vertex_normals[k];
            let r = la::normalize(mesh.vertices[k]);
            assert!(la::norm(omega) < 1.0);
            assert!(la::norm(omega) > 0.0);
            let cosang = la::dot(la::normalize(omega), r);
            assert!(cosang > 1.0 - 1e-12, "omega not parallel to position");
        }
    }

    #[test]
    fn lumping_identity_nu_vs_omega() {
        // <z, w nu>^h = <z, w omega>^h for piecewise linear z, w
        let mesh = shapes::icosphere(1.0, 1);
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let nv = mesh.num_vertices();
        let z: Vec<Vec3> = (0..nv)
            .map(|k| {
                let q = mesh.vertices[k];
                [q[0] * q[1] + 0.3, q[2] - q[0], 0.25 * q[1]]
            })
            .collect();
        let w: Vec<f64> = (0..nv).map(|k| mesh.vertices[k][0] - 2.0 * mesh.vertices[k][2]).collect();
        let with_nu = geo.lumped(
            &mesh,
            |j, a| {
                let k = mesh.simplex(j)[a];
                la::dot(z[k], geo.normals[j]) * w[k]
            },
            |_, _| 1.0,
        );
        let with_omega = geo.lumped(
            &mesh,
            |j, a| {
                let k = mesh.simplex(j)[a];
                la::dot(z[k], geo.vertex_normals[k]) * w[k]
            },
            |_, _| 1.0,
        );
        assert!(
            (with_nu - with_omega).abs() <= 1e-12 * with_nu.abs().max(1.0),
            "{with_nu} vs {with_omega}"
        );
    }

    #[test]
    fn lumped_inner_product_examples() {
        let mesh = shapes::circle(1.0, 17);
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        // f = g = 1 gives the total area
        let area = geo.lumped(&mesh, |_, _| 1.0, |_, _| 1.0);
        assert!((area - geo.area()).abs() < 1e-13);
        // hat function against 1: (|sigma_left| + |sigma_right|) / 2
        let k0 = 3usize;
        let hat = |j: usize, a: usize| if mesh.simplex(j)[a] == k0 { 1.0 } else { 0.0 };
        let val = geo.lumped(&mesh, hat, |_, _| 1.0);
        let star: f64 = geo.vertex_stars[k0].iter().map(|&j| geo.measures[j]).sum();
        assert!((val - star / 2.0).abs() < 1e-14);
    }

    #[test]
    fn lumped_matches_exact_quadrature_oracle() {
        // random P1 fields on a 3-segment closed curve against an
        // independent per-element vertex-sampling summation
        let vertices = vec![[0.0, 0.0, 0.0], [1.3, 0.2, 0.0], [0.4, 1.1, 0.0]];
        let mesh = SurfaceMesh::new(2, vertices, vec![[0, 1, 0], [1, 2, 0], [2, 0, 0]]).unwrap();
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let f = [0.7, -1.2, 2.4];
        let g = [0.1, 0.9, -0.4];
        let got = geo.lumped(
            &mesh,
            |j, a| f[mesh.simplex(j)[a]],
            |j, a| g[mesh.simplex(j)[a]],
        );
        let mut oracle = 0.0;
        for j in 0..3 {
            let s = mesh.simplex(j);
            let len = la::norm(la::sub(mesh.vertices[s[1]], mesh.vertices[s[0]]));
            oracle += len / 2.0 * (f[s[0]] * g[s[0]] + f[s[1]] * g[s[1]]);
        }
        assert!((got - oracle).abs() < 1e-14);
    }

    #[test]
    fn surface_gradient_examples() {
        // constant field -> zero gradient
        let mesh = shapes::circle(1.0, 12);
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let c = vec![3.5; mesh.num_vertices()];
        for j in 0..mesh.num_simplices() {
            assert!(la::norm(geo.gradient_scalar(&mesh, &c, j)) < 1e-13);
        }
        // segment (0,0)->(2,0) with values 0,4: slope (2,0)
        let seg = SurfaceMesh {
            dim: 2,
            vertices: vec![[0.0; 3], [2.0, 0.0, 0.0]],
            simplices: vec![[0, 1, 0]],
        };
        let geo2 = SurfaceGeometry::build(&seg).unwrap_or_else(|_| panic!());
        let g = geo2.gradient_scalar(&seg, &[0.0, 4.0], 0);
        assert!((g[0] - 2.0).abs() < 1e-14 && g[1].abs() < 1e-14);
    }

    #[test]
    fn surface_gradient_is_projected_ambient_gradient() {
        // f(x) = a.x restricted to a tilted triangle: grad_s f = P a
        let vertices = vec![[0.1, 0.0, 0.2], [1.0, 0.1, 0.5], [0.2, 0.9, -0.3]];
        let mesh = SurfaceMesh {
            dim: 3,
            vertices: vertices.clone(),
            simplices: vec![[0, 1, 2]],
        };
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let a = [0.3, -1.1, 0.7];
        let f: Vec<f64> = vertices.iter().map(|p| la::dot(a, *p)).collect();
        let g = geo.gradient_scalar(&mesh, &f, 0);
        let nu = geo.normals[0];
        let pa = la::sub(a, la::scale(la::dot(a, nu), nu));
        assert!(la::norm(la::sub(g, pa)) < 1e-13);
        // tangency
        assert!(la::dot(g, nu).abs() < 1e-13);
    }

    #[test]
    fn diagnostics_unit_square_and_circle() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let mesh =
            SurfaceMesh::new(2, vertices, vec![[1, 0, 0], [2, 1, 0], [3, 2, 0], [0, 3, 0]])
                .unwrap();
        let geo = SurfaceGeometry::build(&mesh).unwrap();
        let diag = geometric_diagnostics(&mesh, &geo, None);
        assert!((diag.area - 4.0).abs() < 1e-14);
        assert!((diag.enclosed_volume - 1.0).abs() < 1e-14);

        for n in [16usize, 64, 256] {
            let c = shapes::circle(1.0, n);
            let geo = SurfaceGeometry::build(&c).unwrap();
            let diag = geometric_diagnostics(&c, &geo, None);
            let expect = 0.5 * n as f64 * (2.0 * PI / n as f64).sin();
            assert!((diag.enclosed_volume - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_simplex_rejected() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1e-15, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let mesh =
            SurfaceMesh::new(2, vertices, vec![[0, 1, 0], [1, 2, 0], [2, 3, 0], [3, 0, 0]])
                .unwrap();
        match SurfaceGeometry::build(&mesh) {
            Err(Error::MeshQuality(_)) => {}
            Err(other) => panic!("expected mesh quality failure, got {other:?}"),
            Ok(_) => panic!("expected mesh quality failure, got success"),
        }
    }
}
