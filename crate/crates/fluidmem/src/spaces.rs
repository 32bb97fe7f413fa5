//! Taylor-Hood finite element spaces on the bulk mesh, their boundary
//! conditions, and the bulk<->surface transfer machinery (vertex traces,
//! surface quadrature plans, pushforward and interpolation).

use crate::bulk::{BoundaryTag, BulkMesh, PointLocator};
use crate::la::{self, Vec3};
use crate::quadrature::{simplex_rule, QuadNode};
use crate::surface::SurfaceMesh;
use crate::{Error, Result};
use std::collections::HashMap;

/// Lexicographic local edges of a d-simplex.
pub const EDGES_2D: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
pub const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn local_edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

/// Scalar P2 basis values at a barycentric point (vertex functions first,
/// then edge bubbles in lexicographic edge order).
pub fn p2_values(dim: usize, bary: &[f64; 4], out: &mut [f64]) {
    let nv = dim + 1;
    for i in 0..nv {
        out[i] = bary[i] * (2.0 * bary[i] - 1.0);
    }
    for (e, &(i, j)) in local_edges(dim).iter().enumerate() {
        out[nv + e] = 4.0 * bary[i] * bary[j];
    }
}

/// Scalar P1 basis values.
pub fn p1_values(dim: usize, bary: &[f64; 4], out: &mut [f64]) {
    out[..=dim].copy_from_slice(&bary[..=dim]);
}

/// Physical P2 gradients given the barycentric gradients of the element.
pub fn p2_gradients(dim: usize, bary: &[f64; 4], grad_lambda: &[Vec3; 4], out: &mut [Vec3]) {
    let nv = dim + 1;
    for i in 0..nv {
        out[i] = la::scale(4.0 * bary[i] - 1.0, grad_lambda[i]);
    }
    for (e, &(i, j)) in local_edges(dim).iter().enumerate() {
        out[nv + e] = la::axpy(4.0 * bary[i], grad_lambda[j], la::scale(4.0 * bary[j], grad_lambda[i]));
    }
}

/// Affine geometry of one bulk element.
pub struct ElemGeom {
    pub grad_lambda: [Vec3; 4],
    pub volume: f64,
}

pub fn elem_geometry(mesh: &BulkMesh, leaf: usize) -> ElemGeom {
    let d = mesh.dim;
    let vs = mesh.leaf_verts(leaf);
    let p0 = mesh.vertices[vs[0] as usize];
    let mut jac = vec![0.0; d * d];
    for c in 0..d {
        let col = la::sub(mesh.vertices[vs[c + 1] as usize], p0);
        for r in 0..d {
            jac[r * d + c] = col[r];
        }
    }
    // invert J (2x2 or 3x3)
    let mut inv = vec![0.0; d * d];
    let det;
    if d == 2 {
        det = jac[0] * jac[3] - jac[1] * jac[2];
        let f = 1.0 / det;
        inv[0] = jac[3] * f;
        inv[1] = -jac[1] * f;
        inv[2] = -jac[2] * f;
        inv[3] = jac[0] * f;
    } else {
        let m = |r: usize, c: usize| jac[r * 3 + c];
        let c00 = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
        let c01 = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
        let c02 = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
        det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
        let f = 1.0 / det;
        let cof = [
            c00,
            m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
            m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
            c01,
            m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
            m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
            c02,
            m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
            m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
        ];
        for r in 0..3 {
            for c in 0..3 {
                inv[r * 3 + c] = cof[r * 3 + c] * f;
            }
        }
    }
    // grad lambda_{c+1} = row c of J^{-1}
    let mut grad_lambda = [la::ZERO_VEC; 4];
    for c in 0..d {
        for r in 0..d {
            grad_lambda[c + 1][r] = inv[c * d + r];
        }
        grad_lambda[0] = la::sub(grad_lambda[0], grad_lambda[c + 1]);
    }
    let volume = det.abs() / if d == 2 { 2.0 } else { 6.0 };
    ElemGeom { grad_lambda, volume }
}

/// Velocity boundary data evaluated pointwise.
pub type BoundaryVelocity = std::sync::Arc<dyn Fn(Vec3) -> Vec3 + Send + Sync>;

/// Taylor-Hood P2-P1 degree-of-freedom maps with Dirichlet data.
pub struct DofMap {
    pub dim: usize,
    /// scalar P2 dofs
    pub n_p2: usize,
    /// scalar P1 (pressure) dofs
    pub n_p1: usize,
    pub dof_point: Vec<Vec3>,
    /// per-leaf P2 scalar dofs: d+1 vertex dofs then edge dofs
    pub elem_p2: Vec<Vec<usize>>,
    /// per-leaf P1 dofs (the element vertices)
    pub elem_p1: Vec<Vec<usize>>,
    /// Dirichlet mask per scalar P2 dof
    pub dirichlet: Vec<bool>,
    /// boundary values per scalar P2 dof (zero on free dofs)
    pub bc_value: Vec<Vec3>,
    /// free velocity unknown index per (scalar dof, component)
    pub free_idx: Vec<Option<usize>>,
    pub n_free: usize,
    /// pressure zero-mean constraint active (no stress-free boundary)
    pub zero_mean: bool,
    /// boundary facets on the stress-free part, for the outflow term:
    /// (leaf, facet vertex dofs, outward normal, measure)
    pub outflow_facets: Vec<(usize, Vec<u32>, Vec3, f64)>,
}

impl DofMap {
    #[inline]
    pub fn vel_dof(&self, scalar: usize, comp: usize) -> usize {
        scalar * self.dim + comp
    }

    pub fn n_vel(&self) -> usize {
        self.n_p2 * self.dim
    }
}

/// Builds the P2-P1 pair on the current leaves with Dirichlet data `g`
/// sampled at the boundary dof locations.
pub fn build_spaces(mesh: &BulkMesh, g: &BoundaryVelocity) -> Result<DofMap> {
    let d = mesh.dim;
    let mut vert_dof: HashMap<u32, usize> = HashMap::new();
    let mut edge_dof: HashMap<(u32, u32), usize> = HashMap::new();
    let mut dof_point: Vec<Vec3> = Vec::new();
    let mut elem_p2 = Vec::with_capacity(mesh.num_leaves());
    let mut elem_p1 = Vec::with_capacity(mesh.num_leaves());

    for i in 0..mesh.num_leaves() {
        let vs = mesh.leaf_verts(i);
        let mut dofs = Vec::with_capacity(if d == 2 { 6 } else { 10 });
        for &v in vs {
            let next = dof_point.len();
            let id = *vert_dof.entry(v).or_insert(next);
            if id == next {
                dof_point.push(mesh.vertices[v as usize]);
            }
            dofs.push(id);
        }
        for &(a, b) in local_edges(d) {
            let key = (vs[a].min(vs[b]), vs[a].max(vs[b]));
            let next = dof_point.len();
            let id = *edge_dof.entry(key).or_insert(next);
            if id == next {
                dof_point.push(la::scale(
                    0.5,
                    la::add(
                        mesh.vertices[key.0 as usize],
                        mesh.vertices[key.1 as usize],
                    ),
                ));
            }
            dofs.push(id);
        }
        elem_p1.push(dofs[..=d].to_vec());
        elem_p2.push(dofs);
    }
    let n_p2 = dof_point.len();
    // pressure dofs reuse the vertex dof numbering (a prefix of the P2 dofs
    // is not guaranteed, so remap)
    let mut p1_map: HashMap<usize, usize> = HashMap::new();
    for dofs in elem_p1.iter_mut() {
        for dof in dofs.iter_mut() {
            let next = p1_map.len();
            let id = *p1_map.entry(*dof).or_insert(next);
            *dof = id;
        }
    }
    let n_p1 = p1_map.len();

    // boundary handling
    let facets = mesh.boundary_facets();
    let mut dirichlet = vec![false; n_p2];
    let mut bc_value = vec![la::ZERO_VEC; n_p2];
    let mut outflow_facets = Vec::new();
    let mut any_dirichlet = false;
    for (leaf, fverts, normal, measure, tag) in facets {
        match tag {
            BoundaryTag::Dirichlet => {
                any_dirichlet = true;
                // vertex dofs and edge dofs of this facet
                for &v in &fverts {
                    let dof = vert_dof[&v];
                    dirichlet[dof] = true;
                    bc_value[dof] = g(dof_point[dof]);
                }
                for a in 0..fverts.len() {
                    for b in a + 1..fverts.len() {
                        let key = (fverts[a].min(fverts[b]), fverts[a].max(fverts[b]));
                        if let Some(&dof) = edge_dof.get(&key) {
                            dirichlet[dof] = true;
                            bc_value[dof] = g(dof_point[dof]);
                        }
                    }
                }
            }
            BoundaryTag::StressFree => {
                outflow_facets.push((leaf, fverts, normal, measure));
            }
        }
    }
    if !any_dirichlet {
        return Err(Error::Config(
            "the velocity boundary needs a Dirichlet part".into(),
        ));
    }
    let zero_mean = outflow_facets.is_empty();
    let mut free_idx = vec![None; n_p2 * d];
    let mut n_free = 0;
    for s in 0..n_p2 {
        for c in 0..d {
            if !dirichlet[s] {
                free_idx[s * d + c] = Some(n_free);
                n_free += 1;
            }
        }
    }
    Ok(DofMap {
        dim: d,
        n_p2,
        n_p1,
        dof_point,
        elem_p2,
        elem_p1,
        dirichlet,
        bc_value,
        free_idx,
        n_free,
        zero_mean,
        outflow_facets,
    })
}

/// A P2 vector field given by coefficients at all scalar dofs.
pub struct P2Field {
    pub coeffs: Vec<Vec3>,
}

impl P2Field {
    pub fn zero(dofs: &DofMap) -> Self {
        Self { coeffs: vec![la::ZERO_VEC; dofs.n_p2] }
    }

    pub fn eval(&self, dofs: &DofMap, leaf: usize, bary: &[f64; 4]) -> Vec3 {
        let mut vals = [0.0; 10];
        p2_values(dofs.dim, bary, &mut vals);
        let mut out = la::ZERO_VEC;
        for (loc, &dof) in dofs.elem_p2[leaf].iter().enumerate() {
            out = la::axpy(vals[loc], self.coeffs[dof], out);
        }
        out
    }

    /// Velocity gradient (grad u)_{i j} = d_j u_i at a point.
    pub fn eval_gradient(
        &self,
        dofs: &DofMap,
        geom: &ElemGeom,
        leaf: usize,
        bary: &[f64; 4],
    ) -> la::Mat3 {
        let mut grads = [la::ZERO_VEC; 10];
        p2_gradients(dofs.dim, bary, &geom.grad_lambda, &mut grads);
        let mut out = la::ZERO_MAT;
        for (loc, &dof) in dofs.elem_p2[leaf].iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] += self.coeffs[dof][i] * grads[loc][j];
                }
            }
        }
        out
    }
}

/// Evaluation data for bulk P2 functions at one surface point.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub leaf: usize,
    /// (scalar dof, basis value) pairs
    pub weights: Vec<(usize, f64)>,
}

/// P2 basis evaluations at every surface vertex; the only coupling data the
/// lumped and interpolated surface integrals need.
pub struct VertexTrace {
    pub entries: Vec<TraceEntry>,
}

pub fn build_vertex_trace(
    mesh: &BulkMesh,
    locator: &PointLocator,
    dofs: &DofMap,
    surf: &SurfaceMesh,
) -> Result<VertexTrace> {
    let mut entries = Vec::with_capacity(surf.num_vertices());
    for v in &surf.vertices {
        let (leaf, bary) = mesh.locate_point(locator, *v)?;
        let mut vals = [0.0; 10];
        p2_values(mesh.dim, &bary, &mut vals);
        let weights = dofs.elem_p2[leaf]
            .iter()
            .enumerate()
            .map(|(loc, &dof)| (dof, vals[loc]))
            .collect();
        entries.push(TraceEntry { leaf, weights });
    }
    Ok(VertexTrace { entries })
}

impl VertexTrace {
    /// pi^m of a P2 vector field: its values at the surface vertices.
    pub fn interpolate(&self, field: &P2Field) -> Vec<Vec3> {
        self.entries
            .iter()
            .map(|e| {
                let mut v = la::ZERO_VEC;
                for &(dof, w) in &e.weights {
                    v = la::axpy(w, field.coeffs[dof], v);
                }
                v
            })
            .collect()
    }
}

/// Quadrature plan for exact integrals of bulk functions over the surface.
pub struct SurfaceQuadraturePlan {
    /// per surface simplex: (surface barycentric coords, physical weight,
    /// bulk leaf, bulk barycentric coords)
    pub points: Vec<Vec<([f64; 4], f64, usize, [f64; 4])>>,
}

pub fn plan_surface_quadrature(
    mesh: &BulkMesh,
    locator: &PointLocator,
    surf: &SurfaceMesh,
    order: usize,
) -> Result<SurfaceQuadraturePlan> {
    let rule: Vec<QuadNode> = simplex_rule(surf.dim - 1, order);
    let ref_vol = rule.iter().map(|n| n.weight).sum::<f64>();
    let mut points = Vec::with_capacity(surf.num_simplices());
    for j in 0..surf.num_simplices() {
        let s = surf.simplex(j);
        let (_, measure) = surf.element_geometry(j);
        let mut per = Vec::with_capacity(rule.len());
        for node in &rule {
            let mut x = la::ZERO_VEC;
            for (a, &k) in s.iter().enumerate() {
                x = la::axpy(node.bary[a], surf.vertices[k], x);
            }
            let (leaf, bulk_bary) = mesh.locate_point(locator, x)?;
            per.push((node.bary, node.weight / ref_vol * measure, leaf, bulk_bary));
        }
        points.push(per);
    }
    Ok(SurfaceQuadraturePlan { points })
}

// ----- pushforward / interpolation -----------------------------------------

/// Transport of vertex coefficient vectors between surfaces of identical
/// connectivity: a value copy by vertex index.
pub fn pushforward<T: Clone>(values_old: &[T]) -> Vec<T> {
    values_old.to_vec()
}

/// Vertex interpolation of a continuous function on the surface.
pub fn surface_interpolate<T, F: Fn(Vec3) -> T>(surf: &SurfaceMesh, f: F) -> Vec<T> {
    surf.vertices.iter().map(|&q| f(q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulk::{BoundaryTags, BoxSpec};
    use crate::shapes;
    use std::sync::Arc;

    fn unit_square(h: f64) -> BulkMesh {
        BulkMesh::from_boxes(
            2,
            &[BoxSpec { lo: [-1.0, -1.0, 0.0], hi: [1.0, 1.0, 0.0] }],
            h,
            BoundaryTags::default(),
        )
        .unwrap()
    }

    #[test]
    fn p2_basis_is_nodal() {
        // values 1 at own node, 0 at the others, on the reference element
        for dim in [2usize, 3] {
            let nv = dim + 1;
            let ne = local_edges(dim).len();
            let mut nodes: Vec<[f64; 4]> = Vec::new();
            for i in 0..nv {
                let mut b = [0.0; 4];
                b[i] = 1.0;
                nodes.push(b);
            }
            for &(i, j) in local_edges(dim) {
                let mut b = [0.0; 4];
                b[i] = 0.5;
                b[j] = 0.5;
                nodes.push(b);
            }
            for (n, bary) in nodes.iter().enumerate() {
                let mut vals = [0.0; 10];
                p2_values(dim, bary, &mut vals);
                for m in 0..nv + ne {
                    let expect = if m == n { 1.0 } else { 0.0 };
                    assert!((vals[m] - expect).abs() < 1e-14, "dim {dim} {m} {n}");
                }
            }
        }
    }

    #[test]
    fn dirichlet_masks_and_values() {
        let mesh = unit_square(0.5);
        let g: BoundaryVelocity = Arc::new(|p: Vec3| [p[1], 0.0, 0.0]);
        let dofs = build_spaces(&mesh, &g).unwrap();
        assert!(dofs.zero_mean);
        let mut boundary_count = 0;
        for s in 0..dofs.n_p2 {
            let p = dofs.dof_point[s];
            let on_boundary = p[0].abs() > 1.0 - 1e-12 || p[1].abs() > 1.0 - 1e-12;
            assert_eq!(dofs.dirichlet[s], on_boundary);
            if on_boundary {
                boundary_count += 1;
                assert_eq!(dofs.bc_value[s], [p[1], 0.0, 0.0]);
            }
        }
        assert!(boundary_count > 0);
        assert_eq!(dofs.n_free, (dofs.n_p2 - boundary_count) * 2);
    }

    #[test]
    fn stress_free_faces_drop_zero_mean() {
        let mesh = BulkMesh::from_boxes(
            2,
            &[BoxSpec { lo: [-1.0, -1.0, 0.0], hi: [1.0, 1.0, 0.0] }],
             0.5,
            BoundaryTags { stress_free: vec![(0, true), (0, false)] },
        )
        .unwrap();
        let g: BoundaryVelocity = Arc::new(|_| la::ZERO_VEC);
        let dofs = build_spaces(&mesh, &g).unwrap();
        assert!(!dofs.zero_mean);
        assert!(!dofs.outflow_facets.is_empty());
        // dofs on x = +-1 but off the corners are free now
        for s in 0..dofs.n_p2 {
            let p = dofs.dof_point[s];
            if p[0].abs() > 1.0 - 1e-12 && p[1].abs() < 1.0 - 1e-12 {
                assert!(!dofs.dirichlet[s]);
            }
        }
    }

    #[test]
    fn vertex_trace_reproduces_p2_functions() {
        let mesh = unit_square(0.25);
        let locator = mesh.build_locator();
        let g: BoundaryVelocity = Arc::new(|_| la::ZERO_VEC);
        let dofs = build_spaces(&mesh, &g).unwrap();
        let surf = shapes::circle(0.6, 17);
        let trace = build_vertex_trace(&mesh, &locator, &dofs, &surf).unwrap();
        // quadratic function reproduced exactly by its interpolant
        let f = |p: Vec3| p[0] * p[0] + 0.5 * p[0] * p[1] - p[1] + 0.25;
        let mut field = P2Field::zero(&dofs);
        for s in 0..dofs.n_p2 {
            field.coeffs[s] = [f(dofs.dof_point[s]), 0.0, 0.0];
        }
        let vals = trace.interpolate(&field);
        for (k, v) in vals.iter().enumerate() {
            let expect = f(surf.vertices[k]);
            assert!((v[0] - expect).abs() < 1e-12, "{} vs {}", v[0], expect);
        }
    }

    #[test]
    fn quadrature_plan_integrates_bulk_polynomials() {
        let mesh = unit_square(0.25);
        let locator = mesh.build_locator();
        let surf = shapes::circle(0.6, 64);
        let plan = plan_surface_quadrature(&mesh, &locator, &surf, 4).unwrap();
        // constant 1 integrates to the surface length
        let mut total = 0.0;
        for per in &plan.points {
            for &(_, w, _, _) in per {
                total += w;
            }
        }
        let mut len = 0.0;
        for j in 0..surf.num_simplices() {
            len += surf.element_geometry(j).1;
        }
        assert!((total - len).abs() < 1e-12);
        // affine bulk function: integral of x1 over the polygon boundary
        let mut got = 0.0;
        for per in &plan.points {
            for &(_, w, leaf, bb) in per {
                let vs = mesh.leaf_verts(leaf);
                let mut x = la::ZERO_VEC;
                for (a, &v) in vs.iter().enumerate() {
                    x = la::axpy(bb[a], mesh.vertices[v as usize], x);
                }
                got += w * x[0];
            }
        }
        // exact per-segment integral of a linear function: mean of endpoints
        let mut expect = 0.0;
        for j in 0..surf.num_simplices() {
            let s = surf.simplex(j);
            let (_, m) = surf.element_geometry(j);
            expect += m * 0.5 * (surf.vertices[s[0]][0] + surf.vertices[s[1]][0]);
        }
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn pushforward_is_index_copy() {
        let vals = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let moved = pushforward(&vals);
        assert_eq!(moved, vals);
    }
}
