//! Simplicial bulk mesh of the computational domain: a bisection forest over
//! a Kuhn-triangulated union of axis-aligned boxes, with conforming
//! refinement/coarsening, interface-aware element classification and point
//! location.

use crate::la::{self, Vec3};
use crate::surface::{SurfaceGeometry, SurfaceMesh};
use crate::{Error, Result};
use std::collections::HashMap;

pub const NO_ELEM: u32 = u32::MAX;
const MAX_LEVEL: u16 = 60;

/// Axis-aligned box, `lo`/`hi` corners (third component ignored for d=2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub lo: Vec3,
    pub hi: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    /// Velocity prescribed (possibly inhomogeneous Dirichlet).
    Dirichlet,
    /// Stress-free outflow.
    StressFree,
}

/// Which extremal planes of the domain are stress-free; everything else on
/// the boundary is Dirichlet. `(axis, positive_side)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryTags {
    pub stress_free: Vec<(usize, bool)>,
}

#[derive(Debug, Clone, Copy)]
struct ElemNode {
    verts: [u32; 4],
    tag: u8,
    level: u16,
    parent: u32,
    children: [u32; 2],
}

impl ElemNode {
    fn is_leaf(&self) -> bool {
        self.children[0] == NO_ELEM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Interior,
    Exterior,
    Interfacial,
}

/// Per-leaf classification against the current interface.
#[derive(Debug, Clone)]
pub struct ElementClassification {
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct BulkMesh {
    pub dim: usize,
    pub boxes: Vec<BoxSpec>,
    pub tags: BoundaryTags,
    pub vertices: Vec<Vec3>,
    elems: Vec<ElemNode>,
    /// Leaf element ids in ascending order; the public element numbering.
    leaves: Vec<u32>,
    edge_midpoint: HashMap<(u32, u32), u32>,
    /// Leaf elements incident to each edge (for bisection closure).
    edge_elems: HashMap<(u32, u32), Vec<u32>>,
    domain_lo: Vec3,
    domain_hi: Vec3,
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl BulkMesh {
    /// Kuhn-triangulates the union of `boxes` on a common lattice with cells
    /// of size about `h0`. Boxes must be non-overlapping (shared faces are
    /// fine) and commensurate with the lattice.
    pub fn from_boxes(dim: usize, boxes: &[BoxSpec], h0: f64, tags: BoundaryTags) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::Config("no domain boxes".into()));
        }
        let mut lo = [0.0f64; 3];
        let mut hi = [0.0f64; 3];
        for a in 0..dim {
            lo[a] = f64::INFINITY;
            hi[a] = f64::NEG_INFINITY;
        }
        for b in boxes {
            for a in 0..dim {
                lo[a] = lo[a].min(b.lo[a]);
                hi[a] = hi[a].max(b.hi[a]);
            }
        }
        // common lattice pitch: h0 rounded so each box is an integer number
        // of cells in every direction
        let mut vertices: Vec<Vec3> = Vec::new();
        let mut vmap: HashMap<[i64; 3], u32> = HashMap::new();
        let mut cells: std::collections::HashSet<[i64; 3]> = Default::default();
        let scale = 1.0 / h0;
        let to_index = |x: f64| -> i64 { (x * scale * 2.0).round() as i64 }; // half-steps
        for b in boxes {
            let mut n = [1usize; 3];
            for a in 0..dim {
                let len = b.hi[a] - b.lo[a];
                if len <= 0.0 {
                    return Err(Error::Config("empty box".into()));
                }
                n[a] = (len / h0).round().max(1.0) as usize;
                if ((len / n[a] as f64) - h0).abs() > 1e-9 * h0.max(1.0) {
                    return Err(Error::Config(format!(
                        "box extent {len} is not a multiple of the cell size {h0}"
                    )));
                }
            }
            for i in 0..n[0] {
                for j in 0..n[1] {
                    for k in 0..if dim == 3 { n[2] } else { 1 } {
                        let base = [
                            to_index(b.lo[0] + i as f64 * h0),
                            to_index(b.lo[1] + j as f64 * h0),
                            if dim == 3 { to_index(b.lo[2] + k as f64 * h0) } else { 0 },
                        ];
                        if !cells.insert(base) {
                            return Err(Error::Config("overlapping domain boxes".into()));
                        }
                    }
                }
            }
        }
        let step = to_index(lo[0] + h0) - to_index(lo[0]);
        let mut elems: Vec<ElemNode> = Vec::new();
        let mut cell_list: Vec<[i64; 3]> = cells.iter().copied().collect();
        cell_list.sort_unstable();
        for cell in cell_list {
            // Kuhn triangulation: one simplex per coordinate permutation
            let perms: &[&[usize]] = if dim == 2 {
                &[&[0, 1], &[1, 0]]
            } else {
                &[
                    &[0, 1, 2],
                    &[0, 2, 1],
                    &[1, 0, 2],
                    &[1, 2, 0],
                    &[2, 0, 1],
                    &[2, 1, 0],
                ]
            };
            for perm in perms {
                let mut idx = [cell; 4];
                for (k, &axis) in perm.iter().enumerate() {
                    idx[k + 1] = idx[k];
                    idx[k + 1][axis] += step;
                }
                let mut verts = [0u32; 4];
                for k in 0..=dim {
                    let key = idx[k];
                    let next = vertices.len() as u32;
                    let id = *vmap.entry(key).or_insert_with(|| {
                        vertices.push([
                            key[0] as f64 / (2.0 * scale),
                            key[1] as f64 / (2.0 * scale),
                            key[2] as f64 / (2.0 * scale),
                        ]);
                        next
                    });
                    verts[k] = id;
                }
                elems.push(ElemNode {
                    verts,
                    tag: dim as u8,
                    level: 0,
                    parent: NO_ELEM,
                    children: [NO_ELEM; 2],
                });
            }
        }
        let mut mesh = Self {
            dim,
            boxes: boxes.to_vec(),
            tags,
            vertices,
            elems,
            leaves: Vec::new(),
            edge_midpoint: HashMap::new(),
            edge_elems: HashMap::new(),
            domain_lo: lo,
            domain_hi: hi,
        };
        mesh.rebuild_leaf_structures();
        Ok(mesh)
    }

    fn rebuild_leaf_structures(&mut self) {
        self.leaves = (0..self.elems.len() as u32)
            .filter(|&e| self.elems[e as usize].is_leaf())
            .collect();
        self.edge_elems.clear();
        for &e in &self.leaves.clone() {
            self.register_leaf_edges(e);
        }
    }

    fn register_leaf_edges(&mut self, e: u32) {
        let el = self.elems[e as usize];
        for (a, b) in self.elem_edges(&el) {
            self.edge_elems.entry(edge_key(a, b)).or_default().push(e);
        }
    }

    fn unregister_leaf_edges(&mut self, e: u32) {
        let el = self.elems[e as usize];
        for (a, b) in self.elem_edges(&el) {
            if let Some(v) = self.edge_elems.get_mut(&edge_key(a, b)) {
                v.retain(|&x| x != e);
            }
        }
    }

    fn elem_edges(&self, el: &ElemNode) -> Vec<(u32, u32)> {
        let n = self.dim + 1;
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((el.verts[i], el.verts[j]));
            }
        }
        out
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_ids(&self) -> &[u32] {
        &self.leaves
    }

    /// Vertices of leaf `i` (public numbering).
    pub fn leaf_verts(&self, i: usize) -> &[u32] {
        &self.elems[self.leaves[i] as usize].verts[..=self.dim]
    }

    pub fn leaf_level(&self, i: usize) -> u16 {
        self.elems[self.leaves[i] as usize].level
    }

    pub fn leaf_volume(&self, i: usize) -> f64 {
        let vs = self.leaf_verts(i);
        self.simplex_volume(vs)
    }

    fn simplex_volume(&self, vs: &[u32]) -> f64 {
        let p0 = self.vertices[vs[0] as usize];
        if self.dim == 2 {
            let e1 = la::sub(self.vertices[vs[1] as usize], p0);
            let e2 = la::sub(self.vertices[vs[2] as usize], p0);
            0.5 * (e1[0] * e2[1] - e1[1] * e2[0]).abs()
        } else {
            let e1 = la::sub(self.vertices[vs[1] as usize], p0);
            let e2 = la::sub(self.vertices[vs[2] as usize], p0);
            let e3 = la::sub(self.vertices[vs[3] as usize], p0);
            la::dot(e1, la::cross(e2, e3)).abs() / 6.0
        }
    }

    pub fn leaf_barycenter(&self, i: usize) -> Vec3 {
        let vs = self.leaf_verts(i);
        let mut c = la::ZERO_VEC;
        for &v in vs {
            c = la::add(c, self.vertices[v as usize]);
        }
        la::scale(1.0 / (self.dim + 1) as f64, c)
    }

    // ----- bisection ------------------------------------------------------

    fn refinement_edge(&self, el: &ElemNode) -> (u32, u32) {
        // Maubach: refinement edge is (x_0, x_tag)
        (el.verts[0], el.verts[el.tag as usize])
    }

    /// Bisects leaf `e` (and recursively whatever conformity requires).
    fn bisect_closure(&mut self, e: u32, depth: usize) -> Result<()> {
        if depth > 3 * MAX_LEVEL as usize {
            return Err(Error::Config("refinement closure recursion overflow".into()));
        }
        loop {
            if !self.elems[e as usize].is_leaf() {
                return Ok(());
            }
            let el = self.elems[e as usize];
            if el.level >= MAX_LEVEL {
                return Err(Error::Config("refinement-level overflow".into()));
            }
            let edge = edge_key(el.verts[0], el.verts[el.tag as usize]);
            let patch: Vec<u32> = self.edge_elems.get(&edge).cloned().unwrap_or_default();
            let mut incompatible = Vec::new();
            for &f in &patch {
                let fe = self.elems[f as usize];
                if edge_key(fe.verts[0], fe.verts[fe.tag as usize]) != edge {
                    incompatible.push(f);
                }
            }
            if incompatible.is_empty() {
                for &f in &patch {
                    self.bisect_single(f);
                }
                return Ok(());
            }
            for f in incompatible {
                self.bisect_closure(f, depth + 1)?;
            }
        }
    }

    /// Maubach bisection of a single compatible leaf.
    fn bisect_single(&mut self, e: u32) {
        let el = self.elems[e as usize];
        debug_assert!(el.is_leaf());
        let d = self.dim;
        let k = el.tag as usize;
        let (a, b) = (el.verts[0], el.verts[k]);
        let key = edge_key(a, b);
        let next_vid = self.vertices.len() as u32;
        let z = *self.edge_midpoint.entry(key).or_insert(next_vid);
        if z == next_vid {
            let mid = la::scale(
                0.5,
                la::add(self.vertices[a as usize], self.vertices[b as usize]),
            );
            self.vertices.push(mid);
        }
        let new_tag = if k > 1 { (k - 1) as u8 } else { d as u8 };
        let mut c1 = el.verts;
        c1[k] = z; // (x0 .. x_{k-1}, z, x_{k+1} .. xd)
        let mut c2 = [0u32; 4];
        for i in 0..k {
            c2[i] = el.verts[i + 1];
        }
        c2[k] = z;
        for i in k + 1..=d {
            c2[i] = el.verts[i];
        }
        let id1 = self.elems.len() as u32;
        let id2 = id1 + 1;
        let child = |verts: [u32; 4]| ElemNode {
            verts,
            tag: new_tag,
            level: el.level + 1,
            parent: e,
            children: [NO_ELEM; 2],
        };
        self.unregister_leaf_edges(e);
        self.elems.push(child(c1));
        self.elems.push(child(c2));
        self.elems[e as usize].children = [id1, id2];
        self.register_leaf_edges(id1);
        self.register_leaf_edges(id2);
        let pos = self.leaves.binary_search(&e).unwrap();
        self.leaves.remove(pos);
        self.leaves.push(id1);
        self.leaves.push(id2);
        self.leaves.sort_unstable();
    }

    /// Un-bisects the children of `parent` (both must be leaves).
    fn coarsen_single(&mut self, parent: u32) {
        let [c1, c2] = self.elems[parent as usize].children;
        debug_assert!(c1 != NO_ELEM);
        debug_assert!(self.elems[c1 as usize].is_leaf() && self.elems[c2 as usize].is_leaf());
        self.unregister_leaf_edges(c1);
        self.unregister_leaf_edges(c2);
        self.elems[parent as usize].children = [NO_ELEM; 2];
        self.register_leaf_edges(parent);
        self.leaves.retain(|&e| e != c1 && e != c2);
        let pos = self.leaves.binary_search(&parent).unwrap_err();
        self.leaves.insert(pos, parent);
        // Dangling child nodes stay in the forest arena; they are
        // unreachable and get dropped with it.
    }

    // ----- adaptivity -----------------------------------------------------

    /// Refines every element of the interface band (interfacial elements
    /// plus one ring of neighbours) to `fine_level` and coarsens elements
    /// away from the band towards `coarse_level`. Returns the final
    /// classification. Carried piecewise-constant fields (one value per
    /// leaf, e.g. the previous-step density) are transferred exactly:
    /// children inherit on refinement, parents average on coarsening.
    pub fn adapt(
        &mut self,
        surf: &SurfaceMesh,
        fine_level: u16,
        coarse_level: u16,
        carried_p0: &mut [Vec<f64>],
    ) -> Result<ElementClassification> {
        if fine_level > MAX_LEVEL || coarse_level > fine_level {
            return Err(Error::Config(format!(
                "invalid refinement levels fine {fine_level} coarse {coarse_level}"
            )));
        }
        // P0 transfer works on forest node ids so it survives re-indexing
        let mut node_fields: Vec<HashMap<u32, f64>> = carried_p0
            .iter()
            .map(|f| {
                assert_eq!(f.len(), self.leaves.len());
                self.leaves
                    .iter()
                    .copied()
                    .zip(f.iter().copied())
                    .collect()
            })
            .collect();
        let grid = SurfaceGrid::build(surf);

        // refinement sweeps
        loop {
            let band = self.interface_band(surf, &grid);
            let mut marked = Vec::new();
            for (i, &in_band) in band.iter().enumerate() {
                if in_band && self.leaf_level(i) < fine_level {
                    marked.push(self.leaves[i]);
                }
            }
            if marked.is_empty() {
                break;
            }
            for e in marked {
                if self.elems[e as usize].is_leaf() {
                    let before = self.elems.len();
                    self.bisect_closure(e, 0)?;
                    // inherit carried fields on every new child
                    for fields in node_fields.iter_mut() {
                        for id in before as u32..self.elems.len() as u32 {
                            let parent = self.elems[id as usize].parent;
                            if let Some(v) = fields.get(&parent).copied() {
                                fields.insert(id, v);
                            }
                        }
                    }
                }
            }
        }

        // coarsening sweeps: collapse bisection patches entirely outside the
        // band whose merged parents stay clear of the interface
        loop {
            let band = self.interface_band(surf, &grid);
            let leaf_pos: HashMap<u32, usize> = self
                .leaves
                .iter()
                .enumerate()
                .map(|(i, &e)| (e, i))
                .collect();
            // candidate resolution vertices: bisection vertex of parents
            // whose both children are leaves
            let mut patches: HashMap<u32, Vec<u32>> = HashMap::new(); // z -> parents
            for (i, &e) in self.leaves.iter().enumerate() {
                if band[i] || self.leaf_level(i) <= coarse_level {
                    continue;
                }
                let parent = self.elems[e as usize].parent;
                if parent == NO_ELEM {
                    continue;
                }
                let [c1, c2] = self.elems[parent as usize].children;
                if !self.elems[c1 as usize].is_leaf() || !self.elems[c2 as usize].is_leaf() {
                    continue;
                }
                let z = self.elems[c1 as usize].verts[self.elems[parent as usize].tag as usize];
                patches.entry(z).or_default().push(parent);
            }
            let mut coarsened_any = false;
            'patch: for (&z, parents) in &patches {
                let mut parents = parents.clone();
                parents.sort_unstable();
                parents.dedup();
                // every leaf around z must be a child of one of these parents
                let mut incident = Vec::new();
                for (i, &e) in self.leaves.iter().enumerate() {
                    if self.elems[e as usize].verts[..=self.dim].contains(&z) {
                        incident.push((i, e));
                    }
                }
                for &(i, e) in &incident {
                    let p = self.elems[e as usize].parent;
                    if p == NO_ELEM || !parents.contains(&p) || band[i] {
                        continue 'patch;
                    }
                    let _ = leaf_pos; // leaf positions already available
                }
                // the merged parents must stay clear of the interface
                for &p in &parents {
                    let el = self.elems[p as usize];
                    if self.simplex_intersects_surface(&el.verts[..=self.dim], surf, &grid) {
                        continue 'patch;
                    }
                }
                for &p in &parents {
                    for fields in node_fields.iter_mut() {
                        let [c1, c2] = self.elems[p as usize].children;
                        let v1 = fields.get(&c1).copied().unwrap_or(0.0);
                        let v2 = fields.get(&c2).copied().unwrap_or(0.0);
                        fields.insert(p, 0.5 * (v1 + v2));
                    }
                    self.coarsen_single(p);
                }
                coarsened_any = true;
            }
            if !coarsened_any {
                break;
            }
        }

        for (out, fields) in carried_p0.iter_mut().zip(&node_fields) {
            *out = self
                .leaves
                .iter()
                .map(|id| fields.get(id).copied().unwrap_or(0.0))
                .collect();
        }
        self.classify(surf)
    }

    /// Interfacial elements plus one ring of facet/vertex neighbours.
    fn interface_band(&self, surf: &SurfaceMesh, grid: &SurfaceGrid) -> Vec<bool> {
        let n = self.leaves.len();
        let mut band = vec![false; n];
        let mut vertex_touched: HashMap<u32, bool> = HashMap::new();
        for i in 0..n {
            let vs = self.leaf_verts(i);
            if self.simplex_intersects_surface(vs, surf, grid) {
                band[i] = true;
                for &v in vs {
                    vertex_touched.insert(v, true);
                }
            }
        }
        for i in 0..n {
            if band[i] {
                continue;
            }
            if self
                .leaf_verts(i)
                .iter()
                .any(|v| vertex_touched.contains_key(v))
            {
                band[i] = true;
            }
        }
        band
    }

    fn simplex_intersects_surface(
        &self,
        vs: &[u32],
        surf: &SurfaceMesh,
        grid: &SurfaceGrid,
    ) -> bool {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &v in vs {
            let p = self.vertices[v as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let points: Vec<Vec3> = vs.iter().map(|&v| self.vertices[v as usize]).collect();
        let mut hit = false;
        grid.for_candidates(lo, hi, |j| {
            if hit {
                return;
            }
            let sp: Vec<Vec3> = surf.simplex(j).iter().map(|&k| surf.vertices[k]).collect();
            if simplex_clip_intersects(self.dim, &points, &sp) {
                hit = true;
            }
        });
        hit
    }

    /// Classifies every leaf element against the interface.
    pub fn classify(&self, surf: &SurfaceMesh) -> Result<ElementClassification> {
        for v in &surf.vertices {
            for a in 0..self.dim {
                if v[a] <= self.domain_lo[a] || v[a] >= self.domain_hi[a] {
                    return Err(Error::Geometry(format!(
                        "interface vertex {v:?} escapes the domain"
                    )));
                }
            }
        }
        let grid = SurfaceGrid::build(surf);
        let n = self.leaves.len();
        let mut labels = vec![Label::Exterior; n];
        let mut interfacial = vec![false; n];
        for i in 0..n {
            interfacial[i] = self.simplex_intersects_surface(self.leaf_verts(i), surf, &grid);
            if interfacial[i] {
                labels[i] = Label::Interfacial;
            }
        }
        // facet adjacency flood fill over non-interfacial leaves
        let mut facet_map: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let vs = self.leaf_verts(i);
            for skip in 0..=self.dim {
                let mut facet: Vec<u32> = vs
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != skip)
                    .map(|(_, &v)| v)
                    .collect();
                facet.sort_unstable();
                facet_map.entry(facet).or_default().push(i);
            }
        }
        let mut component = vec![usize::MAX; n];
        let mut reps: Vec<usize> = Vec::new();
        for start in 0..n {
            if interfacial[start] || component[start] != usize::MAX {
                continue;
            }
            let comp = reps.len();
            reps.push(start);
            let mut stack = vec![start];
            component[start] = comp;
            while let Some(i) = stack.pop() {
                let vs = self.leaf_verts(i);
                for skip in 0..=self.dim {
                    let mut facet: Vec<u32> = vs
                        .iter()
                        .enumerate()
                        .filter(|(a, _)| *a != skip)
                        .map(|(_, &v)| v)
                        .collect();
                    facet.sort_unstable();
                    for &j in &facet_map[&facet] {
                        if j != i && !interfacial[j] && component[j] == usize::MAX {
                            component[j] = comp;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        let geo = SurfaceGeometry::build(surf)?;
        let comp_labels: Vec<Label> = reps
            .iter()
            .map(|&rep| {
                let p = self.leaf_barycenter(rep);
                if point_inside_surface(surf, &geo, p) {
                    Label::Interior
                } else {
                    Label::Exterior
                }
            })
            .collect();
        for i in 0..n {
            if !interfacial[i] {
                labels[i] = comp_labels[component[i]];
            }
        }
        Ok(ElementClassification { labels })
    }

    // ----- point location -------------------------------------------------

    /// Barycentric coordinates of `x` in leaf `i`, unclamped.
    pub fn barycentric(&self, i: usize, x: Vec3) -> [f64; 4] {
        let vs = self.leaf_verts(i);
        let p0 = self.vertices[vs[0] as usize];
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for c in 0..d {
            let col = la::sub(self.vertices[vs[c + 1] as usize], p0);
            for r in 0..d {
                a[r * d + c] = col[r];
            }
        }
        for r in 0..d {
            b[r] = x[r] - p0[r];
        }
        la::solve_dense(&mut a, &mut b, d).expect("nondegenerate element");
        let mut bary = [0.0; 4];
        let mut s = 0.0;
        for c in 0..d {
            bary[c + 1] = b[c];
            s += b[c];
        }
        bary[0] = 1.0 - s;
        bary
    }

    /// Finds a leaf containing `x` (points on shared facets may return
    /// either side). Fails if `x` lies outside the mesh.
    pub fn locate_point(&self, locator: &PointLocator, x: Vec3) -> Result<(usize, [f64; 4])> {
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        let mut result = None;
        locator.for_candidates(x, |i| {
            if result.is_some() {
                return;
            }
            let bary = self.barycentric(i, x);
            let min = bary[..=self.dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if min >= -1e-12 {
                result = Some((i, bary));
            } else if best.map(|(_, _, m)| min > m).unwrap_or(true) {
                best = Some((i, bary, min));
            }
        });
        if let Some(r) = result {
            return Ok(r);
        }
        // tolerance escalation for points marginally outside due to rounding
        if let Some((i, bary, min)) = best {
            if min >= -1e-9 {
                return Ok((i, bary));
            }
        }
        Err(Error::PointNotFound(x))
    }

    pub fn build_locator(&self) -> PointLocator {
        PointLocator::build(self)
    }

    /// Signed-ish diameter scale of the smallest leaf (for diagnostics).
    pub fn min_leaf_diameter(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.leaves.len() {
            let vs = self.leaf_verts(i);
            for a in 0..vs.len() {
                for b in a + 1..vs.len() {
                    m = m.min(la::norm(la::sub(
                        self.vertices[vs[a] as usize],
                        self.vertices[vs[b] as usize],
                    )));
                }
            }
        }
        m
    }

    /// True if every interior facet is shared by exactly two leaves.
    pub fn is_conforming(&self) -> bool {
        let mut facet_map: HashMap<Vec<u32>, usize> = HashMap::new();
        for i in 0..self.leaves.len() {
            let vs = self.leaf_verts(i);
            for skip in 0..=self.dim {
                let mut facet: Vec<u32> = vs
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != skip)
                    .map(|(_, &v)| v)
                    .collect();
                facet.sort_unstable();
                *facet_map.entry(facet).or_default() += 1;
            }
        }
        facet_map.values().all(|&c| c == 1 || c == 2)
    }

    /// Boundary facets of the leaf mesh with their tags. Each facet is
    /// returned as (leaf index, facet vertex ids, outward normal, measure).
    pub fn boundary_facets(&self) -> Vec<(usize, Vec<u32>, Vec3, f64, BoundaryTag)> {
        let mut facet_map: HashMap<Vec<u32>, Vec<(usize, usize)>> = HashMap::new();
        for i in 0..self.leaves.len() {
            let vs = self.leaf_verts(i);
            for skip in 0..=self.dim {
                let mut facet: Vec<u32> = vs
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != skip)
                    .map(|(_, &v)| v)
                    .collect();
                facet.sort_unstable();
                facet_map.entry(facet).or_default().push((i, skip));
            }
        }
        let mut out = Vec::new();
        for (facet, owners) in facet_map {
            if owners.len() != 1 {
                continue;
            }
            let (i, skip) = owners[0];
            let vs = self.leaf_verts(i);
            let opp = self.vertices[vs[skip] as usize];
            let pts: Vec<Vec3> = facet.iter().map(|&v| self.vertices[v as usize]).collect();
            let (mut normal, measure) = if self.dim == 2 {
                let t = la::sub(pts[1], pts[0]);
                (la::curve_normal_dir(t), la::norm(t))
            } else {
                let n = la::cross(la::sub(pts[1], pts[0]), la::sub(pts[2], pts[0]));
                (n, 0.5 * la::norm(n))
            };
            // orient outward (away from the opposite vertex)
            let centroid = la::scale(
                1.0 / self.dim as f64,
                pts.iter().fold(la::ZERO_VEC, |acc, p| la::add(acc, *p)),
            );
            if la::dot(normal, la::sub(centroid, opp)) < 0.0 {
                normal = la::scale(-1.0, normal);
            }
            normal = la::normalize(normal);
            let tag = self.facet_tag(&pts, normal);
            out.push((i, facet, normal, measure, tag));
        }
        out
    }

    fn facet_tag(&self, pts: &[Vec3], normal: Vec3) -> BoundaryTag {
        for &(axis, positive) in &self.tags.stress_free {
            let sign = if positive { 1.0 } else { -1.0 };
            if normal[axis] * sign < 0.999 {
                continue;
            }
            let plane = if positive { self.domain_hi[axis] } else { self.domain_lo[axis] };
            if pts.iter().all(|p| (p[axis] - plane).abs() < 1e-9) {
                return BoundaryTag::StressFree;
            }
        }
        BoundaryTag::Dirichlet
    }
}

/// Piecewise constant density/viscosity from the classification.
pub fn phase_coefficients(class: &ElementClassification, minus: f64, plus: f64) -> Vec<f64> {
    class
        .labels
        .iter()
        .map(|l| match l {
            Label::Interior => minus,
            Label::Exterior => plus,
            Label::Interfacial => 0.5 * (minus + plus),
        })
        .collect()
}

// ----- geometric predicates ------------------------------------------------

/// Clips `surface_pts` (a segment or triangle) against the closed simplex
/// spanned by `elem_pts`; true when the intersection is nonempty.
pub fn simplex_clip_intersects(dim: usize, elem_pts: &[Vec3], surface_pts: &[Vec3]) -> bool {
    // half-space representation of the element
    let mut poly: Vec<Vec3> = surface_pts.to_vec();
    let centroid = la::scale(
        1.0 / elem_pts.len() as f64,
        elem_pts.iter().fold(la::ZERO_VEC, |acc, p| la::add(acc, *p)),
    );
    let scale_ref: f64 = elem_pts
        .iter()
        .map(|p| la::norm(la::sub(*p, centroid)))
        .fold(0.0, f64::max);
    let eps = 1e-12 * scale_ref.max(1e-300);
    for skip in 0..elem_pts.len() {
        let pts: Vec<Vec3> = elem_pts
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != skip)
            .map(|(_, p)| *p)
            .collect();
        let mut n = if dim == 2 {
            la::curve_normal_dir(la::sub(pts[1], pts[0]))
        } else {
            la::cross(la::sub(pts[1], pts[0]), la::sub(pts[2], pts[0]))
        };
        if la::dot(n, la::sub(elem_pts[skip], pts[0])) > 0.0 {
            n = la::scale(-1.0, n);
        }
        let n = la::normalize(n);
        // keep the side containing the simplex: n . (x - p0) <= 0
        poly = clip_polygon(&poly, pts[0], n, eps, dim);
        if poly.is_empty() {
            return false;
        }
    }
    true
}

/// Sutherland-Hodgman style clip of a point/segment/polygon by the
/// half-space n . (x - p0) <= eps.
fn clip_polygon(poly: &[Vec3], p0: Vec3, n: Vec3, eps: f64, dim: usize) -> Vec<Vec3> {
    if poly.is_empty() {
        return Vec::new();
    }
    let side = |p: Vec3| la::dot(n, la::sub(p, p0));
    if poly.len() == 1 {
        return if side(poly[0]) <= eps { poly.to_vec() } else { Vec::new() };
    }
    let mut out = Vec::new();
    let closed = dim == 3 && poly.len() > 2;
    let m = if closed { poly.len() } else { poly.len() - 1 };
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let sa = side(a);
        let sb = side(b);
        if sa <= eps {
            out.push(a);
        }
        if (sa < -eps && sb > eps) || (sa > eps && sb < -eps) {
            let t = sa / (sa - sb);
            out.push(la::axpy(t, la::sub(b, a), a));
        }
    }
    if !closed {
        let last = poly[poly.len() - 1];
        if side(last) <= eps {
            out.push(last);
        }
    }
    out.dedup_by(|a, b| la::norm(la::sub(*a, *b)) < 1e-30);
    out
}

/// Winding-number (d=2) / solid-angle (d=3) point-in-surface test.
pub fn point_inside_surface(surf: &SurfaceMesh, geo: &SurfaceGeometry, p: Vec3) -> bool {
    let _ = geo;
    if surf.dim == 2 {
        let mut total = 0.0f64;
        for s in &surf.simplices {
            let a = la::sub(surf.vertices[s[0]], p);
            let b = la::sub(surf.vertices[s[1]], p);
            let crossz = a[0] * b[1] - a[1] * b[0];
            let dotab = a[0] * b[0] + a[1] * b[1];
            total += crossz.atan2(dotab);
        }
        total.abs() > std::f64::consts::PI
    } else {
        let mut total = 0.0f64;
        for s in &surf.simplices {
            let a = la::sub(surf.vertices[s[0]], p);
            let b = la::sub(surf.vertices[s[1]], p);
            let c = la::sub(surf.vertices[s[2]], p);
            let na = la::norm(a);
            let nb = la::norm(b);
            let nc = la::norm(c);
            let det = la::dot(a, la::cross(b, c));
            let denom =
                na * nb * nc + la::dot(a, b) * nc + la::dot(b, c) * na + la::dot(c, a) * nb;
            total += 2.0 * det.atan2(denom);
        }
        total.abs() > 2.0 * std::f64::consts::PI
    }
}

// ----- spatial hashing ------------------------------------------------------

pub struct SurfaceGrid {
    lo: Vec3,
    inv_h: f64,
    dims: [usize; 3],
    cells: HashMap<[i32; 3], Vec<usize>>,
}

impl SurfaceGrid {
    pub fn build(surf: &SurfaceMesh) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &surf.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max).max(1e-12);
        let n = (surf.num_simplices() as f64).powf(1.0 / surf.dim as f64).ceil() as usize;
        let h = extent / n.max(1) as f64;
        let inv_h = 1.0 / h;
        let mut cells: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
        for j in 0..surf.num_simplices() {
            let mut slo = [f64::INFINITY; 3];
            let mut shi = [f64::NEG_INFINITY; 3];
            for &k in surf.simplex(j) {
                for a in 0..3 {
                    slo[a] = slo[a].min(surf.vertices[k][a]);
                    shi[a] = shi[a].max(surf.vertices[k][a]);
                }
            }
            let c0 = Self::cell_of(lo, inv_h, slo);
            let c1 = Self::cell_of(lo, inv_h, shi);
            for x in c0[0]..=c1[0] {
                for y in c0[1]..=c1[1] {
                    for z in c0[2]..=c1[2] {
                        cells.entry([x, y, z]).or_default().push(j);
                    }
                }
            }
        }
        Self { lo, inv_h, dims: [0; 3], cells }
    }

    fn cell_of(lo: Vec3, inv_h: f64, p: Vec3) -> [i32; 3] {
        [
            ((p[0] - lo[0]) * inv_h).floor() as i32,
            ((p[1] - lo[1]) * inv_h).floor() as i32,
            ((p[2] - lo[2]) * inv_h).floor() as i32,
        ]
    }

    pub fn for_candidates<F: FnMut(usize)>(&self, lo: Vec3, hi: Vec3, mut f: F) {
        let _ = self.dims;
        let c0 = Self::cell_of(self.lo, self.inv_h, lo);
        let c1 = Self::cell_of(self.lo, self.inv_h, hi);
        let mut seen = std::collections::HashSet::new();
        for x in c0[0]..=c1[0] {
            for y in c0[1]..=c1[1] {
                for z in c0[2]..=c1[2] {
                    if let Some(list) = self.cells.get(&[x, y, z]) {
                        for &j in list {
                            if seen.insert(j) {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub struct PointLocator {
    lo: Vec3,
    inv_h: f64,
    cells: HashMap<[i32; 3], Vec<usize>>,
    all: Vec<usize>,
}

impl PointLocator {
    pub fn build(mesh: &BulkMesh) -> Self {
        let lo = mesh.domain_lo;
        let hi = mesh.domain_hi;
        let extent = (0..mesh.dim).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        let n = (mesh.num_leaves() as f64).powf(1.0 / mesh.dim as f64).ceil() as usize;
        let h = extent / n.max(1) as f64;
        let inv_h = 1.0 / h;
        let mut cells: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
        for i in 0..mesh.num_leaves() {
            let mut slo = [f64::INFINITY; 3];
            let mut shi = [f64::NEG_INFINITY; 3];
            for &v in mesh.leaf_verts(i) {
                for a in 0..3 {
                    slo[a] = slo[a].min(mesh.vertices[v as usize][a]);
                    shi[a] = shi[a].max(mesh.vertices[v as usize][a]);
                }
            }
            let c0 = SurfaceGrid::cell_of(lo, inv_h, slo);
            let c1 = SurfaceGrid::cell_of(lo, inv_h, shi);
            for x in c0[0]..=c1[0] {
                for y in c0[1]..=c1[1] {
                    for z in c0[2]..=c1[2] {
                        cells.entry([x, y, z]).or_default().push(i);
                    }
                }
            }
        }
        Self { lo, inv_h, cells, all: (0..mesh.num_leaves()).collect() }
    }

    fn for_candidates<F: FnMut(usize)>(&self, p: Vec3, mut f: F) {
        let c = SurfaceGrid::cell_of(self.lo, self.inv_h, p);
        let mut any = false;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        any = true;
                        for &i in list {
                            f(i);
                        }
                    }
                }
            }
        }
        if !any {
            for &i in &self.all {
                f(i);
            }
        }
    }
}
