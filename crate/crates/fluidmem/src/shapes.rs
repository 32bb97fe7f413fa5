//! Initial surface constructions for the named scenarios.
//!
//! Curves are oriented counterclockwise (outward normals via clockwise
//! rotation of the tangent), triangulations outward.

use crate::la::{self, Vec3};
use crate::surface::SurfaceMesh;
use std::collections::HashMap;
use std::f64::consts::PI;

fn close_curve(vertices: Vec<Vec3>) -> SurfaceMesh {
    let n = vertices.len();
    let simplices = (0..n).map(|k| [k, (k + 1) % n, 0]).collect();
    SurfaceMesh { dim: 2, vertices, simplices }
}

/// Regular n-gon inscribed in the circle of radius `r` (stored clockwise,
/// so the element normals point outward).
pub fn circle(r: f64, n: usize) -> SurfaceMesh {
    let vertices = (0..n)
        .map(|k| {
            let th = -2.0 * PI * k as f64 / n as f64;
            [r * th.cos(), r * th.sin(), 0.0]
        })
        .collect();
    close_curve(vertices)
}

/// Samples a closed parametric curve at `n` points of equal arclength.
fn equal_arclength<F: Fn(f64) -> Vec3>(curve: F, n: usize) -> Vec<Vec3> {
    let fine = 200 * n;
    let mut pts = Vec::with_capacity(fine + 1);
    let mut cum = Vec::with_capacity(fine + 1);
    let mut total = 0.0;
    let mut prev = curve(0.0);
    pts.push(prev);
    cum.push(0.0);
    for i in 1..=fine {
        let p = curve(i as f64 / fine as f64);
        total += la::norm(la::sub(p, prev));
        pts.push(p);
        cum.push(total);
        prev = p;
    }
    let mut out = Vec::with_capacity(n);
    let mut idx = 0;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while cum[idx + 1] < target {
            idx += 1;
        }
        let seg = cum[idx + 1] - cum[idx];
        let t = if seg > 0.0 { (target - cum[idx]) / seg } else { 0.0 };
        out.push(la::axpy(t, la::sub(pts[idx + 1], pts[idx]), pts[idx]));
    }
    out
}

/// Ellipse with semi-axes `a`, `b`, discretized with equal arclength.
pub fn ellipse(a: f64, b: f64, n: usize) -> SurfaceMesh {
    close_curve(equal_arclength(
        |t| {
            let th = -2.0 * PI * t;
            [a * th.cos(), b * th.sin(), 0.0]
        },
        n,
    ))
}

/// A smooth letter "C": the boundary of a thickened circular arc (mid-radius
/// `mid_radius`, angular span `span`), with semicircular caps. The tube
/// half-width is chosen so the total curve length equals `length`.
pub fn letter_c(length: f64, n: usize) -> SurfaceMesh {
    let mid_radius = 0.25;
    let span = 1.5 * PI;
    let w = (length - 2.0 * mid_radius * span) / (2.0 * PI);
    assert!(w > 0.0 && w < mid_radius, "letter-C length out of range");
    // opening towards +x: arc from -3/4 pi to +3/4 pi... the GAP is the
    // remaining quarter around theta = 0, so run the arc over
    // [pi/4, pi/4 + span] instead, leaving the opening at +x.
    let th1 = 0.25 * PI;
    let th2 = th1 + span;
    let unit = |th: f64| [th.cos(), th.sin(), 0.0];
    let tang = |th: f64| [-th.sin(), th.cos(), 0.0];
    let l_outer = (mid_radius + w) * span;
    let l_inner = (mid_radius - w) * span;
    let l_cap = PI * w;
    let total = l_outer + l_inner + 2.0 * l_cap;
    let point = move |t: f64| -> Vec3 {
        let mut s = t * total;
        if s < l_outer {
            // outer arc, increasing angle
            let th = th1 + s / (mid_radius + w);
            return la::scale(mid_radius + w, unit(th));
        }
        s -= l_outer;
        if s < l_cap {
            // cap at th2, sweeping from outer to inner through +tangent side
            let c = la::scale(mid_radius, unit(th2));
            let phi = s / w; // 0..pi
            let dir = la::axpy(phi.sin(), tang(th2), la::scale(phi.cos(), unit(th2)));
            return la::axpy(w, dir, c);
        }
        s -= l_cap;
        if s < l_inner {
            // inner arc, decreasing angle
            let th = th2 - s / (mid_radius - w);
            return la::scale(mid_radius - w, unit(th));
        }
        s -= l_inner;
        // cap at th1, sweeping from inner to outer through -tangent side
        let c = la::scale(mid_radius, unit(th1));
        let phi = s / w; // 0..pi
        let dir = la::axpy(-phi.sin(), tang(th1), la::scale(-phi.cos(), unit(th1)));
        la::axpy(w, dir, c)
    };
    let mut pts = equal_arclength(point, n);
    pts.reverse();
    close_curve(pts)
}

fn push_midpoint(
    cache: &mut HashMap<(usize, usize), usize>,
    vertices: &mut Vec<Vec3>,
    a: usize,
    b: usize,
) -> usize {
    let key = (a.min(b), a.max(b));
    *cache.entry(key).or_insert_with(|| {
        let m = la::scale(0.5, la::add(vertices[a], vertices[b]));
        vertices.push(m);
        vertices.len() - 1
    })
}

/// Uniform 1:4 refinement, optionally re-projecting vertices to radius `r`.
fn subdivide(mut vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, levels: usize, project_r: Option<f64>) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut faces = faces;
    for _ in 0..levels {
        let mut cache = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = push_midpoint(&mut cache, &mut vertices, f[0], f[1]);
            let bc = push_midpoint(&mut cache, &mut vertices, f[1], f[2]);
            let ca = push_midpoint(&mut cache, &mut vertices, f[2], f[0]);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
        if let Some(r) = project_r {
            for v in vertices.iter_mut() {
                *v = la::scale(r / la::norm(*v), *v);
            }
        }
    }
    (vertices, faces)
}

/// Icosahedral sphere triangulation with radius `r` (12, 42, 162, 642, ...
/// vertices for 0, 1, 2, 3, ... subdivisions).
pub fn icosphere(r: f64, subdivisions: usize) -> SurfaceMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in vertices.iter_mut() {
        *v = la::scale(r / la::norm(*v), *v);
    }
    let faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let (vertices, faces) = subdivide(vertices, faces, subdivisions, Some(r));
    SurfaceMesh { dim: 3, vertices, simplices: faces }
}

/// Sphere triangulation built from the 12-triangle cube surface
/// (12 * 4^levels triangles; levels = 4 gives (1538, 3072)).
pub fn cube_sphere(r: f64, levels: usize) -> SurfaceMesh {
    let corners: Vec<Vec3> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            ]
        })
        .collect();
    // outward-oriented faces of the cube, each split into two triangles
    let quads: [[usize; 4]; 6] = [
        [0, 2, 3, 1], // z = -1 (viewed from outside below)
        [4, 5, 7, 6], // z = +1
        [0, 1, 5, 4], // y = -1
        [2, 6, 7, 3], // y = +1
        [0, 4, 6, 2], // x = -1
        [1, 3, 7, 5], // x = +1
    ];
    let mut faces = Vec::new();
    for q in &quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    let mut vertices = corners;
    for v in vertices.iter_mut() {
        *v = la::scale(r / la::norm(*v), *v);
    }
    let (vertices, faces) = subdivide(vertices, faces, levels, Some(r));
    SurfaceMesh { dim: 3, vertices, simplices: faces }
}

/// Latitude/longitude sphere: `rings` interior latitude rings of `n_lon`
/// vertices plus two poles (2 n_lon rings triangles).
pub fn uv_sphere(r: f64, n_lon: usize, rings: usize) -> SurfaceMesh {
    let mut vertices: Vec<Vec3> = Vec::with_capacity(2 + n_lon * rings);
    vertices.push([0.0, 0.0, r]); // north pole
    for i in 1..=rings {
        let theta = PI * i as f64 / (rings + 1) as f64;
        for j in 0..n_lon {
            let phi = 2.0 * PI * j as f64 / n_lon as f64;
            vertices.push([
                r * theta.sin() * phi.cos(),
                r * theta.sin() * phi.sin(),
                r * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -r]); // south pole
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * n_lon + (j % n_lon);
    let mut faces = Vec::new();
    for j in 0..n_lon {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..rings {
        for j in 0..n_lon {
            let a = ring(i, j);
            let b = ring(i, j + 1);
            let c = ring(i + 1, j);
            let d = ring(i + 1, j + 1);
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for j in 0..n_lon {
        faces.push([south, ring(rings, j + 1), ring(rings, j)]);
    }
    SurfaceMesh { dim: 3, vertices, simplices: faces }
}

/// Rescales a closed triangulation so its surface area matches `target`.
pub fn scale_to_area(mesh: &mut SurfaceMesh, target: f64) {
    let mut area = 0.0;
    for j in 0..mesh.num_simplices() {
        area += mesh.element_geometry(j).1;
    }
    let s = (target / area).sqrt();
    for v in mesh.vertices.iter_mut() {
        *v = la::scale(s, *v);
    }
}

/// Flat plate of nominal dimension 4 x 4 x 1: cube-sphere mesh projected
/// onto a superellipsoid with semi-axes (2, 2, 0.5), rescaled to the
/// requested surface area.
pub fn plate(levels: usize, target_area: f64) -> SurfaceMesh {
    let mut mesh = cube_sphere(1.0, levels);
    let semi = [2.0, 2.0, 0.5];
    let p = 4.0;
    for v in mesh.vertices.iter_mut() {
        let d = [v[0] * semi[0], v[1] * semi[1], v[2] * semi[2]];
        let f = (d[0] / semi[0]).abs().powf(p)
            + (d[1] / semi[1]).abs().powf(p)
            + (d[2] / semi[2]).abs().powf(p);
        let t = f.powf(-1.0 / p);
        *v = la::scale(t, d);
    }
    scale_to_area(&mut mesh, target_area);
    mesh
}

/// Star-shaped surface with `arms` radial arms in the equatorial plane.
pub fn armed_star(arms: usize, amplitude: f64, n_lon: usize, rings: usize, target_area: f64) -> SurfaceMesh {
    let mut mesh = uv_sphere(1.0, n_lon, rings);
    for v in mesh.vertices.iter_mut() {
        let r = la::norm(*v);
        let sin_theta2 = (v[0] * v[0] + v[1] * v[1]) / (r * r);
        let phi = v[1].atan2(v[0]);
        let bump = 0.5 + 0.5 * (arms as f64 * phi).cos();
        let scale = 1.0 + amplitude * sin_theta2.powi(3) * bump * bump;
        *v = la::scale(scale, *v);
    }
    scale_to_area(&mut mesh, target_area);
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_meshes_are_valid() {
        circle(1.0, 8).validate().unwrap();
        ellipse(0.5, 1.25, 64).validate().unwrap();
        letter_c(2.823, 257).validate().unwrap();
        icosphere(1.0, 1).validate().unwrap();
        cube_sphere(1.0, 1).validate().unwrap();
        uv_sphere(1.0, 12, 5).validate().unwrap();
        plate(2, 35.7).validate().unwrap();
        armed_star(7, 0.9, 34, 17, 10.5).validate().unwrap();
    }

    #[test]
    fn paper_element_counts() {
        let plate = cube_sphere(1.0, 4);
        assert_eq!(plate.num_vertices(), 1538);
        assert_eq!(plate.num_simplices(), 3072);
        let spin = cube_sphere(1.0, 5);
        assert_eq!(spin.num_vertices(), 6146);
        assert_eq!(spin.num_simplices(), 12288);
        let seven = uv_sphere(1.0, 68, 34);
        assert_eq!(seven.num_vertices(), 2314);
        assert_eq!(seven.num_simplices(), 4624);
        let budding = uv_sphere(1.0, 64, 48);
        assert_eq!(budding.num_vertices(), 3074);
        assert_eq!(budding.num_simplices(), 6144);
        let ico = icosphere(1.0, 2);
        assert_eq!(ico.num_vertices(), 162);
    }

    #[test]
    fn letter_c_length_and_bounds() {
        let mesh = letter_c(2.823, 257);
        let mut len = 0.0;
        for j in 0..mesh.num_simplices() {
            len += mesh.element_geometry(j).1;
        }
        // polygonal length approaches the target from below
        assert!((len - 2.823).abs() < 2e-3, "length {len}");
        for v in &mesh.vertices {
            assert!(v[0].abs() < 1.0 && v[1].abs() < 1.0, "outside (-1,1)^2");
        }
    }

    #[test]
    fn ellipse_perimeter_matches_shear_setup() {
        let mesh = ellipse(0.5, 1.25, 257);
        let mut len = 0.0;
        for j in 0..mesh.num_simplices() {
            len += mesh.element_geometry(j).1;
        }
        assert!((len - 5.75).abs() < 0.01, "perimeter {len}");
    }
}
