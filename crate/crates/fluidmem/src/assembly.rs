//! Assembly of every operator and right-hand side of the coupled scheme.
//!
//! Inner-product discipline. Each term below is integrated either with the
//! vertex-lumped rule (per element: measure/d times the sum of one-sided
//! vertex limits) or exactly (integrands are elementwise polynomials of the
//! piecewise linear surface fields). The table is the authority for this
//! file; changing a single row breaks either the energy structure or the
//! conservation identities.
//!
//! | operator / vector                                   | rule    |
//! |-----------------------------------------------------|---------|
//! | bulk mass, viscous, advection, pressure divergence  | exact   |
//! | surface momentum mass (rho_Gamma)                   | lumped  |
//! | surface viscous (D_s : D_s of interpolated traces)  | exact   |
//! | surface pressure block (divergence of traces)       | exact   |
//! | volume multiplier column (omega pairing)            | lumped  |
//! | velocity<->surface-force pairing M_{Gamma,Omega}    | lumped  |
//! | M_Gamma, M_{Gamma,alpha}                            | lumped  |
//! | A_Gamma (scalar/vector stiffness)                   | exact   |
//! | Z_Gamma = B - B* - R (transport of the multiplier)  | exact   |
//! | c (spontaneous/Gaussian curvature data)             | lumped  |
//! | d_alpha, d_kappa, d_G                               | lumped  |
//! | d_beta: line-energy density part                    | lumped  |
//! | d_beta: gradient-outer-product part                 | exact   |
//! | d_Z: the two normal-projection parts                | lumped  |
//! | d_Z: the normal-weighted gradient part              | exact   |
//! | phase mass / transport right-hand side              | lumped  |
//! | phase stiffness, chemical-potential stiffness       | exact   |
//! | obstacle coupling terms (g vector)                  | lumped  |
//!
//! Audit note: the two transport rows marked exact next to the lumped rows
//! (Z_Gamma and the gradient part of d_Z) look inconsistent at first sight
//! but are copied as written from the time-discrete force balance; the
//! finite-difference energy-gradient test pins them down.
//!
//! The velocity <-> surface-force pairing is the vertex-lumped one. The
//! exact variant breaks the discrete volume conservation identity
//! <deltaX, omega>^h = 0 and the stationary-sphere property, both of which
//! are tested; `pair_exact` below exists for diagnostics only.

use crate::bulk::{BulkMesh, Label};
use crate::la::{self, Mat3, Vec3};
use crate::quadrature::simplex_rule;
use crate::sparse::{CooBuilder, CsrMatrix};
use crate::spaces::{self, DofMap, P2Field, SurfaceQuadraturePlan, VertexTrace};
use crate::surface::{SurfaceGeometry, SurfaceMesh};
use crate::{Error, Result};

pub fn flatten(dim: usize, field: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(field.len() * dim);
    for v in field {
        out.extend_from_slice(&v[..dim]);
    }
    out
}

pub fn unflatten(dim: usize, flat: &[f64]) -> Vec<Vec3> {
    flat.chunks(dim)
        .map(|c| {
            let mut v = la::ZERO_VEC;
            v[..dim].copy_from_slice(c);
            v
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// (1 - s^2)/2 on [-1, 1], +infinity outside: the time step becomes a
    /// variational inequality.
    Obstacle,
    /// (s^2 - 1)^2 / 4, treated explicitly.
    Quartic,
}

impl Potential {
    pub fn psi(&self, s: f64) -> f64 {
        match self {
            Potential::Obstacle => 0.5 * (1.0 - s * s),
            Potential::Quartic => 0.25 * (s * s - 1.0) * (s * s - 1.0),
        }
    }
}

/// Phase-dependent material laws (bending rigidity, spontaneous curvature,
/// Gaussian rigidity) with their derivatives.
#[derive(Clone)]
pub struct CoefficientLaws {
    pub alpha: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub alpha_prime: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kappa_bar: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kappa_bar_prime: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub alpha_g: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub alpha_g_prime: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl CoefficientLaws {
    /// Linear interpolation between the phase values at -1 and +1.
    pub fn linear(minus: f64, plus: f64) -> (impl Fn(f64) -> f64 + Clone, impl Fn(f64) -> f64 + Clone) {
        let mid = 0.5 * (plus + minus);
        let slope = 0.5 * (plus - minus);
        (move |s: f64| mid + slope * s, move |_s: f64| slope)
    }

    pub fn new_linear(alpha: (f64, f64), kappa_bar: (f64, f64), alpha_g: (f64, f64)) -> Self {
        let (a, ap) = Self::linear(alpha.0, alpha.1);
        let (k, kp) = Self::linear(kappa_bar.0, kappa_bar.1);
        let (g, gp) = Self::linear(alpha_g.0, alpha_g.1);
        Self {
            alpha: std::sync::Arc::new(a),
            alpha_prime: std::sync::Arc::new(ap),
            kappa_bar: std::sync::Arc::new(k),
            kappa_bar_prime: std::sync::Arc::new(kp),
            alpha_g: std::sync::Arc::new(g),
            alpha_g_prime: std::sync::Arc::new(gp),
        }
    }

    /// Degenerate bending rigidity (s^2 + delta) * alpha_L(s), allowing
    /// tangent discontinuities at the phase junction.
    pub fn new_c0_junction(alpha: (f64, f64), kappa_bar: (f64, f64), alpha_g: (f64, f64), delta: f64) -> Self {
        let (al, alp) = Self::linear(alpha.0, alpha.1);
        let (al2, alp2) = (al.clone(), alp.clone());
        let (k, kp) = Self::linear(kappa_bar.0, kappa_bar.1);
        let (g, gp) = Self::linear(alpha_g.0, alpha_g.1);
        Self {
            alpha: std::sync::Arc::new(move |s| (s * s + delta) * al(s)),
            alpha_prime: std::sync::Arc::new(move |s| 2.0 * s * al2(s) + (s * s + delta) * alp2(s)),
            kappa_bar: std::sync::Arc::new(k),
            kappa_bar_prime: std::sync::Arc::new(kp),
            alpha_g: std::sync::Arc::new(g),
            alpha_g_prime: std::sync::Arc::new(gp),
        }
    }
}

// ---------------------------------------------------------------------------
// surface operators
// ---------------------------------------------------------------------------

/// The vertex-indexed operators of the curvature subsystem.
pub struct SurfaceOperators {
    pub dim: usize,
    pub n: usize,
    /// diag(M_Gamma): lumped vertex weights
    pub weights: Vec<f64>,
    /// diag(M_{Gamma,alpha})
    pub weights_alpha: Vec<f64>,
    /// scalar stiffness <grad chi_l, grad chi_k>
    pub a_scalar: CsrMatrix,
    /// transport operator on (n*dim) unknowns
    pub z_gamma: CsrMatrix,
}

impl SurfaceOperators {
    /// Vector stiffness application (A_Gamma = A_scalar x Id).
    pub fn apply_a_vec(&self, x: &[f64], y: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(x.len(), self.n * d);
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for k in 0..self.n {
            let (cols, vals) = self.a_scalar.row(k);
            for (l, v) in cols.iter().zip(vals) {
                for c in 0..d {
                    y[k * d + c] += v * x[*l as usize * d + c];
                }
            }
        }
    }
}

pub fn assemble_surface_operators(
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
    alpha_m: &[f64],
) -> Result<SurfaceOperators> {
    let d = surf.dim;
    let n = surf.num_vertices();
    for (k, &a) in alpha_m.iter().enumerate() {
        if !(a > 0.0) {
            return Err(Error::Config(format!(
                "bending rigidity must be positive, got {a} at vertex {k}"
            )));
        }
    }
    let mut a_b = CooBuilder::new(n, n);
    let mut z_b = CooBuilder::new(n * d, n * d);
    for j in 0..surf.num_simplices() {
        let s = surf.simplex(j);
        let m = geo.measures[j];
        let nu = geo.normals[j];
        for (a, &ka) in s.iter().enumerate() {
            let ga = geo.grads[j][a];
            for (b, &kb) in s.iter().enumerate() {
                let gb = geo.grads[j][b];
                a_b.push(ka, kb, m * la::dot(ga, gb));
                // Z = B - B* - R acting on the old multiplier:
                //   B  [(k,i),(l,jc)] = int (grad chi_l)_jc (grad chi_k)_i
                //   B* [(k,i),(l,jc)] = int (grad chi_l)_i  (grad chi_k)_jc
                //   R  [(k,i),(l,jc)] = int grad chi_l . grad chi_k (Id - nu nu^T)_{i jc}
                let gg = la::dot(ga, gb);
                for i in 0..d {
                    for jc in 0..d {
                        let bv = gb[jc] * ga[i];
                        let bsv = gb[i] * ga[jc];
                        let rv = gg * (if i == jc { 1.0 } else { 0.0 } - nu[i] * nu[jc]);
                        let val = m * (bv - bsv - rv);
                        z_b.push(ka * d + i, kb * d + jc, val);
                    }
                }
            }
        }
    }
    let weights = geo.vertex_weights.clone();
    let weights_alpha = weights
        .iter()
        .zip(alpha_m)
        .map(|(w, a)| w * a)
        .collect();
    Ok(SurfaceOperators {
        dim: d,
        n,
        weights,
        weights_alpha,
        a_scalar: a_b.build(),
        z_gamma: z_b.build(),
    })
}

// ---------------------------------------------------------------------------
// curvature right-hand sides
// ---------------------------------------------------------------------------

/// Everything the explicit side of the force balance needs on the current
/// surface: the interpolated laws and the transported fields.
pub struct CurvatureData<'a> {
    pub alpha: &'a [f64],
    pub kappa_bar: &'a [f64],
    pub alpha_g: &'a [f64],
    /// transported curvature, multiplier and Weingarten fields
    pub kappa_old: &'a [Vec3],
    pub y_old: &'a [Vec3],
    pub w_old: &'a [Mat3],
    /// Z = -alpha_G(C) W (vertexwise)
    pub z: &'a [Mat3],
    pub conc: &'a [f64],
    pub beta: f64,
    pub gamma: f64,
    pub potential: Potential,
}

pub struct CurvatureRhs {
    /// data vector of the bending-multiplier row
    pub c: Vec<f64>,
    /// d_kappa + d_alpha + d_beta + d_G
    pub d: Vec<f64>,
    /// Gaussian transport corrections
    pub d_z: Vec<f64>,
}

/// b_CH density at one-sided limits: gamma/2 |grad C|^2 (elementwise)
/// + Psi(C at the vertex) / gamma.
fn b_ch_at(data: &CurvatureData, grad_c: Vec3, c_vertex: f64) -> f64 {
    0.5 * data.gamma * la::dot(grad_c, grad_c)
        + data.potential.psi(c_vertex) / data.gamma
}

pub fn assemble_curvature_rhs(
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
    data: &CurvatureData,
) -> CurvatureRhs {
    let d = surf.dim;
    let n = surf.num_vertices();
    let dd = d as f64;
    let mut c_vec = vec![0.0; n * d];
    let mut d_vec = vec![0.0; n * d];
    let mut dz_vec = vec![0.0; n * d];
    for j in 0..surf.num_simplices() {
        let s = surf.simplex(j);
        let m = geo.measures[j];
        let w = m / dd;
        let nu = geo.normals[j];
        let grad_c = geo.gradient_scalar(surf, data.conc, j);
        let div_z = geo.divergence_tensor(surf, data.z, j);
        // c: lumped rows of the bending-multiplier data
        for (a, &k) in s.iter().enumerate() {
            let _ = a;
            let alpha_k = data.alpha[k];
            let kb_k = data.kappa_bar[k];
            let ag_k = data.alpha_g[k];
            let kap = data.kappa_old[k];
            let w_nu = la::mat_vec(data.w_old[k], nu);
            for i in 0..d {
                c_vec[k * d + i] +=
                    w * (-alpha_k * kb_k * nu[i] + ag_k * (kap[i] + w_nu[i]));
            }
        }
        // lumped rows tested against grad chi_b: loop integrand vertex a and
        // test vertex b within the element
        for (b, &kb) in s.iter().enumerate() {
            let gb = geo.grads[j][b];
            for &ka in s {
                let alpha_a = data.alpha[ka];
                let kbar_a = data.kappa_bar[ka];
                let ag_a = data.alpha_g[ka];
                let kap = data.kappa_old[ka];
                let y = data.y_old[ka];
                let wten = data.w_old[ka];
                let dev = la::axpy(-kbar_a, nu, kap); // kappa - kbar nu
                let kap_dot_gb = la::dot(kap, gb);
                // d_alpha
                for i in 0..d {
                    d_vec[kb * d + i] += w * alpha_a * kbar_a * kap_dot_gb * nu[i];
                }
                // d_kappa
                let dk = 0.5 * alpha_a * la::dot(dev, dev) - la::dot(y, kap);
                for i in 0..d {
                    d_vec[kb * d + i] += w * dk * gb[i];
                }
                // d_beta, lumped part
                let bch = b_ch_at(data, grad_c, data.conc[ka]);
                for i in 0..d {
                    d_vec[kb * d + i] += w * data.beta * bch * gb[i];
                }
                // d_G
                let dg = 0.5 * ag_a * (la::dot(kap, kap) + la::mat_frob2(wten));
                for i in 0..d {
                    d_vec[kb * d + i] += w * dg * gb[i];
                }
                // d_Z lumped parts with v = Z kappa + div Z
                let v = la::add(la::mat_vec(data.z[ka], kap), div_z);
                let v_dot_gb = la::dot(v, gb);
                let v_dot_nu = la::dot(v, nu);
                for i in 0..d {
                    dz_vec[kb * d + i] += w * (v_dot_gb * nu[i] - v_dot_nu * gb[i]);
                }
            }
            // d_beta, exact gradient part: -beta gamma (grad C . grad chi_b) grad C
            let f = -data.beta * data.gamma * m * la::dot(grad_c, gb);
            for i in 0..d {
                d_vec[kb * d + i] += f * grad_c[i];
            }
            // d_Z exact part:
            // - sum_i < nu_i grad Z_i, nu_r [nu x grad chi_b] - grad chi_b x e_r >
            // with Z_i the i-th column of the (symmetric) Z field.
            let grad_z = grad_tensor_columns(surf, geo, data.z, j);
            for r in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    let gzi = grad_z[i];
                    // grad Z_i : (nu x grad chi_b) = nu^T (grad Z_i) grad chi_b
                    let t1 = la::dot(nu, la::mat_vec(gzi, gb));
                    // grad Z_i : (grad chi_b x e_r) = (column r of grad Z_i) . grad chi_b
                    let mut col_r = la::ZERO_VEC;
                    for p in 0..3 {
                        col_r[p] = gzi[p][r];
                    }
                    let t2 = la::dot(col_r, gb);
                    acc += nu[i] * (nu[r] * t1 - t2);
                }
                dz_vec[kb * d + r] -= m * acc;
            }
        }
    }
    CurvatureRhs { c: c_vec, d: d_vec, d_z: dz_vec }
}

/// Gradients of the columns of a P1 tensor field on one element:
/// out[i][p][q] = d_q (Z e_i)_p.
fn grad_tensor_columns(
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
    z: &[Mat3],
    j: usize,
) -> [Mat3; 3] {
    let mut out = [la::ZERO_MAT; 3];
    for (a, &k) in surf.simplex(j).iter().enumerate() {
        let g = geo.grads[j][a];
        for i in 0..3 {
            for p in 0..3 {
                for q in 0..3 {
                    out[i][p][q] += z[k][p][i] * g[q];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Cahn-Hilliard system on the updated surface
// ---------------------------------------------------------------------------

pub struct ChSystem {
    /// lumped vertex weights of the updated surface
    pub weights: Vec<f64>,
    /// scalar stiffness on the updated surface
    pub stiffness: CsrMatrix,
    /// transport right-hand side (theta/tau <C^m, chi>^h on the old surface)
    pub r: Vec<f64>,
    /// explicit obstacle right-hand side
    pub g: Vec<f64>,
    pub theta_over_tau: f64,
    pub beta_gamma: f64,
}

pub struct ChInputs<'a> {
    pub laws: &'a CoefficientLaws,
    /// transported concentration Pi C^m
    pub conc_old: &'a [f64],
    /// transported curvature and Weingarten fields Pi kappa^{m+1}, Pi W^{m+1}
    pub kappa_new: &'a [Vec3],
    pub w_new: &'a [Mat3],
    /// lumped weights of the OLD surface
    pub weights_old: &'a [f64],
    pub theta: f64,
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn assemble_ch_system(
    surf_new: &SurfaceMesh,
    geo_new: &SurfaceGeometry,
    inp: &ChInputs,
) -> ChSystem {
    let n = surf_new.num_vertices();
    let d = surf_new.dim;
    let dd = d as f64;
    let mut stiff = CooBuilder::new(n, n);
    let mut g = vec![0.0; n];
    for j in 0..surf_new.num_simplices() {
        let s = surf_new.simplex(j);
        let m = geo_new.measures[j];
        let w = m / dd;
        let nu = geo_new.normals[j];
        for (a, &ka) in s.iter().enumerate() {
            for (b, &kb) in s.iter().enumerate() {
                stiff.push(ka, kb, m * la::dot(geo_new.grads[j][a], geo_new.grads[j][b]));
            }
            // obstacle coupling terms, one-sided limits per element
            let c = inp.conc_old[ka];
            let alpha = (inp.laws.alpha)(c);
            let alpha_p = (inp.laws.alpha_prime)(c);
            let kbar = (inp.laws.kappa_bar)(c);
            let kbar_p = (inp.laws.kappa_bar_prime)(c);
            let ag_p = (inp.laws.alpha_g_prime)(c);
            let kap = inp.kappa_new[ka];
            let dev = la::axpy(-kbar, nu, kap);
            let mut val = 0.0;
            val -= 0.5 * alpha_p * la::dot(dev, dev);
            val += kbar_p * alpha * la::dot(dev, nu);
            val -= 0.5 * ag_p * (la::dot(kap, kap) - la::mat_frob2(inp.w_new[ka]));
            g[ka] += w * val;
        }
    }
    // convex-splitting term beta/gamma <Pi C^m, chi>^h
    let weights: Vec<f64> = geo_new.vertex_weights.clone();
    for k in 0..n {
        g[k] += inp.beta / inp.gamma * weights[k] * inp.conc_old[k];
    }
    let r: Vec<f64> = (0..n)
        .map(|k| inp.theta / inp.tau * inp.weights_old[k] * inp.conc_old[k])
        .collect();
    ChSystem {
        weights,
        stiffness: stiff.build(),
        r,
        g,
        theta_over_tau: inp.theta / inp.tau,
        beta_gamma: inp.beta * inp.gamma,
    }
}

// ---------------------------------------------------------------------------
// bulk flow system
// ---------------------------------------------------------------------------

/// Scalar material parameters of one flow step.
pub struct FlowParams {
    pub tau: f64,
    pub rho_gamma: f64,
    pub mu_gamma: f64,
    pub rho_plus: f64,
}

/// Multiplier layout: [pressure dofs | P_sing | surface pressure dofs |
/// optional zero-mean multiplier].
pub struct MultiplierLayout {
    pub n_p: usize,
    pub n_surf: usize,
    pub zero_mean: bool,
}

impl MultiplierLayout {
    pub fn total(&self) -> usize {
        self.n_p + 1 + self.n_surf + usize::from(self.zero_mean)
    }

    pub fn p_sing(&self) -> usize {
        self.n_p
    }

    pub fn surf(&self, l: usize) -> usize {
        self.n_p + 1 + l
    }

    pub fn mean(&self) -> usize {
        self.n_p + 1 + self.n_surf
    }
}

/// The assembled flow saddle system on free velocity dofs, before the Schur
/// contribution of the curvature subsystem is added.
pub struct FlowSystem {
    pub n_u: usize,
    pub layout: MultiplierLayout,
    /// B_Omega on free dofs
    pub b_mat: CsrMatrix,
    /// constraint block (free velocity x multipliers)
    pub c_mat: CsrMatrix,
    /// multiplier-multiplier coupling (zero-mean row)
    pub k_mat: CsrMatrix,
    pub rhs_u: Vec<f64>,
    pub rhs_q: Vec<f64>,
    /// lumped velocity<->surface pairing on FULL velocity dofs
    pub pair_full: CsrMatrix,
    /// same restricted to free dofs (columns: surface vertex * dim + comp)
    pub pair_free: CsrMatrix,
    /// pairing contribution of the Dirichlet data: column vector of length
    /// n_surf*dim holding pair^T applied to the boundary values
    pub pair_bc: Vec<f64>,
    /// pressure integral weights (for diagnostics / zero-mean row)
    pub pressure_mean: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_flow_system(
    mesh: &BulkMesh,
    dofs: &DofMap,
    labels: &[Label],
    rho_m: &[f64],
    mu_m: &[f64],
    rho_old: &[f64],
    u_old: &P2Field,
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
    trace: &VertexTrace,
    params: &FlowParams,
    body_force: Option<&dyn Fn(Vec3) -> Vec3>,
    u_surf_old: Option<&[Vec3]>,
) -> Result<FlowSystem> {
    let d = mesh.dim;
    let n_full = dofs.n_vel();
    let n_surf = surf.num_vertices();
    let layout = MultiplierLayout { n_p: dofs.n_p1, n_surf, zero_mean: dofs.zero_mean };
    let n_mult = layout.total();
    assert_eq!(labels.len(), mesh.num_leaves());

    let mut b_full = CooBuilder::new(n_full, n_full);
    let mut c_full = CooBuilder::new(n_full, n_mult);
    let mut k_b = CooBuilder::new(n_mult, n_mult);
    let mut rhs_full = vec![0.0; n_full];
    let mut rhs_q = vec![0.0; n_mult];

    // ---- bulk element loop
    let rule = simplex_rule(d, 5);
    let nb = if d == 2 { 6 } else { 10 };
    let mut pressure_mean = vec![0.0; dofs.n_p1];
    for leaf in 0..mesh.num_leaves() {
        let geom = spaces::elem_geometry(mesh, leaf);
        let vol_scale = geom.volume * (if d == 2 { 2.0 } else { 6.0 }); // |det J|
        let p2 = &dofs.elem_p2[leaf];
        let p1 = &dofs.elem_p1[leaf];
        let rho = rho_m[leaf];
        let mu = mu_m[leaf];
        let rho_o = rho_old[leaf];
        let mass_coef = (rho + rho_o) / (2.0 * params.tau);
        let mut local = vec![0.0; (nb * d) * (nb * d)];
        let mut local_rhs = vec![0.0; nb * d];
        let mut local_c = vec![0.0; (nb * d) * (d + 1)];
        let mut vals = [0.0; 10];
        let mut grads = [la::ZERO_VEC; 10];
        for node in &rule {
            let w = node.weight * vol_scale;
            spaces::p2_values(d, &node.bary, &mut vals);
            spaces::p2_gradients(d, &node.bary, &geom.grad_lambda, &mut grads);
            // material data at the quadrature point
            let mut u_here = la::ZERO_VEC;
            for (loc, &dof) in p2.iter().enumerate() {
                u_here = la::axpy(vals[loc], u_old.coeffs[dof], u_here);
            }
            let mut x_here = la::ZERO_VEC;
            let vs = mesh.leaf_verts(leaf);
            for (a, &v) in vs.iter().enumerate() {
                x_here = la::axpy(node.bary[a], mesh.vertices[v as usize], x_here);
            }
            let f_here = body_force.map(|f| f(x_here)).unwrap_or(la::ZERO_VEC);
            for a in 0..nb {
                // advection transports each component by the old velocity
                let conv_a = la::dot(u_here, grads[a]);
                for b in 0..nb {
                    let conv_b = la::dot(u_here, grads[b]);
                    let mass = mass_coef * vals[a] * vals[b];
                    let lap = la::dot(grads[a], grads[b]);
                    let adv = 0.5 * rho * (conv_b * vals[a] - conv_a * vals[b]);
                    for r in 0..d {
                        for s in 0..d {
                            let mut v = mu * grads[b][r] * grads[a][s];
                            if r == s {
                                v += mass + mu * lap + adv;
                            }
                            local[(a * d + r) * (nb * d) + (b * d + s)] += w * v;
                        }
                    }
                }
                for r in 0..d {
                    local_rhs[a * d + r] +=
                        w * vals[a] * (rho_o / params.tau * u_here[r] + rho * f_here[r]);
                }
                // pressure-divergence block: -(phi_q, d_r phi_a)
                let mut pvals = [0.0; 4];
                spaces::p1_values(d, &node.bary, &mut pvals);
                for (q, _) in p1.iter().enumerate() {
                    for r in 0..d {
                        local_c[(a * d + r) * (d + 1) + q] -= w * pvals[q] * grads[a][r];
                    }
                }
            }
        }
        // scatter
        for a in 0..nb {
            for r in 0..d {
                let row = dofs.vel_dof(p2[a], r);
                for b in 0..nb {
                    for s in 0..d {
                        let v = local[(a * d + r) * (nb * d) + (b * d + s)];
                        if v != 0.0 {
                            b_full.push(row, dofs.vel_dof(p2[b], s), v);
                        }
                    }
                }
                rhs_full[row] += local_rhs[a * d + r];
                for (q, &pq) in p1.iter().enumerate() {
                    let v = local_c[(a * d + r) * (d + 1) + q];
                    if v != 0.0 {
                        c_full.push(row, pq, v);
                    }
                }
            }
        }
        for &pq in p1.iter() {
            pressure_mean[pq] += geom.volume / (d + 1) as f64;
        }
    }

    // ---- outflow boundary term (explicit): -(rho_+/2) <(U^m.n) U^m, phi>
    if params.rho_plus != 0.0 && !dofs.outflow_facets.is_empty() {
        let facet_rule = simplex_rule(d - 1, 5);
        let ref_vol: f64 = facet_rule.iter().map(|n| n.weight).sum();
        for (leaf, fverts, normal, measure) in &dofs.outflow_facets {
            let pts: Vec<Vec3> = fverts
                .iter()
                .map(|&v| mesh.vertices[v as usize])
                .collect();
            for node in &facet_rule {
                let w = node.weight / ref_vol * measure;
                let mut x = la::ZERO_VEC;
                for (a, p) in pts.iter().enumerate() {
                    x = la::axpy(node.bary[a], *p, x);
                }
                let bary = mesh.barycentric(*leaf, x);
                let mut vals = [0.0; 10];
                spaces::p2_values(d, &bary, &mut vals);
                let mut u_here = la::ZERO_VEC;
                for (loc, &dof) in dofs.elem_p2[*leaf].iter().enumerate() {
                    u_here = la::axpy(vals[loc], u_old.coeffs[dof], u_here);
                }
                let un = la::dot(u_here, *normal);
                for (loc, &dof) in dofs.elem_p2[*leaf].iter().enumerate() {
                    for r in 0..d {
                        rhs_full[dofs.vel_dof(dof, r)] -=
                            0.5 * params.rho_plus * w * un * u_here[r] * vals[loc];
                    }
                }
            }
        }
    }

    // ---- surface contributions via vertex traces
    let mut pair_b = CooBuilder::new(n_full, n_surf * d);
    for k in 0..n_surf {
        let wk = geo.vertex_weights[k];
        let entry = &trace.entries[k];
        // lumped pairing M_{Gamma,Omega} and the volume-multiplier column
        let omega = geo.vertex_normals[k];
        for &(dof, val) in &entry.weights {
            for r in 0..d {
                let row = dofs.vel_dof(dof, r);
                pair_b.push(row, k * d + r, wk * val);
                c_full.push(row, layout.p_sing(), -wk * val * omega[r]);
            }
        }
        // surface momentum mass rho_Gamma/tau <., .>^h and its history
        if params.rho_gamma != 0.0 {
            let coef = params.rho_gamma / params.tau;
            for &(da, va) in &entry.weights {
                for &(db, vb) in &entry.weights {
                    for r in 0..d {
                        b_full.push(dofs.vel_dof(da, r), dofs.vel_dof(db, r), coef * wk * va * vb);
                    }
                }
                if let Some(us) = u_surf_old {
                    for r in 0..d {
                        rhs_full[dofs.vel_dof(da, r)] += coef * wk * va * us[k][r];
                    }
                }
            }
        }
    }
    // surface viscous block and surface-pressure block, elementwise exact on
    // the interpolated traces
    for j in 0..surf.num_simplices() {
        let s = surf.simplex(j);
        let m = geo.measures[j];
        let nv = s.len();
        // D_s(chi_a e_r) per (local vertex, component)
        let mut ds: Vec<Mat3> = Vec::with_capacity(nv * d);
        for a in 0..nv {
            for r in 0..d {
                let mut e_r = la::ZERO_VEC;
                e_r[r] = 1.0;
                ds.push(geo.project_sym(la::outer(e_r, geo.grads[j][a]), j));
            }
        }
        if params.mu_gamma != 0.0 {
            for a in 0..nv {
                for r in 0..d {
                    for b in 0..nv {
                        for sc in 0..d {
                            let v = 2.0 * params.mu_gamma * m
                                * la::mat_ddot(ds[a * d + r], ds[b * d + sc]);
                            if v == 0.0 {
                                continue;
                            }
                            for &(da, va) in &trace.entries[s[a]].weights {
                                for &(db, vb) in &trace.entries[s[b]].weights {
                                    b_full.push(
                                        dofs.vel_dof(da, r),
                                        dofs.vel_dof(db, sc),
                                        v * va * vb,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        // -<chi_l, div_s(pi phi e_r)>: div of the interpolated field is
        // elementwise constant, the hat integral is m/d
        let wl = m / d as f64;
        for a in 0..nv {
            let ga = geo.grads[j][a];
            for &(da, va) in &trace.entries[s[a]].weights {
                for r in 0..d {
                    let div_part = va * ga[r];
                    for &l in s {
                        c_full.push(dofs.vel_dof(da, r), layout.surf(l), -wl * div_part);
                    }
                }
            }
        }
    }

    // ---- zero-mean pressure constraint as an extra multiplier row
    if layout.zero_mean {
        for (q, &w) in pressure_mean.iter().enumerate() {
            k_b.push(q, layout.mean(), w);
            k_b.push(layout.mean(), q, w);
        }
    }

    // ---- Dirichlet reduction
    let bc_full: Vec<f64> = {
        let mut v = vec![0.0; n_full];
        for s in 0..dofs.n_p2 {
            if dofs.dirichlet[s] {
                for r in 0..d {
                    v[dofs.vel_dof(s, r)] = dofs.bc_value[s][r];
                }
            }
        }
        v
    };
    let b_built = b_full.build();
    let c_built = c_full.build();
    let pair_full = pair_b.build();

    let mut b_red = CooBuilder::new(dofs.n_free, dofs.n_free);
    let mut rhs_u = vec![0.0; dofs.n_free];
    for row in 0..n_full {
        let Some(fr) = dofs.free_idx[row] else { continue };
        rhs_u[fr] = rhs_full[row];
        let (cols, vals) = b_built.row(row);
        for (c, v) in cols.iter().zip(vals) {
            match dofs.free_idx[*c as usize] {
                Some(fc) => b_red.push(fr, fc, *v),
                None => rhs_u[fr] -= v * bc_full[*c as usize],
            }
        }
    }
    let mut c_red = CooBuilder::new(dofs.n_free, n_mult);
    for row in 0..n_full {
        let (cols, vals) = c_built.row(row);
        match dofs.free_idx[row] {
            Some(fr) => {
                for (c, v) in cols.iter().zip(vals) {
                    c_red.push(fr, *c as usize, *v);
                }
            }
            None => {
                // constraint rows keep the Dirichlet data on the rhs
                let ub = bc_full[row];
                if ub != 0.0 {
                    for (c, v) in cols.iter().zip(vals) {
                        rhs_q[*c as usize] -= v * ub;
                    }
                }
            }
        }
    }
    let mut pair_red = CooBuilder::new(dofs.n_free, n_surf * d);
    let mut pair_bc = vec![0.0; n_surf * d];
    for row in 0..n_full {
        let (cols, vals) = pair_full.row(row);
        match dofs.free_idx[row] {
            Some(fr) => {
                for (c, v) in cols.iter().zip(vals) {
                    pair_red.push(fr, *c as usize, *v);
                }
            }
            None => {
                let ub = bc_full[row];
                if ub != 0.0 {
                    for (c, v) in cols.iter().zip(vals) {
                        pair_bc[*c as usize] += v * ub;
                    }
                }
            }
        }
    }

    Ok(FlowSystem {
        n_u: dofs.n_free,
        layout,
        b_mat: b_red.build(),
        c_mat: c_red.build(),
        k_mat: k_b.build(),
        rhs_u,
        rhs_q,
        pair_full,
        pair_free: pair_red.build(),
        pair_bc,
        pressure_mean,
    })
}

/// Exact (quadrature-plan) variant of the velocity<->surface pairing, kept
/// for diagnostics; the scheme itself uses the lumped pairing.
pub fn pair_exact(
    dofs: &DofMap,
    surf: &SurfaceMesh,
    plan: &SurfaceQuadraturePlan,
) -> CsrMatrix {
    let d = dofs.dim;
    let mut b = CooBuilder::new(dofs.n_vel(), surf.num_vertices() * d);
    for (j, per) in plan.points.iter().enumerate() {
        let s = surf.simplex(j);
        for &(sbary, w, leaf, bbary) in per {
            let mut vals = [0.0; 10];
            spaces::p2_values(d, &bbary, &mut vals);
            for (loc, &dof) in dofs.elem_p2[leaf].iter().enumerate() {
                for (a, &l) in s.iter().enumerate() {
                    for r in 0..d {
                        b.push(dofs.vel_dof(dof, r), l * d + r, w * vals[loc] * sbary[a]);
                    }
                }
            }
        }
    }
    b.build()
}
