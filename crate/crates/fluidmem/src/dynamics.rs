//! The full time step and everything stateful around it: initial data,
//! per-step diagnostics, and the finite-difference check of the discrete
//! energy gradient.

use crate::assembly::{
    self, assemble_ch_system, assemble_curvature_rhs, assemble_flow_system,
    assemble_surface_operators, ChInputs, CoefficientLaws, CurvatureData, CurvatureRhs,
    FlowParams, Potential, SurfaceOperators,
};
use crate::bulk::{phase_coefficients, BulkMesh, Label};
use crate::config::{CoefficientMode, ConcSpec, ScenarioConfig, SurfaceSpec, ViMethod, VelSpec};
use crate::la::{self, Mat3, Vec3};
use crate::quadrature::simplex_rule;
use crate::shapes;
use crate::solvers::{
    apply_theta_inverse, solve_ch_vi, solve_ch_uzawa, solve_coupled, CoupledOptions,
    SchurOperator, ThetaRhs, ViOptions,
};
use crate::spaces::{self, build_spaces, build_vertex_trace, BoundaryVelocity, DofMap, P2Field};
use crate::surface::{ScalarField, SurfaceGeometry, SurfaceMesh, TensorField, VectorField};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;

// ---------------------------------------------------------------------------
// state
// ---------------------------------------------------------------------------

pub struct FlowState {
    /// full-coefficient velocity (boundary values included)
    pub u: P2Field,
    pub pressure: Vec<f64>,
    pub p_sing: f64,
    pub p_gamma: Vec<f64>,
}

pub struct GeometryState {
    pub kappa: VectorField,
    pub w: TensorField,
    pub y: VectorField,
    pub f_gamma: VectorField,
}

pub struct PhaseState {
    pub conc: ScalarField,
    pub potential: ScalarField,
    /// lumped mean of the chemical potential
    pub lambda: f64,
}

pub struct SystemState {
    pub time: f64,
    pub step_index: usize,
    pub surf: SurfaceMesh,
    /// vertex positions of the previous surface (for the surface momentum
    /// history term)
    pub prev_vertices: Vec<Vec3>,
    pub bulk: BulkMesh,
    pub dofs: DofMap,
    /// classification of `bulk` against `surf` from the last assembly
    pub labels: Vec<Label>,
    pub flow: FlowState,
    pub geom: GeometryState,
    pub phase: PhaseState,
}

/// One diagnostics record per step (the CSV row plus invariant residuals).
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub time: f64,
    pub e_total: f64,
    pub e_kin: f64,
    pub e_kappa: f64,
    pub e_ch: f64,
    pub area: f64,
    pub volume: f64,
    pub total_conc: f64,
    pub min_conc: f64,
    pub max_conc: f64,
    pub incl_angle: f64,
    pub flow_iters: usize,
    pub vi_sweeps: usize,
    pub bulk_div_residual: f64,
    pub surf_div_residual: f64,
    pub u_omega_residual: f64,
    pub dx_omega_residual: f64,
    pub conc_conservation: f64,
    pub max_displacement: f64,
    pub mesh_quality: f64,
    pub vi_kkt: f64,
    pub fallback_used: bool,
    pub euler_estimate: Option<f64>,
}

pub fn laws_from_config(cfg: &ScenarioConfig) -> CoefficientLaws {
    match cfg.coefficient_mode {
        CoefficientMode::Linear => CoefficientLaws::new_linear(
            (cfg.alpha_minus, cfg.alpha_plus),
            (cfg.kappa_bar_minus, cfg.kappa_bar_plus),
            (cfg.alpha_g_minus, cfg.alpha_g_plus),
        ),
        CoefficientMode::C0Junction { delta } => CoefficientLaws::new_c0_junction(
            (cfg.alpha_minus, cfg.alpha_plus),
            (cfg.kappa_bar_minus, cfg.kappa_bar_plus),
            (cfg.alpha_g_minus, cfg.alpha_g_plus),
            delta,
        ),
    }
}

pub fn boundary_velocity(cfg: &ScenarioConfig) -> BoundaryVelocity {
    let spec = cfg.boundary_velocity;
    std::sync::Arc::new(move |p| spec.eval(p))
}

// ---------------------------------------------------------------------------
// discrete geometric fields
// ---------------------------------------------------------------------------

/// kappa = -M^-1 A X: the lumped discrete curvature vector of the surface.
pub fn compute_kappa(surf: &SurfaceMesh, geo: &SurfaceGeometry, ops: &SurfaceOperators) -> VectorField {
    let d = surf.dim;
    let x = assembly::flatten(d, &surf.vertices);
    let mut ax = vec![0.0; x.len()];
    ops.apply_a_vec(&x, &mut ax);
    let mut kappa = vec![la::ZERO_VEC; surf.num_vertices()];
    for k in 0..surf.num_vertices() {
        for c in 0..d {
            kappa[k][c] = -ax[k * d + c] / geo.vertex_weights[k];
        }
    }
    kappa
}

/// Weingarten-map proxy from the lumped symmetric constraint; fully local in
/// the vertex thanks to mass lumping.
pub fn compute_w(surf: &SurfaceMesh, geo: &SurfaceGeometry, kappa: &[Vec3]) -> TensorField {
    let d = surf.dim;
    let n = surf.num_vertices();
    let mut w = vec![la::ZERO_MAT; n];
    for k in 0..n {
        let omega = geo.vertex_normals[k];
        let kap = kappa[k];
        for r in 0..d {
            for s in 0..d {
                w[k][r][s] = -0.5 * (omega[r] * kap[s] + omega[s] * kap[r]);
            }
        }
    }
    // element sums of |sigma| [nu_r (grad chi_k)_s + nu_s (grad chi_k)_r]
    for j in 0..surf.num_simplices() {
        let m = geo.measures[j];
        let nu = geo.normals[j];
        for (a, &k) in surf.simplex(j).iter().enumerate() {
            let g = geo.grads[j][a];
            let f = -0.5 * m / geo.vertex_weights[k];
            for r in 0..d {
                for s in 0..d {
                    w[k][r][s] += f * (nu[r] * g[s] + nu[s] * g[r]);
                }
            }
        }
    }
    w
}

/// The bending multiplier y = alpha (kappa - kbar omega) + alpha_g (kappa +
/// W omega) resolved at the vertices (the lumped multiplier row).
pub fn compute_y(
    geo: &SurfaceGeometry,
    laws: &CoefficientLaws,
    conc: &[f64],
    kappa: &[Vec3],
    w: &[Mat3],
) -> VectorField {
    let n = conc.len();
    let mut y = vec![la::ZERO_VEC; n];
    for k in 0..n {
        let omega = geo.vertex_normals[k];
        let a = (laws.alpha)(conc[k]);
        let kb = (laws.kappa_bar)(conc[k]);
        let ag = (laws.alpha_g)(conc[k]);
        let w_omega = la::mat_vec(w[k], omega);
        for c in 0..3 {
            y[k][c] = a * (kappa[k][c] - kb * omega[c]) + ag * (kappa[k][c] + w_omega[c]);
        }
    }
    y
}

pub fn compute_z(laws: &CoefficientLaws, conc: &[f64], w: &[Mat3]) -> TensorField {
    conc.iter()
        .zip(w)
        .map(|(&c, wk)| la::mat_scale(-(laws.alpha_g)(c), *wk))
        .collect()
}

/// Initial geometric fields (curvature, Weingarten proxy, multiplier).
pub fn init_geometry_fields(
    surf: &SurfaceMesh,
    conc: &[f64],
    laws: &CoefficientLaws,
) -> Result<(VectorField, TensorField, VectorField)> {
    let geo = SurfaceGeometry::build(surf)?;
    let alpha: Vec<f64> = conc.iter().map(|&c| (laws.alpha)(c)).collect();
    let ops = assemble_surface_operators(surf, &geo, &alpha)?;
    let kappa = compute_kappa(surf, &geo, &ops);
    let w = compute_w(surf, &geo, &kappa);
    let y = compute_y(&geo, laws, conc, &kappa, &w);
    Ok((kappa, w, y))
}

// ---------------------------------------------------------------------------
// energies
// ---------------------------------------------------------------------------

pub struct EnergyParts {
    pub kinetic: f64,
    pub curvature: f64,
    pub cahn_hilliard: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.curvature + self.cahn_hilliard
    }
}

/// Curvature and line energies on one surface configuration (the kinetic
/// part is added by the caller when flow data is around).
pub fn surface_energy(
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
    conc: &[f64],
    kappa: &[Vec3],
    w: &[Mat3],
    laws: &CoefficientLaws,
    beta: f64,
    gamma: f64,
    potential: Potential,
) -> (f64, f64) {
    let d = surf.dim as f64;
    let mut e_kappa = 0.0;
    let mut e_ch = 0.0;
    for j in 0..surf.num_simplices() {
        let wgt = geo.measures[j] / d;
        let nu = geo.normals[j];
        let grad_c = geo.gradient_scalar(surf, conc, j);
        let grad2 = la::dot(grad_c, grad_c);
        for &k in surf.simplex(j) {
            let c = conc[k];
            let alpha = (laws.alpha)(c);
            let kb = (laws.kappa_bar)(c);
            let ag = (laws.alpha_g)(c);
            let dev = la::axpy(-kb, nu, kappa[k]);
            e_kappa += wgt
                * (0.5 * alpha * la::dot(dev, dev)
                    + 0.5 * ag * (la::dot(kappa[k], kappa[k]) - la::mat_frob2(w[k])));
            e_ch += wgt * beta * (0.5 * gamma * grad2 + potential.psi(c) / gamma);
        }
    }
    (e_kappa, e_ch)
}

fn kinetic_energy(
    mesh: &BulkMesh,
    dofs: &DofMap,
    rho_m: &[f64],
    u: &P2Field,
    rho_gamma: f64,
    u_surf: Option<&[Vec3]>,
    geo: &SurfaceGeometry,
) -> f64 {
    let mut e = 0.0;
    let d = mesh.dim;
    if rho_m.iter().any(|&r| r != 0.0) {
        let rule = simplex_rule(d, 4);
        let mut vals = [0.0; 10];
        for leaf in 0..mesh.num_leaves() {
            if rho_m[leaf] == 0.0 {
                continue;
            }
            let geom = spaces::elem_geometry(mesh, leaf);
            let scale = geom.volume * if d == 2 { 2.0 } else { 6.0 };
            for node in &rule {
                spaces::p2_values(d, &node.bary, &mut vals);
                let mut uv = la::ZERO_VEC;
                for (loc, &dof) in dofs.elem_p2[leaf].iter().enumerate() {
                    uv = la::axpy(vals[loc], u.coeffs[dof], uv);
                }
                e += 0.5 * rho_m[leaf] * node.weight * scale * la::dot(uv, uv);
            }
        }
    }
    if rho_gamma != 0.0 {
        if let Some(us) = u_surf {
            for (k, v) in us.iter().enumerate() {
                e += 0.5 * rho_gamma * geo.vertex_weights[k] * la::dot(*v, *v);
            }
        }
    }
    e
}

/// Principal-axis angle (d=2) of the vertex second-moment matrix.
pub fn inclination_angle(surf: &SurfaceMesh) -> f64 {
    if surf.dim != 2 {
        return f64::NAN;
    }
    let n = surf.num_vertices() as f64;
    let mut c = la::ZERO_VEC;
    for q in &surf.vertices {
        c = la::add(c, *q);
    }
    c = la::scale(1.0 / n, c);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for q in &surf.vertices {
        let dx = q[0] - c[0];
        let dy = q[1] - c[1];
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    0.5 * (2.0 * xy).atan2(xx - yy)
}

/// Continuation of a principal-axis angle (defined modulo pi) nearest to
/// the previous unwrapped value.
pub fn unwrap_angle(prev: f64, raw: f64) -> f64 {
    let mut a = raw;
    let pi = std::f64::consts::PI;
    while a - prev > pi / 2.0 {
        a -= pi;
    }
    while a - prev < -pi / 2.0 {
        a += pi;
    }
    a
}

// ---------------------------------------------------------------------------
// scenario initialization
// ---------------------------------------------------------------------------

pub fn build_surface(cfg: &ScenarioConfig) -> SurfaceMesh {
    match &cfg.surface {
        SurfaceSpec::Circle { radius } => shapes::circle(*radius, cfg.surface_elements),
        SurfaceSpec::Ellipse { a, b } => shapes::ellipse(*a, *b, cfg.surface_elements),
        SurfaceSpec::LetterC { length } => shapes::letter_c(*length, cfg.surface_elements),
        SurfaceSpec::Icosphere { radius, subdivisions } => shapes::icosphere(*radius, *subdivisions),
        SurfaceSpec::CubeSphere { radius, levels } => shapes::cube_sphere(*radius, *levels),
        SurfaceSpec::Plate { levels, area } => shapes::plate(*levels, *area),
        SurfaceSpec::ArmedStar { arms, amplitude, n_lon, rings, area } => {
            shapes::armed_star(*arms, *amplitude, *n_lon, *rings, *area)
        }
    }
}

/// Initial concentration per the scenario: constant, seeded noise rescaled
/// to the exact lumped mean, or two separated phases.
pub fn initial_concentration(
    cfg: &ScenarioConfig,
    surf: &SurfaceMesh,
    geo: &SurfaceGeometry,
) -> ScalarField {
    let n = surf.num_vertices();
    match cfg.initial_conc {
        ConcSpec::Constant(v) => vec![v; n],
        ConcSpec::RandomMean(mean) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wsum: f64 = geo.vertex_weights.iter().sum();
            let wmean: f64 = noise
                .iter()
                .zip(&geo.vertex_weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / wsum;
            let spread = noise
                .iter()
                .map(|v| (v - wmean).abs())
                .fold(0.0f64, f64::max)
                .max(1e-12);
            let b = 0.9 * (1.0 - mean.abs()) / spread;
            noise.iter().map(|v| mean + b * (v - wmean)).collect()
        }
        ConcSpec::Banded { mean, center } => {
            let plus_fraction = ((1.0 + mean) / 2.0).clamp(0.0, 1.0);
            let width_scale = 0.5 * cfg.gamma * std::f64::consts::PI;
            if surf.dim == 2 {
                // vertices are ordered along the curve
                let mut arclen = vec![0.0; n + 1];
                for k in 0..n {
                    let next = (k + 1) % n;
                    arclen[k + 1] = arclen[k]
                        + la::norm(la::sub(surf.vertices[next], surf.vertices[k]));
                }
                let total = arclen[n];
                let c0 = center * total;
                let half_band = 0.5 * plus_fraction * total;
                (0..n)
                    .map(|k| {
                        let mut dist = (arclen[k] - c0).abs();
                        dist = dist.min(total - dist);
                        ((half_band - dist) / width_scale).tanh()
                    })
                    .collect()
            } else {
                // +1 phase on the radially farthest part of the surface
                let mut radii: Vec<f64> = surf.vertices.iter().map(|q| la::norm(*q)).collect();
                let mut sorted: Vec<(f64, f64)> = radii
                    .iter()
                    .zip(&geo.vertex_weights)
                    .map(|(&r, &w)| (r, w))
                    .collect();
                sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                let wsum: f64 = geo.vertex_weights.iter().sum();
                let mut acc = 0.0;
                let mut threshold = sorted.last().unwrap().0;
                for (r, w) in &sorted {
                    acc += w;
                    if acc >= plus_fraction * wsum {
                        threshold = *r;
                        break;
                    }
                }
                radii
                    .drain(..)
                    .map(|r| ((r - threshold) / width_scale).tanh())
                    .collect()
            }
        }
    }
}

/// Builds the macro bulk mesh and refines it around the initial surface.
pub fn build_bulk(cfg: &ScenarioConfig, surf: &SurfaceMesh) -> Result<(BulkMesh, Vec<Label>)> {
    let mut bulk = BulkMesh::from_boxes(cfg.dim, &cfg.domain, cfg.macro_cell, cfg.boundary_tags())?;
    let class = bulk.adapt(surf, cfg.fine_level, cfg.coarse_level, &mut [])?;
    Ok((bulk, class.labels))
}

pub fn init_scenario(cfg: &ScenarioConfig) -> Result<SystemState> {
    let surf = build_surface(cfg);
    surf.validate()?;
    let geo = SurfaceGeometry::build(&surf)?;
    let conc = initial_concentration(cfg, &surf, &geo);
    let laws = laws_from_config(cfg);
    let (kappa, w, y) = init_geometry_fields(&surf, &conc, &laws)?;
    let (bulk, labels) = build_bulk(cfg, &surf)?;
    let g = boundary_velocity(cfg);
    let dofs = build_spaces(&bulk, &g)?;
    let mut u = P2Field::zero(&dofs);
    if cfg.initial_velocity != VelSpec::Zero {
        for s in 0..dofs.n_p2 {
            u.coeffs[s] = cfg.initial_velocity.eval(dofs.dof_point[s]);
        }
    }
    let n = surf.num_vertices();
    Ok(SystemState {
        time: 0.0,
        step_index: 0,
        prev_vertices: surf.vertices.clone(),
        surf,
        bulk,
        dofs,
        labels,
        flow: FlowState { u, pressure: Vec::new(), p_sing: 0.0, p_gamma: Vec::new() },
        geom: GeometryState { kappa, w, y, f_gamma: vec![la::ZERO_VEC; n] },
        phase: PhaseState { conc, potential: vec![0.0; n], lambda: 0.0 },
    })
}

/// Diagnostics of the initial state (before any step).
pub fn initial_diagnostics(state: &SystemState, cfg: &ScenarioConfig) -> Result<StepDiagnostics> {
    let geo = SurfaceGeometry::build(&state.surf)?;
    let laws = laws_from_config(cfg);
    let (e_kappa, e_ch) = surface_energy(
        &state.surf,
        &geo,
        &state.phase.conc,
        &state.geom.kappa,
        &state.geom.w,
        &laws,
        cfg.beta,
        cfg.gamma,
        cfg.potential,
    );
    let rho_m = phase_coefficients(
        &crate::bulk::ElementClassification { labels: state.labels.clone() },
        cfg.rho_minus,
        cfg.rho_plus,
    );
    let locator = state.bulk.build_locator();
    let trace = build_vertex_trace(&state.bulk, &locator, &state.dofs, &state.surf)?;
    let u_surf = trace.interpolate(&state.flow.u);
    let e_kin = kinetic_energy(
        &state.bulk,
        &state.dofs,
        &rho_m,
        &state.flow.u,
        cfg.rho_gamma,
        Some(&u_surf),
        &geo,
    );
    let total_conc = geo.lumped(
        &state.surf,
        |j, a| state.phase.conc[state.surf.simplex(j)[a]],
        |_, _| 1.0,
    );
    let euler = if state.surf.dim == 3 {
        let diag =
            crate::surface::geometric_diagnostics(&state.surf, &geo, Some((&state.geom.kappa, &state.geom.w)));
        diag.euler_characteristic_estimate
    } else {
        None
    };
    Ok(StepDiagnostics {
        time: 0.0,
        e_total: e_kin + e_kappa + e_ch,
        e_kin,
        e_kappa,
        e_ch,
        area: geo.area(),
        volume: geo.enclosed_volume(&state.surf),
        total_conc,
        min_conc: state.phase.conc.iter().cloned().fold(f64::INFINITY, f64::min),
        max_conc: state.phase.conc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        incl_angle: inclination_angle(&state.surf),
        flow_iters: 0,
        vi_sweeps: 0,
        bulk_div_residual: 0.0,
        surf_div_residual: 0.0,
        u_omega_residual: 0.0,
        dx_omega_residual: 0.0,
        conc_conservation: 0.0,
        max_displacement: 0.0,
        mesh_quality: geo.quality(),
        vi_kkt: 0.0,
        fallback_used: false,
        euler_estimate: euler,
    })
}

// ---------------------------------------------------------------------------
// the time step
// ---------------------------------------------------------------------------

pub fn step(state: &mut SystemState, cfg: &ScenarioConfig) -> Result<StepDiagnostics> {
    let d = state.surf.dim;
    let n_surf = state.surf.num_vertices();
    let laws = laws_from_config(cfg);
    let needs_velocity_history =
        cfg.rho_minus != 0.0 || cfg.rho_plus != 0.0 || cfg.rho_gamma != 0.0;

    // ---- 1. bulk adaptation, carrying the previous-step density exactly
    let rho_old_src = phase_coefficients(
        &crate::bulk::ElementClassification { labels: state.labels.clone() },
        cfg.rho_minus,
        cfg.rho_plus,
    );
    let old_bulk = if needs_velocity_history { Some(state.bulk.clone()) } else { None };
    let old_dofs_u = if needs_velocity_history {
        Some(std::mem::replace(&mut state.flow.u, P2Field { coeffs: Vec::new() }))
    } else {
        None
    };
    let old_elem_count = state.bulk.num_leaves();
    let mut carried = [rho_old_src];
    let class = state
        .bulk
        .adapt(&state.surf, cfg.fine_level, cfg.coarse_level, &mut carried)?;
    let [rho_old] = carried;
    debug_assert!(rho_old.len() == state.bulk.num_leaves());
    let _ = old_elem_count;
    let labels = class.labels;

    // ---- 2. spaces and transfers on the adapted mesh
    let g = boundary_velocity(cfg);
    let dofs = build_spaces(&state.bulk, &g)?;
    let u_old = if let (Some(ob), Some(of)) = (&old_bulk, &old_dofs_u) {
        let old_locator = ob.build_locator();
        let old_dofmap = &state.dofs;
        let mut f = P2Field::zero(&dofs);
        for s in 0..dofs.n_p2 {
            let (leaf, bary) = ob.locate_point(&old_locator, dofs.dof_point[s])?;
            let mut vals = [0.0; 10];
            spaces::p2_values(d, &bary, &mut vals);
            let mut v = la::ZERO_VEC;
            for (loc, &dof) in old_dofmap.elem_p2[leaf].iter().enumerate() {
                v = la::axpy(vals[loc], of.coeffs[dof], v);
            }
            f.coeffs[s] = v;
        }
        f
    } else {
        P2Field::zero(&dofs)
    };

    // ---- 3. surface data on the current interface
    let geo = SurfaceGeometry::build(&state.surf)?;
    let locator = state.bulk.build_locator();
    let trace = build_vertex_trace(&state.bulk, &locator, &dofs, &state.surf)?;
    let conc = &state.phase.conc;
    let alpha_m: Vec<f64> = conc.iter().map(|&c| (laws.alpha)(c)).collect();
    let kappa_bar_m: Vec<f64> = conc.iter().map(|&c| (laws.kappa_bar)(c)).collect();
    let alpha_g_m: Vec<f64> = conc.iter().map(|&c| (laws.alpha_g)(c)).collect();
    let ops = assemble_surface_operators(&state.surf, &geo, &alpha_m)?;
    let z_m = compute_z(&laws, conc, &state.geom.w);

    // transported velocity history at the previous vertex positions
    let u_surf_old: Option<Vec<Vec3>> = if cfg.rho_gamma != 0.0 {
        let mut vals = Vec::with_capacity(n_surf);
        for q in &state.prev_vertices {
            let (leaf, bary) = state.bulk.locate_point(&locator, *q)?;
            vals.push(u_old.eval(&dofs, leaf, &bary));
        }
        Some(vals)
    } else {
        None
    };

    // ---- 4. assembly
    let rho_m = phase_coefficients(
        &crate::bulk::ElementClassification { labels: labels.clone() },
        cfg.rho_minus,
        cfg.rho_plus,
    );
    let mu_m = phase_coefficients(
        &crate::bulk::ElementClassification { labels: labels.clone() },
        cfg.mu_minus,
        cfg.mu_plus,
    );
    let params = FlowParams {
        tau: cfg.tau,
        rho_gamma: cfg.rho_gamma,
        mu_gamma: cfg.mu_gamma,
        rho_plus: cfg.rho_plus,
    };
    let bf = cfg.body_force;
    let body_force = if bf != [0.0; 3] {
        Some(move |_p: Vec3| bf)
    } else {
        None
    };
    let mut flow = assemble_flow_system(
        &state.bulk,
        &dofs,
        &labels,
        &rho_m,
        &mu_m,
        &rho_old,
        &u_old,
        &state.surf,
        &geo,
        &trace,
        &params,
        body_force
            .as_ref()
            .map(|f| f as &dyn Fn(Vec3) -> Vec3),
        u_surf_old.as_deref(),
    )?;
    let curv = assemble_curvature_rhs(
        &state.surf,
        &geo,
        &CurvatureData {
            alpha: &alpha_m,
            kappa_bar: &kappa_bar_m,
            alpha_g: &alpha_g_m,
            kappa_old: &state.geom.kappa,
            y_old: &state.geom.y,
            w_old: &state.geom.w,
            z: &z_m,
            conc,
            beta: cfg.beta,
            gamma: cfg.gamma,
            potential: cfg.potential,
        },
    );
    let schur = SchurOperator::build(&flow, &ops, cfg.tau);

    // ---- 5. Schur right-hand side: eliminate the curvature block
    let x_flat = assembly::flatten(d, &state.surf.vertices);
    let mut ax = vec![0.0; n_surf * d];
    ops.apply_a_vec(&x_flat, &mut ax);
    let y_flat = assembly::flatten(d, &state.geom.y);
    let zy = ops.z_gamma.matvec(&y_flat);
    let r2: Vec<f64> = ax.iter().map(|v| -v).collect();
    let r4: Vec<f64> = (0..n_surf * d)
        .map(|i| zy[i] - curv.d[i] - curv.d_z[i])
        .collect();
    let r1_bc: Vec<f64> = flow.pair_bc.iter().map(|v| -v).collect();
    let theta_rhs_known = ThetaRhs { r1: r1_bc, r2, r3: curv.c.clone(), r4 };
    let known = apply_theta_inverse(&ops, cfg.tau, &theta_rhs_known);
    flow.pair_free.add_matvec(&known.f_gamma, 1.0, &mut flow.rhs_u);

    // ---- 6. coupled solve
    let opts = CoupledOptions {
        tol: cfg.flow_tol,
        restart: cfg.gmres_restart,
        max_iters: cfg.flow_max_iters,
    };
    let sol = solve_coupled(&flow, &schur, &flow.rhs_u, &flow.rhs_q, &opts)?;

    // assemble the full velocity coefficients
    let mut u_new = P2Field::zero(&dofs);
    for s in 0..dofs.n_p2 {
        for c in 0..d {
            u_new.coeffs[s][c] = match dofs.free_idx[dofs.vel_dof(s, c)] {
                Some(f) => sol.u_free[f],
                None => dofs.bc_value[s][c],
            };
        }
    }
    let layout = &flow.layout;
    let pressure = sol.multipliers[..layout.n_p].to_vec();
    let p_sing = sol.multipliers[layout.p_sing()];
    let p_gamma = sol.multipliers[layout.p_sing() + 1..layout.p_sing() + 1 + n_surf].to_vec();

    // ---- 7. recover the curvature block
    let mut r1_full = flow.pair_bc.clone();
    flow.pair_free.add_transpose_matvec(&sol.u_free, 1.0, &mut r1_full);
    for v in r1_full.iter_mut() {
        *v = -*v;
    }
    let theta_rhs = ThetaRhs { r1: r1_full, ..theta_rhs_known };
    let rec = apply_theta_inverse(&ops, cfg.tau, &theta_rhs);
    let kappa_new = assembly::unflatten(d, &rec.kappa);
    let delta_x = assembly::unflatten(d, &rec.delta_x);
    let y_new = assembly::unflatten(d, &rec.y);
    let f_new = assembly::unflatten(d, &rec.f_gamma);

    // ---- 8. Weingarten update and surface motion
    let w_new = compute_w(&state.surf, &geo, &kappa_new);
    let weights_old = geo.vertex_weights.clone();
    let total_conc_old = geo.lumped(&state.surf, |j, a| conc[state.surf.simplex(j)[a]], |_, _| 1.0);
    let dx_omega: f64 = (0..n_surf)
        .map(|k| weights_old[k] * la::dot(delta_x[k], geo.vertex_normals[k]))
        .sum();
    let max_displacement = delta_x.iter().map(|v| la::norm(*v)).fold(0.0, f64::max);
    let prev_vertices = state.surf.vertices.clone();
    let surf_new = state.surf.displaced(&delta_x);
    let geo_new = SurfaceGeometry::build(&surf_new).map_err(|e| {
        Error::MeshQuality(format!("surface update at t = {}: {e}", state.time + cfg.tau))
    })?;

    // ---- 9. phase field step on the updated surface
    let ch = assemble_ch_system(
        &surf_new,
        &geo_new,
        &ChInputs {
            laws: &laws,
            conc_old: conc,
            kappa_new: &kappa_new,
            w_new: &w_new,
            weights_old: &weights_old,
            theta: cfg.theta,
            tau: cfg.tau,
            beta: cfg.beta,
            gamma: cfg.gamma,
        },
    );
    let vi_opts = ViOptions {
        tol: cfg.vi_tol,
        max_sweeps: cfg.vi_max_sweeps,
        bounds: cfg.potential == Potential::Obstacle,
    };
    let vi = match cfg.vi_method {
        ViMethod::ProjectionGaussSeidel => solve_ch_vi(&ch, conc, &vi_opts)?,
        ViMethod::Uzawa => solve_ch_uzawa(&ch, conc, &vi_opts)?,
    };
    let lambda = {
        let wsum: f64 = ch.weights.iter().sum();
        vi.potential
            .iter()
            .zip(&ch.weights)
            .map(|(m, w)| m * w)
            .sum::<f64>()
            / wsum
    };

    // ---- 10. diagnostics
    let (e_kappa, e_ch) = surface_energy(
        &state.surf,
        &geo,
        conc,
        &kappa_new,
        &w_new,
        &laws,
        cfg.beta,
        cfg.gamma,
        cfg.potential,
    );
    let u_surf_new = trace.interpolate(&u_new);
    let e_kin = kinetic_energy(
        &state.bulk,
        &dofs,
        &rho_m,
        &u_new,
        cfg.rho_gamma,
        Some(&u_surf_new),
        &geo,
    );
    // constraint residuals of the multiplier rows
    let mut res_q = vec![0.0; layout.total()];
    flow.c_mat.add_transpose_matvec(&sol.u_free, 1.0, &mut res_q);
    flow.k_mat.add_matvec(&sol.multipliers, 1.0, &mut res_q);
    for (r, b) in res_q.iter_mut().zip(&flow.rhs_q) {
        *r -= b;
    }
    let bulk_div_residual = res_q[..layout.n_p]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let u_omega_residual = res_q[layout.p_sing()].abs();
    let surf_div_residual = res_q[layout.p_sing() + 1..layout.p_sing() + 1 + n_surf]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let total_conc_new = geo_new.lumped(&surf_new, |j, a| vi.conc[surf_new.simplex(j)[a]], |_, _| 1.0);
    let euler = if d == 3 {
        crate::surface::geometric_diagnostics(&surf_new, &geo_new, Some((&kappa_new, &w_new)))
            .euler_characteristic_estimate
    } else {
        None
    };
    let diag = StepDiagnostics {
        time: state.time + cfg.tau,
        e_total: e_kin + e_kappa + e_ch,
        e_kin,
        e_kappa,
        e_ch,
        area: geo_new.area(),
        volume: geo_new.enclosed_volume(&surf_new),
        total_conc: total_conc_new,
        min_conc: vi.conc.iter().cloned().fold(f64::INFINITY, f64::min),
        max_conc: vi.conc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        incl_angle: inclination_angle(&surf_new),
        flow_iters: sol.iterations,
        vi_sweeps: vi.sweeps,
        bulk_div_residual,
        surf_div_residual,
        u_omega_residual,
        dx_omega_residual: dx_omega.abs(),
        conc_conservation: (total_conc_new - total_conc_old).abs(),
        max_displacement,
        mesh_quality: geo_new.quality(),
        vi_kkt: vi.kkt_residual,
        fallback_used: sol.fallback_used,
        euler_estimate: euler,
    };

    // ---- 11. commit
    state.time += cfg.tau;
    state.step_index += 1;
    state.prev_vertices = prev_vertices;
    state.surf = surf_new;
    state.dofs = dofs;
    state.labels = labels;
    state.flow = FlowState { u: u_new, pressure, p_sing, p_gamma };
    state.geom = GeometryState { kappa: kappa_new, w: w_new, y: y_new, f_gamma: f_new };
    state.phase = PhaseState { conc: vi.conc, potential: vi.potential, lambda };
    Ok(diag)
}

// ---------------------------------------------------------------------------
// energy-gradient check
// ---------------------------------------------------------------------------

pub struct GradientCheckRow {
    pub eps: f64,
    pub fd_value: f64,
    pub rel_err: f64,
}

pub struct GradientCheckReport {
    pub analytic: f64,
    pub rows: Vec<GradientCheckRow>,
    pub observed_order: f64,
    pub best_rel_err: f64,
}

/// Energy of a surface with freshly computed curvature fields.
pub fn fresh_energy(
    surf: &SurfaceMesh,
    conc: &[f64],
    laws: &CoefficientLaws,
    beta: f64,
    gamma: f64,
    potential: Potential,
) -> Result<f64> {
    let geo = SurfaceGeometry::build(surf)?;
    let alpha: Vec<f64> = conc.iter().map(|&c| (laws.alpha)(c)).collect();
    let ops = assemble_surface_operators(surf, &geo, &alpha)?;
    let kappa = compute_kappa(surf, &geo, &ops);
    let w = compute_w(surf, &geo, &kappa);
    let (e_kappa, e_ch) = surface_energy(surf, &geo, conc, &kappa, &w, laws, beta, gamma, potential);
    Ok(e_kappa + e_ch)
}

/// The constrained energy gradient with all fields recomputed on the given
/// surface (no transported quantities).
pub fn fresh_force(
    surf: &SurfaceMesh,
    conc: &[f64],
    laws: &CoefficientLaws,
    beta: f64,
    gamma: f64,
    potential: Potential,
) -> Result<VectorField> {
    let d = surf.dim;
    let geo = SurfaceGeometry::build(surf)?;
    let alpha: Vec<f64> = conc.iter().map(|&c| (laws.alpha)(c)).collect();
    let kappa_bar: Vec<f64> = conc.iter().map(|&c| (laws.kappa_bar)(c)).collect();
    let alpha_g: Vec<f64> = conc.iter().map(|&c| (laws.alpha_g)(c)).collect();
    let ops = assemble_surface_operators(surf, &geo, &alpha)?;
    let kappa = compute_kappa(surf, &geo, &ops);
    let w = compute_w(surf, &geo, &kappa);
    let y = compute_y(&geo, laws, conc, &kappa, &w);
    let z = compute_z(laws, conc, &w);
    let CurvatureRhs { c: _, d: dvec, d_z } = assemble_curvature_rhs(
        surf,
        &geo,
        &CurvatureData {
            alpha: &alpha,
            kappa_bar: &kappa_bar,
            alpha_g: &alpha_g,
            kappa_old: &kappa,
            y_old: &y,
            w_old: &w,
            z: &z,
            conc,
            beta,
            gamma,
            potential,
        },
    );
    let y_flat = assembly::flatten(d, &y);
    let mut ay = vec![0.0; y_flat.len()];
    ops.apply_a_vec(&y_flat, &mut ay);
    let zy = ops.z_gamma.matvec(&y_flat);
    let mut f = vec![la::ZERO_VEC; surf.num_vertices()];
    for k in 0..surf.num_vertices() {
        for c in 0..d {
            let i = k * d + c;
            f[k][c] = (ay[i] + zy[i] - dvec[i] - d_z[i]) / geo.vertex_weights[k];
        }
    }
    Ok(f)
}

/// Central finite differences of the fresh energy against the assembled
/// gradient: d/de E(Gamma + e chi) should equal -<F, chi>^h.
pub fn gradient_check(
    surf: &SurfaceMesh,
    conc: &[f64],
    laws: &CoefficientLaws,
    beta: f64,
    gamma: f64,
    potential: Potential,
    chi: &[Vec3],
    eps_list: &[f64],
) -> Result<GradientCheckReport> {
    let geo = SurfaceGeometry::build(surf)?;
    let f = fresh_force(surf, conc, laws, beta, gamma, potential)?;
    let analytic: f64 = -(0..surf.num_vertices())
        .map(|k| geo.vertex_weights[k] * la::dot(f[k], chi[k]))
        .sum::<f64>();
    let mut rows = Vec::new();
    for &eps in eps_list {
        if eps < 1e-8 {
            return Err(Error::Config(
                "finite-difference step below 1e-8 loses all significant digits".into(),
            ));
        }
        let plus: Vec<Vec3> = chi.iter().map(|v| la::scale(eps, *v)).collect();
        let minus: Vec<Vec3> = chi.iter().map(|v| la::scale(-eps, *v)).collect();
        let e_plus = fresh_energy(&surf.displaced(&plus), conc, laws, beta, gamma, potential)?;
        let e_minus = fresh_energy(&surf.displaced(&minus), conc, laws, beta, gamma, potential)?;
        let fd = (e_plus - e_minus) / (2.0 * eps);
        let scale = analytic.abs().max(1e-14);
        rows.push(GradientCheckRow { eps, fd_value: fd, rel_err: (fd - analytic).abs() / scale });
    }
    // observed order from the error decay over the truncation-dominated range
    let mut best_rel_err = f64::INFINITY;
    for r in &rows {
        best_rel_err = best_rel_err.min(r.rel_err);
    }
    let usable: Vec<&GradientCheckRow> =
        rows.iter().filter(|r| r.rel_err > 1e-12).collect();
    let mut order = f64::NAN;
    if usable.len() >= 2 {
        // least-squares slope of log err vs log eps
        let n = usable.len() as f64;
        let sx: f64 = usable.iter().map(|r| r.eps.ln()).sum();
        let sy: f64 = usable.iter().map(|r| r.rel_err.ln()).sum();
        let sxx: f64 = usable.iter().map(|r| r.eps.ln().powi(2)).sum();
        let sxy: f64 = usable.iter().map(|r| r.eps.ln() * r.rel_err.ln()).sum();
        order = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    Ok(GradientCheckReport { analytic, rows, observed_order: order, best_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn ngon_curvature_is_negative_position() {
        // regular unit-circle n-gon: kappa_k = -q_k exactly
        for n in [16usize, 64] {
            let surf = shapes::circle(1.0, n);
            let geo = SurfaceGeometry::build(&surf).unwrap();
            let alpha = vec![1.0; n];
            let ops = assemble_surface_operators(&surf, &geo, &alpha).unwrap();
            let kappa = compute_kappa(&surf, &geo, &ops);
            for k in 0..n {
                let err = la::norm(la::add(kappa[k], surf.vertices[k]));
                assert!(err < 1e-12, "n {n} vertex {k}: {err}");
            }
        }
    }

    #[test]
    fn sphere_mean_curvature_refines_to_analytic() {
        // the vertex-averaged scalar curvature hits -2 on every refinement
        // of the unit icosphere; the weighted L2 deviation decreases
        let mut l2_errs = Vec::new();
        for sub in [1usize, 2, 3] {
            let surf = shapes::icosphere(1.0, sub);
            let geo = SurfaceGeometry::build(&surf).unwrap();
            let alpha = vec![1.0; surf.num_vertices()];
            let ops = assemble_surface_operators(&surf, &geo, &alpha).unwrap();
            let kappa = compute_kappa(&surf, &geo, &ops);
            let mut mean = 0.0;
            let mut l2 = 0.0;
            let mut wsum = 0.0;
            for k in 0..surf.num_vertices() {
                let scal = la::dot(kappa[k], la::normalize(surf.vertices[k]));
                mean += geo.vertex_weights[k] * scal;
                l2 += geo.vertex_weights[k] * (scal + 2.0).powi(2);
                wsum += geo.vertex_weights[k];
            }
            assert!((mean / wsum + 2.0).abs() < 1e-12);
            l2_errs.push((l2 / wsum).sqrt());
        }
        assert!(l2_errs[2] < 0.7 * l2_errs[1] && l2_errs[1] < 0.7 * l2_errs[0], "{l2_errs:?}");
    }

    #[test]
    fn gauss_bonnet_estimate_converges() {
        let mut errs = Vec::new();
        for sub in [1usize, 2, 3] {
            let surf = shapes::icosphere(1.0, sub);
            let geo = SurfaceGeometry::build(&surf).unwrap();
            let alpha = vec![1.0; surf.num_vertices()];
            let ops = assemble_surface_operators(&surf, &geo, &alpha).unwrap();
            let kappa = compute_kappa(&surf, &geo, &ops);
            let w = compute_w(&surf, &geo, &kappa);
            let diag = crate::surface::geometric_diagnostics(&surf, &geo, Some((&kappa, &w)));
            let est = diag.euler_characteristic_estimate.unwrap();
            errs.push((est - 2.0).abs());
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
        assert!(errs[2] < 0.05, "{errs:?}");
    }

    #[test]
    fn y_collapses_to_kappa_for_unit_rigidity() {
        let surf = shapes::circle(1.0, 32);
        let conc = vec![0.3; 32];
        let laws = CoefficientLaws::new_linear((1.0, 1.0), (0.0, 0.0), (0.0, 0.0));
        let (kappa, _w, y) = init_geometry_fields(&surf, &conc, &laws).unwrap();
        for k in 0..32 {
            assert!(la::norm(la::sub(y[k], kappa[k])) < 1e-13);
        }
    }

    #[test]
    fn translation_invariance_of_force() {
        let surf = shapes::circle(1.0, 24);
        let n = surf.num_vertices();
        let conc: Vec<f64> = (0..n).map(|k| 0.8 * ((k as f64) * 0.7).sin()).collect();
        let laws = CoefficientLaws::new_linear((0.5, 2.0), (-0.5, -2.0), (0.0, 0.0));
        let geo = SurfaceGeometry::build(&surf).unwrap();
        let f = fresh_force(&surf, &conc, &laws, 1.0, 0.2, Potential::Obstacle).unwrap();
        for dir in 0..2 {
            let mut deriv = 0.0;
            for k in 0..n {
                deriv -= geo.vertex_weights[k] * f[k][dir];
            }
            assert!(deriv.abs() < 1e-11, "direction {dir}: {deriv}");
        }
    }

    #[test]
    fn random_concentration_hits_exact_mean() {
        let mut cfg = preset("letter_c").unwrap();
        cfg.surface_elements = 64;
        cfg.seed = 99;
        let surf = build_surface(&cfg);
        let geo = SurfaceGeometry::build(&surf).unwrap();
        let conc = initial_concentration(&cfg, &surf, &geo);
        let wsum: f64 = geo.vertex_weights.iter().sum();
        let mean: f64 = conc
            .iter()
            .zip(&geo.vertex_weights)
            .map(|(c, w)| c * w)
            .sum::<f64>()
            / wsum;
        assert!((mean + 0.4).abs() < 1e-13);
        assert!(conc.iter().all(|c| c.abs() <= 1.0));
        // reproducible
        let conc2 = initial_concentration(&cfg, &surf, &geo);
        assert_eq!(conc, conc2);
    }
}
