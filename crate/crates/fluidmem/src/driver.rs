//! Run orchestration: the time loop with outputs and the manifest, plus the
//! built-in verification harness.

use crate::config::ScenarioConfig;
use crate::dynamics::{self, StepDiagnostics, SystemState};
use crate::io::{self, CsvWriter};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::PathBuf;

pub struct RunArtifacts {
    pub diagnostics: Vec<StepDiagnostics>,
    pub out_dir: PathBuf,
    pub termination: String,
}

fn write_manifest(cfg: &ScenarioConfig, dir: &PathBuf, termination: &str) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "name = {}", cfg.name).ok();
    writeln!(out, "version = {}", env!("CARGO_PKG_VERSION")).ok();
    writeln!(out, "seed = {}", cfg.seed).ok();
    writeln!(out, "threads = {}", cfg.threads).ok();
    writeln!(out, "dim = {}", cfg.dim).ok();
    writeln!(out, "tau = {:e}", cfg.tau).ok();
    writeln!(out, "t_final = {:e}", cfg.t_final).ok();
    writeln!(out, "gamma = {:e}", cfg.gamma).ok();
    writeln!(out, "beta = {:e}", cfg.beta).ok();
    writeln!(out, "diagnostics = diagnostics.csv").ok();
    writeln!(out, "snapshot_every = {}", cfg.snapshot_every).ok();
    writeln!(out, "termination = {termination}").ok();
    io::atomic_write(&dir.join("manifest.txt"), out.as_bytes())
}

fn snapshot(state: &SystemState, dir: &PathBuf, index: usize) -> Result<()> {
    io::write_vtk_snapshot(state, &dir.join(format!("snapshot_{index:06}.vtk")))?;
    io::write_surface_mesh(&state.surf, &dir.join(format!("surface_{index:06}.txt")))?;
    Ok(())
}

/// Runs the scenario to its final time, streaming diagnostics and writing
/// snapshots per schedule. A failing step still writes the failure snapshot.
pub fn run(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    let out_dir = PathBuf::from(&cfg.out_dir).join(&cfg.name);
    std::fs::create_dir_all(&out_dir)?;
    write_manifest(cfg, &out_dir, "running")?;
    let mut csv = CsvWriter::create(&out_dir.join("diagnostics.csv"))?;
    let mut state = dynamics::init_scenario(cfg)?;
    let init = dynamics::initial_diagnostics(&state, cfg)?;
    csv.write_row(&init)?;
    let mut diagnostics = vec![init];
    snapshot(&state, &out_dir, 0)?;
    let steps = (cfg.t_final / cfg.tau).round() as usize;
    let mut next_snapshot_time = cfg.snapshot_times.iter().cloned().fold(f64::INFINITY, f64::min);
    for m in 1..=steps {
        match dynamics::step(&mut state, cfg) {
            Ok(d) => {
                csv.write_row(&d)?;
                let snap_by_count = cfg.snapshot_every > 0 && m % cfg.snapshot_every == 0;
                let snap_by_time = state.time + 1e-12 >= next_snapshot_time;
                if snap_by_time {
                    next_snapshot_time = cfg
                        .snapshot_times
                        .iter()
                        .cloned()
                        .filter(|&t| t > state.time + 1e-12)
                        .fold(f64::INFINITY, f64::min);
                }
                if snap_by_count || snap_by_time || m == steps {
                    snapshot(&state, &out_dir, m)?;
                }
                diagnostics.push(d);
            }
            Err(e) => {
                snapshot(&state, &out_dir, m).ok();
                csv.flush().ok();
                write_manifest(cfg, &out_dir, &format!("failed at step {m}: {e}"))?;
                return Err(Error::Solver(format!("step {m} failed: {e}")));
            }
        }
    }
    csv.flush()?;
    write_manifest(cfg, &out_dir, "completed")?;
    Ok(RunArtifacts { diagnostics, out_dir, termination: "completed".into() })
}

// ---------------------------------------------------------------------------
// verification harness
// ---------------------------------------------------------------------------

pub struct VerifyItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant suite behind the `verify` subcommand: a cheap subset of
/// the acceptance criteria that runs in seconds.
pub fn verify() -> Vec<VerifyItem> {
    let mut items = Vec::new();
    let mut push = |name: &'static str, result: Result<String>| {
        match result {
            Ok(detail) => items.push(VerifyItem { name, passed: true, detail }),
            Err(e) => items.push(VerifyItem { name, passed: false, detail: e.to_string() }),
        }
    };

    push("lumping identity <z, w nu>^h = <z, w omega>^h", check_lumping_identity());
    push("curvature of the unit n-gon", check_ngon_curvature());
    push("curvature-block elimination roundtrip", check_theta_roundtrip());
    push("projection Gauss-Seidel KKT point", check_vi_small());
    push("stationary unit circle", check_stationary_circle());
    push("phase-mass conservation over a moving step", check_step_invariants());
    items
}

fn check_lumping_identity() -> Result<String> {
    use crate::la;
    use crate::surface::SurfaceGeometry;
    let mesh = crate::shapes::icosphere(1.0, 1);
    let geo = SurfaceGeometry::build(&mesh)?;
    let nv = mesh.num_vertices();
    let z: Vec<la::Vec3> = (0..nv)
        .map(|k| {
            let q = mesh.vertices[k];
            [q[1] - 0.2, 0.5 * q[0] * q[2], q[0] + 0.1 * q[1]]
        })
        .collect();
    let w: Vec<f64> = (0..nv).map(|k| 1.0 + 0.3 * mesh.vertices[k][2]).collect();
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
    let rel = (with_nu - with_omega).abs() / with_nu.abs().max(1e-30);
    if rel < 1e-12 {
        Ok(format!("relative deviation {rel:.2e}"))
    } else {
        Err(Error::Solver(format!("identity violated: {rel:.2e}")))
    }
}

fn check_ngon_curvature() -> Result<String> {
    use crate::la;
    let n = 64;
    let surf = crate::shapes::circle(1.0, n);
    let geo = crate::surface::SurfaceGeometry::build(&surf)?;
    let ops = crate::assembly::assemble_surface_operators(&surf, &geo, &vec![1.0; n])?;
    let kappa = dynamics_compute_kappa(&surf, &geo, &ops);
    let mut worst = 0.0f64;
    for k in 0..n {
        worst = worst.max(la::norm(la::add(kappa[k], surf.vertices[k])));
    }
    if worst < 1e-12 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(Error::Solver(format!("kappa != -q: {worst:.2e}")))
    }
}

fn dynamics_compute_kappa(
    surf: &crate::surface::SurfaceMesh,
    geo: &crate::surface::SurfaceGeometry,
    ops: &crate::assembly::SurfaceOperators,
) -> Vec<crate::la::Vec3> {
    dynamics::compute_kappa(surf, geo, ops)
}

fn check_theta_roundtrip() -> Result<String> {
    use rand::Rng;
    use rand::SeedableRng;
    let n = 24;
    let surf = crate::shapes::circle(1.0, n);
    let geo = crate::surface::SurfaceGeometry::build(&surf)?;
    let alpha: Vec<f64> = (0..n).map(|k| 1.0 + 0.2 * (k as f64 * 0.31).sin()).collect();
    let ops = crate::assembly::assemble_surface_operators(&surf, &geo, &alpha)?;
    let tau = 1e-3;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let m = n * 2;
    let sol = crate::solvers::ThetaSolution {
        kappa: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        delta_x: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        y: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        f_gamma: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    // apply Theta to the quadruple, invert, compare
    let mut a_dx = vec![0.0; m];
    ops.apply_a_vec(&sol.delta_x, &mut a_dx);
    let mut a_y = vec![0.0; m];
    ops.apply_a_vec(&sol.y, &mut a_y);
    let mut rhs = crate::solvers::ThetaRhs {
        r1: vec![0.0; m],
        r2: vec![0.0; m],
        r3: vec![0.0; m],
        r4: vec![0.0; m],
    };
    for k in 0..n {
        for c in 0..2 {
            let i = k * 2 + c;
            let w = ops.weights[k];
            rhs.r1[i] = -w / tau * sol.delta_x[i];
            rhs.r2[i] = w * sol.kappa[i] + a_dx[i];
            rhs.r3[i] = -ops.weights_alpha[k] * sol.kappa[i] + w * sol.y[i];
            rhs.r4[i] = -a_y[i] + w * sol.f_gamma[i];
        }
    }
    let back = crate::solvers::apply_theta_inverse(&ops, tau, &rhs);
    let mut worst = 0.0f64;
    for i in 0..m {
        worst = worst.max((back.kappa[i] - sol.kappa[i]).abs());
        worst = worst.max((back.delta_x[i] - sol.delta_x[i]).abs());
        worst = worst.max((back.y[i] - sol.y[i]).abs());
        worst = worst.max((back.f_gamma[i] - sol.f_gamma[i]).abs());
    }
    if worst < 1e-12 {
        Ok(format!("max roundtrip error {worst:.2e}"))
    } else {
        Err(Error::Solver(format!("roundtrip error {worst:.2e}")))
    }
}

fn check_vi_small() -> Result<String> {
    use rand::Rng;
    use rand::SeedableRng;
    let n = 12;
    let surf = crate::shapes::circle(1.0, n);
    let geo = crate::surface::SurfaceGeometry::build(&surf)?;
    let inputs = crate::assembly::ChInputs {
        laws: &crate::assembly::CoefficientLaws::new_linear((1.0, 1.0), (0.0, 0.0), (0.0, 0.0)),
        conc_old: &vec![0.0; n],
        kappa_new: &vec![crate::la::ZERO_VEC; n],
        w_new: &vec![crate::la::ZERO_MAT; n],
        weights_old: &geo.vertex_weights,
        theta: 1.0,
        tau: 1e-2,
        beta: 1.0,
        gamma: 0.3,
    };
    let mut sys = crate::assembly::assemble_ch_system(&surf, &geo, &inputs);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for v in sys.g.iter_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    let sol = crate::solvers::solve_ch_vi(&sys, &vec![0.0; n], &Default::default())?;
    let res = crate::solvers::vi_kkt_residual(&sys, &sol.conc, &sol.potential, true);
    if res < 1e-9 {
        Ok(format!("KKT residual {res:.2e} after {} sweeps", sol.sweeps))
    } else {
        Err(Error::Solver(format!("KKT residual {res:.2e}")))
    }
}

fn check_stationary_circle() -> Result<String> {
    let mut cfg = crate::config::preset("circle_stationary")?;
    cfg.surface_elements = 64;
    cfg.t_final = cfg.tau;
    let mut state = dynamics::init_scenario(&cfg)?;
    let d = dynamics::step(&mut state, &cfg)?;
    let mut umax = 0.0f64;
    for v in &state.flow.u.coeffs {
        umax = umax.max(v[0].abs()).max(v[1].abs());
    }
    if umax < 1e-7 && d.max_displacement <= cfg.tau * 1e-6 {
        Ok(format!("|U|_inf = {umax:.2e}, max displacement {:.2e}", d.max_displacement))
    } else {
        Err(Error::Solver(format!(
            "not stationary: |U|_inf = {umax:.2e}, displacement {:.2e}",
            d.max_displacement
        )))
    }
}

fn check_step_invariants() -> Result<String> {
    let mut cfg = crate::config::preset("letter_c")?;
    crate::config::reduce_resolution(&mut cfg, 4);
    cfg.t_final = 3.0 * cfg.tau;
    let mut state = dynamics::init_scenario(&cfg)?;
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let d = dynamics::step(&mut state, &cfg)?;
        worst = worst
            .max(d.conc_conservation)
            .max(d.dx_omega_residual)
            .max((d.max_conc - 1.0).max(0.0))
            .max((-1.0 - d.min_conc).max(0.0));
    }
    if worst < 1e-9 {
        Ok(format!("worst invariant residual {worst:.2e}"))
    } else {
        Err(Error::Solver(format!("invariant residual {worst:.2e}")))
    }
}
