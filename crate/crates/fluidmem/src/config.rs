//! Scenario configuration: plain-text `key = value` sections, defaults,
//! validation and the named presets.

use crate::assembly::Potential;
use crate::bulk::{BoundaryTags, BoxSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSpec {
    Circle { radius: f64 },
    Ellipse { a: f64, b: f64 },
    LetterC { length: f64 },
    Icosphere { radius: f64, subdivisions: usize },
    CubeSphere { radius: f64, levels: usize },
    Plate { levels: usize, area: f64 },
    ArmedStar { arms: usize, amplitude: f64, n_lon: usize, rings: usize, area: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcSpec {
    Constant(f64),
    /// i.i.d. uniform noise rescaled to the exact lumped mean
    RandomMean(f64),
    /// two separated phases; `center` is the arclength fraction (d=2) or
    /// polar direction (d=3) where the +1 band sits
    Banded { mean: f64, center: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelSpec {
    Zero,
    /// g(z) = (z_2, 0, 0)
    Shear,
    /// g(z) = ([1 - z_2^2 - z_3^2]_+, 0, 0)
    Poiseuille,
}

impl VelSpec {
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        match self {
            VelSpec::Zero => [0.0; 3],
            VelSpec::Shear => [p[1], 0.0, 0.0],
            VelSpec::Poiseuille => [(1.0 - p[1] * p[1] - p[2] * p[2]).max(0.0), 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientMode {
    Linear,
    /// degenerate rigidity (s^2 + delta) alpha_L(s)
    C0Junction { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViMethod {
    ProjectionGaussSeidel,
    Uzawa,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub dim: usize,
    // physics
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub rho_gamma: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub mu_gamma: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub kappa_bar_minus: f64,
    pub kappa_bar_plus: f64,
    pub alpha_g_minus: f64,
    pub alpha_g_plus: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub coefficient_mode: CoefficientMode,
    pub potential: Potential,
    // discretization
    pub tau: f64,
    pub t_final: f64,
    pub surface_elements: usize,
    pub macro_cell: f64,
    pub fine_level: u16,
    pub coarse_level: u16,
    pub quad_order: usize,
    // scenario
    pub domain: Vec<BoxSpec>,
    pub stress_free: Vec<(usize, bool)>,
    pub surface: SurfaceSpec,
    pub initial_conc: ConcSpec,
    pub boundary_velocity: VelSpec,
    pub initial_velocity: VelSpec,
    pub body_force: [f64; 3],
    // solver
    pub flow_tol: f64,
    pub vi_tol: f64,
    pub gmres_restart: usize,
    pub flow_max_iters: usize,
    pub vi_max_sweeps: usize,
    pub vi_method: ViMethod,
    // output
    pub out_dir: String,
    pub snapshot_every: usize,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            dim: 2,
            rho_minus: 0.0,
            rho_plus: 0.0,
            rho_gamma: 0.0,
            mu_minus: 1.0,
            mu_plus: 1.0,
            mu_gamma: 1.0,
            alpha_minus: 1.0,
            alpha_plus: 1.0,
            kappa_bar_minus: 0.0,
            kappa_bar_plus: 0.0,
            alpha_g_minus: 0.0,
            alpha_g_plus: 0.0,
            beta: 1.0,
            gamma: 0.05,
            theta: 1.0,
            coefficient_mode: CoefficientMode::Linear,
            potential: Potential::Obstacle,
            tau: 5e-4,
            t_final: 1.0,
            surface_elements: 257,
            macro_cell: 0.5,
            fine_level: 6,
            coarse_level: 2,
            quad_order: 4,
            domain: vec![BoxSpec { lo: [-1.0, -1.0, 0.0], hi: [1.0, 1.0, 0.0] }],
            stress_free: Vec::new(),
            surface: SurfaceSpec::Circle { radius: 0.5 },
            initial_conc: ConcSpec::Constant(0.0),
            boundary_velocity: VelSpec::Zero,
            initial_velocity: VelSpec::Zero,
            body_force: [0.0; 3],
            flow_tol: 1e-9,
            vi_tol: 1e-12,
            gmres_restart: 60,
            flow_max_iters: 6000,
            vi_max_sweeps: 400_000,
            vi_method: ViMethod::ProjectionGaussSeidel,
            out_dir: "out".into(),
            snapshot_every: 100,
            snapshot_times: Vec::new(),
            seed: 1234,
            threads: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn boundary_tags(&self) -> BoundaryTags {
        BoundaryTags { stress_free: self.stress_free.clone() }
    }

    /// Validates ranges and returns warnings (currently only the Gaussian
    /// rigidity lower-bound check).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.alpha_minus <= 0.0 || self.alpha_plus <= 0.0 {
            return Err(Error::Config("bending rigidities must be positive".into()));
        }
        if self.gamma <= 0.0 || self.theta <= 0.0 || self.tau <= 0.0 {
            return Err(Error::Config("gamma, theta and tau must be positive".into()));
        }
        if self.mu_minus <= 0.0 || self.mu_plus <= 0.0 {
            return Err(Error::Config("viscosities must be positive".into()));
        }
        if self.rho_minus < 0.0 || self.rho_plus < 0.0 || self.rho_gamma < 0.0 || self.mu_gamma < 0.0
        {
            return Err(Error::Config("densities and surface viscosity must be nonnegative".into()));
        }
        if self.dim == 2 && (self.alpha_g_minus != 0.0 || self.alpha_g_plus != 0.0) {
            return Err(Error::Config("Gaussian rigidity must vanish for d = 2".into()));
        }
        if let CoefficientMode::C0Junction { delta } = self.coefficient_mode {
            if delta <= 0.0 {
                return Err(Error::Config("junction regularization delta must be positive".into()));
            }
        }
        let mut warnings = Vec::new();
        let gap = 0.5 * (self.alpha_g_plus - self.alpha_g_minus).abs();
        if gap > 0.0 && self.alpha_minus.min(self.alpha_plus) < gap {
            warnings.push(format!(
                "Gaussian rigidity difference {:.3} exceeds twice the minimal bending rigidity {:.3}; \
                 the energy may be unbounded below",
                2.0 * gap,
                self.alpha_minus.min(self.alpha_plus)
            ));
        }
        Ok(warnings)
    }
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

fn parse_f64(v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected a number, got '{v}'")))
}

fn parse_usize(v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected an integer, got '{v}'")))
}

fn parse_face(v: &str) -> Result<(usize, bool)> {
    let v = v.trim();
    let (sign, axis) = match v.as_bytes() {
        [b'+', a] => (true, *a),
        [b'-', a] => (false, *a),
        _ => return Err(Error::Parse(format!("expected face like +x, got '{v}'"))),
    };
    let axis = match axis {
        b'x' => 0,
        b'y' => 1,
        b'z' => 2,
        _ => return Err(Error::Parse(format!("unknown axis in '{v}'"))),
    };
    Ok((axis, sign))
}

fn parse_vel(v: &str) -> Result<VelSpec> {
    match v.trim() {
        "zero" | "0" => Ok(VelSpec::Zero),
        "shear" => Ok(VelSpec::Shear),
        "poiseuille" => Ok(VelSpec::Poiseuille),
        other => Err(Error::Parse(format!("unknown velocity spec '{other}'"))),
    }
}

/// Parses `x0,x1,y0,y1[,z0,z1]` boxes separated by `;`.
fn parse_domain(v: &str, dim: usize) -> Result<Vec<BoxSpec>> {
    let mut out = Vec::new();
    for part in v.split(';') {
        let nums: Vec<f64> = part
            .split(',')
            .map(parse_f64)
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != 2 * dim {
            return Err(Error::Parse(format!(
                "domain box needs {} numbers, got {}",
                2 * dim,
                nums.len()
            )));
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..dim {
            lo[a] = nums[2 * a];
            hi[a] = nums[2 * a + 1];
        }
        out.push(BoxSpec { lo, hi });
    }
    Ok(out)
}

struct SurfaceKeys {
    kind: String,
    radius: f64,
    length: f64,
    a: f64,
    b: f64,
    subdivisions: usize,
    levels: usize,
    arms: usize,
    amplitude: f64,
    n_lon: usize,
    rings: usize,
    area: f64,
}

impl Default for SurfaceKeys {
    fn default() -> Self {
        Self {
            kind: "circle".into(),
            radius: 1.0,
            length: 2.823,
            a: 0.5,
            b: 1.25,
            subdivisions: 2,
            levels: 4,
            arms: 4,
            amplitude: 0.8,
            n_lon: 64,
            rings: 48,
            area: 35.7,
        }
    }
}

impl SurfaceKeys {
    fn build(&self) -> Result<SurfaceSpec> {
        Ok(match self.kind.as_str() {
            "circle" => SurfaceSpec::Circle { radius: self.radius },
            "ellipse" => SurfaceSpec::Ellipse { a: self.a, b: self.b },
            "letter_c" => SurfaceSpec::LetterC { length: self.length },
            "icosphere" => SurfaceSpec::Icosphere {
                radius: self.radius,
                subdivisions: self.subdivisions,
            },
            "cube_sphere" => SurfaceSpec::CubeSphere { radius: self.radius, levels: self.levels },
            "plate" => SurfaceSpec::Plate { levels: self.levels, area: self.area },
            "star" => SurfaceSpec::ArmedStar {
                arms: self.arms,
                amplitude: self.amplitude,
                n_lon: self.n_lon,
                rings: self.rings,
                area: self.area,
            },
            other => return Err(Error::Parse(format!("unknown surface '{other}'"))),
        })
    }
}

struct ConcKeys {
    kind: String,
    mean: f64,
    value: f64,
    band_center: f64,
}

impl Default for ConcKeys {
    fn default() -> Self {
        Self { kind: "constant".into(), mean: -0.4, value: 0.0, band_center: 0.25 }
    }
}

impl ConcKeys {
    fn build(&self) -> Result<ConcSpec> {
        Ok(match self.kind.as_str() {
            "constant" => ConcSpec::Constant(self.value),
            "random" => ConcSpec::RandomMean(self.mean),
            "banded" => ConcSpec::Banded { mean: self.mean, center: self.band_center },
            other => return Err(Error::Parse(format!("unknown concentration spec '{other}'"))),
        })
    }
}

/// Parses the structured-text configuration format.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    let mut surface = SurfaceKeys::default();
    let mut conc = ConcKeys::default();
    let mut section = String::new();
    let mut delta_c0: Option<f64> = None;
    let mut mode_c0 = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            match section.as_str() {
                "physics" | "discretization" | "scenario" | "output" | "solver" => {}
                other => return Err(Error::Parse(format!("unknown section [{other}]"))),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!("line {}: expected key = value", lineno + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        set_key(&mut cfg, &mut surface, &mut conc, &mut delta_c0, &mut mode_c0, &section, key, value)?;
    }
    cfg.surface = surface.build()?;
    cfg.initial_conc = conc.build()?;
    if mode_c0 {
        cfg.coefficient_mode = CoefficientMode::C0Junction { delta: delta_c0.unwrap_or(1e-3) };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies a single `key=value` override using the same keys as the file
/// format (section-qualified keys like `physics.beta` are also accepted).
pub fn apply_override(cfg: &mut ScenarioConfig, spec: &str) -> Result<()> {
    let Some((key, value)) = spec.split_once('=') else {
        return Err(Error::Parse(format!("override '{spec}' is not key=value")));
    };
    let key = key.trim();
    let (section, key) = match key.split_once('.') {
        Some((s, k)) => (s.to_string(), k.trim()),
        None => (String::new(), key),
    };
    let mut surface = SurfaceKeys::default();
    surface.kind = match &cfg.surface {
        SurfaceSpec::Circle { radius } => {
            surface.radius = *radius;
            "circle".into()
        }
        SurfaceSpec::Ellipse { a, b } => {
            surface.a = *a;
            surface.b = *b;
            "ellipse".into()
        }
        SurfaceSpec::LetterC { length } => {
            surface.length = *length;
            "letter_c".into()
        }
        SurfaceSpec::Icosphere { radius, subdivisions } => {
            surface.radius = *radius;
            surface.subdivisions = *subdivisions;
            "icosphere".into()
        }
        SurfaceSpec::CubeSphere { radius, levels } => {
            surface.radius = *radius;
            surface.levels = *levels;
            "cube_sphere".into()
        }
        SurfaceSpec::Plate { levels, area } => {
            surface.levels = *levels;
            surface.area = *area;
            "plate".into()
        }
        SurfaceSpec::ArmedStar { arms, amplitude, n_lon, rings, area } => {
            surface.arms = *arms;
            surface.amplitude = *amplitude;
            surface.n_lon = *n_lon;
            surface.rings = *rings;
            surface.area = *area;
            "star".into()
        }
    };
    let mut conc = ConcKeys::default();
    match cfg.initial_conc {
        ConcSpec::Constant(v) => {
            conc.kind = "constant".into();
            conc.value = v;
        }
        ConcSpec::RandomMean(m) => {
            conc.kind = "random".into();
            conc.mean = m;
        }
        ConcSpec::Banded { mean, center } => {
            conc.kind = "banded".into();
            conc.mean = mean;
            conc.band_center = center;
        }
    }
    let mut delta_c0 = match cfg.coefficient_mode {
        CoefficientMode::C0Junction { delta } => Some(delta),
        CoefficientMode::Linear => None,
    };
    let mut mode_c0 = matches!(cfg.coefficient_mode, CoefficientMode::C0Junction { .. });
    set_key(cfg, &mut surface, &mut conc, &mut delta_c0, &mut mode_c0, &section, key, value.trim())?;
    cfg.surface = surface.build()?;
    cfg.initial_conc = conc.build()?;
    cfg.coefficient_mode = if mode_c0 {
        CoefficientMode::C0Junction { delta: delta_c0.unwrap_or(1e-3) }
    } else {
        CoefficientMode::Linear
    };
    cfg.validate()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn set_key(
    cfg: &mut ScenarioConfig,
    surface: &mut SurfaceKeys,
    conc: &mut ConcKeys,
    delta_c0: &mut Option<f64>,
    mode_c0: &mut bool,
    section: &str,
    key: &str,
    value: &str,
) -> Result<()> {
    match (section, key) {
        (_, "name") => cfg.name = value.to_string(),
        (_, "dim") => cfg.dim = parse_usize(value)?,
        ("physics", "rho") | ("", "rho") => {
            cfg.rho_minus = parse_f64(value)?;
            cfg.rho_plus = cfg.rho_minus;
        }
        ("physics", "rho_minus") | ("", "rho_minus") => cfg.rho_minus = parse_f64(value)?,
        ("physics", "rho_plus") | ("", "rho_plus") => cfg.rho_plus = parse_f64(value)?,
        ("physics", "rho_gamma") | ("", "rho_gamma") => cfg.rho_gamma = parse_f64(value)?,
        ("physics", "mu") | ("", "mu") => {
            cfg.mu_minus = parse_f64(value)?;
            cfg.mu_plus = cfg.mu_minus;
        }
        ("physics", "mu_minus") | ("", "mu_minus") => cfg.mu_minus = parse_f64(value)?,
        ("physics", "mu_plus") | ("", "mu_plus") => cfg.mu_plus = parse_f64(value)?,
        ("physics", "mu_gamma") | ("", "mu_gamma") => cfg.mu_gamma = parse_f64(value)?,
        ("physics", "alpha") | ("", "alpha") => {
            cfg.alpha_minus = parse_f64(value)?;
            cfg.alpha_plus = cfg.alpha_minus;
        }
        ("physics", "alpha_minus") | ("", "alpha_minus") => cfg.alpha_minus = parse_f64(value)?,
        ("physics", "alpha_plus") | ("", "alpha_plus") => cfg.alpha_plus = parse_f64(value)?,
        ("physics", "kappa_bar") | ("", "kappa_bar") => {
            cfg.kappa_bar_minus = parse_f64(value)?;
            cfg.kappa_bar_plus = cfg.kappa_bar_minus;
        }
        ("physics", "kappa_bar_minus") | ("", "kappa_bar_minus") => {
            cfg.kappa_bar_minus = parse_f64(value)?
        }
        ("physics", "kappa_bar_plus") | ("", "kappa_bar_plus") => {
            cfg.kappa_bar_plus = parse_f64(value)?
        }
        ("physics", "alpha_g_minus") | ("", "alpha_g_minus") => {
            cfg.alpha_g_minus = parse_f64(value)?
        }
        ("physics", "alpha_g_plus") | ("", "alpha_g_plus") => cfg.alpha_g_plus = parse_f64(value)?,
        ("physics", "beta") | ("", "beta") => cfg.beta = parse_f64(value)?,
        ("physics", "gamma") | ("", "gamma") => cfg.gamma = parse_f64(value)?,
        ("physics", "theta") | ("", "theta") => cfg.theta = parse_f64(value)?,
        ("physics", "potential") | ("", "potential") => {
            cfg.potential = match value {
                "obstacle" => Potential::Obstacle,
                "quartic" => Potential::Quartic,
                other => return Err(Error::Parse(format!("unknown potential '{other}'"))),
            }
        }
        ("physics", "coefficients") | ("", "coefficients") => match value {
            "linear" => *mode_c0 = false,
            "c0_junction" => *mode_c0 = true,
            other => return Err(Error::Parse(format!("unknown coefficient mode '{other}'"))),
        },
        ("physics", "delta") | ("", "delta") => *delta_c0 = Some(parse_f64(value)?),
        ("discretization", "tau") | ("", "tau") => cfg.tau = parse_f64(value)?,
        ("discretization", "t_final") | ("", "t_final") => cfg.t_final = parse_f64(value)?,
        ("discretization", "elements") | ("", "elements") => {
            cfg.surface_elements = parse_usize(value)?
        }
        ("discretization", "macro_cell") | ("", "macro_cell") => cfg.macro_cell = parse_f64(value)?,
        ("discretization", "fine_level") | ("", "fine_level") => {
            cfg.fine_level = parse_usize(value)? as u16
        }
        ("discretization", "coarse_level") | ("", "coarse_level") => {
            cfg.coarse_level = parse_usize(value)? as u16
        }
        ("discretization", "quad_order") | ("", "quad_order") => {
            cfg.quad_order = parse_usize(value)?
        }
        ("scenario", "surface") | ("", "surface") => surface.kind = value.to_string(),
        ("scenario", "radius") | ("", "radius") => surface.radius = parse_f64(value)?,
        ("scenario", "length") | ("", "length") => surface.length = parse_f64(value)?,
        ("scenario", "semi_axis_a") | ("", "semi_axis_a") => surface.a = parse_f64(value)?,
        ("scenario", "semi_axis_b") | ("", "semi_axis_b") => surface.b = parse_f64(value)?,
        ("scenario", "subdivisions") | ("", "subdivisions") => {
            surface.subdivisions = parse_usize(value)?
        }
        ("scenario", "levels") | ("", "levels") => surface.levels = parse_usize(value)?,
        ("scenario", "arms") | ("", "arms") => surface.arms = parse_usize(value)?,
        ("scenario", "amplitude") | ("", "amplitude") => surface.amplitude = parse_f64(value)?,
        ("scenario", "n_lon") | ("", "n_lon") => surface.n_lon = parse_usize(value)?,
        ("scenario", "rings") | ("", "rings") => surface.rings = parse_usize(value)?,
        ("scenario", "area") | ("", "area") => surface.area = parse_f64(value)?,
        ("scenario", "conc") | ("", "conc") => conc.kind = value.to_string(),
        ("scenario", "conc_mean") | ("", "conc_mean") => conc.mean = parse_f64(value)?,
        ("scenario", "conc_value") | ("", "conc_value") => conc.value = parse_f64(value)?,
        ("scenario", "band_center") | ("", "band_center") => conc.band_center = parse_f64(value)?,
        ("scenario", "domain") | ("", "domain") => cfg.domain = parse_domain(value, cfg.dim)?,
        ("scenario", "stress_free") | ("", "stress_free") => {
            cfg.stress_free = value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(parse_face)
                .collect::<Result<Vec<_>>>()?;
        }
        ("scenario", "g") | ("", "g") => cfg.boundary_velocity = parse_vel(value)?,
        ("scenario", "u0") | ("", "u0") => cfg.initial_velocity = parse_vel(value)?,
        ("scenario", "f") | ("", "f") => {
            let nums: Vec<f64> = value
                .split(',')
                .map(parse_f64)
                .collect::<Result<Vec<_>>>()?;
            if nums.len() > 3 {
                return Err(Error::Parse("body force takes at most 3 components".into()));
            }
            cfg.body_force = [0.0; 3];
            cfg.body_force[..nums.len()].copy_from_slice(&nums);
        }
        ("solver", "flow_tol") | ("", "flow_tol") => cfg.flow_tol = parse_f64(value)?,
        ("solver", "vi_tol") | ("", "vi_tol") => cfg.vi_tol = parse_f64(value)?,
        ("solver", "gmres_restart") | ("", "gmres_restart") => {
            cfg.gmres_restart = parse_usize(value)?
        }
        ("solver", "flow_max_iters") | ("", "flow_max_iters") => {
            cfg.flow_max_iters = parse_usize(value)?
        }
        ("solver", "vi_max_sweeps") | ("", "vi_max_sweeps") => {
            cfg.vi_max_sweeps = parse_usize(value)?
        }
        ("solver", "vi_method") | ("", "vi_method") => {
            cfg.vi_method = match value {
                "pgs" | "projection_gauss_seidel" => ViMethod::ProjectionGaussSeidel,
                "uzawa" => ViMethod::Uzawa,
                other => return Err(Error::Parse(format!("unknown vi method '{other}'"))),
            }
        }
        ("output", "dir") | ("", "dir") => cfg.out_dir = value.to_string(),
        ("output", "snapshot_every") | ("", "snapshot_every") => {
            cfg.snapshot_every = parse_usize(value)?
        }
        ("output", "snapshot_times") | ("", "snapshot_times") => {
            cfg.snapshot_times = value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(parse_f64)
                .collect::<Result<Vec<_>>>()?;
        }
        ("output", "seed") | ("", "seed") => {
            cfg.seed = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad seed '{value}'")))?
        }
        ("output", "threads") | ("", "threads") => cfg.threads = parse_usize(value)?,
        (s, k) => {
            return Err(Error::Parse(format!(
                "unknown key '{k}'{}",
                if s.is_empty() { String::new() } else { format!(" in section [{s}]") }
            )))
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// Named parameter sets for the standard experiments. `resolution` divides
/// the surface element count and refinement depth (1 = full scale).
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    cfg.name = name.to_string();
    match name {
        "circle_stationary" => {
            cfg.dim = 2;
            cfg.surface = SurfaceSpec::Circle { radius: 1.0 };
            cfg.surface_elements = 64;
            cfg.domain = vec![BoxSpec { lo: [-2.0, -2.0, 0.0], hi: [2.0, 2.0, 0.0] }];
            cfg.macro_cell = 0.5;
            cfg.fine_level = 6;
            cfg.coarse_level = 2;
            cfg.initial_conc = ConcSpec::Constant(0.0);
            cfg.gamma = 0.1;
            cfg.t_final = 5e-3;
        }
        "letter_c" => {
            cfg.dim = 2;
            cfg.surface = SurfaceSpec::LetterC { length: 2.823 };
            cfg.surface_elements = 257;
            cfg.domain = vec![BoxSpec { lo: [-1.0, -1.0, 0.0], hi: [1.0, 1.0, 0.0] }];
            cfg.macro_cell = 0.25;
            cfg.fine_level = 9;
            cfg.coarse_level = 2;
            cfg.gamma = 0.02;
            cfg.tau = 5e-4;
            cfg.t_final = 1.0;
            cfg.kappa_bar_minus = -0.5;
            cfg.kappa_bar_plus = -2.0;
            cfg.initial_conc = ConcSpec::RandomMean(-0.4);
        }
        "shear_a" | "shear_b" => {
            cfg.dim = 2;
            cfg.surface = SurfaceSpec::Ellipse { a: 0.5, b: 1.25 };
            cfg.surface_elements = 257;
            cfg.domain = vec![BoxSpec { lo: [-2.0, -2.0, 0.0], hi: [2.0, 2.0, 0.0] }];
            cfg.stress_free = vec![(0, true), (0, false)];
            cfg.macro_cell = 0.5;
            cfg.fine_level = 8;
            cfg.coarse_level = 2;
            cfg.gamma = 0.05;
            cfg.tau = 5e-4;
            cfg.t_final = 15.0;
            cfg.rho_minus = 1.0;
            cfg.rho_plus = 1.0;
            cfg.rho_gamma = 1.0;
            cfg.alpha_minus = 0.05;
            cfg.alpha_plus = 0.2;
            cfg.mu_minus = if name == "shear_b" { 10.0 } else { 1.0 };
            cfg.mu_plus = 1.0;
            cfg.initial_conc = ConcSpec::RandomMean(-0.4);
            cfg.boundary_velocity = VelSpec::Shear;
            cfg.initial_velocity = VelSpec::Shear;
        }
        "marangoni" => {
            cfg.dim = 2;
            cfg.surface = SurfaceSpec::Ellipse { a: 0.5, b: 1.25 };
            cfg.surface_elements = 257;
            cfg.domain = vec![BoxSpec { lo: [-2.0, -2.0, 0.0], hi: [2.0, 2.0, 0.0] }];
            cfg.macro_cell = 0.5;
            cfg.fine_level = 8;
            cfg.coarse_level = 2;
            cfg.gamma = 0.05;
            cfg.tau = 5e-4;
            cfg.t_final = 10.0;
            cfg.kappa_bar_minus = 0.5;
            cfg.kappa_bar_plus = 2.0;
            cfg.beta = 10.0;
            cfg.initial_conc = ConcSpec::Banded { mean: -0.4, center: 0.25 };
        }
        "c0_junction" | "c1_junction" => {
            cfg.dim = 2;
            cfg.surface = SurfaceSpec::Ellipse { a: 0.5, b: 1.25 };
            cfg.surface_elements = 257;
            cfg.domain = vec![BoxSpec { lo: [-2.0, -2.0, 0.0], hi: [2.0, 2.0, 0.0] }];
            cfg.macro_cell = 0.5;
            cfg.fine_level = 8;
            cfg.coarse_level = 2;
            cfg.gamma = 0.05;
            cfg.tau = 5e-4;
            cfg.t_final = 1.0;
            cfg.kappa_bar_minus = -0.2;
            cfg.kappa_bar_plus = -2.0;
            cfg.beta = 10.0;
            cfg.initial_conc = ConcSpec::Banded { mean: -0.4, center: 0.25 };
            if name == "c0_junction" {
                cfg.coefficient_mode = CoefficientMode::C0Junction { delta: 1e-3 };
            }
        }
        "plate3d" | "plate3d_stiff" | "gauss_plate_minus" | "gauss_plate_plus" => {
            cfg.dim = 3;
            cfg.surface = SurfaceSpec::Plate { levels: 4, area: 35.7 };
            cfg.domain = vec![BoxSpec { lo: [-2.5, -2.5, -2.5], hi: [2.5, 2.5, 2.5] }];
            cfg.macro_cell = 1.0;
            cfg.fine_level = 9;
            cfg.coarse_level = 2;
            cfg.gamma = 0.2;
            cfg.tau = 1e-3;
            cfg.t_final = 10.0;
            cfg.initial_conc = ConcSpec::RandomMean(-0.4);
            if name == "plate3d_stiff" {
                cfg.alpha_minus = 0.5;
                cfg.alpha_plus = 2.0;
            }
            if name == "gauss_plate_minus" {
                cfg.alpha_g_minus = 0.5;
                cfg.t_final = 3.0;
            }
            if name == "gauss_plate_plus" {
                cfg.alpha_g_plus = 0.5;
                cfg.t_final = 3.0;
            }
        }
        "budding" | "budding_beta5" => {
            cfg.dim = 3;
            cfg.surface = SurfaceSpec::ArmedStar {
                arms: 4,
                amplitude: 0.8,
                n_lon: 64,
                rings: 48,
                area: 4.0 * std::f64::consts::PI,
            };
            cfg.domain = vec![BoxSpec { lo: [-2.5, -2.5, -2.5], hi: [2.5, 2.5, 2.5] }];
            cfg.macro_cell = 1.0;
            cfg.fine_level = 9;
            cfg.coarse_level = 2;
            cfg.gamma = 0.1;
            cfg.tau = 1e-3;
            cfg.t_final = 5.0;
            cfg.kappa_bar_minus = -0.5;
            cfg.kappa_bar_plus = -2.0;
            cfg.beta = if name == "budding_beta5" { 5.0 } else { 1.0 };
            cfg.initial_conc = ConcSpec::Banded { mean: -0.4, center: 0.0 };
        }
        "spinodal_sphere" => {
            cfg.dim = 3;
            cfg.surface = SurfaceSpec::CubeSphere { radius: (35.7 / (4.0 * std::f64::consts::PI)).sqrt(), levels: 5 };
            cfg.domain = vec![BoxSpec { lo: [-2.5, -2.5, -2.5], hi: [2.5, 2.5, 2.5] }];
            cfg.macro_cell = 1.0;
            cfg.fine_level = 9;
            cfg.coarse_level = 2;
            cfg.gamma = 0.1;
            cfg.tau = 1e-3;
            cfg.t_final = 0.3;
            cfg.initial_conc = ConcSpec::RandomMean(-0.4);
        }
        "seven_arm" => {
            cfg.dim = 3;
            cfg.surface = SurfaceSpec::ArmedStar {
                arms: 7,
                amplitude: 0.9,
                n_lon: 68,
                rings: 34,
                area: 10.5,
            };
            cfg.domain = vec![BoxSpec { lo: [-2.5, -2.5, -2.5], hi: [2.5, 2.5, 2.5] }];
            cfg.macro_cell = 1.0;
            cfg.fine_level = 9;
            cfg.coarse_level = 2;
            cfg.gamma = 0.2;
            cfg.tau = 1e-3;
            cfg.t_final = 0.1;
            cfg.kappa_bar_minus = -0.5;
            cfg.kappa_bar_plus = -2.0;
            cfg.initial_conc = ConcSpec::Constant(-0.4);
        }
        other => return Err(Error::Config(format!("unknown preset '{other}'"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Divides surface resolution and bulk refinement depth by `factor`
/// (factor 4 gives the quarter-resolution test configurations).
pub fn reduce_resolution(cfg: &mut ScenarioConfig, factor: usize) {
    if factor <= 1 {
        return;
    }
    cfg.surface_elements = (cfg.surface_elements / factor).max(16);
    let drop = (factor as f64).log2().round() as u16 * cfg.dim as u16;
    cfg.fine_level = cfg.fine_level.saturating_sub(drop).max(1);
    if let SurfaceSpec::CubeSphere { levels, .. }
    | SurfaceSpec::Plate { levels, .. } = &mut cfg.surface
    {
        *levels = levels.saturating_sub((factor as f64).log2().round() as usize).max(1);
    }
    if let SurfaceSpec::ArmedStar { n_lon, rings, .. } = &mut cfg.surface {
        *n_lon = (*n_lon / factor).max(8);
        *rings = (*rings / factor).max(4);
    }
    if let SurfaceSpec::Icosphere { subdivisions, .. } = &mut cfg.surface {
        *subdivisions = subdivisions.saturating_sub((factor as f64).log2().round() as usize);
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "circle_stationary",
    "letter_c",
    "shear_a",
    "shear_b",
    "marangoni",
    "c0_junction",
    "c1_junction",
    "plate3d",
    "plate3d_stiff",
    "gauss_plate_minus",
    "gauss_plate_plus",
    "budding",
    "budding_beta5",
    "spinodal_sphere",
    "seven_arm",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_parameters() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.mu_minus, 1.0);
        assert_eq!(cfg.mu_gamma, 1.0);
        assert_eq!(cfg.rho_minus, 0.0);
        assert_eq!(cfg.rho_gamma, 0.0);
        assert_eq!(cfg.alpha_minus, 1.0);
        assert_eq!(cfg.kappa_bar_minus, 0.0);
        assert_eq!(cfg.alpha_g_minus, 0.0);
        assert_eq!(cfg.theta, 1.0);
        assert_eq!(cfg.beta, 1.0);
    }

    #[test]
    fn parse_sections_and_overrides() {
        let text = "
[physics]
beta = 10
gamma = 0.05
kappa_bar_minus = -0.2
kappa_bar_plus = -2
[discretization]
tau = 5e-4
[scenario]
surface = ellipse
semi_axis_a = 0.5
semi_axis_b = 1.25
domain = -2,2,-2,2
conc = banded
conc_mean = -0.4
[output]
seed = 7
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.beta, 10.0);
        assert_eq!(cfg.tau, 5e-4);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.surface, SurfaceSpec::Ellipse { a: 0.5, b: 1.25 });
        assert_eq!(cfg.initial_conc, ConcSpec::Banded { mean: -0.4, center: 0.25 });
        let mut cfg = cfg;
        apply_override(&mut cfg, "physics.beta=2").unwrap();
        assert_eq!(cfg.beta, 2.0);
        apply_override(&mut cfg, "conc_mean=-0.2").unwrap();
        assert_eq!(cfg.initial_conc, ConcSpec::Banded { mean: -0.2, center: 0.25 });
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(parse_config("[physics]\nbeta = -1").is_err());
        assert!(parse_config("[physics]\nalpha = 0").is_err());
        assert!(parse_config("[physics]\nnonsense = 1").is_err());
        assert!(parse_config("beta 10").is_err());
    }

    #[test]
    fn gaussian_bound_warning() {
        let mut cfg = ScenarioConfig::default();
        cfg.dim = 3;
        cfg.alpha_g_plus = 3.0;
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        // shear setup values are accepted silently
        let mut cfg = preset("shear_a").unwrap();
        cfg.tau = 5e-4;
        cfg.gamma = 0.05;
        assert!(cfg.validate().unwrap().is_empty());
    }

    #[test]
    fn presets_build() {
        for name in PRESET_NAMES {
            preset(name).unwrap();
        }
        assert!(preset("bogus").is_err());
    }
}
