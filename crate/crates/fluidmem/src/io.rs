//! File formats: the plain-text mesh exchange format, VTK legacy snapshots,
//! the diagnostics CSV and the run manifest.

use crate::dynamics::{StepDiagnostics, SystemState};
use crate::la;
use crate::surface::SurfaceMesh;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Plain-text surface mesh blocks: "vertices" (rows of d floats) and
/// "simplices" (rows of d 0-based indices).
pub fn write_surface_mesh(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "dim {}", mesh.dim).ok();
    writeln!(out, "vertices {}", mesh.num_vertices()).ok();
    for v in &mesh.vertices {
        for a in 0..mesh.dim {
            write!(out, "{}{:.17e}", if a > 0 { " " } else { "" }, v[a]).ok();
        }
        out.push('\n');
    }
    writeln!(out, "simplices {}", mesh.num_simplices()).ok();
    for j in 0..mesh.num_simplices() {
        let s = mesh.simplex(j);
        let row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(" ")).ok();
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_surface_mesh(path: &Path) -> Result<SurfaceMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_surface_mesh(&text)
}

pub fn parse_surface_mesh(text: &str) -> Result<SurfaceMesh> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = |line: Option<&str>, word: &str| -> Result<usize> {
        let line = line.ok_or_else(|| Error::Parse("truncated mesh file".into()))?;
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap_or("");
        if tag != word {
            return Err(Error::Parse(format!("expected '{word}', got '{tag}'")));
        }
        it.next()
            .ok_or_else(|| Error::Parse(format!("missing count after '{word}'")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad count after '{word}'")))
    };
    let dim = header(lines.next(), "dim")?;
    let nv = header(lines.next(), "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated vertex block".into()))?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad float '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != dim {
            return Err(Error::Parse(format!("vertex row needs {dim} floats")));
        }
        let mut v = la::ZERO_VEC;
        v[..dim].copy_from_slice(&nums);
        vertices.push(v);
    }
    let nj = header(lines.next(), "simplices")?;
    let mut simplices = Vec::with_capacity(nj);
    for _ in 0..nj {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated simplex block".into()))?;
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad index '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != dim {
            return Err(Error::Parse(format!("simplex row needs {dim} indices")));
        }
        let mut s = [0usize; 3];
        s[..dim].copy_from_slice(&nums);
        simplices.push(s);
    }
    SurfaceMesh::new(dim, vertices, simplices)
}

/// VTK legacy ASCII snapshot of the interface with concentration, chemical
/// potential and curvature magnitude as point data.
pub fn write_vtk_snapshot(state: &SystemState, path: &Path) -> Result<()> {
    let mesh = &state.surf;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("interface snapshot\nASCII\nDATASET POLYDATA\n");
    writeln!(out, "POINTS {} double", mesh.num_vertices()).ok();
    for v in &mesh.vertices {
        writeln!(out, "{:.12e} {:.12e} {:.12e}", v[0], v[1], v[2]).ok();
    }
    if mesh.dim == 2 {
        writeln!(out, "LINES {} {}", mesh.num_simplices(), 3 * mesh.num_simplices()).ok();
        for j in 0..mesh.num_simplices() {
            let s = mesh.simplex(j);
            writeln!(out, "2 {} {}", s[0], s[1]).ok();
        }
    } else {
        writeln!(out, "POLYGONS {} {}", mesh.num_simplices(), 4 * mesh.num_simplices()).ok();
        for j in 0..mesh.num_simplices() {
            let s = mesh.simplex(j);
            writeln!(out, "3 {} {} {}", s[0], s[1], s[2]).ok();
        }
    }
    writeln!(out, "POINT_DATA {}", mesh.num_vertices()).ok();
    out.push_str("SCALARS C double 1\nLOOKUP_TABLE default\n");
    for c in &state.phase.conc {
        writeln!(out, "{c:.12e}").ok();
    }
    out.push_str("SCALARS M double 1\nLOOKUP_TABLE default\n");
    for m in &state.phase.potential {
        writeln!(out, "{m:.12e}").ok();
    }
    out.push_str("SCALARS kappa_mag double 1\nLOOKUP_TABLE default\n");
    for k in &state.geom.kappa {
        writeln!(out, "{:.12e}", la::norm(*k)).ok();
    }
    atomic_write(path, out.as_bytes())
}

pub const CSV_HEADER: &str =
    "t,E_total,E_kin,E_kappa,E_CH,area,volume,total_C,min_C,max_C,incl_angle,flow_iters,vi_sweeps";

pub fn csv_row(d: &StepDiagnostics) -> String {
    format!(
        "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{}",
        d.time,
        d.e_total,
        d.e_kin,
        d.e_kappa,
        d.e_ch,
        d.area,
        d.volume,
        d.total_conc,
        d.min_conc,
        d.max_conc,
        d.incl_angle,
        d.flow_iters,
        d.vi_sweeps
    )
}

pub struct CsvWriter {
    file: std::fs::File,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{CSV_HEADER}")?;
        Ok(Self { file })
    }

    pub fn write_row(&mut self, d: &StepDiagnostics) -> Result<()> {
        writeln!(self.file, "{}", csv_row(d))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn surface_mesh_roundtrip() {
        let dir = std::env::temp_dir().join(format!("fluidmem_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for mesh in [shapes::circle(0.7, 13), shapes::icosphere(1.0, 1)] {
            let path = dir.join(format!("mesh_{}.txt", mesh.dim));
            write_surface_mesh(&mesh, &path).unwrap();
            let back = read_surface_mesh(&path).unwrap();
            assert_eq!(back.dim, mesh.dim);
            assert_eq!(back.simplices, mesh.simplices);
            for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
                assert!(la::norm(la::sub(*a, *b)) < 1e-15);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_header_is_stable() {
        assert_eq!(CSV_HEADER.split(',').count(), 13);
    }
}
