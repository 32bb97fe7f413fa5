//! Simulator for two-phase fluidic biomembranes.
//!
//! A closed polyhedral interface carries a Cahn-Hilliard phase field and a
//! bending/Gaussian/line energy, and is coupled to incompressible flow in
//! the surrounding bulk and on the surface itself. The interface is evolved
//! with a parametric finite element scheme: piecewise linear surface fields
//! with mass lumping, lowest order Taylor-Hood elements in the bulk, a
//! Schur-complement flow solve and a projection Gauss-Seidel solve for the
//! phase-field variational inequality.

pub mod assembly;
pub mod bulk;
pub mod config;
pub mod driver;
pub mod dynamics;
pub mod io;
pub mod la;
pub mod quadrature;
pub mod shapes;
pub mod solvers;
pub mod sparse;
pub mod spaces;
pub mod surface;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh quality failure: {0}")]
    MeshQuality(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("point not found in mesh: {0:?}")]
    PointNotFound([f64; 3]),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
