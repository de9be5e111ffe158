//! Reeb dynamics on star-shaped hypersurfaces of R⁴: flows, periodic orbits,
//! Conley-Zehnder indices, linking, global surfaces of section.

pub mod cli;
pub mod cycles;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod knots;
pub mod orbits;
pub mod sections;
pub mod spectral;

pub use error::{ReebError, Result};
