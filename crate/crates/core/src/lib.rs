//! Numerical laboratory for Schrodinger maps into the sphere: the flow, the
//! caloric gauge, its gauge fields, and the frequency-localized function spaces.

pub mod acceptance;
pub mod caloric;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod gauge;
pub mod grid;
pub mod io;
pub mod littlewood_paley;
pub mod probe;
pub mod scenario;
pub mod spaces;
pub mod spacetime;
pub mod spectral;

pub use error::{LabError, Result};
pub use grid::{ComplexField, DyadicWindow, GridSpec, RealField, VectorField3};
pub use spectral::Spectral;
