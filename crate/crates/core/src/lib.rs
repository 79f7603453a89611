pub mod algebra;
pub mod error;
pub mod jet;
pub mod poisson;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod snapshot;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use jet::{Assignment, DiffPoly, FieldId, JetVariable, Monomial};
pub use spectral::{Axis, Grid, NonlocalConvention, SpectralField, ZeroModeRule};
