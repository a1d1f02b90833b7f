//! Building blocks for magnetic resonance elastography inversion experiments:
//! grid fields and their file format, synthetic phantoms, a finite-difference
//! frequency-domain forward solver, the MMDI-style algebraic inversion
//! baseline, patch tiling and evaluation statistics.

pub mod error;
pub mod field;
pub mod io;
pub mod mmdi;
pub mod patch;
pub mod phantom;
pub mod rng;
pub mod stats;
pub mod wavesolve;

pub use error::{Error, Result};
pub use field::{ComplexField, FieldMetadata, Grid, ScalarField};
pub use phantom::{PhantomClass, PhantomSpec};
