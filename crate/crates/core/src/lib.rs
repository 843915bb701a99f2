//! Spectral experiments with adiabatically rescaled Laplacians on foliated
//! tori.

pub mod adiabatic;
pub mod counting;
pub mod eigen;
pub mod error;
pub mod expr;
pub mod io;
pub mod lattice;
pub mod leafwise;
pub mod models;
pub mod operators;
pub mod quad;
pub mod spectra;

pub use counting::{Atom, ContinuousPart, CountingFunction, TestFunction};
pub use error::{Error, Result};
pub use models::{Bigrade, FiberedTorusModel, FlatLinearFoliation};
