pub mod anchor;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod grid;
pub mod ic;
pub mod io;
pub mod metrics;
pub mod pde;
pub mod record;
pub mod solver;
pub mod spectral;
pub mod surrogate;
