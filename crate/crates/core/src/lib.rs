//! Stationary law, regeneration and dividend values for Markov-modulated Brownian motion
//! reflected at state-dependent barriers, with closed-form and Monte Carlo oracles.

pub mod acceptance;
pub mod closed_forms;
pub mod decomposition;
pub mod dividend;
pub mod error;
pub mod model;
pub mod piecewise;
pub mod report;
pub mod simulator;
pub mod spectral;
pub mod stationary;

pub use decomposition::{compute_partition, IntervalPartition};
pub use dividend::{solve_value_function, verify_boundary, BoundaryReport, DividendModel, DividendValue, ValueFunction};
pub use error::{Error, Result, ValidationError, Violation};
pub use model::{validate_model, validate_structure, MmbmModel, RateMatrix, RawModel, StateClassification};
pub use simulator::{BarrierScheme, PathEstimates, SimConfig};
pub use stationary::{solve_stationary, Atom, StationaryCdf, StationaryDistribution};
