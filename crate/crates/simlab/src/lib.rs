//! Simulation studies for residual randomization tests.

pub mod harness;
pub mod method;
pub mod presets;
pub mod scenario;

pub use harness::{
    run_monte_carlo, run_monte_carlo_with_id, MethodSummary, MonteCarloConfig, MonteCarloReport,
};
pub use method::{MethodResult, MethodSpec, PrimitiveChoice};
pub use presets::{preset, presets, Preset};
pub use scenario::{Generated, ScenarioSpec, Truth};
