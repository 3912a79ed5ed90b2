//! Discrete maps, continuous flows, RK4 integration, Lyapunov exponents and
//! invariant-measure histograms. Nothing in here knows about rewards or agents.

mod flows;
mod invariant;
mod lyapunov;
mod maps;

pub use flows::{integrate_rk4, FlowMap, FlowSystem, VectorField};
pub use invariant::{
    arcsine_bin_mass, invariant_histogram, invariant_histogram_coord, InvariantHistogram, INVARIANT_HEADER,
};
pub use lyapunov::{lyapunov_max, lyapunov_max_with, Dynamics, FnMap, LyapunovResult, DEFAULT_RENORM_INTERVAL};
pub use maps::{step_map, MapSystem};
