//! Multi-seed experiment runner, run configuration, aggregation and the
//! random-policy baseline.

pub mod aggregate;
pub mod baseline;
pub mod config;
pub mod csvfmt;
mod experiment;

pub use aggregate::{aggregate, eval_grid, AggregateCurve, SeedLog, AGGREGATE_HEADER};
pub use baseline::{random_baseline, BaselineSummary};
pub use config::{
    parse_override, resolve_output, EnvConfig, LandscapeProbeConfig, LipcurveProbeConfig, ProbePolicy,
    ProbeSpec, RunConfig, SurfaceProbeConfig, OUTPUT_ROOT_VAR,
};
pub use experiment::{
    aggregate_run, run_experiment, run_probe, seed_dir, Manifest, RunReport, SeedStatus, CODE_VERSION,
    UPDATES_HEADER,
};
