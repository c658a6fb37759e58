//! Echo-state-network toolkit comparing analog/binary and
//! deterministic/stochastic neuron models.
//!
//! The pipeline is: [`signals`] generate an input, [`reservoir`] builds a
//! random topology and iterates one of four neuron update rules,
//! [`readout`] fits a linear readout and runs free-running prediction
//! (offline or with online segment refits), [`metrics`] scores the run, and
//! [`experiments`] sweeps whole grids reproducibly in parallel.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod signals;

pub use error::{Error, Result};
pub use experiments::{
    report, run_mc_suite, run_sweep, McSuiteConfig, Report, RunOptions, SweepConfig, SweepRecord,
    SweepRow,
};
pub use linalg::{ridge_solve, scale_to_radius, spectral_radius, Matrix, SpectralRadius};
pub use metrics::{
    aggregate, dynamic_range, memory_capacity, nmse, AggregateStats, DynamicRange, McPlan,
    McResult, NmseConvention,
};
pub use readout::{
    detect_blowup, predict_free_run, run_once, run_with_weights, train_offline, train_online,
    RunRecord, RunResult, TrainMode, TrainedReservoir, TrainingPlan, WeightStats,
};
pub use reservoir::{
    build_topology, NeuronKind, NeuronModel, Reservoir, ReservoirConfig, ReservoirState, WeightSet,
};
pub use rng::{derive_stream, RngStream};
pub use signals::{SignalKind, SignalSpec, TimeSeries};
