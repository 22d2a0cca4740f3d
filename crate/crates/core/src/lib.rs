//! Personalized federated multi-armed bandits: the mixed reward model, the
//! phased elimination protocol between clients and a server, a slot-level
//! simulator and closed-form regret bounds.

pub mod client;
pub mod data_ingest;
pub mod environment;
pub mod error;
pub mod mixed_model;
pub mod schedule;
pub mod server;
pub mod simulator;
pub mod theory;

pub use error::{Error, Result};
pub use mixed_model::{global_means, mixed_means, BanditInstance, MixedModelView, MixingWeights};
pub use schedule::{ExplorationSchedule, PhaseLengths, ScheduleKind};
pub use simulator::{
    replicate, run, Replications, SimulationConfig, SimulationTrace, TraceResolution,
};
pub use theory::{BoundReport, UpperBoundTerms};
