//! Equivariant embeddings of flows into the space of one-Lipschitz functions.

pub mod embed;
pub mod experiment;
pub mod flow;
pub mod funcspace;
pub mod genvec;
pub mod perturb;
pub mod section;

pub use embed::{EquivariantMap, FinalChecks, MapSamples, PipelineOptions, PipelineOutcome, PipelineReport};
pub use experiment::{ExperimentConfig, ExperimentError, Report};
pub use flow::{FixedProfile, FixedSet, FlowSystem, SampleNet, State};
pub use funcspace::{cr_dist, LineFn, WindowFn};
pub use genvec::VecFamily;
