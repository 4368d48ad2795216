//! Equivariant maps into `L(ℝ)`: the Bebutov layer, mixing, gluing of window
//! perturbations, the two density steps and the finite-stage pipeline.

use thiserror::Error;

use crate::flow::FlowError;
use crate::funcspace::FuncError;
use crate::perturb::PerturbError;
use crate::section::SectionError;

pub mod density;
pub mod kernel;
pub mod map;
pub mod pipeline;
pub mod samples;

pub use density::{densify_avoid_fixed, densify_separate, densify_separate_from, CertTarget, DensityCert, DensityOptions, LineBook};
pub use kernel::{BaseEval, BaseSpec, KernelShape, KernelSpec};
pub use map::{bebutov, bebutov_with, glue, glue_offset, mix, EquivariantMap, EvalConfig, Layer, Patch, PatchHit};
pub use pipeline::{pipeline, run_default, schedule, PipelineOptions, PipelineOutcome, PipelineReport, StageKind, StageRecord};
pub use samples::{sample_map, CertSample, EquivarianceSample, FinalChecks, MapSamples, WindowSample};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("time {t} lies outside the evaluation budget ±{budget}")]
    WindowBudget { t: f64, budget: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("certificate margin is not positive: {0}")]
    ZeroMargin(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Func(#[from] FuncError),
}
