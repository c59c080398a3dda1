//! Analytic toy conditional-diffusion testbed.
//!
//! The data distribution is an i.i.d. Gaussian per pixel, so the score of
//! every diffused marginal is known in closed form and no trained denoiser is
//! needed. Each condition branch encodes its residual to a target inside a
//! mask as a `C`-channel feature; the configured strategy fuses the branch
//! features and the fused feature is decoded into a guidance field that is
//! added to the score.

mod experiments;
mod sampler;
mod scenario;
mod schedule;

pub use experiments::{
    compare_strategies, comparison_arms, run_ablation, Ablation, AblationRow, Arm,
};
pub use sampler::{branch_encode, condition_error, decode_guidance, sample, RunReport, StepRecord};
pub use scenario::{
    Branch, BranchSpec, EmbeddingSpec, MaskSpec, Scenario, ScheduleConfig, Strategy, TargetSpec,
    PRESETS,
};
pub use schedule::{analytic_score, NoiseSchedule, Prior};
