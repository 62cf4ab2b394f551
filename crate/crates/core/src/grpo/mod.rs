//! Desk-scale GRPO simulator: a tabular policy trained against the grounding
//! reward on a synthetic procedure world.

mod policy;
mod trainer;
mod world;

pub use policy::{Completion, Token, ToyPolicy};
pub use trainer::{
    collect_groups, derive_seed, grpo_step, history_copy, policy_positions, surrogate, surrogate_gradient, swap_modes,
    train, train_with, Adam, CurvePoint, Group, KlEstimator, SimConfig, SimScorer, StepStats, SwapModes, TrainOutcome,
    TrainingCurve,
};
pub use world::{generate_world, NoiseStats, ProcedureGrammar, Prompt, StepId, TaskTemplate, World};
