//! Recurrent actor-critic agent that picks post-processing parameters per
//! clip, and its policy-gradient trainer.

mod action;
mod advantage;
mod extract;
mod objective;
mod policy;
mod trainer;

pub use action::{
    action_terms, actions_to_params, greedy_actions, sample_actions, ActionSample, ActionTerms,
};
pub use advantage::{compute_advantages, compute_advantages_from, Advantages, TrajectoryStep};
pub use extract::{extract_best_params, Extracted};
pub use objective::{pg_objective, Objective};
pub use policy::{
    policy_forward, policy_forward_on, PolicyOutput, PolicyParams, PolicyShape, PolicyVars,
    HIDDEN_SIZE,
};
pub use trainer::{train, write_log, Checkpoint, LogRow, Trainer, TrainerConfig};
