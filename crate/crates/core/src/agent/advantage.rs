use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::action::ActionSample;

/// One transition gathered while acting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub clip_index: usize,
    pub action: ActionSample,
    /// Value estimate of the state the action was taken in.
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// Advantages and value targets, aligned with the input steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Discounted sums of TD errors over a finished trajectory. The value
/// after the terminal step is zero.
pub fn compute_advantages(steps: &[TrajectoryStep], gamma: f64) -> Result<Advantages> {
    match steps.last() {
        Some(s) if s.done => {}
        Some(_) => {
            return Err(Error::contract(
                "trajectory does not end in a terminal step",
            ))
        }
        None => return Err(Error::contract("empty trajectory")),
    }
    compute_advantages_from(steps, gamma, 0.0)
}

/// Same as [`compute_advantages`] for a trajectory cut short, bootstrapped
/// with the value `tail_value` of the state after the last step. A step
/// marked `done` cuts the bootstrap regardless of what follows.
pub fn compute_advantages_from(
    steps: &[TrajectoryStep],
    gamma: f64,
    tail_value: f64,
) -> Result<Advantages> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("{gamma} outside [0, 1]")));
    }
    if steps
        .iter()
        .any(|s| !s.value.is_finite() || !s.reward.is_finite())
        || !tail_value.is_finite()
    {
        return Err(Error::NonFinite("trajectory values or rewards".into()));
    }
    if steps[..steps.len().saturating_sub(1)]
        .iter()
        .any(|s| s.done)
    {
        return Err(Error::contract(
            "terminal step before the end of the trajectory",
        ));
    }
    let n = steps.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = tail_value;
    let mut next_adv = 0.0;
    for k in (0..n).rev() {
        let s = &steps[k];
        let (nv, na) = if s.done {
            (0.0, 0.0)
        } else {
            (next_value, next_adv)
        };
        let delta = s.reward + gamma * nv - s.value;
        advantages[k] = delta + gamma * na;
        next_value = s.value;
        next_adv = advantages[k];
    }
    let returns = advantages
        .iter()
        .zip(steps)
        .map(|(a, s)| a + s.value)
        .collect();
    Ok(Advantages {
        advantages,
        returns,
    })
}
