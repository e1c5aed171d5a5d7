//! The decision process: one state per clip, actions are post-processing
//! parameters, rewards are event F1 percentages scaled to `[0, 1]`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{macro_f1, match_events, ClassScores, CollarConfig, ScoreReport};
use crate::postproc::{apply_stack, PostProcParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Every step is rewarded with the F1 of its own clip.
    #[default]
    PerSegment,
    /// Zero until the last step, which receives the dataset F1.
    Terminal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipOrder {
    Fixed,
    #[default]
    Shuffled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvState {
    /// Position within the episode.
    pub t: usize,
    /// Dataset index of the clip observed at `t`.
    pub clip_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub next: Option<EnvState>,
    /// Score of the clip just processed.
    pub segment: ScoreReport,
}

/// Reward for a score: the macro F1 percentage divided by 100.
pub fn reward_from_report(report: &ScoreReport) -> f64 {
    report.macro_f1_percent() / 100.0
}

pub struct Env<'a> {
    dataset: &'a Dataset,
    mode: RewardMode,
    collar: CollarConfig,
    order: Vec<usize>,
    t: usize,
    tallies: Vec<ClassScores>,
    segment_rewards: Vec<f64>,
    finished: bool,
}

impl<'a> Env<'a> {
    pub fn new(dataset: &'a Dataset, mode: RewardMode, collar: CollarConfig) -> Self {
        Env {
            dataset,
            mode,
            collar,
            order: Vec::new(),
            t: 0,
            tallies: Vec::new(),
            segment_rewards: Vec::new(),
            finished: false,
        }
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    /// Clip order of the current episode.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn current(&self) -> Option<EnvState> {
        (!self.finished && self.t < self.order.len()).then(|| EnvState {
            t: self.t,
            clip_index: self.order[self.t],
        })
    }

    /// Starts an episode. Clears the score accumulators.
    pub fn reset<R: Rng + ?Sized>(&mut self, order: ClipOrder, rng: &mut R) -> Result<EnvState> {
        if self.dataset.is_empty() {
            return Err(Error::contract(
                "cannot run an episode over an empty dataset",
            ));
        }
        self.order = (0..self.dataset.len()).collect();
        if order == ClipOrder::Shuffled {
            self.order.shuffle(rng);
        }
        self.t = 0;
        self.tallies = vec![ClassScores::default(); self.dataset.num_classes()];
        self.segment_rewards.clear();
        self.finished = false;
        Ok(EnvState {
            t: 0,
            clip_index: self.order[0],
        })
    }

    pub fn step(&mut self, state: &EnvState, params: &PostProcParams) -> Result<StepOutcome> {
        if self.finished || self.order.is_empty() {
            return Err(Error::contract("step called on a terminal state"));
        }
        if state.t != self.t || state.clip_index != self.order[self.t] {
            return Err(Error::contract(format!(
                "state {:?} is not the current state (t = {})",
                state, self.t
            )));
        }
        let i = state.clip_index;
        let clip = self.dataset.clip(i);
        let preds = apply_stack(clip, params)?;
        let scores = match_events(
            &preds,
            self.dataset.clip_references(i),
            &self.collar,
            self.dataset.num_classes(),
        )?;
        for (acc, s) in self.tallies.iter_mut().zip(&scores) {
            acc.add(s);
        }
        let segment = macro_f1(&scores);
        let segment_reward = reward_from_report(&segment);
        self.segment_rewards.push(segment_reward);

        let done = self.t + 1 == self.order.len();
        let reward = match self.mode {
            RewardMode::PerSegment => segment_reward,
            RewardMode::Terminal if done => reward_from_report(&macro_f1(&self.tallies)),
            RewardMode::Terminal => 0.0,
        };
        self.t += 1;
        self.finished = done;
        Ok(StepOutcome {
            reward,
            done,
            next: self.current(),
            segment,
        })
    }

    /// Dataset-level score of the finished episode.
    pub fn episode_score(&self) -> Result<ScoreReport> {
        if !self.finished {
            return Err(Error::contract("episode is not finished"));
        }
        Ok(macro_f1(&self.tallies))
    }

    /// Per-segment rewards of the episode so far, whatever the reward mode.
    pub fn segment_rewards(&self) -> &[f64] {
        &self.segment_rewards
    }
}
