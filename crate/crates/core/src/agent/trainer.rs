use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{ClipOrder, Env, RewardMode};
use crate::error::{Error, Result};
use crate::metric::CollarConfig;
use crate::ndmath::{adam_step, AdamState, Tape, Var};
use crate::postproc::ParamGrid;

use super::action::{action_terms, actions_to_params, sample_actions};
use super::advantage::{compute_advantages_from, TrajectoryStep};
use super::objective::pg_objective;
use super::policy::{policy_forward, policy_forward_on, PolicyParams, PolicyShape};

fn default_batch_size() -> usize {
    4
}
fn default_memory_size() -> usize {
    10_000
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_update_frequency() -> usize {
    4
}
fn default_gamma() -> f64 {
    0.99
}
fn default_entropy_weight() -> f64 {
    0.001
}
fn default_value_weight() -> f64 {
    0.5
}
fn default_episodes() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Most recent steps used per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Capacity of the rollout buffer, in steps.
    #[serde(default = "default_memory_size")]
    pub memory_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Environment steps between optimizer steps.
    #[serde(default = "default_update_frequency")]
    pub update_frequency: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_entropy_weight")]
    pub entropy_weight: f64,
    #[serde(default = "default_value_weight")]
    pub value_weight: f64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub clip_order: ClipOrder,
    #[serde(default)]
    pub collar: CollarConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            batch_size: default_batch_size(),
            memory_size: default_memory_size(),
            learning_rate: default_learning_rate(),
            update_frequency: default_update_frequency(),
            gamma: default_gamma(),
            entropy_weight: default_entropy_weight(),
            value_weight: default_value_weight(),
            episodes: default_episodes(),
            seed: 0,
            reward_mode: RewardMode::default(),
            clip_order: ClipOrder::default(),
            collar: CollarConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("trainer config", m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.update_frequency == 0 {
            return bad("update_frequency must be at least 1".into());
        }
        if self.memory_size < self.update_frequency {
            return bad(format!(
                "memory_size {} cannot hold update_frequency {} steps",
                self.memory_size, self.update_frequency
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return bad(format!(
                "entropy_weight {} must be >= 0",
                self.entropy_weight
            ));
        }
        if !(self.value_weight.is_finite() && self.value_weight >= 0.0) {
            return bad(format!("value_weight {} must be >= 0", self.value_weight));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        self.collar.validate()
    }
}

/// One line of the learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    /// Environment steps taken so far.
    pub step: u64,
    pub mean_reward: f64,
    pub macro_f1: f64,
    /// Mean loss over the episode's updates.
    pub loss: f64,
    /// Mean total entropy of the sampled action distributions.
    pub entropy: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: TrainerConfig,
    pub grid: ParamGrid,
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub episode: usize,
    pub steps: u64,
    pub log: Vec<LogRow>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        ck.config.validate()?;
        ck.grid.validate()?;
        ck.policy.validate()?;
        if !ck.policy.shape.matches(&ck.grid) {
            return Err(Error::dim("checkpoint policy does not match its grid"));
        }
        Ok(ck)
    }
}

struct Pending {
    step: TrajectoryStep,
    log_prob: Var,
    entropy: Var,
    value: Var,
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    state: Checkpoint,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, grid: ParamGrid, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        if grid.num_classes != dataset.num_classes() {
            return Err(Error::dim(format!(
                "grid for {} classes, dataset has {}",
                grid.num_classes,
                dataset.num_classes()
            )));
        }
        if dataset.is_empty() {
            return Err(Error::contract("cannot train on an empty dataset"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = PolicyParams::init(PolicyShape::for_grid(&grid), &mut rng);
        let adam = AdamState::new(policy.tensors());
        Ok(Trainer {
            dataset,
            state: Checkpoint {
                config,
                grid,
                policy,
                adam,
                rng,
                episode: 0,
                steps: 0,
                log: Vec::new(),
            },
        })
    }

    pub fn from_checkpoint(dataset: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.grid.num_classes != dataset.num_classes() {
            return Err(Error::dim(format!(
                "checkpoint for {} classes, dataset has {}",
                checkpoint.grid.num_classes,
                dataset.num_classes()
            )));
        }
        Ok(Trainer {
            dataset,
            state: checkpoint,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.state.policy
    }

    pub fn log(&self) -> &[LogRow] {
        &self.state.log
    }

    pub fn episodes_done(&self) -> usize {
        self.state.episode
    }

    pub fn is_finished(&self) -> bool {
        self.state.episode >= self.state.config.episodes
    }

    /// Plays one episode over the dataset, updating the policy every
    /// `update_frequency` steps and once more at the end of the episode.
    pub fn run_episode(&mut self) -> Result<LogRow> {
        let st = &mut self.state;
        let cfg = st.config.clone();
        let mut env = Env::new(self.dataset, cfg.reward_mode, cfg.collar);
        let mut state = Some(env.reset(cfg.clip_order, &mut st.rng)?);

        let mut buffer: VecDeque<TrajectoryStep> = VecDeque::with_capacity(cfg.update_frequency);
        let (mut reward_sum, mut entropy_sum, mut n_steps) = (0.0, 0.0, 0usize);
        let (mut loss_sum, mut n_updates) = (0.0, 0usize);

        while let Some(s0) = state {
            let mut tape = Tape::new();
            let vars = st.policy.register(&mut tape);
            let mut pending: Vec<Pending> = Vec::with_capacity(cfg.update_frequency);
            let mut cur = Some(s0);
            while let Some(s) = cur {
                if pending.len() == cfg.update_frequency {
                    break;
                }
                let clip = self.dataset.clip(s.clip_index);
                let out = policy_forward_on(&mut tape, &vars, &st.policy.shape, clip)?;
                let sample = sample_actions(
                    tape.value(out.threshold_logits).data(),
                    tape.value(out.window_logits).data(),
                    &st.grid,
                    &mut st.rng,
                )?;
                let params = actions_to_params(&sample, &st.grid)?;
                let terms = action_terms(&mut tape, &out, &sample, &st.grid)?;
                let value = tape.value(out.value).item()?;
                let outcome = env.step(&s, &params)?;

                reward_sum += outcome.reward;
                entropy_sum += sample.total_entropy();
                n_steps += 1;
                let step = TrajectoryStep {
                    t: s.t,
                    clip_index: s.clip_index,
                    action: sample,
                    value,
                    reward: outcome.reward,
                    done: outcome.done,
                };
                if buffer.len() == cfg.memory_size {
                    buffer.pop_front();
                }
                buffer.push_back(step.clone());
                pending.push(Pending {
                    step,
                    log_prob: terms.log_prob,
                    entropy: terms.entropy,
                    value: out.value,
                });
                cur = outcome.next;
            }
            state = cur;

            let tail = match state {
                Some(s) => policy_forward(self.dataset.clip(s.clip_index), &st.policy)?.2,
                None => 0.0,
            };
            let steps: Vec<TrajectoryStep> = pending.iter().map(|p| p.step.clone()).collect();
            let adv = compute_advantages_from(&steps, cfg.gamma, tail)?;
            let keep = pending.len().min(cfg.batch_size);
            let from = pending.len() - keep;
            let batch = &pending[from..];
            let obj = pg_objective(
                &mut tape,
                &batch.iter().map(|p| p.log_prob).collect::<Vec<_>>(),
                &adv.advantages[from..],
                &batch.iter().map(|p| p.entropy).collect::<Vec<_>>(),
                cfg.entropy_weight,
                &batch.iter().map(|p| p.value).collect::<Vec<_>>(),
                &adv.returns[from..],
                cfg.value_weight,
            )?;
            let loss = tape.value(obj.loss).item()?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at episode {} step {}",
                    st.episode, st.steps
                )));
            }
            let grads = tape.backward(obj.loss)?.into_params();
            adam_step(
                &mut st.policy.tensors_mut(),
                &grads,
                &mut st.adam,
                cfg.learning_rate,
            )?;
            st.steps += pending.len() as u64;
            loss_sum += loss;
            n_updates += 1;
            buffer.clear();
        }

        let score = env.episode_score()?;
        st.episode += 1;
        let row = LogRow {
            episode: st.episode,
            step: st.steps,
            mean_reward: reward_sum / n_steps as f64,
            macro_f1: score.macro_f1,
            loss: loss_sum / n_updates as f64,
            entropy: entropy_sum / n_steps as f64,
        };
        st.log.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining episodes of the configured budget.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_episode()?;
        }
        Ok(())
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }
}

/// Trains a fresh policy for `config.episodes` episodes.
pub fn train(
    dataset: &Dataset,
    grid: &ParamGrid,
    config: &TrainerConfig,
) -> Result<(PolicyParams, Vec<LogRow>)> {
    let mut trainer = Trainer::new(dataset, grid.clone(), config.clone())?;
    trainer.run()?;
    let ck = trainer.into_checkpoint();
    Ok((ck.policy, ck.log))
}

/// Learning curve as CSV `episode,step,mean_reward,macro_f1,loss,entropy`.
pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in log {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
