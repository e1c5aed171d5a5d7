use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, evaluate_per_clip};
use crate::metric::{CollarConfig, ScoreReport};
use crate::postproc::{ParamGrid, PostProcParams, StackOptions};

use super::action::{actions_to_params, greedy_actions};
use super::policy::{policy_forward, PolicyParams};

/// Greedy parameters of a trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    /// Per clip, in dataset order.
    pub per_clip: Vec<PostProcParams>,
    /// Score with every clip using its own greedy parameters.
    pub per_clip_report: ScoreReport,
    /// Most frequent threshold and window per class across clips; ties go
    /// to the smaller value.
    pub modal: PostProcParams,
    /// Score with the modal parameters applied to every clip.
    pub modal_report: ScoreReport,
}

fn mode<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(T, usize)> = None;
    for (v, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v)
}

/// Runs the policy on every clip and keeps the most probable action of
/// each head.
pub fn extract_best_params(
    policy: &PolicyParams,
    dataset: &Dataset,
    grid: &ParamGrid,
    collar: &CollarConfig,
) -> Result<Extracted> {
    if !policy.shape.matches(grid) {
        return Err(Error::dim("policy heads do not match the grid"));
    }
    if dataset.is_empty() {
        return Err(Error::contract(
            "cannot extract parameters from an empty dataset",
        ));
    }
    let mut per_clip = Vec::with_capacity(dataset.len());
    for clip in dataset.clips() {
        let (tl, wl, _) = policy_forward(clip, policy)?;
        let a = greedy_actions(tl.data(), wl.data(), grid)?;
        per_clip.push(actions_to_params(&a, grid)?);
    }
    let opts = StackOptions::default();
    let per_clip_report = evaluate_per_clip(dataset, &per_clip, opts, collar)?;

    // index into the grid so that mode() works on integers
    let ti = |x: f64| {
        grid.thresholds
            .iter()
            .position(|t| *t == x)
            .expect("value from grid")
    };
    let mut thresholds = Vec::with_capacity(grid.num_classes);
    let mut windows = Vec::with_capacity(grid.num_classes);
    for c in 0..grid.num_classes {
        let t = mode(per_clip.iter().map(|p| ti(p.thresholds[c]))).expect("non-empty");
        thresholds.push(grid.thresholds[t]);
        windows.push(mode(per_clip.iter().map(|p| p.window_sizes[c])).expect("non-empty"));
    }
    let modal = PostProcParams::new(thresholds, windows)?;
    let modal_report = evaluate_dataset(dataset, &modal, opts, collar)?;
    Ok(Extracted {
        per_clip,
        per_clip_report,
        modal,
        modal_report,
    })
}
