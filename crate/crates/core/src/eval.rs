//! Offline evaluation of fixed parameters over a dataset.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{macro_f1, match_events, ClassScores, CollarConfig, EventList, ScoreReport};
use crate::postproc::{apply_stack_with, PostProcParams, StackOptions};

/// Tallies of every clip under its own parameters, summed.
pub fn tally_per_clip(
    dataset: &Dataset,
    params: &[PostProcParams],
    opts: StackOptions,
    collar: &CollarConfig,
) -> Result<Vec<ClassScores>> {
    if params.len() != dataset.len() {
        return Err(Error::dim(format!(
            "{} parameter sets for {} clips",
            params.len(),
            dataset.len()
        )));
    }
    let mut total = vec![ClassScores::default(); dataset.num_classes()];
    for (i, (clip, p)) in dataset.clips().iter().zip(params).enumerate() {
        let preds = apply_stack_with(clip, p, opts)?;
        let s = match_events(
            &preds,
            dataset.clip_references(i),
            collar,
            dataset.num_classes(),
        )?;
        for (acc, v) in total.iter_mut().zip(&s) {
            acc.add(v);
        }
    }
    Ok(total)
}

/// Dataset score with the same parameters applied to every clip.
pub fn evaluate_dataset(
    dataset: &Dataset,
    params: &PostProcParams,
    opts: StackOptions,
    collar: &CollarConfig,
) -> Result<ScoreReport> {
    let all = vec![params.clone(); dataset.len()];
    Ok(macro_f1(&tally_per_clip(dataset, &all, opts, collar)?))
}

/// Dataset score with per-clip parameters.
pub fn evaluate_per_clip(
    dataset: &Dataset,
    params: &[PostProcParams],
    opts: StackOptions,
    collar: &CollarConfig,
) -> Result<ScoreReport> {
    Ok(macro_f1(&tally_per_clip(dataset, params, opts, collar)?))
}

/// Predicted events of every clip, in clip order.
pub fn predict_dataset(
    dataset: &Dataset,
    params: &PostProcParams,
    opts: StackOptions,
) -> Result<EventList> {
    let mut out = Vec::new();
    for clip in dataset.clips() {
        out.extend(apply_stack_with(clip, params, opts)?);
    }
    Ok(out)
}
