//! Exhaustive grid search, shared across classes or per class.
//!
//! Class `c`'s events depend only on column `c` and on `(threshold_c,
//! window_c)`, so one table of per-class tallies over the broadcast grid
//! serves both searches: the shared search reads rows, the per-class search
//! takes the best row per class independently.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{macro_f1, match_events, ClassScores, CollarConfig};
use crate::postproc::{apply_class, ParamGrid, PostProcParams, StackOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub threshold: f64,
    pub window: usize,
    pub class_scores: Vec<ClassScores>,
    pub class_f1: Vec<f64>,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: PostProcParams,
    pub best_macro_f1: f64,
    pub table: Vec<GridCell>,
}

/// Per-class tallies for every `(threshold, window)` pair, thresholds
/// outermost.
pub fn score_table(
    dataset: &Dataset,
    grid: &ParamGrid,
    collar: &CollarConfig,
) -> Result<Vec<GridCell>> {
    grid.validate()?;
    if grid.num_classes != dataset.num_classes() {
        return Err(Error::dim(format!(
            "grid for {} classes, dataset has {}",
            grid.num_classes,
            dataset.num_classes()
        )));
    }
    let c = dataset.num_classes();
    let opts = StackOptions::default();
    let mut table = Vec::with_capacity(grid.thresholds.len() * grid.windows.len());
    for &threshold in &grid.thresholds {
        for &window in &grid.windows {
            let mut scores = vec![ClassScores::default(); c];
            for (i, clip) in dataset.clips().iter().enumerate() {
                let refs = dataset.clip_references(i);
                for (class, acc) in scores.iter_mut().enumerate() {
                    let preds = apply_class(clip, class, threshold, window, opts)?;
                    let class_refs: Vec<_> = refs
                        .iter()
                        .filter(|e| e.class_index == class)
                        .cloned()
                        .collect();
                    let s = match_events(&preds, &class_refs, collar, c)?;
                    acc.add(&s[class]);
                }
            }
            let report = macro_f1(&scores);
            table.push(GridCell {
                threshold,
                window,
                class_f1: report.class_f1(),
                macro_f1: report.macro_f1,
                class_scores: scores,
            });
        }
    }
    Ok(table)
}

/// One `(threshold, window)` for all classes. Ties go to the smaller
/// threshold, then the smaller window.
pub fn grid_search_independent(
    dataset: &Dataset,
    grid: &ParamGrid,
    collar: &CollarConfig,
) -> Result<GridResult> {
    let table = score_table(dataset, grid, collar)?;
    let mut best = 0;
    for (k, cell) in table.iter().enumerate() {
        if cell.macro_f1 > table[best].macro_f1 {
            best = k;
        }
    }
    let cell = &table[best];
    Ok(GridResult {
        best: PostProcParams::uniform(dataset.num_classes(), cell.threshold, cell.window)?,
        best_macro_f1: cell.macro_f1,
        table,
    })
}

/// Ranks a class's outcome for the macro average: a class with references
/// maximizes its F1; a class without references is best left empty, which
/// removes it from the average instead of contributing a zero.
fn class_key(s: &ClassScores) -> f64 {
    if s.references() > 0 {
        s.f1()
    } else if s.predictions() == 0 {
        1.0
    } else {
        0.0
    }
}

/// Independent `(threshold, window)` per class.
pub fn grid_search_per_class(
    dataset: &Dataset,
    grid: &ParamGrid,
    collar: &CollarConfig,
) -> Result<GridResult> {
    let table = score_table(dataset, grid, collar)?;
    let c = dataset.num_classes();
    let mut thresholds = Vec::with_capacity(c);
    let mut windows = Vec::with_capacity(c);
    let mut chosen = Vec::with_capacity(c);
    for class in 0..c {
        let mut best = 0;
        for (k, cell) in table.iter().enumerate() {
            if class_key(&cell.class_scores[class]) > class_key(&table[best].class_scores[class]) {
                best = k;
            }
        }
        thresholds.push(table[best].threshold);
        windows.push(table[best].window);
        chosen.push(table[best].class_scores[class]);
    }
    Ok(GridResult {
        best: PostProcParams::new(thresholds, windows)?,
        best_macro_f1: macro_f1(&chosen).macro_f1,
        table,
    })
}

/// CSV `threshold,window,class,f1`, one row per cell and class.
pub fn write_score_table(path: &Path, table: &[GridCell], class_labels: &[String]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "threshold,window,class,f1").map_err(io)?;
    for cell in table {
        for (label, f1) in class_labels.iter().zip(&cell.class_f1) {
            writeln!(w, "{},{},{},{}", cell.threshold, cell.window, label, f1).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
