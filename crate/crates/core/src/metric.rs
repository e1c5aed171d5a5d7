//! Event decoding and the collar-based event F1.
//!
//! A prediction matches a reference of the same class and clip when its
//! onset lies within `onset_collar` of the reference onset and its offset
//! lies within `max(offset_collar_abs, offset_collar_rel · ref_length)` of
//! the reference offset. Within each (clip, class) cell predictions and
//! references are paired by a maximum-cardinality matching, so the tallies
//! do not depend on event order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub clip_id: String,
    pub onset: f64,
    pub offset: f64,
    pub class_index: usize,
}

impl Event {
    pub fn new(
        clip_id: impl Into<String>,
        onset: f64,
        offset: f64,
        class_index: usize,
    ) -> Result<Self> {
        if !(onset >= 0.0 && offset > onset && offset.is_finite()) {
            return Err(Error::contract(format!(
                "event needs 0 <= onset < offset, got ({onset}, {offset})"
            )));
        }
        Ok(Event {
            clip_id: clip_id.into(),
            onset,
            offset,
            class_index,
        })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

pub type EventList = Vec<Event>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollarConfig {
    pub onset_collar: f64,
    pub offset_collar_abs: f64,
    pub offset_collar_rel: f64,
}

impl Default for CollarConfig {
    fn default() -> Self {
        CollarConfig {
            onset_collar: 0.2,
            offset_collar_abs: 0.2,
            offset_collar_rel: 0.2,
        }
    }
}

impl CollarConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.onset_collar,
            self.offset_collar_abs,
            self.offset_collar_rel,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(Error::invalid(
                "collar",
                format!("{self:?} must be non-negative"),
            ));
        }
        Ok(())
    }

    fn compatible(&self, pred: &Event, reference: &Event) -> bool {
        let offset_tol = self
            .offset_collar_abs
            .max(self.offset_collar_rel * reference.duration());
        (pred.onset - reference.onset).abs() <= self.onset_collar
            && (pred.offset - reference.offset).abs() <= offset_tol
    }
}

/// Frame-level 0/1 decisions, `frames × classes`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryFrames {
    frames: usize,
    classes: usize,
    data: Vec<u8>,
}

impl BinaryFrames {
    pub fn new(frames: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * classes {
            return Err(Error::dim(format!(
                "{frames}x{classes} decisions need {} values, got {}",
                frames * classes,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| **v > 1) {
            return Err(Error::contract(format!(
                "decision value {bad} is not binary"
            )));
        }
        Ok(BinaryFrames {
            frames,
            classes,
            data,
        })
    }

    pub fn zeros(frames: usize, classes: usize) -> Self {
        BinaryFrames {
            frames,
            classes,
            data: vec![0; frames * classes],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, c: usize) -> u8 {
        self.data[t * self.classes + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: bool) {
        self.data[t * self.classes + c] = v as u8;
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.frames).map(|t| self.get(t, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[u8]) {
        for (t, &v) in col.iter().enumerate() {
            self.data[t * self.classes + c] = v;
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_active(&self, c: usize) -> usize {
        (0..self.frames).filter(|&t| self.get(t, c) == 1).count()
    }
}

/// Turns each maximal run of active frames `[i..=j]` of a class into an
/// event `(i·hop, (j+1)·hop)`. Events come out sorted by (class, onset).
pub fn decode_events(frames: &BinaryFrames, hop: f64, clip_id: &str) -> Result<EventList> {
    if !(hop > 0.0 && hop.is_finite()) {
        return Err(Error::contract(format!("hop must be positive, got {hop}")));
    }
    let mut out = Vec::new();
    for c in 0..frames.classes() {
        let mut start: Option<usize> = None;
        for t in 0..=frames.frames() {
            let on = t < frames.frames() && frames.get(t, c) == 1;
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push(Event {
                        clip_id: clip_id.to_string(),
                        onset: s as f64 * hop,
                        offset: t as f64 * hop,
                        class_index: c,
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Whether `pred` hits `reference` within the collars.
pub fn events_match(pred: &Event, reference: &Event, collar: &CollarConfig) -> Result<bool> {
    if pred.class_index != reference.class_index {
        return Err(Error::contract(format!(
            "comparing class {} against class {}",
            pred.class_index, reference.class_index
        )));
    }
    if pred.clip_id != reference.clip_id {
        return Err(Error::contract(format!(
            "comparing clip {} against clip {}",
            pred.clip_id, reference.clip_id
        )));
    }
    Ok(collar.compatible(pred, reference))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScores {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ClassScores {
    pub fn add(&mut self, other: &ClassScores) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }

    pub fn references(&self) -> usize {
        self.true_positives + self.false_negatives
    }

    pub fn predictions(&self) -> usize {
        self.true_positives + self.false_positives
    }

    /// Classes with neither references nor predictions do not enter the
    /// macro average.
    pub fn included(&self) -> bool {
        self.references() + self.predictions() > 0
    }

    /// `2·TP / (2·TP + FP + FN)`, or 0 when nothing was counted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positives + self.false_positives + self.false_negatives;
        if denom == 0 {
            0.0
        } else {
            (2 * self.true_positives) as f64 / denom as f64
        }
    }
}

/// Size of a maximum matching in a bipartite graph given as an adjacency
/// matrix `left × right`, by augmenting paths.
pub fn max_bipartite_matching(adj: &[Vec<bool>], right: usize) -> usize {
    fn augment(
        u: usize,
        adj: &[Vec<bool>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for v in 0..owner.len() {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }

    let mut owner = vec![None; right];
    let mut size = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; right];
        if augment(u, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

fn score_cell(preds: &[&Event], refs: &[&Event], collar: &CollarConfig) -> ClassScores {
    let adj: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| refs.iter().map(|r| collar.compatible(p, r)).collect())
        .collect();
    let tp = max_bipartite_matching(&adj, refs.len());
    ClassScores {
        true_positives: tp,
        false_positives: preds.len() - tp,
        false_negatives: refs.len() - tp,
    }
}

/// Per-class tallies summed over clips. Events with a class index at or
/// beyond `num_classes` are a contract error.
pub fn match_events(
    preds: &[Event],
    refs: &[Event],
    collar: &CollarConfig,
    num_classes: usize,
) -> Result<Vec<ClassScores>> {
    type Cell<'a> = (Vec<&'a Event>, Vec<&'a Event>);
    let mut cells: BTreeMap<(&str, usize), Cell<'_>> = BTreeMap::new();
    for (events, is_pred) in [(preds, true), (refs, false)] {
        for e in events {
            if e.class_index >= num_classes {
                return Err(Error::contract(format!(
                    "event class {} outside 0..{num_classes}",
                    e.class_index
                )));
            }
            let cell = cells
                .entry((e.clip_id.as_str(), e.class_index))
                .or_default();
            if is_pred {
                cell.0.push(e);
            } else {
                cell.1.push(e);
            }
        }
    }
    let mut scores = vec![ClassScores::default(); num_classes];
    for ((_, class), (p, r)) in &cells {
        scores[*class].add(&score_cell(p, r, collar));
    }
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(flatten)]
    pub scores: ClassScores,
    pub f1: f64,
    pub included: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub classes: Vec<ClassReport>,
    /// Fraction in `[0, 1]`.
    pub macro_f1: f64,
}

impl ScoreReport {
    pub fn macro_f1_percent(&self) -> f64 {
        self.macro_f1 * 100.0
    }

    pub fn class_f1(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.f1).collect()
    }
}

/// Unweighted mean of per-class F1 over included classes. When no class is
/// included (nothing to detect, nothing detected) the score is 1.
pub fn macro_f1(scores: &[ClassScores]) -> ScoreReport {
    let classes: Vec<ClassReport> = scores
        .iter()
        .map(|s| ClassReport {
            scores: *s,
            f1: s.f1(),
            included: s.included(),
        })
        .collect();
    let included: Vec<f64> = classes
        .iter()
        .filter(|c| c.included)
        .map(|c| c.f1)
        .collect();
    let macro_f1 = if included.is_empty() {
        1.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    ScoreReport { classes, macro_f1 }
}

/// Convenience: match and score in one go.
pub fn evaluate_events(
    preds: &[Event],
    refs: &[Event],
    collar: &CollarConfig,
    num_classes: usize,
) -> Result<ScoreReport> {
    Ok(macro_f1(&match_events(preds, refs, collar, num_classes)?))
}
