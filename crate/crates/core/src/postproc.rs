//! Thresholding, median filtering and event decoding.
//!
//! The stack runs per class: binarize the class column with a strict
//! `p > threshold`, smooth the decisions with a centered median window
//! (edges replicate the first and last frame), then decode runs into events.
//! Class `c` only ever looks at column `c` and its own `(threshold, window)`.

use serde::{Deserialize, Serialize};

use crate::dataset::PosteriorClip;
use crate::error::{Error, Result};
use crate::metric::{decode_events, BinaryFrames, EventList};

/// Median window sizes the stack accepts.
pub const WINDOW_SET: [usize; 10] = [3, 5, 7, 9, 11, 13, 15, 17, 19, 21];

/// Threshold and window of the fixed baseline setting.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 7;

/// Frame-level class probabilities, `frames × classes`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    frames: usize,
    classes: usize,
    data: Vec<f64>,
}

impl Posteriorgram {
    pub fn new(frames: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::dim("posteriorgram needs at least one class"));
        }
        if data.len() != frames * classes {
            return Err(Error::dim(format!(
                "{frames}x{classes} posteriorgram needs {} values, got {}",
                frames * classes,
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::contract(format!(
                "probability {v} at frame {}, class {} is outside [0, 1]",
                i / classes,
                i % classes
            )));
        }
        Ok(Posteriorgram {
            frames,
            classes,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.classes + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, c)).collect()
    }
}

/// Per-class thresholds and median windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostProcParams {
    pub thresholds: Vec<f64>,
    pub window_sizes: Vec<usize>,
}

impl PostProcParams {
    pub fn new(thresholds: Vec<f64>, window_sizes: Vec<usize>) -> Result<Self> {
        let p = PostProcParams {
            thresholds,
            window_sizes,
        };
        p.validate()?;
        Ok(p)
    }

    /// The same pair for every class.
    pub fn uniform(num_classes: usize, threshold: f64, window: usize) -> Result<Self> {
        Self::new(vec![threshold; num_classes], vec![window; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.len() != self.window_sizes.len() {
            return Err(Error::invalid(
                "parameters",
                format!(
                    "{} thresholds and {} windows",
                    self.thresholds.len(),
                    self.window_sizes.len()
                ),
            ));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::invalid(
                "parameters",
                format!("threshold {t} is outside (0, 1)"),
            ));
        }
        if let Some(w) = self.window_sizes.iter().find(|w| !WINDOW_SET.contains(w)) {
            return Err(Error::invalid(
                "parameters",
                format!("window {w} is not one of {WINDOW_SET:?}"),
            ));
        }
        Ok(())
    }

    /// `threshold=0.5,window=7` when one pair is shared by all classes.
    pub fn label(&self, median: bool) -> String {
        let t0 = self.thresholds[0];
        let w0 = self.window_sizes[0];
        let shared_t = self.thresholds.iter().all(|t| *t == t0);
        let shared_w = self.window_sizes.iter().all(|w| *w == w0);
        match (shared_t, shared_w || !median) {
            (true, true) if median => format!("threshold={t0},window={w0}"),
            (true, true) => format!("threshold={t0},no-median"),
            _ if median => "class-dependent".to_string(),
            _ => "class-dependent,no-median".to_string(),
        }
    }
}

/// Threshold 0.5 and window 7 for every class.
pub fn default_params(num_classes: usize) -> Result<PostProcParams> {
    if num_classes == 0 {
        return Err(Error::contract("need at least one class"));
    }
    PostProcParams::uniform(num_classes, DEFAULT_THRESHOLD, DEFAULT_WINDOW)
}

/// Candidate values the policy heads and the grid search choose from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub thresholds: Vec<f64>,
    pub windows: Vec<usize>,
    pub num_classes: usize,
    pub class_dependent: bool,
}

impl ParamGrid {
    /// Thresholds `0.05, 0.10, …, 0.95` and all windows of [`WINDOW_SET`].
    pub fn default_for(num_classes: usize) -> Self {
        ParamGrid {
            thresholds: default_thresholds(),
            windows: WINDOW_SET.to_vec(),
            num_classes,
            class_dependent: true,
        }
    }

    pub fn new(
        thresholds: Vec<f64>,
        windows: Vec<usize>,
        num_classes: usize,
        class_dependent: bool,
    ) -> Result<Self> {
        let g = ParamGrid {
            thresholds,
            windows,
            num_classes,
            class_dependent,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_class_dependent(mut self, class_dependent: bool) -> Self {
        self.class_dependent = class_dependent;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("grid", "needs at least one class"));
        }
        if self.thresholds.is_empty() || self.windows.is_empty() {
            return Err(Error::invalid(
                "grid",
                "threshold and window lists must be non-empty",
            ));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid("grid", "thresholds must lie in (0, 1)"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "grid",
                "thresholds must be strictly increasing",
            ));
        }
        if self.windows.iter().any(|w| !WINDOW_SET.contains(w)) {
            return Err(Error::invalid(
                "grid",
                format!("windows must come from {WINDOW_SET:?}"),
            ));
        }
        if self.windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "grid",
                "windows must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Number of categorical choices per head: one per class when class
    /// dependent, otherwise one.
    pub fn heads_per_kind(&self) -> usize {
        if self.class_dependent {
            self.num_classes
        } else {
            1
        }
    }
}

pub fn default_thresholds() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// `1` where `p > threshold` for that column.
pub fn apply_thresholds(posteriors: &Posteriorgram, thresholds: &[f64]) -> Result<BinaryFrames> {
    if thresholds.len() != posteriors.classes() {
        return Err(Error::dim(format!(
            "{} thresholds for {} classes",
            thresholds.len(),
            posteriors.classes()
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::contract(format!("threshold {t} is outside (0, 1)")));
    }
    let mut out = BinaryFrames::zeros(posteriors.frames(), posteriors.classes());
    for t in 0..posteriors.frames() {
        for (c, th) in thresholds.iter().enumerate() {
            out.set(t, c, posteriors.get(t, c) > *th);
        }
    }
    Ok(out)
}

/// Centered binary median filter with replicate padding.
pub fn median_filter_column(column: &[u8], window: usize) -> Result<Vec<u8>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    if let Some(v) = column.iter().find(|v| **v > 1) {
        return Err(Error::contract(format!("value {v} is not binary")));
    }
    let n = column.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = window / 2;
    let at = |i: isize| column[i.clamp(0, n as isize - 1) as usize] as usize;

    let mut ones: usize = (-(half as isize)..=half as isize).map(at).sum();
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        out.push((ones > half) as u8);
        ones += at(t + half as isize + 1);
        ones -= at(t - half as isize);
    }
    Ok(out)
}

/// Whether the stack median-filters before decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackOptions {
    pub median: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions { median: true }
    }
}

/// Events of a single class under `(threshold, window)`.
pub fn apply_class(
    clip: &PosteriorClip,
    class: usize,
    threshold: f64,
    window: usize,
    opts: StackOptions,
) -> Result<EventList> {
    let post = &clip.posteriors;
    if class >= post.classes() {
        return Err(Error::dim(format!(
            "class {class} outside 0..{}",
            post.classes()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!(
            "threshold {threshold} is outside (0, 1)"
        )));
    }
    let mut col: Vec<u8> = (0..post.frames())
        .map(|t| (post.get(t, class) > threshold) as u8)
        .collect();
    if opts.median {
        col = median_filter_column(&col, window)?;
    }
    let frames = BinaryFrames::new(col.len(), 1, col)?;
    let mut events = decode_events(&frames, clip.hop, &clip.clip_id)?;
    for e in &mut events {
        e.class_index = class;
    }
    Ok(events)
}

/// Threshold, filter and decode a whole clip.
pub fn apply_stack(clip: &PosteriorClip, params: &PostProcParams) -> Result<EventList> {
    apply_stack_with(clip, params, StackOptions::default())
}

pub fn apply_stack_with(
    clip: &PosteriorClip,
    params: &PostProcParams,
    opts: StackOptions,
) -> Result<EventList> {
    if params.num_classes() != clip.num_classes() {
        return Err(Error::dim(format!(
            "parameters for {} classes, clip {} has {}",
            params.num_classes(),
            clip.clip_id,
            clip.num_classes()
        )));
    }
    let mut binary = apply_thresholds(&clip.posteriors, &params.thresholds)?;
    if opts.median {
        for (c, &w) in params.window_sizes.iter().enumerate() {
            let filtered = median_filter_column(&binary.column(c), w)?;
            binary.set_column(c, &filtered);
        }
    }
    decode_events(&binary, clip.hop, &clip.clip_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Event;

    fn clip_from_column(values: &[f64], hop: f64) -> PosteriorClip {
        PosteriorClip::new(
            "c",
            hop,
            Posteriorgram::new(values.len(), 1, values.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn thresholds_are_strict() {
        let p = Posteriorgram::new(3, 1, vec![0.4, 0.6, 0.5]).unwrap();
        assert_eq!(apply_thresholds(&p, &[0.5]).unwrap().data(), &[0, 1, 0]);
        let p = Posteriorgram::new(2, 1, vec![0.01, 0.3]).unwrap();
        assert_eq!(apply_thresholds(&p, &[1e-9]).unwrap().data(), &[1, 1]);
        let p = Posteriorgram::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(apply_thresholds(&p, &[0.3, 0.7]).unwrap().data(), &[1, 0]);
    }

    #[test]
    fn out_of_range_probability() {
        assert!(matches!(
            Posteriorgram::new(1, 1, vec![1.2]),
            Err(Error::Contract(_))
        ));
        assert!(Posteriorgram::new(1, 1, vec![f64::NAN]).is_err());
        let p = Posteriorgram::new(1, 1, vec![0.2]).unwrap();
        assert!(apply_thresholds(&p, &[1.0]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_filter_column(&[0, 1, 0, 0], 3).unwrap(),
            vec![0, 0, 0, 0]
        );
        for w in [3, 5, 21] {
            assert_eq!(
                median_filter_column(&[1, 1, 1, 1], w).unwrap(),
                vec![1, 1, 1, 1]
            );
        }
        assert_eq!(
            median_filter_column(&[1, 1, 0, 1, 1], 3).unwrap(),
            vec![1, 1, 1, 1, 1]
        );
    }

    #[test]
    fn median_rejects_even_window() {
        assert!(matches!(
            median_filter_column(&[0, 1], 4),
            Err(Error::Contract(_))
        ));
        assert!(median_filter_column(&[0, 1], 1).is_err());
    }

    #[test]
    fn replicate_padding_keeps_edge_runs() {
        // a two-frame run at the start survives a window of 3 thanks to padding
        assert_eq!(
            median_filter_column(&[1, 1, 0, 0, 0], 3).unwrap(),
            vec![1, 1, 0, 0, 0]
        );
    }

    #[test]
    fn clean_step_recovers_event() {
        let clip = clip_from_column(&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0], 0.5);
        let ev = apply_stack(&clip, &PostProcParams::uniform(1, 0.5, 3).unwrap()).unwrap();
        assert_eq!(ev, vec![Event::new("c", 1.0, 3.0, 0).unwrap()]);
    }

    #[test]
    fn dropout_gap_is_filled() {
        let clip = clip_from_column(&[0.0, 0.9, 0.9, 0.1, 0.9, 0.9, 0.0], 1.0);
        let ev = apply_stack(&clip, &PostProcParams::uniform(1, 0.5, 3).unwrap()).unwrap();
        assert_eq!(ev, vec![Event::new("c", 1.0, 6.0, 0).unwrap()]);
        let raw = apply_stack_with(
            &clip,
            &PostProcParams::uniform(1, 0.5, 3).unwrap(),
            StackOptions { median: false },
        )
        .unwrap();
        assert_eq!(raw.len(), 2);
    }

    #[test]
    fn wide_window_erases_short_event() {
        let mut v = vec![0.0; 20];
        v[9] = 1.0;
        v[10] = 1.0;
        let clip = clip_from_column(&v, 0.1);
        let ev = apply_stack(&clip, &PostProcParams::uniform(1, 0.5, 5).unwrap()).unwrap();
        assert!(ev.is_empty());
        let ev = apply_stack(&clip, &PostProcParams::uniform(1, 0.5, 3).unwrap()).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn defaults() {
        let p = default_params(10).unwrap();
        assert_eq!(p.thresholds, vec![0.5; 10]);
        assert_eq!(p.window_sizes, vec![7; 10]);
        let p = default_params(1).unwrap();
        assert_eq!((p.thresholds, p.window_sizes), (vec![0.5], vec![7]));
        assert!(default_params(0).is_err());
        assert_eq!(
            default_params(3).unwrap().label(true),
            "threshold=0.5,window=7"
        );
        assert_eq!(
            default_params(3).unwrap().label(false),
            "threshold=0.5,no-median"
        );
    }

    #[test]
    fn param_validation() {
        assert!(PostProcParams::new(vec![0.5], vec![4]).is_err());
        assert!(PostProcParams::new(vec![0.0], vec![3]).is_err());
        assert!(PostProcParams::new(vec![1.0], vec![3]).is_err());
        assert!(PostProcParams::new(vec![0.5, 0.5], vec![3]).is_err());
        assert!(PostProcParams::new(vec![0.5], vec![23]).is_err());
    }

    #[test]
    fn default_grid() {
        let g = ParamGrid::default_for(10);
        g.validate().unwrap();
        assert_eq!(g.thresholds.len(), 19);
        assert_eq!(g.thresholds[0], 0.05);
        assert_eq!(g.thresholds[9], 0.5);
        assert_eq!(g.thresholds[18], 0.95);
        assert_eq!(g.windows, WINDOW_SET.to_vec());
        assert!(ParamGrid::new(vec![0.5, 0.4], vec![3], 1, true).is_err());
        assert!(ParamGrid::new(vec![0.5], vec![5, 3], 1, true).is_err());
        assert!(ParamGrid::new(vec![], vec![3], 1, true).is_err());
    }
}
