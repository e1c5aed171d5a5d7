//! Synthetic posteriorgrams with known ground truth.
//!
//! Ground-truth events are drawn per class on the frame grid and rendered as
//! an ideal 0/1 posterior. The ideal track is then blurred at the event
//! boundaries (moving average, giving linear ramps), mapped onto the class's
//! active/inactive probability levels, perturbed with clipped Gaussian noise
//! and finally hit by impulse bursts that flip `p` to `1 - p`. Each class has
//! its own rates so the best threshold and window differ between classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, PosteriorClip, MAX_SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::metric::Event;
use crate::postproc::Posteriorgram;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub label: String,
    /// Mean number of events per clip (Poisson).
    pub event_rate: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub noise_sigma: f64,
    /// Per-frame probability that an impulse burst starts.
    pub flip_prob: f64,
    /// Longest burst, in frames.
    pub flip_burst: usize,
    /// Half-width of the boundary ramp, in frames.
    pub blur_frames: usize,
    pub active_level: f64,
    pub inactive_level: f64,
}

impl ClassProfile {
    /// Clean profile: binary posteriors, no corruption.
    pub fn clean(label: impl Into<String>) -> Self {
        ClassProfile {
            label: label.into(),
            event_rate: 2.0,
            min_duration: 0.8,
            max_duration: 3.0,
            noise_sigma: 0.0,
            flip_prob: 0.0,
            flip_burst: 1,
            blur_frames: 0,
            active_level: 1.0,
            inactive_level: 0.0,
        }
    }

    fn validate(&self, hop: f64) -> Result<()> {
        let bad = |m: String| {
            Err(Error::invalid(
                "synthetic class profile",
                format!("{}: {m}", self.label),
            ))
        };
        if !(self.event_rate >= 0.0 && self.event_rate.is_finite()) {
            return bad("event_rate must be non-negative".into());
        }
        if !(self.min_duration > 0.0 && self.max_duration >= self.min_duration) {
            return bad("durations must be positive with min <= max".into());
        }
        if self.min_duration < hop {
            return bad(format!(
                "min_duration {} is shorter than one frame",
                self.min_duration
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]".into());
        }
        if self.flip_burst == 0 {
            return bad("flip_burst must be at least 1".into());
        }
        for v in [self.active_level, self.inactive_level] {
            if !(0.0..=1.0).contains(&v) {
                return bad("levels must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_clips: usize,
    pub clip_seconds: f64,
    pub hop: f64,
    /// Minimum silence between two events of the same class.
    pub min_gap: f64,
    pub classes: Vec<ClassProfile>,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Ten classes cycling through the corruption profiles of
    /// [`SynthConfig::heterogeneous`].
    fn default() -> Self {
        let base = Self::heterogeneous(100, 0);
        let classes = (0..10)
            .map(|i| {
                let mut p = base.classes[i % base.classes.len()].clone();
                p.label = format!("class{i}");
                p
            })
            .collect();
        SynthConfig { classes, ..base }
    }
}

impl SynthConfig {
    /// Binary posteriors equal to the ground truth. Events and gaps are long
    /// enough to survive any window of the standard set.
    pub fn noiseless(num_clips: usize, num_classes: usize, seed: u64) -> Self {
        SynthConfig {
            num_clips,
            clip_seconds: MAX_SEGMENT_SECONDS,
            hop: 0.064,
            min_gap: 1.0,
            classes: (0..num_classes)
                .map(|i| ClassProfile::clean(format!("class{i}")))
                .collect(),
            seed,
        }
    }

    /// Four classes whose corruption calls for different settings:
    ///
    /// * `faint`: under-confident detector, needs a low threshold
    /// * `impulsive`: frequent multi-frame flips, needs a wide window
    /// * `short`: events of a few frames, erased by wide windows
    /// * `noisy_floor`: high background level, needs a high threshold
    pub fn heterogeneous(num_clips: usize, seed: u64) -> Self {
        let faint = ClassProfile {
            label: "faint".into(),
            event_rate: 1.5,
            min_duration: 0.6,
            max_duration: 2.5,
            noise_sigma: 0.06,
            flip_prob: 0.0,
            flip_burst: 1,
            blur_frames: 2,
            active_level: 0.38,
            inactive_level: 0.04,
        };
        let impulsive = ClassProfile {
            label: "impulsive".into(),
            event_rate: 1.5,
            min_duration: 1.0,
            max_duration: 3.0,
            noise_sigma: 0.05,
            flip_prob: 0.03,
            flip_burst: 4,
            blur_frames: 1,
            active_level: 0.9,
            inactive_level: 0.1,
        };
        let short = ClassProfile {
            label: "short".into(),
            event_rate: 2.5,
            min_duration: 0.19,
            max_duration: 0.32,
            noise_sigma: 0.04,
            flip_prob: 0.0,
            flip_burst: 1,
            blur_frames: 0,
            active_level: 0.85,
            inactive_level: 0.1,
        };
        let noisy_floor = ClassProfile {
            label: "noisy_floor".into(),
            event_rate: 1.5,
            min_duration: 0.8,
            max_duration: 3.0,
            noise_sigma: 0.08,
            flip_prob: 0.0,
            flip_burst: 1,
            blur_frames: 2,
            active_level: 0.95,
            inactive_level: 0.5,
        };
        SynthConfig {
            num_clips,
            clip_seconds: MAX_SEGMENT_SECONDS,
            hop: 0.064,
            min_gap: 0.8,
            classes: vec![faint, impulsive, short, noisy_floor],
            seed,
        }
    }

    pub fn num_frames(&self) -> usize {
        (self.clip_seconds / self.hop + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid(
                "synthetic config",
                "needs at least one class",
            ));
        }
        if !(self.hop > 0.0 && self.clip_seconds > 0.0) {
            return Err(Error::invalid(
                "synthetic config",
                "hop and clip length must be positive",
            ));
        }
        if self.clip_seconds > MAX_SEGMENT_SECONDS + 1e-9 {
            return Err(Error::invalid(
                "synthetic config",
                format!("clips longer than {MAX_SEGMENT_SECONDS} s"),
            ));
        }
        if self.num_frames() == 0 {
            return Err(Error::invalid(
                "synthetic config",
                "clip shorter than one frame",
            ));
        }
        if !(self.min_gap >= 0.0) {
            return Err(Error::invalid(
                "synthetic config",
                "min_gap must be non-negative",
            ));
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate(self.hop)?;
            if self.classes[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::invalid(
                    "synthetic config",
                    format!("duplicate label {}", c.label),
                ));
            }
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 50;

/// Frame spans `[start, end)` of one class in one clip.
fn draw_spans<R: Rng>(
    rng: &mut R,
    profile: &ClassProfile,
    frames: usize,
    hop: f64,
    gap: usize,
) -> Vec<(usize, usize)> {
    let count = if profile.event_rate > 0.0 {
        Poisson::new(profile.event_rate)
            .expect("positive rate")
            .sample(rng) as usize
    } else {
        0
    };
    let min_len = ((profile.min_duration / hop).round() as usize).max(1);
    let max_len = ((profile.max_duration / hop).round() as usize).max(min_len);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for _ in 0..count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let len = rng.random_range(min_len..=max_len);
            if len > frames {
                break;
            }
            let start = rng.random_range(0..=frames - len);
            let end = start + len;
            let clear = spans
                .iter()
                .all(|&(s, e)| end + gap <= s || e + gap <= start);
            if clear {
                spans.push((start, end));
                break;
            }
        }
    }
    spans.sort_unstable();
    spans
}

fn render(
    profile: &ClassProfile,
    spans: &[(usize, usize)],
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut ideal = vec![0.0; frames];
    for &(s, e) in spans {
        ideal[s..e].iter_mut().for_each(|v| *v = 1.0);
    }
    let b = profile.blur_frames;
    let shape: Vec<f64> = if b == 0 {
        ideal
    } else {
        let width = (2 * b + 1) as f64;
        (0..frames)
            .map(|t| {
                (t as isize - b as isize..=t as isize + b as isize)
                    .map(|i| ideal[i.clamp(0, frames as isize - 1) as usize])
                    .sum::<f64>()
                    / width
            })
            .collect()
    };
    let span = profile.active_level - profile.inactive_level;
    let mut p: Vec<f64> = shape
        .iter()
        .map(|x| profile.inactive_level + span * x)
        .collect();
    if profile.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, profile.noise_sigma).expect("valid sigma");
        for v in &mut p {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    if profile.flip_prob > 0.0 {
        let mut t = 0;
        while t < frames {
            if rng.random_bool(profile.flip_prob) {
                let len = rng.random_range(1..=profile.flip_burst);
                for v in p.iter_mut().skip(t).take(len) {
                    *v = 1.0 - *v;
                }
                t += len;
            } else {
                t += 1;
            }
        }
    }
    p
}

/// Generates a dataset; a pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = cfg.num_frames();
    let c = cfg.classes.len();
    let gap = (cfg.min_gap / cfg.hop).ceil() as usize;

    let mut clips = Vec::with_capacity(cfg.num_clips);
    let mut refs = Vec::new();
    for i in 0..cfg.num_clips {
        let clip_id = format!("clip{i:05}");
        let mut data = vec![0.0; frames * c];
        for (k, profile) in cfg.classes.iter().enumerate() {
            let spans = draw_spans(&mut rng, profile, frames, cfg.hop, gap);
            let column = render(profile, &spans, frames, &mut rng);
            for (t, v) in column.into_iter().enumerate() {
                data[t * c + k] = v;
            }
            for (s, e) in spans {
                refs.push(Event::new(
                    clip_id.clone(),
                    s as f64 * cfg.hop,
                    e as f64 * cfg.hop,
                    k,
                )?);
            }
        }
        let post = Posteriorgram::new(frames, c, data)?;
        clips.push(PosteriorClip::new(clip_id, cfg.hop, post)?);
    }
    let labels = cfg.classes.iter().map(|p| p.label.clone()).collect();
    Dataset::new(labels, clips, refs)
}
