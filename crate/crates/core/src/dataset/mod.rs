//! Posterior clips, reference annotations and their on-disk formats.

mod io;
mod synth;

use std::collections::HashMap;

pub use io::{
    load_annotations, load_dataset, load_manifest, load_params, read_events_tsv, save_params,
    write_dataset, write_events_tsv, ManifestEntry, ParamsFile,
};
pub use synth::{synth_generate, ClassProfile, SynthConfig};

use crate::error::{Error, Result};
use crate::metric::{Event, EventList};
use crate::postproc::Posteriorgram;

/// Longest clip accepted, in seconds.
pub const MAX_SEGMENT_SECONDS: f64 = 10.0;

/// One clip's posteriorgram and frame hop.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorClip {
    pub clip_id: String,
    pub hop: f64,
    pub posteriors: Posteriorgram,
}

impl PosteriorClip {
    pub fn new(clip_id: impl Into<String>, hop: f64, posteriors: Posteriorgram) -> Result<Self> {
        let clip_id = clip_id.into();
        if !(hop > 0.0 && hop.is_finite()) {
            return Err(Error::invalid(
                "clip",
                format!("{clip_id}: hop {hop} must be positive"),
            ));
        }
        let length = posteriors.frames() as f64 * hop;
        if length > MAX_SEGMENT_SECONDS + 1e-9 {
            return Err(Error::invalid(
                "clip",
                format!("{clip_id}: {length} s exceeds the {MAX_SEGMENT_SECONDS} s segment limit"),
            ));
        }
        Ok(PosteriorClip {
            clip_id,
            hop,
            posteriors,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.posteriors.frames()
    }

    pub fn num_classes(&self) -> usize {
        self.posteriors.classes()
    }
}

/// Clips in a stable order, their reference events and the class table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    class_labels: Vec<String>,
    clips: Vec<PosteriorClip>,
    references: Vec<EventList>,
}

impl Dataset {
    /// Groups `references` by clip; every reference must name a known clip
    /// and class.
    pub fn new(
        class_labels: Vec<String>,
        clips: Vec<PosteriorClip>,
        references: EventList,
    ) -> Result<Self> {
        if class_labels.is_empty() {
            return Err(Error::invalid("dataset", "class table is empty"));
        }
        let c = class_labels.len();
        let mut index = HashMap::new();
        for (i, clip) in clips.iter().enumerate() {
            if clip.num_classes() != c {
                return Err(Error::invalid(
                    "dataset",
                    format!(
                        "clip {} has {} classes, expected {c}",
                        clip.clip_id,
                        clip.num_classes()
                    ),
                ));
            }
            if index.insert(clip.clip_id.clone(), i).is_some() {
                return Err(Error::invalid(
                    "dataset",
                    format!("duplicate clip id {}", clip.clip_id),
                ));
            }
        }
        let mut grouped = vec![EventList::new(); clips.len()];
        for e in references {
            let Some(&i) = index.get(&e.clip_id) else {
                return Err(Error::invalid(
                    "dataset",
                    format!("annotation for unknown clip {}", e.clip_id),
                ));
            };
            if e.class_index >= c {
                return Err(Error::invalid(
                    "dataset",
                    format!("annotation class {} outside 0..{c}", e.class_index),
                ));
            }
            grouped[i].push(e);
        }
        for refs in &mut grouped {
            refs.sort_by(|a, b| {
                a.class_index
                    .cmp(&b.class_index)
                    .then(a.onset.total_cmp(&b.onset))
            });
        }
        Ok(Dataset {
            class_labels,
            clips,
            references: grouped,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn clips(&self) -> &[PosteriorClip] {
        &self.clips
    }

    pub fn clip(&self, i: usize) -> &PosteriorClip {
        &self.clips[i]
    }

    /// References of clip `i`, sorted by (class, onset).
    pub fn clip_references(&self, i: usize) -> &[Event] {
        &self.references[i]
    }

    /// All references, in clip order.
    pub fn references(&self) -> EventList {
        self.references.iter().flatten().cloned().collect()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }
}

/// `class0`, `class1`, … for datasets without a class table.
pub fn generic_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class{i}")).collect()
}
