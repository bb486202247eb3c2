use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{load_wav, peak_normalize, resample_to_16k, AudioClip, ANALYSIS_RATE, DEFAULT_TARGET_PEAK, RECORDING_RATE};
use crate::corpus::{ShoutClass, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureBlock, FeatureKind, Normalizer, SpectralAnalyzer};
use crate::models::TaskHead;
use crate::neural::Target;

/// A 16 kHz, peak-normalized clip with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub speaker: String,
    pub class: ShoutClass,
    pub intensity: Option<f64>,
}

impl LabeledClip {
    pub fn target(&self, task: TaskHead) -> Result<Target> {
        Ok(match task {
            TaskHead::Binary => Target::Values(vec![if self.class.is_shout() { 1.0 } else { 0.0 }]),
            TaskHead::FourClass => Target::Class(self.class.index()),
            TaskHead::Regression => Target::Values(vec![self.intensity.ok_or_else(|| {
                Error::Config(format!("{} has no intensity label", self.clip.source_id))
            })?]),
        })
    }

    /// Whether the clip takes part in `task` (regression uses shouted clips only).
    pub fn usable_for(&self, task: TaskHead) -> bool {
        task != TaskHead::Regression || self.intensity.is_some()
    }
}

/// Brings a recording to the analysis rate and the common peak level.
pub fn prepare_clip(clip: &AudioClip) -> Result<AudioClip> {
    let resampled = match clip.sample_rate {
        RECORDING_RATE => resample_to_16k(clip)?,
        ANALYSIS_RATE => clip.clone(),
        other => {
            return Err(Error::Unsupported(format!(
                "{}: sample rate {other} Hz (expected {RECORDING_RATE} or {ANALYSIS_RATE})",
                clip.source_id
            )))
        }
    };
    peak_normalize(&resampled, DEFAULT_TARGET_PEAK)
}

/// Loads every manifest entry, resolving relative paths against `root`.
pub fn load_manifest_clips(records: &[UtteranceRecord], root: &Path) -> Result<Vec<LabeledClip>> {
    records
        .iter()
        .map(|r| {
            let path = root.join(&r.path);
            let clip = prepare_clip(&load_wav(&path)?)?;
            Ok(LabeledClip {
                clip,
                speaker: r.speaker_id.clone(),
                class: r.class,
                intensity: r.intensity,
            })
        })
        .collect()
}

/// One network input (one block per feature kind) with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<FeatureBlock>,
    pub target: Target,
    /// Index of the source clip in the list it was built from.
    pub clip: usize,
}

impl Example {
    pub fn input_refs(&self) -> Vec<&FeatureBlock> {
        self.inputs.iter().collect()
    }
}

/// Raw (unnormalized) blocks of every kind for one clip, indexed `[kind][block]`.
pub fn clip_blocks(analyzer: &SpectralAnalyzer, clip: &AudioClip, kinds: &[FeatureKind]) -> Result<Vec<Vec<FeatureBlock>>> {
    kinds.iter().map(|&k| analyzer.assemble_blocks(clip, k, None)).collect()
}

/// Z-score statistics per kind from the given clips.
pub fn fit_normalizers(raw: &[Vec<Vec<FeatureBlock>>], kinds: &[FeatureKind]) -> Result<Vec<Normalizer>> {
    (0..kinds.len())
        .map(|k| Normalizer::fit(raw.iter().flat_map(|clip| clip[k].iter())))
        .collect()
}

/// Normalized examples from raw per-clip blocks, one per block index.
pub fn build_examples(
    raw: &[Vec<Vec<FeatureBlock>>],
    targets: &[Target],
    normalizers: &[Normalizer],
) -> Vec<Example> {
    let mut out = Vec::new();
    for (clip, (kinds, target)) in raw.iter().zip(targets).enumerate() {
        let n_blocks = kinds.iter().map(Vec::len).min().unwrap_or(0);
        for b in 0..n_blocks {
            out.push(Example {
                inputs: kinds.iter().zip(normalizers).map(|(blocks, n)| n.apply(&blocks[b])).collect(),
                target: target.clone(),
                clip,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalUnit {
    /// Block outputs averaged into one decision per clip.
    Clip,
    /// Every block scored on its own.
    Block,
}
