//! Seeded stand-in corpus for desk-scale runs.
//!
//! Each "utterance" is a harmonic series on a speaker-specific fundamental
//! plus a little aspiration noise, shaped by a syllable-rate amplitude
//! envelope, over a white background floor whose level is drawn per clip
//! from `floor_db` (default 15 to 35 dB below the voice). The floor stands in
//! for room and microphone noise; varying it keeps high-band energy from
//! identifying the class on its own.
//!
//! Classes differ in spectral tilt (harmonic `k` has amplitude `k^-tilt`),
//! fundamental raise and envelope depth:
//!
//! | class     | tilt | f0 factor | envelope depth |
//! |-----------|------|-----------|----------------|
//! | Normal    | 1.8  | 1.00      | 0.60           |
//! | Shout-H   | 0.5  | 1.70      | 0.15           |
//! | Shout-L   | 1.0  | 1.35      | 0.35           |
//! | Shout-H/L | 0.75 | 1.50      | 0.25           |
//!
//! Binary corpora use Normal and Shout-H. Intensity corpora draw a score
//! `u` uniformly from [1, 7] and set `tilt = 2 - 0.25 (u - 1)`,
//! `f0 factor = 1 + 0.1 (u - 1)`, `depth = 0.6 - 0.07 (u - 1)`.
//! Every clip adds ±0.15 tilt jitter and ±4 % f0 jitter.
//! Audio is rendered at 48 kHz and passed through the same decimation and
//! peak normalization as recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{prepare_clip, LabeledClip};
use super::derive_seed;
use crate::audio_io::{rms, AudioClip, RECORDING_RATE};
use crate::corpus::ShoutClass;
use crate::error::{Error, Result};
use crate::models::TaskHead;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpus {
    pub speakers: usize,
    pub clips_per_speaker: usize,
    pub duration_secs: f64,
    pub seed: u64,
    /// Background floor range, dB below the voiced signal.
    pub floor_db: [f64; 2],
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            speakers: 10,
            clips_per_speaker: 20,
            duration_secs: 0.75,
            seed: 1,
            floor_db: [15.0, 35.0],
        }
    }
}

/// Peak of the aspiration noise that rides on the voice envelope.
const ASPIRATION: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Voice {
    tilt: f64,
    f0_factor: f64,
    depth: f64,
}

fn class_voice(class: ShoutClass) -> Voice {
    let (tilt, f0_factor, depth) = match class {
        ShoutClass::Normal => (1.8, 1.0, 0.6),
        ShoutClass::ShoutH => (0.5, 1.7, 0.15),
        ShoutClass::ShoutL => (1.0, 1.35, 0.35),
        ShoutClass::ShoutHL => (0.75, 1.5, 0.25),
    };
    Voice { tilt, f0_factor, depth }
}

fn intensity_voice(score: f64) -> Voice {
    let u = score - 1.0;
    Voice {
        tilt: 2.0 - 0.25 * u,
        f0_factor: 1.0 + 0.1 * u,
        depth: 0.6 - 0.07 * u,
    }
}

/// Renders one utterance at 48 kHz.
fn render(voice: Voice, base_f0: f64, duration: f64, floor_db: [f64; 2], rng: &mut ChaCha8Rng, id: String) -> Result<AudioClip> {
    let rate = f64::from(RECORDING_RATE);
    let n = (duration * rate).round() as usize;
    let tilt = voice.tilt + rng.gen_range(-0.15..0.15);
    let f0 = base_f0 * voice.f0_factor * rng.gen_range(0.96..1.04);
    let syllable_rate = rng.gen_range(3.0..5.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let n_harm = (7500.0 / f0).floor() as usize;
    // phasor recurrence per harmonic
    let mut re = Vec::with_capacity(n_harm);
    let mut im = Vec::with_capacity(n_harm);
    let mut rot = Vec::with_capacity(n_harm);
    let mut amp = Vec::with_capacity(n_harm);
    for k in 1..=n_harm {
        let phase = rng.gen_range(0.0..2.0 * PI);
        re.push(phase.cos());
        im.push(phase.sin());
        let w = 2.0 * PI * k as f64 * f0 / rate;
        rot.push((w.cos(), w.sin()));
        amp.push((k as f64).powf(-tilt));
    }
    let norm: f64 = amp.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let mut v = 0.0;
        for k in 0..n_harm {
            v += amp[k] * im[k];
            let (c, s) = rot[k];
            let (r0, i0) = (re[k], im[k]);
            re[k] = r0 * c - i0 * s;
            im[k] = r0 * s + i0 * c;
        }
        let env = 1.0 - voice.depth * 0.5 * (1.0 + (2.0 * PI * syllable_rate * t + env_phase).cos());
        let breath = ASPIRATION * rng.gen_range(-1.0..1.0);
        samples.push(0.5 * env * (v / norm + breath));
    }
    // uniform noise on [-a, a] has rms a / sqrt(3)
    let level = if floor_db[0] < floor_db[1] { rng.gen_range(floor_db[0]..floor_db[1]) } else { floor_db[0] };
    let a = 3f64.sqrt() * rms(&samples) * 10f64.powf(-level / 20.0);
    for s in &mut samples {
        *s += a * rng.gen_range(-1.0..1.0);
    }
    AudioClip::new(samples, RECORDING_RATE, id)
}

fn classes_for(task: TaskHead) -> Vec<ShoutClass> {
    match task {
        TaskHead::Binary => vec![ShoutClass::Normal, ShoutClass::ShoutH],
        TaskHead::FourClass => ShoutClass::ALL.to_vec(),
        TaskHead::Regression => vec![ShoutClass::ShoutH],
    }
}

/// Generates a balanced corpus for `task` (classes cycle within each speaker).
pub fn generate(spec: &SyntheticCorpus, task: TaskHead) -> Result<Vec<LabeledClip>> {
    if spec.speakers == 0 || spec.clips_per_speaker == 0 || !(spec.duration_secs > 0.0) {
        return Err(Error::Config("synthetic corpus needs speakers, clips and a duration".into()));
    }
    if !(spec.floor_db[0].is_finite() && spec.floor_db[1] >= spec.floor_db[0]) {
        return Err(Error::Config(format!("bad floor range {:?}", spec.floor_db)));
    }
    let classes = classes_for(task);
    let mut out = Vec::with_capacity(spec.speakers * spec.clips_per_speaker);
    for s in 0..spec.speakers {
        let mut speaker_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "speaker", s as u64));
        let female = s % 2 == 0;
        let base_f0 = if female {
            speaker_rng.gen_range(180.0..240.0)
        } else {
            speaker_rng.gen_range(100.0..150.0)
        };
        let speaker = format!("syn{s:02}{}", if female { 'f' } else { 'm' });
        for c in 0..spec.clips_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &speaker, c as u64));
            let class = classes[c % classes.len()];
            let (voice, intensity) = if task == TaskHead::Regression {
                let score = rng.gen_range(1.0..=7.0);
                (intensity_voice(score), Some(score))
            } else {
                (class_voice(class), None)
            };
            let id = format!("{speaker}_{c:03}_{}", class.label());
            let clip = prepare_clip(&render(voice, base_f0, spec.duration_secs, spec.floor_db, &mut rng, id)?)?;
            out.push(LabeledClip {
                clip,
                speaker: speaker.clone(),
                class,
                intensity,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::ANALYSIS_RATE;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticCorpus {
            speakers: 2,
            clips_per_speaker: 4,
            ..Default::default()
        };
        let a = generate(&spec, TaskHead::Binary).unwrap();
        assert_eq!(a, generate(&spec, TaskHead::Binary).unwrap());
        assert_eq!(a.len(), 8);
        assert_eq!(a.iter().filter(|c| c.class.is_shout()).count(), 4);
        assert!(a.iter().all(|c| c.clip.sample_rate == ANALYSIS_RATE && c.clip.peak() <= 1.0));
        let r = generate(&spec, TaskHead::Regression).unwrap();
        assert!(r.iter().all(|c| (1.0..=7.0).contains(&c.intensity.unwrap())));
    }

    #[test]
    fn shouts_have_flatter_spectra() {
        // high-band share of energy rises as tilt falls
        let rng = ChaCha8Rng::seed_from_u64(0);
        let share = |voice| {
            let c = render(voice, 150.0, 0.3, SyntheticCorpus::default().floor_db, &mut rng.clone(), "x".into()).unwrap();
            let an = crate::features::SpectralAnalyzer::new();
            let p = an.power_spectrum(&c.samples[..1024].iter().map(|v| v * 0.5).collect::<Vec<_>>()).unwrap();
            let total: f64 = p.iter().sum();
            p[p.len() / 8..].iter().sum::<f64>() / total
        };
        let normal = share(class_voice(ShoutClass::Normal));
        let shout = share(class_voice(ShoutClass::ShoutH));
        assert!(shout > 2.0 * normal, "{shout} vs {normal}");
    }
}
