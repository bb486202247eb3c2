//! Clip ingestion, 48 kHz to 16 kHz decimation, peak normalization and
//! noise mixing at a requested signal-to-noise ratio.
//!
//! The experiment pipeline applies these in a fixed order:
//! resample, peak-normalize the speech, then mix noise.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDING_RATE: u32 = 48_000;
pub const ANALYSIS_RATE: u32 = 16_000;

/// Corpus peak level of 30000 on the 16-bit scale.
pub const DEFAULT_TARGET_PEAK: f64 = 30_000.0 / 32_768.0;

pub const DECIMATION_TAPS: usize = 127;
pub const DECIMATION_CUTOFF_HZ: f64 = 7_600.0;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    /// Builds a clip, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    fn with_samples(&self, samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Reads a 16-bit little-endian PCM mono RIFF WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{} channels (only mono is accepted)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{:?} {}-bit samples (only 16-bit PCM is accepted)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    AudioClip::new(samples, spec.sample_rate, path.display().to_string())
}

/// Writes a clip as 16-bit PCM mono. Samples outside [-1, 1) saturate.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize_i16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

pub fn quantize_i16(sample: f64) -> i16 {
    (sample * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::Unsupported(format!("{}: unsupported WAV encoding", path.display())),
        hound::Error::InvalidSampleFormat => Error::Unsupported(format!("{}: invalid sample format", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Low-pass prototype used before 3:1 decimation: Blackman-windowed sinc,
/// unity DC gain.
pub fn decimation_filter() -> Vec<f64> {
    let fc = DECIMATION_CUTOFF_HZ / RECORDING_RATE as f64;
    let centre = (DECIMATION_TAPS - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..DECIMATION_TAPS)
        .map(|n| {
            let t = n as f64 - centre;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let x = 2.0 * PI * n as f64 / (DECIMATION_TAPS - 1) as f64;
            sinc * (0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos())
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Decimates a 48 kHz clip to 16 kHz; 16 kHz clips pass through unchanged.
///
/// The filter is applied zero-phase (centred, zero-padded at both ends), so
/// output sample `m` corresponds to input sample `3m` and the output has
/// `ceil(L / 3)` samples.
pub fn resample_to_16k(clip: &AudioClip) -> Result<AudioClip> {
    match clip.sample_rate {
        ANALYSIS_RATE => Ok(clip.clone()),
        RECORDING_RATE => {
            let taps = decimation_filter();
            let half = (DECIMATION_TAPS - 1) / 2;
            let x = &clip.samples;
            let out_len = x.len().div_ceil(3);
            let out = (0..out_len)
                .map(|m| {
                    let centre = 3 * m;
                    let mut acc = 0.0;
                    for (k, &h) in taps.iter().enumerate() {
                        // input index centre + half - k
                        let idx = centre as isize + half as isize - k as isize;
                        if idx >= 0 && (idx as usize) < x.len() {
                            acc += h * x[idx as usize];
                        }
                    }
                    acc
                })
                .collect();
            Ok(clip.with_samples(out, ANALYSIS_RATE))
        }
        other => Err(Error::Unsupported(format!(
            "sample rate {other} Hz (expected 48000 or 16000)"
        ))),
    }
}

/// Scales the clip by a single positive gain so that its peak equals `target_peak`.
pub fn peak_normalize(clip: &AudioClip, target_peak: f64) -> Result<AudioClip> {
    if !(target_peak.is_finite() && target_peak > 0.0) {
        return Err(Error::Config(format!("target peak {target_peak} must be positive")));
    }
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "clip {} is silent, cannot normalize",
            clip.source_id
        )));
    }
    let gain = target_peak / peak;
    let samples = clip.samples.iter().map(|s| s * gain).collect();
    Ok(clip.with_samples(samples, clip.sample_rate))
}

/// Requested signal-to-noise ratio; `Clean` is the noiseless condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Snr {
    Clean,
    Db(f64),
}

impl Snr {
    pub fn label(&self) -> String {
        match self {
            Snr::Clean => "clean".to_string(),
            Snr::Db(db) => format!("{db}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("clean") || t.eq_ignore_ascii_case("inf") || t == "∞" {
            return Ok(Snr::Clean);
        }
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Snr::Db)
            .ok_or_else(|| Error::Config(format!("invalid SNR {s:?}")))
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Snr::parse(s)
    }
}

/// The eight test conditions of the SNR sweep.
pub const PAPER_SNRS: [Snr; 8] = [
    Snr::Clean,
    Snr::Db(20.0),
    Snr::Db(10.0),
    Snr::Db(5.0),
    Snr::Db(0.0),
    Snr::Db(-5.0),
    Snr::Db(-10.0),
    Snr::Db(-20.0),
];

#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    Clip(&'a AudioClip),
    /// Pink noise synthesized on demand from a seed.
    Pink { seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec<'a> {
    pub snr: Snr,
    pub source: NoiseSource<'a>,
    /// Seeds the choice of noise segment.
    pub segment_seed: u64,
}

/// A mixture together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub clip: AudioClip,
    pub noise_gain: f64,
    pub segment_offset: usize,
    /// `noise_gain * segment`, kept so callers can measure the achieved SNR.
    pub scaled_noise: Vec<f64>,
}

/// Adds `g * noise_segment` to the speech with
/// `g = rms(speech) / rms(segment) * 10^(-snr/20)`.
///
/// The mixture is not re-limited, so it may exceed unit amplitude at low SNR.
pub fn mix_noise_at_snr(speech: &AudioClip, spec: &NoiseSpec<'_>) -> Result<Mixture> {
    let snr_db = match spec.snr {
        Snr::Clean => {
            return Ok(Mixture {
                clip: speech.clone(),
                noise_gain: 0.0,
                segment_offset: 0,
                scaled_noise: vec![0.0; speech.len()],
            })
        }
        Snr::Db(db) if db.is_finite() => db,
        Snr::Db(db) => return Err(Error::Config(format!("SNR {db} dB is not finite"))),
    };
    let generated;
    let noise: &AudioClip = match spec.source {
        NoiseSource::Clip(c) => c,
        NoiseSource::Pink { seed } => {
            generated = pink_noise(speech.len(), speech.sample_rate, seed);
            &generated
        }
    };
    if noise.sample_rate != speech.sample_rate {
        return Err(Error::Unsupported(format!(
            "noise rate {} Hz differs from speech rate {} Hz",
            noise.sample_rate, speech.sample_rate
        )));
    }
    if noise.len() < speech.len() {
        return Err(Error::DegenerateInput(format!(
            "noise has {} samples, speech needs {}",
            noise.len(),
            speech.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.segment_seed);
    let offset = rng.gen_range(0..=noise.len() - speech.len());
    let segment = &noise.samples[offset..offset + speech.len()];
    let noise_rms = rms(segment);
    if noise_rms == 0.0 {
        return Err(Error::DegenerateInput("noise segment has zero RMS".into()));
    }
    let speech_rms = speech.rms();
    let gain = speech_rms / noise_rms * 10f64.powf(-snr_db / 20.0);
    let scaled_noise: Vec<f64> = segment.iter().map(|n| gain * n).collect();
    let samples = speech
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(s, n)| s + n)
        .collect();
    Ok(Mixture {
        clip: speech.with_samples(samples, speech.sample_rate),
        noise_gain: gain,
        segment_offset: offset,
        scaled_noise,
    })
}

/// Seeded pink (1/f) noise, peak-scaled to 0.5.
///
/// Uses Paul Kellet's seven-pole approximation driven by uniform white noise.
pub fn pink_noise(len: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let white: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let pink = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out.push(pink);
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|s| *s *= 0.5 / peak);
    }
    AudioClip {
        samples: out,
        sample_rate,
        source_id: format!("pink-noise-seed-{seed}"),
    }
}

/// Writes `secs` seconds of seeded pink noise as a 16-bit WAV file.
pub fn write_pink_noise_wav(path: impl AsRef<Path>, secs: f64, sample_rate: u32, seed: u64) -> Result<()> {
    let len = (secs * sample_rate as f64).round() as usize;
    write_wav(path, &pink_noise(len, sample_rate, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, rate: u32) -> AudioClip {
        AudioClip::new(samples, rate, "t").unwrap()
    }

    fn naive_dft_magnitudes(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn load_scales_int16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let c = load_wav(&p).unwrap();
        assert_eq!(c.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(c.sample_rate, 48_000);
    }

    #[test]
    fn load_rejects_8bit_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        for (name, channels, bits) in [("8.wav", 1u16, 8u16), ("st.wav", 2, 16)] {
            let p = dir.path().join(name);
            let spec = hound::WavSpec {
                channels,
                sample_rate: 16_000,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..4 {
                if bits == 8 {
                    w.write_sample(3i8).unwrap();
                } else {
                    w.write_sample(3i16).unwrap();
                }
            }
            w.finalize().unwrap();
            assert!(matches!(load_wav(&p), Err(Error::Unsupported(_))), "{name}");
        }
    }

    #[test]
    fn load_rejects_garbage_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFX\0\0\0\0nonsense").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));
    }

    #[test]
    fn resample_length_and_passthrough() {
        let c = clip(vec![0.1; 48_000], 48_000);
        let r = resample_to_16k(&c).unwrap();
        assert_eq!(r.len(), 16_000);
        assert_eq!(r.sample_rate, 16_000);
        let c16 = clip(vec![0.25, -0.5, 0.125], 16_000);
        assert_eq!(resample_to_16k(&c16).unwrap(), c16);
        assert!(matches!(
            resample_to_16k(&clip(vec![0.0; 10], 44_100)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let x: Vec<f64> = (0..4800)
            .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 48_000.0).sin())
            .collect();
        let r = resample_to_16k(&clip(x, 48_000)).unwrap();
        // 1600 samples at 16 kHz -> 10 Hz bins
        let mags = naive_dft_magnitudes(&r.samples);
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let expected = 1000.0 / (16_000.0 / r.len() as f64);
        assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}");
    }

    #[test]
    fn resampler_rejects_above_cutoff() {
        // 12 kHz aliases to 4 kHz after naive decimation; the filter must remove it
        let x: Vec<f64> = (0..4800)
            .map(|n| 0.5 * (2.0 * PI * 12_000.0 * n as f64 / 48_000.0).sin())
            .collect();
        let r = resample_to_16k(&clip(x, 48_000)).unwrap();
        let interior = &r.samples[100..r.len() - 100];
        assert!(rms(interior) < 1e-3, "leak {}", rms(interior));
    }

    #[test]
    fn peak_normalize_gain() {
        let p = 15_000.0 / 32_768.0;
        let c = clip(vec![p, -p / 2.0, 0.1], 16_000);
        let n = peak_normalize(&c, DEFAULT_TARGET_PEAK).unwrap();
        assert!((n.samples[0] / c.samples[0] - 2.0).abs() < 1e-12);
        assert!((n.peak() - DEFAULT_TARGET_PEAK).abs() < 1e-9);
        let again = peak_normalize(&n, DEFAULT_TARGET_PEAK).unwrap();
        for (a, b) in again.samples.iter().zip(&n.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            peak_normalize(&clip(vec![0.0; 8], 16_000), 0.9),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn mixing_gain_examples() {
        // rms 0.1 for both: alternating +-0.1
        let speech = clip((0..1000).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect(), 16_000);
        let noise = speech.clone();
        for (snr, g) in [(0.0, 1.0), (20.0, 0.1)] {
            let m = mix_noise_at_snr(
                &speech,
                &NoiseSpec {
                    snr: Snr::Db(snr),
                    source: NoiseSource::Clip(&noise),
                    segment_seed: 1,
                },
            )
            .unwrap();
            assert!((m.noise_gain - g).abs() < 1e-12);
        }
        let clean = mix_noise_at_snr(
            &speech,
            &NoiseSpec {
                snr: Snr::Clean,
                source: NoiseSource::Clip(&noise),
                segment_seed: 1,
            },
        )
        .unwrap();
        assert_eq!(clean.clip, speech);
    }

    #[test]
    fn mixing_errors() {
        let speech = clip(vec![0.1; 100], 16_000);
        let silent = clip(vec![0.0; 200], 16_000);
        let spec = NoiseSpec {
            snr: Snr::Db(5.0),
            source: NoiseSource::Clip(&silent),
            segment_seed: 0,
        };
        assert!(matches!(mix_noise_at_snr(&speech, &spec), Err(Error::DegenerateInput(_))));
        let other_rate = clip(vec![0.1; 200], 48_000);
        let spec = NoiseSpec {
            source: NoiseSource::Clip(&other_rate),
            ..spec
        };
        assert!(matches!(mix_noise_at_snr(&speech, &spec), Err(Error::Unsupported(_))));
    }

    #[test]
    fn segment_choice_is_seeded() {
        let speech = clip(vec![0.1; 100], 16_000);
        let noise = pink_noise(5000, 16_000, 3);
        let mk = |seed| {
            mix_noise_at_snr(
                &speech,
                &NoiseSpec {
                    snr: Snr::Db(0.0),
                    source: NoiseSource::Clip(&noise),
                    segment_seed: seed,
                },
            )
            .unwrap()
        };
        assert_eq!(mk(7).segment_offset, mk(7).segment_offset);
        assert_eq!(mk(7).clip, mk(7).clip);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let c = clip(
            [-32768i32, -1, 0, 1, 12345, 32767]
                .iter()
                .map(|&v| v as f64 / 32_768.0)
                .collect(),
            16_000,
        );
        write_wav(&p, &c).unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, c.samples);
    }

    #[test]
    fn snr_parsing() {
        assert_eq!(Snr::parse("clean").unwrap(), Snr::Clean);
        assert_eq!(Snr::parse("-10").unwrap(), Snr::Db(-10.0));
        assert!(Snr::parse("loud").is_err());
    }
}

impl From<Snr> for String {
    fn from(v: Snr) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for Snr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
