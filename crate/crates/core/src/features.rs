//! Frame-level spectral and cepstral features and 20-frame feature blocks.
//!
//! Every clip is cut into 1024-point Hamming-windowed frames with a hop of
//! 512 points (64 ms / 32 ms at 16 kHz). Per frame we compute one of:
//!
//! | kind              | values per frame                                     |
//! |-------------------|------------------------------------------------------|
//! | `Spectrogram`     | 512 log power bins (bins 1..=512, DC dropped)        |
//! | `Cepstrogram`     | 512 real-cepstrum coefficients (quefrency 0..512)    |
//! | `MelSpectrogram`  | 30 log mel-filter energies                           |
//! | `Tmfcc`           | 30 MFCCs (DCT-II of 40 log mel energies)             |
//! | `MfccDeltaDelta`  | 30 MFCCs followed by their 30 second-order deltas    |
//!
//! A real 1024-point transform has 513 unique bins; the spectrum keeps bins
//! 1 through 512, i.e. it drops the DC bin and keeps Nyquist.
//!
//! Powers are floored at [`LOG_FLOOR`] before any logarithm.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
pub use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioClip, ANALYSIS_RATE};
use crate::error::{Error, Result};

pub const FRAME_LEN: usize = 1024;
pub const HOP_LEN: usize = 512;
pub const BLOCK_FRAMES: usize = 20;
pub const SPECTRUM_BINS: usize = 512;
pub const CEPSTRUM_COEFFS: usize = 512;
pub const MEL_SPECTROGRAM_FILTERS: usize = 30;
pub const MFCC_FILTERS: usize = 40;
pub const MFCC_COEFFS: usize = 30;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureKind {
    Spectrogram,
    Cepstrogram,
    MelSpectrogram,
    Tmfcc,
    MfccDeltaDelta,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Spectrogram,
        FeatureKind::Cepstrogram,
        FeatureKind::MelSpectrogram,
        FeatureKind::Tmfcc,
        FeatureKind::MfccDeltaDelta,
    ];

    /// Values per frame.
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Spectrogram => SPECTRUM_BINS,
            FeatureKind::Cepstrogram => CEPSTRUM_COEFFS,
            FeatureKind::MelSpectrogram => MEL_SPECTROGRAM_FILTERS,
            FeatureKind::Tmfcc => MFCC_COEFFS,
            FeatureKind::MfccDeltaDelta => 2 * MFCC_COEFFS,
        }
    }

    pub fn is_high_dim(self) -> bool {
        matches!(self, FeatureKind::Spectrogram | FeatureKind::Cepstrogram)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Spectrogram => "spectrogram",
            FeatureKind::Cepstrogram => "cepstrogram",
            FeatureKind::MelSpectrogram => "mel-spectrogram",
            FeatureKind::Tmfcc => "tmfcc",
            FeatureKind::MfccDeltaDelta => "mfcc-delta-delta",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Spectrogram => 0,
            FeatureKind::Cepstrogram => 1,
            FeatureKind::MelSpectrogram => 2,
            FeatureKind::Tmfcc => 3,
            FeatureKind::MfccDeltaDelta => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown feature kind code {code}")))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "mel" | "melspectrogram" => Some(FeatureKind::MelSpectrogram),
                "mfcc-dd" | "mfccs-dd" => Some(FeatureKind::MfccDeltaDelta),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}

/// Hamming-windowed frames, stored row-major (`n_frames` rows of 1024).
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    pub data: Vec<f64>,
    pub n_frames: usize,
}

impl FrameMatrix {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(FRAME_LEN)
    }
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        (len - FRAME_LEN) / HOP_LEN + 1
    }
}

pub fn frame_signal(clip: &AudioClip) -> Result<FrameMatrix> {
    if clip.sample_rate != ANALYSIS_RATE {
        return Err(Error::Unsupported(format!(
            "framing expects {ANALYSIS_RATE} Hz audio, got {} Hz",
            clip.sample_rate
        )));
    }
    let n_frames = frame_count(clip.len());
    if n_frames == 0 {
        return Err(Error::DegenerateInput(format!(
            "clip {} has {} samples, shorter than one {FRAME_LEN}-point frame",
            clip.source_id,
            clip.len()
        )));
    }
    let window = hamming(FRAME_LEN);
    let mut data = Vec::with_capacity(n_frames * FRAME_LEN);
    for t in 0..n_frames {
        let start = t * HOP_LEN;
        data.extend(
            clip.samples[start..start + FRAME_LEN]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w),
        );
    }
    Ok(FrameMatrix { data, n_frames })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale over the 512-bin spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_filters` rows of 512 weights.
    pub weights: Vec<Vec<f64>>,
    pub centres_hz: Vec<f64>,
}

impl MelFilterbank {
    /// Filters with edges equally spaced in mel between 0 Hz and `max_hz`,
    /// evaluated at the centre frequency of spectrum bins 1..=512.
    pub fn new(n_filters: usize, max_hz: f64) -> Self {
        let top = hz_to_mel(max_hz);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bin_hz = ANALYSIS_RATE as f64 / FRAME_LEN as f64;
        let weights = (0..n_filters)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (1..=SPECTRUM_BINS)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let rise = (f - lo) / (c - lo);
                        let fall = (hi - f) / (hi - c);
                        rise.min(fall).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            centres_hz: edges[1..=n_filters].to_vec(),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.weights.len()
    }

    /// `log(max(energy, floor))` for each filter.
    pub fn log_energies(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }
}

/// Orthonormal DCT-II matrix, `n_out` rows of `n_in`.
#[derive(Debug, Clone)]
pub struct DctMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl DctMatrix {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let n = n_in as f64;
        let rows = (0..n_out)
            .map(|k| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                (0..n_in)
                    .map(|i| scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Forward DFT of a real signal of any length.
pub fn real_dft(signal: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// Shared, immutable analysis state: FFT plans, filterbanks and the DCT.
#[derive(Clone)]
pub struct SpectralAnalyzer {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    mel_spectrogram_bank: MelFilterbank,
    mfcc_bank: MelFilterbank,
    dct: DctMatrix,
}

impl fmt::Debug for SpectralAnalyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralAnalyzer").finish_non_exhaustive()
    }
}

impl Default for SpectralAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

impl SpectralAnalyzer {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        let nyquist = ANALYSIS_RATE as f64 / 2.0;
        Self {
            forward: planner.plan_fft_forward(FRAME_LEN),
            inverse: planner.plan_fft_inverse(FRAME_LEN),
            mel_spectrogram_bank: MelFilterbank::new(MEL_SPECTROGRAM_FILTERS, nyquist),
            mfcc_bank: MelFilterbank::new(MFCC_FILTERS, nyquist),
            dct: DctMatrix::new(MFCC_FILTERS, MFCC_COEFFS),
        }
    }

    pub fn mel_spectrogram_bank(&self) -> &MelFilterbank {
        &self.mel_spectrogram_bank
    }

    pub fn mfcc_bank(&self) -> &MelFilterbank {
        &self.mfcc_bank
    }

    pub fn dct(&self) -> &DctMatrix {
        &self.dct
    }

    /// Full 1024-point forward DFT of a windowed frame.
    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex<f64>>> {
        if frame.len() != FRAME_LEN {
            return Err(Error::Shape(format!(
                "frame has {} samples, expected {FRAME_LEN}",
                frame.len()
            )));
        }
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sample in frame".into()));
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        Ok(buf)
    }

    /// `|X_k|^2` over all 1024 bins.
    pub fn full_power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.spectrum(frame)?.iter().map(|c| c.norm_sqr()).collect())
    }

    /// `|X_k|^2` for bins 1..=512.
    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let full = self.full_power_spectrum(frame)?;
        Ok(full[1..=SPECTRUM_BINS].to_vec())
    }

    /// Real cepstrum over all 1024 quefrencies: inverse DFT (scaled by 1/N)
    /// of the floored log power spectrum.
    pub fn full_cepstrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let power = self.full_power_spectrum(frame)?;
        Ok(self.cepstrum_of_power(&power))
    }

    pub fn cepstrum_of_power(&self, full_power: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = full_power
            .iter()
            .map(|&p| Complex::new(p.max(LOG_FLOOR).ln(), 0.0))
            .collect();
        self.inverse.process(&mut buf);
        let n = FRAME_LEN as f64;
        buf.iter().map(|c| c.re / n).collect()
    }

    /// The first 512 quefrencies of the real cepstrum.
    pub fn cepstrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.full_cepstrum(frame)?;
        c.truncate(CEPSTRUM_COEFFS);
        Ok(c)
    }

    /// Forward DFT of a full cepstrum, real part; recovers the log spectrum.
    pub fn cepstrum_to_log_spectrum(&self, cepstrum: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = cepstrum.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// 30 log mel energies from a 512-bin power spectrum.
    pub fn mel_spectrogram(&self, power: &[f64]) -> Vec<f64> {
        self.mel_spectrogram_bank.log_energies(power)
    }

    /// 30 MFCCs from a 512-bin power spectrum.
    pub fn mfcc(&self, power: &[f64]) -> Vec<f64> {
        self.dct.apply(&self.mfcc_bank.log_energies(power))
    }

    /// Per-frame feature vectors (T rows of `kind.dim()`).
    pub fn frame_features(&self, frames: &FrameMatrix, kind: FeatureKind) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(frames.n_frames);
        for frame in frames.frames() {
            let full = self.full_power_spectrum(frame)?;
            let power = &full[1..=SPECTRUM_BINS];
            rows.push(match kind {
                FeatureKind::Spectrogram => power.iter().map(|p| p.max(LOG_FLOOR).ln()).collect(),
                FeatureKind::Cepstrogram => {
                    let mut c = self.cepstrum_of_power(&full);
                    c.truncate(CEPSTRUM_COEFFS);
                    c
                }
                FeatureKind::MelSpectrogram => self.mel_spectrogram(power),
                FeatureKind::Tmfcc | FeatureKind::MfccDeltaDelta => self.mfcc(power),
            });
        }
        if kind == FeatureKind::MfccDeltaDelta {
            let dd = delta_delta(&rows);
            for (row, d) in rows.iter_mut().zip(dd) {
                row.extend(d);
            }
        }
        Ok(rows)
    }

    /// Splits a clip into non-overlapping 20-frame blocks of `kind`.
    /// Trailing frames that do not fill a block are dropped.
    pub fn assemble_blocks(
        &self,
        clip: &AudioClip,
        kind: FeatureKind,
        normalizer: Option<&Normalizer>,
    ) -> Result<Vec<FeatureBlock>> {
        let frames = frame_signal(clip)?;
        if frames.n_frames < BLOCK_FRAMES {
            return Err(Error::DegenerateInput(format!(
                "clip {} yields {} frames, a block needs {BLOCK_FRAMES}",
                clip.source_id, frames.n_frames
            )));
        }
        let rows = self.frame_features(&frames, kind)?;
        blocks_from_rows(&rows, kind, &clip.source_id, normalizer)
    }
}

/// Regression delta `sum_{n=1,2} n (c[t+n] - c[t-n]) / 10` with replicated edges.
pub fn delta(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_len = seq.len() as isize;
    let at = |t: isize| &seq[t.clamp(0, t_len - 1) as usize];
    (0..t_len)
        .map(|t| {
            let dim = seq[t as usize].len();
            (0..dim)
                .map(|d| {
                    (1..=2)
                        .map(|n| n as f64 * (at(t + n)[d] - at(t - n)[d]))
                        .sum::<f64>()
                        / 10.0
                })
                .collect()
        })
        .collect()
}

pub fn delta_delta(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if seq.is_empty() {
        return Vec::new();
    }
    delta(&delta(seq))
}

/// One 20-frame feature image, `dim` rows by 20 columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub kind: FeatureKind,
    pub dim: usize,
    pub data: Vec<f64>,
    pub clip_ref: String,
    pub block_index: usize,
}

impl FeatureBlock {
    pub fn get(&self, d: usize, t: usize) -> f64 {
        self.data[d * BLOCK_FRAMES + t]
    }
}

fn blocks_from_rows(
    rows: &[Vec<f64>],
    kind: FeatureKind,
    clip_ref: &str,
    normalizer: Option<&Normalizer>,
) -> Result<Vec<FeatureBlock>> {
    let dim = kind.dim();
    if let Some(n) = normalizer {
        if n.mean.len() != dim {
            return Err(Error::Shape(format!(
                "normalizer has {} dimensions, {kind} has {dim}",
                n.mean.len()
            )));
        }
    }
    let n_blocks = rows.len() / BLOCK_FRAMES;
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let mut data = vec![0.0; dim * BLOCK_FRAMES];
        for t in 0..BLOCK_FRAMES {
            let row = &rows[b * BLOCK_FRAMES + t];
            for d in 0..dim {
                let v = match normalizer {
                    Some(n) => (row[d] - n.mean[d]) / n.std[d],
                    None => row[d],
                };
                data[d * BLOCK_FRAMES + t] = v;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature in block {b} of {clip_ref}")));
        }
        blocks.push(FeatureBlock {
            kind,
            dim,
            data,
            clip_ref: clip_ref.to_string(),
            block_index: b,
        });
    }
    Ok(blocks)
}

/// Per-dimension z-score statistics fitted on training blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(blocks: impl IntoIterator<Item = &'a FeatureBlock>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for block in blocks {
            if sum.is_empty() {
                sum = vec![0.0; block.dim];
                sum_sq = vec![0.0; block.dim];
            } else if sum.len() != block.dim {
                return Err(Error::Shape("blocks of differing dimension".into()));
            }
            for d in 0..block.dim {
                for t in 0..BLOCK_FRAMES {
                    let v = block.get(d, t);
                    sum[d] += v;
                    sum_sq[d] += v * v;
                }
            }
            count += BLOCK_FRAMES;
        }
        if count == 0 {
            return Err(Error::DegenerateInput("no blocks to fit normalizer".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                let s = var.sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, block: &FeatureBlock) -> FeatureBlock {
        let mut out = block.clone();
        for d in 0..block.dim {
            for t in 0..BLOCK_FRAMES {
                out.data[d * BLOCK_FRAMES + t] = (block.get(d, t) - self.mean[d]) / self.std[d];
            }
        }
        out
    }
}

const CONTAINER_MAGIC: &[u8; 4] = b"SHFB";
const CONTAINER_VERSION: u16 = 1;

/// Writes blocks of a single kind to the binary feature container.
///
/// Layout (little-endian): magic `SHFB`, version `u16`, kind code `u8`,
/// reserved `u8`, per-frame dim `u32`, frames per block `u32`, block count
/// `u32`, clip id length `u32` and UTF-8 bytes, then `count * dim * 20`
/// `f32` values, each block row-major (dimension-major, time-minor).
pub fn write_feature_container<W: Write>(mut w: W, blocks: &[FeatureBlock]) -> Result<()> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::DegenerateInput("no blocks to write".into()))?;
    if blocks.iter().any(|b| b.kind != first.kind) {
        return Err(Error::Shape("container holds a single feature kind".into()));
    }
    let io = |e| Error::io("<feature container>", e);
    w.write_all(CONTAINER_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION).map_err(io)?;
    w.write_u8(first.kind.code()).map_err(io)?;
    w.write_u8(0).map_err(io)?;
    w.write_u32::<LittleEndian>(first.dim as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(BLOCK_FRAMES as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(blocks.len() as u32).map_err(io)?;
    let id = first.clip_ref.as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32).map_err(io)?;
    w.write_all(id).map_err(io)?;
    for b in blocks {
        for &v in &b.data {
            w.write_f32::<LittleEndian>(v as f32).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_feature_container<R: Read>(mut r: R) -> Result<Vec<FeatureBlock>> {
    let fmt_err = |e: std::io::Error| Error::Format(format!("truncated feature container: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Format("bad feature container magic".into()));
    }
    let version = r.read_u16::<LittleEndian>().map_err(fmt_err)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Unsupported(format!("feature container version {version}")));
    }
    let kind = FeatureKind::from_code(r.read_u8().map_err(fmt_err)?)?;
    r.read_u8().map_err(fmt_err)?;
    let dim = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    let frames = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    if dim != kind.dim() || frames != BLOCK_FRAMES {
        return Err(Error::Format(format!(
            "header says {dim}x{frames} for {kind}, expected {}x{BLOCK_FRAMES}",
            kind.dim()
        )));
    }
    let id_len = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(fmt_err)?;
    let clip_ref = String::from_utf8(id).map_err(|_| Error::Format("clip id is not UTF-8".into()))?;
    (0..count)
        .map(|block_index| {
            let mut data = vec![0f32; dim * frames];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(fmt_err)?;
            Ok(FeatureBlock {
                kind,
                dim,
                data: data.into_iter().map(f64::from).collect(),
                clip_ref: clip_ref.clone(),
                block_index,
            })
        })
        .collect()
}

pub fn save_feature_container(path: impl AsRef<Path>, blocks: &[FeatureBlock]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_container(std::io::BufWriter::new(f), blocks)
}

pub fn load_feature_container(path: impl AsRef<Path>) -> Result<Vec<FeatureBlock>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_container(std::io::BufReader::new(f))
}

/// Debug dump: one CSV row per (block, dimension) with 20 frame columns.
pub fn write_feature_csv<W: Write>(w: W, blocks: &[FeatureBlock]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["clip".to_string(), "block".to_string(), "dim".to_string()];
    header.extend((0..BLOCK_FRAMES).map(|t| format!("t{t}")));
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(&header).map_err(csv_err)?;
    for b in blocks {
        for d in 0..b.dim {
            let mut rec = vec![b.clip_ref.clone(), b.block_index.to_string(), d.to_string()];
            rec.extend((0..BLOCK_FRAMES).map(|t| format!("{}", b.get(d, t))));
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

impl From<FeatureKind> for String {
    fn from(v: FeatureKind) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for FeatureKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip16(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, ANALYSIS_RATE, "t").unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_signal(&clip16(vec![0.1; 16_000])).unwrap().n_frames, 30);
        assert_eq!(frame_signal(&clip16(vec![0.1; 1024])).unwrap().n_frames, 1);
        assert!(matches!(
            frame_signal(&clip16(vec![0.1; 1023])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn constant_signal_frames_equal_window() {
        let f = frame_signal(&clip16(vec![1.0; 2048])).unwrap();
        let w = hamming(FRAME_LEN);
        for t in 0..f.n_frames {
            assert_eq!(f.frame(t), &w[..]);
        }
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[1023] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn zero_frame_spectra() {
        let a = SpectralAnalyzer::new();
        let z = vec![0.0; FRAME_LEN];
        assert!(a.power_spectrum(&z).unwrap().iter().all(|&p| p == 0.0));
        let c = a.cepstrum(&z).unwrap();
        assert!((c[0] - LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
        let mel = a.mel_spectrogram(&vec![0.0; SPECTRUM_BINS]);
        assert!(mel.iter().all(|&v| (v - LOG_FLOOR.ln()).abs() < 1e-12));
        let mut bad = z.clone();
        bad[3] = f64::NAN;
        assert!(matches!(a.power_spectrum(&bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn flat_log_spectrum_gives_impulse_cepstrum() {
        let a = SpectralAnalyzer::new();
        let c = a.cepstrum_of_power(&vec![3.0f64.exp(); FRAME_LEN]);
        assert!((c[0] - 3.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_properties() {
        let dct = DctMatrix::new(40, 40);
        for i in 0..40 {
            for j in 0..40 {
                let dot: f64 = dct.rows[i].iter().zip(&dct.rows[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        let a = SpectralAnalyzer::new();
        let c = a.dct().apply(&[2.5; 40]);
        assert!((c[0] - 2.5 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mfcc_matches_naive_dct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = SpectralAnalyzer::new();
        for _ in 0..20 {
            let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let fast = a.dct().apply(&x);
            for (k, &v) in fast.iter().enumerate() {
                let mut s = 0.0;
                for (n, xn) in x.iter().enumerate() {
                    s += xn * (PI / 40.0 * (n as f64 + 0.5) * k as f64).cos();
                }
                let s = s * if k == 0 { (1.0f64 / 40.0).sqrt() } else { (2.0f64 / 40.0).sqrt() };
                assert!((v - s).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn filterbank_covers_band() {
        for bank in [MelFilterbank::new(30, 8000.0), MelFilterbank::new(40, 8000.0)] {
            for k in 0..SPECTRUM_BINS - 1 {
                let s: f64 = bank.weights.iter().map(|r| r[k]).sum();
                assert!(s > 0.0, "bin {} uncovered", k + 1);
            }
        }
    }

    #[test]
    fn tone_peaks_in_nearest_mel_filter() {
        let a = SpectralAnalyzer::new();
        let x: Vec<f64> = (0..FRAME_LEN)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let frame: Vec<f64> = x.iter().zip(hamming(FRAME_LEN)).map(|(a, b)| a * b).collect();
        let mel = a.mel_spectrogram(&a.power_spectrum(&frame).unwrap());
        let argmax = mel
            .iter()
            .enumerate()
            .max_by(|p, q| p.1.total_cmp(q.1))
            .unwrap()
            .0;
        let nearest = a
            .mel_spectrogram_bank()
            .centres_hz
            .iter()
            .enumerate()
            .min_by(|p, q| (p.1 - 1000.0).abs().total_cmp(&(q.1 - 1000.0).abs()))
            .unwrap()
            .0;
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn delta_delta_of_constant_and_ramp() {
        let constant = vec![vec![1.5; 3]; 6];
        assert!(delta_delta(&constant).iter().flatten().all(|&v| v == 0.0));
        let ramp: Vec<Vec<f64>> = (0..12).map(|t| vec![t as f64 * 0.7, -2.0 * t as f64]).collect();
        let dd = delta_delta(&ramp);
        for row in &dd[4..8] {
            assert!(row.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn delta_delta_matches_direct_double_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let x: Vec<f64> = seq.iter().map(|r| r[0]).collect();
        let reg = |v: &[f64]| -> Vec<f64> {
            let n = v.len() as i64;
            let g = |i: i64| v[i.max(0).min(n - 1) as usize];
            (0..n)
                .map(|t| (g(t + 1) - g(t - 1) + 2.0 * (g(t + 2) - g(t - 2))) / 10.0)
                .collect()
        };
        let expected = reg(&reg(&x));
        for (row, e) in delta_delta(&seq).iter().zip(expected) {
            assert!((row[0] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn block_counts() {
        let a = SpectralAnalyzer::new();
        let len_for = |frames: usize| FRAME_LEN + (frames - 1) * HOP_LEN;
        let b30 = a
            .assemble_blocks(&clip16(noise(len_for(30), 1)), FeatureKind::Tmfcc, None)
            .unwrap();
        assert_eq!(b30.len(), 1);
        let b40 = a
            .assemble_blocks(&clip16(noise(len_for(40), 2)), FeatureKind::Spectrogram, None)
            .unwrap();
        assert_eq!(b40.len(), 2);
        assert!(b40.iter().all(|b| b.data.len() == 512 * 20));
        assert!(matches!(
            a.assemble_blocks(&clip16(noise(len_for(19), 3)), FeatureKind::Tmfcc, None),
            Err(Error::DegenerateInput(_))
        ));
        let dd = a
            .assemble_blocks(&clip16(noise(len_for(20), 4)), FeatureKind::MfccDeltaDelta, None)
            .unwrap();
        assert_eq!(dd[0].dim, 60);
    }

    #[test]
    fn normalizer_zero_mean_unit_std() {
        let a = SpectralAnalyzer::new();
        let c = clip16(noise(FRAME_LEN + 59 * HOP_LEN, 9));
        let blocks = a.assemble_blocks(&c, FeatureKind::MelSpectrogram, None).unwrap();
        let norm = Normalizer::fit(&blocks).unwrap();
        let normed = a.assemble_blocks(&c, FeatureKind::MelSpectrogram, Some(&norm)).unwrap();
        let refit = Normalizer::fit(&normed).unwrap();
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-9));
        assert!(refit.std.iter().all(|s| (s - 1.0).abs() < 1e-9));
        assert_eq!(normed[0], norm.apply(&blocks[0]));
    }

    #[test]
    fn container_round_trip_and_csv() {
        let a = SpectralAnalyzer::new();
        let blocks = a
            .assemble_blocks(&clip16(noise(FRAME_LEN + 39 * HOP_LEN, 8)), FeatureKind::Tmfcc, None)
            .unwrap();
        let mut buf = Vec::new();
        write_feature_container(&mut buf, &blocks).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 12 + 4 + 1 + blocks.len() * 30 * 20 * 4);
        let back = read_feature_container(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in back.iter().zip(&blocks) {
            for (p, q) in x.data.iter().zip(&y.data) {
                assert_eq!(*p, *q as f32 as f64);
            }
        }
        assert!(matches!(read_feature_container(&buf[..10]), Err(Error::Format(_))));
        let mut csv_buf = Vec::new();
        write_feature_csv(&mut csv_buf, &blocks).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 30);
    }

    #[test]
    fn kind_parsing() {
        for k in FeatureKind::ALL {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(FeatureKind::from_code(k.code()).unwrap(), k);
        }
        assert!("chroma".parse::<FeatureKind>().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn gain_shifts_log_spectra_and_only_the_zeroth_coefficient(seed in 0u64..1000, gain in 0.05f64..20.0) {
            let x = noise(4096, seed);
            let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
            let an = SpectralAnalyzer::new();
            let (a, b) = (frame_signal(&clip16(x)).unwrap(), frame_signal(&clip16(scaled)).unwrap());
            let shift = 2.0 * gain.ln();
            for kind in [FeatureKind::Spectrogram, FeatureKind::MelSpectrogram] {
                let (fa, fb) = (an.frame_features(&a, kind).unwrap(), an.frame_features(&b, kind).unwrap());
                for (ra, rb) in fa.iter().zip(&fb) {
                    for (va, vb) in ra.iter().zip(rb) {
                        proptest::prop_assert!((vb - va - shift).abs() < 1e-9, "{kind}: {va} -> {vb}");
                    }
                }
            }
            for kind in [FeatureKind::Cepstrogram, FeatureKind::Tmfcc] {
                let (fa, fb) = (an.frame_features(&a, kind).unwrap(), an.frame_features(&b, kind).unwrap());
                for (ra, rb) in fa.iter().zip(&fb) {
                    proptest::prop_assert!(shift.abs() < 1e-3 || (ra[0] - rb[0]).abs() > 1e-6);
                    for (va, vb) in ra[1..].iter().zip(&rb[1..]) {
                        proptest::prop_assert!((va - vb).abs() < 1e-9, "{kind}: {va} -> {vb}");
                    }
                }
            }
        }
    }
}
