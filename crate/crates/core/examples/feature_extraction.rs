//! Frames a synthetic clip and prints the block layout of every feature kind.
//!
//! ```text
//! cargo run --example feature_extraction [path/to/clip.wav]
//! ```

use shoutnet::audio_io::{load_wav, pink_noise, ANALYSIS_RATE};
use shoutnet::experiments::data::prepare_clip;
use shoutnet::features::{frame_signal, FeatureKind, Normalizer, SpectralAnalyzer};

fn main() -> shoutnet::Result<()> {
    let clip = match std::env::args().nth(1) {
        Some(path) => prepare_clip(&load_wav(path)?)?,
        None => pink_noise(2 * ANALYSIS_RATE as usize, ANALYSIS_RATE, 7),
    };
    let frames = frame_signal(&clip)?;
    println!(
        "{}: {:.2} s, {} frames, {} blocks",
        clip.source_id,
        clip.duration_secs(),
        frames.n_frames,
        frames.n_frames / 20
    );

    let analyzer = SpectralAnalyzer::new();
    for kind in FeatureKind::ALL {
        let blocks = analyzer.assemble_blocks(&clip, kind, None)?;
        let norm = Normalizer::fit(&blocks)?;
        let first = norm.apply(&blocks[0]);
        let mean = first.data.iter().sum::<f64>() / first.data.len() as f64;
        println!(
            "{:<18} {:>4} x 20 per block  ({} values), first block mean after normalization {mean:+.3}",
            kind.to_string(),
            kind.dim(),
            kind.dim() * 20
        );
    }

    // the cepstrogram is the inverse DFT of the log power spectrum
    let frame = frames.frame(0);
    let cep = analyzer.full_cepstrum(frame)?;
    let back = analyzer.cepstrum_to_log_spectrum(&cep);
    let direct: Vec<f64> = analyzer.full_power_spectrum(frame)?.iter().map(|p| p.max(1e-10).ln()).collect();
    let err = back.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("cepstrum round trip, max abs error {err:.2e}");
    Ok(())
}
