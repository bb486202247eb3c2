//! Mixes pink noise into a tone at each evaluation SNR and checks the
//! achieved ratio.

use shoutnet::audio_io::{mix_noise_at_snr, pink_noise, rms, AudioClip, NoiseSource, NoiseSpec, Snr, ANALYSIS_RATE, PAPER_SNRS};

fn main() -> shoutnet::Result<()> {
    let rate = f64::from(ANALYSIS_RATE);
    let speech = AudioClip::new(
        (0..16_000).map(|i| 0.4 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / rate).sin()).collect(),
        ANALYSIS_RATE,
        "tone",
    )?;
    let noise = pink_noise(48_000, ANALYSIS_RATE, 3);

    println!("{:>6} {:>12} {:>10} {:>8}", "snr", "achieved dB", "gain", "offset");
    for (i, snr) in PAPER_SNRS.into_iter().enumerate() {
        let m = mix_noise_at_snr(
            &speech,
            &NoiseSpec {
                snr,
                source: NoiseSource::Clip(&noise),
                segment_seed: i as u64,
            },
        )?;
        let achieved = match snr {
            Snr::Clean => "-".to_string(),
            Snr::Db(_) => format!("{:.6}", 20.0 * (speech.rms() / rms(&m.scaled_noise)).log10()),
        };
        println!("{:>6} {achieved:>12} {:>10.4} {:>8}", snr.label(), m.noise_gain, m.segment_offset);
    }
    Ok(())
}
