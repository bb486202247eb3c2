//! Prints the shape ledger of every architecture and feature pairing, and of
//! the fusion networks.

use shoutnet::features::FeatureKind;
use shoutnet::models::{Architecture, Network, TaskHead};

fn show(net: &Network<f32>) -> shoutnet::Result<()> {
    println!("{} ({} parameters)", net.descriptor.label, net.params.numel());
    for (name, shape) in net.shape_ledger()? {
        println!("    {name:<16} {shape:?}");
    }
    Ok(())
}

fn main() -> shoutnet::Result<()> {
    for arch in [Architecture::Cnn, Architecture::Gru, Architecture::CnnGru] {
        for kind in [FeatureKind::Spectrogram, FeatureKind::Cepstrogram, FeatureKind::MelSpectrogram, FeatureKind::Tmfcc] {
            show(&Network::single(arch, kind, TaskHead::Binary, 1)?)?;
        }
    }
    show(&Network::single(Architecture::BaselineMlp, FeatureKind::MfccDeltaDelta, TaskHead::Binary, 1)?)?;

    for (l, r) in [
        (FeatureKind::Spectrogram, FeatureKind::Cepstrogram),
        (FeatureKind::MelSpectrogram, FeatureKind::Tmfcc),
    ] {
        let left = Network::<f32>::single(Architecture::Cnn, l, TaskHead::FourClass, 1)?;
        let right = Network::single(Architecture::Cnn, r, TaskHead::FourClass, 2)?;
        show(&Network::fusion(&left, &right, 3)?)?;
    }
    Ok(())
}
