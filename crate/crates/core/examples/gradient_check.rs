//! Finite-difference check of backpropagation on width-reduced clones of
//! each architecture and of a fusion network, in 64-bit arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shoutnet::features::{FeatureBlock, FeatureKind};
use shoutnet::models::{gradient_check, reduced_spec, Architecture, ModelSpec, Network, TaskHead};
use shoutnet::neural::Target;

fn random_block(kind: FeatureKind, rng: &mut ChaCha8Rng) -> FeatureBlock {
    FeatureBlock {
        kind,
        dim: kind.dim(),
        data: (0..kind.dim() * 20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        clip_ref: "random".into(),
        block_index: 0,
    }
}

fn main() -> shoutnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kind = FeatureKind::Tmfcc;
    let block = random_block(kind, &mut rng);
    let target = Target::Class(2);

    let mut branches = Vec::new();
    for arch in [Architecture::Cnn, Architecture::Gru, Architecture::CnnGru] {
        let spec = reduced_spec(&ModelSpec::single(arch, kind), 4);
        let net = Network::<f64>::build(spec, TaskHead::FourClass, 5)?;
        let r = gradient_check(&net, &[&block], &target, 1e-5, 24, 1)?;
        println!(
            "{:<8} max relative error {:.2e} over {} entries ({} straddle a kink)",
            arch.to_string(),
            r.max_relative_error,
            r.entries_checked,
            r.entries_nonsmooth
        );
        if arch == Architecture::Cnn {
            branches.push(net);
        }
    }

    let right_kind = FeatureKind::MelSpectrogram;
    let right = Network::<f64>::build(reduced_spec(&ModelSpec::single(Architecture::Cnn, right_kind), 4), TaskHead::FourClass, 6)?;
    let fusion = Network::fusion(&branches[0], &right, 7)?;
    let right_block = random_block(right_kind, &mut rng);
    let r = gradient_check(&fusion, &[&block, &right_block], &target, 1e-5, 24, 2)?;
    println!(
        "fusion   max relative error {:.2e} over {} entries ({} straddle a kink)",
        r.max_relative_error, r.entries_checked, r.entries_nonsmooth
    );
    Ok(())
}
