//! Trains a fusion CNN on one speaker-independent fold of the synthetic
//! corpus, saves the bundle, reloads it and scores the SNR sweep.

use shoutnet::audio_io::PAPER_SNRS;
use shoutnet::experiments::{
    evaluate, fold_plan, load_clips, load_model_bundle, save_model_bundle, train_fold, DataConfig, EvalSettings,
    ExperimentConfig, FoldSplit, SyntheticCorpus,
};
use shoutnet::features::FeatureKind;

fn main() -> shoutnet::Result<()> {
    env_logger::init();
    let cfg = ExperimentConfig {
        features: vec![FeatureKind::MelSpectrogram, FeatureKind::Tmfcc],
        epochs: 15,
        pretrain_epochs: Some(15),
        batch_size: 16,
        learning_rate: 1e-3,
        data: DataConfig::Synthetic(SyntheticCorpus::default()),
        ..Default::default()
    };
    let clips = load_clips(&cfg.data, cfg.task)?;
    let plan = fold_plan(&cfg, &clips)?;
    let split = FoldSplit::new(&cfg, &plan.folds[0])?;
    println!("train {:?}\nvalidation {:?}\ntest {:?}", split.train, split.validation, split.test);

    let trained = train_fold::<f32>(&cfg, &clips, &split)?;
    for log in &trained.logs {
        let last = log.epochs.last().expect("at least one epoch");
        println!("{:<16} final train loss {:.4}, best epoch {:?}", log.stage, last.train_loss, log.best_epoch);
    }

    let dir = std::env::temp_dir().join("shoutnet-example-model");
    save_model_bundle(&dir, &trained)?;
    let (model, normalizers) = load_model_bundle::<f32>(&dir, None)?;

    let test: Vec<_> = clips.iter().filter(|c| split.test.contains(&c.speaker)).collect();
    let metrics = evaluate(
        &model,
        &normalizers,
        &test,
        cfg.task,
        &EvalSettings {
            snrs: &PAPER_SNRS,
            noise: None,
            seed: split.seeds.noise,
            unit: cfg.eval_unit,
        },
    )?;
    for m in metrics {
        println!("{:>6}  F1 {:.3}", m.snr.label(), m.score());
    }
    Ok(())
}
