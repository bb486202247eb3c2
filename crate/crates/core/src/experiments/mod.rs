//! Speaker-independent cross-validation, training, SNR-sweep evaluation and
//! report assembly.
//!
//! Every random choice draws from a seed derived from the experiment seed,
//! a purpose tag and an index (see [`derive_seed`]), so a report's numbers
//! are reproducible from its config echo.

pub mod config;
pub mod data;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod synthetic;
pub mod training;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use config::{CellConfig, DataConfig, ExperimentConfig, SuiteConfig};
pub use data::{EvalUnit, Example, LabeledClip};
pub use folds::{plan_folds, plan_k_folds, split_validation, Fold, FoldPlan};
pub use metrics::{binary_f1, confusion_matrix, rmse, weighted_f1, ConfusionMatrix};
pub use report::{CellReport, ExperimentReport, FoldReport, ReportFile, SnrMetrics, SuiteReport, REPORT_SCHEMA_VERSION};
pub use synthetic::SyntheticCorpus;
pub use training::{train_network, EpochLog, TrainOutcome, TrainSettings, TrainingLog};

use crate::audio_io::{load_wav, mix_noise_at_snr, AudioClip, NoiseSource, NoiseSpec, Snr};
use crate::corpus::parse_manifest;
use crate::error::{Error, Result};
use crate::features::{FeatureBlock, FeatureKind, Normalizer, SpectralAnalyzer};
use crate::models::{decide_clip, ClipPrediction, ModelDescriptor, ModelSpec, Network, NetworkDims, TaskHead};
use crate::neural::{load_checkpoint, save_checkpoint, NumericMode, Real};

/// SplitMix64 over the base seed, an FNV-1a hash of `tag`, and `index`.
/// Results fit in 63 bits so they survive TOML's signed integers.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

/// Loads or generates the clips an experiment runs on.
pub fn load_clips(data: &DataConfig, task: TaskHead) -> Result<Vec<LabeledClip>> {
    match data {
        DataConfig::Synthetic(spec) => synthetic::generate(spec, task),
        DataConfig::Manifest { path, audio_root } => {
            let records = parse_manifest(path)?;
            let root = audio_root
                .clone()
                .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
            data::load_manifest_clips(&records, &root)
        }
    }
}

pub fn load_noise(cfg: &ExperimentConfig) -> Result<Option<AudioClip>> {
    cfg.noise
        .as_ref()
        .map(|p| load_wav(p).and_then(|c| data::prepare_clip(&c)))
        .transpose()
}

/// Speakers of a fold after the validation split, with the seeds used.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seeds: report::FoldSeeds,
}

impl FoldSplit {
    pub fn new(cfg: &ExperimentConfig, fold: &Fold) -> Result<Self> {
        let validation_seed = derive_seed(cfg.seed, "validation", fold.index as u64);
        let (train, validation) = split_validation(&fold.train_validation, cfg.validation_fraction, validation_seed);
        let split = Self {
            fold: fold.index,
            train,
            validation,
            test: fold.test.clone(),
            seeds: report::FoldSeeds {
                validation: validation_seed,
                init: derive_seed(cfg.seed, "init", fold.index as u64),
                shuffle: derive_seed(cfg.seed, "shuffle", fold.index as u64),
                noise: derive_seed(cfg.seed, "noise", fold.index as u64),
            },
        };
        split.check_independence()?;
        Ok(split)
    }

    /// No test speaker may appear among training or validation speakers.
    pub fn check_independence(&self) -> Result<()> {
        let test: BTreeSet<&String> = self.test.iter().collect();
        if let Some(s) = self.train.iter().chain(&self.validation).find(|s| test.contains(s)) {
            return Err(Error::Config(format!("speaker {s} is in both training and test of fold {}", self.fold)));
        }
        Ok(())
    }

    fn select<'c>(clips: &'c [LabeledClip], speakers: &[String], task: TaskHead) -> Vec<&'c LabeledClip> {
        let set: BTreeSet<&String> = speakers.iter().collect();
        clips
            .iter()
            .filter(|c| set.contains(&c.speaker) && c.usable_for(task))
            .collect()
    }
}

/// A trained model with the normalization it expects.
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub model: Network<T>,
    pub best: Option<Network<T>>,
    pub normalizers: Vec<Normalizer>,
    pub logs: Vec<TrainingLog>,
}

fn model_spec(cfg: &ExperimentConfig, kind: FeatureKind) -> ModelSpec {
    ModelSpec::Single {
        arch: cfg.arch,
        kind,
        dims: NetworkDims {
            gru_width_per_direction: cfg.gru_width_per_direction,
            ..NetworkDims::for_kind(kind)
        },
    }
}

fn single_network<T: Real>(cfg: &ExperimentConfig, kind: FeatureKind, seed: u64) -> Result<Network<T>> {
    // pairing rules live in Network::single; widths may carry the GRU flag
    Network::<T>::single(cfg.arch, kind, cfg.task, seed)?;
    Network::build(model_spec(cfg, kind), cfg.task, seed)
}

fn branch_examples(set: &[Example], k: usize) -> Vec<Example> {
    set.iter()
        .map(|e| Example {
            inputs: vec![e.inputs[k].clone()],
            target: e.target.clone(),
            clip: e.clip,
        })
        .collect()
}

fn raw_blocks(analyzer: &SpectralAnalyzer, clips: &[AudioClip], kinds: &[FeatureKind]) -> Result<Vec<Vec<Vec<FeatureBlock>>>> {
    clips.iter().map(|c| data::clip_blocks(analyzer, c, kinds)).collect()
}

/// Trains the configured model on one fold's training speakers.
pub fn train_fold<T: Real>(cfg: &ExperimentConfig, clips: &[LabeledClip], split: &FoldSplit) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    let analyzer = SpectralAnalyzer::new();
    let train_clips = FoldSplit::select(clips, &split.train, cfg.task);
    let val_clips = FoldSplit::select(clips, &split.validation, cfg.task);
    if train_clips.is_empty() {
        return Err(Error::Config(format!("fold {} has no training clips", split.fold)));
    }
    let mut train_audio: Vec<AudioClip> = train_clips.iter().map(|c| c.clip.clone()).collect();
    let mut train_targets = train_clips.iter().map(|c| c.target(cfg.task)).collect::<Result<Vec<_>>>()?;
    if let Some(snr) = cfg.train_noise_snr {
        for (i, c) in train_clips.iter().enumerate() {
            let spec = NoiseSpec {
                snr,
                source: NoiseSource::Pink {
                    seed: derive_seed(split.seeds.noise, "train-noise", i as u64),
                },
                segment_seed: 0,
            };
            train_audio.push(mix_noise_at_snr(&c.clip, &spec)?.clip);
            train_targets.push(train_targets[i].clone());
        }
    }
    let train_raw = raw_blocks(&analyzer, &train_audio, &cfg.features)?;
    let normalizers = data::fit_normalizers(&train_raw, &cfg.features)?;
    let train_set = data::build_examples(&train_raw, &train_targets, &normalizers);
    let val_audio: Vec<AudioClip> = val_clips.iter().map(|c| c.clip.clone()).collect();
    let val_targets = val_clips.iter().map(|c| c.target(cfg.task)).collect::<Result<Vec<_>>>()?;
    let val_set = data::build_examples(&raw_blocks(&analyzer, &val_audio, &cfg.features)?, &val_targets, &normalizers);

    let settings = |epochs: usize, tag: &str| TrainSettings {
        epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        seed: derive_seed(split.seeds.shuffle, tag, 0),
        workers: cfg.workers,
    };
    let init = |tag: &str| derive_seed(split.seeds.init, tag, 0);

    if cfg.features.len() == 1 {
        let net = single_network::<T>(cfg, cfg.features[0], init("single"))?;
        let out = train_network(net, &train_set, &val_set, &settings(cfg.epochs, "single"), "single")?;
        return Ok(TrainedModel {
            model: out.model,
            best: out.best,
            normalizers,
            logs: vec![out.log],
        });
    }

    let pre_epochs = cfg.pretrain_epochs.unwrap_or(cfg.epochs);
    let mut logs = Vec::new();
    let mut branches = Vec::new();
    for (k, &kind) in cfg.features.iter().enumerate() {
        let tag = if k == 0 { "left" } else { "right" };
        let net = single_network::<T>(cfg, kind, init(tag))?;
        let out = train_network(
            net,
            &branch_examples(&train_set, k),
            &branch_examples(&val_set, k),
            &settings(pre_epochs, tag),
            &format!("pretrain-{tag}"),
        )?;
        logs.push(out.log);
        branches.push(out.best.unwrap_or(out.model));
    }
    let fusion = Network::fusion(&branches[0], &branches[1], init("fusion"))?;
    let out = train_network(fusion, &train_set, &val_set, &settings(cfg.epochs, "fusion"), "fusion")?;
    logs.push(out.log);
    Ok(TrainedModel {
        model: out.model,
        best: out.best,
        normalizers,
        logs,
    })
}

/// How test clips are corrupted and scored.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings<'a> {
    pub snrs: &'a [Snr],
    /// Noise recording; seeded pink noise when `None`.
    pub noise: Option<&'a AudioClip>,
    pub seed: u64,
    pub unit: EvalUnit,
}

/// Mixes every test clip with noise at each SNR, extracts features,
/// normalizes with training statistics and scores the model.
pub fn evaluate<T: Real>(
    model: &Network<T>,
    normalizers: &[Normalizer],
    clips: &[&LabeledClip],
    task: TaskHead,
    settings: &EvalSettings<'_>,
) -> Result<Vec<SnrMetrics>> {
    let clips: Vec<&LabeledClip> = clips.iter().copied().filter(|c| c.usable_for(task)).collect();
    if clips.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if model.head() != task {
        return Err(Error::Config(format!("model head {} does not match task {task}", model.head())));
    }
    let kinds = model.input_kinds();
    if normalizers.len() != kinds.len() {
        return Err(Error::Config("one normalizer per input kind required".into()));
    }
    let analyzer = SpectralAnalyzer::new();
    let mut results = Vec::with_capacity(settings.snrs.len());
    for (si, &snr) in settings.snrs.iter().enumerate() {
        let mut truth = Vec::new();
        let mut decisions = Vec::new();
        for (ci, c) in clips.iter().enumerate() {
            let spec = NoiseSpec {
                snr,
                source: match settings.noise {
                    Some(n) => NoiseSource::Clip(n),
                    None => NoiseSource::Pink {
                        seed: derive_seed(settings.seed, "pink", ci as u64),
                    },
                },
                segment_seed: derive_seed(settings.seed, "segment", (si * clips.len() + ci) as u64),
            };
            let noisy = mix_noise_at_snr(&c.clip, &spec)?.clip;
            let raw = data::clip_blocks(&analyzer, &noisy, &kinds)?;
            let n_blocks = raw.iter().map(Vec::len).min().unwrap_or(0);
            let mut outputs = Vec::with_capacity(n_blocks);
            for b in 0..n_blocks {
                let blocks: Vec<FeatureBlock> = raw.iter().zip(normalizers).map(|(r, n)| n.apply(&r[b])).collect();
                let refs: Vec<&FeatureBlock> = blocks.iter().collect();
                outputs.push(model.predict_block(&refs)?);
            }
            match settings.unit {
                EvalUnit::Clip => {
                    truth.push(*c);
                    decisions.push(decide_clip(task, &outputs));
                }
                EvalUnit::Block => {
                    for o in outputs {
                        truth.push(*c);
                        decisions.push(decide_clip(task, &[o]));
                    }
                }
            }
        }
        results.push(score(snr, task, &truth, &decisions)?);
    }
    Ok(results)
}

fn score(snr: Snr, task: TaskHead, truth: &[&LabeledClip], decisions: &[ClipPrediction]) -> Result<SnrMetrics> {
    let mut m = SnrMetrics {
        snr,
        units: truth.len(),
        f1: None,
        weighted_f1: None,
        rmse: None,
        confusion: None,
        scatter: Vec::new(),
        ties: 0,
    };
    match task {
        TaskHead::Binary => {
            let t: Vec<bool> = truth.iter().map(|c| c.class.is_shout()).collect();
            let p: Vec<bool> = decisions
                .iter()
                .map(|d| matches!(d, ClipPrediction::Binary { shout: true, .. }))
                .collect();
            m.f1 = Some(binary_f1(&t, &p)?);
        }
        TaskHead::FourClass => {
            let t: Vec<usize> = truth.iter().map(|c| c.class.index()).collect();
            let mut p = Vec::with_capacity(decisions.len());
            for d in decisions {
                if let ClipPrediction::FourClass { class, tie, .. } = d {
                    p.push(*class);
                    m.ties += usize::from(*tie);
                }
            }
            m.weighted_f1 = Some(weighted_f1(&t, &p, 4)?);
            m.confusion = Some(confusion_matrix(&t, &p, 4)?);
        }
        TaskHead::Regression => {
            for (c, d) in truth.iter().zip(decisions) {
                if let (Some(a), ClipPrediction::Regression { value }) = (c.intensity, d) {
                    m.scatter.push((a, *value));
                }
            }
            let (a, p): (Vec<f64>, Vec<f64>) = m.scatter.iter().copied().unzip();
            m.rmse = Some(rmse(&a, &p)?);
        }
    }
    Ok(m)
}

/// Speakers of the clips usable for the task, in first-appearance order.
pub fn task_speakers(clips: &[LabeledClip], task: TaskHead) -> Vec<String> {
    let mut seen = Vec::new();
    for c in clips.iter().filter(|c| c.usable_for(task)) {
        if !seen.contains(&c.speaker) {
            seen.push(c.speaker.clone());
        }
    }
    seen
}

pub fn fold_plan(cfg: &ExperimentConfig, clips: &[LabeledClip]) -> Result<FoldPlan> {
    plan_k_folds(&task_speakers(clips, cfg.task), cfg.folds, derive_seed(cfg.seed, "folds", 0))
}

fn run_typed<T: Real>(cfg: &ExperimentConfig, clips: &[LabeledClip], noise: Option<&AudioClip>) -> Result<ExperimentReport> {
    let plan = fold_plan(cfg, clips)?;
    let n_folds = cfg.fold_limit.unwrap_or(plan.folds.len()).min(plan.folds.len());
    let mut folds = Vec::with_capacity(n_folds);
    let mut model_label = String::new();
    for fold in &plan.folds[..n_folds] {
        let split = FoldSplit::new(cfg, fold)?;
        let trained = train_fold::<T>(cfg, clips, &split)?;
        model_label = trained.model.descriptor.label.clone();
        let test = FoldSplit::select(clips, &split.test, cfg.task);
        let metrics = evaluate(
            &trained.model,
            &trained.normalizers,
            &test,
            cfg.task,
            &EvalSettings {
                snrs: &cfg.snrs,
                noise,
                seed: split.seeds.noise,
                unit: cfg.eval_unit,
            },
        )?;
        log::info!(
            "{} fold {}: {}",
            cfg.label(),
            fold.index,
            metrics.iter().map(|m| format!("{}={:.3}", m.snr.label(), m.score())).collect::<Vec<_>>().join(" ")
        );
        folds.push(FoldReport {
            fold: fold.index,
            train_speakers: split.train,
            validation_speakers: split.validation,
            test_speakers: split.test,
            seeds: split.seeds,
            training: trained.logs,
            metrics,
        });
    }
    let averages: Vec<report::SnrAverage> = cfg
        .snrs
        .iter()
        .enumerate()
        .map(|(i, &snr)| report::SnrAverage {
            snr,
            score: folds.iter().map(|f| f.metrics[i].score()).sum::<f64>() / folds.len() as f64,
        })
        .collect();
    let overall = averages.iter().map(|a| a.score).sum::<f64>() / averages.len() as f64;
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        label: cfg.label(),
        model: model_label,
        metric: report::metric_name(cfg.task).to_string(),
        config: cfg.clone(),
        fold_seed: plan.seed,
        paper_split: plan.paper_split,
        folds,
        averages,
        overall,
    })
}

/// Cross-validated experiment on the given clips.
pub fn run_experiment(cfg: &ExperimentConfig, clips: &[LabeledClip], noise: Option<&AudioClip>) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.numeric_mode {
        NumericMode::F32 => run_typed::<f32>(cfg, clips, noise),
        NumericMode::F64 => run_typed::<f64>(cfg, clips, noise),
    }
}

/// Runs every cell of the grid. Failed cells are recorded and the rest
/// continue; the caller turns [`SuiteReport::exit_code`] into the process
/// status.
pub fn run_suite(suite: &SuiteConfig) -> Result<SuiteReport> {
    let cells = suite.experiments();
    if cells.is_empty() {
        return Err(Error::Config("empty experiment grid".into()));
    }
    let noise = load_noise(&suite.base)?;
    let corpora: Mutex<Vec<(TaskHead, DataConfig, std::sync::Arc<Vec<LabeledClip>>)>> = Mutex::new(Vec::new());
    let clips_for = |cfg: &ExperimentConfig| -> Result<std::sync::Arc<Vec<LabeledClip>>> {
        let mut cache = corpora.lock().expect("corpus cache poisoned");
        if let Some((_, _, c)) = cache.iter().find(|(t, d, _)| *t == cfg.task && *d == cfg.data) {
            return Ok(c.clone());
        }
        let c = std::sync::Arc::new(load_clips(&cfg.data, cfg.task)?);
        cache.push((cfg.task, cfg.data.clone(), c.clone()));
        Ok(c)
    };
    let run_cell = |i: usize| -> CellReport {
        let mut cfg = cells[i].clone();
        if suite.workers > 1 {
            cfg.workers = 1;
        }
        let name = cfg.name.clone().unwrap_or_else(|| format!("cell{:02}-{}", i + 1, cfg.label()));
        cfg.name = Some(name.clone());
        let outcome = clips_for(&cfg).and_then(|clips| run_experiment(&cfg, &clips, noise.as_ref()));
        match outcome {
            Ok(r) => CellReport {
                name,
                ok: true,
                error: None,
                exit_code: None,
                report: Some(r),
            },
            Err(e) => {
                log::error!("{name} failed: {e}");
                CellReport {
                    name,
                    ok: false,
                    error: Some(e.to_string()),
                    exit_code: Some(e.exit_code()),
                    report: None,
                }
            }
        }
    };
    let reports: Vec<CellReport> = if suite.workers <= 1 {
        (0..cells.len()).map(run_cell).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<CellReport>>> = Mutex::new(vec![None; cells.len()]);
        std::thread::scope(|s| {
            for _ in 0..suite.workers.min(cells.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= cells.len() {
                        break;
                    }
                    let r = run_cell(i);
                    slots.lock().expect("result slots poisoned")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots poisoned")
            .into_iter()
            .map(|r| r.expect("every cell ran"))
            .collect()
    };
    let failures = reports.iter().filter(|r| !r.ok).count();
    Ok(SuiteReport {
        schema_version: REPORT_SCHEMA_VERSION,
        cells: reports,
        failures,
    })
}

/// Files written for a trained model: `model.toml` (descriptor),
/// `final.ckpt`, `best.ckpt` (when validation ran) and `normalizers.json`.
pub fn save_model_bundle<T: Real>(dir: &Path, trained: &TrainedModel<T>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut descriptor = trained.model.descriptor.clone();
    descriptor.checkpoint = Some("final.ckpt".into());
    descriptor.save(dir.join("model.toml"))?;
    save_checkpoint(dir.join("final.ckpt"), &trained.model.params)?;
    if let Some(b) = &trained.best {
        save_checkpoint(dir.join("best.ckpt"), &b.params)?;
    }
    let norm = serde_json::to_string_pretty(&trained.normalizers).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("normalizers.json");
    std::fs::write(&path, norm).map_err(|e| Error::io(&path, e))
}

/// Loads a bundle written by [`save_model_bundle`]; `checkpoint` overrides
/// the descriptor's reference (e.g. `best.ckpt`).
pub fn load_model_bundle<T: Real>(dir: &Path, checkpoint: Option<&str>) -> Result<(Network<T>, Vec<Normalizer>)> {
    let descriptor = ModelDescriptor::load(dir.join("model.toml"))?;
    let file = checkpoint
        .map(str::to_string)
        .or_else(|| descriptor.checkpoint.clone())
        .unwrap_or_else(|| "final.ckpt".into());
    let params = load_checkpoint::<T>(dir.join(&file))?;
    let net = Network::from_parts(descriptor, params)?;
    let path = dir.join("normalizers.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let normalizers: Vec<Normalizer> = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    Ok((net, normalizers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskHead::Binary,
            arch: Architecture::Cnn,
            features: vec![FeatureKind::MelSpectrogram, FeatureKind::Tmfcc],
            snrs: vec![Snr::Clean, Snr::Db(0.0)],
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            numeric_mode: NumericMode::F64,
            fold_limit: Some(1),
            data: DataConfig::Synthetic(SyntheticCorpus {
                speakers: 5,
                clips_per_speaker: 4,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(1, "init", 0);
        assert_ne!(a, derive_seed(1, "init", 1));
        assert_ne!(a, derive_seed(1, "shuffle", 0));
        assert_ne!(a, derive_seed(2, "init", 0));
        assert_eq!(a, derive_seed(1, "init", 0));
    }

    #[test]
    fn fusion_experiment_runs_and_reproduces() {
        let cfg = tiny_cfg();
        let clips = load_clips(&cfg.data, cfg.task).unwrap();
        let a = run_experiment(&cfg, &clips, None).unwrap();
        let b = run_experiment(&cfg, &clips, None).unwrap();
        assert_eq!(report::to_json(&a).unwrap(), report::to_json(&b).unwrap());
        assert_eq!(a.folds.len(), 1);
        assert_eq!(a.folds[0].training.len(), 3);
        assert_eq!(a.averages.len(), 2);
        let f = &a.folds[0];
        assert!(f.test_speakers.iter().all(|s| !f.train_speakers.contains(s) && !f.validation_speakers.contains(s)));
        let text = report::to_json(&a).unwrap();
        assert_eq!(ReportFile::parse(&text).unwrap(), ReportFile::Experiment(a));
    }

    #[test]
    fn independence_violation_detected() {
        let split = FoldSplit {
            fold: 0,
            train: vec!["a".into(), "b".into()],
            validation: vec![],
            test: vec!["b".into()],
            seeds: report::FoldSeeds {
                validation: 0,
                init: 0,
                shuffle: 0,
                noise: 0,
            },
        };
        assert!(matches!(split.check_independence(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_grid_and_failing_cells() {
        assert!(matches!(run_suite(&SuiteConfig::default()), Err(Error::Config(_))));
        let suite = SuiteConfig {
            base: tiny_cfg(),
            cells: vec![CellConfig {
                name: Some("bad".into()),
                features: Some(vec![]),
                ..Default::default()
            }],
            workers: 1,
        };
        let r = run_suite(&suite).unwrap();
        assert_eq!(r.failures, 1);
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn bundle_round_trip() {
        let mut cfg = tiny_cfg();
        cfg.features = vec![FeatureKind::Tmfcc];
        cfg.epochs = 1;
        let clips = load_clips(&cfg.data, cfg.task).unwrap();
        let plan = fold_plan(&cfg, &clips).unwrap();
        let split = FoldSplit::new(&cfg, &plan.folds[0]).unwrap();
        let trained = train_fold::<f64>(&cfg, &clips, &split).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model_bundle(dir.path(), &trained).unwrap();
        let (net, norms) = load_model_bundle::<f64>(dir.path(), None).unwrap();
        assert_eq!(net.params, trained.model.params);
        assert_eq!(norms, trained.normalizers);
    }
}
