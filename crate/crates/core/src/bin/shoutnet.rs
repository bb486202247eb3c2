use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shoutnet::audio_io::{load_wav, mix_noise_at_snr, resample_to_16k, rms, write_wav, NoiseSource, NoiseSpec, Snr};
use shoutnet::corpus::{
    aggregate_ratings, class_counts, make_rating_subsets, parse_manifest, read_ratings, read_subsets, speakers,
    summarize_intensity, write_intensity_summary, write_subsets, ShoutClass,
};
use shoutnet::experiments::{
    self, data, fold_plan, load_clips, load_model_bundle, load_noise, report, save_model_bundle, train_fold,
    EvalSettings, ExperimentConfig, FoldSplit, ReportFile, SuiteConfig,
};
use shoutnet::features::{save_feature_container, write_feature_csv, FeatureKind, SpectralAnalyzer};
use shoutnet::neural::{NumericMode, Real};
use shoutnet::{Error, Result};

#[derive(Parser)]
#[command(name = "shoutnet", version, about = "Shouted-speech detection, classification and intensity regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write feature blocks of a WAV clip
    Extract {
        input: PathBuf,
        /// Comma-separated feature kinds
        #[arg(long, value_delimiter = ',', default_value = "spectrogram,cepstrogram")]
        kinds: Vec<FeatureKind>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write a CSV dump next to each container
        #[arg(long)]
        csv: bool,
    },
    /// Mix noise into a clip at a target SNR
    Mix {
        speech: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr: Snr,
        /// Noise recording; seeded pink noise when absent
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one fold and save the model bundle
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a saved model on its fold's test speakers across the SNR sweep
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the config saved with the model
        #[arg(long)]
        config: Option<PathBuf>,
        /// e.g. best.ckpt
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment grid
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the speaker folds of a config
    Folds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rating aggregation and manifest tools
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Tables and plot-ready CSVs from a report
    Report {
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Spam-filter ratings and average ten per item
    Aggregate(AggregateArgs),
    /// Check a manifest and summarize it
    Validate {
        manifest: PathBuf,
        /// Write per-speaker and per-sentence intensity statistics here
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Partition items into rating subsets with a dummy sample each
    Subsets {
        /// One item id per line
        items: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    subsets: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// item,mean_score,contributing_ratings
    #[arg(long)]
    output: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn extract(input: &Path, kinds: &[FeatureKind], out_dir: &Path, csv: bool) -> Result<()> {
    let clip = data::prepare_clip(&load_wav(input)?)?;
    let analyzer = SpectralAnalyzer::new();
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for &kind in kinds {
        let blocks = analyzer.assemble_blocks(&clip, kind, None)?;
        let path = out_dir.join(format!("{stem}.{kind}.feat"));
        save_feature_container(&path, &blocks)?;
        if csv {
            write_feature_csv(create(&path.with_extension("csv"))?, &blocks)?;
        }
        println!("{}: {} blocks of {}x20", path.display(), blocks.len(), kind.dim());
    }
    Ok(())
}

fn mix(speech: &Path, snr: Snr, noise: Option<&Path>, seed: u64, output: &Path) -> Result<()> {
    let speech = data::prepare_clip(&load_wav(speech)?)?;
    let noise = noise.map(|p| load_wav(p).and_then(|c| resample_to_16k(&c))).transpose()?;
    let spec = NoiseSpec {
        snr,
        source: match &noise {
            Some(n) => NoiseSource::Clip(n),
            None => NoiseSource::Pink { seed },
        },
        segment_seed: seed,
    };
    let m = mix_noise_at_snr(&speech, &spec)?;
    write_wav(output, &m.clip)?;
    let achieved = if m.scaled_noise.iter().any(|v| *v != 0.0) {
        Some(20.0 * (rms(&speech.samples) / rms(&m.scaled_noise)).log10())
    } else {
        None
    };
    let summary = json!({
        "output": output,
        "snr": snr,
        "achieved_snr_db": achieved,
        "noise_gain": m.noise_gain,
        "segment_offset": m.segment_offset,
        "seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?);
    Ok(())
}

fn fold_split(cfg: &ExperimentConfig, clips: &[data::LabeledClip], fold: usize) -> Result<FoldSplit> {
    let plan = fold_plan(cfg, clips)?;
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range, plan has {}", plan.folds.len())))?;
    FoldSplit::new(cfg, f)
}

fn split_json(split: &FoldSplit) -> serde_json::Value {
    json!({
        "fold": split.fold,
        "train_speakers": split.train,
        "validation_speakers": split.validation,
        "test_speakers": split.test,
        "seeds": split.seeds,
    })
}

fn train_typed<T: Real>(cfg: &ExperimentConfig, clips: &[data::LabeledClip], split: &FoldSplit, output: &Path) -> Result<()> {
    let trained = train_fold::<T>(cfg, clips, split)?;
    save_model_bundle(output, &trained)?;
    let run = json!({ "split": split_json(split), "training": trained.logs });
    write_text(&output.join("run.json"), &report::to_json(&run)?)
}

fn train(config: &Path, fold: usize, output: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let clips = load_clips(&cfg.data, cfg.task)?;
    let split = fold_split(&cfg, &clips, fold)?;
    match cfg.numeric_mode {
        NumericMode::F32 => train_typed::<f32>(&cfg, &clips, &split, output)?,
        NumericMode::F64 => train_typed::<f64>(&cfg, &clips, &split, output)?,
    }
    write_text(&output.join("experiment.toml"), &cfg.to_toml()?)?;
    write_text(&output.join("fold"), &fold.to_string())?;
    println!("saved {} (fold {fold})", output.display());
    Ok(())
}

fn evaluate_typed<T: Real>(
    dir: &Path,
    checkpoint: Option<&str>,
    cfg: &ExperimentConfig,
    split: &FoldSplit,
    clips: &[data::LabeledClip],
) -> Result<Vec<experiments::SnrMetrics>> {
    let (net, normalizers) = load_model_bundle::<T>(dir, checkpoint)?;
    let noise = load_noise(cfg)?;
    let test: Vec<&data::LabeledClip> = clips.iter().filter(|c| split.test.contains(&c.speaker)).collect();
    experiments::evaluate(
        &net,
        &normalizers,
        &test,
        cfg.task,
        &EvalSettings {
            snrs: &cfg.snrs,
            noise: noise.as_ref(),
            seed: split.seeds.noise,
            unit: cfg.eval_unit,
        },
    )
}

fn evaluate(model: &Path, config: Option<&Path>, checkpoint: Option<&str>, output: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config.map_or_else(|| model.join("experiment.toml"), Path::to_path_buf))?;
    let fold_path = model.join("fold");
    let fold: usize = std::fs::read_to_string(&fold_path)
        .map_err(|e| Error::io(&fold_path, e))?
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{} is not a fold index", fold_path.display())))?;
    let clips = load_clips(&cfg.data, cfg.task)?;
    let split = fold_split(&cfg, &clips, fold)?;
    let metrics = match cfg.numeric_mode {
        NumericMode::F32 => evaluate_typed::<f32>(model, checkpoint, &cfg, &split, &clips)?,
        NumericMode::F64 => evaluate_typed::<f64>(model, checkpoint, &cfg, &split, &clips)?,
    };
    for m in &metrics {
        println!("{:>6}  {} = {:.4}", m.snr.label(), report::metric_name(cfg.task), m.score());
    }
    let out = json!({
        "schema_version": experiments::REPORT_SCHEMA_VERSION,
        "model": model,
        "checkpoint": checkpoint,
        "config": cfg,
        "split": split_json(&split),
        "metrics": metrics,
    });
    if let Some(path) = output {
        write_text(path, &report::to_json(&out)?)?;
    }
    Ok(())
}

fn suite(config: &Path, output: &Path, workers: Option<usize>) -> Result<i32> {
    let mut cfg = SuiteConfig::load(config)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let result = experiments::run_suite(&cfg)?;
    write_text(output, &report::to_json(&result)?)?;
    for cell in &result.cells {
        match (&cell.report, &cell.error) {
            (Some(r), _) => println!("ok    {}  {} = {:.4}", cell.name, r.metric, r.overall),
            (None, e) => println!("FAIL  {}  {}", cell.name, e.as_deref().unwrap_or("")),
        }
    }
    Ok(result.exit_code())
}

fn folds(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let clips = load_clips(&cfg.data, cfg.task)?;
    let plan = fold_plan(&cfg, &clips)?;
    let splits = plan
        .folds
        .iter()
        .map(|f| FoldSplit::new(&cfg, f).map(|s| split_json(&s)))
        .collect::<Result<Vec<_>>>()?;
    let out = json!({ "fold_seed": plan.seed, "paper_split": plan.paper_split, "folds": splits });
    println!("{}", report::to_json(&out)?);
    Ok(())
}

fn aggregate(args: &AggregateArgs) -> Result<()> {
    let subsets = read_subsets(open(&args.subsets)?)?;
    let ratings = read_ratings(open(&args.ratings)?)?;
    let outcome = aggregate_ratings(&subsets, &ratings, args.seed)?;
    let mut w = csv::Writer::from_writer(create(&args.output)?);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["item", "mean_score", "contributing_ratings"]).map_err(csv_err)?;
    for (item, label) in &outcome.labels {
        w.write_record([item.clone(), label.mean_score.to_string(), label.contributing_ratings.len().to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&args.output, e))?;
    println!(
        "{} items labeled, {} tasks of {} removed as spam, seed {}",
        outcome.labels.len(),
        outcome.tasks_removed,
        outcome.tasks_total,
        args.seed
    );
    for (worker, n) in &outcome.overactive_workers {
        println!("warning: worker {worker} completed {n} tasks");
    }
    if !outcome.insufficient.is_empty() {
        let items: Vec<String> = outcome.insufficient.iter().map(|(i, n)| format!("{i} ({n})")).collect();
        return Err(Error::Format(format!("items with too few retained ratings: {}", items.join(", "))));
    }
    Ok(())
}

fn validate(manifest: &Path, summary: Option<&Path>) -> Result<()> {
    let records = parse_manifest(manifest)?;
    let counts = class_counts(&records);
    println!("{} utterances, {} speakers", records.len(), speakers(&records).len());
    for class in ShoutClass::ALL {
        println!("  {:<10} {}", class.label(), counts[class.index()]);
    }
    if let Some(path) = summary {
        write_intensity_summary(create(path)?, &summarize_intensity(&records)?)?;
    }
    Ok(())
}

fn subsets(items: &Path, seed: u64, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(items).map_err(|e| Error::io(items, e))?;
    let ids: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let subsets = make_rating_subsets(&ids, seed)?;
    write_subsets(create(output)?, &subsets)?;
    println!("{} subsets written to {}", subsets.len(), output.display());
    Ok(())
}

fn report_tables(input: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let file = ReportFile::parse(&text)?;
    let reports = file.experiments();
    report::write_score_table(create(&out_dir.join("scores.csv"))?, &reports)?;
    report::write_confusion_csv(create(&out_dir.join("confusion.csv"))?, &reports)?;
    report::write_scatter_csv(create(&out_dir.join("scatter.csv"))?, &reports)?;
    report::write_training_csv(create(&out_dir.join("training.csv"))?, &reports)?;
    println!("{} experiments tabulated in {}", reports.len(), out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Extract { input, kinds, out_dir, csv } => extract(&input, &kinds, &out_dir, csv)?,
        Command::Mix { speech, snr, noise, seed, output } => mix(&speech, snr, noise.as_deref(), seed, &output)?,
        Command::Train { config, fold, output } => train(&config, fold, &output)?,
        Command::Evaluate { model, config, checkpoint, output } => {
            evaluate(&model, config.as_deref(), checkpoint.as_deref(), output.as_deref())?
        }
        Command::Suite { config, output, workers } => return suite(&config, &output, workers),
        Command::Folds { config } => folds(&config)?,
        Command::Corpus(CorpusCommand::Aggregate(args)) => aggregate(&args)?,
        Command::Corpus(CorpusCommand::Validate { manifest, summary }) => validate(&manifest, summary.as_deref())?,
        Command::Corpus(CorpusCommand::Subsets { items, seed, output }) => subsets(&items, seed, &output)?,
        Command::Report { input, out_dir } => report_tables(&input, &out_dir)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
