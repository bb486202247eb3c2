//! Runs a small grid of cross-validated experiments from a TOML document and
//! writes the score table and plot-ready CSVs.

use shoutnet::experiments::{report, run_suite, SuiteConfig};

const SUITE: &str = r#"
workers = 1

[base]
snrs = ["clean", "20", "0", "-10"]
epochs = 4
batch_size = 16
learning_rate = 1e-3
fold_limit = 2

[base.data]
source = "synthetic"
speakers = 6
clips_per_speaker = 8

[[cell]]
name = "cnn-fusion"
features = ["mel-spectrogram", "tmfcc"]

[[cell]]
name = "gru-tmfcc"
arch = "gru"
features = ["tmfcc"]

[[cell]]
name = "four-class"
task = "four-class"
features = ["tmfcc"]

[[cell]]
name = "intensity"
task = "regression"
features = ["tmfcc"]
"#;

fn main() -> shoutnet::Result<()> {
    env_logger::init();
    let suite = SuiteConfig::from_toml(SUITE)?;
    let result = run_suite(&suite)?;
    let reports: Vec<_> = result.reports().collect();

    let out = std::env::temp_dir().join("shoutnet-example-suite");
    std::fs::create_dir_all(&out).map_err(|e| shoutnet::Error::io(&out, e))?;
    let file = |name: &str| {
        let path = out.join(name);
        std::fs::File::create(&path).map_err(|e| shoutnet::Error::io(&path, e))
    };
    report::write_score_table(std::io::stdout(), &reports)?;
    report::write_confusion_csv(file("confusion.csv")?, &reports)?;
    report::write_scatter_csv(file("scatter.csv")?, &reports)?;
    report::write_training_csv(file("training.csv")?, &reports)?;
    std::fs::write(out.join("suite.json"), report::to_json(&result)?).map_err(|e| shoutnet::Error::io(&out, e))?;
    println!("CSVs and suite.json in {}", out.display());
    Ok(())
}
