//! Speaker-independent folds for a 50-speaker corpus.

use shoutnet::experiments::{plan_folds, split_validation};

fn main() -> shoutnet::Result<()> {
    let speakers: Vec<String> = (1..=50)
        .map(|i| format!("{}{i:02}", if i % 2 == 0 { 'f' } else { 'm' }))
        .collect();
    let plan = plan_folds(&speakers, 2024)?;
    for fold in &plan.folds {
        let (train, validation) = split_validation(&fold.train_validation, 0.2, fold.index as u64);
        println!(
            "fold {}: {} train, {} validation, test {:?}",
            fold.index,
            train.len(),
            validation.len(),
            fold.test
        );
    }
    Ok(())
}
