//! The labeling side of corpus construction: majority votes over shout
//! types, rating subsets with a dummy sample, spam filtering and intensity
//! aggregation, all on simulated crowd workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shoutnet::corpus::{
    aggregate_ratings, classify_sentence_votes, make_rating_subsets, RatingRecord, SentenceVote, ShoutClass, Slot,
    SPAM_DUMMY_SCORE,
};

fn main() -> shoutnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    println!("shout-type votes from five raters:");
    let choices = [ShoutClass::ShoutH, ShoutClass::ShoutL, ShoutClass::ShoutHL];
    for sentence in 1..=6u8 {
        let leaning = choices[usize::from(sentence) % 3];
        let ballots: Vec<ShoutClass> = (0..5)
            .map(|_| if rng.gen_bool(0.6) { leaning } else { choices[rng.gen_range(0..3)] })
            .collect();
        let vote = SentenceVote::from_ballots(sentence, &ballots)?;
        println!(
            "  sentence {sentence}: H={} L={} H/L={} -> {}",
            vote.h,
            vote.l,
            vote.hl,
            classify_sentence_votes(&vote).label()
        );
    }

    // 60 shouted utterances with a hidden "true" loudness
    let items: Vec<String> = (0..60).map(|i| format!("utt{i:03}")).collect();
    let truth = |id: &str| 1.0 + 6.0 * (id[3..].parse::<f64>().unwrap() / 59.0);
    let subsets = make_rating_subsets(&items, 9)?;

    let mut ratings = Vec::new();
    for (w, subset) in subsets.iter().cycle().take(subsets.len() * 14).enumerate() {
        let spammer = w % 7 == 0;
        let scores: Vec<u8> = subset
            .slots
            .iter()
            .map(|slot| match slot {
                _ if spammer => rng.gen_range(1..=7),
                Slot::Dummy => SPAM_DUMMY_SCORE - 1,
                Slot::Item(id) => (truth(id) + rng.gen_range(-1.0..1.0)).round().clamp(1.0, 7.0) as u8,
            })
            .collect();
        ratings.push(RatingRecord::new(format!("w{w:03}"), subset.subset_id, scores, subset.dummy_index())?);
    }

    let outcome = aggregate_ratings(&subsets, &ratings, 1)?;
    println!(
        "{} subsets, {} rating tasks, {} removed as spam, {} items labeled",
        subsets.len(),
        outcome.tasks_total,
        outcome.tasks_removed,
        outcome.labels.len()
    );
    for (item, label) in outcome.labels.iter().step_by(12) {
        println!("  {item}: mean {:.2} (true {:.2})", label.mean_score, truth(item));
    }
    Ok(())
}
