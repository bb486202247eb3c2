//! Corpus metadata and the labelling procedures behind it: sentence-class
//! voting, crowdsourced rating subsets with dummy items, spammer filtering
//! and intensity aggregation.
//!
//! Manifest CSV columns: `path,speaker,sex,sentence_id,style,class,intensity`
//! where `sex` is `f`/`m`, `style` is `normal`/`shout`, `class` is one of
//! `Normal`, `Shout-H`, `Shout-L`, `Shout-H/L`, and `intensity` is empty or a
//! mean score in [1, 7].
//!
//! Ratings CSV columns: `worker_id,subset_id,item_index,score,is_dummy`, one
//! row per rated item. Subset CSV columns: `subset_id,position,item`, with
//! `item` empty for the dummy slot.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENTENCES: u8 = 50;
pub const SCORE_MIN: u8 = 1;
pub const SCORE_MAX: u8 = 7;
pub const RATINGS_PER_ITEM: usize = 10;
pub const SUBSET_SIZE: usize = 20;
/// Items in one crowdsourcing task: a subset plus its dummy.
pub const TASK_ITEMS: usize = SUBSET_SIZE + 1;
pub const RATERS_PER_SENTENCE: u32 = 5;
/// Dummy scores at or above this mark the worker's task as spam.
pub const SPAM_DUMMY_SCORE: u8 = 2;
pub const MAX_TASKS_PER_WORKER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Sex::Female),
            "m" | "male" => Ok(Sex::Male),
            other => Err(Error::Format(format!("sex must be f or m, got {other:?}"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "f",
            Sex::Male => "m",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Style {
    Normal,
    Shout,
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Style::Normal),
            "shout" | "shouted" => Ok(Style::Shout),
            other => Err(Error::Format(format!("style must be normal or shout, got {other:?}"))),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Normal => "normal",
            Style::Shout => "shout",
        })
    }
}

/// Four-way utterance class. Index order is the class index used by the
/// four-class task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShoutClass {
    Normal,
    ShoutH,
    ShoutL,
    ShoutHL,
}

impl ShoutClass {
    pub const ALL: [ShoutClass; 4] = [ShoutClass::Normal, ShoutClass::ShoutH, ShoutClass::ShoutL, ShoutClass::ShoutHL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Range(format!("class index {i} outside 0..4")))
    }

    pub fn label(self) -> &'static str {
        match self {
            ShoutClass::Normal => "Normal",
            ShoutClass::ShoutH => "Shout-H",
            ShoutClass::ShoutL => "Shout-L",
            ShoutClass::ShoutHL => "Shout-H/L",
        }
    }

    pub fn is_shout(self) -> bool {
        self != ShoutClass::Normal
    }
}

impl fmt::Display for ShoutClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ShoutClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(ShoutClass::Normal),
            "shout-h" | "h" => Ok(ShoutClass::ShoutH),
            "shout-l" | "l" => Ok(ShoutClass::ShoutL),
            "shout-h/l" | "h/l" | "shout-hl" | "hl" => Ok(ShoutClass::ShoutHL),
            other => Err(Error::Format(format!("unknown class {other:?}"))),
        }
    }
}

/// Shouted-sentence class fixed by the sentence number.
pub fn band_class(sentence_id: u8) -> Result<ShoutClass> {
    match sentence_id {
        1..=10 => Ok(ShoutClass::ShoutHL),
        11..=30 => Ok(ShoutClass::ShoutL),
        31..=50 => Ok(ShoutClass::ShoutH),
        other => Err(Error::Range(format!("sentence id {other} outside 1..=50"))),
    }
}

/// Class an utterance must carry given its style and sentence.
pub fn expected_class(style: Style, sentence_id: u8) -> Result<ShoutClass> {
    match style {
        Style::Normal => {
            band_class(sentence_id)?;
            Ok(ShoutClass::Normal)
        }
        Style::Shout => band_class(sentence_id),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub path: String,
    pub speaker_id: String,
    pub sex: Sex,
    pub sentence_id: u8,
    pub style: Style,
    pub class: ShoutClass,
    /// Mean listener rating, shouted utterances only.
    pub intensity: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    path: String,
    speaker: String,
    sex: String,
    sentence_id: String,
    style: String,
    class: String,
    #[serde(default)]
    intensity: Option<String>,
}

fn manifest_err(row: usize, message: impl Into<String>) -> Error {
    Error::Manifest {
        row,
        message: message.into(),
    }
}

impl ManifestRow {
    fn validate(self, row: usize) -> Result<UtteranceRecord> {
        let bad = |e: Error| manifest_err(row, e.to_string());
        let sentence_id: u8 = self
            .sentence_id
            .trim()
            .parse()
            .map_err(|_| manifest_err(row, format!("sentence_id {:?} is not an integer", self.sentence_id)))?;
        let style: Style = self.style.parse().map_err(bad)?;
        let class: ShoutClass = self.class.parse().map_err(bad)?;
        let sex: Sex = self.sex.parse().map_err(bad)?;
        let expected = expected_class(style, sentence_id).map_err(bad)?;
        if class != expected {
            return Err(manifest_err(
                row,
                format!("{style} sentence {sentence_id} must be {expected}, found {class}"),
            ));
        }
        let intensity = match self.intensity.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(text) => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| manifest_err(row, format!("intensity {text:?} is not a number")))?;
                if !(f64::from(SCORE_MIN)..=f64::from(SCORE_MAX)).contains(&v) {
                    return Err(manifest_err(row, format!("intensity {v} outside [1, 7]")));
                }
                if style == Style::Normal {
                    return Err(manifest_err(row, "normal-style utterances carry no intensity"));
                }
                Some(v)
            }
        };
        if self.speaker.trim().is_empty() {
            return Err(manifest_err(row, "empty speaker id"));
        }
        Ok(UtteranceRecord {
            path: self.path,
            speaker_id: self.speaker.trim().to_string(),
            sex,
            sentence_id,
            style,
            class,
            intensity,
        })
    }
}

/// Parses and validates a manifest. Rows are numbered from 1 after the header.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<UtteranceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| manifest_err(row_no, e.to_string()))?;
        out.push(row.validate(row_no)?);
    }
    if out.is_empty() {
        return Err(manifest_err(0, "manifest has no records"));
    }
    Ok(out)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub fn write_manifest<W: Write>(writer: W, records: &[UtteranceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(ManifestRow {
            path: r.path.clone(),
            speaker: r.speaker_id.clone(),
            sex: r.sex.to_string(),
            sentence_id: r.sentence_id.to_string(),
            style: r.style.to_string(),
            class: r.class.to_string(),
            intensity: r.intensity.map(|v| v.to_string()),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Record counts per class, in class-index order.
pub fn class_counts(records: &[UtteranceRecord]) -> [usize; 4] {
    let mut c = [0; 4];
    for r in records {
        c[r.class.index()] += 1;
    }
    c
}

/// Distinct speaker ids in first-appearance order.
pub fn speakers(records: &[UtteranceRecord]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in records {
        if !seen.contains(&r.speaker_id) {
            seen.push(r.speaker_id.clone());
        }
    }
    seen
}

/// Impressions gathered for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceVote {
    pub sentence_id: u8,
    pub h: u32,
    pub l: u32,
    pub hl: u32,
}

impl SentenceVote {
    /// Tallies individual impressions; there must be five, none `Normal`.
    pub fn from_ballots(sentence_id: u8, ballots: &[ShoutClass]) -> Result<Self> {
        if ballots.len() != RATERS_PER_SENTENCE as usize {
            return Err(Error::Range(format!(
                "sentence {sentence_id} has {} ballots, expected {RATERS_PER_SENTENCE}",
                ballots.len()
            )));
        }
        let mut v = SentenceVote {
            sentence_id,
            h: 0,
            l: 0,
            hl: 0,
        };
        for b in ballots {
            match b {
                ShoutClass::ShoutH => v.h += 1,
                ShoutClass::ShoutL => v.l += 1,
                ShoutClass::ShoutHL => v.hl += 1,
                ShoutClass::Normal => return Err(Error::Range("Normal is not a sentence impression".into())),
            }
        }
        Ok(v)
    }

    pub fn total(&self) -> u32 {
        self.h + self.l + self.hl
    }
}

/// Plurality class; any tie for first place yields `ShoutHL`.
pub fn classify_sentence_votes(vote: &SentenceVote) -> ShoutClass {
    let counts = [
        (ShoutClass::ShoutH, vote.h),
        (ShoutClass::ShoutL, vote.l),
        (ShoutClass::ShoutHL, vote.hl),
    ];
    let top = counts.iter().map(|c| c.1).max().unwrap_or(0);
    let mut leaders = counts.iter().filter(|c| c.1 == top);
    match (leaders.next(), leaders.next()) {
        (Some(&(class, _)), None) => class,
        _ => ShoutClass::ShoutHL,
    }
}

/// One worker's answers to one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub worker_id: String,
    pub subset_id: u32,
    /// Scores by task position, dummy included.
    pub scores: Vec<u8>,
    pub dummy_index: usize,
}

impl RatingRecord {
    pub fn new(worker_id: impl Into<String>, subset_id: u32, scores: Vec<u8>, dummy_index: usize) -> Result<Self> {
        if scores.len() != TASK_ITEMS {
            return Err(Error::Range(format!(
                "a task has {TASK_ITEMS} ratings, got {}",
                scores.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(SCORE_MIN..=SCORE_MAX).contains(s)) {
            return Err(Error::Range(format!("score {s} outside 1..=7")));
        }
        if dummy_index >= TASK_ITEMS {
            return Err(Error::Range(format!("dummy position {dummy_index} outside the task")));
        }
        Ok(Self {
            worker_id: worker_id.into(),
            subset_id,
            scores,
            dummy_index,
        })
    }

    pub fn dummy_score(&self) -> u8 {
        self.scores[self.dummy_index]
    }

    pub fn is_spam(&self) -> bool {
        self.dummy_score() >= SPAM_DUMMY_SCORE
    }
}

/// Drops every task whose dummy item scored 2 or higher.
pub fn filter_spammers(records: &[RatingRecord]) -> Vec<RatingRecord> {
    records.iter().filter(|r| !r.is_spam()).cloned().collect()
}

/// Workers who answered more than the allowed number of tasks, with counts.
pub fn overactive_workers(records: &[RatingRecord]) -> Vec<(String, usize)> {
    let mut tasks: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *tasks.entry(&r.worker_id).or_default() += 1;
    }
    let over: Vec<(String, usize)> = tasks
        .into_iter()
        .filter(|&(_, n)| n > MAX_TASKS_PER_WORKER)
        .map(|(w, n)| (w.to_string(), n))
        .collect();
    for (w, n) in &over {
        log::warn!("worker {w} answered {n} tasks (limit {MAX_TASKS_PER_WORKER})");
    }
    over
}

#[derive(Debug, Deserialize, Serialize)]
struct RatingRow {
    worker_id: String,
    subset_id: u32,
    item_index: usize,
    score: u8,
    is_dummy: String,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads the per-item ratings table and groups it into one record per
/// (worker, subset). Rows are numbered from 1 after the header.
pub fn read_ratings<R: Read>(reader: R) -> Result<Vec<RatingRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut tasks: BTreeMap<(String, u32), (BTreeMap<usize, u8>, Vec<usize>, usize)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<RatingRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| manifest_err(row_no, e.to_string()))?;
        let dummy = parse_flag(&row.is_dummy)
            .ok_or_else(|| manifest_err(row_no, format!("is_dummy {:?} is not a flag", row.is_dummy)))?;
        let entry = tasks
            .entry((row.worker_id.clone(), row.subset_id))
            .or_insert_with(|| (BTreeMap::new(), Vec::new(), row_no));
        if entry.0.insert(row.item_index, row.score).is_some() {
            return Err(manifest_err(
                row_no,
                format!("worker {} rated item {} twice", row.worker_id, row.item_index),
            ));
        }
        if dummy {
            entry.1.push(row.item_index);
        }
    }
    if tasks.is_empty() {
        return Err(manifest_err(0, "ratings table has no rows"));
    }
    tasks
        .into_iter()
        .map(|((worker, subset), (scores, dummies, first_row))| {
            let err = |m: String| manifest_err(first_row, format!("worker {worker}, subset {subset}: {m}"));
            if dummies.len() != 1 {
                return Err(err(format!("{} dummy items, expected 1", dummies.len())));
            }
            let positions: Vec<usize> = scores.keys().copied().collect();
            if positions != (0..TASK_ITEMS).collect::<Vec<_>>() {
                return Err(err(format!("item positions must be 0..{TASK_ITEMS}")));
            }
            RatingRecord::new(worker.clone(), subset, scores.into_values().collect(), dummies[0])
                .map_err(|e| err(e.to_string()))
        })
        .collect()
}

pub fn write_ratings<W: Write>(writer: W, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        for (i, &score) in r.scores.iter().enumerate() {
            w.serialize(RatingRow {
                worker_id: r.worker_id.clone(),
                subset_id: r.subset_id,
                item_index: i,
                score,
                is_dummy: if i == r.dummy_index { "1" } else { "0" }.into(),
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot<T> {
    Item(T),
    Dummy,
}

/// One crowdsourcing task: 20 items and a dummy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSubset<T> {
    /// 1-based.
    pub subset_id: u32,
    pub slots: Vec<Slot<T>>,
}

impl<T> RatingSubset<T> {
    pub fn dummy_index(&self) -> usize {
        self.slots.iter().position(|s| matches!(s, Slot::Dummy)).unwrap_or(0)
    }
}

/// Shuffles items into subsets of 20 and inserts one dummy per subset at a
/// random position.
pub fn make_rating_subsets<T: Clone>(items: &[T], seed: u64) -> Result<Vec<RatingSubset<T>>> {
    if items.is_empty() || items.len() % SUBSET_SIZE != 0 {
        return Err(Error::Config(format!(
            "{} items cannot be split into subsets of {SUBSET_SIZE}",
            items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(SUBSET_SIZE)
        .enumerate()
        .map(|(k, chunk)| {
            let mut slots: Vec<Slot<T>> = chunk.iter().map(|&i| Slot::Item(items[i].clone())).collect();
            slots.insert(rng.gen_range(0..=SUBSET_SIZE), Slot::Dummy);
            RatingSubset {
                subset_id: k as u32 + 1,
                slots,
            }
        })
        .collect())
}

#[derive(Debug, Deserialize, Serialize)]
struct SubsetRow {
    subset_id: u32,
    position: usize,
    item: String,
}

pub fn write_subsets<W: Write>(writer: W, subsets: &[RatingSubset<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in subsets {
        for (position, slot) in s.slots.iter().enumerate() {
            let item = match slot {
                Slot::Item(id) => id.clone(),
                Slot::Dummy => String::new(),
            };
            w.serialize(SubsetRow {
                subset_id: s.subset_id,
                position,
                item,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_subsets<R: Read>(reader: R) -> Result<Vec<RatingSubset<String>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_id: BTreeMap<u32, BTreeMap<usize, Slot<String>>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<SubsetRow>().enumerate() {
        let row = row.map_err(|e| manifest_err(i + 1, e.to_string()))?;
        let slot = if row.item.is_empty() {
            Slot::Dummy
        } else {
            Slot::Item(row.item)
        };
        if by_id.entry(row.subset_id).or_default().insert(row.position, slot).is_some() {
            return Err(manifest_err(i + 1, "duplicate subset position"));
        }
    }
    by_id
        .into_iter()
        .map(|(subset_id, slots)| {
            let slots: Vec<Slot<String>> = slots.into_values().collect();
            let dummies = slots.iter().filter(|s| matches!(s, Slot::Dummy)).count();
            if slots.len() != TASK_ITEMS || dummies != 1 {
                return Err(manifest_err(
                    0,
                    format!("subset {subset_id} needs {TASK_ITEMS} slots with one dummy"),
                ));
            }
            Ok(RatingSubset { subset_id, slots })
        })
        .collect()
}

/// Mean of exactly ten ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityLabel {
    pub mean_score: f64,
    pub contributing_ratings: Vec<u8>,
}

/// Picks ten ratings uniformly without replacement under `seed` and averages them.
pub fn aggregate_intensity(item: &str, ratings: &[u8], seed: u64) -> Result<IntensityLabel> {
    if ratings.len() < RATINGS_PER_ITEM {
        return Err(Error::InsufficientRatings {
            item: item.to_string(),
            available: ratings.len(),
            required: RATINGS_PER_ITEM,
        });
    }
    if let Some(s) = ratings.iter().find(|s| !(SCORE_MIN..=SCORE_MAX).contains(s)) {
        return Err(Error::Range(format!("score {s} outside 1..=7 for {item}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, ratings.len(), RATINGS_PER_ITEM).into_vec();
    picks.sort_unstable();
    let chosen: Vec<u8> = picks.iter().map(|&i| ratings[i]).collect();
    let mean = chosen.iter().map(|&s| f64::from(s)).sum::<f64>() / RATINGS_PER_ITEM as f64;
    Ok(IntensityLabel {
        mean_score: mean,
        contributing_ratings: chosen,
    })
}

/// Outcome of the ratings pipeline for every item.
#[derive(Debug, Clone, Default)]
pub struct AggregationOutcome {
    pub labels: BTreeMap<String, IntensityLabel>,
    pub insufficient: Vec<(String, usize)>,
    pub tasks_total: usize,
    pub tasks_removed: usize,
    pub overactive_workers: Vec<(String, usize)>,
}

/// Filters spam, collects each item's retained scores and aggregates them.
/// Each item draws its ten ratings from a seed derived from `seed` and its
/// position in the sorted item list.
pub fn aggregate_ratings(
    subsets: &[RatingSubset<String>],
    ratings: &[RatingRecord],
    seed: u64,
) -> Result<AggregationOutcome> {
    let by_id: BTreeMap<u32, &RatingSubset<String>> = subsets.iter().map(|s| (s.subset_id, s)).collect();
    let overactive = overactive_workers(ratings);
    let kept = filter_spammers(ratings);
    let mut scores: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for s in subsets {
        for slot in &s.slots {
            if let Slot::Item(id) = slot {
                scores.entry(id.clone()).or_default();
            }
        }
    }
    for r in &kept {
        let subset = by_id
            .get(&r.subset_id)
            .ok_or_else(|| Error::Config(format!("ratings refer to unknown subset {}", r.subset_id)))?;
        if subset.dummy_index() != r.dummy_index {
            return Err(Error::Config(format!(
                "worker {} saw the dummy of subset {} at {}, plan says {}",
                r.worker_id,
                r.subset_id,
                r.dummy_index,
                subset.dummy_index()
            )));
        }
        for (slot, &score) in subset.slots.iter().zip(&r.scores) {
            if let Slot::Item(id) = slot {
                scores.get_mut(id).expect("registered above").push(score);
            }
        }
    }
    let mut out = AggregationOutcome {
        tasks_total: ratings.len(),
        tasks_removed: ratings.len() - kept.len(),
        overactive_workers: overactive,
        ..Default::default()
    };
    for (k, (item, s)) in scores.into_iter().enumerate() {
        match aggregate_intensity(&item, &s, seed.wrapping_add(k as u64)) {
            Ok(label) => {
                out.labels.insert(item, label);
            }
            Err(Error::InsufficientRatings { available, .. }) => {
                log::warn!("{item}: only {available} ratings after filtering");
                out.insufficient.push((item, available));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Grouped mean and spread of intensity labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensitySummary {
    pub by_speaker: Vec<GroupStat>,
    pub by_sentence: Vec<GroupStat>,
    /// Groups with no shouted utterances, left out of the tables.
    pub empty_groups: Vec<String>,
}

fn group_stat(group: String, values: &[f64]) -> GroupStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    GroupStat {
        group,
        count: values.len(),
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Per-speaker and per-sentence intensity tables over shouted utterances.
pub fn summarize_intensity(records: &[UtteranceRecord]) -> Result<IntensitySummary> {
    let mut speakers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut sentences: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let speaker = speakers.entry(r.speaker_id.clone()).or_default();
        let sentence = sentences.entry(r.sentence_id).or_default();
        if r.style == Style::Shout {
            let v = r
                .intensity
                .ok_or_else(|| manifest_err(i + 1, format!("{} has no intensity label", r.path)))?;
            speaker.push(v);
            sentence.push(v);
        }
    }
    let mut summary = IntensitySummary::default();
    for (k, v) in speakers {
        if v.is_empty() {
            log::warn!("speaker {k} has no shouted utterances");
            summary.empty_groups.push(format!("speaker:{k}"));
        } else {
            summary.by_speaker.push(group_stat(k, &v));
        }
    }
    for (k, v) in sentences {
        if v.is_empty() {
            log::warn!("sentence {k} has no shouted utterances");
            summary.empty_groups.push(format!("sentence:{k}"));
        } else {
            summary.by_sentence.push(group_stat(format!("{k:02}"), &v));
        }
    }
    Ok(summary)
}

/// Writes both tables as one CSV with a `grouping` column.
pub fn write_intensity_summary<W: Write>(writer: W, summary: &IntensitySummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["grouping", "group", "count", "mean", "std", "min", "max"])
        .map_err(fmt_err)?;
    for (name, rows) in [("speaker", &summary.by_speaker), ("sentence", &summary.by_sentence)] {
        for g in rows.iter() {
            w.write_record([
                name.to_string(),
                g.group.clone(),
                g.count.to_string(),
                format!("{:.6}", g.mean),
                format!("{:.6}", g.std),
                format!("{:.6}", g.min),
                format!("{:.6}", g.max),
            ])
            .map_err(fmt_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "path,speaker,sex,sentence_id,style,class,intensity\n";

    fn full_manifest() -> String {
        let mut s = HEADER.to_string();
        for spk in 0..50 {
            let sex = if spk % 2 == 0 { "f" } else { "m" };
            for sent in 1..=50u8 {
                s += &format!("n/{spk}_{sent}.wav,s{spk:02},{sex},{sent},normal,Normal,\n");
                let class = band_class(sent).unwrap();
                s += &format!("s/{spk}_{sent}.wav,s{spk:02},{sex},{sent},shout,{class},4.5\n");
            }
        }
        s
    }

    #[test]
    fn full_corpus_class_counts() {
        let recs = read_manifest(full_manifest().as_bytes()).unwrap();
        assert_eq!(recs.len(), 5000);
        assert_eq!(class_counts(&recs), [2500, 1000, 1000, 500]);
        assert_eq!(speakers(&recs).len(), 50);
    }

    #[test]
    fn manifest_rejects_inconsistent_rows() {
        let text = format!("{HEADER}a.wav,s1,f,3,normal,Normal,\nb.wav,s1,f,35,normal,Shout-H,\n");
        match read_manifest(text.as_bytes()) {
            Err(Error::Manifest { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let text = format!("{HEADER}b.wav,s1,f,35,shout,Shout-L,5\n");
        assert!(matches!(read_manifest(text.as_bytes()), Err(Error::Manifest { row: 1, .. })));
        assert!(matches!(read_manifest("".as_bytes()), Err(Error::Manifest { .. })));
        assert!(matches!(read_manifest(HEADER.as_bytes()), Err(Error::Manifest { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let recs = read_manifest(full_manifest().as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &recs[..20]).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), recs[..20].to_vec());
    }

    #[test]
    fn vote_examples() {
        let v = |h, l, hl| SentenceVote {
            sentence_id: 1,
            h,
            l,
            hl,
        };
        assert_eq!(classify_sentence_votes(&v(3, 1, 1)), ShoutClass::ShoutH);
        assert_eq!(classify_sentence_votes(&v(2, 2, 1)), ShoutClass::ShoutHL);
        assert_eq!(classify_sentence_votes(&v(1, 1, 3)), ShoutClass::ShoutHL);
        assert_eq!(classify_sentence_votes(&v(1, 3, 1)), ShoutClass::ShoutL);
    }

    #[test]
    fn spam_examples() {
        let rec = |dummy| {
            let mut s = vec![4; TASK_ITEMS];
            s[5] = dummy;
            RatingRecord::new("w", 1, s, 5).unwrap()
        };
        let kept = filter_spammers(&[rec(1), rec(2), rec(7)]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].dummy_score(), 1);
    }

    #[test]
    fn aggregation_examples() {
        let l = aggregate_intensity("x", &[4; 10], 0).unwrap();
        assert_eq!(l.mean_score, 4.0);
        let twelve = [1, 2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5];
        let a = aggregate_intensity("x", &twelve, 9).unwrap();
        let b = aggregate_intensity("x", &twelve, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.contributing_ratings.len(), 10);
        assert!(matches!(
            aggregate_intensity("x", &[4; 9], 0),
            Err(Error::InsufficientRatings {
                available: 9,
                required: 10,
                ..
            })
        ));
    }

    #[test]
    fn subset_examples() {
        let items: Vec<usize> = (0..2500).collect();
        let subsets = make_rating_subsets(&items, 3).unwrap();
        assert_eq!(subsets.len(), 125);
        assert!(subsets.iter().all(|s| s.slots.len() == 21));
        assert_eq!(subsets, make_rating_subsets(&items, 3).unwrap());
        assert!(matches!(make_rating_subsets(&items[..2490], 3), Err(Error::Config(_))));
    }

    #[test]
    fn ratings_and_subsets_csv_round_trip() {
        let items: Vec<String> = (0..40).map(|i| format!("item{i}")).collect();
        let subsets = make_rating_subsets(&items, 1).unwrap();
        let mut buf = Vec::new();
        write_subsets(&mut buf, &subsets).unwrap();
        assert_eq!(read_subsets(buf.as_slice()).unwrap(), subsets);
        let recs: Vec<RatingRecord> = subsets
            .iter()
            .map(|s| {
                let mut scores = vec![5; TASK_ITEMS];
                scores[s.dummy_index()] = 1;
                RatingRecord::new("w1", s.subset_id, scores, s.dummy_index()).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_ratings(&mut buf, &recs).unwrap();
        assert_eq!(read_ratings(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn pipeline_filters_and_aggregates() {
        let items: Vec<String> = (0..20).map(|i| format!("i{i:02}")).collect();
        let subsets = make_rating_subsets(&items, 5).unwrap();
        let d = subsets[0].dummy_index();
        let mut recs = Vec::new();
        for w in 0..12 {
            let mut scores = vec![6; TASK_ITEMS];
            // two spammers score the dummy high and everything 1
            let spam = w < 2;
            if spam {
                scores.iter_mut().for_each(|s| *s = 1);
            }
            scores[d] = if spam { 3 } else { 1 };
            recs.push(RatingRecord::new(format!("w{w}"), 1, scores, d).unwrap());
        }
        let out = aggregate_ratings(&subsets, &recs, 0).unwrap();
        assert_eq!(out.tasks_removed, 2);
        assert_eq!(out.labels.len(), 20);
        assert!(out.labels.values().all(|l| l.mean_score == 6.0));
        let out = aggregate_ratings(&subsets, &recs[..10], 0).unwrap();
        assert_eq!(out.insufficient.len(), 20);
    }

    #[test]
    fn overactive_worker_warning() {
        let mk = |subset| {
            let mut s = vec![3; TASK_ITEMS];
            s[0] = 1;
            RatingRecord::new("busy", subset, s, 0).unwrap()
        };
        let recs: Vec<_> = (1..=4).map(mk).collect();
        assert_eq!(overactive_workers(&recs), vec![("busy".to_string(), 4)]);
        assert!(overactive_workers(&recs[..3]).is_empty());
    }

    #[test]
    fn summary_examples() {
        let rec = |spk: &str, sent, style, v| UtteranceRecord {
            path: String::new(),
            speaker_id: spk.into(),
            sex: Sex::Female,
            sentence_id: sent,
            style,
            class: expected_class(style, sent).unwrap(),
            intensity: v,
        };
        let recs = vec![
            rec("a", 31, Style::Shout, Some(3.0)),
            rec("a", 32, Style::Shout, Some(5.0)),
            rec("b", 33, Style::Normal, None),
        ];
        let s = summarize_intensity(&recs).unwrap();
        assert_eq!(s.by_speaker.len(), 1);
        assert_eq!(s.by_speaker[0].mean, 4.0);
        assert_eq!(s.empty_groups, vec!["speaker:b".to_string(), "sentence:33".to_string()]);
        let mut bad = recs.clone();
        bad[1].intensity = None;
        assert!(matches!(summarize_intensity(&bad), Err(Error::Manifest { row: 2, .. })));
        let mut buf = Vec::new();
        write_intensity_summary(&mut buf, &s).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("grouping,group,count"));
    }

    #[test]
    fn every_first_place_tie_is_hl() {
        for h in 0..=5u32 {
            for l in 0..=5 - h {
                let v = SentenceVote { sentence_id: 1, h, l, hl: 5 - h - l };
                let top = h.max(l).max(v.hl);
                let leaders = [h, l, v.hl].iter().filter(|&&c| c == top).count();
                if leaders > 1 {
                    assert_eq!(classify_sentence_votes(&v), ShoutClass::ShoutHL, "{v:?}");
                }
            }
        }
    }

    fn ballot() -> impl Strategy<Value = ShoutClass> {
        prop_oneof![
            Just(ShoutClass::ShoutH),
            Just(ShoutClass::ShoutL),
            Just(ShoutClass::ShoutHL)
        ]
    }

    /// Plurality by brute force over class labels.
    fn vote_oracle(ballots: &[ShoutClass]) -> ShoutClass {
        let count = |c| ballots.iter().filter(|&&b| b == c).count();
        let classes = [ShoutClass::ShoutH, ShoutClass::ShoutL, ShoutClass::ShoutHL];
        let best = classes.iter().map(|&c| count(c)).max().unwrap();
        let winners: Vec<_> = classes.iter().filter(|&&c| count(c) == best).collect();
        if winners.len() == 1 {
            *winners[0]
        } else {
            ShoutClass::ShoutHL
        }
    }

    proptest! {
        #[test]
        fn spam_predicate_is_exact(dummy in 1u8..=7, pos in 0usize..TASK_ITEMS, fill in 1u8..=7) {
            let mut s = vec![fill; TASK_ITEMS];
            s[pos] = dummy;
            let r = RatingRecord::new("w", 1, s, pos).unwrap();
            prop_assert_eq!(filter_spammers(&[r]).len() == 1, dummy < 2);
        }

        #[test]
        fn aggregation_takes_ten_within_range(
            ratings in prop::collection::vec(1u8..=7, 10..40),
            seed in any::<u64>(),
        ) {
            let l = aggregate_intensity("p", &ratings, seed).unwrap();
            prop_assert_eq!(l.contributing_ratings.len(), 10);
            prop_assert!((1.0..=7.0).contains(&l.mean_score));
            let mean = l.contributing_ratings.iter().map(|&s| s as f64).sum::<f64>() / 10.0;
            prop_assert_eq!(l.mean_score, mean);
            // the chosen ratings form a sub-multiset of the input
            let mut pool = ratings.clone();
            for s in &l.contributing_ratings {
                let i = pool.iter().position(|p| p == s);
                prop_assert!(i.is_some());
                pool.swap_remove(i.unwrap());
            }
        }

        #[test]
        fn votes_permutation_invariant(mut ballots in prop::collection::vec(ballot(), 5), seed in any::<u64>()) {
            let a = classify_sentence_votes(&SentenceVote::from_ballots(1, &ballots).unwrap());
            ballots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = classify_sentence_votes(&SentenceVote::from_ballots(1, &ballots).unwrap());
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, vote_oracle(&ballots));
        }

        #[test]
        fn subsets_partition_items(groups in 1usize..8, seed in any::<u64>()) {
            let items: Vec<usize> = (0..groups * SUBSET_SIZE).collect();
            let subsets = make_rating_subsets(&items, seed).unwrap();
            prop_assert_eq!(subsets.len(), groups);
            let mut seen = Vec::new();
            for s in &subsets {
                prop_assert_eq!(s.slots.len(), TASK_ITEMS);
                prop_assert_eq!(s.slots.iter().filter(|x| matches!(x, Slot::Dummy)).count(), 1);
                seen.extend(s.slots.iter().filter_map(|x| match x { Slot::Item(i) => Some(*i), Slot::Dummy => None }));
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, items);
        }
    }
}
