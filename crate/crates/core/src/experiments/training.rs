use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::neural::{AdamConfig, AdamState, Real};

/// Samples whose gradients are summed sequentially before joining the
/// batch total. Fixing the group size keeps sums independent of the worker
/// count.
const GRADIENT_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingLog {
    pub stage: String,
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) with the lowest validation loss.
    pub best_epoch: Option<usize>,
}

pub struct TrainOutcome<T> {
    pub model: Network<T>,
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Option<Network<T>>,
    pub log: TrainingLog,
}

type Grads<T> = Vec<Option<Vec<T>>>;

fn add_into<T: Real>(acc: &mut Grads<T>, g: Grads<T>) {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(x, &y)| *x += y),
            (None, Some(g)) => *a = Some(g),
            (_, None) => {}
        }
    }
}

/// Summed gradients and loss of a group, in sample order.
fn group_gradients<T: Real>(net: &Network<T>, group: &[&Example]) -> Result<(f64, Grads<T>)> {
    let mut loss = 0.0;
    let mut acc: Grads<T> = vec![None; net.params.len()];
    for ex in group {
        let (l, g) = net.loss_and_grads(&ex.input_refs(), &ex.target)?;
        loss += l;
        add_into(&mut acc, g);
    }
    Ok((loss, acc))
}

fn batch_gradients<T: Real>(net: &Network<T>, batch: &[&Example], workers: usize) -> Result<(f64, Grads<T>)> {
    let groups: Vec<&[&Example]> = batch.chunks(GRADIENT_GROUP).collect();
    let results: Vec<Result<(f64, Grads<T>)>> = if workers <= 1 || groups.len() == 1 {
        groups.iter().map(|g| group_gradients(net, g)).collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, Grads<T>)>>> = (0..groups.len()).map(|_| None).collect();
        let per = groups.len().div_ceil(workers);
        std::thread::scope(|s| {
            for (gs, out) in groups.chunks(per).zip(slots.chunks_mut(per)) {
                s.spawn(move || {
                    for (g, o) in gs.iter().zip(out.iter_mut()) {
                        *o = Some(group_gradients(net, g));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every group computed")).collect()
    };
    let mut loss = 0.0;
    let mut acc: Grads<T> = vec![None; net.params.len()];
    for r in results {
        let (l, g) = r?;
        loss += l;
        add_into(&mut acc, g);
    }
    Ok((loss, acc))
}

/// Mean task loss over a set.
pub fn mean_loss<T: Real>(net: &Network<T>, set: &[Example]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for ex in set {
        total += net.loss(&ex.input_refs(), &ex.target)?;
    }
    Ok(total / set.len() as f64)
}

/// Adam on seeded shuffled mini-batches of averaged per-sample gradients.
pub fn train_network<T: Real>(
    mut net: Network<T>,
    train: &[Example],
    validation: &[Example],
    settings: &TrainSettings,
    stage: &str,
) -> Result<TrainOutcome<T>> {
    if train.is_empty() {
        return Err(Error::Config(format!("{stage}: no training examples")));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(settings.adam, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        stage: stage.to_string(),
        ..Default::default()
    };
    let mut best: Option<(f64, Network<T>)> = None;
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(settings.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let context = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("{stage}, epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            };
            let (loss, mut grads) = batch_gradients(&net, &batch, settings.workers).map_err(context)?;
            let scale = T::from_f64(1.0 / batch.len() as f64);
            grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
            adam.step(&mut net.params, &grads).map_err(context)?;
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(mean_loss(&net, validation)?)
        };
        log::debug!("{stage} epoch {epoch}: train {train_loss:.5} val {validation_loss:?}");
        if let Some(v) = validation_loss {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, net.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
        });
    }
    Ok(TrainOutcome {
        model: net,
        best: best.map(|(_, n)| n),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureBlock, FeatureKind, BLOCK_FRAMES};
    use crate::models::{reduced_spec, Architecture, ModelSpec, TaskHead};
    use crate::neural::Target;
    use rand::Rng;

    fn toy_set(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let shift = if label == 1 { 0.8 } else { -0.8 };
                let data = (0..30 * BLOCK_FRAMES).map(|_| shift + rng.gen_range(-1.0..1.0)).collect();
                Example {
                    inputs: vec![FeatureBlock {
                        kind: FeatureKind::Tmfcc,
                        dim: 30,
                        data,
                        clip_ref: format!("c{i}"),
                        block_index: 0,
                    }],
                    target: Target::Values(vec![label as f64]),
                    clip: i,
                }
            })
            .collect()
    }

    fn small_net<T: Real>() -> Network<T> {
        let spec = reduced_spec(&ModelSpec::single(Architecture::Cnn, FeatureKind::Tmfcc), 4);
        Network::build(spec, TaskHead::Binary, 3).unwrap()
    }

    fn settings(workers: usize) -> TrainSettings {
        TrainSettings {
            epochs: 3,
            batch_size: 10,
            adam: AdamConfig {
                lr: 1e-3,
                ..Default::default()
            },
            seed: 5,
            workers,
        }
    }

    #[test]
    fn untrained_binary_loss_near_quarter() {
        let set = toy_set(40, 1);
        let l = mean_loss(&small_net::<f64>(), &set).unwrap();
        assert!((l - 0.25).abs() < 0.05, "{l}");
    }

    #[test]
    fn identical_seeds_identical_checkpoints() {
        let set = toy_set(24, 2);
        let a = train_network(small_net::<f64>(), &set, &set[..4], &settings(1), "t").unwrap();
        let b = train_network(small_net::<f64>(), &set, &set[..4], &settings(1), "t").unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.log, b.log);
        // worker count does not change the arithmetic
        let c = train_network(small_net::<f64>(), &set, &set[..4], &settings(3), "t").unwrap();
        assert_eq!(a.model.params, c.model.params);
    }

    #[test]
    fn loss_decreases_on_separable_set() {
        let set = toy_set(40, 3);
        let mut s = settings(1);
        s.epochs = 10;
        let out = train_network(small_net::<f32>(), &set, &[], &s, "t").unwrap();
        let first = out.log.epochs[0].train_loss;
        let last = out.log.epochs.last().unwrap().train_loss;
        assert!(last < first * 0.5, "{first} -> {last}");
        assert!(out.best.is_none());
    }

    #[test]
    fn non_finite_input_reports_context() {
        let mut set = toy_set(4, 4);
        set[2].inputs[0].data[0] = f64::NAN;
        let err = train_network(small_net::<f64>(), &set, &[], &settings(1), "stage-x").err().unwrap();
        match err {
            Error::Numeric(m) => assert!(m.contains("stage-x, epoch 1, batch 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
