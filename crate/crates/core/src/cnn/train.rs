use std::ops::{ControlFlow, Range};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, ArchSpec, Network, Sample};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::simulator::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("split", "fractions must be in [0, 1] and sum to 1"));
        }
        Ok(())
    }
}

/// Contiguous train, validation and test index ranges over `n` samples. Samples are
/// i.i.d. by construction, so no shuffling is needed here.
pub fn split_indices(n: usize, fractions: &SplitFractions) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
    fractions.validate()?;
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Ok((0..n_train, n_train..n_train + n_val, n_train + n_val..n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    /// Set by the caller; experiment configs derive it from their top-level seed.
    #[serde(skip)]
    pub seed: u64,
    /// Weight on the positive-class term of the loss; 1 leaves it unweighted.
    pub pos_weight: f64,
    /// Samples per fixed-order gradient chunk.
    pub chunk_size: usize,
    /// Decision threshold used for the validation AER column of the log.
    pub threshold: f64,
    pub split: SplitFractions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 64,
            epochs: 40,
            patience: 8,
            seed: 1,
            pos_weight: 1.0,
            chunk_size: 16,
            threshold: 0.5,
            split: SplitFractions::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.split.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.chunk_size == 0 {
            return Err(Error::param("train", "batch_size, epochs and chunk_size must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", "must be positive"));
        }
        if !(self.pos_weight > 0.0) {
            return Err(Error::param("pos_weight", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param("threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_aer: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub net: Network<T>,
    pub adam: AdamState<T>,
    pub best: Network<T>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub since_best: usize,
    pub log: Vec<EpochRecord>,
    pub finished: bool,
}

impl<T: Real> TrainState<T> {
    pub fn start(arch: ArchSpec, seed: u64) -> Result<Self> {
        let net = Network::new(arch, seed)?;
        Ok(Self {
            adam: AdamState::new(net.params()),
            best: net.clone(),
            net,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            log: Vec::new(),
            finished: false,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.log.len()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Network<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Patience ran out before the epoch budget.
    pub stopped_early: bool,
    /// False when the callback paused the run.
    pub completed: bool,
}

/// Mini-batch Adam from a fresh initialisation; returns the best-validation network.
pub fn train<T: Real>(
    train_set: &[Sample<'_, T>],
    val_set: &[Sample<'_, T>],
    arch: ArchSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let state = TrainState::start(arch, cfg.seed)?;
    train_from_state(state, train_set, val_set, cfg, &mut |_| Ok(ControlFlow::Continue(())))
}

fn aer_at<T: Real>(net: &Network<T>, set: &[Sample<'_, T>], threshold: f64) -> Result<f64> {
    let inputs: Vec<&[T]> = set.iter().map(|(x, _)| *x).collect();
    let probs = net.predict_batch(&inputs)?;
    let mut errors = 0usize;
    let mut total = 0usize;
    for (p, (_, a)) in probs.iter().zip(set) {
        for (pk, &ak) in p.iter().zip(a.iter()) {
            errors += usize::from((pk.as_f64() >= threshold) != ak);
            total += 1;
        }
    }
    Ok(errors as f64 / total as f64)
}

/// Continues training from `state`. `on_epoch` runs after every completed epoch
/// (for logging and resume snapshots); it may pause the run by breaking, and an
/// error from it aborts training.
///
/// Each epoch visits the training set in an order drawn from `(seed, epoch)` alone,
/// so a resumed run replays exactly the batches an uninterrupted run would see.
pub fn train_from_state<T: Real>(
    mut state: TrainState<T>,
    train_set: &[Sample<'_, T>],
    val_set: &[Sample<'_, T>],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&TrainState<T>) -> Result<ControlFlow<()>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::param("dataset", "training and validation splits must be non-empty"));
    }
    let adam = cfg.adam();
    let shuffle_seed = derive_seed(cfg.seed, "cnn-shuffle");
    while !state.finished && state.epochs_done() < cfg.epochs {
        let epoch = state.epochs_done() + 1;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<'_, T>> = idx.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = state.net.batch_gradient(&batch, cfg.pos_weight, cfg.chunk_size)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss or gradient (loss {loss})"),
                });
            }
            adam_step(state.net.params_mut(), &grads, &mut state.adam, &adam)?;
            loss_sum += loss.as_f64() * batch.len() as f64;
        }
        if !state.net.params().is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite parameters after update".into(),
            });
        }
        let val_loss = state.net.batch_loss(val_set, cfg.pos_weight)?.as_f64();
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_aer: aer_at(&state.net, val_set, cfg.threshold)?,
        };
        state.log.push(record);
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = epoch;
            state.best = state.net.clone();
            state.since_best = 0;
        } else {
            state.since_best += 1;
        }
        if state.since_best >= cfg.patience || epoch >= cfg.epochs {
            state.finished = true;
        }
        if on_epoch(&state)?.is_break() {
            break;
        }
    }
    Ok(TrainOutcome {
        stopped_early: state.finished && state.epochs_done() < cfg.epochs,
        completed: state.finished,
        best: state.best,
        best_epoch: state.best_epoch,
        log: state.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::LayerSpec;
    use rand::Rng;

    fn small_arch(k: usize) -> ArchSpec {
        ArchSpec {
            input: (2, k, 3),
            layers: vec![
                LayerSpec::Conv2d { filters: 4, kernel: (3, 3) },
                LayerSpec::Relu,
                LayerSpec::MeanPoolSymbols,
                LayerSpec::Dense { units: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: k },
            ],
        }
    }

    fn random_data(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n).map(|_| (0..2 * k * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys = (0..n).map(|_| (0..k).map(|_| rng.random::<bool>()).collect()).collect();
        (xs, ys)
    }

    fn samples<'a>(xs: &'a [Vec<f64>], ys: &'a [Vec<bool>]) -> Vec<Sample<'a, f64>> {
        xs.iter().zip(ys).map(|(x, y)| (x.as_slice(), y.as_slice())).collect()
    }

    #[test]
    fn split_ranges() {
        let (a, b, c) = split_indices(100, &SplitFractions::default()).unwrap();
        assert_eq!((a, b, c), (0..80, 80..90, 90..100));
        let bad = SplitFractions { train: 0.8, val: 0.3, test: 0.1 };
        assert!(split_indices(10, &bad).is_err());
    }

    #[test]
    fn memorizes_small_set() {
        let k = 3;
        let (xs, ys) = random_data(100, k, 1);
        let set = samples(&xs, &ys);
        let cfg = TrainConfig {
            epochs: 200,
            patience: 200,
            batch_size: 20,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train(&set, &set, small_arch(k), &cfg).unwrap();
        let last = out.log.last().unwrap().train_loss;
        assert!(last < 0.05 * k as f64 * 2f64.ln(), "final loss {last}");
    }

    #[test]
    fn shuffled_labels_do_not_generalize() {
        let k = 3;
        let (xs, ys) = random_data(300, k, 2);
        let (vx, vy) = random_data(200, k, 3);
        let cfg = TrainConfig { epochs: 15, patience: 15, batch_size: 32, ..TrainConfig::default() };
        let out = train(&samples(&xs, &ys), &samples(&vx, &vy), small_arch(k), &cfg).unwrap();
        // Labels are fair coins, so the entropy factor is 1.
        let floor = 0.9 * k as f64 * 2f64.ln();
        assert!(out.log.iter().all(|r| r.val_loss >= floor), "{:?}", out.log);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (xs, ys) = random_data(64, 2, 4);
        let set = samples(&xs, &ys);
        let cfg = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
        let a = train(&set, &set, small_arch(2), &cfg).unwrap();
        let b = train(&set, &set, small_arch(2), &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (xs, ys) = random_data(64, 2, 5);
        let set = samples(&xs, &ys);
        let cfg = TrainConfig { epochs: 6, patience: 6, batch_size: 16, ..TrainConfig::default() };
        let full = train(&set, &set, small_arch(2), &cfg).unwrap();
        let mut snapshot = None;
        let state = TrainState::start(small_arch(2), cfg.seed).unwrap();
        let paused = train_from_state(state, &set, &set, &cfg, &mut |s| {
            snapshot = Some(s.clone());
            Ok(if s.epochs_done() == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })
        .unwrap();
        assert!(!paused.completed);
        let state = snapshot.unwrap();
        assert!(!state.finished);
        let resumed = train_from_state(state, &set, &set, &cfg, &mut |_| Ok(ControlFlow::Continue(()))).unwrap();
        assert!(resumed.completed);
        assert_eq!(resumed.log, full.log);
        assert_eq!(resumed.best, full.best);
    }

    #[test]
    fn loss_does_not_increase_on_average() {
        let mut drops = 0;
        for seed in 0..5 {
            let (xs, _) = random_data(128, 3, 10 + seed);
            // A learnable target: device k is active when its first input is positive.
            let ys: Vec<Vec<bool>> = xs.iter().map(|x| (0..3).map(|k| x[k * 3] > 0.0).collect()).collect();
            let set = samples(&xs, &ys);
            let cfg = TrainConfig { epochs: 1, batch_size: 16, seed, ..TrainConfig::default() };
            let net = Network::<f64>::new(small_arch(3), seed).unwrap();
            let initial = net.batch_loss(&set, 1.0).unwrap();
            let state = TrainState { net: net.clone(), adam: AdamState::new(net.params()), best: net, best_val_loss: f64::INFINITY, best_epoch: 0, since_best: 0, log: vec![], finished: false };
            let out = train_from_state(state, &set, &set, &cfg, &mut |_| Ok(ControlFlow::Continue(()))).unwrap();
            drops += usize::from(out.log[0].val_loss <= initial);
        }
        assert_eq!(drops, 5);
    }

    #[test]
    fn divergence_is_reported() {
        let (xs, ys) = random_data(16, 2, 6);
        let mut xs = xs;
        xs[3][0] = f64::NAN;
        let set = samples(&xs, &ys);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        assert!(matches!(train(&set, &set, small_arch(2), &cfg), Err(Error::Divergence { epoch: 1, .. })));
    }
}
