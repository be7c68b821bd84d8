use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Optimizer, OptimizerKind};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, hint_penalty_batch, HintConfig, RepresentationBatch};
use crate::network::NetworkSplit;
use crate::tensor::Tensor;

/// How long and in what batches to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation error is measured every `eval_every` epochs and after
    /// the last one; the best-validation parameters are kept.
    pub eval_every: usize,
    pub optimizer: OptimizerKind,
    /// Also measure test error at every evaluation (otherwise only once,
    /// at the selected checkpoint).
    pub track_test: bool,
}


impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            batch_size: 100,
            seed: 0,
            eval_every: 1,
            optimizer: OptimizerKind::default(),
            track_test: false,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self, config: &HintConfig) -> Result<()> {
        self.optimizer.validate()?;
        if self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("max_epochs and eval_every must be at least 1".into()));
        }
        let min_batch = if config.hint_active() { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch_size must be at least {min_batch}{}",
                if config.hint_active() { " when the hint term is active" } else { "" }
            )));
        }
        Ok(())
    }

    /// Mini-batches of one epoch: a seeded permutation of `0..n` cut into
    /// `batch_size` pieces; a trailing piece shorter than 2 is dropped.
    pub fn batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        perm.shuffle(&mut rng);
        perm.chunks(self.batch_size.max(1))
            .filter(|c| c.len() >= 2 || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// One row of the training log. `None` cells were not measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean supervised loss over the epoch's mini-batches.
    pub j_sup: f64,
    /// Mean hint penalty over the epoch's mini-batches (0 when inactive).
    pub j_hint: f64,
    pub train_error: Option<f64>,
    pub valid_error: Option<f64>,
    pub test_error: Option<f64>,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,j_sup,j_hint,train_error,valid_error,test_error,seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.j_sup,
            self.j_hint,
            cell(self.train_error),
            cell(self.valid_error),
            cell(self.test_error),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub supervised_steps: u64,
    pub hint_steps: u64,
    pub best_epoch: Option<usize>,
    pub best_valid_error: Option<f64>,
    pub test_error_at_best: Option<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Training, validation and test samples for one run.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a dyn Samples,
    pub valid: Option<&'a dyn Samples>,
    pub test: Option<&'a dyn Samples>,
}

/// Misclassified percentage of `samples`, evaluated in chunks.
pub fn classification_error(net: &NetworkSplit, samples: &dyn Samples) -> Result<f64> {
    const CHUNK: usize = 1000;
    let n = samples.len();
    if n == 0 {
        return Err(Error::State("classification error of an empty set".into()));
    }
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, labels) = samples.gather(chunk);
        let probs = net.predict(&x)?;
        for (r, &y) in labels.iter().enumerate() {
            let row = probs.row(r);
            let mut arg = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[arg] {
                    arg = k;
                }
            }
            wrong += usize::from(arg != y);
        }
    }
    Ok(100.0 * wrong as f64 / n as f64)
}

/// Cross-entropy step over every parameter. Returns the batch loss.
pub fn supervised_step(
    net: &mut NetworkSplit,
    optimizer: &mut Optimizer,
    x: &Tensor,
    labels: &[usize],
    gamma: f64,
) -> Result<f64> {
    let last = net.depth() - 1;
    let taps = net.forward_with_taps(x)?;
    let (loss, dprobs) = cross_entropy(taps.probs(), labels)?;
    let mut grads = net.backward_from(last, &dprobs)?;
    grads.scale(gamma);
    optimizer.step(net, &grads)?;
    net.clear_cache();
    Ok(loss)
}

/// Hint step over θ_Γ: forward to the tap only, back-propagate the
/// penalty gradient through Γ. Returns the penalty before the step.
pub fn hint_step(
    net: &mut NetworkSplit,
    optimizer: &mut Optimizer,
    x: &Tensor,
    labels: &[usize],
    config: &HintConfig,
) -> Result<f64> {
    let tap = net.tap();
    let reps = net.forward_to(x, tap)?;
    let (value, dreps) = hint_penalty_batch(&RepresentationBatch::new(reps, labels)?, config.measure)?;
    let mut grads = net.backward_from(tap - 1, &dreps)?;
    grads.scale(config.lambda);
    optimizer.step(net, &grads)?;
    net.clear_cache();
    Ok(value)
}

/// Resumable state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(super) net: NetworkSplit,
    pub(super) best: Option<NetworkSplit>,
    pub(super) config: HintConfig,
    pub(super) schedule: TrainSchedule,
    pub(super) sup_opt: Optimizer,
    pub(super) hint_opt: Optimizer,
    pub(super) epochs_done: usize,
    pub(super) batches_done: u64,
    pub(super) log: TrainLog,
}

impl Trainer {
    pub fn new(mut net: NetworkSplit, config: HintConfig, schedule: TrainSchedule) -> Result<Self> {
        config.validate()?;
        schedule.validate(&config)?;
        net.set_tap(config.tap)?;
        Ok(Self {
            net,
            best: None,
            config,
            schedule,
            sup_opt: Optimizer::new(schedule.optimizer),
            hint_opt: Optimizer::new(schedule.optimizer),
            epochs_done: 0,
            batches_done: 0,
            log: TrainLog::default(),
        })
    }

    pub fn net(&self) -> &NetworkSplit {
        &self.net
    }

    pub fn best(&self) -> Option<&NetworkSplit> {
        self.best.as_ref()
    }

    pub fn config(&self) -> &HintConfig {
        &self.config
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn supervised_optimizer(&self) -> &Optimizer {
        &self.sup_opt
    }

    pub fn hint_optimizer(&self) -> &Optimizer {
        &self.hint_opt
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn batches_done(&self) -> u64 {
        self.batches_done
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.epochs_done >= self.schedule.max_epochs
    }

    /// Runs one epoch. `observer` sees the network after every mini-batch
    /// together with the number of mini-batches processed so far.
    pub fn run_epoch(
        &mut self,
        data: &TrainData<'_>,
        observer: &mut dyn FnMut(&NetworkSplit, u64) -> Result<()>,
    ) -> Result<&EpochRecord> {
        if data.train.is_empty() {
            return Err(Error::State("training set is empty".into()));
        }
        if self.is_done() {
            return Err(Error::State("schedule already complete".into()));
        }
        let start = Instant::now();
        let epoch = self.epochs_done + 1;
        let batches = self.schedule.batches(data.train.len(), epoch);
        let (mut sup_sum, mut hint_sum) = (0.0, 0.0);
        for idx in &batches {
            let (x, labels) = data.train.gather(idx);
            sup_sum += supervised_step(&mut self.net, &mut self.sup_opt, &x, &labels, self.config.gamma)?;
            self.log.supervised_steps += 1;
            if self.config.hint_active() {
                hint_sum += hint_step(&mut self.net, &mut self.hint_opt, &x, &labels, &self.config)?;
                self.log.hint_steps += 1;
            }
            self.batches_done += 1;
            observer(&self.net, self.batches_done)?;
        }
        let count = batches.len().max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            j_sup: sup_sum / count,
            j_hint: hint_sum / count,
            train_error: None,
            valid_error: None,
            test_error: None,
            seconds: 0.0,
        };
        if epoch % self.schedule.eval_every == 0 || epoch == self.schedule.max_epochs {
            record.train_error = Some(classification_error(&self.net, data.train)?);
            if let Some(valid) = data.valid {
                let v = classification_error(&self.net, valid)?;
                record.valid_error = Some(v);
                if self.log.best_valid_error.map_or(true, |b| v < b) {
                    self.log.best_valid_error = Some(v);
                    self.log.best_epoch = Some(epoch);
                    self.best = Some(self.net.clone());
                }
            }
            if let (true, Some(test)) = (self.schedule.track_test, data.test) {
                record.test_error = Some(classification_error(&self.net, test)?);
            }
        }
        record.seconds = start.elapsed().as_secs_f64();
        self.epochs_done = epoch;
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// Network selected by validation error, or the current one when no
    /// validation set was measured.
    pub fn selected(&self) -> &NetworkSplit {
        self.best.as_ref().unwrap_or(&self.net)
    }

    /// Measures test error on the selected network and closes the run.
    pub fn finish(mut self, data: &TrainData<'_>) -> Result<TrainOutcome> {
        if let Some(test) = data.test {
            self.log.test_error_at_best = Some(classification_error(self.selected(), test)?);
        }
        let best = self.best.take().unwrap_or_else(|| self.net.clone());
        Ok(TrainOutcome {
            log: self.log,
            best,
            last: self.net,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Parameters at the lowest validation error.
    pub best: NetworkSplit,
    /// Parameters after the final epoch.
    pub last: NetworkSplit,
}

pub fn train(
    net: NetworkSplit,
    data: &TrainData<'_>,
    config: &HintConfig,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    train_with_observer(net, data, config, schedule, &mut |_, _| Ok(()))
}

pub fn train_with_observer(
    net: NetworkSplit,
    data: &TrainData<'_>,
    config: &HintConfig,
    schedule: &TrainSchedule,
    observer: &mut dyn FnMut(&NetworkSplit, u64) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(net, *config, *schedule)?;
    while !trainer.is_done() {
        trainer.run_epoch(data, observer)?;
    }
    trainer.finish(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TensorSamples;
    use crate::tensor::Activation;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> TensorSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -1.5 } else { 1.5 };
            x.push(centre + rng.gen_range(-0.5..0.5));
            x.push(centre + rng.gen_range(-0.5..0.5));
            y.push(c);
        }
        TensorSamples::new(Tensor::new(vec![n, 2], x).unwrap(), y).unwrap()
    }

    fn toy_net() -> NetworkSplit {
        NetworkSplit::mlp(2, &[8], 2, Activation::Tanh, 1, 3).unwrap()
    }

    #[test]
    fn batches_cover_and_vary() {
        let s = TrainSchedule {
            batch_size: 100,
            seed: 4,
            ..TrainSchedule::default()
        };
        let b1 = s.batches(300, 1);
        assert_eq!(b1.len(), 3);
        let mut all: Vec<usize> = b1.concat();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert_ne!(b1, s.batches(300, 2));
        assert_eq!(b1, s.batches(300, 1));
        assert_eq!(s.batches(301, 1).len(), 3);
        assert_eq!(s.batches(302, 1).len(), 4);
    }

    #[test]
    fn one_epoch_counts_steps() {
        let data = blobs(300, 0);
        let schedule = TrainSchedule {
            max_epochs: 1,
            batch_size: 100,
            ..TrainSchedule::default()
        };
        let mut config = HintConfig::default();
        config.tap = 1;
        let out = train(toy_net(), &TrainData { train: &data, valid: None, test: None }, &config, &schedule).unwrap();
        assert_eq!((out.log.supervised_steps, out.log.hint_steps), (3, 3));

        let config = HintConfig::unregularized(1);
        let out = train(toy_net(), &TrainData { train: &data, valid: None, test: None }, &config, &schedule).unwrap();
        assert_eq!((out.log.supervised_steps, out.log.hint_steps), (3, 0));
        assert!(out.log.records.iter().all(|r| r.j_hint == 0.0));
    }

    #[test]
    fn hint_batch_size_validated() {
        let schedule = TrainSchedule {
            batch_size: 1,
            ..TrainSchedule::default()
        };
        let mut config = HintConfig::default();
        config.tap = 1;
        assert!(Trainer::new(toy_net(), config, schedule).is_err());
        assert!(Trainer::new(toy_net(), HintConfig::unregularized(1), schedule).is_ok());
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let data = blobs(64, 1);
        let valid = blobs(32, 2);
        let schedule = TrainSchedule {
            max_epochs: 3,
            batch_size: 16,
            ..TrainSchedule::default()
        };
        let mut config = HintConfig::default();
        config.tap = 1;
        let td = TrainData {
            train: &data,
            valid: Some(&valid),
            test: Some(&valid),
        };
        let a = train(toy_net(), &td, &config, &schedule).unwrap();
        let b = train(toy_net(), &td, &config, &schedule).unwrap();
        assert_eq!(a.last.to_checkpoint_bytes(), b.last.to_checkpoint_bytes());
        assert_eq!(a.log.best_epoch, b.log.best_epoch);
        assert!(a.log.test_error_at_best.is_some());
    }

    #[test]
    fn log_csv_leaves_unmeasured_cells_empty() {
        let r = EpochRecord {
            epoch: 2,
            j_sup: 0.5,
            j_hint: 0.0,
            train_error: Some(1.0),
            valid_error: None,
            test_error: None,
            seconds: 0.25,
        };
        assert_eq!(r.csv_row(), "2,0.5,0,1,,,0.250");
        let mut buf = Vec::new();
        TrainLog {
            records: vec![r],
            ..TrainLog::default()
        }
        .write_csv(&mut buf)
        .unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(LOG_HEADER));
    }
}
