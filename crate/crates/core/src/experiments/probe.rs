use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::data::{BenchmarkSet, Dataset, Samples};
use crate::error::{Error, Result};
use crate::losses::{hint_penalty_value, HintConfig, Measure, RepresentationBatch};
use crate::network::NetworkSplit;
use crate::optim::{train_with_observer, OptimizerKind, TrainData, TrainSchedule};
use crate::tensor::Tensor;

/// Per-layer hint penalty tracking during unregularized training on a
/// class-restricted problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub model: Model,
    pub classes: Vec<usize>,
    /// Probe images drawn per class from the training split.
    pub per_class: usize,
    /// Mini-batches between probe points; the untrained network is probed too.
    pub cadence: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub measure: Measure,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            model: Model::Mlp,
            classes: vec![1, 7],
            per_class: 1000,
            cadence: 50,
            epochs: 20,
            batch_size: 100,
            seed: 0,
            measure: Measure::Nmd,
            optimizer: OptimizerKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    /// Mini-batches processed at each probe point.
    pub batches: Vec<u64>,
    /// `series[k][t]`: penalty at layer `k + 1` at probe point `t`.
    pub series: Vec<Vec<f64>>,
    pub train_error: f64,
}

impl ProbeReport {
    pub fn layers(&self) -> usize {
        self.series.len()
    }

    pub fn last(&self, layer: usize) -> f64 {
        *self.series[layer].last().expect("at least the initial point")
    }

    pub fn first(&self, layer: usize) -> f64 {
        self.series[layer][0]
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let names: Vec<String> = (1..=self.layers()).map(|k| format!("h{k}")).collect();
        writeln!(w, "batches,{}", names.join(","))?;
        for (t, b) in self.batches.iter().enumerate() {
            let cells: Vec<String> = self.series.iter().map(|s| format!("{}", s[t])).collect();
            writeln!(w, "{b},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Hint penalty of every layer's output over the probe set, using
/// read-only forward passes.
pub fn probe_point(net: &NetworkSplit, x: &Tensor, labels: &[usize], measure: Measure) -> Result<Vec<f64>> {
    const CHUNK: usize = 500;
    let rows = x.rows();
    let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); net.depth()];
    let mut dims = vec![0; net.depth()];
    let idx: Vec<usize> = (0..rows).collect();
    for chunk in idx.chunks(CHUNK) {
        let outs = net.infer(&x.select_rows(chunk))?;
        for (k, o) in outs.iter().enumerate() {
            dims[k] = o.row_len();
            per_layer[k].extend_from_slice(o.data());
        }
    }
    per_layer
        .into_par_iter()
        .zip(dims)
        .map(|(data, dim)| {
            let reps = Tensor::new(vec![rows, dim], data)?;
            hint_penalty_value(&RepresentationBatch::new(&reps, labels)?, measure)
        })
        .collect()
}

fn probe_rows(train: &Dataset, classes: &[usize], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut rows = Vec::new();
    for &c in classes {
        let mut members: Vec<usize> = (0..train.len()).filter(|&i| train.labels()[i] as usize == c).collect();
        if members.len() < per_class {
            return Err(Error::Config(format!(
                "class {c} has {} training images, fewer than the {per_class} probe images requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        rows.extend_from_slice(&members[..per_class]);
    }
    rows.sort_unstable();
    Ok(rows)
}

/// Trains the model without the hint term on the given classes and
/// records the per-layer penalty on a fixed probe set.
pub fn invariance_probe(set: &BenchmarkSet, config: &ProbeConfig) -> Result<ProbeReport> {
    if config.classes.len() < 2 || config.per_class < 2 || config.cadence == 0 {
        return Err(Error::Config("probe needs at least 2 classes, 2 images per class and cadence ≥ 1".into()));
    }
    let train = set.train.filter_classes(&config.classes);
    let rows = probe_rows(&train, &config.classes, config.per_class, config.seed)?;
    let (px, plabels) = train.gather(&rows);

    let net = config.model.build(config.seed);
    let mut batches = vec![0u64];
    let first = probe_point(&net, &px, &plabels, config.measure)?;
    let mut series: Vec<Vec<f64>> = first.into_iter().map(|v| vec![v]).collect();

    let hint = HintConfig::unregularized(net.tap());
    let schedule = TrainSchedule {
        max_epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        eval_every: config.epochs.max(1),
        optimizer: config.optimizer,
        track_test: false,
    };
    let data = TrainData {
        train: &train,
        valid: None,
        test: None,
    };
    let outcome = train_with_observer(net, &data, &hint, &schedule, &mut |net, done| {
        if done % config.cadence == 0 {
            let point = probe_point(net, &px, &plabels, config.measure)?;
            batches.push(done);
            for (s, v) in series.iter_mut().zip(point) {
                s.push(v);
            }
        }
        Ok(())
    })?;
    let train_error = outcome
        .log
        .records
        .last()
        .and_then(|r| r.train_error)
        .unwrap_or(f64::NAN);
    Ok(ProbeReport {
        config: config.clone(),
        batches,
        series,
        train_error,
    })
}
