//! Evaluation protocol: repeated seeded runs, extreme-discard
//! aggregation, the layer/measure/benchmark studies and the per-layer
//! invariance probe.

mod probe;
mod store;

pub use probe::{invariance_probe, probe_point, ProbeConfig, ProbeReport};
pub use store::RunStore;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subset, Benchmark, BenchmarkSet, Dataset, SubsetConfig};
use crate::error::{Error, Result};
use crate::losses::{HintConfig, Measure};
use crate::network::NetworkSplit;
use crate::optim::{OptimizerKind, TrainData, TrainSchedule, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Mlp,
    Lenet,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Mlp => "mlp",
            Model::Lenet => "lenet",
        }
    }

    pub fn build(self, seed: u64) -> NetworkSplit {
        match self {
            Model::Mlp => NetworkSplit::build_mlp(seed),
            Model::Lenet => NetworkSplit::build_lenet(seed),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mlp" => Ok(Model::Mlp),
            "lenet" => Ok(Model::Lenet),
            other => Err(format!("unknown model `{other}` (expected mlp or lenet)")),
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: Model,
    pub benchmark: Benchmark,
    /// Training-set subsample; `None` trains on the whole split.
    pub subset: Option<SubsetConfig>,
    pub hint: HintConfig,
    /// `schedule.seed` seeds both initialisation and shuffling.
    pub schedule: TrainSchedule,
}

impl RunSpec {
    pub fn seed(&self) -> u64 {
        self.schedule.seed
    }

    pub fn with_seed(&self, seed: u64) -> RunSpec {
        let mut s = self.clone();
        s.schedule.seed = seed;
        s
    }

    /// Hex SHA-256 of the canonical JSON of the spec with the seed zeroed,
    /// so all repeats of one table cell share it.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.with_seed(0)).expect("spec serializes");
        crate::data::sha256_hex(&canonical)[..16].to_string()
    }
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub seed: u64,
    pub spec: RunSpec,
    /// Lowest validation error %.
    pub valid_error: f64,
    /// Test error % of the lowest-validation checkpoint.
    pub test_error: f64,
    pub best_epoch: usize,
    pub log: crate::optim::TrainLog,
}

/// Splits used by one cell: the (possibly subsampled) training split and
/// the full validation and test splits.
pub struct CellData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl CellData {
    pub fn new(set: &BenchmarkSet, subset_config: Option<SubsetConfig>) -> Result<Self> {
        let train = match subset_config {
            Some(c) => subset(&set.train, c)?,
            None => set.train.clone(),
        };
        Ok(Self {
            train,
            valid: set.valid.clone(),
            test: set.test.clone(),
        })
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            valid: Some(&self.valid),
            test: Some(&self.test),
        }
    }
}

/// Trains one spec to completion, going through `store` when given so the
/// run can be resumed or skipped.
pub fn run_single(spec: &RunSpec, data: &CellData, store: Option<&RunStore>) -> Result<RunReport> {
    if let Some(store) = store {
        return store.run(spec, data);
    }
    let mut trainer = Trainer::new(spec.model.build(spec.seed()), spec.hint, spec.schedule)?;
    let td = data.train_data();
    while !trainer.is_done() {
        trainer.run_epoch(&td, &mut |_, _| Ok(()))?;
    }
    let outcome = trainer.finish(&td)?;
    report_from_log(spec, outcome.log)
}

pub(crate) fn report_from_log(spec: &RunSpec, log: crate::optim::TrainLog) -> Result<RunReport> {
    let (Some(valid_error), Some(test_error), Some(best_epoch)) =
        (log.best_valid_error, log.test_error_at_best, log.best_epoch)
    else {
        return Err(Error::State("run finished without validation and test measurements".into()));
    };
    Ok(RunReport {
        fingerprint: spec.fingerprint(),
        seed: spec.seed(),
        spec: spec.clone(),
        valid_error,
        test_error,
        best_epoch,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Mean ± population standard deviation over the retained runs of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub fingerprint: String,
    /// The cell's spec, with the seed of its first member.
    pub spec: RunSpec,
    /// Completed runs, ordered by seed.
    pub members: Vec<RunReport>,
    pub retained: Vec<u64>,
    /// Seeds of the lowest and the highest test-error runs.
    pub discarded: Vec<u64>,
    #[serde(default)]
    pub failures: Vec<RunFailure>,
    pub valid_mean: f64,
    pub valid_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Drops the best and the worst run by test error (ties: lowest seed goes
/// first) and aggregates the rest.
pub fn aggregate(runs: Vec<RunReport>) -> Result<AggregateReport> {
    if runs.len() < 3 {
        return Err(Error::Aggregation(format!(
            "need at least 3 completed runs to discard extremes, got {}",
            runs.len()
        )));
    }
    let fingerprint = runs[0].fingerprint.clone();
    if let Some(r) = runs.iter().find(|r| r.fingerprint != fingerprint) {
        return Err(Error::Aggregation(format!(
            "runs from different cells ({} and {})",
            fingerprint, r.fingerprint
        )));
    }
    let mut members = runs;
    members.sort_by_key(|r| r.seed);
    if members.windows(2).any(|w| w[0].seed == w[1].seed) {
        return Err(Error::Aggregation("duplicate seed among runs".into()));
    }
    let pick = |pool: &[&RunReport], worst: bool| -> u64 {
        pool.iter()
            .min_by(|a, b| {
                let ord = a.test_error.total_cmp(&b.test_error);
                (if worst { ord.reverse() } else { ord }).then(a.seed.cmp(&b.seed))
            })
            .expect("nonempty")
            .seed
    };
    let all: Vec<&RunReport> = members.iter().collect();
    let lowest = pick(&all, false);
    let rest: Vec<&RunReport> = all.iter().copied().filter(|r| r.seed != lowest).collect();
    let highest = pick(&rest, true);
    let kept: Vec<&RunReport> = rest.into_iter().filter(|r| r.seed != highest).collect();
    let (valid_mean, valid_std) = mean_std(&kept.iter().map(|r| r.valid_error).collect::<Vec<_>>());
    let (test_mean, test_std) = mean_std(&kept.iter().map(|r| r.test_error).collect::<Vec<_>>());
    Ok(AggregateReport {
        fingerprint,
        spec: members[0].spec.clone(),
        retained: kept.iter().map(|r| r.seed).collect(),
        discarded: vec![lowest, highest],
        members,
        failures: Vec::new(),
        valid_mean,
        valid_std,
        test_mean,
        test_std,
    })
}

/// How a cell is repeated and scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub repeats: usize,
    pub base_seed: u64,
    /// Epochs for unregularized runs.
    pub baseline_epochs: usize,
    /// Epochs for runs with the hint term.
    pub hint_epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Seed of the class-stratified training subsample, shared by all
    /// repeats and arms of a study.
    pub subset_seed: u64,
    /// Parallel runs; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
}

impl Protocol {
    /// Seven repeats, 2000/400 epochs, batch 100.
    pub fn full() -> Self {
        Self {
            repeats: 7,
            base_seed: 1,
            baseline_epochs: 2000,
            hint_epochs: 400,
            batch_size: 100,
            eval_every: 1,
            optimizer: OptimizerKind::default(),
            subset_seed: 0,
            workers: 0,
        }
    }

    pub fn schedule(&self, hint: &HintConfig, seed: u64) -> TrainSchedule {
        TrainSchedule {
            max_epochs: if hint.hint_active() { self.hint_epochs } else { self.baseline_epochs },
            batch_size: self.batch_size,
            seed,
            eval_every: self.eval_every,
            optimizer: self.optimizer,
            track_test: false,
        }
    }

    pub fn spec(&self, model: Model, benchmark: Benchmark, subset_size: Option<usize>, hint: HintConfig) -> RunSpec {
        RunSpec {
            model,
            benchmark,
            subset: subset_size.map(|size| SubsetConfig {
                size,
                seed: self.subset_seed,
            }),
            hint,
            schedule: self.schedule(&hint, self.base_seed),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|k| self.base_seed + k).collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))
}

/// Runs every seed of a cell in parallel and aggregates the completed ones.
pub fn run_protocol(
    spec: &RunSpec,
    set: &BenchmarkSet,
    protocol: &Protocol,
    store: Option<&RunStore>,
) -> Result<AggregateReport> {
    let data = CellData::new(set, spec.subset)?;
    let results: Vec<(u64, Result<RunReport>)> = pool(protocol.workers)?.install(|| {
        protocol
            .seeds()
            .into_par_iter()
            .map(|seed| (seed, run_single(&spec.with_seed(seed), &data, store)))
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(RunFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    if runs.len() < 3 {
        let detail: Vec<String> = failures.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
        return Err(Error::Aggregation(format!(
            "only {} of {} runs completed; {}",
            runs.len(),
            protocol.repeats,
            detail.join("; ")
        )));
    }
    let mut report = aggregate(runs)?;
    report.failures = failures;
    Ok(report)
}

/// Unregularized baseline plus the hint at h1, h2 and h3 (SED).
pub fn layer_study(
    model: Model,
    set: &BenchmarkSet,
    subset_size: Option<usize>,
    protocol: &Protocol,
    store: Option<&RunStore>,
) -> Result<Vec<AggregateReport>> {
    let benchmark = set.provenance().benchmark;
    let mut hints = vec![HintConfig::unregularized(3)];
    hints.extend((1..=3).map(|tap| HintConfig {
        measure: Measure::Sed,
        tap,
        ..HintConfig::default()
    }));
    hints
        .into_iter()
        .map(|h| run_protocol(&protocol.spec(model, benchmark, subset_size, h), set, protocol, store))
        .collect()
}

/// Unregularized baseline plus the hint at h3 with each measure.
pub fn measure_study(
    model: Model,
    set: &BenchmarkSet,
    subset_size: Option<usize>,
    protocol: &Protocol,
    store: Option<&RunStore>,
) -> Result<Vec<AggregateReport>> {
    let benchmark = set.provenance().benchmark;
    let mut hints = vec![HintConfig::unregularized(3)];
    hints.extend(Measure::ALL.into_iter().map(|measure| HintConfig {
        measure,
        ..HintConfig::default()
    }));
    hints
        .into_iter()
        .map(|h| run_protocol(&protocol.spec(model, benchmark, subset_size, h), set, protocol, store))
        .collect()
}

/// Baseline against hint (SED at h3) for every subset size.
pub fn table_study(
    model: Model,
    set: &BenchmarkSet,
    subset_sizes: &[Option<usize>],
    protocol: &Protocol,
    store: Option<&RunStore>,
) -> Result<Vec<AggregateReport>> {
    let benchmark = set.provenance().benchmark;
    let mut out = Vec::new();
    for &size in subset_sizes {
        for h in [HintConfig::unregularized(3), HintConfig::default()] {
            out.push(run_protocol(&protocol.spec(model, benchmark, size, h), set, protocol, store)?);
        }
    }
    Ok(out)
}

pub const CELL_HEADER: &str = "benchmark,model,subset,measure,tap,vl_mean,vl_std,tst_mean,tst_std,fingerprint";

pub fn cell_row(r: &AggregateReport) -> String {
    let s = &r.spec;
    let subset = s.subset.map_or_else(|| "full".to_string(), |c| c.size.to_string());
    let (measure, tap) = if s.hint.hint_active() {
        (s.hint.measure.name().to_string(), format!("h{}", s.hint.tap))
    } else {
        ("none".to_string(), "none".to_string())
    };
    format!(
        "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
        s.benchmark, s.model, subset, measure, tap, r.valid_mean, r.valid_std, r.test_mean, r.test_std, r.fingerprint
    )
}

pub fn write_cells_csv(reports: &[AggregateReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CELL_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", cell_row(r))?;
    }
    Ok(())
}
