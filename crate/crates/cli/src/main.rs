mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hintreg::data::{self, cifar, Benchmark, BenchmarkSet, SplitSizes};
use hintreg::experiments::{
    invariance_probe, layer_study, measure_study, run_single, table_study, write_cells_csv, CellData, RunSpec,
    RunStore,
};
use hintreg::{Error, Result};

use config::{ExperimentConfig, StudySection, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "hintreg", version, about = "Hint-penalty regularized networks on MNIST-derived benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a benchmark from the raw MNIST (and CIFAR-10) archives.
    Synth {
        #[arg(long)]
        benchmark: Benchmark,
        /// Directory with the four raw MNIST IDX files.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: PathBuf,
        /// CIFAR-10 binary batches; defaults to `<data-dir>/cifar-10-batches-bin`.
        #[arg(long)]
        cifar_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sample counts of the noise and image variants.
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long)]
        valid_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// One seeded training run.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repeated runs over a grid, aggregated per cell.
    Study {
        #[arg(long)]
        kind: StudyKind,
        #[arg(long)]
        config: PathBuf,
        /// Parallel runs; overrides `protocol.workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Per-layer penalty trajectories of an unregularized run.
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Mini-batches between probe points; overrides `probe.cadence`.
        #[arg(long)]
        cadence: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Layers,
    Measures,
    Tables,
}

impl StudyKind {
    fn name(self) -> &'static str {
        match self {
            StudyKind::Layers => "layers",
            StudyKind::Measures => "measures",
            StudyKind::Tables => "tables",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingInput(_) => 2,
        Error::Format { .. } => 3,
        Error::Config(_) => 4,
        _ => 1,
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io(path))
}

fn synth(
    benchmark: Benchmark,
    data_dir: &Path,
    cifar_dir: Option<PathBuf>,
    seed: u64,
    out: &Path,
    sizes: SplitSizes,
) -> Result<()> {
    let cifar_dir = cifar_dir.unwrap_or_else(|| data_dir.join("cifar-10-batches-bin"));
    if benchmark == Benchmark::MnistImg {
        data::require_files(&cifar::batch_files(&cifar_dir))?;
    }
    let std = data::make_mnist_std(data_dir, seed)?;
    let set = match benchmark {
        Benchmark::MnistStd => std,
        Benchmark::MnistNoise => data::make_mnist_noise(&std, seed, sizes)?,
        Benchmark::MnistImg => data::make_mnist_img(&std, &cifar_dir, seed, sizes)?,
    };
    set.save(out)?;
    println!(
        "{benchmark}: train {} valid {} test {} -> {}",
        set.train.len(),
        set.valid.len(),
        set.test.len(),
        out.display()
    );
    Ok(())
}

fn load_set(config: &ExperimentConfig) -> Result<BenchmarkSet> {
    let dir = config.benchmark_dir();
    let set = BenchmarkSet::load(&dir)?;
    if set.provenance().benchmark != config.experiment.benchmark {
        return Err(Error::Config(format!(
            "{} holds {}, not {}",
            dir.display(),
            set.provenance().benchmark,
            config.experiment.benchmark
        )));
    }
    Ok(set)
}

fn train(config: &ExperimentConfig) -> Result<()> {
    let set = load_set(config)?;
    let spec = RunSpec {
        model: config.experiment.model,
        benchmark: config.experiment.benchmark,
        subset: config.subset,
        hint: config.hint,
        schedule: config.schedule,
    };
    let store = RunStore::new(&config.experiment.out_dir, config.experiment.checkpoint_every);
    let dir = store.run_dir(&spec);
    create_dir(&dir)?;
    write(&dir.join("config.toml"), config.to_toml())?;
    let data = CellData::new(&set, spec.subset)?;
    let report = run_single(&spec, &data, Some(&store))?;
    println!(
        "run {} seed {}: best epoch {}, valid {:.2}%, test {:.2}% -> {}",
        report.fingerprint,
        report.seed,
        report.best_epoch,
        report.valid_error,
        report.test_error,
        dir.display()
    );
    Ok(())
}

fn study(config: &ExperimentConfig, kind: StudyKind, workers: Option<usize>) -> Result<()> {
    let mut protocol = config
        .protocol
        .ok_or_else(|| Error::Config("study needs a [protocol] section".into()))?;
    if let Some(w) = workers {
        protocol.workers = w;
    }
    let set = load_set(config)?;
    let model = config.experiment.model;
    let store = RunStore::new(config.experiment.out_dir.join("runs"), config.experiment.checkpoint_every);
    let subset_size = config.subset.map(|s| s.size);
    let reports = match kind {
        StudyKind::Layers => layer_study(model, &set, subset_size, &protocol, Some(&store))?,
        StudyKind::Measures => measure_study(model, &set, subset_size, &protocol, Some(&store))?,
        StudyKind::Tables => {
            let sizes: Vec<Option<usize>> = config
                .study
                .clone()
                .unwrap_or_else(StudySection::default)
                .subset_sizes
                .into_iter()
                .map(|n| (n > 0).then_some(n))
                .collect();
            table_study(model, &set, &sizes, &protocol, Some(&store))?
        }
    };
    let dir = config
        .experiment
        .out_dir
        .join(format!("study-{}-{}-{}", kind.name(), config.experiment.benchmark, model));
    create_dir(&dir)?;
    let mut resolved = config.clone();
    resolved.protocol = Some(protocol);
    write(&dir.join("config.toml"), resolved.to_toml())?;
    let mut csv = Vec::new();
    write_cells_csv(&reports, &mut csv).expect("write to memory");
    write(&dir.join("cells.csv"), &csv)?;
    write_json(&dir.join("bundle.json"), &reports)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn probe(config: &ExperimentConfig, cadence: Option<u64>) -> Result<()> {
    let mut probe = config.probe.clone().unwrap_or_default();
    if let Some(c) = cadence {
        probe.cadence = c;
    }
    let set = load_set(config)?;
    let report = invariance_probe(&set, &probe)?;
    let dir = config.experiment.out_dir.join(format!("probe-{}", probe.model));
    create_dir(&dir)?;
    let mut resolved = config.clone();
    resolved.probe = Some(probe);
    write(&dir.join("config.toml"), resolved.to_toml())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("write to memory");
    write(&dir.join("probe.csv"), &csv)?;
    write_json(&dir.join("probe.json"), &report)?;
    let last: Vec<String> = (0..report.layers()).map(|k| format!("h{}={:.6}", k + 1, report.last(k))).collect();
    println!(
        "{} probe points, final {} -> {}",
        report.batches.len(),
        last.join(" "),
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            benchmark,
            data_dir,
            cifar_dir,
            seed,
            out,
            train_size,
            valid_size,
            test_size,
        } => {
            let d = SplitSizes::default();
            let sizes = SplitSizes {
                train: train_size.unwrap_or(d.train),
                valid: valid_size.unwrap_or(d.valid),
                test: test_size.unwrap_or(d.test),
            };
            synth(benchmark, &data_dir, cifar_dir, seed, &out, sizes)
        }
        Command::Train { config } => train(&ExperimentConfig::load(&config)?),
        Command::Study { kind, config, workers } => study(&ExperimentConfig::load(&config)?, kind, workers),
        Command::Probe { config, cadence } => probe(&ExperimentConfig::load(&config)?, cadence),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
