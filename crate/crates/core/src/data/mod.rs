//! Datasets: IDX/CIFAR ingestion, benchmark synthesis, subsets and
//! on-disk persistence.
//!
//! Images are held as 28×28 `u8` planes and scaled to `[0, 1]` when a
//! batch is gathered, so a 170k-image benchmark stays around 130 MB.

pub mod cifar;
pub mod idx;
mod synth;

pub use synth::{
    box_filter, composite_max, make_mnist_img, make_mnist_noise, make_mnist_std, noise_background, SplitSizes,
    NOISE_FILTER,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use idx::{IdxArray, IdxData};

pub const CLASSES: usize = 10;
pub const SIDE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "mnist-std")]
    MnistStd,
    #[serde(rename = "mnist-noise")]
    MnistNoise,
    #[serde(rename = "mnist-img")]
    MnistImg,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::MnistStd, Benchmark::MnistNoise, Benchmark::MnistImg];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::MnistStd => "mnist-std",
            Benchmark::MnistNoise => "mnist-noise",
            Benchmark::MnistImg => "mnist-img",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected mnist-std, mnist-noise or mnist-img)"))
    }
}

/// Where a synthesized set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub benchmark: Benchmark,
    pub seed: u64,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
    /// Hex SHA-256 of each raw input file, keyed by file name.
    #[serde(default)]
    pub source_hashes: BTreeMap<String, String>,
}

/// Labeled 28×28 gray images of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    split: Split,
    provenance: Provenance,
    /// Index of the digit within the parent split it was drawn from.
    sources: Vec<u32>,
    /// CIFAR record index of the background, when there is one.
    backgrounds: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        split: Split,
        provenance: Provenance,
        sources: Vec<u32>,
        backgrounds: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = labels.len();
        if pixels.len() != n * SIDE * SIDE {
            return Err(Error::State(format!(
                "{} pixels do not fit {n} images of {SIDE}×{SIDE}",
                pixels.len()
            )));
        }
        if let Some(row) = labels.iter().position(|&l| l as usize >= CLASSES) {
            return Err(Error::LabelRange {
                row,
                label: labels[row] as usize,
                classes: CLASSES,
            });
        }
        if sources.len() != n || backgrounds.as_ref().is_some_and(|b| b.len() != n) {
            return Err(Error::State("per-sample index arrays differ in length from labels".into()));
        }
        Ok(Self {
            pixels,
            labels,
            split,
            provenance,
            sources,
            backgrounds,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * SIDE * SIDE..(i + 1) * SIDE * SIDE]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn backgrounds(&self) -> Option<&[u32]> {
        self.backgrounds.as_deref()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut c = [0; CLASSES];
        self.labels.iter().for_each(|&l| c[l as usize] += 1);
        c
    }

    /// All images as an `N×1×28×28` tensor in `[0, 1]`.
    pub fn images(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.gather_images(&idx)
    }

    fn gather_images(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * SIDE * SIDE);
        for &i in idx {
            data.extend(self.image(i).iter().map(|&p| p as f64 / 255.0));
        }
        Tensor::new(vec![idx.len(), 1, SIDE, SIDE], data).expect("pixel values are finite")
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(idx.len() * SIDE * SIDE);
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
        }
        Dataset {
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            provenance: self.provenance.clone(),
            sources: idx.iter().map(|&i| self.sources[i]).collect(),
            backgrounds: self.backgrounds.as_ref().map(|b| idx.iter().map(|&i| b[i]).collect()),
        }
    }

    /// Keeps only samples whose label is in `classes`, preserving order.
    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&(self.labels[i] as usize)))
            .collect();
        self.select(&idx)
    }
}

/// Indexed access to labeled samples for the training loop.
pub trait Samples: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs (leading axis = sample) and labels of the given rows.
    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>);
}

impl Samples for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.gather_images(idx), idx.iter().map(|&i| self.labels[i] as usize).collect())
    }
}

/// Samples held directly as a tensor, for small synthetic problems.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSamples {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl TensorSamples {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::State(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }
}

impl Samples for TensorSamples {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.inputs.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Seeded class-stratified subsample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub size: usize,
    pub seed: u64,
}

/// Per-class quotas proportional to `counts`, summing to `size`, rounded
/// by largest remainder (ties to the lower class).
pub fn stratified_quotas(counts: &[usize], size: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * size / total).collect();
    let mut rest: Vec<(usize, usize)> = counts.iter().enumerate().map(|(k, &c)| (c * size % total, k)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = size - quotas.iter().sum::<usize>();
    for &(_, k) in rest.iter().take(missing) {
        quotas[k] += 1;
    }
    quotas
}

/// Class-stratified subsample; the result keeps the parent's order.
pub fn subset(dataset: &Dataset, config: SubsetConfig) -> Result<Dataset> {
    if config.size == 0 || config.size > dataset.len() {
        return Err(Error::Config(format!(
            "subset size {} must be between 1 and the set size {}",
            config.size,
            dataset.len()
        )));
    }
    let counts = dataset.class_counts();
    let quotas = stratified_quotas(&counts, config.size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen = Vec::with_capacity(config.size);
    for class in 0..CLASSES {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] as usize == class)
            .collect();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quotas[class]]);
    }
    chosen.sort_unstable();
    Ok(dataset.select(&chosen))
}

/// The three splits of one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

fn split_files(dir: &Path, split: Split) -> [PathBuf; 3] {
    let s = split.name();
    [
        dir.join(format!("{s}-images-idx3-ubyte")),
        dir.join(format!("{s}-labels-idx1-ubyte")),
        dir.join(format!("{s}-origin-idx2-int")),
    ]
}

/// Every file [`BenchmarkSet::save`] writes into `dir`.
pub fn benchmark_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = Split::ALL.iter().flat_map(|&s| split_files(dir, s)).collect();
    files.push(dir.join(PROVENANCE_FILE));
    files
}

/// Fails with every missing path listed.
pub fn require_files(files: &[PathBuf]) -> Result<()> {
    let missing: Vec<PathBuf> = files.iter().filter(|p| !p.is_file()).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingInput(missing))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl BenchmarkSet {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn provenance(&self) -> &Provenance {
        self.train.provenance()
    }

    /// Writes IDX image/label files per split, a per-split origin table
    /// (source index, background index or −1) and the provenance sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let d = self.split(split);
            let [images, labels, origin] = split_files(dir, split);
            idx::write_idx(&images, &IdxArray::u8(vec![d.len(), SIDE, SIDE], d.pixels.clone()))?;
            idx::write_idx(&labels, &IdxArray::u8(vec![d.len()], d.labels.clone()))?;
            let mut table = Vec::with_capacity(2 * d.len());
            for i in 0..d.len() {
                table.push(d.sources[i] as i32);
                table.push(d.backgrounds.as_ref().map_or(-1, |b| b[i] as i32));
            }
            idx::write_idx(
                &origin,
                &IdxArray {
                    dims: vec![d.len(), 2],
                    data: IdxData::I32(table),
                },
            )?;
        }
        let path = dir.join(PROVENANCE_FILE);
        let mut json = serde_json::to_string_pretty(self.provenance()).expect("provenance serializes");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        require_files(&benchmark_files(dir))?;
        let path = dir.join(PROVENANCE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let provenance: Provenance = serde_json::from_str(&text).map_err(|e| {
            Error::format(&path, 0, format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let load_split = |split: Split| -> Result<Dataset> {
            let [images, labels, origin] = split_files(dir, split);
            let (pixels, dims) = idx::load_images(&images)?;
            if dims[1] != SIDE || dims[2] != SIDE {
                return Err(Error::format(&images, 8, format!("expected {SIDE}×{SIDE} images, found {}×{}", dims[1], dims[2])));
            }
            let labels_v = idx::load_labels(&labels)?;
            if labels_v.len() != dims[0] {
                return Err(Error::format(&labels, 4, format!("{} labels for {} images", labels_v.len(), dims[0])));
            }
            let table = idx::read_idx(&origin)?;
            let values = match (&table.dims[..], table.data) {
                ([n, 2], IdxData::I32(v)) if *n == dims[0] => v,
                _ => return Err(Error::format(&origin, 0, "origin table must be N×2 int32")),
            };
            let sources = values.chunks(2).map(|c| c[0] as u32).collect();
            let bgs: Vec<i32> = values.chunks(2).map(|c| c[1]).collect();
            let backgrounds = if bgs.iter().all(|&b| b < 0) {
                None
            } else {
                Some(bgs.iter().map(|&b| b.max(0) as u32).collect())
            };
            Dataset::new(pixels, labels_v, split, provenance.clone(), sources, backgrounds)
                .map_err(|e| Error::format(&labels, 8, e.to_string()))
        };
        Ok(BenchmarkSet {
            train: load_split(Split::Train)?,
            valid: load_split(Split::Valid)?,
            test: load_split(Split::Test)?,
        })
    }
}
