use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cifar::{self, GrayPool};
use super::idx;
use super::{require_files, sha256_hex, Benchmark, BenchmarkSet, Dataset, Provenance, Split, SIDE};
use crate::error::{Error, Result};

/// Side of the box filter applied to noise backgrounds.
pub const NOISE_FILTER: usize = 5;

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Target sample counts of a synthesized benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 100_000,
            valid: 20_000,
            test: 50_000,
        }
    }
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Valid => 1,
        Split::Test => 2,
    }
}

/// Per-sample generator: one ChaCha stream per (split, sample index), so
/// output does not depend on how samples are scheduled across threads.
fn sample_rng(seed: u64, split: Split, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split_code(split) + 1) << 48) | j as u64);
    rng
}

fn order_rng(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split_code(split));
    rng
}

/// Splits the official training archive into train and validation parts
/// (five sixths and one sixth, i.e. 50000/10000 for MNIST) by a seeded
/// permutation; the official test archive is kept as the test split.
pub fn make_mnist_std(dir: &Path, seed: u64) -> Result<BenchmarkSet> {
    let paths: Vec<_> = MNIST_FILES.iter().map(|f| dir.join(f)).collect();
    require_files(&paths)?;
    let mut hashes = BTreeMap::new();
    let mut read = |i: usize| -> Result<Vec<u8>> {
        let bytes = std::fs::read(&paths[i]).map_err(|e| Error::io(&paths[i], e))?;
        hashes.insert(MNIST_FILES[i].to_string(), sha256_hex(&bytes));
        Ok(bytes)
    };
    let load_pair = |img: Vec<u8>, lab: Vec<u8>, i: usize| -> Result<(Vec<u8>, Vec<u8>)> {
        let (pixels, dims) = idx::parse_images(&img, &paths[i])?;
        if dims[1] != SIDE || dims[2] != SIDE {
            return Err(Error::format(&paths[i], 8, format!("expected {SIDE}×{SIDE} images, found {}×{}", dims[1], dims[2])));
        }
        let labels = idx::parse_labels(&lab, &paths[i + 1])?;
        if labels.len() != dims[0] {
            return Err(Error::format(&paths[i + 1], 4, format!("{} labels for {} images", labels.len(), dims[0])));
        }
        Ok((pixels, labels))
    };
    let (train_img, train_lab) = (read(0)?, read(1)?);
    let (test_img, test_lab) = (read(2)?, read(3)?);
    let (pixels, labels) = load_pair(train_img, train_lab, 0)?;
    let (test_pixels, test_labels) = load_pair(test_img, test_lab, 2)?;

    let n = labels.len();
    let n_valid = n / 6;
    if n_valid == 0 {
        return Err(Error::format(&paths[1], 4, format!("{n} training images are too few to split")));
    }
    let provenance = Provenance {
        benchmark: Benchmark::MnistStd,
        seed,
        parameters: BTreeMap::from([("valid_fraction".to_string(), json!("1/6"))]),
        source_hashes: hashes,
    };
    let whole = Dataset::new(pixels, labels, Split::Train, provenance.clone(), (0..n as u32).collect(), None)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (valid_idx, train_idx) = perm.split_at_mut(n_valid);
    valid_idx.sort_unstable();
    train_idx.sort_unstable();
    let train = whole.select(train_idx);
    let mut valid = whole.select(valid_idx);
    valid.split = Split::Valid;
    let n_test = test_labels.len();
    let test = Dataset::new(test_pixels, test_labels, Split::Test, provenance, (0..n_test as u32).collect(), None)?;
    Ok(BenchmarkSet { train, valid, test })
}

/// Per-pixel `U[0, 1]` noise smoothed by a [`NOISE_FILTER`]-wide box filter.
pub fn noise_background(rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..SIDE * SIDE).map(|_| rng.gen::<f64>()).collect();
    box_filter(&raw, SIDE, NOISE_FILTER)
}

/// Mean over a `k×k` window (k odd) with edge clamping, as two 1-D passes.
pub fn box_filter(img: &[f64], side: usize, k: usize) -> Vec<f64> {
    assert!(k % 2 == 1 && img.len() == side * side);
    let r = (k / 2) as isize;
    let clamp = |i: isize| i.clamp(0, side as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..side {
        for x in 0..side {
            let s: f64 = (-r..=r).map(|d| img[y * side + clamp(x as isize + d)]).sum();
            tmp[y * side + x] = s / k as f64;
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..side {
        for x in 0..side {
            let s: f64 = (-r..=r).map(|d| tmp[clamp(y as isize + d) * side + x]).sum();
            out[y * side + x] = s / k as f64;
        }
    }
    out
}

/// `max(digit, background)` per pixel, quantized back to bytes.
pub fn composite_max(digit: &[u8], background: &[f64]) -> Vec<u8> {
    digit
        .iter()
        .zip(background)
        .map(|(&d, &b)| d.max((b.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect()
}

/// Source digit for each output sample: every source is used
/// `target / n` or `target / n + 1` times, in seeded order.
fn digit_order(n: usize, target: usize, seed: u64, split: Split) -> Vec<usize> {
    let mut order: Vec<usize> = (0..target).map(|k| k % n).collect();
    order.shuffle(&mut order_rng(seed, split));
    order
}

fn synthesize<F>(source: &Dataset, target: usize, seed: u64, provenance: &Provenance, background: F) -> Result<Dataset>
where
    F: Fn(&mut ChaCha8Rng) -> (Vec<f64>, Option<u32>) + Sync,
{
    if source.is_empty() {
        return Err(Error::State(format!("{} split has no source digits", source.split().name())));
    }
    let split = source.split();
    let order = digit_order(source.len(), target, seed, split);
    let made: Vec<(Vec<u8>, Option<u32>)> = order
        .par_iter()
        .enumerate()
        .map(|(j, &s)| {
            let mut rng = sample_rng(seed, split, j);
            let (bg, tag) = background(&mut rng);
            (composite_max(source.image(s), &bg), tag)
        })
        .collect();
    let mut pixels = Vec::with_capacity(target * SIDE * SIDE);
    let mut tags = Vec::with_capacity(target);
    for (img, tag) in made {
        pixels.extend_from_slice(&img);
        tags.push(tag);
    }
    let labels = order.iter().map(|&s| source.labels()[s]).collect();
    let sources = order.iter().map(|&s| source.sources()[s]).collect();
    let backgrounds = tags.iter().all(Option::is_some).then(|| tags.iter().map(|t| t.unwrap()).collect());
    Dataset::new(pixels, labels, split, provenance.clone(), sources, backgrounds)
}

fn derived_provenance(std: &BenchmarkSet, benchmark: Benchmark, seed: u64, sizes: SplitSizes) -> Provenance {
    let mut parameters = BTreeMap::new();
    parameters.insert("composite".to_string(), json!("max"));
    parameters.insert("sizes".to_string(), json!([sizes.train, sizes.valid, sizes.test]));
    parameters.insert("digit_seed".to_string(), json!(std.provenance().seed));
    Provenance {
        benchmark,
        seed,
        parameters,
        source_hashes: std.provenance().source_hashes.clone(),
    }
}

/// Digits from each mnist-std split over fresh smoothed-noise backgrounds.
pub fn make_mnist_noise(std: &BenchmarkSet, seed: u64, sizes: SplitSizes) -> Result<BenchmarkSet> {
    let mut provenance = derived_provenance(std, Benchmark::MnistNoise, seed, sizes);
    provenance.parameters.insert("noise".to_string(), json!("uniform"));
    provenance.parameters.insert("filter".to_string(), json!(NOISE_FILTER));
    let make = |split: Split| {
        synthesize(std.split(split), sizes.get(split), seed, &provenance, |rng| {
            (noise_background(rng), None)
        })
    };
    Ok(BenchmarkSet {
        train: make(Split::Train)?,
        valid: make(Split::Valid)?,
        test: make(Split::Test)?,
    })
}

/// Background pools by CIFAR index: a seeded four-fifths of the CIFAR
/// training images for train, the remaining fifth for valid, all of the
/// CIFAR test images for test.
pub fn cifar_pools(train_count: usize, test_count: usize, seed: u64) -> [Vec<u32>; 3] {
    let mut perm: Vec<u32> = (0..train_count as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    perm.shuffle(&mut rng);
    let cut = train_count * 4 / 5;
    let mut train = perm[..cut].to_vec();
    let mut valid = perm[cut..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    [train, valid, (0..test_count as u32).collect()]
}

/// Digits from each mnist-std split over gray CIFAR crops drawn from
/// disjoint pools.
pub fn make_mnist_img(std: &BenchmarkSet, cifar_dir: &Path, seed: u64, sizes: SplitSizes) -> Result<BenchmarkSet> {
    let pools = cifar::load_cifar(cifar_dir)?;
    let mut provenance = derived_provenance(std, Benchmark::MnistImg, seed, sizes);
    provenance.parameters.insert("gray".to_string(), json!([0.299, 0.587, 0.114]));
    provenance.parameters.insert("crop".to_string(), json!("center 28 of 32"));
    provenance.source_hashes.extend(pools.hashes.clone());
    let [train_pool, valid_pool, test_pool] = cifar_pools(pools.train.len(), pools.test.len(), seed);
    let make = |split: Split, pool: &[u32], images: &GrayPool| {
        if pool.is_empty() {
            return Err(Error::State(format!("no CIFAR backgrounds for the {} split", split.name())));
        }
        synthesize(std.split(split), sizes.get(split), seed, &provenance, |rng| {
            let k = pool[rng.gen_range(0..pool.len())];
            (images.image(k as usize).to_vec(), Some(k))
        })
    };
    Ok(BenchmarkSet {
        train: make(Split::Train, &train_pool, &pools.train)?,
        valid: make(Split::Valid, &valid_pool, &pools.train)?,
        test: make(Split::Test, &test_pool, &pools.test)?,
    })
}
