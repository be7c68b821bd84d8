//! CIFAR-10 binary batches: 3073-byte records (label, then 1024 red,
//! 1024 green, 1024 blue bytes of a 32×32 image).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{require_files, sha256_hex, SIDE};
use crate::error::{Error, Result};

pub const RECORD: usize = 3073;
pub const CIFAR_SIDE: usize = 32;
const PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

pub const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_BATCH: &str = "test_batch.bin";

/// Luma of one RGB byte triple, scaled to `[0, 1]`.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Gray 28×28 center crops of CIFAR images, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPool {
    pixels: Vec<f64>,
}

impl GrayPool {
    pub fn len(&self) -> usize {
        self.pixels.len() / (SIDE * SIDE)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.pixels[i * SIDE * SIDE..(i + 1) * SIDE * SIDE]
    }
}

/// Parses the concatenated records of one or more batch files.
pub fn parse_records(bytes: &[u8], origin: &Path, pool: &mut Vec<f64>) -> Result<()> {
    if bytes.len() % RECORD != 0 {
        let whole = bytes.len() / RECORD * RECORD;
        return Err(Error::format(
            origin,
            whole as u64,
            format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        ));
    }
    let off = (CIFAR_SIDE - SIDE) / 2;
    for (k, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(origin, (k * RECORD) as u64, format!("label {} out of range", rec[0])));
        }
        let px = &rec[1..];
        for r in off..off + SIDE {
            for c in off..off + SIDE {
                let i = r * CIFAR_SIDE + c;
                pool.push(luma(px[i], px[PLANE + i], px[2 * PLANE + i]));
            }
        }
    }
    Ok(())
}

fn load(paths: &[PathBuf], hashes: &mut BTreeMap<String, String>) -> Result<GrayPool> {
    let mut pixels = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_records(&bytes, p, &mut pixels)?;
        let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        hashes.insert(name, sha256_hex(&bytes));
    }
    Ok(GrayPool { pixels })
}

pub fn batch_files(dir: &Path) -> Vec<PathBuf> {
    TRAIN_BATCHES
        .iter()
        .chain(std::iter::once(&TEST_BATCH))
        .map(|f| dir.join(f))
        .collect()
}

/// Gray pools of the training and test images plus the SHA-256 of every
/// batch file. The training pool concatenates the five training batches.
pub fn load_cifar(dir: &Path) -> Result<CifarPools> {
    let files = batch_files(dir);
    require_files(&files)?;
    let mut hashes = BTreeMap::new();
    let train = load(&files[..5], &mut hashes)?;
    let test = load(&files[5..], &mut hashes)?;
    Ok(CifarPools { train, test, hashes })
}

#[derive(Debug, Clone)]
pub struct CifarPools {
    pub train: GrayPool,
    pub test: GrayPool,
    pub hashes: BTreeMap<String, String>,
}

/// Builds one CIFAR record from a label and an RGB image.
pub fn encode_record(label: u8, rgb: &dyn Fn(usize, usize, usize) -> u8) -> Vec<u8> {
    let mut rec = Vec::with_capacity(RECORD);
    rec.push(label);
    for ch in 0..3 {
        for r in 0..CIFAR_SIDE {
            for c in 0..CIFAR_SIDE {
                rec.push(rgb(ch, r, c));
            }
        }
    }
    rec
}
