use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Labelled samples stored row-major, one `channels x rows x cols` image per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.rows * self.cols
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// First `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.inputs.truncate(n * self.sample_len());
        self.labels.truncate(n);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Where experiment data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// IDX files (optionally gzipped) in `dir`, named like the original MNIST
    /// distribution. Relative paths resolve against the config file.
    Mnist {
        dir: PathBuf,
        #[serde(default = "default_train")]
        train_samples: usize,
        #[serde(default = "default_test")]
        test_samples: usize,
    },
    /// Isotropic Gaussian clusters around random class centres.
    Blobs {
        #[serde(default = "default_train")]
        train_samples: usize,
        #[serde(default = "default_test")]
        test_samples: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_train() -> usize {
    5000
}
fn default_test() -> usize {
    1000
}
fn default_classes() -> usize {
    10
}
fn default_side() -> usize {
    8
}
fn default_noise() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn load(&self, base: &Path) -> Result<Split> {
        match self {
            DatasetSpec::Mnist { dir, train_samples, test_samples } => {
                let dir = if dir.is_absolute() { dir.clone() } else { base.join(dir) };
                let train = load_idx_pair(&dir, "train")?;
                let test = load_idx_pair(&dir, "t10k")?;
                for (what, have, want) in [("train", train.len(), *train_samples), ("test", test.len(), *test_samples)] {
                    if have < want {
                        return Err(Error::InvalidConfig(format!(
                            "{what} split in {} has {have} samples, {want} requested",
                            dir.display()
                        )));
                    }
                }
                Ok(Split { train: train.truncated(*train_samples), test: test.truncated(*test_samples) })
            }
            DatasetSpec::Blobs { train_samples, test_samples, classes, side, noise, seed } => {
                let all = gaussian_blobs(train_samples + test_samples, *classes, *side, *noise, *seed)?;
                let n = all.sample_len();
                let test = Dataset {
                    inputs: all.inputs[train_samples * n..].to_vec(),
                    labels: all.labels[*train_samples..].to_vec(),
                    ..all.clone()
                };
                Ok(Split { train: all.truncated(*train_samples), test })
            }
        }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::InvalidConfig(format!("no {stem}[.gz] in {}", dir.display())))
}

fn be_u32(b: &[u8], at: usize) -> Result<usize> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]) as usize)
        .ok_or_else(|| Error::InvalidConfig("truncated IDX header".into()))
}

/// Reads `{prefix}-images-idx3-ubyte[.gz]` and `{prefix}-labels-idx1-ubyte[.gz]`,
/// scaling pixels to `[0, 1]`.
pub fn load_idx_pair(dir: &Path, prefix: &str) -> Result<Dataset> {
    let images = open_maybe_gz(&find(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = open_maybe_gz(&find(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    if be_u32(&images, 0)? != 0x0803 || be_u32(&labels, 0)? != 0x0801 {
        return Err(Error::InvalidConfig(format!("bad IDX magic in {}", dir.display())));
    }
    let (n, rows, cols) = (be_u32(&images, 4)?, be_u32(&images, 8)?, be_u32(&images, 12)?);
    if be_u32(&labels, 4)? != n {
        return Err(Error::InvalidConfig("image and label counts differ".into()));
    }
    let pixels = images.get(16..16 + n * rows * cols).ok_or_else(|| Error::InvalidConfig("truncated IDX images".into()))?;
    let labels: Vec<usize> = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::InvalidConfig("truncated IDX labels".into()))?
        .iter()
        .map(|&b| b as usize)
        .collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        inputs: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels,
        channels: 1,
        rows,
        cols,
        classes,
    })
}

/// `n` single-channel `side x side` samples drawn round-robin from `classes`
/// Gaussian clusters. Centres are uniform in `[-1, 1]` per pixel; `noise` is
/// the per-pixel standard deviation.
pub fn gaussian_blobs(n: usize, classes: usize, side: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || side == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidConfig("blobs need classes >= 1, side >= 1 and noise >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = side * side;
    let centres: Vec<f64> = (0..classes * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for k in 0..d {
            inputs.push(centres[c * d + k] + noise * standard_normal(&mut rng));
        }
        labels.push(c);
    }
    Ok(Dataset { inputs, labels, channels: 1, rows: side, cols: side, classes })
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; rand 0.8 keeps the normal distribution in a separate crate.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Iid,
    /// Sort by label, cut into `2 n` shards and deal two to each device.
    NoniidShards,
}

/// Splits sample indices `0..labels.len()` across `n_devices`.
pub fn partition_data(labels: &[usize], n_devices: usize, mode: PartitionMode, seed: u64) -> Result<Vec<Vec<usize>>> {
    let shards_per_device = match mode {
        PartitionMode::Iid => 1,
        PartitionMode::NoniidShards => 2,
    };
    if n_devices == 0 || labels.len() < n_devices * shards_per_device {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot be split across {n_devices} devices",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let mut out = match mode {
        PartitionMode::Iid => near_equal_chunks(&order, n_devices),
        PartitionMode::NoniidShards => {
            // Stable sort keeps the shuffled order within a label.
            order.sort_by_key(|&i| labels[i]);
            let shards = near_equal_chunks(&order, 2 * n_devices);
            let mut ids: Vec<usize> = (0..shards.len()).collect();
            ids.shuffle(&mut rng);
            ids.chunks(2).map(|pair| pair.iter().flat_map(|&s| shards[s].iter().copied()).collect()).collect()
        }
    };
    for shard in &mut out {
        shard.sort_unstable();
    }
    Ok(out)
}

fn near_equal_chunks(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let chunk = items[start..start + len].to_vec();
            start += len;
            chunk
        })
        .collect()
}
