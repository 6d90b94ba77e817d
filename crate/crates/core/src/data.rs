//! Training data: a synthetic attribute world, IDX and CSV loaders, the
//! view augmentation, and the shuffled twin-view batch stream.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ImsvdError, Result};
use crate::tensor::Matrix;

/// Observations plus their ground-truth label tuples (one entry per attribute).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<Vec<usize>>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(ImsvdError::format(format!(
                "{} observations but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        Ok(Dataset { x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Labels of attribute `a` for every sample.
    pub fn attribute(&self, a: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l[a]).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// First `train` rows then the rest.
    pub fn split(&self, train: usize) -> (Dataset, Dataset) {
        let a: Vec<usize> = (0..train.min(self.len())).collect();
        let b: Vec<usize> = (train.min(self.len())..self.len()).collect();
        (self.subset(&a), self.subset(&b))
    }
}

/// Small reproducible stand-in for image data: every sample is a tuple of
/// independent categorical attributes pushed through a fixed random
/// nonlinear map, plus observation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeWorldSpec {
    pub values_per_attribute: Vec<usize>,
    pub ambient_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for AttributeWorldSpec {
    fn default() -> Self {
        AttributeWorldSpec {
            values_per_attribute: vec![8; 4],
            ambient_dim: 64,
            noise_sigma: 0.1,
            seed: 0,
            train_size: 8192,
            test_size: 2048,
        }
    }
}

impl AttributeWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values_per_attribute.is_empty() {
            return Err(ImsvdError::contract("world needs at least one attribute"));
        }
        if self.values_per_attribute.iter().any(|&k| k < 2) {
            return Err(ImsvdError::contract(
                "every attribute needs at least 2 values",
            ));
        }
        let total: usize = self.values_per_attribute.iter().sum();
        if self.ambient_dim < total {
            return Err(ImsvdError::contract(format!(
                "ambient_dim {} smaller than the {total} one-hot attribute units",
                self.ambient_dim
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(ImsvdError::contract("noise_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn attributes(&self) -> usize {
        self.values_per_attribute.len()
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: AttributeWorldSpec,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate_world(spec: &AttributeWorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let units: usize = spec.values_per_attribute.iter().sum();
    // Scaled so the pre-activation of a sample has unit variance.
    let w_scale = 1.0 / (spec.attributes() as f64).sqrt();
    let mixing = Matrix::from_fn(units, spec.ambient_dim, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g * w_scale
    });
    let sample = |n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let labels: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                spec.values_per_attribute
                    .iter()
                    .map(|&k| rng.random_range(0..k))
                    .collect()
            })
            .collect();
        let mut x = Matrix::zeros(n, spec.ambient_dim);
        for (i, tuple) in labels.iter().enumerate() {
            let mut offset = 0;
            let row = x.row_mut(i);
            for (&v, &k) in tuple.iter().zip(&spec.values_per_attribute) {
                for (dst, &w) in row.iter_mut().zip(mixing.row(offset + v)) {
                    *dst += w;
                }
                offset += k;
            }
            for dst in row.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *dst = dst.tanh() + spec.noise_sigma * e;
            }
        }
        Dataset::new(x, labels)
    };
    let train = sample(spec.train_size, &mut rng)?;
    let test = sample(spec.test_size, &mut rng)?;
    Ok(World {
        spec: spec.clone(),
        train,
        test,
    })
}

/// Per-sample view augmentation: additive Gaussian noise, coordinate
/// dropout, then a random global scale in `[1 - s, 1 + s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub noise_sigma: f64,
    pub dropout: f64,
    pub scale: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            noise_sigma: 0.1,
            dropout: 0.2,
            scale: 0.1,
        }
    }
}

impl AugmentPolicy {
    pub const IDENTITY: AugmentPolicy = AugmentPolicy {
        noise_sigma: 0.0,
        dropout: 0.0,
        scale: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(ImsvdError::contract(format!(
                "dropout fraction must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(ImsvdError::contract("augmentation noise must be >= 0"));
        }
        if !(self.scale >= 0.0 && self.scale < 1.0) {
            return Err(ImsvdError::contract("augmentation scale must be in [0, 1)"));
        }
        Ok(())
    }
}

pub fn augment(x: &Matrix, policy: &AugmentPolicy, seed: u64) -> Result<Matrix> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, policy.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| ImsvdError::contract(e.to_string()))?;
    let mut out = x.clone();
    for i in 0..out.rows() {
        let factor = if policy.scale > 0.0 {
            rng.random_range(1.0 - policy.scale..=1.0 + policy.scale)
        } else {
            1.0
        };
        for v in out.row_mut(i) {
            if policy.noise_sigma > 0.0 {
                *v += noise.sample(&mut rng);
            }
            if policy.dropout > 0.0 && rng.random::<f64>() < policy.dropout {
                *v = 0.0;
            }
            *v *= factor;
        }
    }
    Ok(out)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            ImsvdError::format(format!(
                "{what}: truncated header, {} bytes available, need {}",
                bytes.len(),
                at + 4
            ))
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(ImsvdError::format(format!(
            "{what}: bad magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

/// Parses an IDX image file (`u8`, 3 dimensions) into flattened rows in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    check_magic(bytes, IDX_IMAGES_MAGIC, "idx images")?;
    let n = be_u32(bytes, 4, "idx images")? as usize;
    let rows = be_u32(bytes, 8, "idx images")? as usize;
    let cols = be_u32(bytes, 12, "idx images")? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(ImsvdError::format(format!(
            "idx images: truncated, {} bytes present, header promises {need}",
            bytes.len()
        )));
    }
    let data = bytes[16..need].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(n, rows * cols, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, "idx labels")?;
    let n = be_u32(bytes, 4, "idx labels")? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(ImsvdError::format(format!(
            "idx labels: truncated, {} bytes present, header promises {need}",
            bytes.len()
        )));
    }
    Ok(bytes[8..need].iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = fs::read(images).map_err(|e| ImsvdError::io(images, e))?;
    let lbl = fs::read(labels).map_err(|e| ImsvdError::io(labels, e))?;
    let x = parse_idx_images(&img)?;
    let y = parse_idx_labels(&lbl)?;
    if x.rows() != y.len() {
        return Err(ImsvdError::format(format!(
            "idx: {} images but {} labels",
            x.rows(),
            y.len()
        )));
    }
    Dataset::new(x, y.into_iter().map(|l| vec![l]).collect())
}

/// Header row `f0..f{n-1},label0..label{g-1}`, one sample per line.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| ImsvdError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let g = ds.labels.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.extend((0..g).map(|a| format!("label{a}")));
    let fmt_err = |e: csv::Error| ImsvdError::format(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(fmt_err)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v:.17e}")).collect();
        rec.extend(ds.labels[i].iter().map(usize::to_string));
        w.write_record(&rec).map_err(fmt_err)?;
    }
    w.flush().map_err(|e| ImsvdError::io(path, e))?;
    Ok(())
}

/// Columns whose header starts with `label` are labels; all others features.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| ImsvdError::format(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| ImsvdError::format(format!("{}: {e}", path.display())))?
        .clone();
    let is_label: Vec<bool> = header
        .iter()
        .map(|h| h.trim().starts_with("label"))
        .collect();
    let features = is_label.iter().filter(|&&l| !l).count();
    if is_label.iter().all(|&l| !l) {
        return Err(ImsvdError::format(format!(
            "{}: no label column",
            path.display()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ImsvdError::format(format!("{}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(ImsvdError::format(format!(
                "{}: row {row} has {} fields, header has {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        let mut tuple = Vec::new();
        for (field, &label) in rec.iter().zip(&is_label) {
            let bad = |e: &dyn std::fmt::Display| {
                ImsvdError::format(format!("{}: row {row}: {field:?}: {e}", path.display()))
            };
            if label {
                tuple.push(field.trim().parse::<usize>().map_err(|e| bad(&e))?);
            } else {
                data.push(field.trim().parse::<f64>().map_err(|e| bad(&e))?);
            }
        }
        labels.push(tuple);
    }
    Dataset::new(Matrix::from_vec(labels.len(), features, data)?, labels)
}

/// Where train/test data come from, parsed from `synthetic`,
/// `csv:<train>[,<test>]` or `idx:<images>,<labels>[,<test images>,<test labels>]`.
/// Without an explicit test set the last fifth of the file is held out.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
}

impl std::str::FromStr for DatasetSource {
    type Err = ImsvdError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "synthetic" {
            return Ok(DatasetSource::Synthetic);
        }
        let paths = |rest: &str| -> Vec<PathBuf> {
            rest.split(',').map(|p| PathBuf::from(p.trim())).collect()
        };
        if let Some(rest) = s.strip_prefix("csv:") {
            let mut p = paths(rest);
            return match p.len() {
                1 => Ok(DatasetSource::Csv {
                    train: p.remove(0),
                    test: None,
                }),
                2 => {
                    let test = p.pop();
                    Ok(DatasetSource::Csv {
                        train: p.remove(0),
                        test,
                    })
                }
                _ => Err(ImsvdError::contract(format!(
                    "csv dataset takes 1 or 2 paths: {s:?}"
                ))),
            };
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let mut p = paths(rest).into_iter();
            return match (p.next(), p.next(), p.next(), p.next(), p.next()) {
                (Some(images), Some(labels), None, None, None) => Ok(DatasetSource::Idx {
                    images,
                    labels,
                    test: None,
                }),
                (Some(images), Some(labels), Some(ti), Some(tl), None) => Ok(DatasetSource::Idx {
                    images,
                    labels,
                    test: Some((ti, tl)),
                }),
                _ => Err(ImsvdError::contract(format!(
                    "idx dataset takes 2 or 4 paths: {s:?}"
                ))),
            };
        }
        Err(ImsvdError::contract(format!(
            "unknown dataset {s:?}; expected synthetic, csv:<paths> or idx:<paths>"
        )))
    }
}

fn holdout(all: Dataset) -> (Dataset, Dataset) {
    let train = all.len() - all.len() / 5;
    all.split(train)
}

impl DatasetSource {
    /// Loads `(train, test)`; `world` describes the synthetic case.
    pub fn load(&self, world: &AttributeWorldSpec) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Synthetic => {
                let w = generate_world(world)?;
                Ok((w.train, w.test))
            }
            DatasetSource::Csv { train, test } => match test {
                Some(t) => Ok((load_csv(train)?, load_csv(t)?)),
                None => Ok(holdout(load_csv(train)?)),
            },
            DatasetSource::Idx {
                images,
                labels,
                test,
            } => match test {
                Some((ti, tl)) => Ok((load_idx(images, labels)?, load_idx(ti, tl)?)),
                None => Ok(holdout(load_idx(images, labels)?)),
            },
        }
    }
}

/// Two index-aligned augmented views of the same samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiviewBatch {
    pub indices: Vec<usize>,
    pub x1: Matrix,
    pub x2: Matrix,
    pub labels: Vec<Vec<usize>>,
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Epoch-wise shuffled batches; the last partial batch is dropped. Every
/// batch is a pure function of `(shuffle_seed, epoch, batch index)`.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    data: &'a Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    policy: AugmentPolicy,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        data: &'a Dataset,
        batch_size: usize,
        shuffle_seed: u64,
        policy: AugmentPolicy,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(ImsvdError::contract("batch size must be >= 1"));
        }
        if batch_size > data.len() {
            return Err(ImsvdError::contract(format!(
                "batch size {batch_size} exceeds dataset size {}",
                data.len()
            )));
        }
        policy.validate()?;
        Ok(BatchStream {
            data,
            batch_size,
            shuffle_seed,
            policy,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len() / self.batch_size
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.shuffle_seed, epoch as u64]));
        order.shuffle(&mut rng);
        order
    }

    pub fn batch(&self, epoch: usize, b: usize, order: &[usize]) -> Result<MultiviewBatch> {
        let idx = order[b * self.batch_size..(b + 1) * self.batch_size].to_vec();
        let x = self.data.x.select_rows(&idx);
        let base = [self.shuffle_seed, epoch as u64, b as u64];
        let x1 = augment(&x, &self.policy, mix_seed(&[base[0], base[1], base[2], 1]))?;
        let x2 = augment(&x, &self.policy, mix_seed(&[base[0], base[1], base[2], 2]))?;
        Ok(MultiviewBatch {
            labels: idx.iter().map(|&i| self.data.labels[i].clone()).collect(),
            indices: idx,
            x1,
            x2,
        })
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Result<MultiviewBatch>> + '_ {
        let order = self.permutation(epoch);
        (0..self.batches_per_epoch()).map(move |b| self.batch(epoch, b, &order))
    }
}

pub fn batch_iter(
    data: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    policy: AugmentPolicy,
) -> Result<BatchStream<'_>> {
    BatchStream::new(data, batch_size, shuffle_seed, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_world(noise: f64, seed: u64) -> World {
        generate_world(&AttributeWorldSpec {
            values_per_attribute: vec![3, 4],
            ambient_dim: 10,
            noise_sigma: noise,
            seed,
            train_size: 200,
            test_size: 50,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_world_maps_equal_tuples_to_equal_points() {
        let w = tiny_world(0.0, 1);
        let ds = &w.train;
        for i in 0..ds.len() {
            for j in 0..i {
                if ds.labels[i] == ds.labels[j] {
                    assert_eq!(ds.x.row(i), ds.x.row(j));
                }
            }
        }
    }

    #[test]
    fn world_is_reproducible() {
        let a = tiny_world(0.2, 5);
        let b = tiny_world(0.2, 5);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_ne!(a.train, tiny_world(0.2, 6).train);
    }

    #[test]
    fn attribute_marginals_are_uniform() {
        let w = generate_world(&AttributeWorldSpec {
            train_size: 10_000,
            test_size: 1,
            ..Default::default()
        })
        .unwrap();
        let n = w.train.len() as f64;
        for a in 0..4 {
            let mut counts = [0usize; 8];
            for &v in &w.train.attribute(a) {
                counts[v] += 1;
            }
            let p = 1.0 / 8.0;
            let sigma = (n * p * (1.0 - p)).sqrt();
            for &c in &counts {
                assert!((c as f64 - n * p).abs() < 3.0 * sigma, "{counts:?}");
            }
        }
    }

    #[test]
    fn world_spec_validation() {
        let s = AttributeWorldSpec {
            ambient_dim: 16,
            ..AttributeWorldSpec::default()
        };
        assert!(s.validate().is_err());
        let s = AttributeWorldSpec {
            values_per_attribute: vec![8, 1],
            ..AttributeWorldSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn identity_augmentation() {
        let w = tiny_world(0.1, 2);
        let v = augment(&w.train.x, &AugmentPolicy::IDENTITY, 9).unwrap();
        assert_eq!(v, w.train.x);
    }

    #[test]
    fn augmentation_depends_on_seed() {
        let w = tiny_world(0.1, 2);
        let p = AugmentPolicy::default();
        assert_ne!(
            augment(&w.train.x, &p, 1).unwrap(),
            augment(&w.train.x, &p, 2).unwrap()
        );
        assert_eq!(
            augment(&w.train.x, &p, 1).unwrap(),
            augment(&w.train.x, &p, 1).unwrap()
        );
    }

    #[test]
    fn dropout_fraction_matches_policy() {
        let x = Matrix::ones(500, 40);
        let policy = AugmentPolicy {
            noise_sigma: 0.0,
            dropout: 0.2,
            scale: 0.0,
        };
        let v = augment(&x, &policy, 3).unwrap();
        let n = x.len() as f64;
        let zeros = v.as_slice().iter().filter(|&&e| e == 0.0).count() as f64;
        let sigma = (n * 0.2 * 0.8).sqrt();
        assert!((zeros - 0.2 * n).abs() < 3.0 * sigma, "{zeros}");
    }

    #[test]
    fn dropout_of_one_is_rejected() {
        let p = AugmentPolicy {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            augment(&Matrix::ones(1, 1), &p, 0),
            Err(ImsvdError::Contract(_))
        ));
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102, 255, 0, 0, 204]);
        let lbl = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lbl)
    }

    #[test]
    fn idx_fixture_parses() {
        let (img, lbl) = idx_fixture();
        let x = parse_idx_images(&img).unwrap();
        assert_eq!(x.shape(), (2, 4));
        assert_eq!(x.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(x.row(1), &[1.0, 0.0, 0.0, 0.8]);
        assert_eq!(parse_idx_labels(&lbl).unwrap(), vec![7, 3]);
    }

    #[test]
    fn idx_errors() {
        let (mut img, lbl) = idx_fixture();
        let err = parse_idx_labels(&img).unwrap_err().to_string();
        assert!(err.contains("0x00000801"), "{err}");
        let short = img[..20].to_vec();
        let err = parse_idx_images(&short).unwrap_err().to_string();
        assert!(err.contains("20 bytes"), "{err}");
        img[3] = 1;
        assert!(parse_idx_images(&img).is_err());
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = idx_fixture();
        let mut lbl3 = lbl.clone();
        lbl3[7] = 3;
        lbl3.push(1);
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lbl3).unwrap();
        let err = load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap_err();
        assert!(matches!(err, ImsvdError::Format(_)), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let w = tiny_world(0.3, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&w.test, &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), w.test);
    }

    #[test]
    fn batches_per_epoch_and_coverage() {
        let x = Matrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
        let ds = Dataset::new(x, (0..10).map(|i| vec![i]).collect()).unwrap();
        let stream = batch_iter(&ds, 4, 11, AugmentPolicy::IDENTITY).unwrap();
        let batches: Vec<_> = stream.epoch(0).map(Result::unwrap).collect();
        assert_eq!(batches.len(), 2);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(seen, stream.permutation(0)[..8].to_vec());
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        let again: Vec<_> = stream.epoch(0).map(Result::unwrap).collect();
        assert_eq!(batches, again);
        for b in &batches {
            for (k, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.x1.row(k), ds.x.row(i));
                assert_eq!(b.labels[k], ds.labels[i]);
            }
        }
        assert!(batch_iter(&ds, 0, 0, AugmentPolicy::IDENTITY).is_err());
        assert!(batch_iter(&ds, 11, 0, AugmentPolicy::IDENTITY).is_err());
    }

    #[test]
    fn views_differ_but_stay_aligned() {
        let w = tiny_world(0.1, 3);
        let stream = batch_iter(&w.train, 16, 1, AugmentPolicy::default()).unwrap();
        let b = stream.epoch(2).next().unwrap().unwrap();
        assert_ne!(b.x1, b.x2);
        assert_eq!(b.x1.rows(), b.x2.rows());
    }
}
