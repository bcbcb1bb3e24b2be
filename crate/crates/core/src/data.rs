//! Synthetic feature-sequence tasks and the `TPF1` container.
//!
//! Both tasks use two markers `a = 3·e₀` and `b = 3·e₁`. Noise rows are
//! standard normal in dimensions `2..D` and zero in the marker plane.
//!
//! * order: `a` and `b` sit at two distinct random positions; the label is 0
//!   when `a` comes first. Every sample holds the same multiset of marker
//!   rows, so permutation-invariant poolers are at chance.
//! * bag: a single marker (`a` for class 0, `b` for class 1) sits at a
//!   random position.
//!
//! ## `TPF1` layout (little-endian)
//!
//! | bytes        | field                       |
//! |--------------|-----------------------------|
//! | 4            | magic `TPF1`                |
//! | 2            | `u16` version = 1           |
//! | 4 × 4        | `u32` N, T, D, n_classes    |
//! | 1            | `u8` dtype (0 = f32)        |
//! | 1            | `u8` task (0 = order, 1 = bag) |
//! | 4·N          | `u32` labels                |
//! | 4·N·T·D      | `f32` features, row-major   |

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::pool::{TemporalFeatures, TwoStreamFeatures};
use crate::tensor::{Scalar, Tensor};
use crate::train::Sample;

pub const MAGIC: [u8; 4] = *b"TPF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 16 + 2;
pub const MARKER_SCALE: f32 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Order,
    Bag,
}

impl TaskKind {
    pub fn code(self) -> u8 {
        match self {
            TaskKind::Order => 0,
            TaskKind::Bag => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, FormatError> {
        match c {
            0 => Ok(TaskKind::Order),
            1 => Ok(TaskKind::Bag),
            other => Err(FormatError::UnknownTask(other)),
        }
    }
}

/// Labelled `[N × T × D]` single-precision feature sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub task: TaskKind,
    pub seq_len: usize,
    pub dim: usize,
    pub n_classes: u32,
    pub labels: Vec<u32>,
    pub features: Vec<f32>,
    /// Generation seed; not stored in the container, so `None` after reading.
    pub seed: Option<u64>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let k = self.seq_len * self.dim;
        &self.features[i * k..(i + 1) * k]
    }

    pub fn features_of<T: Scalar>(&self, i: usize) -> TemporalFeatures<T> {
        let data = self.sample(i).iter().map(|&v| T::from_f64(v as f64)).collect();
        TemporalFeatures::from_rows(self.seq_len, self.dim, data).expect("consistent extents")
    }

    pub fn samples<T: Scalar>(&self) -> Vec<Sample<TemporalFeatures<T>>> {
        (0..self.len()).map(|i| (self.features_of(i), self.labels[i] as usize)).collect()
    }

    /// Rows `range` as a new dataset.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::config(format!("subset {range:?} out of bounds for {} samples", self.len())));
        }
        let k = self.seq_len * self.dim;
        Ok(Self {
            labels: self.labels[range.clone()].to_vec(),
            features: self.features[range.start * k..range.end * k].to_vec(),
            ..self.clone()
        })
    }

    /// Fraction of samples per class.
    pub fn class_balance(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.len().max(1) as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.labels.len() + self.features.len()));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.len(), self.seq_len, self.dim, self.n_classes as usize] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(0);
        out.push(self.task.code());
        for &l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for &f in &self.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |expected| FormatError::Truncated {
            expected,
            actual: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(HEADER_LEN).into());
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic).into());
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN).into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let [n, t, d, c] = [6, 10, 14, 18].map(|o| u32_at(o) as usize);
        if bytes[22] != 0 {
            return Err(FormatError::UnknownDtype(bytes[22]).into());
        }
        let task = TaskKind::from_code(bytes[23])?;
        let expected = HEADER_LEN + 4 * n + 4 * n * t * d;
        if bytes.len() < expected {
            return Err(truncated(expected).into());
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes {
                expected,
                actual: bytes.len(),
            }
            .into());
        }
        let labels: Vec<u32> = (0..n).map(|i| u32_at(HEADER_LEN + 4 * i)).collect();
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= c) {
            return Err(FormatError::LabelOutOfRange {
                index,
                label,
                n_classes: c as u32,
            }
            .into());
        }
        let base = HEADER_LEN + 4 * n;
        let features = bytes[base..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            task,
            seq_len: t,
            dim: d,
            n_classes: c as u32,
            labels,
            features,
            seed: None,
        })
    }
}

pub fn write_dataset(ds: &SyntheticDataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<SyntheticDataset> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SyntheticDataset::from_bytes(&bytes)
}

fn check_dims(n: usize, t: usize, d: usize) -> Result<()> {
    if n == 0 || t < 3 || d < 4 {
        return Err(Error::config(format!(
            "synthetic task needs n >= 1, T >= 3 and D >= 4 (got n={n}, T={t}, D={d})"
        )));
    }
    Ok(())
}

fn noise_row<R: Rng>(rng: &mut R, row: &mut [f32]) {
    row[0] = 0.0;
    row[1] = 0.0;
    for v in &mut row[2..] {
        *v = rng.sample::<f32, _>(StandardNormal);
    }
}

fn marker_row(row: &mut [f32], which: usize) {
    row.fill(0.0);
    row[which] = MARKER_SCALE;
}

fn generate(task: TaskKind, n: usize, t: usize, d: usize, seed: u64) -> Result<SyntheticDataset> {
    check_dims(n, t, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut features = vec![0.0f32; n * t * d];
    for s in features.chunks_exact_mut(t * d) {
        let label = rng.random_bool(0.5) as u32;
        let mut markers = [(usize::MAX, 0usize); 2];
        match task {
            TaskKind::Order => {
                let p = rng.random_range(0..t);
                let mut q = rng.random_range(0..t - 1);
                if q >= p {
                    q += 1;
                }
                let (first, second) = (p.min(q), p.max(q));
                let (fm, sm) = if label == 0 { (0, 1) } else { (1, 0) };
                markers = [(first, fm), (second, sm)];
            }
            TaskKind::Bag => markers[0] = (rng.random_range(0..t), label as usize),
        }
        for (i, row) in s.chunks_exact_mut(d).enumerate() {
            match markers.iter().find(|m| m.0 == i) {
                Some(&(_, which)) => marker_row(row, which),
                None => noise_row(&mut rng, row),
            }
        }
        labels.push(label);
    }
    Ok(SyntheticDataset {
        task,
        seq_len: t,
        dim: d,
        n_classes: 2,
        labels,
        features,
        seed: Some(seed),
    })
}

/// Binary task whose label is the relative order of the two markers.
pub fn gen_order_task(n: usize, t: usize, d: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(TaskKind::Order, n, t, d, seed)
}

/// Binary task whose label is which marker appears anywhere in the sequence.
pub fn gen_bag_task(n: usize, t: usize, d: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(TaskKind::Bag, n, t, d, seed)
}

pub fn gen_task(task: TaskKind, n: usize, t: usize, d: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(task, n, t, d, seed)
}

/// Two-stream order task: the slow stream is an order-task sample and the
/// fast stream repeats each slow marker over `alpha` consecutive frames.
pub fn gen_two_stream<T: Scalar>(
    n: usize,
    slow_len: usize,
    alpha: usize,
    slow_dim: usize,
    fast_dim: usize,
    seed: u64,
) -> Result<Vec<Sample<TwoStreamFeatures<T>>>> {
    if alpha == 0 || fast_dim < 4 {
        return Err(Error::config("two-stream data needs alpha >= 1 and fast_dim >= 4"));
    }
    let slow = gen_order_task(n, slow_len, slow_dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfa57);
    let fast_len = slow_len * alpha;
    (0..n)
        .map(|i| {
            let s = slow.sample(i);
            let mut fast = vec![0.0f32; fast_len * fast_dim];
            for (j, row) in fast.chunks_exact_mut(fast_dim).enumerate() {
                let src = &s[(j / alpha) * slow_dim..(j / alpha + 1) * slow_dim];
                match (src[0] != 0.0, src[1] != 0.0) {
                    (true, _) => marker_row(row, 0),
                    (_, true) => marker_row(row, 1),
                    _ => noise_row(&mut rng, row),
                }
            }
            let to_t = |v: &[f32]| v.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<T>>();
            let sf = TemporalFeatures::new(Tensor::new([slow_len, slow_dim], to_t(s))?)?;
            let ff = TemporalFeatures::new(Tensor::new([fast_len, fast_dim], to_t(&fast))?)?;
            Ok((TwoStreamFeatures::new(sf, ff)?, slow.labels[i] as usize))
        })
        .collect()
}
