//! Datasets: seeded synthetic blobs and a small binary on-disk format.
//!
//! The binary format (extension free, conventionally `.dset`) is:
//!
//! ```text
//! magic  b"MXBD"          4 bytes
//! version u32 LE          (currently 1)
//! n       u32 LE          number of samples
//! dim     u32 LE          input dimension
//! classes u32 LE
//! inputs  n*dim f64 LE    row-major
//! labels  n     u32 LE    each < classes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MXBD";
const VERSION: u32 = 1;

/// A mini-batch view: `inputs` is `[n x dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() || inputs.len() != labels.len() * dim {
            return Err(Error::shape(
                "Batch::new",
                format!("{} x {}", labels.len(), dim),
                inputs.len(),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range [0, {classes})"
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        let b = Batch::new(inputs, labels, dim, classes)?;
        Ok(Dataset {
            inputs: b.inputs,
            labels: b.labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Seeded Gaussian-blob classification data. Class centers are drawn
    /// uniformly on the sphere of radius `radius`; samples add isotropic
    /// noise of standard deviation `spread`.
    pub fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = 2.0;
        let mut centers = Vec::with_capacity(classes);
        for _ in 0..classes {
            let mut c: Vec<f64> = (0..dim).map(|_| randn(&mut rng)).collect();
            // rejection-free normalization; a zero vector is measure-zero
            let mut n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                c[0] = 1.0;
                n = 1.0;
            }
            for x in &mut c {
                *x *= radius / n;
            }
            centers.push(c);
        }
        let n = classes * per_class;
        let mut inputs = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for k in 0..classes {
            for _ in 0..per_class {
                for d in 0..dim {
                    inputs.push(centers[k][d] + spread * randn(&mut rng));
                }
                labels.push(k);
            }
        }
        Dataset {
            inputs,
            labels,
            dim,
            classes,
        }
    }

    /// Two antipodal blobs; linearly separable through the origin.
    pub fn separable_pair(per_class: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dir: Vec<f64> = (0..dim).map(|_| randn(&mut rng)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut dir {
            *x *= 2.0 / n;
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for k in 0..2usize {
            let sign = if k == 0 { 1.0 } else { -1.0 };
            for _ in 0..per_class {
                for d in 0..dim {
                    inputs.push(sign * dir[d] + 0.3 * randn(&mut rng));
                }
                labels.push(k);
            }
        }
        Dataset {
            inputs,
            labels,
            dim,
            classes: 2,
        }
    }

    /// Deterministic shuffled split into (train, val).
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
        let take = |ids: &[usize]| {
            let mut inputs = Vec::with_capacity(ids.len() * self.dim);
            let mut labels = Vec::with_capacity(ids.len());
            for &i in ids {
                inputs.extend_from_slice(&self.inputs[i * self.dim..(i + 1) * self.dim]);
                labels.push(self.labels[i]);
            }
            Dataset {
                inputs,
                labels,
                dim: self.dim,
                classes: self.classes,
            }
        };
        (take(&idx[..n_train]), take(&idx[n_train..]))
    }

    pub fn batch(&self, ids: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(ids.len() * self.dim);
        let mut labels = Vec::with_capacity(ids.len());
        for &i in ids {
            inputs.extend_from_slice(&self.inputs[i * self.dim..(i + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
        Batch {
            inputs,
            labels,
            dim: self.dim,
            classes: self.classes,
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
            dim: self.dim,
            classes: self.classes,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(self.len() as u32).to_le_bytes())?;
        f.write_all(&(self.dim as u32).to_le_bytes())?;
        f.write_all(&(self.classes as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.inputs.len() * 8);
        for v in &self.inputs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            buf.extend_from_slice(&(*l as u32).to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 20 || &buf[0..4] != MAGIC {
            return Err(Error::InvalidInput(format!(
                "{} is not a dataset file (bad magic)",
                path.display()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let version = u32_at(4);
        if version != VERSION as usize {
            return Err(Error::InvalidInput(format!(
                "unsupported dataset version {version}"
            )));
        }
        let (n, dim, classes) = (u32_at(8), u32_at(12), u32_at(16));
        let need = 20 + n * dim * 8 + n * 4;
        if buf.len() != need {
            return Err(Error::shape("Dataset::load", need, buf.len()));
        }
        let mut inputs = Vec::with_capacity(n * dim);
        let mut off = 20;
        for _ in 0..n * dim {
            inputs.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(u32_at(off));
            off += 4;
        }
        Dataset::new(inputs, labels, dim, classes)
    }
}

/// Box-Muller standard normal draw.
pub(crate) fn randn(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_labeled() {
        let a = Dataset::blobs(3, 10, 4, 0.2, 9);
        let b = Dataset::blobs(3, 10, 4, 0.2, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn split_partitions_everything() {
        let d = Dataset::blobs(2, 20, 3, 0.1, 1);
        let (tr, va) = d.split(0.75, 5);
        assert_eq!(tr.len() + va.len(), d.len());
        assert_eq!(tr.len(), 30);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.dset");
        let d = Dataset::blobs(2, 5, 3, 0.3, 42);
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
    }

    #[test]
    fn bad_labels_rejected() {
        assert!(Dataset::new(vec![0.0, 1.0], vec![2, 0], 1, 2).is_err());
    }
}
