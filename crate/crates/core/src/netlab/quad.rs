//! Quadratic test model `L(theta) = 0.5 * theta' A theta` with a known
//! symmetric `A`, so its Hessian is `A` by construction. It runs through the
//! same dual-number machinery as the networks, which makes it the reference
//! subject for Hessian-vector-product and trace tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::params::Layout;
use super::scalar::{Dual, Scalar};

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    dim: usize,
    a: Vec<f64>, // row-major, symmetric
    layout: Layout,
}

impl QuadraticModel {
    pub fn new(a: Vec<f64>, dim: usize) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::shape("QuadraticModel::new", dim * dim, a.len()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let layout = Layout::from_lens(&[("all".into(), dim)])?;
        Ok(QuadraticModel { dim, a, layout })
    }

    /// Block-diagonal construction from named square blocks; the layout gets
    /// one segment per block, mimicking a layered model.
    pub fn block_diagonal(blocks: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut dims = Vec::new();
        for (name, b) in blocks {
            let d = (b.len() as f64).sqrt() as usize;
            if d * d != b.len() {
                return Err(Error::InvalidInput(format!("block `{name}` is not square")));
            }
            dims.push((name.clone(), d));
        }
        let dim: usize = dims.iter().map(|(_, d)| d).sum();
        let mut a = vec![0.0; dim * dim];
        let mut off = 0;
        for ((_, b), (_, d)) in blocks.iter().zip(&dims) {
            for i in 0..*d {
                for j in 0..*d {
                    a[(off + i) * dim + (off + j)] = b[i * d + j];
                }
            }
            off += d;
        }
        let layout = Layout::from_lens(&dims)?;
        let model = QuadraticModel { dim, a, layout };
        // symmetry of each block is implied by the whole-matrix check
        QuadraticModel::new(model.a.clone(), dim).map(|mut m| {
            m.layout = model.layout;
            m
        })
    }

    /// Random symmetric matrix with entries in [-1, 1].
    pub fn random_symmetric(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i * dim + j] = v;
                a[j * dim + i] = v;
            }
        }
        let layout = Layout::from_lens(&[("all".into(), dim)]).unwrap();
        QuadraticModel { dim, a, layout }
    }

    /// Random symmetric matrix whose trace dominates the off-diagonal mass
    /// (diagonal in [0.5, 1.5], off-diagonal in [-0.5, 0.5]); the standard
    /// subject for trace-estimator accuracy tests, where a near-zero trace
    /// would make relative error meaningless.
    pub fn diag_dominant(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                if i == j {
                    a[i * dim + i] = rng.random_range(0.5..1.5);
                } else {
                    let v: f64 = rng.random_range(-0.5..0.5);
                    a[i * dim + j] = v;
                    a[j * dim + i] = v;
                }
            }
        }
        let layout = Layout::from_lens(&[("all".into(), dim)]).unwrap();
        QuadraticModel { dim, a, layout }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let g = self.grad_generic::<f64>(theta);
        0.5 * theta.iter().zip(&g).map(|(t, g)| t * g).sum::<f64>()
    }

    /// Gradient `A theta`, generic so the dual route can differentiate it.
    pub fn grad_generic<S: Scalar>(&self, theta: &[S]) -> Vec<S> {
        assert_eq!(theta.len(), self.dim);
        let mut g = vec![S::zero(); self.dim];
        for i in 0..self.dim {
            let mut acc = S::zero();
            for j in 0..self.dim {
                acc += S::from_f64(self.a[i * self.dim + j]) * theta[j];
            }
            g[i] = acc;
        }
        g
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.grad_generic::<f64>(theta)
    }

    /// Hessian-vector product via the dual-number route (not a hand-coded
    /// `A v` matvec): parameters are lifted with tangent `v` and the dual
    /// part of the gradient is returned.
    pub fn hvp(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        let lifted: Vec<Dual> = theta
            .iter()
            .zip(v)
            .map(|(&t, &tv)| Dual::new(t, tv))
            .collect();
        self.grad_generic::<Dual>(&lifted)
            .into_iter()
            .map(|d| d.du)
            .collect()
    }

    pub fn exact_trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i * self.dim + i]).sum()
    }

    pub fn exact_block_trace(&self, block: &str) -> Result<f64> {
        let s = self.layout.segment(block)?;
        Ok((s.offset..s.offset + s.len)
            .map(|i| self.a[i * self.dim + i])
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hvp_equals_matvec() {
        let m = QuadraticModel::random_symmetric(12, 7);
        let theta: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let v: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let hv = m.hvp(&theta, &v);
        for i in 0..12 {
            let direct: f64 = (0..12).map(|j| m.matrix()[i * 12 + j] * v[j]).sum();
            assert!((hv[i] - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn gradient_is_a_theta_and_loss_is_quadratic_form() {
        let m = QuadraticModel::new(vec![2.0, 1.0, 1.0, 3.0], 2).unwrap();
        let theta = [1.0, -1.0];
        assert_eq!(m.grad(&theta), vec![1.0, -2.0]);
        assert!((m.loss(&theta) - 0.5 * (1.0 * 1.0 + (-1.0) * (-2.0))).abs() < 1e-14);
    }

    #[test]
    fn block_diagonal_layout_and_traces() {
        let m = QuadraticModel::block_diagonal(&[
            ("a".into(), vec![1.0, 0.0, 0.0, 2.0]),
            ("b".into(), vec![5.0]),
        ])
        .unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.exact_trace(), 8.0);
        assert_eq!(m.exact_block_trace("a").unwrap(), 3.0);
        assert_eq!(m.exact_block_trace("b").unwrap(), 5.0);
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(QuadraticModel::new(vec![1.0, 2.0, 0.0, 1.0], 2).is_err());
    }
}
