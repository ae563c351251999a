//! Knowledge distillation: temperature-softened teacher targets blended
//! with hard-label cross-entropy.
//!
//! `loss = alpha * CE(student, labels)
//!        + (1 - alpha) * T^2 * KL(softmax(teacher/T) || softmax(student/T))`
//!
//! The `T^2` factor keeps the soft-term gradients on a constant scale as the
//! temperature grows. With `alpha = 1` the loss collapses to plain
//! cross-entropy, bit for bit, so a distillation run with a disabled teacher
//! reproduces an ordinary training trajectory exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlab::{
    self, autodiff::log_sum_exp, autodiff::softmax, Dataset, EpochStat, LossHead, Network,
    ParamVector, Scalar, TrainSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 4.0,
            alpha: 0.9,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss head for distillation; teacher logits are constants of the batch.
pub struct KdHead {
    pub labels: Vec<usize>,
    pub teacher_logits: Vec<f64>,
    pub cfg: DistillConfig,
}

impl KdHead {
    /// Tempered teacher distribution of one sample, plain f64.
    fn teacher_soft(&self, sample: usize, classes: usize) -> Vec<f64> {
        let t = self.cfg.temperature;
        let z = &self.teacher_logits[sample * classes..(sample + 1) * classes];
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        softmax(&scaled)
    }
}

impl LossHead for KdHead {
    fn loss<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> S {
        let inv_n = S::from_f64(1.0 / n as f64);
        let mut ce_total = S::zero();
        for s in 0..n {
            let z = &logits[s * classes..(s + 1) * classes];
            ce_total += log_sum_exp(z) - z[self.labels[s]];
        }
        let ce = ce_total * inv_n;
        if self.cfg.alpha == 1.0 {
            return ce;
        }
        let t = self.cfg.temperature;
        let inv_t = S::from_f64(1.0 / t);
        let mut kl_total = S::zero();
        for s in 0..n {
            let z = &logits[s * classes..(s + 1) * classes];
            let scaled: Vec<S> = z.iter().map(|&v| v * inv_t).collect();
            let lse = log_sum_exp(&scaled);
            let p = self.teacher_soft(s, classes);
            // KL(p || q) = sum p (ln p - ln q); ln q_j = z_j/T - lse
            for j in 0..classes {
                if p[j] > 0.0 {
                    let ln_q = scaled[j] - lse;
                    kl_total += S::from_f64(p[j]) * (S::from_f64(p[j].ln()) - ln_q);
                }
            }
        }
        let soft = kl_total * inv_n * S::from_f64(t * t);
        ce * S::from_f64(self.cfg.alpha) + soft * S::from_f64(1.0 - self.cfg.alpha)
    }

    fn grad_logits<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> Vec<S> {
        let inv_n = S::from_f64(1.0 / n as f64);
        let alpha = self.cfg.alpha;
        let t = self.cfg.temperature;
        let mut d = vec![S::zero(); logits.len()];
        for s in 0..n {
            let z = &logits[s * classes..(s + 1) * classes];
            let p_hard = softmax(z);
            for j in 0..classes {
                let y = if j == self.labels[s] { 1.0 } else { 0.0 };
                d[s * classes + j] = (p_hard[j] - S::from_f64(y)) * inv_n;
            }
            if alpha == 1.0 {
                continue;
            }
            let inv_t = S::from_f64(1.0 / t);
            let scaled: Vec<S> = z.iter().map(|&v| v * inv_t).collect();
            let q = softmax(&scaled);
            let p = self.teacher_soft(s, classes);
            let coef = S::from_f64((1.0 - alpha) * t / n as f64);
            for j in 0..classes {
                d[s * classes + j] = d[s * classes + j] * S::from_f64(alpha)
                    + (q[j] - S::from_f64(p[j])) * coef;
            }
        }
        if alpha == 1.0 {
            return d;
        }
        d
    }
}

/// Batch-mean distillation loss of fixed logit arrays.
pub fn kd_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    labels: &[usize],
    classes: usize,
    cfg: &DistillConfig,
) -> Result<f64> {
    cfg.validate()?;
    let n = labels.len();
    if student_logits.len() != n * classes || teacher_logits.len() != n * classes {
        return Err(Error::shape(
            "kd_loss logits",
            n * classes,
            format!(
                "student {}, teacher {}",
                student_logits.len(),
                teacher_logits.len()
            ),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range [0, {classes})"
        )));
    }
    let head = KdHead {
        labels: labels.to_vec(),
        teacher_logits: teacher_logits.to_vec(),
        cfg: *cfg,
    };
    let loss = head.loss::<f64>(student_logits, n, classes);
    if !loss.is_finite() {
        return Err(Error::InvalidInput("non-finite distillation loss".into()));
    }
    Ok(loss)
}

/// Train the student against a frozen teacher with the distillation loss.
/// The teacher is only ever read (per-batch forward passes); the shared
/// training loop means an `alpha = 1` run reproduces plain training exactly
/// under the same seed.
#[allow(clippy::too_many_arguments)]
pub fn distill_train(
    student: &Network,
    init: ParamVector,
    teacher: &Network,
    teacher_params: &ParamVector,
    train_data: &Dataset,
    val_data: &Dataset,
    schedule: &TrainSchedule,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(ParamVector, Vec<EpochStat>)> {
    cfg.validate()?;
    if teacher.input_dim() != student.input_dim()
        || teacher.num_classes() != student.num_classes()
    {
        return Err(Error::shape(
            "distill teacher model",
            format!(
                "input {} classes {}",
                student.input_dim(),
                student.num_classes()
            ),
            format!(
                "input {} classes {}",
                teacher.input_dim(),
                teacher.num_classes()
            ),
        ));
    }
    // fail fast if the teacher cannot run on this data
    let probe = train_data.batch(&[0]);
    netlab::forward(teacher, teacher_params, &probe)?;

    netlab::train_with_head(student, init, train_data, val_data, schedule, seed, |b| {
        let (teacher_logits, _) =
            netlab::forward(teacher, teacher_params, b).expect("teacher forward checked above");
        KdHead {
            labels: b.labels.clone(),
            teacher_logits,
            cfg: *cfg,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlab::{evaluate, train, Act};

    fn logits(seed: u64, n: usize, k: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n * k)
            .map(|_| {
                s = crate::seeds::splitmix64(s);
                (s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
            })
            .collect()
    }

    /// Plain-scalar reimplementation of the formula, the recomputation
    /// oracle: alpha*CE + (1-alpha)*T^2*KL(teacher || student), batch mean.
    fn oracle_kd(student: &[f64], teacher: &[f64], labels: &[usize], k: usize, t: f64, a: f64) -> f64 {
        let n = labels.len();
        let softmax_f = |z: &[f64]| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect::<Vec<f64>>()
        };
        let mut total = 0.0;
        for s in 0..n {
            let zs = &student[s * k..(s + 1) * k];
            let zt = &teacher[s * k..(s + 1) * k];
            let ps = softmax_f(zs);
            total += a * -(ps[labels[s]].ln());
            let pt_t = softmax_f(&zt.iter().map(|v| v / t).collect::<Vec<_>>());
            let qs_t = softmax_f(&zs.iter().map(|v| v / t).collect::<Vec<_>>());
            let kl: f64 = pt_t
                .iter()
                .zip(&qs_t)
                .map(|(p, q)| if *p > 0.0 { p * (p.ln() - q.ln()) } else { 0.0 })
                .sum();
            total += (1.0 - a) * t * t * kl;
        }
        total / n as f64
    }

    #[test]
    fn equal_logits_reduce_to_hard_loss() {
        let z = logits(1, 6, 4);
        let labels = vec![0, 1, 2, 3, 0, 1];
        let cfg = DistillConfig {
            temperature: 3.0,
            alpha: 0.7,
        };
        let loss = kd_loss(&z, &z, &labels, 4, &cfg).unwrap();
        let ce = kd_loss(
            &z,
            &z,
            &labels,
            4,
            &DistillConfig {
                temperature: 3.0,
                alpha: 1.0,
            },
        )
        .unwrap();
        assert!((loss - 0.7 * ce).abs() < 1e-12, "{loss} vs {}", 0.7 * ce);
    }

    #[test]
    fn alpha_one_ignores_the_teacher() {
        let z = logits(2, 5, 3);
        let labels = vec![0, 1, 2, 0, 1];
        let cfg = DistillConfig {
            temperature: 2.0,
            alpha: 1.0,
        };
        let a = kd_loss(&z, &logits(3, 5, 3), &labels, 3, &cfg).unwrap();
        let b = kd_loss(&z, &logits(4, 5, 3), &labels, 3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_independent_recomputation() {
        let zs = logits(5, 8, 5);
        let zt = logits(6, 8, 5);
        let labels = vec![0, 1, 2, 3, 4, 0, 1, 2];
        let cfg = DistillConfig {
            temperature: 2.0,
            alpha: 0.5,
        };
        let got = kd_loss(&zs, &zt, &labels, 5, &cfg).unwrap();
        let want = oracle_kd(&zs, &zt, &labels, 5, 2.0, 0.5);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn kl_term_nonnegative_and_zero_iff_equal() {
        let labels = vec![0, 1];
        for seed in 0..20 {
            let zs = logits(seed, 2, 3);
            let zt = logits(seed + 100, 2, 3);
            let soft_only = DistillConfig {
                temperature: 2.5,
                alpha: 0.0,
            };
            let kl = kd_loss(&zs, &zt, &labels, 3, &soft_only).unwrap();
            assert!(kl >= 0.0, "seed {seed}: {kl}");
        }
        // equal tempered softmaxes: KL vanishes
        let z = logits(7, 2, 3);
        let soft_only = DistillConfig {
            temperature: 2.5,
            alpha: 0.0,
        };
        let kl = kd_loss(&z, &z, &labels, 3, &soft_only).unwrap();
        assert!(kl.abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let zs = logits(8, 4, 3);
        let zt = logits(9, 4, 3);
        let labels = vec![0, 1, 2, 0];
        let cfg = DistillConfig {
            temperature: 2.0,
            alpha: 0.5,
        };
        let head = KdHead {
            labels: labels.clone(),
            teacher_logits: zt.clone(),
            cfg,
        };
        let g = head.grad_logits::<f64>(&zs, 4, 3);
        let eps = 1e-4;
        for j in 0..zs.len() {
            let mut plus = zs.clone();
            plus[j] += eps;
            let mut minus = zs.clone();
            minus[j] -= eps;
            let fd = (head.loss::<f64>(&plus, 4, 3) - head.loss::<f64>(&minus, 4, 3)) / (2.0 * eps);
            let rel = (g[j] - fd).abs() / (1e-8 + g[j].abs().max(fd.abs()));
            assert!(rel < 1e-4, "coord {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn temperature_squared_keeps_soft_gradients_on_scale() {
        let zs = logits(10, 4, 4);
        let zt = logits(11, 4, 4);
        let labels = vec![0, 1, 2, 3];
        let mut norms = Vec::new();
        for t in [1.0, 2.0, 5.0] {
            let head = KdHead {
                labels: labels.clone(),
                teacher_logits: zt.clone(),
                cfg: DistillConfig {
                    temperature: t,
                    alpha: 0.0,
                },
            };
            let g = head.grad_logits::<f64>(&zs, 4, 4);
            norms.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        for i in 0..norms.len() {
            for j in 0..norms.len() {
                assert!(
                    norms[i] <= 3.0 * norms[j],
                    "soft gradient norms off scale: {norms:?}"
                );
            }
        }
    }

    #[test]
    fn self_teacher_alpha_one_reproduces_plain_training() {
        let data = Dataset::blobs(3, 10, 5, 0.4, 21);
        let (tr, va) = data.split(0.7, 4);
        let net = Network::mlp(5, &[6], 3, Act::Tanh).unwrap();
        let init = net.init_params(1);
        let schedule = TrainSchedule {
            learning_rate: 0.3,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 6,
            early_stop_patience: None,
        };
        let (p1, h1) = train(&net, init.clone(), &tr, &va, &schedule, 77).unwrap();
        let cfg = DistillConfig {
            temperature: 4.0,
            alpha: 1.0,
        };
        let (p2, h2) =
            distill_train(&net, init.clone(), &net, &init, &tr, &va, &schedule, &cfg, 77).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn zero_epochs_leave_student_unchanged() {
        let data = Dataset::blobs(2, 8, 4, 0.4, 2);
        let (tr, va) = data.split(0.5, 1);
        let net = Network::mlp(4, &[], 2, Act::Tanh).unwrap();
        let init = net.init_params(5);
        let schedule = TrainSchedule {
            learning_rate: 0.1,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 0,
            early_stop_patience: None,
        };
        let teacher_params = net.init_params(6);
        let (out, history) = distill_train(
            &net,
            init.clone(),
            &net,
            &teacher_params,
            &tr,
            &va,
            &schedule,
            &DistillConfig::default(),
            3,
        )
        .unwrap();
        assert_eq!(out, init);
        assert!(history.is_empty());
    }

    #[test]
    fn teacher_parameters_never_change() {
        let data = Dataset::blobs(2, 12, 4, 0.4, 9);
        let (tr, va) = data.split(0.7, 2);
        let student = Network::mlp(4, &[5], 2, Act::Tanh).unwrap();
        let teacher = Network::mlp(4, &[8], 2, Act::Tanh).unwrap();
        let teacher_params = teacher.init_params(11);
        let before = teacher_params.clone();
        let schedule = TrainSchedule {
            learning_rate: 0.2,
            weight_decay: 0.0,
            batch_size: 6,
            epochs: 4,
            early_stop_patience: None,
        };
        let (student_out, _) = distill_train(
            &student,
            student.init_params(0),
            &teacher,
            &teacher_params,
            &tr,
            &va,
            &schedule,
            &DistillConfig::default(),
            5,
        )
        .unwrap();
        assert_eq!(teacher_params, before);
        // smoke: the trained student still evaluates
        evaluate(&student, &student_out, &va).unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(DistillConfig {
            temperature: 0.0,
            alpha: 0.5
        }
        .validate()
        .is_err());
        assert!(DistillConfig {
            temperature: 1.0,
            alpha: 1.5
        }
        .validate()
        .is_err());
    }
}
