//! Loss, gradient, and exact Hessian-vector products.
//!
//! The forward and backward passes are written once, generic over
//! [`Scalar`]. At `S = f64` they produce the loss and gradient. At
//! [`S = Dual`](super::scalar::Dual) with the tangent seeded to a direction
//! `v`, the dual part of the gradient is the exact directional derivative of
//! the gradient map, i.e. `H·v` (forward-over-reverse). Finite differences
//! appear only in test oracles.

use crate::error::{Error, Result};

use super::data::Batch;
use super::model::{conv2d, Act, Layer, Network};
use super::params::ParamVector;
use super::scalar::{Dual, Scalar};

/// Loss heads map logits `[n x classes]` to a scalar loss and expose the
/// analytic gradient with respect to the logits. Both are generic over the
/// scalar type so that second-order information flows through them.
pub trait LossHead {
    fn loss<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> S;
    fn grad_logits<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> Vec<S>;
}

/// Mean cross-entropy over softmax.
pub struct CrossEntropyHead {
    pub labels: Vec<usize>,
}

impl LossHead for CrossEntropyHead {
    fn loss<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> S {
        let inv_n = S::from_f64(1.0 / n as f64);
        let mut total = S::zero();
        for s in 0..n {
            let z = &logits[s * classes..(s + 1) * classes];
            total += log_sum_exp(z) - z[self.labels[s]];
        }
        total * inv_n
    }

    fn grad_logits<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> Vec<S> {
        let inv_n = S::from_f64(1.0 / n as f64);
        let mut d = vec![S::zero(); logits.len()];
        for s in 0..n {
            let z = &logits[s * classes..(s + 1) * classes];
            let p = softmax(z);
            for j in 0..classes {
                let y = if j == self.labels[s] { 1.0 } else { 0.0 };
                d[s * classes + j] = (p[j] - S::from_f64(y)) * inv_n;
            }
        }
        d
    }
}

/// Mean (over samples) sum-of-squares regression head.
pub struct SquaredErrorHead {
    /// `[n x classes]` row-major targets.
    pub targets: Vec<f64>,
}

impl LossHead for SquaredErrorHead {
    fn loss<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> S {
        let inv_n = S::from_f64(1.0 / n as f64);
        let mut total = S::zero();
        for (i, &t) in self.targets.iter().enumerate().take(n * classes) {
            let e = logits[i] - S::from_f64(t);
            total += e * e;
        }
        total * inv_n
    }

    fn grad_logits<S: Scalar>(&self, logits: &[S], n: usize, classes: usize) -> Vec<S> {
        let coef = S::from_f64(2.0 / n as f64);
        (0..n * classes)
            .map(|i| (logits[i] - S::from_f64(self.targets[i])) * coef)
            .collect()
    }
}

/// Numerically stable logsumexp; the shift follows the primal values.
pub fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let mut mi = 0;
    for (j, v) in z.iter().enumerate() {
        if v.primal() > z[mi].primal() {
            mi = j;
        }
    }
    let m = z[mi];
    let mut sum = S::zero();
    for &v in z {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

pub fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

struct Offsets {
    by_layer: Vec<usize>,
}

fn offsets(net: &Network) -> Offsets {
    let mut by_layer = Vec::with_capacity(net.layers().len());
    for l in net.layers() {
        if l.param_len() == 0 {
            by_layer.push(usize::MAX);
        } else {
            by_layer.push(net.layout().segment(l.name()).unwrap().offset);
        }
    }
    Offsets { by_layer }
}

/// Forward pass; returns the activation chain (`acts[0]` is the lifted input,
/// `acts.last()` the logits).
fn run_forward<S: Scalar>(net: &Network, params: &[S], inputs: &[f64], n: usize) -> Vec<Vec<S>> {
    let off = offsets(net);
    let mut acts: Vec<Vec<S>> = Vec::with_capacity(net.layers().len() + 1);
    acts.push(inputs.iter().map(|&x| S::from_f64(x)).collect());
    for (li, layer) in net.layers().iter().enumerate() {
        let x = acts.last().unwrap();
        let per = x.len() / n;
        let y = match layer {
            Layer::Dense {
                in_dim, out_dim, ..
            } => {
                let w = &params[off.by_layer[li]..off.by_layer[li] + in_dim * out_dim];
                let mut y = vec![S::zero(); n * out_dim];
                for s in 0..n {
                    for o in 0..*out_dim {
                        let mut acc = S::zero();
                        let wrow = &w[o * in_dim..(o + 1) * in_dim];
                        let xrow = &x[s * in_dim..(s + 1) * in_dim];
                        for i in 0..*in_dim {
                            acc += wrow[i] * xrow[i];
                        }
                        y[s * out_dim + o] = acc;
                    }
                }
                y
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
                ..
            } => {
                let w = &params[off.by_layer[li]..off.by_layer[li] + layer.param_len()];
                let out_len = out_ch * (in_h - kernel + 1) * (in_w - kernel + 1);
                let mut y = vec![S::zero(); n * out_len];
                for s in 0..n {
                    let sample = &x[s * per..(s + 1) * per];
                    let o = conv2d(sample, *in_ch, *in_h, *in_w, w, *out_ch, *kernel);
                    y[s * out_len..(s + 1) * out_len].copy_from_slice(&o);
                }
                y
            }
            Layer::BatchNorm {
                dim,
                spatial,
                mean,
                var,
                eps,
                ..
            } => {
                let p = &params[off.by_layer[li]..off.by_layer[li] + 2 * dim];
                let mut y = vec![S::zero(); x.len()];
                for s in 0..n {
                    for c in 0..*dim {
                        let inv = S::from_f64(1.0 / (var[c] + eps).sqrt());
                        let mu = S::from_f64(mean[c]);
                        let (gamma, beta) = (p[c], p[dim + c]);
                        for t in 0..*spatial {
                            let i = s * per + c * spatial + t;
                            y[i] = gamma * (x[i] - mu) * inv + beta;
                        }
                    }
                }
                y
            }
            Layer::Activation { act, .. } => match act {
                Act::Tanh => x.iter().map(|v| v.tanh()).collect(),
                Act::Relu => x
                    .iter()
                    .map(|&v| if v.primal() > 0.0 { v } else { S::zero() })
                    .collect(),
            },
        };
        acts.push(y);
    }
    acts
}

/// Backward pass from `d_logits`; returns the parameter gradient.
fn run_backward<S: Scalar>(
    net: &Network,
    params: &[S],
    acts: &[Vec<S>],
    d_logits: Vec<S>,
    n: usize,
) -> Vec<S> {
    let off = offsets(net);
    let mut grad = vec![S::zero(); params.len()];
    let mut d = d_logits;
    for (li, layer) in net.layers().iter().enumerate().rev() {
        let x = &acts[li];
        let y = &acts[li + 1];
        let per_in = x.len() / n;
        let per_out = y.len() / n;
        d = match layer {
            Layer::Dense {
                in_dim, out_dim, ..
            } => {
                let w = &params[off.by_layer[li]..off.by_layer[li] + in_dim * out_dim];
                let gw = &mut grad[off.by_layer[li]..off.by_layer[li] + in_dim * out_dim];
                let mut dx = vec![S::zero(); n * in_dim];
                for s in 0..n {
                    for o in 0..*out_dim {
                        let g = d[s * out_dim + o];
                        let xrow = &x[s * in_dim..(s + 1) * in_dim];
                        let wrow = &w[o * in_dim..(o + 1) * in_dim];
                        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                        let dxrow = &mut dx[s * in_dim..(s + 1) * in_dim];
                        for i in 0..*in_dim {
                            grow[i] += g * xrow[i];
                            dxrow[i] += g * wrow[i];
                        }
                    }
                }
                dx
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
                ..
            } => {
                let k = *kernel;
                let (oh, ow) = (in_h - k + 1, in_w - k + 1);
                let w = &params[off.by_layer[li]..off.by_layer[li] + layer.param_len()];
                let mut dx = vec![S::zero(); n * per_in];
                for s in 0..n {
                    let xs = &x[s * per_in..(s + 1) * per_in];
                    let ds = &d[s * per_out..(s + 1) * per_out];
                    let dxs = &mut dx[s * per_in..(s + 1) * per_in];
                    for oc in 0..*out_ch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = ds[(oc * oh + oy) * ow + ox];
                                for ic in 0..*in_ch {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let wi = ((oc * in_ch + ic) * k + ky) * k + kx;
                                            let xi = (ic * in_h + oy + ky) * in_w + ox + kx;
                                            grad[off.by_layer[li] + wi] += g * xs[xi];
                                            dxs[xi] += g * w[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
            Layer::BatchNorm {
                dim,
                spatial,
                mean,
                var,
                eps,
                ..
            } => {
                let p = &params[off.by_layer[li]..off.by_layer[li] + 2 * dim];
                let mut dx = vec![S::zero(); x.len()];
                for s in 0..n {
                    for c in 0..*dim {
                        let inv = S::from_f64(1.0 / (var[c] + eps).sqrt());
                        let mu = S::from_f64(mean[c]);
                        let gamma = p[c];
                        for t in 0..*spatial {
                            let i = s * per_in + c * spatial + t;
                            let xhat = (x[i] - mu) * inv;
                            let g = d[i];
                            grad[off.by_layer[li] + c] += g * xhat;
                            grad[off.by_layer[li] + dim + c] += g;
                            dx[i] = g * gamma * inv;
                        }
                    }
                }
                dx
            }
            Layer::Activation { act, .. } => match act {
                Act::Tanh => {
                    let one = S::from_f64(1.0);
                    d.iter()
                        .zip(y.iter())
                        .map(|(&g, &t)| g * (one - t * t))
                        .collect()
                }
                Act::Relu => d
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| if v.primal() > 0.0 { g } else { S::zero() })
                    .collect(),
            },
        };
    }
    grad
}

fn check_batch(net: &Network, batch: &Batch) -> Result<()> {
    if batch.dim != net.input_dim() {
        return Err(Error::shape("batch input dim", net.input_dim(), batch.dim));
    }
    if batch.classes != net.num_classes() {
        return Err(Error::shape(
            "batch classes",
            net.num_classes(),
            batch.classes,
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn check_params(net: &Network, params: &ParamVector) -> Result<()> {
    if params.layout() != net.layout() {
        return Err(Error::shape(
            "parameter layout",
            format!("{} params", net.param_len()),
            format!("{} params (different layout)", params.len()),
        ));
    }
    Ok(())
}

/// Logits and mean cross-entropy loss.
pub fn forward(net: &Network, params: &ParamVector, batch: &Batch) -> Result<(Vec<f64>, f64)> {
    check_batch(net, batch)?;
    check_params(net, params)?;
    let n = batch.len();
    let acts = run_forward::<f64>(net, params.values(), &batch.inputs, n);
    let logits = acts.last().unwrap().clone();
    let head = CrossEntropyHead {
        labels: batch.labels.clone(),
    };
    let loss = head.loss(&logits, n, net.num_classes());
    Ok((logits, loss))
}

/// Loss and gradient under an arbitrary head; `inputs` is `[n x dim]`.
pub fn loss_and_grad_with_head<H: LossHead>(
    net: &Network,
    params: &ParamVector,
    inputs: &[f64],
    n: usize,
    head: &H,
) -> Result<(f64, ParamVector)> {
    check_params(net, params)?;
    if inputs.len() != n * net.input_dim() {
        return Err(Error::shape(
            "inputs",
            n * net.input_dim(),
            inputs.len(),
        ));
    }
    let acts = run_forward::<f64>(net, params.values(), inputs, n);
    let logits = acts.last().unwrap();
    let loss = head.loss(logits, n, net.num_classes());
    let d = head.grad_logits(logits, n, net.num_classes());
    let g = run_backward::<f64>(net, params.values(), &acts, d, n);
    Ok((loss, ParamVector::new(g, net.layout().clone())?))
}

/// Mean cross-entropy loss and its gradient.
pub fn grad(net: &Network, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    check_batch(net, batch)?;
    let head = CrossEntropyHead {
        labels: batch.labels.clone(),
    };
    loss_and_grad_with_head(net, params, &batch.inputs, batch.len(), &head)
}

/// Exact Hessian-vector product of the cross-entropy loss at `params` along
/// `v`, computed by differentiating the gradient (no finite differences).
pub fn hvp(
    net: &Network,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
) -> Result<ParamVector> {
    check_batch(net, batch)?;
    let head = hvp_head(batch);
    hvp_with_head(net, params, &batch.inputs, batch.len(), v, &head)
}

fn hvp_head(batch: &Batch) -> CrossEntropyHead {
    CrossEntropyHead {
        labels: batch.labels.clone(),
    }
}

/// Hessian-vector product under an arbitrary head.
pub fn hvp_with_head<H: LossHead>(
    net: &Network,
    params: &ParamVector,
    inputs: &[f64],
    n: usize,
    v: &ParamVector,
    head: &H,
) -> Result<ParamVector> {
    check_params(net, params)?;
    check_params(net, v)?;
    let lifted: Vec<Dual> = params
        .values()
        .iter()
        .zip(v.values())
        .map(|(&p, &t)| Dual::new(p, t))
        .collect();
    let acts = run_forward::<Dual>(net, &lifted, inputs, n);
    let logits = acts.last().unwrap();
    let d = head.grad_logits(logits, n, net.num_classes());
    let g = run_backward::<Dual>(net, &lifted, &acts, d, n);
    let hv: Vec<f64> = g.into_iter().map(|d| d.du).collect();
    ParamVector::new(hv, net.layout().clone())
}
