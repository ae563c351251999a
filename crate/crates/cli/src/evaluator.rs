//! Quantized-model evaluation policy: how a hyperparameter configuration is
//! turned into a trained, quantized toy model and scored.
//!
//! Dimension names carry the semantics:
//!
//! - `channel` (boolean): per-channel vs per-tensor weight quantization
//! - `bn` (boolean): fold batchnorm into the preceding convolution first
//! - `distill` (boolean): fine-tune against the full-precision teacher
//! - `clip` (categorical): `minmax`, `percentile<p>` (e.g. `percentile99`),
//!   or `mse`
//! - `bits*` (bit_choice): `bits` sets every layer, `bits_conv` /
//!   `bits_fc` target convolutions / dense layers
//!
//! Evaluation: fold if asked, fake-quantize the weights, fine-tune from the
//! quantized initialization (with the distillation loss when asked),
//! re-quantize, and report top-1 validation accuracy. Per-config seeds are
//! derived from the configuration identity, so scores do not depend on
//! evaluation order.

use mixbit_core::distill::{distill_train, DistillConfig};
use mixbit_core::modelquant::{fold_network, quantize_params};
use mixbit_core::netlab::{self, Dataset, Layer, Network, ParamVector, TrainSchedule};
use mixbit_core::proxy::{DimValue, Dimension, Evaluator, HparamConfig, HparamSpace};
use mixbit_core::quantizer::{ClipMethod, Granularity, Scheme};
use mixbit_core::seeds;
use mixbit_core::{Error, Result};

/// Per-layer-kind quantization settings decoded from one configuration.
#[derive(Debug, Clone)]
pub struct DecodedConfig {
    pub granularity: Granularity,
    pub fold_bn: bool,
    pub distill: bool,
    pub clip: ClipMethod,
    pub bits_all: Option<u8>,
    pub bits_conv: Option<u8>,
    pub bits_fc: Option<u8>,
}

impl DecodedConfig {
    pub fn from_config(space: &HparamSpace, config: &HparamConfig) -> Result<Self> {
        let mut out = DecodedConfig {
            granularity: Granularity::PerChannel,
            fold_bn: false,
            distill: false,
            clip: ClipMethod::Minmax,
            bits_all: None,
            bits_conv: None,
            bits_fc: None,
        };
        for (d, v) in space.dimensions.iter().zip(&config.values) {
            match (d.name(), v) {
                ("channel", DimValue::Bool(b)) => {
                    out.granularity = if *b {
                        Granularity::PerChannel
                    } else {
                        Granularity::PerTensor
                    };
                }
                ("bn", DimValue::Bool(b)) => out.fold_bn = *b,
                ("distill", DimValue::Bool(b)) => out.distill = *b,
                ("clip", DimValue::Cat(s)) => out.clip = s.parse()?,
                ("bits", DimValue::Bits(b)) => out.bits_all = Some(*b),
                ("bits_conv", DimValue::Bits(b)) => out.bits_conv = Some(*b),
                ("bits_fc", DimValue::Bits(b)) => out.bits_fc = Some(*b),
                (name, _) => {
                    return Err(Error::InvalidConfig(format!(
                        "dimension `{name}` has no evaluation semantics \
                         (known: channel, bn, distill, clip, bits, bits_conv, bits_fc)"
                    )))
                }
            }
        }
        if out.bits_all.is_none() && out.bits_conv.is_none() && out.bits_fc.is_none() {
            out.bits_all = Some(8);
        }
        Ok(out)
    }

    pub fn bits_for(&self, layer: &Layer) -> u8 {
        let specific = match layer {
            Layer::Conv { .. } => self.bits_conv,
            Layer::Dense { .. } => self.bits_fc,
            _ => None,
        };
        specific.or(self.bits_all).unwrap_or(8)
    }
}

/// Trains and scores quantized variants of one base model.
pub struct TrainingEvaluator {
    pub net: Network,
    pub base_params: ParamVector,
    pub train: Dataset,
    pub val: Dataset,
    pub space: HparamSpace,
    pub short_epochs: usize,
    pub full_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    last_cost: f64,
}

impl TrainingEvaluator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: Network,
        base_params: ParamVector,
        train: Dataset,
        val: Dataset,
        space: HparamSpace,
        short_epochs: usize,
        full_epochs: usize,
        seed: u64,
    ) -> Result<Self> {
        // validate dimension semantics up front
        for d in &space.dimensions {
            match d {
                Dimension::Boolean { name }
                    if ["channel", "bn", "distill"].contains(&name.as_str()) => {}
                Dimension::Categorical { name, values } if name == "clip" => {
                    for v in values {
                        let _: ClipMethod = v.parse()?;
                    }
                }
                Dimension::BitChoice { name, .. }
                    if ["bits", "bits_conv", "bits_fc"].contains(&name.as_str()) => {}
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "dimension `{}` has no evaluation semantics",
                        other.name()
                    )))
                }
            }
        }
        Ok(TrainingEvaluator {
            net,
            base_params,
            train,
            val,
            space,
            short_epochs,
            full_epochs,
            learning_rate: 0.1,
            batch_size: 32,
            seed,
            last_cost: 0.0,
        })
    }

    fn run(&mut self, config: &HparamConfig, epochs: usize) -> Result<f64> {
        let decoded = DecodedConfig::from_config(&self.space, config)?;
        let (net, base) = if decoded.fold_bn {
            fold_network(&self.net, &self.base_params)?
        } else {
            (self.net.clone(), self.base_params.clone())
        };
        let quantize = |p: &ParamVector| {
            quantize_params(
                &net,
                p,
                |l| decoded.bits_for(l),
                decoded.granularity,
                Scheme::Symmetric,
                decoded.clip,
            )
        };
        let qinit = quantize(&base)?;
        let trained = if epochs == 0 {
            qinit
        } else {
            let schedule = TrainSchedule {
                learning_rate: self.learning_rate,
                weight_decay: 1e-4,
                batch_size: self.batch_size,
                epochs,
                early_stop_patience: None,
            };
            // per-config seed: evaluation order cannot change scores
            let seed = seeds::derive(self.seed, seeds::tags::TRAIN, fnv1a(&config.key()));
            let (p, _) = if decoded.distill {
                distill_train(
                    &net,
                    qinit,
                    &net,
                    &base,
                    &self.train,
                    &self.val,
                    &schedule,
                    &DistillConfig::default(),
                    seed,
                )?
            } else {
                netlab::train(&net, qinit, &self.train, &self.val, &schedule, seed)?
            };
            p
        };
        // the deliverable is a quantized model: snap back to the grid
        let final_params = quantize(&trained)?;
        self.last_cost = (epochs * self.train.len()) as f64 / 1e6;
        netlab::evaluate(&net, &final_params, &self.val)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Evaluator for TrainingEvaluator {
    fn short_eval(&mut self, config: &HparamConfig) -> Result<f64> {
        let epochs = self.short_epochs;
        self.run(config, epochs)
    }

    fn full_eval(&mut self, config: &HparamConfig) -> Result<f64> {
        let epochs = self.full_epochs;
        self.run(config, epochs)
    }

    /// Deterministic virtual cost (samples processed / 1e6); wall time goes
    /// to run metadata so that artifacts stay byte-identical across reruns.
    fn cost_seconds(&self) -> f64 {
        self.last_cost
    }
}
