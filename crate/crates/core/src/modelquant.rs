//! Applying quantization decisions to runnable networks: batchnorm folding
//! at the model level, fake-quantizing parameter vectors, and executing bit
//! plans.

use crate::error::{Error, Result};
use crate::netlab::{Layer, Network, ParamVector};
use crate::planner::BitPlan;
use crate::quantizer::{self, BnFoldInput, ClipMethod, Granularity, QuantSpec, Scheme};

/// Fold every adjacent (conv, batchnorm) pair. The conv keeps the folded
/// weights; the batchnorm degenerates into a per-channel bias carrier
/// (gamma 1, beta b', stats neutralized), so the layer list and parameter
/// layout are unchanged and the folded model evaluates to the same outputs
/// as conv followed by batchnorm.
pub fn fold_network(net: &Network, params: &ParamVector) -> Result<(Network, ParamVector)> {
    let mut folded = net.clone();
    let mut new_params = params.clone();
    let layers: Vec<Layer> = net.layers().to_vec();
    for pair in layers.windows(2) {
        let (conv_name, out_ch) = match &pair[0] {
            Layer::Conv { name, out_ch, .. } => (name.clone(), *out_ch),
            _ => continue,
        };
        let (bn_name, dim, mean, var, eps) = match &pair[1] {
            Layer::BatchNorm {
                name,
                dim,
                mean,
                var,
                eps,
                ..
            } => (name.clone(), *dim, mean.clone(), var.clone(), *eps),
            _ => continue,
        };
        if dim != out_ch {
            continue;
        }
        let bn_params = params.segment(&bn_name)?;
        let (gamma, beta) = bn_params.split_at(dim);
        let (w, b) = quantizer::fold_bn(&BnFoldInput {
            weights: params.segment(&conv_name)?.to_vec(),
            bias: vec![0.0; out_ch],
            out_channels: out_ch,
            mean,
            var,
            gamma: gamma.to_vec(),
            beta: beta.to_vec(),
            eps,
        })?;
        new_params.segment_mut(&conv_name)?.copy_from_slice(&w);
        let seg = new_params.segment_mut(&bn_name)?;
        for (j, s) in seg.iter_mut().enumerate() {
            *s = if j < dim { 1.0 } else { b[j - dim] };
        }
        folded.set_batchnorm_stats(&bn_name, vec![0.0; dim], vec![1.0; dim], 0.0)?;
    }
    Ok((folded, new_params))
}

/// Fake-quantize every quantizable layer of `params`, choosing the width per
/// layer via `bits_for`.
pub fn quantize_params(
    net: &Network,
    params: &ParamVector,
    bits_for: impl Fn(&Layer) -> u8,
    granularity: Granularity,
    scheme: Scheme,
    clip: ClipMethod,
) -> Result<ParamVector> {
    let mut out = params.clone();
    for layer in net.layers() {
        if !layer.quantizable() {
            continue;
        }
        let spec = QuantSpec::new(bits_for(layer), granularity, scheme, clip);
        let channels = net.weight_channels(layer.name())?;
        let w = params.segment(layer.name())?;
        let fq = quantizer::fake_quant(w, channels, &spec)?;
        out.segment_mut(layer.name())?.copy_from_slice(&fq);
    }
    Ok(out)
}

/// Execute a bit plan: fake-quantize each named layer at its planned width.
/// The plan must cover every quantizable layer of the network.
pub fn apply_plan(
    net: &Network,
    params: &ParamVector,
    plan: &BitPlan,
    granularity: Granularity,
    scheme: Scheme,
    clip: ClipMethod,
) -> Result<ParamVector> {
    let mut bits = std::collections::HashMap::new();
    for (layer, b) in &plan.assignment {
        bits.insert(layer.as_str(), *b);
    }
    for name in net.quantizable_layers() {
        if !bits.contains_key(name) {
            return Err(Error::InvalidInput(format!(
                "plan has no bit-width for layer `{name}`"
            )));
        }
    }
    quantize_params(
        net,
        params,
        |l| bits[l.name()],
        granularity,
        scheme,
        clip,
    )
}
