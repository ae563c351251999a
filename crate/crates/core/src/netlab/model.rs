//! Architecture descriptors and runnable toy networks.
//!
//! [`ModelDescriptor`] is the abstract view (per-layer parameter and MAC
//! counts) consumed by the cost model; it can describe architectures far too
//! big to run here (ResNets). [`Network`] is the runnable view: a stack of
//! dense / conv / batchnorm / activation layers over flat `f64` parameters,
//! small enough for exact Hessian-vector products and brute-force oracles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Layout, ParamVector};
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv,
    Batchnorm,
    Activation,
}

/// One row of an architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub param_count: usize,
    pub mac_count: usize,
    pub quantizable: bool,
}

/// Architecture descriptor: the interchange format between the runnable lab
/// and the cost model. Serialized as
/// `{"layers":[{"name":...,"kind":...,"param_count":...,"mac_count":...,"quantizable":...}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub layers: Vec<LayerSpec>,
}

impl ModelDescriptor {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for l in &self.layers {
            if !seen.insert(&l.name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate layer name `{}` in descriptor",
                    l.name
                )));
            }
            if matches!(l.kind, LayerKind::Batchnorm | LayerKind::Activation) && l.quantizable {
                return Err(Error::InvalidConfig(format!(
                    "layer `{}` of kind {:?} cannot be quantizable",
                    l.name, l.kind
                )));
            }
        }
        Ok(())
    }

    pub fn quantizable(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.quantizable)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let d: ModelDescriptor = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Act {
    Tanh,
    Relu,
}

/// Resolved runtime layer. Dims are fixed at construction; convolutions are
/// stride-1 "valid" (no padding) and bias-free, which keeps every quantizable
/// weight tensor channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        name: String,
        in_dim: usize,
        out_dim: usize,
    },
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        in_h: usize,
        in_w: usize,
    },
    BatchNorm {
        name: String,
        dim: usize,
        spatial: usize,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Activation {
        name: String,
        act: Act,
    },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Dense { name, .. }
            | Layer::Conv { name, .. }
            | Layer::BatchNorm { name, .. }
            | Layer::Activation { name, .. } => name,
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            Layer::Dense { in_dim, out_dim, .. } => in_dim * out_dim,
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel,
            Layer::BatchNorm { dim, .. } => 2 * dim, // gamma then beta
            Layer::Activation { .. } => 0,
        }
    }

    pub fn quantizable(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv { .. })
    }

}

/// Serializable network definition; dims other than the input shape are
/// inferred when resolving into a [`Network`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDef {
    pub input: InputShape,
    pub classes: usize,
    pub layers: Vec<LayerDef>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputShape {
    Flat { dim: usize },
    Image { channels: usize, height: usize, width: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDef {
    Dense { name: String, out: usize },
    Conv { name: String, out_channels: usize, kernel: usize },
    Batchnorm { name: String },
    Activation { name: String, act: Act },
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Flat(usize),
    Spatial(usize, usize, usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Flat(d) => d,
            Shape::Spatial(c, h, w) => c * h * w,
        }
    }
}

/// A runnable feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) layers: Vec<Layer>,
    input_dim: usize,
    num_classes: usize,
    layout: Layout,
}

impl Network {
    pub fn from_def(def: &NetworkDef) -> Result<Self> {
        let mut shape = match def.input {
            InputShape::Flat { dim } => Shape::Flat(dim),
            InputShape::Image {
                channels,
                height,
                width,
            } => Shape::Spatial(channels, height, width),
        };
        let input_dim = shape.len();
        if input_dim == 0 || def.classes == 0 {
            return Err(Error::InvalidConfig(
                "network needs a non-empty input and at least one class".into(),
            ));
        }
        let mut layers = Vec::with_capacity(def.layers.len());
        for ld in &def.layers {
            let layer = match ld {
                LayerDef::Dense { name, out } => {
                    if *out == 0 {
                        return Err(Error::InvalidConfig(format!("dense `{name}` has out=0")));
                    }
                    let l = Layer::Dense {
                        name: name.clone(),
                        in_dim: shape.len(),
                        out_dim: *out,
                    };
                    shape = Shape::Flat(*out);
                    l
                }
                LayerDef::Conv {
                    name,
                    out_channels,
                    kernel,
                } => {
                    let (c, h, w) = match shape {
                        Shape::Spatial(c, h, w) => (c, h, w),
                        Shape::Flat(_) => {
                            return Err(Error::InvalidConfig(format!(
                                "conv `{name}` needs a spatial input shape"
                            )))
                        }
                    };
                    if *kernel == 0 || *kernel > h || *kernel > w || *out_channels == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "conv `{name}`: kernel {kernel} does not fit {h}x{w} input"
                        )));
                    }
                    let l = Layer::Conv {
                        name: name.clone(),
                        in_ch: c,
                        out_ch: *out_channels,
                        kernel: *kernel,
                        in_h: h,
                        in_w: w,
                    };
                    shape = Shape::Spatial(*out_channels, h - kernel + 1, w - kernel + 1);
                    l
                }
                LayerDef::Batchnorm { name } => {
                    let (dim, spatial) = match shape {
                        Shape::Spatial(c, h, w) => (c, h * w),
                        Shape::Flat(d) => (d, 1),
                    };
                    Layer::BatchNorm {
                        name: name.clone(),
                        dim,
                        spatial,
                        mean: vec![0.0; dim],
                        var: vec![1.0; dim],
                        eps: 1e-5,
                    }
                }
                LayerDef::Activation { name, act } => Layer::Activation {
                    name: name.clone(),
                    act: *act,
                },
            };
            layers.push(layer);
        }
        match shape {
            Shape::Flat(d) if d == def.classes => {}
            s => {
                return Err(Error::shape(
                    "network output",
                    format!("{} classes", def.classes),
                    format!("{} values", s.len()),
                ))
            }
        }
        let lens: Vec<(String, usize)> = layers
            .iter()
            .filter(|l| l.param_len() > 0)
            .map(|l| (l.name().to_string(), l.param_len()))
            .collect();
        let layout = Layout::from_lens(&lens)?;
        Ok(Network {
            layers,
            input_dim,
            num_classes: def.classes,
            layout,
        })
    }

    /// Plain MLP: alternating dense and activation layers, no trailing
    /// activation. `hidden` may be empty for a single linear layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, act: Act) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, h) in hidden.iter().enumerate() {
            layers.push(LayerDef::Dense {
                name: format!("fc{}", i + 1),
                out: *h,
            });
            layers.push(LayerDef::Activation {
                name: format!("act{}", i + 1),
                act,
            });
        }
        layers.push(LayerDef::Dense {
            name: format!("fc{}", hidden.len() + 1),
            out: classes,
        });
        Network::from_def(&NetworkDef {
            input: InputShape::Flat { dim: input_dim },
            classes,
            layers,
        })
    }

    /// Small conv net: `convs` 3x3 valid convolutions (a batchnorm after the
    /// first), tanh activations, one dense head.
    pub fn conv_net(
        channels: usize,
        height: usize,
        width: usize,
        convs: &[usize],
        kernel: usize,
        classes: usize,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, c) in convs.iter().enumerate() {
            layers.push(LayerDef::Conv {
                name: format!("conv{}", i + 1),
                out_channels: *c,
                kernel,
            });
            if i == 0 {
                layers.push(LayerDef::Batchnorm {
                    name: "bn1".into(),
                });
            }
            layers.push(LayerDef::Activation {
                name: format!("act{}", i + 1),
                act: Act::Tanh,
            });
        }
        layers.push(LayerDef::Dense {
            name: "fc".into(),
            out: classes,
        });
        Network::from_def(&NetworkDef {
            input: InputShape::Image {
                channels,
                height,
                width,
            },
            classes,
            layers,
        })
    }

    /// The toy model zoo: three MLP depths plus one conv net. Everything is
    /// small enough for finite-difference oracles.
    pub fn zoo() -> Vec<(&'static str, Network)> {
        vec![
            ("mlp2", Network::mlp(16, &[24], 4, Act::Tanh).unwrap()),
            ("mlp3", Network::mlp(16, &[24, 16], 4, Act::Tanh).unwrap()),
            (
                "mlp4",
                Network::mlp(16, &[20, 16, 12], 4, Act::Tanh).unwrap(),
            ),
            (
                "conv_small",
                Network::conv_net(1, 8, 8, &[4, 8, 8], 3, 4).unwrap(),
            ),
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_len(&self) -> usize {
        self.layout.total_len()
    }

    /// Leading-axis channel count of a quantizable layer's weight tensor.
    pub fn weight_channels(&self, layer: &str) -> Result<usize> {
        let l = self
            .layers
            .iter()
            .find(|l| l.name() == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
        match l {
            Layer::Dense { out_dim, .. } => Ok(*out_dim),
            Layer::Conv { out_ch, .. } => Ok(*out_ch),
            _ => Err(Error::NotQuantizable(layer.to_string())),
        }
    }

    pub fn quantizable_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.quantizable())
            .map(|l| l.name())
            .collect()
    }

    /// Architecture descriptor with parameter and MAC counts at the network's
    /// reference input shape.
    pub fn descriptor(&self) -> ModelDescriptor {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense {
                    name,
                    in_dim,
                    out_dim,
                } => LayerSpec {
                    name: name.clone(),
                    kind: LayerKind::Dense,
                    param_count: in_dim * out_dim,
                    mac_count: in_dim * out_dim,
                    quantizable: true,
                },
                Layer::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    in_h,
                    in_w,
                } => {
                    let out_hw = (in_h - kernel + 1) * (in_w - kernel + 1);
                    let params = out_ch * in_ch * kernel * kernel;
                    LayerSpec {
                        name: name.clone(),
                        kind: LayerKind::Conv,
                        param_count: params,
                        mac_count: params * out_hw,
                        quantizable: true,
                    }
                }
                Layer::BatchNorm {
                    name, dim, spatial, ..
                } => LayerSpec {
                    name: name.clone(),
                    kind: LayerKind::Batchnorm,
                    param_count: 2 * dim,
                    mac_count: dim * spatial,
                    quantizable: false,
                },
                Layer::Activation { name, .. } => LayerSpec {
                    name: name.clone(),
                    kind: LayerKind::Activation,
                    param_count: 0,
                    mac_count: 0,
                    quantizable: false,
                },
            })
            .collect();
        ModelDescriptor { layers }
    }

    /// Replace the fixed statistics of a batchnorm layer (calibration, or
    /// neutralization after folding).
    pub fn set_batchnorm_stats(
        &mut self,
        name: &str,
        mean: Vec<f64>,
        var: Vec<f64>,
        new_eps: f64,
    ) -> Result<()> {
        for layer in &mut self.layers {
            if let Layer::BatchNorm {
                name: n,
                dim,
                mean: m,
                var: v,
                eps,
                ..
            } = layer
            {
                if n == name {
                    if mean.len() != *dim || var.len() != *dim {
                        return Err(Error::shape("set_batchnorm_stats", *dim, mean.len()));
                    }
                    if var.iter().any(|x| x + new_eps <= 0.0) {
                        return Err(Error::InvalidInput(
                            "batchnorm variance + eps must be positive".into(),
                        ));
                    }
                    *m = mean;
                    *v = var;
                    *eps = new_eps;
                    return Ok(());
                }
            }
        }
        Err(Error::UnknownLayer(name.to_string()))
    }

    /// Seeded Glorot-uniform initialization (batchnorm gets gamma=1, beta=0).
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pv = ParamVector::zeros(self.layout.clone());
        for layer in &self.layers {
            if layer.param_len() == 0 {
                continue;
            }
            match layer {
                Layer::Dense {
                    name,
                    in_dim,
                    out_dim,
                } => {
                    let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
                    for w in pv.segment_mut(name).unwrap() {
                        *w = rng.random_range(-a..a);
                    }
                }
                Layer::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan = (in_ch + out_ch) * kernel * kernel;
                    let a = (6.0 / fan as f64).sqrt();
                    for w in pv.segment_mut(name).unwrap() {
                        *w = rng.random_range(-a..a);
                    }
                }
                Layer::BatchNorm { name, dim, .. } => {
                    let seg = pv.segment_mut(name).unwrap();
                    for g in seg.iter_mut().take(*dim) {
                        *g = 1.0;
                    }
                }
                Layer::Activation { .. } => {}
            }
        }
        pv
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_def())? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let def: NetworkDef = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Network::from_def(&def)
    }

    pub fn to_def(&self) -> NetworkDef {
        let input = match self.layers.first() {
            Some(Layer::Conv {
                in_ch, in_h, in_w, ..
            }) => InputShape::Image {
                channels: *in_ch,
                height: *in_h,
                width: *in_w,
            },
            _ => InputShape::Flat {
                dim: self.input_dim,
            },
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { name, out_dim, .. } => LayerDef::Dense {
                    name: name.clone(),
                    out: *out_dim,
                },
                Layer::Conv {
                    name,
                    out_ch,
                    kernel,
                    ..
                } => LayerDef::Conv {
                    name: name.clone(),
                    out_channels: *out_ch,
                    kernel: *kernel,
                },
                Layer::BatchNorm { name, .. } => LayerDef::Batchnorm { name: name.clone() },
                Layer::Activation { name, act } => LayerDef::Activation {
                    name: name.clone(),
                    act: *act,
                },
            })
            .collect();
        NetworkDef {
            input,
            classes: self.num_classes,
            layers,
        }
    }
}

/// Stride-1 valid 2-D convolution of a single sample, channel-major layout.
/// `weights` is `[out_ch][in_ch][k][k]` flattened; the result is
/// `[out_ch][out_h][out_w]` flattened. Bias-free; callers add bias terms.
pub fn conv2d<S: Scalar>(
    input: &[S],
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    weights: &[S],
    out_ch: usize,
    kernel: usize,
) -> Vec<S> {
    debug_assert_eq!(input.len(), in_ch * in_h * in_w);
    debug_assert_eq!(weights.len(), out_ch * in_ch * kernel * kernel);
    let out_h = in_h - kernel + 1;
    let out_w = in_w - kernel + 1;
    let mut out = vec![S::zero(); out_ch * out_h * out_w];
    for oc in 0..out_ch {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = S::zero();
                for ic in 0..in_ch {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let w = weights[((oc * in_ch + ic) * kernel + ky) * kernel + kx];
                            let x = input[(ic * in_h + oy + ky) * in_w + ox + kx];
                            acc += w * x;
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    out
}

/// Inference-mode batchnorm over a channel-major sample:
/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batchnorm_apply(
    x: &[f64],
    channels: usize,
    spatial: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), channels * spatial);
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        let inv = 1.0 / (var[c] + eps).sqrt();
        for s in 0..spatial {
            out[c * spatial + s] = gamma[c] * (x[c * spatial + s] - mean[c]) * inv + beta[c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_dims_and_layouts() {
        for (name, net) in Network::zoo() {
            assert!(net.param_len() > 0, "{name}");
            assert!(net.param_len() <= 100_000, "{name} exceeds the zoo budget");
            assert!(!net.quantizable_layers().is_empty(), "{name}");
            let d = net.descriptor();
            d.validate().unwrap();
            // descriptor quantizable layers match runtime view
            let from_desc: Vec<_> = d.quantizable().map(|l| l.name.clone()).collect();
            assert_eq!(from_desc, net.quantizable_layers());
        }
    }

    #[test]
    fn conv_shape_inference() {
        let net = Network::conv_net(1, 8, 8, &[4, 8, 8], 3, 4).unwrap();
        // 8 -> 6 -> 4 -> 2 spatial; final dense sees 8*2*2 = 32 inputs
        let fc = net
            .layers()
            .iter()
            .find(|l| l.name() == "fc")
            .unwrap()
            .clone();
        match fc {
            Layer::Dense { in_dim, .. } => assert_eq!(in_dim, 32),
            _ => panic!("expected dense head"),
        }
    }

    #[test]
    fn descriptor_json_schema() {
        let net = Network::mlp(4, &[3], 2, Act::Tanh).unwrap();
        let json = serde_json::to_value(net.descriptor()).unwrap();
        let first = &json["layers"][0];
        assert_eq!(first["name"], "fc1");
        assert_eq!(first["kind"], "dense");
        assert_eq!(first["param_count"], 12);
        assert_eq!(first["mac_count"], 12);
        assert_eq!(first["quantizable"], true);
    }

    #[test]
    fn network_def_roundtrip() {
        let net = Network::conv_net(1, 8, 8, &[4, 8], 3, 4).unwrap();
        let json = serde_json::to_string(&net.to_def()).unwrap();
        let back = Network::from_def(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let net = Network::mlp(8, &[6], 3, Act::Tanh).unwrap();
        assert_eq!(net.init_params(7), net.init_params(7));
        assert_ne!(net.init_params(7), net.init_params(8));
    }

    #[test]
    fn conv2d_hand_example() {
        // 1x3x3 input, one 2x2 filter of ones: each output = sum of a 2x2 patch
        let input = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w = vec![1.0; 4];
        let out = conv2d(&input, 1, 3, 3, &w, 1, 2);
        assert_eq!(out, vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn mismatched_head_rejected() {
        let def = NetworkDef {
            input: InputShape::Flat { dim: 4 },
            classes: 3,
            layers: vec![LayerDef::Dense {
                name: "fc1".into(),
                out: 2,
            }],
        };
        assert!(Network::from_def(&def).is_err());
    }
}
