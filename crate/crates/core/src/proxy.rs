//! Low-cost surrogate search over quantization hyperparameters.
//!
//! The loop: draw `N` of the `M` possible configurations at random and
//! short-train them for scores; fit a small MLP regressor from encoded
//! configurations to scores; then for each round propose unseen candidates,
//! rank them with the surrogate (one forward pass each, no training), fully
//! evaluate the top `K`, fold the results back in, and refit. The best fully
//! evaluated configuration wins. Every evaluation lands in a history ledger
//! (JSONL on disk) that a later run can resume from without repeating work.
//!
//! Short-fidelity records stay in the surrogate's training set after full
//! results arrive; both fidelities carry signal about the score landscape.

use std::cell::Cell;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlab::{self, Act, Network, ParamVector, SquaredErrorHead};
use crate::seeds;

// ── the hyperparameter space ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dimension {
    Categorical { name: String, values: Vec<String> },
    Boolean { name: String },
    BitChoice { name: String, options: Vec<u8> },
}

impl Dimension {
    pub fn name(&self) -> &str {
        match self {
            Dimension::Categorical { name, .. }
            | Dimension::Boolean { name }
            | Dimension::BitChoice { name, .. } => name,
        }
    }

    pub fn cardinality(&self) -> usize {
        match self {
            Dimension::Categorical { values, .. } => values.len(),
            Dimension::Boolean { .. } => 2,
            Dimension::BitChoice { options, .. } => options.len(),
        }
    }

    /// Width of this dimension in the encoding: one-hot for categorical and
    /// boolean, a single normalized scalar for bit choices.
    pub fn encoded_width(&self) -> usize {
        match self {
            Dimension::Categorical { values, .. } => values.len(),
            Dimension::Boolean { .. } => 2,
            Dimension::BitChoice { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HparamSpace {
    pub dimensions: Vec<Dimension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimValue {
    Cat(String),
    Bool(bool),
    Bits(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HparamConfig {
    pub values: Vec<DimValue>,
}

impl HparamConfig {
    /// Canonical identity string, the deduplication key.
    pub fn key(&self) -> String {
        self.values
            .iter()
            .map(|v| match v {
                DimValue::Cat(s) => s.clone(),
                DimValue::Bool(b) => b.to_string(),
                DimValue::Bits(b) => b.to_string(),
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl HparamSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let space = HparamSpace { dimensions };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::InvalidConfig("space has no dimensions".into()));
        }
        let mut names = HashSet::new();
        for d in &self.dimensions {
            if !names.insert(d.name().to_string()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate dimension name `{}`",
                    d.name()
                )));
            }
            if d.cardinality() == 0 {
                return Err(Error::InvalidConfig(format!(
                    "dimension `{}` has an empty domain",
                    d.name()
                )));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> u128 {
        self.dimensions
            .iter()
            .map(|d| d.cardinality() as u128)
            .product()
    }

    pub fn encoded_width(&self) -> usize {
        self.dimensions.iter().map(|d| d.encoded_width()).sum()
    }

    /// Mixed-radix decode, dimension 0 most significant.
    pub fn config_at(&self, mut index: u128) -> Result<HparamConfig> {
        if index >= self.size() {
            return Err(Error::InvalidInput(format!(
                "config index {index} out of range (space size {})",
                self.size()
            )));
        }
        let mut values = vec![None; self.dimensions.len()];
        for (i, d) in self.dimensions.iter().enumerate().rev() {
            let card = d.cardinality() as u128;
            let pos = (index % card) as usize;
            index /= card;
            values[i] = Some(match d {
                Dimension::Categorical { values, .. } => DimValue::Cat(values[pos].clone()),
                Dimension::Boolean { .. } => DimValue::Bool(pos == 0),
                Dimension::BitChoice { options, .. } => DimValue::Bits(options[pos]),
            });
        }
        Ok(HparamConfig {
            values: values.into_iter().map(Option::unwrap).collect(),
        })
    }

    pub fn index_of(&self, config: &HparamConfig) -> Result<u128> {
        if config.values.len() != self.dimensions.len() {
            return Err(Error::shape(
                "config",
                self.dimensions.len(),
                config.values.len(),
            ));
        }
        let mut index: u128 = 0;
        for (d, v) in self.dimensions.iter().zip(&config.values) {
            let pos = self.value_position(d, v)?;
            index = index * d.cardinality() as u128 + pos as u128;
        }
        Ok(index)
    }

    fn value_position(&self, d: &Dimension, v: &DimValue) -> Result<usize> {
        match (d, v) {
            (Dimension::Categorical { values, .. }, DimValue::Cat(s)) => values
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| domain_error(d.name(), &format!("{s:?}"))),
            (Dimension::Boolean { .. }, DimValue::Bool(b)) => Ok(if *b { 0 } else { 1 }),
            (Dimension::BitChoice { options, .. }, DimValue::Bits(b)) => options
                .iter()
                .position(|x| x == b)
                .ok_or_else(|| domain_error(d.name(), &b.to_string())),
            _ => Err(domain_error(d.name(), "value of the wrong kind")),
        }
    }

    /// Config as a JSON object keyed by dimension name.
    pub fn config_to_json(&self, config: &HparamConfig) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (d, v) in self.dimensions.iter().zip(&config.values) {
            let jv = match v {
                DimValue::Cat(s) => serde_json::Value::String(s.clone()),
                DimValue::Bool(b) => serde_json::Value::Bool(*b),
                DimValue::Bits(b) => serde_json::Value::Number((*b).into()),
            };
            map.insert(d.name().to_string(), jv);
        }
        serde_json::Value::Object(map)
    }

    pub fn config_from_json(&self, value: &serde_json::Value) -> Result<HparamConfig> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput("config must be a JSON object".into()))?;
        let mut values = Vec::with_capacity(self.dimensions.len());
        for d in &self.dimensions {
            let v = obj.get(d.name()).ok_or_else(|| {
                Error::InvalidInput(format!("config missing dimension `{}`", d.name()))
            })?;
            let dv = match d {
                Dimension::Categorical { .. } => DimValue::Cat(
                    v.as_str()
                        .ok_or_else(|| domain_error(d.name(), "non-string"))?
                        .to_string(),
                ),
                Dimension::Boolean { .. } => {
                    DimValue::Bool(v.as_bool().ok_or_else(|| domain_error(d.name(), "non-bool"))?)
                }
                Dimension::BitChoice { .. } => DimValue::Bits(
                    v.as_u64()
                        .and_then(|x| u8::try_from(x).ok())
                        .ok_or_else(|| domain_error(d.name(), "non-integer"))?,
                ),
            };
            self.value_position(d, &dv)?;
            values.push(dv);
        }
        Ok(HparamConfig { values })
    }

    /// Space TOML: an ordered `[[dimension]]` array, e.g.
    ///
    /// ```toml
    /// [[dimension]]
    /// name = "channel"
    /// kind = "boolean"
    ///
    /// [[dimension]]
    /// name = "bits_conv"
    /// kind = "bit_choice"
    /// options = [2, 4, 8]
    /// ```
    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SpaceFile = toml::from_str(&text)?;
        let mut dims = Vec::with_capacity(file.dimension.len());
        for e in file.dimension {
            dims.push(match e.kind.as_str() {
                "categorical" => Dimension::Categorical {
                    name: e.name.clone(),
                    values: e.values.ok_or_else(|| {
                        Error::InvalidConfig(format!("categorical `{}` needs `values`", e.name))
                    })?,
                },
                "boolean" => Dimension::Boolean { name: e.name },
                "bit_choice" => Dimension::BitChoice {
                    name: e.name.clone(),
                    options: e.options.ok_or_else(|| {
                        Error::InvalidConfig(format!("bit_choice `{}` needs `options`", e.name))
                    })?,
                },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown dimension kind `{other}`"
                    )))
                }
            });
        }
        HparamSpace::new(dims)
    }

    pub fn save_toml(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.dimensions {
            out.push_str("[[dimension]]\n");
            out.push_str(&format!("name = {:?}\n", d.name()));
            match d {
                Dimension::Categorical { values, .. } => {
                    out.push_str("kind = \"categorical\"\n");
                    out.push_str(&format!(
                        "values = [{}]\n",
                        values
                            .iter()
                            .map(|v| format!("{v:?}"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    ));
                }
                Dimension::Boolean { .. } => out.push_str("kind = \"boolean\"\n"),
                Dimension::BitChoice { options, .. } => {
                    out.push_str("kind = \"bit_choice\"\n");
                    out.push_str(&format!(
                        "options = [{}]\n",
                        options
                            .iter()
                            .map(|o| o.to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ));
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn domain_error(dim: &str, value: &str) -> Error {
    Error::InvalidInput(format!("value {value} is not in the domain of `{dim}`"))
}

#[derive(Deserialize)]
struct SpaceFile {
    dimension: Vec<SpaceFileEntry>,
}

#[derive(Deserialize)]
struct SpaceFileEntry {
    name: String,
    kind: String,
    values: Option<Vec<String>>,
    options: Option<Vec<u8>>,
}

/// Deterministic injective encoding: one-hot per categorical/boolean
/// dimension (true maps to [1, 0]), bit choices as `bits / 8`.
pub fn encode(space: &HparamSpace, config: &HparamConfig) -> Result<Vec<f64>> {
    if config.values.len() != space.dimensions.len() {
        return Err(Error::shape(
            "encode",
            space.dimensions.len(),
            config.values.len(),
        ));
    }
    let mut out = Vec::with_capacity(space.encoded_width());
    for (d, v) in space.dimensions.iter().zip(&config.values) {
        match (d, v) {
            (Dimension::Categorical { values, .. }, DimValue::Cat(s)) => {
                let pos = values
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| domain_error(d.name(), &format!("{s:?}")))?;
                for i in 0..values.len() {
                    out.push(if i == pos { 1.0 } else { 0.0 });
                }
            }
            (Dimension::Boolean { .. }, DimValue::Bool(b)) => {
                out.push(if *b { 1.0 } else { 0.0 });
                out.push(if *b { 0.0 } else { 1.0 });
            }
            (Dimension::BitChoice { options, .. }, DimValue::Bits(b)) => {
                if !options.contains(b) {
                    return Err(domain_error(d.name(), &b.to_string()));
                }
                out.push(*b as f64 / 8.0);
            }
            _ => return Err(domain_error(d.name(), "value of the wrong kind")),
        }
    }
    Ok(out)
}

// ── records and history ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Short,
    Full,
}

/// One evaluation: an encoded configuration with its observed score, the
/// surrogate's training datum and one history-ledger line.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRecord {
    pub round: usize,
    pub config: HparamConfig,
    pub encoding: Vec<f64>,
    pub predicted: Option<f64>,
    pub realized: f64,
    pub fidelity: Fidelity,
    pub seconds: f64,
    pub note: Option<String>,
}

impl ProxyRecord {
    pub fn to_json(&self, space: &HparamSpace) -> serde_json::Value {
        let mut v = serde_json::json!({
            "round": self.round,
            "config": space.config_to_json(&self.config),
            "encoding": self.encoding,
            "predicted": self.predicted,
            "realized": self.realized,
            "fidelity": match self.fidelity { Fidelity::Short => "short", Fidelity::Full => "full" },
            "seconds": self.seconds,
        });
        if let Some(note) = &self.note {
            v["note"] = serde_json::Value::String(note.clone());
        }
        v
    }

    pub fn from_json(space: &HparamSpace, v: &serde_json::Value) -> Result<Self> {
        let config = space.config_from_json(&v["config"])?;
        let encoding = v["encoding"]
            .as_array()
            .ok_or_else(|| Error::InvalidInput("record missing encoding".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(f64::NAN))
            .collect();
        Ok(ProxyRecord {
            round: v["round"].as_u64().unwrap_or(0) as usize,
            config,
            encoding,
            predicted: v["predicted"].as_f64(),
            realized: v["realized"]
                .as_f64()
                .ok_or_else(|| Error::InvalidInput("record missing realized score".into()))?,
            fidelity: match v["fidelity"].as_str() {
                Some("short") => Fidelity::Short,
                Some("full") => Fidelity::Full,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "bad fidelity {other:?} in history record"
                    )))
                }
            },
            seconds: v["seconds"].as_f64().unwrap_or(0.0),
            note: v["note"].as_str().map(str::to_string),
        })
    }
}

/// History JSONL: one record per line, in evaluation order.
pub fn write_history(path: &Path, space: &HparamSpace, records: &[ProxyRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(&r.to_json(space))?)?;
    }
    Ok(())
}

pub fn read_history(path: &Path, space: &HparamSpace) -> Result<Vec<ProxyRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        records.push(ProxyRecord::from_json(space, &v)?);
    }
    Ok(records)
}

// ── the surrogate regressor ─────────────────────────────────────────────────

/// Two-hidden-layer MLP regressor (width 32, tanh) from encodings to scores.
pub struct Surrogate {
    net: Network,
    params: ParamVector,
    input_dim: usize,
    forward_count: Cell<usize>,
}

impl Surrogate {
    pub fn predict(&self, encoding: &[f64]) -> Result<f64> {
        if encoding.len() != self.input_dim {
            return Err(Error::shape("surrogate input", self.input_dim, encoding.len()));
        }
        self.forward_count.set(self.forward_count.get() + 1);
        let batch = crate::netlab::Batch {
            inputs: encoding.to_vec(),
            labels: vec![0],
            dim: self.input_dim,
            classes: 1,
        };
        let (logits, _) = netlab::forward(&self.net, &self.params, &batch)?;
        Ok(logits[0])
    }

    /// Number of forward passes served; the cost instrumentation.
    pub fn forward_count(&self) -> usize {
        self.forward_count.get()
    }
}

const SURROGATE_HIDDEN: usize = 32;
const SURROGATE_STEPS: usize = 500;
const SURROGATE_LR: f64 = 0.15;
const SURROGATE_WEIGHT_DECAY: f64 = 1e-3;
const SURROGATE_MOMENTUM: f64 = 0.9;

/// Fit the surrogate to `(encoding, realized)` pairs: full-batch gradient
/// descent with momentum on squared error, 500 steps, seed-deterministic.
pub fn fit_proxy(records: &[ProxyRecord], seed: u64) -> Result<Surrogate> {
    if records.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "surrogate needs at least 2 records, got {}",
            records.len()
        )));
    }
    let input_dim = records[0].encoding.len();
    if records.iter().any(|r| r.encoding.len() != input_dim) {
        return Err(Error::shape("fit_proxy encodings", input_dim, "mixed widths"));
    }
    let net = Network::mlp(input_dim, &[SURROGATE_HIDDEN, SURROGATE_HIDDEN], 1, Act::Tanh)?;
    let n = records.len();
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut targets = Vec::with_capacity(n);
    for r in records {
        inputs.extend_from_slice(&r.encoding);
        targets.push(r.realized);
    }
    let head = SquaredErrorHead { targets };

    // deterministic step-size backoff: tiny record sets can make the fixed
    // step oscillate, so halve it and restart on divergence
    let mut lr = SURROGATE_LR;
    'attempt: for _ in 0..6 {
        let mut params = net.init_params(seeds::derive(seed, seeds::tags::INIT, 0));
        let mut velocity = vec![0.0; params.len()];
        for _ in 0..SURROGATE_STEPS {
            let (loss, grad) = netlab::loss_and_grad_with_head(&net, &params, &inputs, n, &head)?;
            if !loss.is_finite() {
                lr *= 0.5;
                continue 'attempt;
            }
            for (i, (v, g)) in velocity.iter_mut().zip(grad.values()).enumerate() {
                *v = SURROGATE_MOMENTUM * *v + g + SURROGATE_WEIGHT_DECAY * params.values()[i];
                params.values_mut()[i] -= lr * *v;
            }
        }
        return Ok(Surrogate {
            net,
            params,
            input_dim,
            forward_count: Cell::new(0),
        });
    }
    Err(Error::InvalidConfig(
        "surrogate training diverged at every step size".into(),
    ))
}

// ── proposal strategies ─────────────────────────────────────────────────────

pub struct ProposeOutcome {
    pub candidates: Vec<(HparamConfig, f64)>,
    /// Fewer candidates than requested because the space ran out.
    pub exhausted: bool,
}

/// Candidate-proposal strategy interface; random search is built in, other
/// strategies (evolutionary, RL) plug in here.
pub trait SearchStrategy {
    fn propose(
        &self,
        space: &HparamSpace,
        surrogate: &Surrogate,
        count: usize,
        seed: u64,
        exclude: &HashSet<String>,
    ) -> Result<ProposeOutcome>;
}

/// Uniform sampling of unseen configurations.
pub struct RandomStrategy;

impl SearchStrategy for RandomStrategy {
    fn propose(
        &self,
        space: &HparamSpace,
        surrogate: &Surrogate,
        count: usize,
        seed: u64,
        exclude: &HashSet<String>,
    ) -> Result<ProposeOutcome> {
        if count == 0 {
            return Err(Error::InvalidConfig("propose needs count >= 1".into()));
        }
        let size = space.size();
        let remaining = size.saturating_sub(exclude.len() as u128);
        let mut picked: Vec<HparamConfig> = Vec::new();
        if remaining <= count as u128 {
            // enumerate what is left, ascending index order
            for idx in 0..size {
                let c = space.config_at(idx)?;
                if !exclude.contains(&c.key()) {
                    picked.push(c);
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen: HashSet<String> = HashSet::new();
            while picked.len() < count {
                let idx = rng.random_range(0..size);
                let c = space.config_at(idx)?;
                let key = c.key();
                if exclude.contains(&key) || !seen.insert(key) {
                    continue;
                }
                picked.push(c);
            }
        }
        let exhausted = picked.len() < count;
        let mut candidates = Vec::with_capacity(picked.len());
        for c in picked {
            let enc = encode(space, &c)?;
            let pred = surrogate.predict(&enc)?;
            candidates.push((c, pred));
        }
        Ok(ProposeOutcome {
            candidates,
            exhausted,
        })
    }
}

/// Propose with the built-in random strategy.
pub fn propose(
    space: &HparamSpace,
    surrogate: &Surrogate,
    count: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<ProposeOutcome> {
    RandomStrategy.propose(space, surrogate, count, seed, exclude)
}

// ── the search loop ─────────────────────────────────────────────────────────

/// Evaluation callbacks. `short_eval` is the truncated-training score used
/// to bootstrap the surrogate; `full_eval` the real objective. Both return a
/// score in [0, 1]. `cost_seconds` is the evaluator's own deterministic cost
/// accounting for the last call (training evaluators report virtual time so
/// that reruns are byte-identical; wall time belongs in run metadata).
pub trait Evaluator {
    fn short_eval(&mut self, config: &HparamConfig) -> Result<f64>;
    fn full_eval(&mut self, config: &HparamConfig) -> Result<f64>;
    fn cost_seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// M: the number of possible configurations (must equal the space size).
    pub total_configs: usize,
    /// N: initial random sample, short-trained.
    pub initial_samples: usize,
    /// K: full evaluations per round, K < N.
    pub top_k: usize,
    pub short_epochs: usize,
    pub full_epochs: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl SearchBudget {
    pub fn validate(&self, space: &HparamSpace) -> Result<()> {
        let m = space.size();
        if self.total_configs as u128 != m {
            return Err(Error::InvalidConfig(format!(
                "budget says M = {} but the space has {m} configurations",
                self.total_configs
            )));
        }
        if self.top_k == 0 || self.top_k >= self.initial_samples {
            return Err(Error::InvalidConfig(format!(
                "need 0 < K < N, got K = {}, N = {}",
                self.top_k, self.initial_samples
            )));
        }
        if self.initial_samples * 4 > self.total_configs {
            return Err(Error::InvalidConfig(format!(
                "N must be small against M (N <= M/4): N = {}, M = {}",
                self.initial_samples, self.total_configs
            )));
        }
        if self.initial_samples * 10 > self.total_configs {
            eprintln!(
                "warning: N = {} is more than M/10 of the space (M = {}); the proxy saves little here",
                self.initial_samples, self.total_configs
            );
        }
        if self.short_epochs >= self.full_epochs {
            return Err(Error::InvalidConfig(format!(
                "short_epochs must be < full_epochs, got {} vs {}",
                self.short_epochs, self.full_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best: HparamConfig,
    pub best_score: f64,
    pub history: Vec<ProxyRecord>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Run the proxy-guided search from scratch.
pub fn search(
    space: &HparamSpace,
    evaluator: &mut dyn Evaluator,
    budget: &SearchBudget,
) -> Result<SearchOutcome> {
    search_resumable(space, evaluator, budget, Vec::new())
}

/// Run the search continuing from prior history records: configurations
/// already in the ledger are never re-evaluated, completed rounds are not
/// repeated, and the returned history is the full concatenated ledger.
pub fn search_resumable(
    space: &HparamSpace,
    evaluator: &mut dyn Evaluator,
    budget: &SearchBudget,
    prior: Vec<ProxyRecord>,
) -> Result<SearchOutcome> {
    space.validate()?;
    budget.validate(space)?;
    let mut history = prior;
    let mut evaluated: HashSet<String> = history.iter().map(|r| r.config.key()).collect();
    let shorts_done = history
        .iter()
        .filter(|r| r.fidelity == Fidelity::Short)
        .count();
    let rounds_done = history
        .iter()
        .filter(|r| r.fidelity == Fidelity::Full)
        .map(|r| r.round)
        .max()
        .unwrap_or(0);

    // phase 0: initial N short evaluations
    if shorts_done < budget.initial_samples {
        let missing = budget.initial_samples - shorts_done;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(budget.seed, seeds::tags::SEARCH, 0));
        let size = space.size();
        let mut drawn = 0usize;
        while drawn < missing {
            let idx = rng.random_range(0..size);
            let config = space.config_at(idx)?;
            let key = config.key();
            if evaluated.contains(&key) {
                continue;
            }
            let encoding = encode(space, &config)?;
            let (realized, note) = match evaluator.short_eval(&config) {
                Ok(s) => (s, None),
                Err(e) => (0.0, Some(format!("short_eval failed: {e}"))),
            };
            history.push(ProxyRecord {
                round: 0,
                config,
                encoding,
                predicted: None,
                realized,
                fidelity: Fidelity::Short,
                seconds: evaluator.cost_seconds(),
                note,
            });
            evaluated.insert(key);
            drawn += 1;
        }
    }

    // rounds: propose with the surrogate, fully evaluate the top K. Two
    // proposals per initial sample: surrogate forward passes are the cheap
    // resource, so rank a wider slate than gets trained.
    for round in (rounds_done + 1)..=budget.rounds {
        let surrogate = fit_proxy(&history, seeds::derive(budget.seed, seeds::tags::INIT, round as u64))?;
        let outcome = propose(
            space,
            &surrogate,
            2 * budget.initial_samples,
            seeds::derive(budget.seed, seeds::tags::SEARCH, round as u64),
            &evaluated,
        )?;
        let mut candidates = outcome.candidates;
        candidates.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| fnv1a(&a.0.key()).cmp(&fnv1a(&b.0.key())))
        });
        for (config, predicted) in candidates.into_iter().take(budget.top_k) {
            let key = config.key();
            let encoding = encode(space, &config)?;
            let (realized, note) = match evaluator.full_eval(&config) {
                Ok(s) => (s, None),
                Err(e) => (0.0, Some(format!("full_eval failed: {e}"))),
            };
            history.push(ProxyRecord {
                round,
                config,
                encoding,
                predicted: Some(predicted),
                realized,
                fidelity: Fidelity::Full,
                seconds: evaluator.cost_seconds(),
                note,
            });
            evaluated.insert(key);
        }
    }

    // the best fully evaluated configuration; with zero rounds, the best of
    // the initial short-trained sample
    let pick = |fid: Fidelity| -> Option<&ProxyRecord> {
        history
            .iter()
            .filter(|r| r.fidelity == fid)
            .max_by(|a, b| {
                a.realized
                    .partial_cmp(&b.realized)
                    .unwrap()
                    // earlier record wins ties: compare reversed positions
                    .then_with(|| {
                        let pa = history.iter().position(|x| std::ptr::eq(x, *a)).unwrap();
                        let pb = history.iter().position(|x| std::ptr::eq(x, *b)).unwrap();
                        pb.cmp(&pa)
                    })
            })
    };
    let best_record = pick(Fidelity::Full)
        .or_else(|| pick(Fidelity::Short))
        .ok_or_else(|| Error::InvalidConfig("search produced no evaluations".into()))?;
    Ok(SearchOutcome {
        best: best_record.config.clone(),
        best_score: best_record.realized,
        history,
    })
}

/// Plain random search: `full_evals` distinct uniform draws, best realized
/// score wins. The comparison baseline for the proxy loop.
pub fn random_search(
    space: &HparamSpace,
    evaluator: &mut dyn Evaluator,
    full_evals: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    space.validate()?;
    let size = space.size();
    let budget = (full_evals as u128).min(size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluated: HashSet<String> = HashSet::new();
    let mut history = Vec::new();
    while (history.len() as u128) < budget {
        let idx = rng.random_range(0..size);
        let config = space.config_at(idx)?;
        let key = config.key();
        if !evaluated.insert(key) {
            continue;
        }
        let encoding = encode(space, &config)?;
        let (realized, note) = match evaluator.full_eval(&config) {
            Ok(s) => (s, None),
            Err(e) => (0.0, Some(format!("full_eval failed: {e}"))),
        };
        history.push(ProxyRecord {
            round: 0,
            config,
            encoding,
            predicted: None,
            realized,
            fidelity: Fidelity::Full,
            seconds: evaluator.cost_seconds(),
            note,
        });
    }
    let best = history
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.realized
                .partial_cmp(&b.realized)
                .unwrap()
                .then(ib.cmp(ia))
        })
        .map(|(_, r)| r)
        .ok_or(Error::EmptyDataset)?;
    Ok(SearchOutcome {
        best: best.config.clone(),
        best_score: best.realized,
        history,
    })
}

// ── synthetic benchmark ─────────────────────────────────────────────────────

/// A deterministic 64-configuration benchmark with a unique known optimum,
/// used by tests and the CLI's synthetic evaluator mode.
pub mod synthetic {
    use super::*;

    /// Channel/BN/Distill booleans plus two bit choices: 2*2*2*2*4 = 64.
    pub fn space() -> HparamSpace {
        HparamSpace::new(vec![
            Dimension::Boolean {
                name: "channel".into(),
            },
            Dimension::Boolean { name: "bn".into() },
            Dimension::Boolean {
                name: "distill".into(),
            },
            Dimension::BitChoice {
                name: "bits_conv".into(),
                options: vec![4, 8],
            },
            Dimension::BitChoice {
                name: "bits_fc".into(),
                options: vec![2, 3, 4, 8],
            },
        ])
        .expect("static space")
    }

    /// Additive utilities plus one interaction; maximum exactly 1.0 at
    /// (channel=true, bn=false, distill=true, 8, 8), unique over the space.
    pub fn score(space: &HparamSpace, config: &HparamConfig) -> f64 {
        let mut s = 0.0;
        let mut channel = false;
        let mut distill = false;
        for (d, v) in space.dimensions.iter().zip(&config.values) {
            match (d.name(), v) {
                ("channel", DimValue::Bool(b)) => {
                    channel = *b;
                    if *b {
                        s += 0.20;
                    }
                }
                ("bn", DimValue::Bool(b)) => {
                    if !*b {
                        s += 0.15;
                    }
                }
                ("distill", DimValue::Bool(b)) => {
                    distill = *b;
                    if *b {
                        s += 0.22;
                    }
                }
                ("bits_conv", DimValue::Bits(b)) => {
                    s += match b {
                        8 => 0.18,
                        4 => 0.08,
                        _ => 0.0,
                    }
                }
                ("bits_fc", DimValue::Bits(b)) => {
                    s += match b {
                        8 => 0.22,
                        4 => 0.12,
                        3 => 0.07,
                        2 => 0.02,
                        _ => 0.0,
                    }
                }
                _ => {}
            }
        }
        if channel && distill {
            s += 0.03;
        }
        s
    }

    pub struct SyntheticEvaluator {
        pub space: HparamSpace,
        pub calls_short: usize,
        pub calls_full: usize,
    }

    impl SyntheticEvaluator {
        pub fn new() -> Self {
            SyntheticEvaluator {
                space: space(),
                calls_short: 0,
                calls_full: 0,
            }
        }
    }

    impl Default for SyntheticEvaluator {
        fn default() -> Self {
            Self::new()
        }
    }

    impl Evaluator for SyntheticEvaluator {
        fn short_eval(&mut self, config: &HparamConfig) -> Result<f64> {
            self.calls_short += 1;
            Ok(score(&self.space, config))
        }
        fn full_eval(&mut self, config: &HparamConfig) -> Result<f64> {
            self.calls_full += 1;
            Ok(score(&self.space, config))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::synthetic::SyntheticEvaluator;
    use super::*;

    fn small_budget() -> SearchBudget {
        SearchBudget {
            total_configs: 64,
            initial_samples: 8,
            top_k: 3,
            short_epochs: 10,
            full_epochs: 100,
            rounds: 4,
            seed: 1,
        }
    }

    #[test]
    fn boolean_and_categorical_encodings() {
        let space = HparamSpace::new(vec![
            Dimension::Boolean { name: "b".into() },
            Dimension::Categorical {
                name: "c".into(),
                values: vec!["x".into(), "y".into(), "z".into()],
            },
        ])
        .unwrap();
        let cfg = HparamConfig {
            values: vec![DimValue::Bool(true), DimValue::Cat("y".into())],
        };
        assert_eq!(encode(&space, &cfg).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        let cfg2 = HparamConfig {
            values: vec![DimValue::Bool(false), DimValue::Cat("x".into())],
        };
        assert_eq!(encode(&space, &cfg2).unwrap(), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn encoding_is_injective_over_the_synthetic_space() {
        let space = synthetic::space();
        assert_eq!(space.size(), 64);
        assert_eq!(space.encoded_width(), 8); // 2+2+2+1+1
        let mut seen = HashSet::new();
        for i in 0..64u128 {
            let cfg = space.config_at(i).unwrap();
            let enc = encode(&space, &cfg).unwrap();
            let key = format!("{enc:?}");
            assert!(seen.insert(key), "duplicate encoding at index {i}");
            assert_eq!(space.index_of(&cfg).unwrap(), i);
        }
    }

    #[test]
    fn out_of_domain_values_error() {
        let space = synthetic::space();
        let mut cfg = space.config_at(0).unwrap();
        cfg.values[3] = DimValue::Bits(5);
        assert!(encode(&space, &cfg).is_err());
    }

    #[test]
    fn surrogate_fits_affine_labels() {
        let space = synthetic::space();
        let mut records = Vec::new();
        for i in 0..32u128 {
            let cfg = space.config_at(i * 2).unwrap();
            let enc = encode(&space, &cfg).unwrap();
            // affine in one coordinate
            let y = 0.2 + 0.6 * enc[0];
            records.push(ProxyRecord {
                round: 0,
                config: cfg,
                encoding: enc,
                predicted: None,
                realized: y,
                fidelity: Fidelity::Short,
                seconds: 0.0,
                note: None,
            });
        }
        let s = fit_proxy(&records, 3).unwrap();
        let mse: f64 = records
            .iter()
            .map(|r| {
                let p = s.predict(&r.encoding).unwrap();
                (p - r.realized) * (p - r.realized)
            })
            .sum::<f64>()
            / records.len() as f64;
        assert!(mse < 1e-3, "training MSE {mse}");
    }

    #[test]
    fn surrogate_is_a_function_and_fits_constants() {
        let space = synthetic::space();
        let mk = |i: u128, y: f64| {
            let cfg = space.config_at(i).unwrap();
            let enc = encode(&space, &cfg).unwrap();
            ProxyRecord {
                round: 0,
                config: cfg,
                encoding: enc,
                predicted: None,
                realized: y,
                fidelity: Fidelity::Short,
                seconds: 0.0,
                note: None,
            }
        };
        // duplicate records: identical prediction
        let records = vec![mk(3, 0.4), mk(3, 0.4), mk(9, 0.6)];
        let s = fit_proxy(&records, 5).unwrap();
        assert_eq!(
            s.predict(&records[0].encoding).unwrap(),
            s.predict(&records[1].encoding).unwrap()
        );

        // constant scores: within 0.01 of the constant everywhere
        let const_records: Vec<ProxyRecord> = (0..32).map(|i| mk(i * 2, 0.37)).collect();
        let s = fit_proxy(&const_records, 7).unwrap();
        for i in 0..64u128 {
            let cfg = space.config_at(i).unwrap();
            let enc = encode(&space, &cfg).unwrap();
            let p = s.predict(&enc).unwrap();
            assert!((p - 0.37).abs() < 0.01, "config {i}: predicted {p}");
        }
    }

    #[test]
    fn fit_proxy_needs_two_records() {
        assert!(fit_proxy(&[], 0).is_err());
    }

    #[test]
    fn propose_returns_exactly_the_one_unseen_config() {
        let space = synthetic::space();
        let records: Vec<ProxyRecord> = (0..4u128)
            .map(|i| {
                let cfg = space.config_at(i).unwrap();
                let enc = encode(&space, &cfg).unwrap();
                ProxyRecord {
                    round: 0,
                    config: cfg,
                    encoding: enc,
                    predicted: None,
                    realized: 0.5,
                    fidelity: Fidelity::Short,
                    seconds: 0.0,
                    note: None,
                }
            })
            .collect();
        let surrogate = fit_proxy(&records, 1).unwrap();
        // exclude everything but config 17
        let mut exclude = HashSet::new();
        for i in 0..64u128 {
            if i != 17 {
                exclude.insert(space.config_at(i).unwrap().key());
            }
        }
        let out = propose(&space, &surrogate, 5, 9, &exclude).unwrap();
        assert!(out.exhausted);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].0, space.config_at(17).unwrap());
    }

    #[test]
    fn propose_whole_space_returns_every_config_once() {
        let space = synthetic::space();
        let records: Vec<ProxyRecord> = (0..2u128)
            .map(|i| {
                let cfg = space.config_at(i).unwrap();
                let enc = encode(&space, &cfg).unwrap();
                ProxyRecord {
                    round: 0,
                    config: cfg,
                    encoding: enc,
                    predicted: None,
                    realized: 0.5,
                    fidelity: Fidelity::Short,
                    seconds: 0.0,
                    note: None,
                }
            })
            .collect();
        let surrogate = fit_proxy(&records, 1).unwrap();
        let before = surrogate.forward_count();
        let out = propose(&space, &surrogate, 64, 2, &HashSet::new()).unwrap();
        assert_eq!(out.candidates.len(), 64);
        let keys: HashSet<String> = out.candidates.iter().map(|(c, _)| c.key()).collect();
        assert_eq!(keys.len(), 64);
        // exactly one surrogate forward per candidate
        assert_eq!(surrogate.forward_count() - before, 64);
        // predictions match direct evaluation
        for (c, p) in &out.candidates {
            let enc = encode(&space, c).unwrap();
            assert_eq!(*p, surrogate.predict(&enc).unwrap());
        }
    }

    #[test]
    fn search_accounting_and_determinism() {
        let budget = small_budget();
        let mut eval = SyntheticEvaluator::new();
        let out = search(&eval.space.clone(), &mut eval, &budget).unwrap();
        // ledger length N + K*rounds, evaluator budget discipline
        assert_eq!(out.history.len(), 8 + 3 * 4);
        assert_eq!(eval.calls_short, 8);
        assert_eq!(eval.calls_full, 12);
        // no config evaluated twice
        let keys: HashSet<String> = out.history.iter().map(|r| r.config.key()).collect();
        assert_eq!(keys.len(), out.history.len());

        // identical seed: identical history
        let mut eval2 = SyntheticEvaluator::new();
        let out2 = search(&eval2.space.clone(), &mut eval2, &budget).unwrap();
        assert_eq!(out.history, out2.history);
        assert_eq!(out.best, out2.best);
    }

    #[test]
    fn zero_rounds_returns_best_short_config() {
        let mut budget = small_budget();
        budget.rounds = 0;
        let mut eval = SyntheticEvaluator::new();
        let out = search(&eval.space.clone(), &mut eval, &budget).unwrap();
        assert_eq!(out.history.len(), 8);
        let best_short = out
            .history
            .iter()
            .map(|r| r.realized)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_score, best_short);
    }

    #[test]
    fn failed_evaluations_score_zero_and_continue() {
        struct Flaky {
            inner: SyntheticEvaluator,
            n: usize,
        }
        impl Evaluator for Flaky {
            fn short_eval(&mut self, c: &HparamConfig) -> Result<f64> {
                self.n += 1;
                if self.n % 3 == 0 {
                    Err(Error::InvalidInput("synthetic failure".into()))
                } else {
                    self.inner.short_eval(c)
                }
            }
            fn full_eval(&mut self, c: &HparamConfig) -> Result<f64> {
                self.inner.full_eval(c)
            }
        }
        let mut eval = Flaky {
            inner: SyntheticEvaluator::new(),
            n: 0,
        };
        let out = search(&synthetic::space(), &mut eval, &small_budget()).unwrap();
        assert_eq!(out.history.len(), 20);
        let failed: Vec<_> = out.history.iter().filter(|r| r.note.is_some()).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.realized == 0.0));
    }

    #[test]
    fn resume_skips_logged_configs() {
        let budget = small_budget();
        let mut eval = SyntheticEvaluator::new();
        let space = eval.space.clone();
        let full = search(&space, &mut eval, &budget).unwrap();

        // resume from a prefix: the first 8 + 3 records (round 1 complete)
        let prefix: Vec<ProxyRecord> = full.history[..11].to_vec();
        let mut eval2 = SyntheticEvaluator::new();
        let resumed = search_resumable(&space, &mut eval2, &budget, prefix.clone()).unwrap();
        assert_eq!(resumed.history.len(), 20);
        assert_eq!(eval2.calls_short, 0, "shorts must not be repeated");
        assert_eq!(eval2.calls_full, 9, "only rounds 2..4 run");
        // prefix preserved verbatim
        assert_eq!(&resumed.history[..11], &prefix[..]);
        // still no duplicates
        let keys: HashSet<String> = resumed.history.iter().map(|r| r.config.key()).collect();
        assert_eq!(keys.len(), resumed.history.len());
    }

    #[test]
    fn proxy_guided_beats_or_matches_random_on_the_benchmark() {
        let space = synthetic::space();
        // exhaustive scores for percentile accounting
        let mut all: Vec<f64> = (0..64u128)
            .map(|i| synthetic::score(&space, &space.config_at(i).unwrap()))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95 = all[(0.95_f64 * 63.0).floor() as usize];

        let mut proxy_hits = 0;
        let mut proxy_scores = Vec::new();
        let mut random_scores = Vec::new();
        for seed in 0..20u64 {
            let mut budget = small_budget();
            budget.seed = seed;
            let mut eval = SyntheticEvaluator::new();
            let out = search(&space, &mut eval, &budget).unwrap();
            if out.best_score >= p95 {
                proxy_hits += 1;
            }
            proxy_scores.push(out.best_score);

            let mut eval_r = SyntheticEvaluator::new();
            let base = random_search(&space, &mut eval_r, 12, seed ^ 0xabcdef).unwrap();
            assert_eq!(eval_r.calls_full, 12); // equal full-evaluation budget
            random_scores.push(base.best_score);
        }
        assert!(proxy_hits >= 18, "only {proxy_hits}/20 seeds reached p95");
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (v[9] + v[10])
        };
        let pm = median(&mut proxy_scores);
        let rm = median(&mut random_scores);
        assert!(pm >= rm, "proxy median {pm} below random median {rm}");
    }

    #[test]
    fn budget_validation() {
        let space = synthetic::space();
        let mut b = small_budget();
        b.total_configs = 63;
        assert!(b.validate(&space).is_err());
        let mut b = small_budget();
        b.top_k = 8;
        assert!(b.validate(&space).is_err());
        let mut b = small_budget();
        b.initial_samples = 17; // > M/4
        assert!(b.validate(&space).is_err());
        let mut b = small_budget();
        b.short_epochs = 100;
        assert!(b.validate(&space).is_err());
    }

    #[test]
    fn space_toml_roundtrip() {
        let space = synthetic::space();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.toml");
        space.save_toml(&path).unwrap();
        let back = HparamSpace::load_toml(&path).unwrap();
        assert_eq!(space, back);
    }

    #[test]
    fn history_jsonl_roundtrip() {
        let budget = small_budget();
        let mut eval = SyntheticEvaluator::new();
        let space = eval.space.clone();
        let out = search(&space, &mut eval, &budget).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        write_history(&path, &space, &out.history).unwrap();
        let back = read_history(&path, &space).unwrap();
        assert_eq!(back, out.history);
        // schema: every line carries the documented fields
        let text = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for field in ["round", "config", "encoding", "predicted", "realized", "fidelity", "seconds"] {
            assert!(first.get(field).is_some(), "missing {field}");
        }
    }
}
