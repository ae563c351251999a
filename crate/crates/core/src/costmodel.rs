//! Per-layer, per-bit cost terms: model size, BOPs, and measured latency.
//!
//! Size and BOPs are computed from the architecture descriptor:
//!
//! ```text
//! size_mb[i][j] = param_count[i] * bits[j] / (8 * 10^6)
//! bops[i][j]    = mac_count[i] * bits[j] * activation_bits / 10^9
//! ```
//!
//! Latency is never synthesized. If a latency constraint is wanted, the user
//! supplies a measured lookup table (CSV `layer,bits,latency`, relative
//! units) covering every (quantizable layer, bit option) pair; hardware
//! measurements beat analytic estimates and we do not pretend otherwise.
//!
//! Only quantizable layers appear in the table. Non-quantizable parameters
//! (batchnorm) are reported separately at 32-bit via [`fixed_overhead`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlab::ModelDescriptor;
use crate::planner::BitPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub layer_names: Vec<String>,
    pub bit_options: Vec<u8>,
    /// `L x m` megabytes.
    pub size_mb: Vec<Vec<f64>>,
    /// `L x m` giga bit-operations.
    pub bops: Vec<Vec<f64>>,
    /// `L x m` relative latency, present only when a lookup table was given.
    pub latency: Option<Vec<Vec<f64>>>,
    pub activation_bits: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Size,
    Bops,
    Latency,
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Size => write!(f, "size"),
            CostKind::Bops => write!(f, "bops"),
            CostKind::Latency => write!(f, "latency"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBudget {
    pub size_limit_mb: Option<f64>,
    pub bops_limit: Option<f64>,
    pub latency_limit: Option<f64>,
}

impl CostBudget {
    pub fn validate(&self) -> Result<()> {
        if self.size_limit_mb.is_none() && self.bops_limit.is_none() && self.latency_limit.is_none()
        {
            return Err(Error::InvalidConfig(
                "budget needs at least one limit".into(),
            ));
        }
        for (name, v) in [
            ("size_limit_mb", self.size_limit_mb),
            ("bops_limit", self.bops_limit),
            ("latency_limit", self.latency_limit),
        ] {
            if let Some(x) = v {
                if !(x > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be > 0, got {x}")));
                }
            }
        }
        Ok(())
    }

    pub fn limit(&self, kind: CostKind) -> Option<f64> {
        match kind {
            CostKind::Size => self.size_limit_mb,
            CostKind::Bops => self.bops_limit,
            CostKind::Latency => self.latency_limit,
        }
    }

    pub fn active(&self) -> Vec<CostKind> {
        [CostKind::Size, CostKind::Bops, CostKind::Latency]
            .into_iter()
            .filter(|k| self.limit(*k).is_some())
            .collect()
    }
}

/// Measured per-(layer, bits) latency lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyTable {
    entries: HashMap<(String, u8), f64>,
}

impl LatencyTable {
    pub fn insert(&mut self, layer: &str, bits: u8, latency: f64) {
        self.entries.insert((layer.to_string(), bits), latency);
    }

    pub fn get(&self, layer: &str, bits: u8) -> Option<f64> {
        self.entries.get(&(layer.to_string(), bits)).copied()
    }

    /// CSV with header `layer,bits,latency`.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["layer", "bits", "latency"] {
            return Err(Error::InvalidInput(format!(
                "latency CSV must have header `layer,bits,latency`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut table = LatencyTable::default();
        for record in rdr.records() {
            let r = record?;
            let bits: u8 = r[1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad bits value `{}`", &r[1])))?;
            let latency: f64 = r[2]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad latency value `{}`", &r[2])))?;
            table.insert(&r[0], bits, latency);
        }
        Ok(table)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["layer", "bits", "latency"])?;
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            wtr.write_record([&k.0, &k.1.to_string(), &self.entries[k].to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Build the per-layer, per-bit cost table for the quantizable layers of a
/// descriptor. A latency table, when given, must cover every pair.
pub fn build_cost_table(
    descriptor: &ModelDescriptor,
    bit_options: &[u8],
    activation_bits: u8,
    latency: Option<&LatencyTable>,
) -> Result<CostTable> {
    descriptor.validate()?;
    if bit_options.is_empty() {
        return Err(Error::InvalidConfig("bit_options must be non-empty".into()));
    }
    let layers: Vec<_> = descriptor.quantizable().collect();
    if layers.is_empty() {
        return Err(Error::InvalidConfig(
            "descriptor has no quantizable layers".into(),
        ));
    }
    let mut size_mb = Vec::with_capacity(layers.len());
    let mut bops = Vec::with_capacity(layers.len());
    let mut lat_rows = Vec::with_capacity(layers.len());
    let mut missing = Vec::new();
    for l in &layers {
        let mut srow = Vec::with_capacity(bit_options.len());
        let mut brow = Vec::with_capacity(bit_options.len());
        let mut lrow = Vec::with_capacity(bit_options.len());
        for &b in bit_options {
            srow.push(l.param_count as f64 * b as f64 / 8e6);
            brow.push(l.mac_count as f64 * b as f64 * activation_bits as f64 / 1e9);
            if let Some(t) = latency {
                match t.get(&l.name, b) {
                    Some(v) => lrow.push(v),
                    None => missing.push(format!("({}, {b})", l.name)),
                }
            }
        }
        size_mb.push(srow);
        bops.push(brow);
        lat_rows.push(lrow);
    }
    if !missing.is_empty() {
        return Err(Error::MissingLatency(missing.join(", ")));
    }
    Ok(CostTable {
        layer_names: layers.iter().map(|l| l.name.clone()).collect(),
        bit_options: bit_options.to_vec(),
        size_mb,
        bops,
        latency: latency.map(|_| lat_rows),
        activation_bits,
    })
}

impl CostTable {
    pub fn num_layers(&self) -> usize {
        self.layer_names.len()
    }

    pub fn bit_index(&self, bits: u8) -> Result<usize> {
        self.bit_options
            .iter()
            .position(|&b| b == bits)
            .ok_or_else(|| {
                Error::InvalidInput(format!("bits {bits} not in table options {:?}", self.bit_options))
            })
    }

    pub fn cost(&self, kind: CostKind, layer: usize, bit_index: usize) -> Option<f64> {
        match kind {
            CostKind::Size => Some(self.size_mb[layer][bit_index]),
            CostKind::Bops => Some(self.bops[layer][bit_index]),
            CostKind::Latency => self.latency.as_ref().map(|l| l[layer][bit_index]),
        }
    }

    /// Total cost of the uniform plan at the largest bit option.
    pub fn uniform_max_cost(&self, kind: CostKind) -> Option<f64> {
        let j = self
            .bit_options
            .iter()
            .enumerate()
            .max_by_key(|(_, &b)| b)
            .map(|(i, _)| i)?;
        let mut total = 0.0;
        for i in 0..self.num_layers() {
            total += self.cost(kind, i, j)?;
        }
        Some(total)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    pub size_mb: f64,
    pub bops: f64,
    pub latency: Option<f64>,
}

/// Componentwise cost sums of a plan over the table, in layer order.
pub fn plan_cost(plan: &BitPlan, table: &CostTable) -> Result<PlanCost> {
    if plan.assignment.len() != table.num_layers() {
        return Err(Error::shape(
            "plan_cost",
            table.num_layers(),
            plan.assignment.len(),
        ));
    }
    let mut size_mb = 0.0;
    let mut bops = 0.0;
    let mut latency = table.latency.as_ref().map(|_| 0.0);
    for (i, (layer, bits)) in plan.assignment.iter().enumerate() {
        if layer != &table.layer_names[i] {
            return Err(Error::InvalidInput(format!(
                "plan layer `{layer}` does not match table layer `{}` at position {i}",
                table.layer_names[i]
            )));
        }
        let j = table.bit_index(*bits)?;
        size_mb += table.size_mb[i][j];
        bops += table.bops[i][j];
        if let (Some(total), Some(rows)) = (latency.as_mut(), table.latency.as_ref()) {
            *total += rows[i][j];
        }
    }
    Ok(PlanCost {
        size_mb,
        bops,
        latency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlack {
    pub kind: CostKind,
    pub used: f64,
    pub limit: f64,
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub constraints: Vec<ConstraintSlack>,
    pub feasible: bool,
}

/// Per-constraint slack of a plan against a budget.
pub fn check_budget(
    plan: &BitPlan,
    table: &CostTable,
    budget: &CostBudget,
) -> Result<FeasibilityReport> {
    budget.validate()?;
    let cost = plan_cost(plan, table)?;
    let mut constraints = Vec::new();
    let mut entry = |kind: CostKind, used: Option<f64>, limit: Option<f64>| -> Result<()> {
        if let Some(limit) = limit {
            let used = used.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "budget constrains {kind} but the cost table has no {kind} data"
                ))
            })?;
            constraints.push(ConstraintSlack {
                kind,
                used,
                limit,
                slack: limit - used,
                satisfied: used <= limit,
            });
        }
        Ok(())
    };
    entry(CostKind::Size, Some(cost.size_mb), budget.size_limit_mb)?;
    entry(CostKind::Bops, Some(cost.bops), budget.bops_limit)?;
    entry(CostKind::Latency, cost.latency, budget.latency_limit)?;
    let feasible = constraints.iter().all(|c| c.satisfied);
    Ok(FeasibilityReport {
        constraints,
        feasible,
    })
}

/// Non-quantizable parameters reported at 32-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedCost {
    pub param_count: usize,
    pub size_mb: f64,
}

pub fn fixed_overhead(descriptor: &ModelDescriptor) -> FixedCost {
    let param_count: usize = descriptor
        .layers
        .iter()
        .filter(|l| !l.quantizable)
        .map(|l| l.param_count)
        .sum();
    FixedCost {
        param_count,
        size_mb: param_count as f64 * 32.0 / 8e6,
    }
}

/// Budget presets as fractions of the uniform-max-bit cost. The levels are
/// configuration knobs; these defaults bracket typical hardware tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetLevel {
    High,
    Medium,
    Low,
}

impl BudgetLevel {
    pub fn default_fraction(&self) -> f64 {
        match self {
            BudgetLevel::High => 0.9,
            BudgetLevel::Medium => 0.7,
            BudgetLevel::Low => 0.55,
        }
    }
}

/// Budget with `kind = fraction * uniform-max-bit cost`, other kinds free.
pub fn budget_from_fraction(table: &CostTable, kind: CostKind, fraction: f64) -> Result<CostBudget> {
    if !(fraction > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "budget fraction must be > 0, got {fraction}"
        )));
    }
    let base = table.uniform_max_cost(kind).ok_or_else(|| {
        Error::InvalidConfig(format!("cost table has no {kind} data for budget level"))
    })?;
    let mut budget = CostBudget::default();
    match kind {
        CostKind::Size => budget.size_limit_mb = Some(fraction * base),
        CostKind::Bops => budget.bops_limit = Some(fraction * base),
        CostKind::Latency => budget.latency_limit = Some(fraction * base),
    }
    Ok(budget)
}

/// Reference architecture descriptors: per-layer parameter and MAC counts at
/// the 224x224 ImageNet input shape, torchvision layer naming. Parameter
/// counts are weights only (convolutions are bias-free, the classifier bias
/// is not quantized); batchnorm layers carry their own counts but are not
/// quantizable.
pub mod reference {
    use crate::netlab::{LayerKind, LayerSpec, ModelDescriptor};

    fn conv(name: &str, params: usize, out_hw: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            param_count: params,
            mac_count: params * out_hw,
            quantizable: true,
        }
    }

    fn bn(name: &str, channels: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Batchnorm,
            param_count: 2 * channels,
            mac_count: 0,
            quantizable: false,
        }
    }

    fn fc(name: &str, inputs: usize, outputs: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense,
            param_count: inputs * outputs,
            mac_count: inputs * outputs,
            quantizable: true,
        }
    }

    pub fn resnet18() -> ModelDescriptor {
        let mut layers = vec![conv("conv1", 3 * 64 * 49, 112 * 112), bn("bn1", 64)];
        // (in, width, spatial out after the stride-2 entry conv, blocks)
        let stages: [(usize, usize, usize, usize); 4] = [
            (64, 64, 56, 2),
            (64, 128, 28, 2),
            (128, 256, 14, 2),
            (256, 512, 7, 2),
        ];
        for (s, &(in_ch, width, hw, blocks)) in stages.iter().enumerate() {
            let stage = s + 1;
            let out_hw = hw * hw;
            for b in 0..blocks {
                let prefix = format!("layer{stage}.{b}");
                let cin = if b == 0 { in_ch } else { width };
                layers.push(conv(&format!("{prefix}.conv1"), cin * width * 9, out_hw));
                layers.push(bn(&format!("{prefix}.bn1"), width));
                layers.push(conv(&format!("{prefix}.conv2"), width * width * 9, out_hw));
                layers.push(bn(&format!("{prefix}.bn2"), width));
                if b == 0 && cin != width {
                    layers.push(conv(
                        &format!("{prefix}.downsample"),
                        cin * width,
                        out_hw,
                    ));
                    layers.push(bn(&format!("{prefix}.downsample_bn"), width));
                }
            }
        }
        layers.push(fc("fc", 512, 1000));
        ModelDescriptor { layers }
    }

    pub fn resnet50() -> ModelDescriptor {
        let mut layers = vec![conv("conv1", 3 * 64 * 49, 112 * 112), bn("bn1", 64)];
        // (entry in_ch, bottleneck width, spatial out of conv2/conv3, blocks)
        let stages: [(usize, usize, usize, usize); 4] = [
            (64, 64, 56, 3),
            (256, 128, 28, 4),
            (512, 256, 14, 6),
            (1024, 512, 7, 3),
        ];
        for (s, &(in_ch, width, hw, blocks)) in stages.iter().enumerate() {
            let stage = s + 1;
            let expansion = width * 4;
            let out_hw = hw * hw;
            // conv1 of the entry block runs at the incoming resolution
            // (the stride-2 sits in conv2)
            let entry_hw = if stage == 1 { 56 * 56 } else { hw * 2 * (hw * 2) };
            for b in 0..blocks {
                let prefix = format!("layer{stage}.{b}");
                let cin = if b == 0 { in_ch } else { expansion };
                let conv1_hw = if b == 0 { entry_hw } else { out_hw };
                layers.push(conv(&format!("{prefix}.conv1"), cin * width, conv1_hw));
                layers.push(bn(&format!("{prefix}.bn1"), width));
                layers.push(conv(&format!("{prefix}.conv2"), width * width * 9, out_hw));
                layers.push(bn(&format!("{prefix}.bn2"), width));
                layers.push(conv(&format!("{prefix}.conv3"), width * expansion, out_hw));
                layers.push(bn(&format!("{prefix}.bn3"), expansion));
                if b == 0 {
                    layers.push(conv(&format!("{prefix}.downsample"), cin * expansion, out_hw));
                    layers.push(bn(&format!("{prefix}.downsample_bn"), expansion));
                }
            }
        }
        layers.push(fc("fc", 2048, 1000));
        ModelDescriptor { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::BitPlan;

    fn uniform_plan(table: &CostTable, bits: u8) -> BitPlan {
        BitPlan {
            assignment: table
                .layer_names
                .iter()
                .map(|l| (l.clone(), bits))
                .collect(),
            objective: 0.0,
        }
    }

    #[test]
    fn resnet18_totals() {
        let d = reference::resnet18();
        d.validate().unwrap();
        let params: usize = d.quantizable().map(|l| l.param_count).sum();
        let macs: usize = d.quantizable().map(|l| l.mac_count).sum();
        assert_eq!(params, 11_678_912);
        assert_eq!(macs, 1_814_073_344);
        assert_eq!(d.quantizable().count(), 21);
    }

    #[test]
    fn resnet50_totals() {
        let d = reference::resnet50();
        d.validate().unwrap();
        let params: usize = d.quantizable().map(|l| l.param_count).sum();
        let macs: usize = d.quantizable().map(|l| l.mac_count).sum();
        assert_eq!(params, 25_502_912);
        assert_eq!(macs, 4_089_184_256);
        assert_eq!(d.quantizable().count(), 54);
    }

    #[test]
    fn uniform_sizes_and_bops_match_reported_figures() {
        // paper-reported: (size8, size4, bops8, bops4) with INT4 rows using
        // 4-bit activations as well
        let cases = [
            (reference::resnet18(), 11.2, 5.6, 114.0, 28.0),
            (reference::resnet50(), 24.5, 13.1, 247.0, 67.0),
        ];
        for (d, s8, s4, b8, b4) in cases {
            let t8 = build_cost_table(&d, &[8], 8, None).unwrap();
            let t4 = build_cost_table(&d, &[4], 4, None).unwrap();
            let size8 = t8.uniform_max_cost(CostKind::Size).unwrap();
            let size4 = t4.uniform_max_cost(CostKind::Size).unwrap();
            let bops8 = t8.uniform_max_cost(CostKind::Bops).unwrap();
            let bops4 = t4.uniform_max_cost(CostKind::Bops).unwrap();
            assert!((size8 - s8).abs() / s8 < 0.05, "{size8} vs {s8}");
            assert!((size4 - s4).abs() / s4 < 0.05, "{size4} vs {s4}");
            assert!((bops8 - b8).abs() / b8 < 0.10, "{bops8} vs {b8}");
            assert!((bops4 - b4).abs() / b4 < 0.10, "{bops4} vs {b4}");
        }
    }

    #[test]
    fn table_formulas_are_exact() {
        let d = reference::resnet18();
        let t = build_cost_table(&d, &[2, 4, 8], 8, None).unwrap();
        for (i, l) in d.quantizable().enumerate() {
            for (j, &b) in t.bit_options.iter().enumerate() {
                assert_eq!(t.size_mb[i][j], l.param_count as f64 * b as f64 / 8e6);
                assert_eq!(t.bops[i][j], l.mac_count as f64 * b as f64 * 8.0 / 1e9);
                assert!(l.param_count == 0 || t.size_mb[i][j] > 0.0);
            }
        }
    }

    #[test]
    fn plan_cost_sums_columns_for_uniform_plans() {
        let d = reference::resnet18();
        let t = build_cost_table(&d, &[4, 8], 8, None).unwrap();
        for (j, &bits) in t.bit_options.iter().enumerate() {
            let cost = plan_cost(&uniform_plan(&t, bits), &t).unwrap();
            let col_size: f64 = (0..t.num_layers()).map(|i| t.size_mb[i][j]).sum();
            let col_bops: f64 = (0..t.num_layers()).map(|i| t.bops[i][j]).sum();
            assert_eq!(cost.size_mb, col_size);
            assert_eq!(cost.bops, col_bops);
        }
    }

    #[test]
    fn random_plan_on_resnet50_matches_recomputation() {
        let d = reference::resnet50();
        let t = build_cost_table(&d, &[2, 4, 8], 8, None).unwrap();
        let mut s = 7u64;
        let assignment: Vec<(String, u8)> = t
            .layer_names
            .iter()
            .map(|l| {
                s = crate::seeds::splitmix64(s);
                (l.clone(), t.bit_options[(s % 3) as usize])
            })
            .collect();
        let plan = BitPlan {
            assignment: assignment.clone(),
            objective: 0.0,
        };
        let cost = plan_cost(&plan, &t).unwrap();
        // spreadsheet-style recomputation straight from the descriptor
        let mut size = 0.0;
        let mut bops = 0.0;
        for (l, (_, bits)) in d.quantizable().zip(&assignment) {
            size += l.param_count as f64 * *bits as f64 / 8e6;
            bops += l.mac_count as f64 * *bits as f64 * 8.0 / 1e9;
        }
        assert!((cost.size_mb - size).abs() < 1e-9);
        assert!((cost.bops - bops).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_bits_per_layer() {
        let d = reference::resnet18();
        let t = build_cost_table(&d, &[2, 4, 8], 8, None).unwrap();
        for i in 0..t.num_layers() {
            for j in 1..t.bit_options.len() {
                assert!(t.size_mb[i][j] >= t.size_mb[i][j - 1]);
                assert!(t.bops[i][j] >= t.bops[i][j - 1]);
            }
        }
    }

    #[test]
    fn budget_checking_reports_slack() {
        let d = reference::resnet18();
        let t = build_cost_table(&d, &[4, 8], 8, None).unwrap();
        let uniform8 = uniform_plan(&t, 8);
        let cost8 = plan_cost(&uniform8, &t).unwrap();

        // budget equal to the uniform-8 cost: feasible with zero slack
        let budget = CostBudget {
            size_limit_mb: Some(cost8.size_mb),
            ..Default::default()
        };
        let report = check_budget(&uniform8, &t, &budget).unwrap();
        assert!(report.feasible);
        assert_eq!(report.constraints[0].slack, 0.0);

        // size limit below the all-minimum-bits plan: infeasible for any plan
        let min4 = plan_cost(&uniform_plan(&t, 4), &t).unwrap();
        let impossible = CostBudget {
            size_limit_mb: Some(min4.size_mb * 0.5),
            ..Default::default()
        };
        let report4 = check_budget(&uniform_plan(&t, 4), &t, &impossible).unwrap();
        assert!(!report4.feasible);
    }

    #[test]
    fn latency_requires_full_coverage() {
        let d = crate::netlab::Network::mlp(4, &[3], 2, crate::netlab::Act::Tanh)
            .unwrap()
            .descriptor();
        let mut lat = LatencyTable::default();
        lat.insert("fc1", 4, 1.0);
        lat.insert("fc1", 8, 2.0);
        lat.insert("fc2", 4, 0.5);
        // (fc2, 8) missing
        let err = build_cost_table(&d, &[4, 8], 8, Some(&lat)).unwrap_err();
        assert!(matches!(err, Error::MissingLatency(ref s) if s.contains("fc2")));

        lat.insert("fc2", 8, 1.0);
        let t = build_cost_table(&d, &[4, 8], 8, Some(&lat)).unwrap();
        assert_eq!(t.latency.as_ref().unwrap()[0][1], 2.0);
    }

    #[test]
    fn latency_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lat.csv");
        let mut lat = LatencyTable::default();
        lat.insert("conv1", 4, 0.75);
        lat.insert("conv1", 8, 1.5);
        lat.save_csv(&path).unwrap();
        assert_eq!(LatencyTable::load_csv(&path).unwrap(), lat);
    }

    #[test]
    fn fixed_overhead_counts_batchnorm_at_32_bit() {
        let d = reference::resnet18();
        let f = fixed_overhead(&d);
        assert_eq!(f.param_count, 9_600);
        assert!((f.size_mb - 9_600.0 * 4.0 / 1e6).abs() < 1e-12);
    }

    #[test]
    fn budget_levels_scale_uniform_max() {
        let d = reference::resnet18();
        let t = build_cost_table(&d, &[4, 8], 8, None).unwrap();
        let full = t.uniform_max_cost(CostKind::Size).unwrap();
        let b = budget_from_fraction(&t, CostKind::Size, BudgetLevel::Medium.default_fraction())
            .unwrap();
        assert!((b.size_limit_mb.unwrap() - 0.7 * full).abs() < 1e-12);
        assert!(b.bops_limit.is_none());
    }
}
