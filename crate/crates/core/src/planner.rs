//! Exact bit-width allocation: minimize total sensitivity subject to any
//! subset of size / BOPs / latency budgets.
//!
//! One bit-width per layer, one sensitivity value per (layer, bits): a
//! multiple-choice knapsack with up to three resource constraints. [`solve`]
//! runs a depth-first branch-and-bound that is exact — its result equals
//! [`brute_force`] enumeration bit for bit, including the tie-break — while
//! pruning with objective and feasibility lower bounds plus per-layer
//! dominance filtering.
//!
//! Tie-break: among equal-objective optima, prefer the assignment whose
//! bit-width vector is lexicographically larger layer by layer (keep the
//! highest precision the budget admits). Both solvers enumerate options in
//! descending bit order, so the first optimum found is the lex-largest, and
//! leaf objectives are recomputed as plain in-layer-order sums so the two
//! paths agree exactly in floating point.
//!
//! The solver is single-threaded and deterministic; independent instances
//! may be solved in parallel.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{plan_cost, CostBudget, CostKind, CostTable, PlanCost};
use crate::error::{Error, Result};
use crate::sensitivity::SensitivityProfile;

/// One bit-width per quantizable layer plus the objective it achieves under
/// the profile it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPlan {
    pub assignment: Vec<(String, u8)>,
    pub objective: f64,
}

impl BitPlan {
    pub fn bits(&self) -> Vec<u8> {
        self.assignment.iter().map(|(_, b)| *b).collect()
    }

    pub fn bit_sum(&self) -> u64 {
        self.assignment.iter().map(|(_, b)| *b as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpInstance {
    pub profile: SensitivityProfile,
    pub table: CostTable,
    pub budget: CostBudget,
}

impl IlpInstance {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.budget.validate()?;
        if self.profile.layer_names != self.table.layer_names {
            return Err(Error::InvalidConfig(
                "profile and cost table disagree on layer names/order".into(),
            ));
        }
        if self.profile.bit_options != self.table.bit_options {
            return Err(Error::InvalidConfig(
                "profile and cost table disagree on bit options".into(),
            ));
        }
        if self.budget.latency_limit.is_some() && self.table.latency.is_none() {
            return Err(Error::InvalidConfig(
                "budget constrains latency but the cost table has no latency data".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingConstraint {
    pub kind: CostKind,
    pub min_possible: f64,
    pub limit: f64,
}

/// Why no feasible plan exists: the constraints violated even by the
/// componentwise-cheapest plan, or joint infeasibility when each constraint
/// is individually satisfiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleReport {
    pub binding: Vec<BindingConstraint>,
    pub joint_only: bool,
}

impl fmt::Display for InfeasibleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.joint_only {
            write!(
                f,
                "no plan satisfies all constraints jointly (each is individually attainable)"
            )
        } else {
            let parts: Vec<String> = self
                .binding
                .iter()
                .map(|b| {
                    format!(
                        "{} limit {} below the minimum attainable {:.6}",
                        b.kind, b.limit, b.min_possible
                    )
                })
                .collect();
            write!(f, "binding constraint(s): {}", parts.join("; "))
        }
    }
}

/// Internal dense view with options sorted by descending bit-width.
struct SolverView<'a> {
    layers: usize,
    /// option order: indices into `bit_options`, descending bits
    order: Vec<usize>,
    delta: &'a [Vec<f64>],
    constraints: Vec<(CostKind, f64, &'a [Vec<f64>])>,
    bit_options: &'a [u8],
}

impl<'a> SolverView<'a> {
    fn new(inst: &'a IlpInstance) -> Result<Self> {
        inst.validate()?;
        let mut order: Vec<usize> = (0..inst.table.bit_options.len()).collect();
        order.sort_by(|&a, &b| inst.table.bit_options[b].cmp(&inst.table.bit_options[a]));
        let mut constraints: Vec<(CostKind, f64, &[Vec<f64>])> = Vec::new();
        if let Some(limit) = inst.budget.size_limit_mb {
            constraints.push((CostKind::Size, limit, &inst.table.size_mb));
        }
        if let Some(limit) = inst.budget.bops_limit {
            constraints.push((CostKind::Bops, limit, &inst.table.bops));
        }
        if let Some(limit) = inst.budget.latency_limit {
            constraints.push((
                CostKind::Latency,
                limit,
                inst.table.latency.as_ref().expect("validated"),
            ));
        }
        Ok(SolverView {
            layers: inst.profile.layer_names.len(),
            order,
            delta: &inst.profile.delta,
            constraints,
            bit_options: &inst.table.bit_options,
        })
    }

    /// In-layer-order objective and feasibility of a complete assignment of
    /// option indices; the single shared evaluation path of both solvers.
    fn evaluate(&self, choice: &[usize]) -> (f64, bool) {
        let mut obj = 0.0;
        for (l, &j) in choice.iter().enumerate() {
            obj += self.delta[l][j];
        }
        for (_, limit, cost) in &self.constraints {
            let mut total = 0.0;
            for (l, &j) in choice.iter().enumerate() {
                total += cost[l][j];
            }
            if total > *limit {
                return (obj, false);
            }
        }
        (obj, true)
    }

    fn bits_of(&self, choice: &[usize]) -> Vec<u8> {
        choice.iter().map(|&j| self.bit_options[j]).collect()
    }
}

fn lex_greater(a: &[u8], b: &[u8]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    false
}

fn plan_from_choice(inst: &IlpInstance, choice: &[usize], objective: f64) -> BitPlan {
    BitPlan {
        assignment: inst
            .profile
            .layer_names
            .iter()
            .zip(choice)
            .map(|(name, &j)| (name.clone(), inst.table.bit_options[j]))
            .collect(),
        objective,
    }
}

fn infeasible_report(view: &SolverView) -> InfeasibleReport {
    let mut binding = Vec::new();
    for (kind, limit, cost) in &view.constraints {
        let mut min_total = 0.0;
        for l in 0..view.layers {
            min_total += cost[l].iter().cloned().fold(f64::INFINITY, f64::min);
        }
        if min_total > *limit {
            binding.push(BindingConstraint {
                kind: *kind,
                min_possible: min_total,
                limit: *limit,
            });
        }
    }
    let joint_only = binding.is_empty();
    InfeasibleReport {
        binding,
        joint_only,
    }
}

/// Exact branch-and-bound solve.
pub fn solve(inst: &IlpInstance) -> Result<BitPlan> {
    let view = SolverView::new(inst)?;
    let l = view.layers;
    let m = view.order.len();

    // per-layer admissible options in descending-bit order, after dominance
    // filtering: drop option j when some higher-bit option is no worse in
    // delta and in every active cost (the higher-bit one also wins the
    // tie-break, so the removal is lossless)
    let mut options: Vec<Vec<usize>> = Vec::with_capacity(l);
    for layer in 0..l {
        let mut keep = Vec::with_capacity(m);
        'cand: for &j in &view.order {
            for &other in &keep {
                let better_delta = view.delta[layer][other] <= view.delta[layer][j];
                let better_costs = view
                    .constraints
                    .iter()
                    .all(|(_, _, c)| c[layer][other] <= c[layer][j]);
                // `keep` holds higher-bit options only (descending scan)
                if better_delta && better_costs {
                    continue 'cand;
                }
            }
            keep.push(j);
        }
        options.push(keep);
    }

    // suffix minima for bounds
    let mut min_delta_suffix = vec![0.0; l + 1];
    for layer in (0..l).rev() {
        let best = options[layer]
            .iter()
            .map(|&j| view.delta[layer][j])
            .fold(f64::INFINITY, f64::min);
        min_delta_suffix[layer] = min_delta_suffix[layer + 1] + best;
    }
    let mut min_cost_suffix: Vec<Vec<f64>> = Vec::with_capacity(view.constraints.len());
    for (_, _, cost) in &view.constraints {
        let mut suffix = vec![0.0; l + 1];
        for layer in (0..l).rev() {
            let best = options[layer]
                .iter()
                .map(|&j| cost[layer][j])
                .fold(f64::INFINITY, f64::min);
            suffix[layer] = suffix[layer + 1] + best;
        }
        min_cost_suffix.push(suffix);
    }

    // bound slack protects exactness against summation-order rounding: a
    // bound may only skip subtrees that are strictly worse, never ties
    let slack = |x: f64| 1e-12 * (1.0 + x.abs());

    let mut best: Option<(f64, Vec<usize>, Vec<u8>)> = None;
    let mut choice = vec![0usize; l];
    let mut stack_delta = vec![0.0; l + 1];
    let mut stack_cost = vec![vec![0.0; l + 1]; view.constraints.len()];

    fn dfs(
        layer: usize,
        view: &SolverView,
        options: &[Vec<usize>],
        min_delta_suffix: &[f64],
        min_cost_suffix: &[Vec<f64>],
        choice: &mut Vec<usize>,
        stack_delta: &mut Vec<f64>,
        stack_cost: &mut Vec<Vec<f64>>,
        best: &mut Option<(f64, Vec<usize>, Vec<u8>)>,
        slack: &dyn Fn(f64) -> f64,
    ) {
        if layer == view.layers {
            let (obj, feasible) = view.evaluate(choice);
            if !feasible {
                return;
            }
            let bits = view.bits_of(choice);
            let better = match best {
                None => true,
                Some((bobj, _, bbits)) => {
                    obj < *bobj || (obj == *bobj && lex_greater(&bits, bbits))
                }
            };
            if better {
                *best = Some((obj, choice.clone(), bits));
            }
            return;
        }
        for &j in &options[layer] {
            let d = stack_delta[layer] + view.delta[layer][j];
            if let Some((bobj, _, _)) = best {
                if d + min_delta_suffix[layer + 1] > *bobj + slack(*bobj) {
                    continue;
                }
            }
            let mut ok = true;
            for (k, (_, limit, cost)) in view.constraints.iter().enumerate() {
                let c = stack_cost[k][layer] + cost[layer][j];
                if c + min_cost_suffix[k][layer + 1] > *limit + slack(*limit) {
                    ok = false;
                    break;
                }
                stack_cost[k][layer + 1] = c;
            }
            if !ok {
                continue;
            }
            stack_delta[layer + 1] = d;
            choice[layer] = j;
            dfs(
                layer + 1,
                view,
                options,
                min_delta_suffix,
                min_cost_suffix,
                choice,
                stack_delta,
                stack_cost,
                best,
                slack,
            );
        }
    }

    dfs(
        0,
        &view,
        &options,
        &min_delta_suffix,
        &min_cost_suffix,
        &mut choice,
        &mut stack_delta,
        &mut stack_cost,
        &mut best,
        &slack,
    );

    match best {
        Some((obj, choice, _)) => Ok(plan_from_choice(inst, &choice, obj)),
        None => Err(Error::Infeasible(infeasible_report(&view))),
    }
}

const BRUTE_FORCE_GUARD: f64 = 1e7;

/// Exhaustive enumeration with the identical evaluation path and tie-break;
/// the oracle `solve` is tested against. Guarded to `m^L <= 1e7`.
pub fn brute_force(inst: &IlpInstance) -> Result<BitPlan> {
    let view = SolverView::new(inst)?;
    let l = view.layers;
    let m = view.order.len();
    let space = (m as f64).powi(l as i32);
    if space > BRUTE_FORCE_GUARD {
        return Err(Error::SearchSpaceTooLarge {
            size: space,
            limit: BRUTE_FORCE_GUARD,
        });
    }

    let mut best: Option<(f64, Vec<usize>, Vec<u8>)> = None;
    // odometer over per-layer positions in descending-bit order: plans are
    // visited in lexicographically descending bit order
    let mut pos = vec![0usize; l];
    loop {
        let choice: Vec<usize> = pos.iter().map(|&p| view.order[p]).collect();
        let (obj, feasible) = view.evaluate(&choice);
        if feasible {
            let bits = view.bits_of(&choice);
            let better = match &best {
                None => true,
                Some((bobj, _, bbits)) => {
                    obj < *bobj || (obj == *bobj && lex_greater(&bits, bbits))
                }
            };
            if better {
                best = Some((obj, choice, bits));
            }
        }
        // increment odometer, most significant digit first
        let mut carry = l;
        while carry > 0 {
            let i = carry - 1;
            pos[i] += 1;
            if pos[i] < m {
                break;
            }
            pos[i] = 0;
            carry -= 1;
        }
        if carry == 0 {
            break;
        }
    }

    match best {
        Some((obj, choice, _)) => Ok(plan_from_choice(inst, &choice, obj)),
        None => Err(Error::Infeasible(infeasible_report(&view))),
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub fraction: f64,
    pub result: Result<BitPlan>,
}

/// One solve per fraction, with every active budget component set to
/// `fraction x uniform-max-bit cost`. Per-solve errors are collected and the
/// sweep continues.
pub fn budget_sweep(inst: &IlpInstance, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    inst.validate()?;
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig(
            "sweep fractions must be sorted ascending".into(),
        ));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidConfig(
            "sweep fractions must lie in (0, 1]".into(),
        ));
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let budget = scaled_budget(inst, fraction)?;
        let scaled = IlpInstance {
            profile: inst.profile.clone(),
            table: inst.table.clone(),
            budget,
        };
        out.push(SweepPoint {
            fraction,
            result: solve(&scaled),
        });
    }
    Ok(out)
}

fn scaled_budget(inst: &IlpInstance, fraction: f64) -> Result<CostBudget> {
    let mut budget = CostBudget::default();
    for kind in inst.budget.active() {
        let base = inst.table.uniform_max_cost(kind).ok_or_else(|| {
            Error::InvalidConfig(format!("cost table has no {kind} data for the sweep"))
        })?;
        let limit = Some(fraction * base);
        match kind {
            CostKind::Size => budget.size_limit_mb = limit,
            CostKind::Bops => budget.bops_limit = limit,
            CostKind::Latency => budget.latency_limit = limit,
        }
    }
    Ok(budget)
}

// ── plan file: the on-disk interface ────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: String,
    pub bits: u8,
}

/// Serialized plan:
/// `{"assignment":[{"layer":...,"bits":...}],"objective":...,"cost":{...},"budget":{...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub assignment: Vec<PlanEntry>,
    pub objective: f64,
    pub cost: PlanCost,
    pub budget: CostBudget,
}

impl PlanFile {
    pub fn new(plan: &BitPlan, table: &CostTable, budget: &CostBudget) -> Result<Self> {
        Ok(PlanFile {
            assignment: plan
                .assignment
                .iter()
                .map(|(layer, bits)| PlanEntry {
                    layer: layer.clone(),
                    bits: *bits,
                })
                .collect(),
            objective: plan.objective,
            cost: plan_cost(plan, table)?,
            budget: *budget,
        })
    }

    pub fn to_plan(&self) -> BitPlan {
        BitPlan {
            assignment: self
                .assignment
                .iter()
                .map(|e| (e.layer.clone(), e.bits))
                .collect(),
            objective: self.objective,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random instance generator shared by the unit and acceptance suites.
    pub fn random_instance(
        layers: usize,
        bit_options: &[u8],
        active_constraints: usize,
        seed: u64,
    ) -> IlpInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_names: Vec<String> = (0..layers).map(|i| format!("l{i}")).collect();
        let m = bit_options.len();
        // deltas decreasing in bits on average, but noisy
        let delta: Vec<Vec<f64>> = (0..layers)
            .map(|_| {
                let scale: f64 = rng.random_range(0.1..5.0);
                bit_options
                    .iter()
                    .map(|&b| scale * rng.random_range(0.2..1.0) / (b as f64).powi(2))
                    .collect()
            })
            .collect();
        let size_mb: Vec<Vec<f64>> = (0..layers)
            .map(|_| {
                let params: f64 = rng.random_range(1e3..1e6);
                bit_options.iter().map(|&b| params * b as f64 / 8e6).collect()
            })
            .collect();
        let bops: Vec<Vec<f64>> = (0..layers)
            .map(|_| {
                let macs: f64 = rng.random_range(1e5..1e8);
                bit_options
                    .iter()
                    .map(|&b| macs * b as f64 * 8.0 / 1e9)
                    .collect()
            })
            .collect();
        // latency is arbitrary (not monotone in bits)
        let latency: Vec<Vec<f64>> = (0..layers)
            .map(|_| (0..m).map(|_| rng.random_range(0.1..3.0)).collect())
            .collect();

        let table = CostTable {
            layer_names: layer_names.clone(),
            bit_options: bit_options.to_vec(),
            size_mb,
            bops,
            latency: Some(latency),
            activation_bits: 8,
        };
        // budgets between the cheapest and the most expensive plan
        let mut budget = CostBudget::default();
        let kinds = [CostKind::Size, CostKind::Bops, CostKind::Latency];
        for &kind in kinds.iter().take(active_constraints) {
            let mut min_total = 0.0;
            let mut max_total = 0.0;
            for l in 0..layers {
                let row: Vec<f64> = (0..m)
                    .map(|j| match kind {
                        CostKind::Size => table.size_mb[l][j],
                        CostKind::Bops => table.bops[l][j],
                        CostKind::Latency => table.latency.as_ref().unwrap()[l][j],
                    })
                    .collect();
                min_total += row.iter().cloned().fold(f64::INFINITY, f64::min);
                max_total += row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
            let t: f64 = rng.random_range(0.05..1.0);
            let limit = min_total + t * (max_total - min_total);
            match kind {
                CostKind::Size => budget.size_limit_mb = Some(limit),
                CostKind::Bops => budget.bops_limit = Some(limit),
                CostKind::Latency => budget.latency_limit = Some(limit),
            }
        }
        if active_constraints == 0 {
            // the type requires at least one limit; make it non-binding
            budget.size_limit_mb = Some(f64::INFINITY);
        }

        let profile = SensitivityProfile {
            layer_names,
            bit_options: bit_options.to_vec(),
            trace_per_param: vec![1.0; layers],
            param_counts: vec![1000; layers],
            delta,
        };
        IlpInstance {
            profile,
            table,
            budget,
        }
    }
}
