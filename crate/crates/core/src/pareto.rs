//! Sensitivity/cost trade-off frontier and search-space accounting.
//!
//! The frontier procedure seeds from exact ILP solves — a budget sweep plus
//! the unconstrained optimum and one tight-budget solve per objective (the
//! frontier endpoints) — then expands each seed by a breadth-limited local
//! search of single-layer bit changes and keeps the non-dominated subset.
//!
//! Dominance is non-strict in every tracked objective with at least one
//! strict improvement; points with identical objective vectors collapse to
//! the lexicographically-highest bit assignment.
//!
//! [`bit_space_size`] and [`schedule_space_size`] give the exact sizes of
//! the two search spaces a planner would otherwise face: `m^L` bit
//! assignments, and the ordered-set-partition count
//! `sum_{i=1..L} i! * S(L, i)` (an ordered Bell number, >= L!) of
//! progressive fine-tuning schedules. Both in arbitrary precision; they are
//! reported, not searched.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use num_bigint::BigUint;

use crate::costmodel::{plan_cost, CostBudget, CostKind};
use crate::error::{Error, Result};
use crate::planner::{solve, BindingConstraint, BitPlan, IlpInstance, InfeasibleReport};

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub plan: BitPlan,
    pub perturbation: f64,
    pub size_mb: f64,
    pub bops: f64,
    pub latency: Option<f64>,
}

impl FrontierPoint {
    fn objective_value(&self, kind: CostKind) -> Option<f64> {
        match kind {
            CostKind::Size => Some(self.size_mb),
            CostKind::Bops => Some(self.bops),
            CostKind::Latency => self.latency,
        }
    }
}

#[derive(Debug)]
pub struct Frontier {
    /// Non-dominated points sorted by perturbation ascending.
    pub points: Vec<FrontierPoint>,
    /// Per-sweep-solve failures (e.g. infeasible fractions).
    pub diagnostics: Vec<String>,
}

/// Explore the perturbation-vs-cost frontier.
///
/// The candidate pool is: ILP solutions with every objective budgeted at
/// `fraction x uniform-max cost` for each sweep fraction, the unconstrained
/// perturbation optimum, one cost-minimal solve per objective, and every
/// plan within `local_moves` single-layer bit changes of those seeds. The
/// instance's own budget is ignored here; budgets re-enter in [`select`].
pub fn frontier(
    inst: &IlpInstance,
    objectives: &[CostKind],
    sweep_fractions: &[f64],
    local_moves: usize,
) -> Result<Frontier> {
    inst.profile.validate()?;
    if objectives.is_empty() {
        return Err(Error::InvalidConfig(
            "frontier needs at least one cost objective".into(),
        ));
    }
    let mut objectives: Vec<CostKind> = {
        let mut seen = Vec::new();
        for &k in objectives {
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        seen
    };
    objectives.sort_by_key(|k| *k as u8);
    if objectives.contains(&CostKind::Latency) && inst.table.latency.is_none() {
        return Err(Error::InvalidConfig(
            "latency objective requires a latency table".into(),
        ));
    }
    if sweep_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidConfig(
            "sweep fractions must lie in (0, 1]".into(),
        ));
    }

    let mut diagnostics = Vec::new();
    let mut seeds: Vec<BitPlan> = Vec::new();

    // unconstrained perturbation optimum: per-layer argmin delta, ties to
    // the higher bit-width (options scanned in descending bit order)
    seeds.push(unconstrained_optimum(inst));

    // tight cost-minimal solve per objective: the frontier endpoint with the
    // smallest achievable cost in that objective
    for &kind in &objectives {
        match solve_with_limits(inst, &[(kind, min_possible_cost(inst, kind)?)]) {
            Ok(plan) => seeds.push(plan),
            Err(e) => diagnostics.push(format!("endpoint solve ({kind}): {e}")),
        }
    }

    // budget sweep across the requested fractions, all objectives limited
    for &fraction in sweep_fractions {
        let mut limits = Vec::new();
        for &kind in &objectives {
            let base = inst
                .table
                .uniform_max_cost(kind)
                .ok_or_else(|| Error::InvalidConfig(format!("cost table has no {kind} data")))?;
            limits.push((kind, fraction * base));
        }
        match solve_with_limits(inst, &limits) {
            Ok(plan) => seeds.push(plan),
            Err(e) => diagnostics.push(format!("sweep fraction {fraction}: {e}")),
        }
    }

    // breadth-limited local expansion: single-layer bit changes
    let m = inst.table.bit_options.len();
    let l = inst.profile.layer_names.len();
    let mut pool: HashSet<Vec<u8>> = HashSet::new();
    let mut queue: VecDeque<(Vec<u8>, usize)> = VecDeque::new();
    for s in &seeds {
        let bits = s.bits();
        if pool.insert(bits.clone()) {
            queue.push_back((bits, 0));
        }
    }
    while let Some((bits, depth)) = queue.pop_front() {
        if depth == local_moves {
            continue;
        }
        for layer in 0..l {
            for j in 0..m {
                let b = inst.table.bit_options[j];
                if b == bits[layer] {
                    continue;
                }
                let mut next = bits.clone();
                next[layer] = b;
                if pool.insert(next.clone()) {
                    queue.push_back((next, depth + 1));
                }
            }
        }
    }

    // evaluate the pool
    let mut points: Vec<FrontierPoint> = Vec::with_capacity(pool.len());
    for bits in pool {
        points.push(evaluate_bits(inst, &bits)?);
    }

    let mut points = non_dominated(points, &objectives);
    points.sort_by(|a, b| {
        a.perturbation
            .partial_cmp(&b.perturbation)
            .unwrap()
            .then(a.size_mb.partial_cmp(&b.size_mb).unwrap())
            .then(a.bops.partial_cmp(&b.bops).unwrap())
            .then(b.plan.bits().cmp(&a.plan.bits()))
    });
    Ok(Frontier {
        points,
        diagnostics,
    })
}

fn unconstrained_optimum(inst: &IlpInstance) -> BitPlan {
    let mut order: Vec<usize> = (0..inst.table.bit_options.len()).collect();
    order.sort_by(|&a, &b| inst.table.bit_options[b].cmp(&inst.table.bit_options[a]));
    let mut assignment = Vec::with_capacity(inst.profile.layer_names.len());
    let mut objective = 0.0;
    for (layer, name) in inst.profile.layer_names.iter().enumerate() {
        let mut best = order[0];
        for &j in &order[1..] {
            if inst.profile.delta[layer][j] < inst.profile.delta[layer][best] {
                best = j;
            }
        }
        objective += inst.profile.delta[layer][best];
        assignment.push((name.clone(), inst.table.bit_options[best]));
    }
    BitPlan {
        assignment,
        objective,
    }
}

fn min_possible_cost(inst: &IlpInstance, kind: CostKind) -> Result<f64> {
    let l = inst.profile.layer_names.len();
    let m = inst.table.bit_options.len();
    let mut total = 0.0;
    for layer in 0..l {
        let mut best = f64::INFINITY;
        for j in 0..m {
            let c = inst
                .table
                .cost(kind, layer, j)
                .ok_or_else(|| Error::InvalidConfig(format!("cost table has no {kind} data")))?;
            best = best.min(c);
        }
        total += best;
    }
    Ok(total)
}

fn solve_with_limits(inst: &IlpInstance, limits: &[(CostKind, f64)]) -> Result<BitPlan> {
    let mut budget = CostBudget::default();
    for &(kind, limit) in limits {
        match kind {
            CostKind::Size => budget.size_limit_mb = Some(limit),
            CostKind::Bops => budget.bops_limit = Some(limit),
            CostKind::Latency => budget.latency_limit = Some(limit),
        }
    }
    solve(&IlpInstance {
        profile: inst.profile.clone(),
        table: inst.table.clone(),
        budget,
    })
}

fn evaluate_bits(inst: &IlpInstance, bits: &[u8]) -> Result<FrontierPoint> {
    let mut objective = 0.0;
    let mut assignment = Vec::with_capacity(bits.len());
    for (layer, (&b, name)) in bits.iter().zip(&inst.profile.layer_names).enumerate() {
        let j = inst.table.bit_index(b)?;
        objective += inst.profile.delta[layer][j];
        assignment.push((name.clone(), b));
    }
    let plan = BitPlan {
        assignment,
        objective,
    };
    let cost = plan_cost(&plan, &inst.table)?;
    Ok(FrontierPoint {
        perturbation: objective,
        size_mb: cost.size_mb,
        bops: cost.bops,
        latency: cost.latency,
        plan,
    })
}

/// `a` dominates `b`: no worse in perturbation and every tracked objective,
/// strictly better in at least one.
fn dominates(a: &FrontierPoint, b: &FrontierPoint, objectives: &[CostKind]) -> bool {
    let mut strict = false;
    let pairs = std::iter::once((a.perturbation, b.perturbation)).chain(
        objectives
            .iter()
            .map(|&k| (a.objective_value(k).unwrap(), b.objective_value(k).unwrap())),
    );
    for (x, y) in pairs {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

fn non_dominated(points: Vec<FrontierPoint>, objectives: &[CostKind]) -> Vec<FrontierPoint> {
    // collapse exact objective-vector ties to the lex-highest bit plan
    let mut unique: Vec<FrontierPoint> = Vec::with_capacity(points.len());
    'outer: for p in points {
        for q in unique.iter_mut() {
            let equal = p.perturbation == q.perturbation
                && objectives
                    .iter()
                    .all(|&k| p.objective_value(k) == q.objective_value(k));
            if equal {
                if p.plan.bits() > q.plan.bits() {
                    *q = p;
                }
                continue 'outer;
            }
        }
        unique.push(p);
    }
    let keep: Vec<bool> = unique
        .iter()
        .map(|p| !unique.iter().any(|q| dominates(q, p, objectives)))
        .collect();
    unique
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Pick the deployment plan from a frontier: among budget-feasible points,
/// the one with the largest total bit-width (highest precision the budget
/// admits); ties fall to lower perturbation, then lexicographically higher
/// bits.
pub fn select(points: &[FrontierPoint], budget: &CostBudget) -> Result<BitPlan> {
    budget.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidInput("frontier is empty".into()));
    }
    let feasible = |p: &FrontierPoint| -> Result<bool> {
        for kind in budget.active() {
            let limit = budget.limit(kind).unwrap();
            let value = p.objective_value(kind).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "budget constrains {kind} but frontier points carry no {kind} value"
                ))
            })?;
            if value > limit {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let mut best: Option<&FrontierPoint> = None;
    for p in points {
        if !feasible(p)? {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (ps, bs) = (p.plan.bit_sum(), b.plan.bit_sum());
                ps > bs
                    || (ps == bs && p.perturbation < b.perturbation)
                    || (ps == bs
                        && p.perturbation == b.perturbation
                        && p.plan.bits() > b.plan.bits())
            }
        };
        if better {
            best = Some(p);
        }
    }
    match best {
        Some(p) => Ok(p.plan.clone()),
        None => {
            let mut binding = Vec::new();
            for kind in budget.active() {
                let limit = budget.limit(kind).unwrap();
                let min_over_frontier = points
                    .iter()
                    .filter_map(|p| p.objective_value(kind))
                    .fold(f64::INFINITY, f64::min);
                if min_over_frontier > limit {
                    binding.push(BindingConstraint {
                        kind,
                        min_possible: min_over_frontier,
                        limit,
                    });
                }
            }
            let joint_only = binding.is_empty();
            Err(Error::Infeasible(InfeasibleReport {
                binding,
                joint_only,
            }))
        }
    }
}

// ── search-space accounting ─────────────────────────────────────────────────

/// `m^L`: the number of per-layer bit assignments.
pub fn bit_space_size(m: u64, layers: u64) -> BigUint {
    BigUint::from(m).pow(layers as u32)
}

pub fn factorial(n: u64) -> BigUint {
    let mut acc = BigUint::from(1u32);
    for i in 2..=n {
        acc *= i;
    }
    acc
}

/// Stirling numbers of the second kind `S(n, k)` for a fixed `n`, all `k`.
fn stirling_row(n: u64) -> Vec<BigUint> {
    // S(n, k) = k*S(n-1, k) + S(n-1, k-1), S(0, 0) = 1
    let mut row = vec![BigUint::from(1u32)]; // n = 0: [S(0,0)]
    for _ in 1..=n {
        let mut next = vec![BigUint::from(0u32); row.len() + 1];
        for (k, v) in row.iter().enumerate() {
            // v = S(n-1, k)
            next[k] += v * k;
            next[k + 1] += v;
        }
        row = next;
    }
    row
}

/// Ordered Bell (Fubini) number: the count of ordered set partitions of `L`
/// items, `sum_{i=1..L} i! * S(L, i)`. Grows past `L!`, hence exhaustive
/// schedule search is hopeless and only the count is reported.
pub fn schedule_space_size(layers: u64) -> BigUint {
    let row = stirling_row(layers);
    let mut total = BigUint::from(0u32);
    for i in 1..=layers {
        total += factorial(i) * &row[i as usize];
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceCount {
    pub bit_space: BigUint,
    pub schedule_space: BigUint,
}

impl SpaceCount {
    pub fn new(m: u64, layers: u64) -> Self {
        SpaceCount {
            bit_space: bit_space_size(m, layers),
            schedule_space: schedule_space_size(layers),
        }
    }

    /// Decimal strings; the counts overflow every fixed-width integer fast.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "bit_space": self.bit_space.to_string(),
            "schedule_space": self.schedule_space.to_string(),
        })
    }
}

// ── frontier CSV ────────────────────────────────────────────────────────────

/// Plot-data CSV: `perturbation,size_mb,bops,latency,bits_csv`, one row per
/// frontier point, bit-widths comma-joined in layer order.
pub fn write_frontier_csv(points: &[FrontierPoint], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["perturbation", "size_mb", "bops", "latency", "bits_csv"])?;
    for p in points {
        wtr.write_record([
            p.perturbation.to_string(),
            p.size_mb.to_string(),
            p.bops.to_string(),
            p.latency.map(|l| l.to_string()).unwrap_or_default(),
            p.plan
                .bits()
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub perturbation: f64,
    pub size_mb: f64,
    pub bops: f64,
    pub latency: Option<f64>,
    pub bits: Vec<u8>,
}

pub fn read_frontier_csv(path: &Path) -> Result<Vec<FrontierRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let r = record?;
        let parse = |i: usize| -> Result<f64> {
            r[i].parse()
                .map_err(|_| Error::InvalidInput(format!("bad float `{}` in frontier CSV", &r[i])))
        };
        rows.push(FrontierRow {
            perturbation: parse(0)?,
            size_mb: parse(1)?,
            bops: parse(2)?,
            latency: if r[3].is_empty() { None } else { Some(parse(3)?) },
            bits: r[4]
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad bits `{s}`")))
                })
                .collect::<Result<Vec<u8>>>()?,
        });
    }
    Ok(rows)
}
