//! Implementations of the pipeline subcommands.

use std::path::{Path, PathBuf};

use mixbit_core::costmodel::{
    self, budget_from_fraction, BudgetLevel, CostBudget, CostKind, CostTable, LatencyTable,
};
use mixbit_core::modelquant::{apply_plan, fold_network, quantize_params};
use mixbit_core::netlab::{self, Dataset, Network, ParamVector, TrainSchedule};
use mixbit_core::pareto::{self, SpaceCount};
use mixbit_core::planner::{self, BitPlan, IlpInstance, PlanFile};
use mixbit_core::quantizer::{ClipMethod, Granularity, Scheme};
use mixbit_core::sensitivity::{self, ProbeDistribution, ProfileConfig, TraceEstimate};
use mixbit_core::seeds;
use mixbit_core::{Error, ModelDescriptor, Result, SensitivityProfile};

use crate::errors::{require_file, CliError};

/// Write the artifact's sibling metadata file; timestamps live only here so
/// artifacts themselves stay byte-identical under reruns.
pub fn write_meta(artifact: &Path, command: &str) -> Result<()> {
    let meta = serde_json::json!({
        "command": command,
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let path = artifact.with_extension("meta.json");
    std::fs::write(path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn parse_bits(s: &str) -> Result<Vec<u8>> {
    let mut bits: Vec<u8> = Vec::new();
    for part in s.split(',') {
        let b = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad bit width `{part}`")))?;
        if bits.contains(&b) {
            return Err(Error::InvalidConfig(format!("duplicate bit width {b}")));
        }
        bits.push(b);
    }
    bits.sort_unstable();
    Ok(bits)
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        out.push(part.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad fraction `{part}`"))
        })?);
    }
    Ok(out)
}

pub fn parse_objectives(s: &str) -> Result<Vec<CostKind>> {
    s.split(',')
        .map(|part| match part.trim() {
            "size" => Ok(CostKind::Size),
            "bops" => Ok(CostKind::Bops),
            "latency" => Ok(CostKind::Latency),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective `{other}` (size | bops | latency)"
            ))),
        })
        .collect()
}

pub struct ModelInputs {
    pub net: Network,
    pub params: ParamVector,
    pub train: Dataset,
    pub val: Dataset,
}

/// Load the network, parameters, and dataset shared by the model-facing
/// commands. Missing `--params` means a seeded fresh initialization; missing
/// `--data` means seeded synthetic blobs matching the model shape.
#[allow(clippy::too_many_arguments)]
pub fn load_model_inputs(
    net_path: &Path,
    params_path: Option<&Path>,
    data_path: Option<&Path>,
    per_class: usize,
    spread: f64,
    seed: u64,
    train_args: Option<&TrainSchedule>,
) -> std::result::Result<ModelInputs, CliError> {
    require_file(net_path, "E_DESCRIPTOR_NOT_FOUND")?;
    let net = Network::load(net_path)?;
    let data = match data_path {
        Some(p) => {
            require_file(p, "E_DATA_NOT_FOUND")?;
            Dataset::load(p)?
        }
        None => Dataset::blobs(
            net.num_classes(),
            per_class,
            net.input_dim(),
            spread,
            seeds::derive(seed, seeds::tags::DATA, 0),
        ),
    };
    if data.dim != net.input_dim() || data.classes != net.num_classes() {
        return Err(CliError::input(
            "E_INVALID_INPUT",
            format!(
                "dataset shape ({} dims, {} classes) does not match the model ({}, {})",
                data.dim,
                data.classes,
                net.input_dim(),
                net.num_classes()
            ),
        ));
    }
    let (train, val) = data.split(0.75, seeds::derive(seed, seeds::tags::DATA, 1));
    let mut params = match params_path {
        Some(p) => {
            require_file(p, "E_PARAMS_NOT_FOUND")?;
            ParamVector::load(p)?
        }
        None => net.init_params(seeds::derive(seed, seeds::tags::INIT, 0)),
    };
    if let Some(schedule) = train_args {
        let (best, history) = netlab::train(
            &net,
            params,
            &train,
            &val,
            schedule,
            seeds::derive(seed, seeds::tags::TRAIN, 0),
        )?;
        params = best;
        if let Some(last) = history.last() {
            println!(
                "trained {} epochs, val accuracy {:.3}",
                history.len(),
                last.val_accuracy
            );
        }
    }
    Ok(ModelInputs {
        net,
        params,
        train,
        val,
    })
}

/// Per-layer Hessian traces with a bounded worker-thread fan-out. Probe
/// seeds are derived per (layer, probe) index, so the result is identical
/// for every thread count.
pub fn traces_parallel(
    net: &Network,
    params: &ParamVector,
    batch: &mixbit_core::Batch,
    layers: &[String],
    config: &ProfileConfig,
    threads: usize,
) -> Result<Vec<TraceEstimate>> {
    let worker = |index: usize, layer: &str| -> Result<TraceEstimate> {
        sensitivity::layer_trace(
            net,
            params,
            batch,
            layer,
            config.samples,
            config.distribution,
            seeds::derive(config.seed, seeds::tags::PROFILE, index as u64),
        )
    };
    if threads <= 1 || layers.len() <= 1 {
        return layers
            .iter()
            .enumerate()
            .map(|(i, l)| worker(i, l))
            .collect();
    }
    let workers = threads.min(layers.len());
    let mut results: Vec<Option<Result<TraceEstimate>>> = Vec::new();
    results.resize_with(layers.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let worker = &worker;
            handles.push(scope.spawn(move || -> Vec<(usize, Result<TraceEstimate>)> {
                (w..layers.len())
                    .step_by(workers)
                    .map(|i| (i, worker(i, &layers[i])))
                    .collect()
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("trace worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_profile(
    inputs: &ModelInputs,
    bits: &[u8],
    samples: usize,
    distribution: ProbeDistribution,
    granularity: Granularity,
    scheme: Scheme,
    clip: ClipMethod,
    seed: u64,
    threads: usize,
    output: &Path,
) -> std::result::Result<(), CliError> {
    let config = ProfileConfig {
        samples,
        distribution,
        seed: seeds::derive(seed, seeds::tags::PROFILE, 0),
        granularity,
        scheme,
        clip,
    };
    // the Hessian is taken over the training split
    let batch = inputs.train.as_batch();
    let layers: Vec<String> = inputs
        .net
        .quantizable_layers()
        .into_iter()
        .map(str::to_string)
        .collect();
    let traces = traces_parallel(&inputs.net, &inputs.params, &batch, &layers, &config, threads)?;
    let profile = sensitivity::profile_with_trace_fn(
        &inputs.net,
        &inputs.params,
        bits,
        &config,
        |_, i| Ok(traces[i].clone()),
    )?;
    profile.save(output)?;
    write_meta(output, "profile")?;
    println!(
        "profiled {} layers x {} bit options -> {}",
        profile.layer_names.len(),
        profile.bit_options.len(),
        output.display()
    );
    for (i, layer) in profile.layer_names.iter().enumerate() {
        let row: Vec<String> = profile.delta[i].iter().map(|d| format!("{d:.3e}")).collect();
        println!("  {layer}: trace/param {:.3e}, delta [{}]", profile.trace_per_param[i], row.join(", "));
    }
    Ok(())
}

pub struct BudgetArgs {
    pub size_limit: Option<f64>,
    pub bops_limit: Option<f64>,
    pub latency_limit: Option<f64>,
    pub level: Option<BudgetLevel>,
    pub level_kind: CostKind,
    pub level_fraction: Option<f64>,
}

impl BudgetArgs {
    pub fn resolve(&self, table: &CostTable) -> Result<CostBudget> {
        let mut budget = CostBudget {
            size_limit_mb: self.size_limit,
            bops_limit: self.bops_limit,
            latency_limit: self.latency_limit,
        };
        if budget.validate().is_err() {
            if let Some(level) = self.level {
                let fraction = self.level_fraction.unwrap_or(level.default_fraction());
                budget = budget_from_fraction(table, self.level_kind, fraction)?;
            }
        }
        budget.validate()?;
        Ok(budget)
    }
}

pub fn load_cost_inputs(
    profile_path: &Path,
    descriptor_path: &Path,
    latency_path: Option<&Path>,
    activation_bits: u8,
) -> std::result::Result<(SensitivityProfile, CostTable), CliError> {
    require_file(profile_path, "E_PROFILE_NOT_FOUND")?;
    require_file(descriptor_path, "E_DESCRIPTOR_NOT_FOUND")?;
    let profile = SensitivityProfile::load(profile_path)?;
    let descriptor = ModelDescriptor::load(descriptor_path)?;
    let latency = match latency_path {
        Some(p) => {
            require_file(p, "E_LATENCY_NOT_FOUND")?;
            Some(LatencyTable::load_csv(p)?)
        }
        None => None,
    };
    let table = costmodel::build_cost_table(
        &descriptor,
        &profile.bit_options,
        activation_bits,
        latency.as_ref(),
    )?;
    if table.layer_names != profile.layer_names {
        return Err(CliError::input(
            "E_INVALID_INPUT",
            "profile and descriptor disagree on quantizable layer names/order",
        ));
    }
    Ok((profile, table))
}

pub fn cmd_plan(
    profile: SensitivityProfile,
    table: CostTable,
    budget: CostBudget,
    use_brute_force: bool,
    output: &Path,
) -> std::result::Result<(), CliError> {
    let inst = IlpInstance {
        profile,
        table,
        budget,
    };
    let plan = if use_brute_force {
        planner::brute_force(&inst)?
    } else {
        planner::solve(&inst)?
    };
    let file = PlanFile::new(&plan, &inst.table, &inst.budget)?;
    file.save(output)?;
    write_meta(output, "plan")?;
    print_plan_summary(&plan, &inst);
    println!("plan -> {}", output.display());
    Ok(())
}

fn print_plan_summary(plan: &BitPlan, inst: &IlpInstance) {
    println!("layer                bits   size_mb");
    for (i, (layer, bits)) in plan.assignment.iter().enumerate() {
        let j = inst.table.bit_index(*bits).unwrap();
        println!("{layer:<20} {bits:>4}   {:.6}", inst.table.size_mb[i][j]);
    }
    let cost = costmodel::plan_cost(plan, &inst.table).unwrap();
    println!(
        "objective {:.6e}; total size {:.4} MB, {:.4} GBOPs{}",
        plan.objective,
        cost.size_mb,
        cost.bops,
        cost.latency
            .map(|l| format!(", latency {l:.4}"))
            .unwrap_or_default()
    );
    if let Ok(report) = costmodel::check_budget(plan, &inst.table, &inst.budget) {
        for c in report.constraints {
            println!(
                "constraint {}: used {:.4} of {:.4} (slack {:.4})",
                c.kind, c.used, c.limit, c.slack
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_pareto(
    profile: SensitivityProfile,
    table: CostTable,
    objectives: &[CostKind],
    fractions: &[f64],
    local_moves: usize,
    csv_path: &Path,
    report_path: &Path,
) -> std::result::Result<(), CliError> {
    let layers = profile.layer_names.len() as u64;
    let m = profile.bit_options.len() as u64;
    let inst = IlpInstance {
        profile,
        table,
        // budgets re-enter at selection time; the frontier itself only needs
        // a syntactically valid instance
        budget: CostBudget {
            size_limit_mb: Some(f64::INFINITY),
            ..Default::default()
        },
    };
    let frontier = pareto::frontier(&inst, objectives, fractions, local_moves)?;
    pareto::write_frontier_csv(&frontier.points, csv_path)?;
    write_meta(csv_path, "pareto")?;
    let space = SpaceCount::new(m, layers);
    let report = serde_json::json!({
        "points": frontier.points.len(),
        "objectives": objectives.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
        "fractions": fractions,
        "local_moves": local_moves,
        "space": space.to_json(),
        "diagnostics": frontier.diagnostics,
    });
    std::fs::write(report_path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(Error::from)?;
    write_meta(report_path, "pareto")?;
    println!(
        "{} frontier points -> {}; bit space {}, schedule space {}",
        frontier.points.len(),
        csv_path.display(),
        space.bit_space,
        space.schedule_space
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_quantize_eval(
    inputs: &ModelInputs,
    plan_path: Option<&Path>,
    uniform_bits: Option<u8>,
    granularity: Granularity,
    scheme: Scheme,
    clip: ClipMethod,
    fold_bn: bool,
    finetune_epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    output: &Path,
) -> std::result::Result<(), CliError> {
    let (net, base) = if fold_bn {
        fold_network(&inputs.net, &inputs.params)?
    } else {
        (inputs.net.clone(), inputs.params.clone())
    };
    let baseline_accuracy = netlab::evaluate(&net, &base, &inputs.val)?;

    let plan: Option<BitPlan> = match plan_path {
        Some(p) => {
            require_file(p, "E_PLAN_NOT_FOUND")?;
            Some(PlanFile::load(p)?.to_plan())
        }
        None => None,
    };
    let quantize = |params: &ParamVector| -> Result<ParamVector> {
        match (&plan, uniform_bits) {
            (Some(plan), _) => apply_plan(&net, params, plan, granularity, scheme, clip),
            (None, Some(bits)) => {
                quantize_params(&net, params, |_| bits, granularity, scheme, clip)
            }
            (None, None) => Err(Error::InvalidConfig(
                "quantize-eval needs --plan or --bits".into(),
            )),
        }
    };
    let qinit = quantize(&base)?;
    let trained = if finetune_epochs == 0 {
        qinit
    } else {
        let schedule = TrainSchedule {
            learning_rate,
            weight_decay: 1e-4,
            batch_size,
            epochs: finetune_epochs,
            early_stop_patience: None,
        };
        let (p, _) = netlab::train(
            &net,
            qinit,
            &inputs.train,
            &inputs.val,
            &schedule,
            seeds::derive(seed, seeds::tags::TRAIN, 1),
        )?;
        quantize(&p)?
    };
    let accuracy = netlab::evaluate(&net, &trained, &inputs.val)?;

    let bits_json = match (&plan, uniform_bits) {
        (Some(plan), _) => serde_json::json!(plan
            .assignment
            .iter()
            .map(|(l, b)| serde_json::json!({"layer": l, "bits": b}))
            .collect::<Vec<_>>()),
        (None, Some(b)) => serde_json::json!(b),
        _ => serde_json::Value::Null,
    };
    let report = serde_json::json!({
        "accuracy": accuracy,
        "baseline_accuracy": baseline_accuracy,
        "bits": bits_json,
        "fold_bn": fold_bn,
        "finetune_epochs": finetune_epochs,
        "val_samples": inputs.val.len(),
    });
    std::fs::write(output, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(Error::from)?;
    write_meta(output, "quantize-eval")?;
    println!(
        "quantized accuracy {accuracy:.4} (fp32 baseline {baseline_accuracy:.4}) -> {}",
        output.display()
    );
    Ok(())
}

pub fn cmd_report(run_dir: &Path) -> std::result::Result<(), CliError> {
    if !run_dir.is_dir() {
        return Err(CliError::input(
            "E_RUN_DIR_NOT_FOUND",
            format!("not a directory: {}", run_dir.display()),
        ));
    }
    let mut out = String::new();
    out.push_str("mixbit run report\n=================\n\n");

    // profile section + delta plot data
    let profile_path = run_dir.join("profile.json");
    match SensitivityProfile::load(&profile_path) {
        Ok(p) => {
            out.push_str(&format!(
                "Sensitivity profile: {} layers x {:?} bits\n",
                p.layer_names.len(),
                p.bit_options
            ));
            for (i, l) in p.layer_names.iter().enumerate() {
                out.push_str(&format!(
                    "  {l}: params {}, trace/param {:.4e}\n",
                    p.param_counts[i], p.trace_per_param[i]
                ));
            }
            let mut w = csv::Writer::from_path(run_dir.join("delta.csv")).map_err(Error::from)?;
            w.write_record(["layer", "bits", "delta"]).map_err(Error::from)?;
            for (i, l) in p.layer_names.iter().enumerate() {
                for (j, b) in p.bit_options.iter().enumerate() {
                    w.write_record([l.as_str(), &b.to_string(), &p.delta[i][j].to_string()])
                        .map_err(Error::from)?;
                }
            }
            w.flush().map_err(Error::from)?;
            out.push_str("  plot data: delta.csv\n\n");
        }
        Err(_) => out.push_str("Sensitivity profile: absent\n\n"),
    }

    // plan section
    match PlanFile::load(&run_dir.join("plan.json")) {
        Ok(p) => {
            out.push_str(&format!(
                "Plan: objective {:.6e}, size {:.4} MB, {:.4} GBOPs\n",
                p.objective, p.cost.size_mb, p.cost.bops
            ));
            let bits: Vec<String> = p
                .assignment
                .iter()
                .map(|e| format!("{}:{}", e.layer, e.bits))
                .collect();
            out.push_str(&format!("  bits: {}\n\n", bits.join(" ")));
        }
        Err(_) => out.push_str("Plan: absent\n\n"),
    }

    // frontier section
    match pareto::read_frontier_csv(&run_dir.join("frontier.csv")) {
        Ok(rows) => {
            out.push_str(&format!("Frontier: {} points (frontier.csv)\n", rows.len()));
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                out.push_str(&format!(
                    "  perturbation range [{:.4e}, {:.4e}], size range [{:.4}, {:.4}] MB\n",
                    first.perturbation, last.perturbation, first.size_mb, last.size_mb
                ));
            }
            out.push('\n');
        }
        Err(_) => out.push_str("Frontier: absent\n\n"),
    }

    // pareto report (space counts)
    match std::fs::read_to_string(run_dir.join("pareto.json")) {
        Ok(text) => {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                out.push_str(&format!(
                    "Search space: {} bit assignments, {} fine-tuning schedules\n\n",
                    v["space"]["bit_space"].as_str().unwrap_or("?"),
                    v["space"]["schedule_space"].as_str().unwrap_or("?")
                ));
            }
        }
        Err(_) => out.push_str("Search space: absent\n\n"),
    }

    // search history + best-so-far plot data
    let history_path = run_dir.join("history.jsonl");
    if history_path.exists() {
        let text = std::fs::read_to_string(&history_path).map_err(Error::from)?;
        let mut best = f64::NEG_INFINITY;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        let mut count = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
                let realized = v["realized"].as_f64().unwrap_or(0.0);
                let round = v["round"].as_u64().unwrap_or(0) as usize;
                best = best.max(realized);
                rows.push((round, realized, best));
                count += 1;
            }
        }
        out.push_str(&format!(
            "Search: {count} evaluations, best score {best:.4}\n  plot data: history_best.csv\n\n"
        ));
        let mut w =
            csv::Writer::from_path(run_dir.join("history_best.csv")).map_err(Error::from)?;
        w.write_record(["index", "round", "realized", "best_so_far"])
            .map_err(Error::from)?;
        for (i, (round, realized, best)) in rows.iter().enumerate() {
            w.write_record([
                i.to_string(),
                round.to_string(),
                realized.to_string(),
                best.to_string(),
            ])
            .map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
    } else {
        out.push_str("Search: absent\n\n");
    }

    // quantize-eval section
    match std::fs::read_to_string(run_dir.join("eval.json")) {
        Ok(text) => {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                out.push_str(&format!(
                    "Quantized evaluation: accuracy {} (baseline {})\n",
                    v["accuracy"], v["baseline_accuracy"]
                ));
            }
        }
        Err(_) => out.push_str("Quantized evaluation: absent\n"),
    }

    std::fs::write(run_dir.join("report.txt"), &out).map_err(Error::from)?;
    print!("{out}");
    Ok(())
}

/// Resolve an output path against the out dir unless it is absolute.
pub fn resolve(out_dir: &Path, name: &Path) -> PathBuf {
    if name.is_absolute() {
        name.to_path_buf()
    } else {
        out_dir.join(name)
    }
}
