//! The `search` subcommand: surrogate-guided hyperparameter search.

use std::path::Path;

use mixbit_core::netlab::TrainSchedule;
use mixbit_core::proxy::{
    self, synthetic, Evaluator, HparamSpace, ProxyRecord, SearchBudget, SearchOutcome,
};
use mixbit_core::seeds;
use mixbit_core::{Error, Result};

use crate::errors::{require_file, CliError};
use crate::evaluator::TrainingEvaluator;
use crate::stages::{load_model_inputs, write_meta};

pub struct SearchIo<'a> {
    pub space_path: Option<&'a Path>,
    pub resume_path: Option<&'a Path>,
    pub history_path: &'a Path,
    pub best_path: &'a Path,
    pub space_out: &'a Path,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_search(
    io: &SearchIo,
    synthetic_mode: bool,
    net_path: Option<&Path>,
    params_path: Option<&Path>,
    data_path: Option<&Path>,
    n: usize,
    k: usize,
    rounds: usize,
    short_epochs: usize,
    full_epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> std::result::Result<(), CliError> {
    let space = match io.space_path {
        Some(p) => {
            require_file(p, "E_SPACE_NOT_FOUND")?;
            HparamSpace::load_toml(p)?
        }
        None if synthetic_mode => synthetic::space(),
        None => {
            return Err(CliError::input(
                "E_SPACE_NOT_FOUND",
                "search needs --space (or --synthetic for the built-in benchmark space)",
            ))
        }
    };
    let m = space.size();
    if m > usize::MAX as u128 {
        return Err(CliError::input("E_INVALID_INPUT", "space too large"));
    }
    let budget = SearchBudget {
        total_configs: m as usize,
        initial_samples: n,
        top_k: k,
        short_epochs,
        full_epochs,
        rounds,
        seed: seeds::derive(seed, seeds::tags::SEARCH, 0),
    };

    let prior: Vec<ProxyRecord> = match io.resume_path {
        Some(p) => {
            require_file(p, "E_HISTORY_NOT_FOUND")?;
            proxy::read_history(p, &space)?
        }
        None => Vec::new(),
    };

    let outcome: SearchOutcome = if synthetic_mode {
        let mut eval = synthetic::SyntheticEvaluator::new();
        if io.space_path.is_some() {
            eval.space = space.clone();
        }
        run(&space, &mut eval, &budget, prior)?
    } else {
        let net_path = net_path.ok_or_else(|| {
            CliError::input("E_DESCRIPTOR_NOT_FOUND", "search without --synthetic needs --net")
        })?;
        // base model: load a checkpoint or train one from scratch
        let train_first = params_path.is_none();
        let schedule = TrainSchedule {
            learning_rate,
            weight_decay: 1e-4,
            batch_size,
            epochs: full_epochs,
            early_stop_patience: Some(8),
        };
        let inputs = load_model_inputs(
            net_path,
            params_path,
            data_path,
            48,
            0.5,
            seed,
            train_first.then_some(&schedule),
        )?;
        let mut eval = TrainingEvaluator::new(
            inputs.net,
            inputs.params,
            inputs.train,
            inputs.val,
            space.clone(),
            short_epochs,
            full_epochs,
            seed,
        )?;
        eval.learning_rate = learning_rate;
        eval.batch_size = batch_size;
        run(&space, &mut eval, &budget, prior)?
    };

    proxy::write_history(io.history_path, &space, &outcome.history)?;
    write_meta(io.history_path, "search")?;
    space.save_toml(io.space_out)?;
    let best = serde_json::json!({
        "config": space.config_to_json(&outcome.best),
        "score": outcome.best_score,
        "evaluations": outcome.history.len(),
    });
    std::fs::write(io.best_path, serde_json::to_string_pretty(&best)? + "\n")
        .map_err(Error::from)?;
    write_meta(io.best_path, "search")?;
    println!(
        "best score {:.4} after {} evaluations -> {}",
        outcome.best_score,
        outcome.history.len(),
        io.best_path.display()
    );
    Ok(())
}

fn run(
    space: &HparamSpace,
    evaluator: &mut dyn Evaluator,
    budget: &SearchBudget,
    prior: Vec<ProxyRecord>,
) -> Result<SearchOutcome> {
    proxy::search_resumable(space, evaluator, budget, prior)
}
