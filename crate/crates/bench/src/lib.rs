//! Shared instance builders for the benchmark suite.

use mixbit_core::costmodel::{CostBudget, CostTable};
use mixbit_core::{IlpInstance, SensitivityProfile};

/// Deterministic pseudo-random ILP instance of the given shape.
pub fn ilp_instance(layers: usize, bit_options: &[u8], seed: u64) -> IlpInstance {
    let mut state = seed;
    let mut next = move || {
        state = mixbit_core::seeds::splitmix64(state);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let layer_names: Vec<String> = (0..layers).map(|i| format!("l{i}")).collect();
    let delta: Vec<Vec<f64>> = (0..layers)
        .map(|_| {
            let scale = 0.1 + 4.9 * next();
            bit_options
                .iter()
                .map(|&b| scale * (0.2 + 0.8 * next()) / (b as f64).powi(2))
                .collect()
        })
        .collect();
    let size_mb: Vec<Vec<f64>> = (0..layers)
        .map(|_| {
            let params = 1e3 + 1e6 * next();
            bit_options.iter().map(|&b| params * b as f64 / 8e6).collect()
        })
        .collect();
    let bops = size_mb.clone();
    let total_size: f64 = size_mb
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    IlpInstance {
        profile: SensitivityProfile {
            layer_names: layer_names.clone(),
            bit_options: bit_options.to_vec(),
            trace_per_param: vec![1.0; layers],
            param_counts: vec![1000; layers],
            delta,
        },
        table: CostTable {
            layer_names,
            bit_options: bit_options.to_vec(),
            size_mb,
            bops,
            latency: None,
            activation_bits: 8,
        },
        budget: CostBudget {
            size_limit_mb: Some(0.7 * total_size),
            ..Default::default()
        },
    }
}
