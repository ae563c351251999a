//! Statistical invariants of the Hutchinson estimator over many seeds.

use mixbit_core::netlab::QuadraticModel;
use mixbit_core::sensitivity::{hutchinson_trace, ProbeDistribution, TraceEstimate};

fn estimates(
    m: &QuadraticModel,
    distribution: ProbeDistribution,
    seeds: u64,
    samples: usize,
) -> Vec<TraceEstimate> {
    let theta = vec![0.0; m.dim()];
    (0..seeds)
        .map(|seed| {
            hutchinson_trace(|z| Ok(m.hvp(&theta, z)), m.dim(), samples, distribution, seed)
                .unwrap()
        })
        .collect()
}

#[test]
fn estimator_is_unbiased_within_two_standard_errors() {
    let m = QuadraticModel::diag_dominant(30, 17);
    let truth = m.exact_trace();
    for distribution in [ProbeDistribution::Rademacher, ProbeDistribution::Gaussian] {
        let est = estimates(&m, distribution, 200, 256);
        let mean: f64 = est.iter().map(|e| e.mean).sum::<f64>() / est.len() as f64;
        // combined standard error of the grand mean
        let combined = (est.iter().map(|e| e.stderr * e.stderr).sum::<f64>()).sqrt()
            / est.len() as f64;
        assert!(
            (mean - truth).abs() < 2.0 * combined,
            "{distribution:?}: grand mean {mean} vs {truth} (allowed {})",
            2.0 * combined
        );
    }
}

#[test]
fn rademacher_probes_have_no_more_variance_than_gaussian() {
    let m = QuadraticModel::diag_dominant(30, 23);
    let var = |d: ProbeDistribution| {
        let est = estimates(&m, d, 200, 64);
        let mean: f64 = est.iter().map(|e| e.mean).sum::<f64>() / est.len() as f64;
        est.iter().map(|e| (e.mean - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64
    };
    let vr = var(ProbeDistribution::Rademacher);
    let vg = var(ProbeDistribution::Gaussian);
    assert!(
        vr <= vg,
        "Rademacher variance {vr} exceeds Gaussian variance {vg}"
    );
}
