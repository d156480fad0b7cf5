use std::fmt::Write as _;

use super::run::train_seeds;
use super::{ExperimentConfig, HarnessError};

/// `n` points from `lo` to `hi` inclusive, evenly spaced in log scale.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// The documented search ranges: `λ ∈ [1e-2, 1e2]`, `ε ∈ [1e-5, 1e-1]`.
pub fn default_grid(n_lambda: usize, n_epsilon: usize) -> (Vec<f64>, Vec<f64>) {
    (log_space(1e-2, 1e2, n_lambda), log_space(1e-5, 1e-1, n_epsilon))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lambda_s: f64,
    pub epsilon: f64,
    /// Mean over seeds of the last checkpoint's return.
    pub final_mean: f64,
    /// Mean over seeds and checkpoints of the return (area under the curve
    /// per checkpoint).
    pub auc: f64,
    pub failed_seeds: usize,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub points: Vec<GridPoint>,
    /// Index of the winner by final mean return.
    pub best_by_final: usize,
    pub best_by_auc: usize,
}

impl GridResult {
    pub fn best(&self) -> &GridPoint {
        &self.points[self.best_by_final]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda_s,epsilon,final_mean,auc,failed_seeds\n");
        for p in &self.points {
            writeln!(s, "{},{},{},{},{}", p.lambda_s, p.epsilon, p.final_mean, p.auc, p.failed_seeds).unwrap();
        }
        s
    }
}

/// Trains `base` at every `(λ, ε)` pair and picks the best pair by final
/// mean return; the area-under-curve winner is reported alongside.
pub fn grid_search(base: &ExperimentConfig, lambdas: &[f64], epsilons: &[f64]) -> Result<GridResult, HarnessError> {
    if base.algo.is_baseline() {
        return Err(HarnessError::InvalidConfig(format!("{} has no regularizer to tune", base.algo)));
    }
    if lambdas.is_empty() || epsilons.is_empty() {
        return Err(HarnessError::InvalidConfig("empty grid".into()));
    }
    let mut points = Vec::new();
    for &lambda_s in lambdas {
        for &epsilon in epsilons {
            let cfg = ExperimentConfig {
                lambda_s,
                epsilon,
                ..base.clone()
            };
            let report = train_seeds(&cfg)?;
            let finals = report.final_returns();
            if finals.is_empty() {
                return Err(HarnessError::AllSeedsFailed(format!("λ = {lambda_s}, ε = {epsilon}")));
            }
            let curve_means: Vec<f64> = report
                .runs
                .iter()
                .map(|(_, r)| r.iter().map(|x| x.mean_return).sum::<f64>() / r.len() as f64)
                .collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            log::info!("grid λ = {lambda_s:e}, ε = {epsilon:e}: final {:.3}", mean(&finals));
            points.push(GridPoint {
                lambda_s,
                epsilon,
                final_mean: mean(&finals),
                auc: mean(&curve_means),
                failed_seeds: report.failed.len(),
            });
        }
    }
    let argmax = |f: &dyn Fn(&GridPoint) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])).then(b.cmp(&a)))
            .expect("non-empty grid")
    };
    Ok(GridResult {
        best_by_final: argmax(&|p| p.final_mean),
        best_by_auc: argmax(&|p| p.auc),
        points,
    })
}
