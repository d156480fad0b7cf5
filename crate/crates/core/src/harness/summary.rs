use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{HarnessError, RunRecord};
use crate::envs::mean_std;

pub const RECORD_HEADER: &str = "iter,steps,seed,mean_return,std_return,mean_kl,reg_value,adv_div";

/// One CSV row per record under [`RECORD_HEADER`].
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut s = format!("{RECORD_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iter, r.steps, r.seed, r.mean_return, r.std_return, r.mean_kl, r.reg_value, r.adv_div
        )
        .unwrap();
    }
    s
}

/// Inverse of [`records_csv`].
pub fn parse_records(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let csv_err = |reason: String| HarnessError::Csv {
        what: "run records".into(),
        reason,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == RECORD_HEADER => {}
        other => return Err(csv_err(format!("bad header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(csv_err(format!("row {}: {} fields", i + 1, f.len())));
            }
            let n = |k: usize| f[k].parse::<f64>().map_err(|e| csv_err(format!("row {}: {e}", i + 1)));
            let u = |k: usize| f[k].parse::<u64>().map_err(|e| csv_err(format!("row {}: {e}", i + 1)));
            Ok(RunRecord {
                iter: u(0)? as usize,
                steps: u(1)? as usize,
                seed: u(2)?,
                mean_return: n(3)?,
                std_return: n(4)?,
                mean_kl: n(5)?,
                reg_value: n(6)?,
                adv_div: n(7)?,
            })
        })
        .collect()
}

/// Across-seed statistics for one checkpoint index.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iter: usize,
    /// Mean of the cumulative step counts.
    pub steps: f64,
    pub seeds: usize,
    pub mean_return: f64,
    /// Sample std of the per-seed mean returns.
    pub std_return: f64,
    pub mean_kl: f64,
    pub reg_value: f64,
    pub adv_div: f64,
}

/// Per-checkpoint mean ± std across runs; the k-th row pools the k-th record
/// of every run that has one.
pub fn aggregate(runs: &[&[RunRecord]]) -> Vec<AggregateRow> {
    let len = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let rows: Vec<&RunRecord> = runs.iter().filter_map(|r| r.get(k)).collect();
            let col = |f: &dyn Fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_return, std_return) = mean_std(&col(&|r| r.mean_return));
            AggregateRow {
                iter: rows[0].iter,
                steps: mean_std(&col(&|r| r.steps as f64)).0,
                seeds: rows.len(),
                mean_return,
                std_return,
                mean_kl: mean_std(&col(&|r| r.mean_kl)).0,
                reg_value: mean_std(&col(&|r| r.reg_value)).0,
                adv_div: mean_std(&col(&|r| r.adv_div)).0,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow], missing_seeds: &[u64]) -> String {
    let mut s = String::new();
    if !missing_seeds.is_empty() {
        let ids: Vec<String> = missing_seeds.iter().map(u64::to_string).collect();
        writeln!(s, "# missing seeds: {}", ids.join(" ")).unwrap();
    }
    s.push_str("iter,steps,seeds,mean_return,std_return,mean_kl,reg_value,adv_div\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iter, r.steps, r.seeds, r.mean_return, r.std_return, r.mean_kl, r.reg_value, r.adv_div
        )
        .unwrap();
    }
    s
}

/// Returns sorted ascending, paired with percentile ranks `i/(n−1)`.
pub fn percentile_summary(returns: &[f64]) -> Result<Vec<(f64, f64)>, HarnessError> {
    if returns.len() < 2 {
        return Err(HarnessError::TooFewSeeds(returns.len()));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    Ok(sorted.into_iter().enumerate().map(|(i, r)| (i as f64 / last, r)).collect())
}

/// Linear interpolation of a [`percentile_summary`] table at rank `q ∈ [0, 1]`.
pub fn percentile_at(table: &[(f64, f64)], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (table.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    (1.0 - w) * table[lo].1 + w * table[hi].1
}

pub fn percentile_csv(table: &[(f64, f64)]) -> String {
    let mut s = String::from("percentile,return\n");
    for (p, r) in table {
        writeln!(s, "{p},{r}").unwrap();
    }
    s
}

/// Output of [`summarize`].
#[derive(Clone, Debug)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub final_returns: Vec<f64>,
    pub percentiles: Vec<(f64, f64)>,
    pub aggregate: Vec<AggregateRow>,
}

/// Reads every `seed_*.csv` in `dir`, writes `percentiles.csv` (final
/// checkpoint returns) and a refreshed `aggregate.csv`.
pub fn summarize(dir: &Path) -> Result<Summary, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut runs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("seed_") && name.ends_with(".csv") {
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let records = parse_records(&text)?;
            if let Some(first) = records.first() {
                runs.push((first.seed, records));
            }
        }
    }
    runs.sort_by_key(|(s, _)| *s);
    let final_returns: Vec<f64> = runs.iter().map(|(_, r)| r.last().expect("non-empty").mean_return).collect();
    let percentiles = percentile_summary(&final_returns)?;
    let slices: Vec<&[RunRecord]> = runs.iter().map(|(_, r)| r.as_slice()).collect();
    let agg = aggregate(&slices);
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    };
    write("percentiles.csv", percentile_csv(&percentiles))?;
    write("aggregate.csv", aggregate_csv(&agg, &[]))?;
    Ok(Summary {
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        final_returns,
        percentiles,
        aggregate: agg,
    })
}
