//! Repeated random train/evaluation splits and per-affect MAE.
//!
//! # Split generator
//!
//! Each run draws its training set from ChaCha20 (RFC 8439 block function,
//! 64-bit block counter, stream 0, as implemented by `rand_chacha`) keyed
//! with 32 bytes: the seed as little-endian `u64`, the run index as
//! little-endian `u64`, then 16 zero bytes. Integers below `n` are drawn
//! from successive `next_u64` outputs by rejection: values at or above
//! `2^64 - (2^64 mod n)` are discarded and the rest reduced mod `n`. The
//! sorted week list is shuffled by a partial Fisher–Yates pass (for
//! `i` in `0..n_train`, swap `i` with `i + draw(len - i)`); the first
//! `n_train` entries are the training weeks. Everything here is portable
//! to any language with a ChaCha20 implementation.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{Affect, AffectRatings};
use crate::predict::{Method, PredictError, PredictionSet, Predictor};
use crate::timeline::WeekSample;

pub const DEFAULT_N_TRAIN: usize = 9;
pub const DEFAULT_RUNS: usize = 5;

/// Means closer than this are reported as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need more than {n_train} weeks to split, got {available}")]
    InsufficientWeeks { available: usize, n_train: usize },
    #[error("predictions cover weeks {predicted:?} but actuals cover {actual:?}")]
    CoverageMismatch {
        predicted: Vec<u32>,
        actual: Vec<u32>,
    },
    #[error("need at least 2 runs to aggregate, got {0}")]
    TooFewRuns(usize),
    #[error("split references week {0}, which has no rated sample")]
    UnknownWeek(u32),
    #[error("{method} failed in {} run(s); {succeeded} run(s) left", failures.len())]
    RunsFailed {
        method: Method,
        succeeded: usize,
        failures: Vec<RunFailure>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub run_index: u32,
    pub seed: u64,
    pub train_weeks: Vec<u32>,
    pub eval_weeks: Vec<u32>,
}

/// Generator for one run; see the module docs.
pub fn run_rng(seed: u64, run_index: u32) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&u64::from(run_index).to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Uniform integer in `0..n` by rejection sampling.
pub fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0);
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let v = rng.next_u64();
        if v <= zone {
            return v % n;
        }
    }
}

/// One plan per run (1-based). Training sets are independent uniform
/// `n_train`-subsets; the remaining weeks are evaluated.
pub fn make_splits(
    week_indices: &[u32],
    n_train: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<SplitPlan>, EvalError> {
    let mut universe = week_indices.to_vec();
    universe.sort_unstable();
    universe.dedup();
    if n_train == 0 || universe.len() <= n_train {
        return Err(EvalError::InsufficientWeeks {
            available: universe.len(),
            n_train,
        });
    }
    Ok((1..=runs as u32)
        .map(|run_index| {
            let mut rng = run_rng(seed, run_index);
            let mut pool = universe.clone();
            for i in 0..n_train {
                let j = i + uniform_below(&mut rng, (pool.len() - i) as u64) as usize;
                pool.swap(i, j);
            }
            let mut train = pool[..n_train].to_vec();
            let mut eval = pool[n_train..].to_vec();
            train.sort_unstable();
            eval.sort_unstable();
            SplitPlan {
                run_index,
                seed,
                train_weeks: train,
                eval_weeks: eval,
            }
        })
        .collect())
}

/// `(1/N) Σ_j |y_j − ŷ_j|` per affect for one run.
pub fn mae_per_run(
    preds: &PredictionSet,
    actuals: &BTreeMap<u32, AffectRatings>,
) -> Result<[f64; 10], EvalError> {
    if !preds.values.keys().eq(actuals.keys()) || actuals.is_empty() {
        return Err(EvalError::CoverageMismatch {
            predicted: preds.values.keys().copied().collect(),
            actual: actuals.keys().copied().collect(),
        });
    }
    let n = actuals.len() as f64;
    let mut sums = [0.0; 10];
    for (week, predicted) in &preds.values {
        let actual = actuals[week].values();
        for a in 0..10 {
            sums[a] += (f64::from(actual[a]) - predicted[a]).abs();
        }
    }
    Ok(sums.map(|s| s / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectMAE {
    pub affect: Affect,
    pub per_run: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub sd: f64,
    /// `sd / √R`.
    pub se: f64,
}

impl AffectMAE {
    /// Row from already-summarised values, e.g. published tables.
    pub fn from_summary(affect: Affect, mean: f64, sd: f64, runs: usize) -> Self {
        Self {
            affect,
            per_run: Vec::new(),
            mean,
            sd,
            se: sd / (runs as f64).sqrt(),
        }
    }
}

pub fn aggregate_runs(affect: Affect, per_run: &[f64]) -> Result<AffectMAE, EvalError> {
    let r = per_run.len();
    if r < 2 {
        return Err(EvalError::TooFewRuns(r));
    }
    let n = r as f64;
    let mean = per_run.iter().sum::<f64>() / n;
    let var = per_run.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok(AffectMAE {
        affect,
        per_run: per_run.to_vec(),
        mean,
        sd,
        se: sd / n.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: Method,
    pub run_index: u32,
    pub week: u32,
    /// The LLM could not be reached, as opposed to a bad response.
    pub transport: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub participant_id: String,
    pub method: Method,
    /// One row per affect, questionnaire order.
    pub rows: Vec<AffectMAE>,
    pub runs_used: Vec<u32>,
    pub failures: Vec<RunFailure>,
    /// Lowest mean among the compared methods, per affect; set by
    /// [`mark_best`].
    pub best: [bool; 10],
}

/// Runs `predictor` on every split and aggregates per-affect MAE.
///
/// A run whose prediction fails is dropped and recorded with its failing
/// week; the remaining runs are aggregated as long as at least two are
/// left.
pub fn run_experiment(
    participant_id: &str,
    predictor: &dyn Predictor,
    weeks: &[WeekSample],
    splits: &[SplitPlan],
) -> Result<EvalReport, EvalError> {
    let by_index: BTreeMap<u32, &WeekSample> = weeks
        .iter()
        .filter(|w| w.ratings.is_some())
        .map(|w| (w.week_index, w))
        .collect();
    let lookup = |ids: &[u32]| -> Result<Vec<&WeekSample>, EvalError> {
        ids.iter()
            .map(|i| by_index.get(i).copied().ok_or(EvalError::UnknownWeek(*i)))
            .collect()
    };

    let method = predictor.method();
    let outcomes: Vec<(u32, Result<[f64; 10], PredictError>)> = splits
        .par_iter()
        .map(|plan| -> Result<_, EvalError> {
            let train = lookup(&plan.train_weeks)?;
            let eval = lookup(&plan.eval_weeks)?;
            let actuals: BTreeMap<u32, AffectRatings> = eval
                .iter()
                .map(|w| (w.week_index, w.ratings.expect("filtered")))
                .collect();
            let result = match predictor.predict(&train, &eval) {
                Ok(preds) => Ok(mae_per_run(&preds, &actuals)?),
                Err(e) => Err(e),
            };
            Ok((plan.run_index, result))
        })
        .collect::<Result<_, _>>()?;

    let mut runs_used = Vec::new();
    let mut per_affect: Vec<Vec<f64>> = vec![Vec::new(); 10];
    let mut failures = Vec::new();
    for (run_index, outcome) in outcomes {
        match outcome {
            Ok(maes) => {
                runs_used.push(run_index);
                for (col, v) in per_affect.iter_mut().zip(maes) {
                    col.push(v);
                }
            }
            Err(e) => failures.push(RunFailure {
                method,
                run_index,
                week: e.week(),
                transport: e.is_transport(),
                message: e.to_string(),
            }),
        }
    }
    if runs_used.len() < 2 {
        return Err(if failures.is_empty() {
            EvalError::TooFewRuns(runs_used.len())
        } else {
            EvalError::RunsFailed {
                method,
                succeeded: runs_used.len(),
                failures,
            }
        });
    }
    let rows = Affect::ALL
        .iter()
        .zip(per_affect.iter())
        .map(|(a, v)| aggregate_runs(*a, v))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport {
        participant_id: participant_id.to_string(),
        method,
        rows,
        runs_used,
        failures,
        best: [false; 10],
    })
}

/// Flags, per affect, every report whose mean is the lowest (ties share).
pub fn mark_best(reports: &mut [EvalReport]) {
    for a in 0..10 {
        let min = reports
            .iter()
            .map(|r| r.rows[a].mean)
            .fold(f64::INFINITY, f64::min);
        for r in reports.iter_mut() {
            r.best[a] = r.rows[a].mean - min <= TIE_TOLERANCE;
        }
    }
}

/// Rounds to two decimals, halves away from zero. The value is first
/// snapped to 9 decimals so binary noise (0.075 stored as 0.07499…)
/// does not decide the tie.
pub fn round2(x: f64) -> f64 {
    let snapped = (x * 1e9).round() / 1e9;
    (snapped * 100.0).round() / 100.0
}

pub fn format_cell(mean: f64, sd: f64) -> String {
    format!("{:.2} ± {:.2}", round2(mean), round2(sd))
}

/// Text table: one row per affect, one column per report in the order
/// given, best cell per row wrapped in `**`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut reports = reports.to_vec();
    mark_best(&mut reports);
    let mut out = String::from("Affect");
    for r in &reports {
        out.push_str(&format!("\t{} (Mean ± SD)", r.method.label()));
    }
    out.push('\n');
    for (a, affect) in Affect::ALL.iter().enumerate() {
        out.push_str(affect.name());
        for r in &reports {
            let row = &r.rows[a];
            let cell = format_cell(row.mean, row.sd);
            if r.best[a] {
                out.push_str(&format!("\t**{cell}**"));
            } else {
                out.push_str(&format!("\t{cell}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Machine-readable rows: `affect<TAB>method<TAB>mean<TAB>sd<TAB>se`.
pub fn render_records(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for row in &r.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.affect.name(),
                r.method.key(),
                row.mean,
                row.sd,
                row.se
            ));
        }
    }
    out
}

/// Inverse of [`render_records`]; rebuilds one summary report per method.
pub fn parse_records(participant_id: &str, text: &str) -> Result<Vec<EvalReport>, String> {
    let mut rows: BTreeMap<Method, BTreeMap<Affect, AffectMAE>> = BTreeMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split('\t').collect();
        let [affect, method, mean, sd, se] = f[..] else {
            return Err(format!("line {}: expected 5 fields", i + 1));
        };
        let affect: Affect = affect.parse().map_err(|e| format!("line {}: {e}", i + 1))?;
        let method =
            Method::from_key(method).ok_or_else(|| format!("line {}: unknown method", i + 1))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        rows.entry(method).or_default().insert(
            affect,
            AffectMAE {
                affect,
                per_run: Vec::new(),
                mean: num(mean)?,
                sd: num(sd)?,
                se: num(se)?,
            },
        );
    }
    rows.into_iter()
        .map(|(method, by_affect)| {
            if by_affect.len() != 10 {
                return Err(format!(
                    "{method}: expected 10 affects, got {}",
                    by_affect.len()
                ));
            }
            Ok(EvalReport {
                participant_id: participant_id.to_string(),
                method,
                rows: by_affect.into_values().collect(),
                runs_used: Vec::new(),
                failures: Vec::new(),
                best: [false; 10],
            })
        })
        .collect()
}
