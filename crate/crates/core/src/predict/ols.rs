//! Per-affect ordinary least squares on the seven daily sentiment scores.
//!
//! Features are `[day1, …, day7, 1]` with missing days set to 0. With 9
//! training weeks and 8 parameters the system is frequently rank
//! deficient, so weights come from the pseudoinverse of the normal
//! equations: the minimum-norm least-squares solution.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::affect::Affect;
use crate::timeline::{WeekSample, DAYS_PER_WEEK};

pub const N_FEATURES: usize = DAYS_PER_WEEK + 1;

/// Singular values of XᵀX below this fraction of the largest are treated
/// as zero.
const RELATIVE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// One weight vector per affect: seven day weights, then the intercept.
    pub weights: [[f64; N_FEATURES]; 10],
}

impl RegressionModel {
    pub fn weights_for(&self, affect: Affect) -> &[f64; N_FEATURES] {
        &self.weights[affect.index()]
    }

    pub fn intercept(&self, affect: Affect) -> f64 {
        self.weights[affect.index()][DAYS_PER_WEEK]
    }
}

pub fn features(week: &WeekSample) -> [f64; N_FEATURES] {
    let mut f = [1.0; N_FEATURES];
    for (slot, day) in f.iter_mut().zip(week.days.iter()) {
        *slot = day.unwrap_or(0.0);
    }
    f
}

/// Fits one model per affect. Weeks without ratings are ignored; with no
/// rated weeks every weight is zero.
pub fn fit_ols(train_weeks: &[&WeekSample]) -> RegressionModel {
    let rated: Vec<_> = train_weeks
        .iter()
        .filter_map(|w| w.ratings.map(|r| (features(w), r)))
        .collect();
    let n = rated.len();
    let x = DMatrix::from_fn(n, N_FEATURES, |i, j| rated[i].0[j]);
    let y = DMatrix::from_fn(n, 10, |i, j| f64::from(rated[i].1.values()[j]));
    let w = min_norm_solve(&x, &y);

    let mut weights = [[0.0; N_FEATURES]; 10];
    for (a, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = w[(j, a)];
        }
    }
    RegressionModel { weights }
}

/// `pinv(XᵀX) Xᵀ Y`, one column of weights per column of `y`.
fn min_norm_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    let gram = &xt * x;
    let svd = SVD::new(gram, true, true);
    let max_sv = svd.singular_values.max();
    let pinv = if max_sv > 0.0 {
        svd.pseudo_inverse(max_sv * RELATIVE_CUTOFF)
            .expect("u and v were computed")
    } else {
        DMatrix::zeros(x.ncols(), x.ncols())
    };
    pinv * xt * y
}

/// Unclamped, unrounded predictions for every affect.
pub fn predict_ols(model: &RegressionModel, week: &WeekSample) -> [f64; 10] {
    let f = features(week);
    let mut out = [0.0; 10];
    for (o, w) in out.iter_mut().zip(model.weights.iter()) {
        *o = w.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
    }
    out
}
