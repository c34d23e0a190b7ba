use serde::{Deserialize, Serialize};

use super::{check_input, check_training_set};
use crate::data::dot;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRegressor {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl LinearRegressor {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, a: &[f64]) -> Result<f64> {
        check_input(a, self.weights.len())?;
        Ok(dot(&self.weights, a) + self.intercept)
    }
}

/// Minimizes `‖Xw + b − y‖² + ridge·‖w‖²` with an unpenalized intercept by
/// solving the normal equations of the design augmented with a ones column.
pub fn fit_linear(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<LinearRegressor> {
    let d = check_training_set(x, y)?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    let n = x.len();
    let dim = d + 1;
    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (row, &target) in x.iter().zip(y) {
        for a in 0..d {
            let xa = row[a];
            if xa == 0.0 {
                continue;
            }
            rhs[a] += xa * target;
            gram[d * dim + a] += xa;
            for b in 0..=a {
                gram[a * dim + b] += xa * row[b];
            }
        }
        rhs[d] += target;
    }
    gram[d * dim + d] = n as f64;
    for a in 0..d {
        gram[a * dim + a] += ridge;
    }
    for a in 0..dim {
        for b in 0..a {
            gram[b * dim + a] = gram[a * dim + b];
        }
    }

    let sol = solve_spd(gram, dim, rhs, 1e-14).ok_or_else(|| {
        Error::Singular(format!(
            "linear regression over {d} features is rank deficient (ridge = {ridge}); use ridge > 0"
        ))
    })?;
    Ok(LinearRegressor {
        weights: sol.iter().take(d).copied().collect(),
        intercept: sol[d],
        ridge,
    })
}
