//! Per-factor predictor families: ridge regression and binned CART trees.

mod linear;
mod tree;

pub use linear::{fit_linear, LinearRegressor};
pub use tree::{fit_tree, Node, RegressionTree, TreeParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted regressor of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Linear(LinearRegressor),
    Tree(RegressionTree),
}

impl Regressor {
    pub fn n_features(&self) -> usize {
        match self {
            Regressor::Linear(m) => m.n_features(),
            Regressor::Tree(t) => t.n_features(),
        }
    }

    pub fn predict(&self, a: &[f64]) -> Result<f64> {
        match self {
            Regressor::Linear(m) => m.predict(a),
            Regressor::Tree(t) => t.predict(a),
        }
    }
}

impl From<LinearRegressor> for Regressor {
    fn from(m: LinearRegressor) -> Self {
        Regressor::Linear(m)
    }
}

impl From<RegressionTree> for Regressor {
    fn from(t: RegressionTree) -> Self {
        Regressor::Tree(t)
    }
}

pub(crate) fn check_training_set(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::InsufficientData("regressor needs at least one training row".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: row.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in training data".into()));
    }
    Ok(d)
}

pub(crate) fn check_input(a: &[f64], expected: usize) -> Result<()> {
    if a.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: a.len(),
        });
    }
    Ok(())
}
