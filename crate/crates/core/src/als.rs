//! Alternating least squares with weighted-λ regularization.
//!
//! Each half-step solves, for every row independently,
//! `(Qᵀ Q + λ·n·1) x = Qᵀ r` where `Q` stacks the fixed-side factors of the
//! row's observed entries and `n` is the row's observation count.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, FactorMatrix, FactorModel, IdMap, RatingsMatrix};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            rank: 10,
            lambda: 0.1,
            max_iterations: 20,
            convergence_tol: 1e-4,
            seed: 0,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-iteration training error recorded during a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlsTrace {
    /// Training RMSE after each full iteration.
    pub rmse: Vec<f64>,
    /// Regularized objective after each full iteration.
    pub objective: Vec<f64>,
}

pub fn train_als(ratings: &RatingsMatrix, cfg: &AlsConfig) -> Result<FactorModel> {
    train_als_traced(ratings, cfg).map(|(m, _)| m)
}

pub fn train_als_traced(ratings: &RatingsMatrix, cfg: &AlsConfig) -> Result<(FactorModel, AlsTrace)> {
    cfg.validate()?;
    if ratings.is_empty() {
        return Err(Error::Domain("cannot factorize an empty ratings matrix".into()));
    }
    let k = cfg.rank;
    let by_user = ratings.by_user();
    let by_item = ratings.by_item();

    let mut rng = rng::seeded(cfg.seed);
    let upper = 1.0 / (k as f64).sqrt();
    let init: Vec<f64> = (0..ratings.n_items() * k).map(|_| rng.gen_range(0.0..upper)).collect();
    let mut items = FactorMatrix::from_row_major(ratings.n_items(), k, init)?;
    let mut users = FactorMatrix::zeros(ratings.n_users(), k);

    let mut trace = AlsTrace::default();
    for _ in 0..cfg.max_iterations {
        users = solve_side(&by_user, &items, cfg.lambda, "user")?;
        items = solve_side(&by_item, &users, cfg.lambda, "item")?;
        let rmse = rmse_of(&users, &items, ratings);
        trace.objective.push(objective(&users, &items, ratings, &by_user, &by_item, cfg.lambda));
        let improved = trace.rmse.last().map(|prev| prev - rmse);
        trace.rmse.push(rmse);
        if let Some(delta) = improved {
            if delta < cfg.convergence_tol {
                break;
            }
        }
    }

    let model = FactorModel::new(cfg.lambda, users, items)?;
    Ok((model, trace))
}

fn solve_side(
    observed: &[Vec<(usize, f64)>],
    fixed: &FactorMatrix,
    lambda: f64,
    side: &'static str,
) -> Result<FactorMatrix> {
    let k = fixed.cols();
    let rows: Vec<Vec<f64>> = observed
        .par_iter()
        .enumerate()
        .map(|(row, obs)| solve_row(row, obs, fixed, lambda, side))
        .collect::<Result<_>>()?;
    FactorMatrix::from_rows(&rows, k)
}

fn solve_row(
    row: usize,
    obs: &[(usize, f64)],
    fixed: &FactorMatrix,
    lambda: f64,
    side: &'static str,
) -> Result<Vec<f64>> {
    let k = fixed.cols();
    if obs.is_empty() {
        return Ok(vec![0.0; k]);
    }
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for &(other, r) in obs {
        let q = fixed.row(other);
        for a in 0..k {
            rhs[a] += r * q[a];
            for b in 0..=a {
                gram[a * k + b] += q[a] * q[b];
            }
        }
    }
    let reg = lambda * obs.len() as f64;
    for a in 0..k {
        gram[a * k + a] += reg;
        for b in 0..a {
            gram[b * k + a] = gram[a * k + b];
        }
    }
    solve_spd(gram, k, rhs, 1e-14).ok_or_else(|| {
        Error::Singular(format!(
            "{side} {row}: normal equations are not positive definite (lambda = {lambda}); use lambda > 0"
        ))
    })
}

fn rmse_of(users: &FactorMatrix, items: &FactorMatrix, ratings: &RatingsMatrix) -> f64 {
    let sse: f64 = ratings
        .entries()
        .iter()
        .map(|r| {
            let e = r.value - dot(users.row(r.user), items.row(r.item));
            e * e
        })
        .sum();
    (sse / ratings.len() as f64).sqrt()
}

fn objective(
    users: &FactorMatrix,
    items: &FactorMatrix,
    ratings: &RatingsMatrix,
    by_user: &[Vec<(usize, f64)>],
    by_item: &[Vec<(usize, f64)>],
    lambda: f64,
) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let sse: f64 = ratings
        .entries()
        .iter()
        .map(|r| (r.value - dot(users.row(r.user), items.row(r.item))).powi(2))
        .sum();
    let ru: f64 = (0..users.rows()).map(|u| by_user[u].len() as f64 * sq(users.row(u))).sum();
    let ri: f64 = (0..items.rows()).map(|i| by_item[i].len() as f64 * sq(items.row(i))).sum();
    sse + lambda * (ru + ri)
}

/// Root mean squared error over the observed entries only.
pub fn training_rmse(model: &FactorModel, ratings: &RatingsMatrix) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::Domain("RMSE of an empty ratings matrix".into()));
    }
    if ratings.n_users() > model.n_users() || ratings.n_items() > model.n_items() {
        return Err(Error::Dimension {
            expected: model.n_users(),
            got: ratings.n_users(),
        });
    }
    Ok(rmse_of(&model.user_factors, &model.item_factors, ratings))
}

pub const MODEL_FORMAT: &str = "lfi-factor-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    rank: usize,
    lambda: f64,
    n_users: usize,
    n_items: usize,
    user_ids: IdMap,
    item_ids: IdMap,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

/// Serializes a model as versioned JSON (factors row-major).
pub fn model_to_json(model: &FactorModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        rank: model.rank,
        lambda: model.lambda,
        n_users: model.n_users(),
        n_items: model.n_items(),
        user_ids: model.user_ids.clone(),
        item_ids: model.item_ids.clone(),
        user_factors: model.user_factors.as_slice().to_vec(),
        item_factors: model.item_factors.as_slice().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<FactorModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!("expected {MODEL_FORMAT:?}, found {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", file.version)));
    }
    FactorModel::with_ids(
        file.lambda,
        FactorMatrix::from_row_major(file.n_users, file.rank, file.user_factors)?,
        FactorMatrix::from_row_major(file.n_items, file.rank, file.item_factors)?,
        file.user_ids,
        file.item_ids,
    )
}

pub fn save_model(model: &FactorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FactorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
