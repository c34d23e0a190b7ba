//! The shadow model: one metadata regressor per item latent factor,
//! recombined with the baseline's user factors,
//! `r̃_u(a) = Σ_j U[u][j] · f_j(a)`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, FactorMatrix, FactorModel, MetadataMatrix};
use crate::error::{Error, Result};
use crate::regress::{fit_linear, fit_tree, Regressor, TreeParams};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShadowKind {
    Linear { ridge: f64 },
    Tree(TreeParams),
}

impl ShadowKind {
    pub fn label(&self) -> String {
        match self {
            ShadowKind::Linear { ridge } => format!("linear(ridge={ridge})"),
            ShadowKind::Tree(p) => format!("tree(depth={}, bins={})", p.max_depth, p.bins),
        }
    }

    fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Regressor> {
        Ok(match *self {
            ShadowKind::Linear { ridge } => fit_linear(x, y, ridge)?.into(),
            ShadowKind::Tree(params) => fit_tree(x, y, params)?.into(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub kind: ShadowKind,
    /// Fraction of eligible items used for fitting; the rest are held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            kind: ShadowKind::Tree(TreeParams::default()),
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowModel {
    pub kind: ShadowKind,
    pub feature_names: Vec<String>,
    /// Empirical probability of each feature over the eligible items.
    pub marginals: Vec<f64>,
    pub predictors: Vec<Regressor>,
    pub user_factors: FactorMatrix,
    pub train_items: Vec<usize>,
    pub eval_items: Vec<usize>,
}

impl ShadowModel {
    pub fn rank(&self) -> usize {
        self.predictors.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.rows()
    }

    /// Items the shadow was fitted or evaluated on.
    pub fn eligible_items(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train_items.iter().chain(&self.eval_items).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn is_eval_item(&self, item: usize) -> bool {
        self.eval_items.binary_search(&item).is_ok()
    }

    /// Predicted latent vector `(f_1(a), …, f_k(a))`.
    pub fn latent(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: a.len(),
            });
        }
        self.predictors.iter().map(|f| f.predict(a)).collect()
    }

    pub fn user_row(&self, user: usize) -> Result<&[f64]> {
        if user >= self.n_users() {
            return Err(Error::Index {
                what: "user",
                index: user,
                size: self.n_users(),
            });
        }
        Ok(self.user_factors.row(user))
    }

    pub fn predict(&self, user: usize, a: &[f64]) -> Result<f64> {
        let u = self.user_row(user)?;
        Ok(dot(u, &self.latent(a)?))
    }
}

pub fn shadow_predict(shadow: &ShadowModel, user: usize, a: &[f64]) -> Result<f64> {
    shadow.predict(user, a)
}

/// Fits `f_j` on `(attribute rows, item_factors[:, j])` over a seeded
/// per-item split of the eligible items. `meta` must be aligned with the
/// baseline's item indexing; `eligible` (when given) masks out pruned items.
pub fn train_shadow(
    baseline: &FactorModel,
    meta: &MetadataMatrix,
    eligible: Option<&[bool]>,
    cfg: &ShadowConfig,
) -> Result<ShadowModel> {
    if meta.n_items() != baseline.n_items() {
        return Err(Error::Dimension {
            expected: baseline.n_items(),
            got: meta.n_items(),
        });
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1], got {}",
            cfg.train_fraction
        )));
    }
    let mut candidates: Vec<usize> = match eligible {
        Some(mask) => {
            if mask.len() != meta.n_items() {
                return Err(Error::Dimension {
                    expected: meta.n_items(),
                    got: mask.len(),
                });
            }
            (0..meta.n_items()).filter(|&i| mask[i]).collect()
        }
        None => (0..meta.n_items()).collect(),
    };

    let n_train = if cfg.train_fraction >= 1.0 {
        candidates.len()
    } else {
        ((candidates.len() as f64 * cfg.train_fraction).round() as usize).min(candidates.len())
    };
    if n_train < 2 {
        return Err(Error::InsufficientData(format!(
            "shadow model needs at least 2 training items, split leaves {n_train}"
        )));
    }
    candidates.shuffle(&mut rng::seeded(cfg.seed));
    let mut train_items = candidates[..n_train].to_vec();
    let mut eval_items = candidates[n_train..].to_vec();
    train_items.sort_unstable();
    eval_items.sort_unstable();

    let mut pool = train_items.clone();
    pool.extend_from_slice(&eval_items);
    let marginals = pooled_marginals(meta, &pool);

    let x: Vec<Vec<f64>> = train_items
        .iter()
        .map(|&i| meta.dense_attribute_row(i))
        .collect::<Result<_>>()?;
    let predictors: Vec<Regressor> = (0..baseline.rank)
        .into_par_iter()
        .map(|j| {
            let y: Vec<f64> = train_items.iter().map(|&i| baseline.item_factors.get(i, j)).collect();
            cfg.kind.fit(&x, &y)
        })
        .collect::<Result<_>>()?;

    Ok(ShadowModel {
        kind: cfg.kind,
        feature_names: meta.feature_names().to_vec(),
        marginals,
        predictors,
        user_factors: baseline.user_factors.clone(),
        train_items,
        eval_items,
    })
}

/// Per-feature fraction of `items` holding the feature.
pub fn pooled_marginals(meta: &MetadataMatrix, items: &[usize]) -> Vec<f64> {
    let members: BTreeSet<usize> = items.iter().copied().collect();
    (0..meta.n_features())
        .map(|f| {
            if members.is_empty() {
                0.0
            } else {
                let hits = meta.column(f).iter().filter(|i| members.contains(i)).count();
                hits as f64 / members.len() as f64
            }
        })
        .collect()
}

fn attribute_rows(meta: &MetadataMatrix, items: &[usize]) -> Result<Vec<Vec<f64>>> {
    items.iter().map(|&i| meta.dense_attribute_row(i)).collect()
}

/// Mean absolute latent error per factor and its average over factors.
pub fn latent_agreement(
    shadow: &ShadowModel,
    baseline: &FactorModel,
    meta: &MetadataMatrix,
    items: &[usize],
) -> Result<(Vec<f64>, f64)> {
    if items.is_empty() {
        return Err(Error::Domain("latent agreement over an empty item set".into()));
    }
    let k = shadow.rank();
    let mut per_factor = vec![0.0; k];
    for (&item, a) in items.iter().zip(attribute_rows(meta, items)?) {
        let predicted = shadow.latent(&a)?;
        let truth = baseline.item_row(item)?;
        for j in 0..k {
            per_factor[j] += (predicted[j] - truth[j]).abs();
        }
    }
    for v in &mut per_factor {
        *v /= items.len() as f64;
    }
    let mean = per_factor.iter().sum::<f64>() / k as f64;
    Ok((per_factor, mean))
}

fn residual_errors(residuals: &[f64]) -> Result<(f64, f64)> {
    if residuals.is_empty() {
        return Err(Error::Domain("agreement over an empty pair set".into()));
    }
    let n = residuals.len() as f64;
    let mae = residuals.iter().map(|r| r.abs()).sum::<f64>() / n;
    let mse = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    Ok((mae, mse))
}

/// `(MAE, MSE)` of baseline prediction minus shadow prediction over
/// `(user, item)` pairs. The reference is the baseline's `r̂`, never the
/// ground-truth rating.
pub fn observational_agreement(
    shadow: &ShadowModel,
    baseline: &FactorModel,
    meta: &MetadataMatrix,
    pairs: &[(usize, usize)],
) -> Result<(f64, f64)> {
    let latents = latent_cache(shadow, meta, pairs)?;
    let residuals = pairs
        .iter()
        .map(|&(u, i)| {
            let shadow_rating = dot(shadow.user_row(u)?, &latents[&i]);
            Ok(baseline.predict_rating(u, i)? - shadow_rating)
        })
        .collect::<Result<Vec<_>>>()?;
    residual_errors(&residuals)
}

fn latent_cache(
    shadow: &ShadowModel,
    meta: &MetadataMatrix,
    pairs: &[(usize, usize)],
) -> Result<std::collections::HashMap<usize, Vec<f64>>> {
    let items: BTreeSet<usize> = pairs.iter().map(|&(_, i)| i).collect();
    items
        .into_iter()
        .map(|i| Ok((i, shadow.latent(&meta.dense_attribute_row(i)?)?)))
        .collect()
}

pub const FAITHFULNESS_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub shadow_mse: f64,
    pub random_mse: f64,
    /// `random_mse / max(shadow_mse, ε)`; larger means more faithful.
    pub ratio: f64,
}

impl Faithfulness {
    /// The shadow reproduced the baseline to within `ε`; the ratio is then a
    /// lower bound rather than a measurement.
    pub fn is_exact(&self) -> bool {
        self.shadow_mse <= FAITHFULNESS_EPSILON
    }
}

/// Compares rating error with predicted latents against rating error with
/// random latents drawn uniformly per coordinate from each factor's range
/// over `range_items`. One random vector is drawn per distinct item, in
/// ascending item order.
pub fn faithfulness_with<F>(
    baseline: &FactorModel,
    predicted_latent: F,
    range_items: &[usize],
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Faithfulness>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    if pairs.is_empty() {
        return Err(Error::Domain("faithfulness over an empty pair set".into()));
    }
    if range_items.is_empty() {
        return Err(Error::Domain("faithfulness needs a non-empty item range".into()));
    }
    let k = baseline.rank;
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for &i in range_items {
        for (j, &v) in baseline.item_row(i)?.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }

    let items: BTreeSet<usize> = pairs.iter().map(|&(_, i)| i).collect();
    let mut g = rng::seeded(seed);
    let mut predicted = std::collections::HashMap::new();
    let mut random = std::collections::HashMap::new();
    for &i in &items {
        predicted.insert(i, predicted_latent(i)?);
        let v: Vec<f64> = (0..k)
            .map(|j| if hi[j] > lo[j] { g.gen_range(lo[j]..hi[j]) } else { lo[j] })
            .collect();
        random.insert(i, v);
    }

    let mut shadow_res = Vec::with_capacity(pairs.len());
    let mut random_res = Vec::with_capacity(pairs.len());
    for &(u, i) in pairs {
        let truth = baseline.predict_rating(u, i)?;
        let urow = baseline.user_row(u)?;
        shadow_res.push(truth - dot(urow, &predicted[&i]));
        random_res.push(truth - dot(urow, &random[&i]));
    }
    let (_, shadow_mse) = residual_errors(&shadow_res)?;
    let (_, random_mse) = residual_errors(&random_res)?;
    Ok(Faithfulness {
        shadow_mse,
        random_mse,
        ratio: random_mse / shadow_mse.max(FAITHFULNESS_EPSILON),
    })
}

pub fn faithfulness(
    shadow: &ShadowModel,
    baseline: &FactorModel,
    meta: &MetadataMatrix,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Faithfulness> {
    let range = shadow.eligible_items();
    faithfulness_with(
        baseline,
        |i| shadow.latent(&meta.dense_attribute_row(i)?),
        &range,
        pairs,
        seed,
    )
}

/// Which items agreement is measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementScope {
    Eval,
    Train,
    All,
}

impl std::str::FromStr for AgreementScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eval" => Ok(AgreementScope::Eval),
            "train" => Ok(AgreementScope::Train),
            "all" => Ok(AgreementScope::All),
            other => Err(Error::Config(format!("unknown agreement scope {other:?} (eval|train|all)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// `"eval-set"`, `"train-set"` or `"all-items"`.
    pub measured_on: String,
    pub n_items: usize,
    pub n_pairs: usize,
    pub per_factor_mae: Vec<f64>,
    pub mean_latent_mae: f64,
    pub observational_mae: f64,
    pub observational_mse: f64,
    pub faithfulness: f64,
    pub faithfulness_exact: bool,
}

/// Every agreement metric over all users paired with the scoped items. An
/// empty eval set (split 1.0) falls back to the training items and says so.
pub fn agreement_report(
    shadow: &ShadowModel,
    baseline: &FactorModel,
    meta: &MetadataMatrix,
    scope: AgreementScope,
    seed: u64,
) -> Result<AgreementReport> {
    let (items, label) = match scope {
        AgreementScope::Eval if !shadow.eval_items.is_empty() => (shadow.eval_items.clone(), "eval-set"),
        AgreementScope::Eval | AgreementScope::Train => (shadow.train_items.clone(), "train-set"),
        AgreementScope::All => (shadow.eligible_items(), "all-items"),
    };
    let pairs: Vec<(usize, usize)> = (0..baseline.n_users())
        .flat_map(|u| items.iter().map(move |&i| (u, i)))
        .collect();
    let (per_factor_mae, mean_latent_mae) = latent_agreement(shadow, baseline, meta, &items)?;
    let (observational_mae, observational_mse) = observational_agreement(shadow, baseline, meta, &pairs)?;
    let faith = faithfulness(shadow, baseline, meta, &pairs, seed)?;
    Ok(AgreementReport {
        measured_on: label.into(),
        n_items: items.len(),
        n_pairs: pairs.len(),
        per_factor_mae,
        mean_latent_mae,
        observational_mae,
        observational_mse,
        faithfulness: faith.ratio,
        faithfulness_exact: faith.is_exact(),
    })
}

pub const SHADOW_FORMAT: &str = "lfi-shadow-model";
pub const SHADOW_VERSION: u32 = 1;

/// A shadow model bundled with the baseline it imitates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowBundle {
    pub format: String,
    pub version: u32,
    pub shadow: ShadowModel,
    pub baseline: FactorModel,
}

impl ShadowBundle {
    pub fn new(shadow: ShadowModel, baseline: FactorModel) -> Self {
        ShadowBundle {
            format: SHADOW_FORMAT.into(),
            version: SHADOW_VERSION,
            shadow,
            baseline,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: ShadowBundle = serde_json::from_str(&text)?;
        if bundle.format != SHADOW_FORMAT || bundle.version != SHADOW_VERSION {
            return Err(Error::Format(format!(
                "expected {SHADOW_FORMAT:?} v{SHADOW_VERSION}, found {:?} v{}",
                bundle.format, bundle.version
            )));
        }
        Ok(bundle)
    }
}
