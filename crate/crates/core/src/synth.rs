//! Simulated users with known metadata preferences, and the experiment that
//! checks whether explanations recover them.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{train_als, AlsConfig};
use crate::data::{FactorMatrix, FactorModel, MetadataMatrix, Rating, RatingScale, RatingsMatrix};
use crate::error::{Error, Result};
use crate::influence::{explain, Aggregation, InfluenceQuery, InfluenceReport};
use crate::ingest::{select_features, FeatureFilterSpec};
use crate::rng;
use crate::shadow::{train_shadow, ShadowConfig};
use crate::stats::{cohens_d, mean, welch_t};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub liked: BTreeSet<usize>,
    pub disliked: BTreeSet<usize>,
}

impl PreferenceProfile {
    pub fn new(liked: BTreeSet<usize>, disliked: BTreeSet<usize>) -> Result<Self> {
        let p = PreferenceProfile { liked, disliked };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.liked.is_empty() && self.disliked.is_empty() {
            return Err(Error::Validation("preference profile is empty".into()));
        }
        if let Some(f) = self.liked.intersection(&self.disliked).next() {
            return Err(Error::Validation(format!("feature {f} is both liked and disliked")));
        }
        Ok(())
    }

    pub fn features(&self) -> BTreeSet<usize> {
        self.liked.union(&self.disliked).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.liked.len() + self.disliked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// +1 for liked, −1 for disliked, 0 otherwise.
    pub fn sign(&self, feature: usize) -> f64 {
        if self.liked.contains(&feature) {
            1.0
        } else if self.disliked.contains(&feature) {
            -1.0
        } else {
            0.0
        }
    }

    /// Signed count of matched features on an item.
    pub fn net_matches(&self, item_features: &[usize]) -> f64 {
        item_features.iter().map(|&f| self.sign(f)).sum()
    }

    fn insert(&mut self, feature: usize, liked: bool) {
        if liked {
            self.liked.insert(feature);
        } else {
            self.disliked.insert(feature);
        }
    }
}

/// Ordering used to pick the "top n" features when scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    Signed,
    #[default]
    Magnitude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    True,
    SemiRandom,
    Random,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::True, Condition::SemiRandom, Condition::Random];

    pub fn label(self) -> &'static str {
        match self {
            Condition::True => "true",
            Condition::SemiRandom => "semi_random",
            Condition::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub condition: Condition,
    pub repetition: usize,
    pub user: usize,
    pub score: f64,
}

/// Shape of the generated metadata when no item universe is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticItems {
    pub n_items: usize,
    pub n_features: usize,
    /// Feature marginals are drawn uniformly from this range.
    pub min_marginal: f64,
    pub max_marginal: f64,
}

impl Default for SyntheticItems {
    fn default() -> Self {
        SyntheticItems {
            n_items: 200,
            n_features: 40,
            min_marginal: 0.05,
            max_marginal: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_profiles: usize,
    pub features_per_profile: usize,
    pub n_users: usize,
    pub ratings_per_user: usize,
    pub base_rating: f64,
    pub delta: f64,
    pub scale: RatingScale,
    /// Features profiles are drawn from.
    pub feature_pool: FeatureFilterSpec,
    /// Fraction of a profile kept by the semi-random control.
    pub keep_fraction: f64,
    pub ranking: Ranking,
    pub aggregation: Aggregation,
    pub repetitions: usize,
    pub items: SyntheticItems,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_profiles: 3,
            features_per_profile: 4,
            n_users: 500,
            ratings_per_user: 50,
            base_rating: 3.0,
            delta: 1.0,
            scale: RatingScale::default(),
            feature_pool: FeatureFilterSpec::TopKEntropy { count: 15 },
            keep_fraction: 0.5,
            ranking: Ranking::Magnitude,
            aggregation: Aggregation::Mean,
            repetitions: 20,
            items: SyntheticItems::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_profiles", self.n_profiles),
            ("features_per_profile", self.features_per_profile),
            ("n_users", self.n_users),
            ("ratings_per_user", self.ratings_per_user),
            ("repetitions", self.repetitions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_users <= self.n_profiles {
            return Err(Error::Config(format!(
                "n_users ({}) must exceed n_profiles ({})",
                self.n_users, self.n_profiles
            )));
        }
        RatingScale::new(self.scale.low, self.scale.high)?;
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return Err(Error::Config("keep_fraction must lie in [0, 1]".into()));
        }
        if !(self.base_rating.is_finite() && self.delta.is_finite()) {
            return Err(Error::Config("base_rating and delta must be finite".into()));
        }
        let it = &self.items;
        if it.n_items == 0 || it.n_features == 0 || !(0.0 < it.min_marginal && it.min_marginal <= it.max_marginal && it.max_marginal < 1.0) {
            return Err(Error::Config("synthetic item shape is invalid".into()));
        }
        self.feature_pool.validate()
    }
}

/// Independent Bernoulli features over `n_items` items, each with a marginal
/// drawn from the configured range.
pub fn synthetic_metadata(shape: &SyntheticItems, seed: u64) -> Result<MetadataMatrix> {
    let mut g = rng::seeded(seed);
    let mut columns = Vec::with_capacity(shape.n_features);
    for _ in 0..shape.n_features {
        let p = if shape.max_marginal > shape.min_marginal {
            g.gen_range(shape.min_marginal..shape.max_marginal)
        } else {
            shape.min_marginal
        };
        columns.push((0..shape.n_items).filter(|_| g.gen_bool(p)).collect());
    }
    let width = (shape.n_features.max(2) - 1).to_string().len();
    let names = (0..shape.n_features).map(|f| format!("feature_{f:0width$}")).collect();
    MetadataMatrix::from_columns(shape.n_items, names, columns)
}

pub fn generate_profiles(pool: &[usize], cfg: &SimConfig, seed: u64) -> Result<Vec<PreferenceProfile>> {
    let pool: Vec<usize> = pool.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if pool.len() < cfg.features_per_profile {
        return Err(Error::Config(format!(
            "feature pool has {} features, profiles need {}",
            pool.len(),
            cfg.features_per_profile
        )));
    }
    if cfg.features_per_profile == 0 {
        return Err(Error::Config("features_per_profile must be >= 1".into()));
    }
    let mut g = rng::seeded(seed);
    Ok((0..cfg.n_profiles)
        .map(|_| {
            let mut p = PreferenceProfile::default();
            for idx in sample(&mut g, pool.len(), cfg.features_per_profile).into_vec() {
                p.insert(pool[idx], g.gen_bool(0.5));
            }
            p
        })
        .collect())
}

/// The generative rating rule before clamping.
pub fn unclamped_rating(profile: &PreferenceProfile, item_features: &[usize], cfg: &SimConfig) -> f64 {
    // one delta per matched feature, in feature order, so the direct
    // encoding's dot product reproduces it bit for bit
    item_features
        .iter()
        .fold(cfg.base_rating, |acc, &f| acc + cfg.delta * profile.sign(f))
}

/// Simulated ratings plus the profile index of every user. Users
/// `0..n_profiles` take profiles round-robin so each is used; later users
/// draw uniformly.
pub fn simulate_ratings(
    profiles: &[PreferenceProfile],
    meta: &MetadataMatrix,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(RatingsMatrix, Vec<usize>)> {
    if meta.n_items() == 0 {
        return Err(Error::Config("metadata has no items".into()));
    }
    if profiles.is_empty() {
        return Err(Error::Config("no preference profiles".into()));
    }
    if cfg.ratings_per_user > meta.n_items() {
        return Err(Error::Config(format!(
            "ratings_per_user ({}) exceeds the number of items ({})",
            cfg.ratings_per_user,
            meta.n_items()
        )));
    }
    let mut g = rng::seeded(seed);
    let assignment: Vec<usize> = (0..cfg.n_users)
        .map(|u| if u < profiles.len() { u } else { g.gen_range(0..profiles.len()) })
        .collect();
    let mut entries = Vec::with_capacity(cfg.n_users * cfg.ratings_per_user);
    for (user, &p) in assignment.iter().enumerate() {
        let mut items = sample(&mut g, meta.n_items(), cfg.ratings_per_user).into_vec();
        items.sort_unstable();
        for item in items {
            let value = cfg.scale.clamp(unclamped_rating(&profiles[p], meta.item_features(item)?, cfg));
            entries.push(Rating { user, item, value });
        }
    }
    Ok((RatingsMatrix::new(cfg.n_users, meta.n_items(), cfg.scale, entries)?, assignment))
}

/// A factor model that is the generative rule: item row = a constant 1
/// followed by the item's 0/1 indicators over `pool` (ascending); user row
/// = `base_rating` followed by ±delta on liked and disliked pool features.
pub fn direct_encode_model(
    profiles: &[PreferenceProfile],
    assignment: &[usize],
    meta: &MetadataMatrix,
    pool: &[usize],
    cfg: &SimConfig,
) -> Result<FactorModel> {
    let pool: Vec<usize> = pool.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let k = pool.len() + 1;
    let mut users = FactorMatrix::zeros(assignment.len(), k);
    for (u, &p) in assignment.iter().enumerate() {
        let profile = profiles.get(p).ok_or_else(|| Error::index("profile", p, profiles.len()))?;
        let row = users.row_mut(u);
        row[0] = cfg.base_rating;
        for (j, &f) in pool.iter().enumerate() {
            row[j + 1] = cfg.delta * profile.sign(f);
        }
    }
    let mut items = FactorMatrix::zeros(meta.n_items(), k);
    for i in 0..meta.n_items() {
        items.row_mut(i)[0] = 1.0;
    }
    for (j, &f) in pool.iter().enumerate() {
        if f >= meta.n_features() {
            return Err(Error::index("feature", f, meta.n_features()));
        }
        for &i in meta.column(f) {
            items.row_mut(i)[j + 1] = 1.0;
        }
    }
    FactorModel::new(0.0, users, items)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControlMode {
    SemiRandom { keep_fraction: f64 },
    Random,
}

/// A control profile of the same size. Replacement features come from
/// `pool` minus the original profile's features, so a random control never
/// overlaps the original and a semi-random one keeps exactly
/// `floor(keep_fraction · n)` (at least one when `keep_fraction > 0`)
/// original features.
pub fn control_profile(profile: &PreferenceProfile, pool: &[usize], mode: ControlMode, seed: u64) -> Result<PreferenceProfile> {
    let original: Vec<usize> = profile.features().into_iter().collect();
    let n = original.len();
    let mut g = rng::seeded(seed);
    let keep = match mode {
        ControlMode::Random => 0,
        ControlMode::SemiRandom { keep_fraction } => {
            if !(0.0..=1.0).contains(&keep_fraction) {
                return Err(Error::Config("keep_fraction must lie in [0, 1]".into()));
            }
            let k = (keep_fraction * n as f64).floor() as usize;
            if keep_fraction > 0.0 { k.max(1).min(n) } else { 0 }
        }
    };
    let candidates: Vec<usize> = pool
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|&f| profile.sign(f) == 0.0)
        .collect();
    if candidates.len() < n - keep {
        return Err(Error::Config(format!(
            "control pool has {} features outside the profile, {} needed",
            candidates.len(),
            n - keep
        )));
    }
    let mut out = PreferenceProfile::default();
    let mut kept = original.clone();
    kept.shuffle(&mut g);
    for &f in &kept[..keep] {
        out.insert(f, profile.sign(f) > 0.0);
    }
    for idx in sample(&mut g, candidates.len(), n - keep).into_vec() {
        out.insert(candidates[idx], g.gen_bool(0.5));
    }
    Ok(out)
}

fn ranked_values(report: &InfluenceReport, ranking: Ranking) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = report
        .influences
        .iter()
        .map(|f| {
            let x = match ranking {
                Ranking::Signed => f.influence,
                Ranking::Magnitude => f.influence.abs(),
            };
            (f.index, x)
        })
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Mean ranked influence of `true_features` over the mean of the top `n`
/// ranked influences, clamped to `[0, 1]`. Both sums run in descending
/// order, so a true set tied with the top `n` scores exactly 1.
pub fn correctness_score(report: &InfluenceReport, true_features: &BTreeSet<usize>, ranking: Ranking) -> Result<f64> {
    let n = true_features.len();
    if n == 0 {
        return Err(Error::Config("correctness score needs at least one true feature".into()));
    }
    let ranked = ranked_values(report, ranking);
    if ranked.len() < n {
        return Err(Error::Integrity(format!(
            "report lists {} features, fewer than the {n} true features",
            ranked.len()
        )));
    }
    let mut truth = Vec::with_capacity(n);
    for &f in true_features {
        match ranked.iter().find(|(i, _)| *i == f) {
            Some(&(_, v)) => truth.push(v),
            None => return Err(Error::Integrity(format!("true feature {f} is missing from the report"))),
        }
    }
    truth.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = ranked[..n].iter().map(|(_, v)| v).sum();
    if !(top > 0.0) {
        return Ok(0.0);
    }
    let found: f64 = truth.iter().sum();
    Ok((found / top).clamp(0.0, 1.0))
}

/// Replaces ALS with a hand-built model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Als,
    DirectEncode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMeans {
    pub true_mean: f64,
    pub semi_random_mean: f64,
    pub random_mean: f64,
}

/// One two-sample comparison over per-repetition condition means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: Condition,
    pub second: Condition,
    pub mean_difference: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub effect_size: Option<f64>,
    /// Why the test statistics are missing (e.g. zero variance).
    pub note: Option<String>,
}

fn compare(first: Condition, a: &[f64], second: Condition, b: &[f64]) -> Comparison {
    let mut notes = Vec::new();
    let welch = welch_t(a, b).map_err(|e| notes.push(e.to_string())).ok();
    let effect_size = cohens_d(a, b).map_err(|e| notes.push(e.to_string())).ok();
    Comparison {
        first,
        second,
        mean_difference: mean(a) - mean(b),
        t: welch.map(|w| w.t),
        p: welch.map(|w| w.p),
        effect_size,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seed: u64,
    pub means: ConditionMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub samples: Vec<ScoreSample>,
    pub repetitions: Vec<RepetitionSummary>,
    pub means: ConditionMeans,
    pub true_vs_semi_random: Comparison,
    pub semi_random_vs_random: Comparison,
    pub true_vs_random: Comparison,
}

impl ExperimentResult {
    pub fn samples_for(&self, condition: Condition) -> impl Iterator<Item = &ScoreSample> {
        self.samples.iter().filter(move |s| s.condition == condition)
    }
}

fn condition_means(samples: &[ScoreSample]) -> ConditionMeans {
    let m = |c: Condition| {
        let xs: Vec<f64> = samples.iter().filter(|s| s.condition == c).map(|s| s.score).collect();
        if xs.is_empty() { 0.0 } else { mean(&xs) }
    };
    ConditionMeans {
        true_mean: m(Condition::True),
        semi_random_mean: m(Condition::SemiRandom),
        random_mean: m(Condition::Random),
    }
}

/// Per-repetition working data, exposed for callers that want to inspect a
/// single simulated world.
pub struct World {
    pub meta: MetadataMatrix,
    pub pool: Vec<usize>,
    pub profiles: Vec<PreferenceProfile>,
    pub ratings: RatingsMatrix,
    pub assignment: Vec<usize>,
}

/// Builds one simulated world: metadata (given or generated), the profile
/// pool, profiles and ratings.
pub fn build_world(cfg: &SimConfig, items: Option<&MetadataMatrix>, seed: u64) -> Result<World> {
    let meta = match items {
        Some(m) => m.clone(),
        None => synthetic_metadata(&cfg.items, rng::derive(seed, 0))?,
    };
    let pool = select_features(&meta, cfg.feature_pool)?;
    let profiles = generate_profiles(&pool, cfg, rng::derive(seed, 1))?;
    let (ratings, assignment) = simulate_ratings(&profiles, &meta, cfg, rng::derive(seed, 2))?;
    Ok(World { meta, pool, profiles, ratings, assignment })
}

fn run_repetition(
    cfg: &SimConfig,
    mf_cfg: &AlsConfig,
    shadow_cfg: &ShadowConfig,
    baseline_kind: Baseline,
    items: Option<&MetadataMatrix>,
    repetition: usize,
) -> Result<(Vec<ScoreSample>, u64)> {
    let seed = rng::derive(cfg.seed, repetition as u64);
    let world = build_world(cfg, items, seed)?;
    let baseline = match baseline_kind {
        Baseline::Als => train_als(&world.ratings, &AlsConfig { seed: rng::derive(seed, 3), ..*mf_cfg })?,
        Baseline::DirectEncode => direct_encode_model(&world.profiles, &world.assignment, &world.meta, &world.pool, cfg)?,
    };
    let by_user = world.ratings.by_user();
    let mut rated = vec![false; world.meta.n_items()];
    for r in world.ratings.entries() {
        rated[r.item] = true;
    }
    let shadow = train_shadow(
        &baseline,
        &world.meta,
        Some(&rated),
        &ShadowConfig { seed: rng::derive(seed, 4), ..*shadow_cfg },
    )?;
    let d = world.meta.n_features();
    let per_user: Vec<Vec<ScoreSample>> = (0..cfg.n_users)
        .into_par_iter()
        .map(|user| {
            let items: Vec<usize> = by_user[user].iter().map(|&(i, _)| i).collect();
            let mut q = InfluenceQuery::aggregate(user, items);
            q.aggregation = cfg.aggregation;
            let report = explain(&shadow, &world.meta, &q, d)?;
            let profile = &world.profiles[world.assignment[user]];
            let user_seed = rng::derive(rng::derive(seed, 5), user as u64);
            let semi = control_profile(
                profile,
                &world.pool,
                ControlMode::SemiRandom { keep_fraction: cfg.keep_fraction },
                rng::derive(user_seed, 0),
            )?;
            let random = control_profile(profile, &world.pool, ControlMode::Random, rng::derive(user_seed, 1))?;
            [(Condition::True, profile), (Condition::SemiRandom, &semi), (Condition::Random, &random)]
                .into_iter()
                .map(|(condition, p)| {
                    Ok(ScoreSample {
                        condition,
                        repetition,
                        user,
                        score: correctness_score(&report, &p.features(), cfg.ranking)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((per_user.into_iter().flatten().collect(), seed))
}

/// Runs `cfg.repetitions` independent simulated worlds and tests whether
/// explanations score higher against true profiles than against
/// semi-random and random controls. Statistics compare per-repetition
/// condition means.
pub fn run_hypothesis_experiment(
    cfg: &SimConfig,
    mf_cfg: &AlsConfig,
    shadow_cfg: &ShadowConfig,
    baseline: Baseline,
    items: Option<&MetadataMatrix>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    mf_cfg.validate()?;
    let runs: Vec<(Vec<ScoreSample>, u64)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            run_repetition(cfg, mf_cfg, shadow_cfg, baseline, items, r).map_err(|e| Error::Repetition {
                repetition: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::new();
    let mut repetitions = Vec::new();
    for (r, (s, seed)) in runs.into_iter().enumerate() {
        repetitions.push(RepetitionSummary {
            repetition: r,
            seed,
            means: condition_means(&s),
        });
        samples.extend(s);
    }
    let series = |c: Condition| -> Vec<f64> {
        repetitions
            .iter()
            .map(|r| match c {
                Condition::True => r.means.true_mean,
                Condition::SemiRandom => r.means.semi_random_mean,
                Condition::Random => r.means.random_mean,
            })
            .collect()
    };
    let (t, s, r) = (series(Condition::True), series(Condition::SemiRandom), series(Condition::Random));
    Ok(ExperimentResult {
        means: condition_means(&samples),
        true_vs_semi_random: compare(Condition::True, &t, Condition::SemiRandom, &s),
        semi_random_vs_random: compare(Condition::SemiRandom, &s, Condition::Random, &r),
        true_vs_random: compare(Condition::True, &t, Condition::Random, &r),
        samples,
        repetitions,
    })
}
