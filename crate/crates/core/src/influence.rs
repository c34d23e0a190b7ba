//! Unary quantitative input influence on shadow-model ratings:
//! `ι(i) = m(x) − E_y[m(x with feature i := y)]`, with `y` drawn from the
//! feature's marginal.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FactorModel, MetadataMatrix};
use crate::error::{Error, Result};
use crate::rng;
use crate::shadow::ShadowModel;

fn check_feature(x: &[f64], feature: usize) -> Result<()> {
    if feature >= x.len() {
        return Err(Error::index("feature", feature, x.len()));
    }
    Ok(())
}

fn with_value<F>(m: &F, x: &mut [f64], feature: usize, v: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let saved = x[feature];
    x[feature] = v;
    let out = m(x);
    x[feature] = saved;
    out
}

/// Exact influence of a binary feature whose marginal is Bernoulli(`marginal`).
pub fn qii_exact_binary<F>(rating_fn: F, x: &[f64], feature: usize, marginal: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_feature(x, feature)?;
    if x[feature] != 0.0 && x[feature] != 1.0 {
        return Err(Error::Estimator(format!(
            "feature {feature} has non-binary value {}; use the monte_carlo estimator",
            x[feature]
        )));
    }
    if !(0.0..=1.0).contains(&marginal) {
        return Err(Error::Domain(format!("marginal {marginal} outside [0, 1]")));
    }
    let mut x = x.to_vec();
    let base = rating_fn(&x)?;
    let on = with_value(&rating_fn, &mut x, feature, 1.0)?;
    let off = with_value(&rating_fn, &mut x, feature, 0.0)?;
    // differences first, so a coordinate the rating ignores gives exactly 0
    Ok(marginal * (base - on) + (1.0 - marginal) * (base - off))
}

/// Monte-Carlo influence: mean of `m(x) − m(x with feature := v)` over
/// `samples` seeded uniform draws of `v` from `column_values`.
pub fn qii_monte_carlo<F>(
    rating_fn: F,
    x: &[f64],
    feature: usize,
    column_values: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_feature(x, feature)?;
    if column_values.is_empty() {
        return Err(Error::Domain("monte carlo influence needs a non-empty value pool".into()));
    }
    if samples == 0 {
        return Err(Error::Config("monte carlo influence needs at least one sample".into()));
    }
    let mut x = x.to_vec();
    let base = rating_fn(&x)?;
    // rating_fn is pure, so each distinct substituted value is evaluated once
    let mut cache: Vec<(u64, f64)> = Vec::new();
    let mut g = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let v = column_values[g.gen_range(0..column_values.len())];
        let m = match cache.iter().find(|(bits, _)| *bits == v.to_bits()) {
            Some(&(_, m)) => m,
            None => {
                let m = with_value(&rating_fn, &mut x, feature, v)?;
                cache.push((v.to_bits(), m));
                m
            }
        };
        total += base - m;
    }
    Ok(total / samples as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    SingleItem { item: usize },
    ItemSet { items: Vec<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    ExactBinary,
    MonteCarlo { samples: usize, seed: u64 },
}

/// How per-item influences combine over an item set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of the signed per-item influences.
    #[default]
    Mean,
    /// Mean of per-item magnitudes. Signed influences of a feature average
    /// towards zero over items drawn from the population the marginal comes
    /// from, so this is the form that reveals general preferences.
    MeanAbsolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceQuery {
    pub user: usize,
    pub scope: Scope,
    pub estimator: Estimator,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl InfluenceQuery {
    pub fn single(user: usize, item: usize) -> Self {
        InfluenceQuery {
            user,
            scope: Scope::SingleItem { item },
            estimator: Estimator::ExactBinary,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn aggregate(user: usize, items: Vec<usize>) -> Self {
        InfluenceQuery {
            user,
            scope: Scope::ItemSet { items },
            estimator: Estimator::ExactBinary,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn items(&self) -> &[usize] {
        match &self.scope {
            Scope::SingleItem { item } => std::slice::from_ref(item),
            Scope::ItemSet { items } => items,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items().is_empty() {
            return Err(Error::Config("item set must be non-empty".into()));
        }
        if let Estimator::MonteCarlo { samples: 0, .. } = self.estimator {
            return Err(Error::Config("monte carlo estimator needs samples >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfluence {
    pub feature: String,
    pub index: usize,
    /// In rating units (stars).
    pub influence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub query: InfluenceQuery,
    pub influences: Vec<FeatureInfluence>,
    /// Shadow rating of the item, or the mean over the item set.
    pub shadow_rating: f64,
    pub baseline_rating: Option<f64>,
    pub warnings: Vec<String>,
}

impl InfluenceReport {
    pub fn influence_of(&self, feature: usize) -> Option<f64> {
        self.influences.iter().find(|f| f.index == feature).map(|f| f.influence)
    }
}

/// Descending magnitude, ties broken by feature name.
pub fn report_order(a: &FeatureInfluence, b: &FeatureInfluence) -> Ordering {
    b.influence
        .abs()
        .total_cmp(&a.influence.abs())
        .then_with(|| a.feature.cmp(&b.feature))
}

/// Influence of every feature on `shadow`'s rating for the query's user,
/// sorted and truncated to `top_k`.
pub fn explain(shadow: &ShadowModel, meta: &MetadataMatrix, q: &InfluenceQuery, top_k: usize) -> Result<InfluenceReport> {
    explain_against(shadow, meta, None, q, top_k)
}

/// As [`explain`], also reporting the baseline's rating for single-item
/// queries when the baseline is given.
pub fn explain_against(
    shadow: &ShadowModel,
    meta: &MetadataMatrix,
    baseline: Option<&FactorModel>,
    q: &InfluenceQuery,
    top_k: usize,
) -> Result<InfluenceReport> {
    q.validate()?;
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if meta.feature_names() != shadow.feature_names.as_slice() {
        return Err(Error::Validation(
            "metadata features differ from the features the shadow model was trained on".into(),
        ));
    }
    let items = q.items();
    for &i in items {
        if i >= meta.n_items() {
            return Err(Error::index("item", i, meta.n_items()));
        }
    }
    shadow.user_row(q.user)?;

    let d = shadow.n_features();
    let pool = shadow.eligible_items();
    let columns: Vec<Vec<f64>> = match q.estimator {
        Estimator::ExactBinary => Vec::new(),
        Estimator::MonteCarlo { .. } => (0..d)
            .map(|f| {
                let col = meta.column(f);
                pool.iter().map(|i| if col.binary_search(i).is_ok() { 1.0 } else { 0.0 }).collect()
            })
            .collect(),
    };
    let rating = |a: &[f64]| shadow.predict(q.user, a);

    let per_item: Vec<(f64, Vec<f64>)> = items
        .par_iter()
        .map(|&item| {
            let x = meta.dense_attribute_row(item)?;
            let influences = (0..d)
                .map(|f| match q.estimator {
                    Estimator::ExactBinary => qii_exact_binary(rating, &x, f, shadow.marginals[f]),
                    Estimator::MonteCarlo { samples, seed } => qii_monte_carlo(
                        rating,
                        &x,
                        f,
                        &columns[f],
                        samples,
                        rng::derive(rng::derive(seed, item as u64), f as u64),
                    ),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((rating(&x)?, influences))
        })
        .collect::<Result<_>>()?;

    let n = items.len() as f64;
    let mut mean = vec![0.0; d];
    let mut shadow_rating = 0.0;
    for (r, infl) in &per_item {
        shadow_rating += r;
        for (m, v) in mean.iter_mut().zip(infl) {
            *m += match q.aggregation {
                Aggregation::Mean => *v,
                Aggregation::MeanAbsolute => v.abs(),
            };
        }
    }
    let shadow_rating = shadow_rating / n;
    let mut influences: Vec<FeatureInfluence> = mean
        .into_iter()
        .enumerate()
        .map(|(f, total)| FeatureInfluence {
            feature: shadow.feature_names[f].clone(),
            index: f,
            influence: total / n,
        })
        .collect();
    influences.sort_by(report_order);
    influences.truncate(top_k);

    let baseline_rating = match (&q.scope, baseline) {
        (Scope::SingleItem { item }, Some(b)) => Some(b.predict_rating(q.user, *item)?),
        _ => None,
    };

    Ok(InfluenceReport {
        query: q.clone(),
        influences,
        shadow_rating,
        baseline_rating,
        warnings: eligibility_warnings(shadow, items),
    })
}

fn eligibility_warnings(shadow: &ShadowModel, items: &[usize]) -> Vec<String> {
    let eligible = shadow.eligible_items();
    let mut pruned = Vec::new();
    let mut seen = Vec::new();
    for &i in items {
        if eligible.binary_search(&i).is_err() {
            pruned.push(i);
        } else if !shadow.is_eval_item(i) {
            seen.push(i);
        }
    }
    let mut out = Vec::new();
    if !pruned.is_empty() {
        out.push(format!(
            "{} item(s) were excluded from shadow training (too little metadata); their explanation may be unreliable: {}",
            pruned.len(),
            preview(&pruned)
        ));
    }
    if !seen.is_empty() && !shadow.eval_items.is_empty() {
        out.push(format!(
            "{} item(s) are outside the held-out evaluation set: {}",
            seen.len(),
            preview(&seen)
        ));
    }
    out
}

fn preview(items: &[usize]) -> String {
    let mut s: Vec<String> = items.iter().take(5).map(|i| i.to_string()).collect();
    if items.len() > 5 {
        s.push("...".into());
    }
    s.join(", ")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart: feature names down the y-axis, influence in stars
/// along the x-axis, one `<rect class="bar">` per listed feature.
pub fn render_svg(report: &InfluenceReport, title: &str) -> String {
    let rows = report.influences.len().max(1);
    let label_w = report
        .influences
        .iter()
        .map(|f| f.feature.chars().count())
        .max()
        .unwrap_or(0)
        .clamp(8, 48) as f64
        * 7.0
        + 16.0;
    let plot_w = 420.0;
    let row_h = 24.0;
    let top = 40.0;
    let width = label_w + plot_w + 30.0;
    let height = top + rows as f64 * row_h + 40.0;

    let lo = report.influences.iter().map(|f| f.influence).fold(0.0f64, f64::min);
    let hi = report.influences.iter().map(|f| f.influence).fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |v: f64| label_w + (v - lo) / span * plot_w;
    let zero = x_of(0.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" font-size="14">{}</text>"#, label_w, xml_escape(title));
    for (r, f) in report.influences.iter().enumerate() {
        let y = top + r as f64 * row_h;
        let (x0, x1) = if f.influence >= 0.0 { (zero, x_of(f.influence)) } else { (x_of(f.influence), zero) };
        let fill = if f.influence >= 0.0 { "#4c72b0" } else { "#c44e52" };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            y + row_h * 0.65,
            xml_escape(&f.feature)
        );
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x0:.2}" y="{:.1}" width="{:.2}" height="{:.1}" fill="{fill}"><title>{}: {:.4}</title></rect>"#,
            y + 3.0,
            (x1 - x0).max(0.5),
            row_h - 6.0,
            xml_escape(&f.feature),
            f.influence
        );
    }
    let axis_y = top + rows as f64 * row_h + 4.0;
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.2}" y1="{top:.1}" x2="{zero:.2}" y2="{axis_y:.1}" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line x1="{label_w:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="#333"/>"##,
        label_w + plot_w
    );
    for v in [lo, 0.0, hi] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, x_of(v), axis_y + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">influence (stars)</text>"#,
        label_w + plot_w / 2.0,
        axis_y + 32.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorMatrix;
    use crate::regress::{fit_tree, Regressor, RegressionTree, TreeParams};
    use crate::shadow::tests::linear_shadow;
    use crate::shadow::ShadowKind;
    use proptest::prelude::*;

    /// Brute-force oracle: enumerate the substituted value.
    fn enumerate_qii(m: impl Fn(&[f64]) -> f64, x: &[f64], f: usize, p: f64) -> f64 {
        let mut expectation = 0.0;
        for (v, w) in [(0.0, 1.0 - p), (1.0, p)] {
            let mut y = x.to_vec();
            y[f] = v;
            expectation += w * m(&y);
        }
        m(x) - expectation
    }

    #[test]
    fn exact_examples() {
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(qii_exact_binary(|_| Ok(4.2), &[1.0, 0.0], 1, p).unwrap(), 0.0);
        }
        assert_eq!(qii_exact_binary(|a| Ok(a[0]), &[1.0], 0, 0.5).unwrap(), 0.5);
        let m = |a: &[f64]| Ok(2.0 * a[0] + a[1]);
        assert_eq!(qii_exact_binary(m, &[1.0, 1.0], 0, 0.25).unwrap(), 1.5);
        assert_eq!(qii_exact_binary(m, &[1.0, 1.0], 1, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn exact_rejects_non_binary_and_bad_input() {
        assert!(matches!(qii_exact_binary(|a| Ok(a[0]), &[0.5], 0, 0.5), Err(Error::Estimator(_))));
        assert!(qii_exact_binary(|a| Ok(a[0]), &[1.0], 1, 0.5).is_err());
        assert!(qii_exact_binary(|a| Ok(a[0]), &[1.0], 0, 1.5).is_err());
    }

    #[test]
    fn monte_carlo_examples() {
        let m = |a: &[f64]| Ok(2.0 * a[0] + a[1]);
        assert_eq!(qii_monte_carlo(m, &[1.0, 1.0], 0, &[1.0, 1.0, 1.0], 50, 3).unwrap(), 0.0);
        // empirical marginal 0.25 for feature 0
        let pool = [1.0, 0.0, 0.0, 0.0];
        let mc = qii_monte_carlo(m, &[1.0, 1.0], 0, &pool, 100_000, 11).unwrap();
        assert!((mc - 1.5).abs() < 0.02, "{mc}");
        // one sample reproduces the single-draw definition
        let one = qii_monte_carlo(m, &[1.0, 1.0], 0, &pool, 1, 5).unwrap();
        let mut g = rng::seeded(5);
        let v = pool[g.gen_range(0..pool.len())];
        assert_eq!(one, 3.0 - (2.0 * v + 1.0));
        assert!(qii_monte_carlo(m, &[1.0, 1.0], 0, &[], 10, 0).is_err());
        assert!(qii_monte_carlo(m, &[1.0, 1.0], 0, &pool, 0, 0).is_err());
    }

    fn three_feature_shadow() -> ShadowModel {
        // m(a) = 2 a0 + a1, feature 2 irrelevant
        linear_shadow(vec![vec![1.0]], vec![vec![2.0, 1.0, 0.0]], vec![0.0], vec![0.25, 0.5, 0.5])
    }

    fn meta_with_rows(rows: &[&[usize]], d: usize) -> MetadataMatrix {
        let cols = (0..d).map(|f| (0..rows.len()).filter(|&i| rows[i].contains(&f)).collect()).collect();
        MetadataMatrix::from_columns(rows.len(), (0..d).map(|f| format!("f{f}")).collect(), cols).unwrap()
    }

    #[test]
    fn explain_linear_top_two() {
        let s = three_feature_shadow();
        let meta = meta_with_rows(&[&[0, 1], &[2]], 3);
        let r = explain(&s, &meta, &InfluenceQuery::single(0, 0), 2).unwrap();
        let got: Vec<(usize, f64)> = r.influences.iter().map(|f| (f.index, f.influence)).collect();
        assert_eq!(got, vec![(0, 1.5), (1, 0.5)]);
        assert_eq!(r.shadow_rating, 3.0);
        assert_eq!(r.baseline_rating, None);
    }

    #[test]
    fn item_set_of_one_matches_single() {
        let s = three_feature_shadow();
        let meta = meta_with_rows(&[&[0, 1], &[2]], 3);
        let a = explain(&s, &meta, &InfluenceQuery::single(0, 1), 10).unwrap();
        let b = explain(&s, &meta, &InfluenceQuery::aggregate(0, vec![1]), 10).unwrap();
        assert_eq!(a.influences, b.influences);
        assert_eq!(a.shadow_rating, b.shadow_rating);
    }

    #[test]
    fn only_the_used_feature_has_influence() {
        // f_1 is a stump on feature 7; f_2 constant
        let d = 10;
        let n = 12;
        let rows: Vec<Vec<usize>> = (0..n).map(|i| (0..d).filter(|f| (i >> (f % 4)) & 1 == 1 || *f == 7 && i % 3 == 0).collect()).collect();
        let row_refs: Vec<&[usize]> = rows.iter().map(|r| r.as_slice()).collect();
        let meta = meta_with_rows(&row_refs, d);
        let x: Vec<Vec<f64>> = (0..n).map(|i| meta.dense_attribute_row(i).unwrap()).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[7] == 1.0 { 2.0 } else { -1.0 }).collect();
        let f1 = fit_tree(&x, &y, TreeParams { max_depth: 3, bins: 8, min_leaf: 1 }).unwrap();
        let s = ShadowModel {
            kind: ShadowKind::Tree(TreeParams::default()),
            feature_names: meta.feature_names().to_vec(),
            marginals: meta.marginals().to_vec(),
            predictors: vec![Regressor::Tree(f1), Regressor::Tree(RegressionTree::leaf(0.3, d))],
            user_factors: FactorMatrix::from_rows(&[vec![1.5, -2.0]], 2).unwrap(),
            train_items: (0..n).collect(),
            eval_items: vec![],
        };
        for i in 0..n {
            let r = explain(&s, &meta, &InfluenceQuery::single(0, i), d).unwrap();
            assert_eq!(r.influences.len(), d);
            for f in &r.influences {
                if f.index != 7 {
                    assert_eq!(f.influence, 0.0, "{f:?}");
                }
            }
            assert!(r.influence_of(7).unwrap() != 0.0);
        }
    }

    #[test]
    fn signed_mean_cancels_over_the_marginal_population() {
        // every pattern of 2 features once: empirical marginals are exactly 1/2
        let s = linear_shadow(vec![vec![1.0]], vec![vec![2.0, -1.0]], vec![3.0], vec![0.5, 0.5]);
        let meta = meta_with_rows(&[&[], &[0], &[1], &[0, 1]], 2);
        let mut q = InfluenceQuery::aggregate(0, vec![0, 1, 2, 3]);
        let signed = explain(&s, &meta, &q, 2).unwrap();
        assert!(signed.influences.iter().all(|f| f.influence == 0.0));
        q.aggregation = Aggregation::MeanAbsolute;
        let magnitude = explain(&s, &meta, &q, 2).unwrap();
        assert_eq!(magnitude.influence_of(0), Some(1.0));
        assert_eq!(magnitude.influence_of(1), Some(0.5));
    }

    #[test]
    fn explain_validates_inputs() {
        let s = three_feature_shadow();
        let meta = meta_with_rows(&[&[0, 1], &[2]], 3);
        assert!(explain(&s, &meta, &InfluenceQuery::single(0, 0), 0).is_err());
        assert!(explain(&s, &meta, &InfluenceQuery::single(0, 9), 3).is_err());
        assert!(explain(&s, &meta, &InfluenceQuery::single(4, 0), 3).is_err());
        assert!(explain(&s, &meta, &InfluenceQuery::aggregate(0, vec![]), 3).is_err());
        let other = meta_with_rows(&[&[0]], 2);
        assert!(explain(&s, &other, &InfluenceQuery::single(0, 0), 3).is_err());
    }

    #[test]
    fn warnings_for_items_outside_eval_set() {
        let mut s = three_feature_shadow();
        s.train_items = vec![0];
        s.eval_items = vec![1];
        let meta = meta_with_rows(&[&[0, 1], &[2], &[1]], 3);
        assert!(explain(&s, &meta, &InfluenceQuery::single(0, 1), 3).unwrap().warnings.is_empty());
        assert_eq!(explain(&s, &meta, &InfluenceQuery::single(0, 0), 3).unwrap().warnings.len(), 1);
        let w = explain(&s, &meta, &InfluenceQuery::aggregate(0, vec![0, 1, 2]), 3).unwrap().warnings;
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn monte_carlo_explain_close_to_exact() {
        let mut s = three_feature_shadow();
        let rows: Vec<&[usize]> = vec![&[0, 1], &[1], &[2], &[1, 2]];
        let meta = meta_with_rows(&rows, 3);
        s.train_items = (0..4).collect();
        s.marginals = meta.marginals().to_vec();
        let exact = explain(&s, &meta, &InfluenceQuery::single(0, 0), 3).unwrap();
        let mut q = InfluenceQuery::single(0, 0);
        q.estimator = Estimator::MonteCarlo { samples: 50_000, seed: 9 };
        let mc = explain(&s, &meta, &q, 3).unwrap();
        for f in &exact.influences {
            assert!((mc.influence_of(f.index).unwrap() - f.influence).abs() < 0.03);
        }
    }

    #[test]
    fn svg_has_one_bar_per_feature() {
        let s = three_feature_shadow();
        let meta = meta_with_rows(&[&[0, 1], &[2]], 3);
        let r = explain(&s, &meta, &InfluenceQuery::single(0, 0), 3).unwrap();
        let svg = render_svg(&r, "user 0 <item 0>");
        assert_eq!(svg.matches(r#"class="bar""#).count(), 3);
        assert!(svg.contains("&lt;item 0&gt;"));
    }

    /// Seeded cross-check of the two estimators on random linear ratings.
    #[test]
    fn monte_carlo_within_three_standard_errors() {
        let mut g = rng::seeded(2024);
        for case in 0..100 {
            let w: Vec<f64> = (0..3).map(|_| g.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| f64::from(g.gen_range(0..2u8))).collect();
            let pool: Vec<f64> = (0..g.gen_range(2..20)).map(|_| f64::from(g.gen_range(0..2u8))).collect();
            let m = |a: &[f64]| Ok(w[0] * a[0] + w[1] * a[1] + w[2] * a[2]);
            let p = pool.iter().sum::<f64>() / pool.len() as f64;
            let samples = 4000;
            let exact = qii_exact_binary(m, &x, 1, p).unwrap();
            let mc = qii_monte_carlo(m, &x, 1, &pool, samples, case).unwrap();
            // per-sample difference is w1 (x1 - v), variance w1² p (1 - p)
            let se = (w[1] * w[1] * p * (1.0 - p) / samples as f64).sqrt();
            assert!((mc - exact).abs() <= 3.0 * se + 1e-12, "case {case}: mc {mc} exact {exact} se {se}");
        }
    }

    fn bits(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], d)
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration_on_trees(
            d in 1usize..=8,
            seed in any::<u64>(),
            p in 0.0f64..=1.0,
        ) {
            let mut g = rng::seeded(seed);
            let x: Vec<Vec<f64>> = (0..24).map(|_| (0..d).map(|_| f64::from(g.gen_range(0..2u8))).collect()).collect();
            let y: Vec<f64> = (0..24).map(|_| g.gen_range(-2.0..2.0)).collect();
            let t = fit_tree(&x, &y, TreeParams { max_depth: 4, bins: 4, min_leaf: 1 }).unwrap();
            let probe = &x[0];
            for f in 0..d {
                let exact = qii_exact_binary(|a| t.predict(a), probe, f, p).unwrap();
                let oracle = enumerate_qii(|a| t.predict(a).unwrap(), probe, f, p);
                prop_assert!((exact - oracle).abs() <= 1e-12);
            }
        }

        #[test]
        fn constant_coordinate_has_zero_influence(x in bits(4), p in 0.0f64..=1.0) {
            let m = |a: &[f64]| Ok(a[0] * 3.0 - a[1] * a[3]);
            prop_assert_eq!(qii_exact_binary(m, &x, 2, p).unwrap(), 0.0);
        }

        #[test]
        fn influence_scales_with_rating(x in bits(3), p in 0.0f64..=1.0, c in -4.0f64..4.0) {
            let m = |a: &[f64]| Ok(1.0 + 0.7 * a[0] - 1.3 * a[1] * a[2]);
            let scaled = |a: &[f64]| Ok(c * (1.0 + 0.7 * a[0] - 1.3 * a[1] * a[2]));
            for f in 0..3 {
                let a = qii_exact_binary(m, &x, f, p).unwrap();
                let b = qii_exact_binary(scaled, &x, f, p).unwrap();
                prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn report_is_sorted_permutation(
            w in proptest::collection::vec(prop_oneof![Just(0.5), Just(-0.5), -2.0f64..2.0], 6),
            x in proptest::collection::vec(0usize..6, 0..6),
        ) {
            let s = linear_shadow(vec![vec![1.0]], vec![w], vec![0.0], vec![0.5; 6]);
            let meta = meta_with_rows(&[&x], 6);
            let r = explain(&s, &meta, &InfluenceQuery::single(0, 0), 6).unwrap();
            let mut idx: Vec<usize> = r.influences.iter().map(|f| f.index).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..6).collect::<Vec<_>>());
            for pair in r.influences.windows(2) {
                prop_assert_eq!(report_order(&pair[0], &pair[1]), Ordering::Less);
            }
        }
    }
}
