//! Numeric containers shared by every stage of the pipeline.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense re-indexing of external identifiers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identifiers `"0"`, `"1"`, ... for generated data.
    pub fn sequential(n: usize) -> Self {
        (0..n).map(|i| i.to_string()).collect::<Vec<_>>().into()
    }

    /// Index of `id`, inserting it at the end when unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl From<Vec<String>> for IdMap {
    fn from(ids: Vec<String>) -> Self {
        let mut map = IdMap::new();
        for id in &ids {
            map.intern(id);
        }
        map
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Inclusive rating bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub low: f64,
    pub high: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale {
            low: 1.0,
            high: 5.0,
        }
    }
}

impl RatingScale {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(Error::Config(format!(
                "rating scale needs low < high, got ({low}, {high})"
            )));
        }
        Ok(RatingScale { low, high })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.low && value <= self.high
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.low, self.high)
    }
}

/// Sparse ground-truth ratings `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    n_users: usize,
    n_items: usize,
    scale: RatingScale,
    entries: Vec<Rating>,
}

impl RatingsMatrix {
    /// Validates bounds and uniqueness of every `(user, item)` pair.
    pub fn new(
        n_users: usize,
        n_items: usize,
        scale: RatingScale,
        entries: Vec<Rating>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for r in &entries {
            if r.user >= n_users {
                return Err(Error::index("user", r.user, n_users));
            }
            if r.item >= n_items {
                return Err(Error::index("item", r.item, n_items));
            }
            if !scale.contains(r.value) {
                return Err(Error::Validation(format!(
                    "rating {} for (user {}, item {}) outside scale [{}, {}]",
                    r.value, r.user, r.item, scale.low, scale.high
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Validation(format!(
                    "duplicate rating for (user {}, item {})",
                    r.user, r.item
                )));
            }
        }
        Ok(RatingsMatrix {
            n_users,
            n_items,
            scale,
            entries,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observed `(item, rating)` lists per user.
    pub fn by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_users];
        for r in &self.entries {
            rows[r.user].push((r.item, r.value));
        }
        rows
    }

    /// Observed `(user, rating)` lists per item.
    pub fn by_item(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for r in &self.entries {
            cols[r.item].push((r.user, r.value));
        }
        cols
    }
}

/// Row-major dense matrix of latent factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite factor entry {bad}")));
        }
        Ok(FactorMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The baseline recommender: `r̂_ui = u_u · i_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub rank: usize,
    pub lambda: f64,
    pub user_factors: FactorMatrix,
    pub item_factors: FactorMatrix,
    pub user_ids: IdMap,
    pub item_ids: IdMap,
}

impl FactorModel {
    /// Builds a model with sequential identifiers.
    pub fn new(lambda: f64, user_factors: FactorMatrix, item_factors: FactorMatrix) -> Result<Self> {
        let user_ids = IdMap::sequential(user_factors.rows());
        let item_ids = IdMap::sequential(item_factors.rows());
        Self::with_ids(lambda, user_factors, item_factors, user_ids, item_ids)
    }

    pub fn with_ids(
        lambda: f64,
        user_factors: FactorMatrix,
        item_factors: FactorMatrix,
        user_ids: IdMap,
        item_ids: IdMap,
    ) -> Result<Self> {
        if user_factors.cols() != item_factors.cols() {
            return Err(Error::Dimension {
                expected: user_factors.cols(),
                got: item_factors.cols(),
            });
        }
        if user_ids.len() != user_factors.rows() {
            return Err(Error::Dimension {
                expected: user_factors.rows(),
                got: user_ids.len(),
            });
        }
        if item_ids.len() != item_factors.rows() {
            return Err(Error::Dimension {
                expected: item_factors.rows(),
                got: item_ids.len(),
            });
        }
        Ok(FactorModel {
            rank: user_factors.cols(),
            lambda,
            user_factors,
            item_factors,
            user_ids,
            item_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.rows()
    }

    pub fn user_row(&self, user: usize) -> Result<&[f64]> {
        if user >= self.n_users() {
            return Err(Error::index("user", user, self.n_users()));
        }
        Ok(self.user_factors.row(user))
    }

    pub fn item_row(&self, item: usize) -> Result<&[f64]> {
        if item >= self.n_items() {
            return Err(Error::index("item", item, self.n_items()));
        }
        Ok(self.item_factors.row(item))
    }

    /// Raw dot product; never clamped to the rating scale.
    pub fn predict_rating(&self, user: usize, item: usize) -> Result<f64> {
        Ok(dot(self.user_row(user)?, self.item_row(item)?))
    }
}

/// Binary item attributes `A`, stored column-sparse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetadataParts", into = "MetadataParts")]
pub struct MetadataMatrix {
    item_ids: IdMap,
    feature_names: Vec<String>,
    columns: Vec<Vec<usize>>,
    marginals: Vec<f64>,
    rows: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MetadataParts {
    item_ids: IdMap,
    feature_names: Vec<String>,
    columns: Vec<Vec<usize>>,
}

impl TryFrom<MetadataParts> for MetadataMatrix {
    type Error = Error;

    fn try_from(p: MetadataParts) -> Result<Self> {
        MetadataMatrix::with_ids(p.item_ids, p.feature_names, p.columns)
    }
}

impl From<MetadataMatrix> for MetadataParts {
    fn from(m: MetadataMatrix) -> Self {
        MetadataParts {
            item_ids: m.item_ids,
            feature_names: m.feature_names,
            columns: m.columns,
        }
    }
}

impl MetadataMatrix {
    /// `columns[f]` lists the items holding feature `f`.
    pub fn from_columns(
        n_items: usize,
        feature_names: Vec<String>,
        columns: Vec<Vec<usize>>,
    ) -> Result<Self> {
        Self::with_ids(IdMap::sequential(n_items), feature_names, columns)
    }

    pub fn with_ids(
        item_ids: IdMap,
        feature_names: Vec<String>,
        mut columns: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n_items = item_ids.len();
        if feature_names.len() != columns.len() {
            return Err(Error::Dimension {
                expected: feature_names.len(),
                got: columns.len(),
            });
        }
        let mut names = HashSet::with_capacity(feature_names.len());
        for name in &feature_names {
            if !names.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate feature name {name:?}")));
            }
        }
        let mut rows = vec![Vec::new(); n_items];
        for (f, col) in columns.iter_mut().enumerate() {
            col.sort_unstable();
            col.dedup();
            for &item in col.iter() {
                if item >= n_items {
                    return Err(Error::index("item", item, n_items));
                }
                rows[item].push(f);
            }
        }
        let marginals = columns
            .iter()
            .map(|c| {
                if n_items == 0 {
                    0.0
                } else {
                    c.len() as f64 / n_items as f64
                }
            })
            .collect();
        Ok(MetadataMatrix {
            item_ids,
            feature_names,
            columns,
            marginals,
            rows,
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn column(&self, feature: usize) -> &[usize] {
        &self.columns[feature]
    }

    pub fn support(&self, feature: usize) -> usize {
        self.columns[feature].len()
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    /// Sorted feature indices held by `item`.
    pub fn item_features(&self, item: usize) -> Result<&[usize]> {
        self.rows
            .get(item)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::index("item", item, self.n_items()))
    }

    pub fn dense_attribute_row(&self, item: usize) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.n_features()];
        for &f in self.item_features(item)? {
            row[f] = 1.0;
        }
        Ok(row)
    }

    /// Keeps the listed features (in the given order) and all items.
    pub fn select_features(&self, keep: &[usize]) -> Result<Self> {
        let mut names = Vec::with_capacity(keep.len());
        let mut columns = Vec::with_capacity(keep.len());
        for &f in keep {
            if f >= self.n_features() {
                return Err(Error::index("feature", f, self.n_features()));
            }
            names.push(self.feature_names[f].clone());
            columns.push(self.columns[f].clone());
        }
        Self::with_ids(self.item_ids.clone(), names, columns)
    }

    /// Keeps the listed items, re-indexed densely in the given order.
    pub fn select_items(&self, keep: &[usize]) -> Result<Self> {
        let mut new_index = vec![usize::MAX; self.n_items()];
        let mut ids = IdMap::new();
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.n_items() {
                return Err(Error::index("item", old, self.n_items()));
            }
            new_index[old] = new;
            ids.intern(self.item_ids.id(old).unwrap_or_default());
        }
        if ids.len() != keep.len() {
            return Err(Error::Validation("repeated item in selection".into()));
        }
        let columns = self
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .filter_map(|&i| (new_index[i] != usize::MAX).then_some(new_index[i]))
                    .collect()
            })
            .collect();
        Self::with_ids(ids, self.feature_names.clone(), columns)
    }

    /// Re-indexes items onto `items`; items without metadata get an empty row.
    pub fn align_to(&self, items: &IdMap) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .filter_map(|&i| self.item_ids.id(i).and_then(|id| items.get(id)))
                    .collect()
            })
            .collect();
        Self::with_ids(items.clone(), self.feature_names.clone(), columns)
    }

    /// Re-orders columns onto `names`; names absent here become empty columns.
    pub fn project_features(&self, names: &[String]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let columns = names
            .iter()
            .map(|n| lookup.get(n.as_str()).map(|&f| self.columns[f].clone()).unwrap_or_default())
            .collect();
        Self::with_ids(self.item_ids.clone(), names.to_vec(), columns)
    }
}
