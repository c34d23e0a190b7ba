//! Ratings and metadata loading, one-hot encoding, entropy filtering and
//! item pruning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{IdMap, MetadataMatrix, Rating, RatingScale, RatingsMatrix};
use crate::error::{Error, Result};

/// Delimited ratings layout: `userId,movieId,rating[,timestamp]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingsFormat {
    pub delimiter: u8,
    pub has_header: bool,
    pub scale: RatingScale,
}

impl Default for RatingsFormat {
    fn default() -> Self {
        RatingsFormat {
            delimiter: b',',
            has_header: true,
            scale: RatingScale::default(),
        }
    }
}

/// Ratings together with the dictionaries that map external ids to rows.
#[derive(Clone, Debug)]
pub struct LoadedRatings {
    pub matrix: RatingsMatrix,
    pub users: IdMap,
    pub items: IdMap,
}

pub fn load_ratings(path: impl AsRef<Path>, format: RatingsFormat) -> Result<LoadedRatings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut entries: Vec<Rating> = Vec::new();
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() < 3 || record.len() > 4 {
            return Err(parse_err(format!(
                "expected 3 or 4 fields (userId,movieId,rating[,timestamp]), found {}",
                record.len()
            )));
        }
        let (user_id, item_id) = (&record[0], &record[1]);
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err("empty identifier".into()));
        }
        let value: f64 = record[2]
            .parse()
            .map_err(|_| parse_err(format!("rating {:?} is not a number", &record[2])))?;
        if !format.scale.contains(value) {
            return Err(Error::Validation(format!(
                "{}:{line}: rating {value} outside scale [{}, {}]",
                path.display(),
                format.scale.low,
                format.scale.high
            )));
        }
        let user = users.intern(user_id);
        let item = items.intern(item_id);
        match slot.get(&(user, item)) {
            Some(&at) => entries[at].value = value,
            None => {
                slot.insert((user, item), entries.len());
                entries.push(Rating { user, item, value });
            }
        }
    }

    let matrix = RatingsMatrix::new(users.len(), items.len(), format.scale, entries)?;
    Ok(LoadedRatings {
        matrix,
        users,
        items,
    })
}

/// One item's nominal attributes; each attribute may hold several values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItemRecord {
    #[serde(deserialize_with = "id_string")]
    pub item_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, BTreeSet<String>>,
}

fn id_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    use serde::de::Error as _;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(D::Error::custom(format!("item_id must be a string or number, got {other}"))),
    }
}

impl RawItemRecord {
    pub fn new(item_id: impl Into<String>) -> Self {
        RawItemRecord {
            item_id: item_id.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with(mut self, attribute: &str, values: &[&str]) -> Self {
        self.attributes
            .entry(attribute.to_owned())
            .or_default()
            .extend(values.iter().map(|v| (*v).to_owned()));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.item_id.is_empty() {
            return Err(Error::Validation("metadata record with empty item_id".into()));
        }
        if self.attributes.keys().any(String::is_empty) {
            return Err(Error::Validation(format!(
                "item {:?} has an empty attribute name",
                self.item_id
            )));
        }
        Ok(())
    }
}

/// Reads one JSON record per line; blank lines are skipped.
pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<RawItemRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawItemRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Merges records from several named sources by item id. Attribute names
/// that occur in more than one source are prefixed with `source:`.
pub fn merge_sources(sources: Vec<(String, Vec<RawItemRecord>)>) -> Vec<RawItemRecord> {
    let mut owners: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for (source, records) in &sources {
        for r in records {
            for attr in r.attributes.keys() {
                owners.entry(attr.as_str()).or_default().insert(source.as_str());
            }
        }
    }
    let clashing: BTreeSet<String> = owners
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(a, _)| a.to_owned())
        .collect();

    let mut order = IdMap::new();
    let mut merged: Vec<RawItemRecord> = Vec::new();
    for (source, records) in sources {
        for r in records {
            let at = order.intern(&r.item_id);
            if at == merged.len() {
                merged.push(RawItemRecord::new(r.item_id.clone()));
            }
            for (attr, values) in r.attributes {
                let name = if clashing.contains(&attr) {
                    format!("{source}:{attr}")
                } else {
                    attr
                };
                merged[at].attributes.entry(name).or_default().extend(values);
            }
        }
    }
    merged
}

/// One binary column per distinct `attribute=value`, columns in sorted name
/// order, items in first-appearance order (repeated ids are merged).
pub fn encode_one_hot(records: &[RawItemRecord]) -> Result<MetadataMatrix> {
    if records.is_empty() {
        return Err(Error::Domain("cannot encode an empty record list".into()));
    }
    let mut items = IdMap::new();
    let mut features: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let item = items.intern(&r.item_id);
        for (attr, values) in &r.attributes {
            for v in values {
                features.entry(format!("{attr}={v}")).or_default().insert(item);
            }
        }
    }
    let (names, columns): (Vec<_>, Vec<_>) = features
        .into_iter()
        .map(|(name, set)| (name, set.into_iter().collect::<Vec<_>>()))
        .unzip();
    MetadataMatrix::with_ids(items, names, columns)
}

/// Binary Shannon entropy in bits.
pub fn feature_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    Ok(term(p) + term(1.0 - p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureFilterSpec {
    /// Keep features whose entropy (bits) is at least the threshold.
    EntropyThreshold { bits: f64 },
    /// Keep the `count` highest-entropy features; ties by ascending name.
    TopKEntropy { count: usize },
    /// Keep features held by at least `count` items.
    MinSupport { count: usize },
}

impl Default for FeatureFilterSpec {
    fn default() -> Self {
        FeatureFilterSpec::EntropyThreshold { bits: 0.01 }
    }
}

impl FeatureFilterSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureFilterSpec::EntropyThreshold { bits } if !(bits >= 0.0) => Err(Error::Config(
                format!("entropy threshold must be >= 0, got {bits}"),
            )),
            FeatureFilterSpec::TopKEntropy { count: 0 } | FeatureFilterSpec::MinSupport { count: 0 } => {
                Err(Error::Config("feature filter count must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Indices (ascending) of the features that pass `spec`.
pub fn select_features(meta: &MetadataMatrix, spec: FeatureFilterSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let entropies = meta
        .marginals()
        .iter()
        .map(|&p| feature_entropy(p))
        .collect::<Result<Vec<_>>>()?;
    let mut keep: Vec<usize> = match spec {
        FeatureFilterSpec::EntropyThreshold { bits } => {
            (0..meta.n_features()).filter(|&f| entropies[f] >= bits).collect()
        }
        FeatureFilterSpec::MinSupport { count } => {
            (0..meta.n_features()).filter(|&f| meta.support(f) >= count).collect()
        }
        FeatureFilterSpec::TopKEntropy { count } => {
            if count > meta.n_features() {
                log::warn!(
                    "top-{count} entropy filter on {} features keeps all of them",
                    meta.n_features()
                );
            }
            let names = meta.feature_names();
            let mut order: Vec<usize> = (0..meta.n_features()).collect();
            order.sort_by(|&a, &b| {
                entropies[b]
                    .total_cmp(&entropies[a])
                    .then_with(|| names[a].cmp(&names[b]))
            });
            order.truncate(count);
            order
        }
    };
    keep.sort_unstable();
    Ok(keep)
}

pub fn filter_features(meta: &MetadataMatrix, spec: FeatureFilterSpec) -> Result<MetadataMatrix> {
    let keep = select_features(meta, spec)?;
    meta.select_features(&keep)
}

/// Drops items holding fewer than `min_features` features. The mask is
/// aligned with the input item indexing.
pub fn prune_items(meta: &MetadataMatrix, min_features: usize) -> Result<(MetadataMatrix, Vec<bool>)> {
    if min_features == 0 {
        return Err(Error::Config("min_features must be >= 1".into()));
    }
    let mask = item_mask(meta, min_features);
    let keep: Vec<usize> = (0..meta.n_items()).filter(|&i| mask[i]).collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult(format!(
            "every item has fewer than {min_features} metadata features; nothing left to explain"
        )));
    }
    Ok((meta.select_items(&keep)?, mask))
}

/// `true` where the item holds at least `min_features` features.
pub fn item_mask(meta: &MetadataMatrix, min_features: usize) -> Vec<bool> {
    (0..meta.n_items())
        .map(|i| meta.item_features(i).map_or(0, <[usize]>::len) >= min_features)
        .collect()
}
