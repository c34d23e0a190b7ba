use std::fmt;

use lfi::IdMap;

/// An external id that is not in the model, with the closest known ids.
#[derive(Debug)]
pub struct LookupError {
    pub what: &'static str,
    pub id: String,
    pub nearest: Vec<String>,
}

impl fmt::Display for LookupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown {} id {:?}", self.what, self.id)?;
        if !self.nearest.is_empty() {
            write!(f, "; nearest known ids: {}", self.nearest.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for LookupError {}

pub fn resolve(map: &IdMap, id: &str, what: &'static str) -> Result<usize, LookupError> {
    map.get(id).ok_or_else(|| {
        let mut scored: Vec<(usize, &String)> = map.ids().iter().map(|k| (strsim::levenshtein(id, k), k)).collect();
        scored.sort();
        LookupError {
            what,
            id: id.to_string(),
            nearest: scored.into_iter().take(5).map(|(_, k)| k.clone()).collect(),
        }
    })
}
