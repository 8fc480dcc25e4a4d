//! Lookup-table database: conjunctive, case-insensitive exact match of every
//! API-call slot against record fields.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ApiCall, DbRecord};
use crate::error::{Error, Result};
use crate::perturber::substitute_record;

#[derive(Debug, Serialize, Deserialize)]
struct DatabaseFile {
    records: Vec<DbRecord>,
}

type IndexKey = (String, String);

#[derive(Debug, Clone, Default)]
pub struct Database {
    records: Vec<DbRecord>,
    /// (field, value), both lowercased -> record positions in ascending order
    index: HashMap<IndexKey, Vec<usize>>,
}

fn canon(s: &str) -> String {
    s.trim().to_lowercase()
}

fn build_index(records: &[DbRecord]) -> HashMap<IndexKey, Vec<usize>> {
    let mut index: HashMap<IndexKey, Vec<usize>> = HashMap::new();
    for (pos, record) in records.iter().enumerate() {
        for (field, value) in &record.fields {
            let postings = index.entry((canon(field), canon(value))).or_default();
            if postings.last() != Some(&pos) {
                postings.push(pos);
            }
        }
    }
    index
}

impl Database {
    pub fn new(records: Vec<DbRecord>) -> Self {
        let index = build_index(&records);
        Database { records, index }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: DatabaseFile = serde_path_to_error::deserialize(de).map_err(|e| Error::parse("database", e))?;
        Ok(Self::new(file.records))
    }

    pub fn to_json(&self) -> String {
        let file = DatabaseFile {
            records: self.records.clone(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("database serializes");
        out.push('\n');
        out
    }

    pub fn records(&self) -> &[DbRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rebuilds the index from the records and compares.
    pub fn index_is_consistent(&self) -> bool {
        build_index(&self.records) == self.index
    }

    /// Records matching every slot of `call`. No call means no search; a call
    /// without slots matches every record.
    pub fn lookup(&self, call: Option<&ApiCall>) -> Vec<DbRecord> {
        let Some(call) = call else {
            return Vec::new();
        };
        let mut candidates: Option<BTreeSet<usize>> = None;
        for (slot, value) in &call.slots {
            let Some(postings) = self.index.get(&(canon(slot), canon(value))) else {
                return Vec::new();
            };
            let hits: BTreeSet<usize> = postings.iter().copied().collect();
            candidates = Some(match candidates {
                None => hits,
                Some(prev) => prev.intersection(&hits).copied().collect(),
            });
        }
        match candidates {
            None => self.records.clone(),
            Some(set) => set.into_iter().map(|i| self.records[i].clone()).collect(),
        }
    }

    /// The database with `word` substituted in every field value, as used to
    /// remove spurious mismatches for a perturbed dialogue.
    pub fn perturbed(&self, word: &str, replacement: &str) -> Database {
        Database::new(
            self.records
                .iter()
                .map(|r| substitute_record(r, word, replacement))
                .collect(),
        )
    }
}

/// Convenience for tests and fixtures.
pub fn db_lookup(call: Option<&ApiCall>, db: &Database) -> Vec<DbRecord> {
    db.lookup(call)
}
