//! Labeled classification datasets stored as JSON lines.
//!
//! A file holds one record per line, `{"id","text","label","language"}`. An
//! optional first line `{"label_set":[...]}` pins the class order; without it
//! the label set is the sorted union of the labels seen.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: String,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub label_set: Vec<String>,
    pub examples: Vec<Example>,
    pub role: Role,
}

/// The top-k mined candidates for one query, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub candidate_ids: Vec<String>,
    /// Mining similarity of each candidate, parallel to `candidate_ids`.
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    label_set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        name: impl Into<String>,
        label_set: Vec<String>,
        examples: Vec<Example>,
        role: Role,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            label_set,
            examples,
            role,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_set.is_empty() {
            return Err(Error::invalid("label set is empty"));
        }
        let mut labels = HashSet::new();
        for label in &self.label_set {
            if !labels.insert(label.as_str()) {
                return Err(Error::invalid(format!("duplicate label {label:?} in label set")));
            }
        }
        let mut ids = HashSet::new();
        for ex in &self.examples {
            check_example(ex, &labels)?;
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id {:?}", ex.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Id to position lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    /// Languages present, sorted.
    pub fn languages(&self) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| e.language.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

fn check_example(ex: &Example, labels: &HashSet<&str>) -> Result<()> {
    if ex.id.is_empty() {
        return Err(Error::invalid("example id is empty"));
    }
    if ex.text.is_empty() {
        return Err(Error::invalid(format!("example {:?} has empty text", ex.id)));
    }
    if !labels.contains(ex.label.as_str()) {
        return Err(Error::invalid(format!(
            "example {:?} has label {:?} outside the label set",
            ex.id, ex.label
        )));
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header: Option<Header> = None;
    let mut examples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut first_record = true;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if first_record {
            first_record = false;
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
            if value.get("label_set").is_some() {
                let h: Header =
                    serde_json::from_value(value).map_err(|e| malformed(lineno, e.to_string()))?;
                header = Some(h);
                continue;
            }
        }
        let ex: Example =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        if let Some(prev) = seen.insert(ex.id.clone(), lineno) {
            return Err(malformed(
                lineno,
                format!("duplicate id {:?} (first seen on line {prev})", ex.id),
            ));
        }
        if ex.text.is_empty() {
            return Err(malformed(lineno, format!("example {:?} has empty text", ex.id)));
        }
        if let Some(h) = &header {
            if !h.label_set.contains(&ex.label) {
                return Err(malformed(
                    lineno,
                    format!("label {:?} is not in the declared label set", ex.label),
                ));
            }
        }
        examples.push(ex);
    }

    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (name, label_set) = match header {
        Some(h) => (h.name.unwrap_or(default_name), h.label_set),
        None => {
            if examples.is_empty() {
                return Err(Error::EmptyDataset(path.to_path_buf()));
            }
            let labels: BTreeSet<&str> = examples.iter().map(|e| e.label.as_str()).collect();
            (default_name, labels.into_iter().map(String::from).collect())
        }
    };
    Dataset::new(name, label_set, examples, role)
}

/// Writes the dataset with a header line so class order and name survive a reload.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let header = Header {
        label_set: ds.label_set.clone(),
        name: Some(ds.name.clone()),
    };
    write_json_line(&mut out, &header).map_err(io_err)?;
    for ex in &ds.examples {
        write_json_line(&mut out, ex).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub(crate) fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn save_candidates(sets: &[CandidateSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for set in sets {
        write_json_line(&mut out, set).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: CandidateSet = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if set.candidate_ids.len() != set.scores.len()
            || set.candidate_ids.contains(&set.query_id)
        {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("inconsistent candidate set for query {:?}", set.query_id),
            });
        }
        sets.push(set);
    }
    Ok(sets)
}
