//! Dataset files and the difficulty-striped fold builder.
//!
//! Items, responses and embeddings are UTF-8 JSON Lines. Responses may omit
//! `student_id`, in which case one is derived from `prior_ability`.
//! Difficulty tables and predictions are CSV.

mod folds;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::difficulty::{DifficultyPrediction, EmbeddingRecord};
use crate::irt::{self, IrtError, ScoredResponse};
use crate::sim::{rounded_ability_id, Item};

pub use folds::{difficulty_buckets, make_folds, striped_order, FoldSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Config(String),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub responses: Vec<ScoredResponse>,
    pub embeddings: Option<Vec<EmbeddingRecord>>,
}

impl Dataset {
    pub fn num_categories(&self) -> BTreeMap<String, usize> {
        self.items
            .iter()
            .map(|i| (i.item_id.clone(), i.num_categories))
            .collect()
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Writes the dataset in the format [`load_dataset`] reads.
    pub fn save(
        &self,
        items_path: impl AsRef<Path>,
        responses_path: impl AsRef<Path>,
        embeddings_path: Option<&Path>,
    ) -> Result<(), DataError> {
        write_jsonl(items_path.as_ref(), &self.items)?;
        write_jsonl(responses_path.as_ref(), &self.responses)?;
        if let (Some(path), Some(emb)) = (embeddings_path, &self.embeddings) {
            write_jsonl(path, emb)?;
        }
        Ok(())
    }
}

/// Student identifier for a response that only carries a prior ability.
pub fn student_id_from_prior_ability(prior_theta: f64) -> String {
    rounded_ability_id("stu_", prior_theta)
}

/// Writes one compact JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| DataError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

struct Row<'a> {
    path: &'a str,
    line: usize,
    obj: Map<String, Value>,
}

impl Row<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> DataError {
        DataError::Schema {
            path: self.path.to_string(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn opt_str(&self, field: &str) -> Result<Option<String>, DataError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(field, "expected a string")),
        }
    }

    fn req_str(&self, field: &str) -> Result<String, DataError> {
        self.opt_str(field)?.ok_or_else(|| self.err(field, "missing"))
    }

    fn opt_f64(&self, field: &str) -> Result<Option<f64>, DataError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| self.err(field, "expected a finite number")),
        }
    }

    fn req_usize(&self, field: &str) -> Result<usize, DataError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Err(self.err(field, "missing")),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.err(field, "expected a non-negative integer")),
        }
    }

    fn req_vector(&self, field: &str) -> Result<Vec<f64>, DataError> {
        let arr = self
            .obj
            .get(field)
            .ok_or_else(|| self.err(field, "missing"))?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array of numbers"))?;
        arr.iter()
            .map(|v| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.err(field, "expected an array of finite numbers"))
            })
            .collect()
    }
}

fn read_rows<'a>(path: &Path, shown: &'a str) -> Result<Vec<Row<'a>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            path: shown.to_string(),
            line: i + 1,
            field: "<row>".into(),
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(DataError::Schema {
                path: shown.to_string(),
                line: i + 1,
                field: "<row>".into(),
                message: "expected a JSON object".into(),
            });
        };
        rows.push(Row {
            path: shown,
            line: i + 1,
            obj,
        });
    }
    Ok(rows)
}

pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<Item>, DataError> {
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    let path = path.as_ref();
    let shown = path.display().to_string();
    for row in read_rows(path, &shown)? {
        let item = Item {
            item_id: row.req_str("item_id")?,
            passage: row.opt_str("passage")?.unwrap_or_default(),
            question: row.req_str("question")?,
            rubric: row.opt_str("rubric")?.unwrap_or_default(),
            num_categories: row.req_usize("num_categories")?,
        };
        if item.question.trim().is_empty() {
            return Err(row.err("question", "must not be empty"));
        }
        if item.num_categories < 2 {
            return Err(row.err("num_categories", "must be at least 2"));
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(row.err("item_id", format!("duplicate item `{}`", item.item_id)));
        }
        items.push(item);
    }
    Ok(items)
}

/// Reads responses and checks them against `num_categories`.
pub fn read_responses(
    path: impl AsRef<Path>,
    num_categories: &BTreeMap<String, usize>,
) -> Result<Vec<ScoredResponse>, DataError> {
    parse_responses(path.as_ref(), Some(num_categories))
}

/// Reads responses without checking item ids or score ranges.
pub fn read_responses_unchecked(path: impl AsRef<Path>) -> Result<Vec<ScoredResponse>, DataError> {
    parse_responses(path.as_ref(), None)
}

fn parse_responses(
    path: &Path,
    num_categories: Option<&BTreeMap<String, usize>>,
) -> Result<Vec<ScoredResponse>, DataError> {
    let mut out = Vec::new();
    let shown = path.display().to_string();
    for row in read_rows(path, &shown)? {
        let item_id = row.req_str("item_id")?;
        let score = row.req_usize("score")?;
        if let Some(cats) = num_categories {
            let Some(&c) = cats.get(&item_id) else {
                return Err(row.err("item_id", format!("unknown item `{item_id}`")));
            };
            if score >= c {
                return Err(row.err("score", format!("{score} outside 0..{c}")));
            }
        }
        let prior_ability = row.opt_f64("prior_ability")?;
        let student_id = match (row.opt_str("student_id")?, prior_ability) {
            (Some(id), _) => id,
            (None, Some(theta)) => student_id_from_prior_ability(theta),
            (None, None) => return Err(row.err("student_id", "missing and no `prior_ability` to derive it from")),
        };
        out.push(ScoredResponse {
            item_id,
            student_id,
            text: row.opt_str("text")?.unwrap_or_default(),
            score,
            prior_ability,
        });
    }
    Ok(out)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>, DataError> {
    let mut out: Vec<EmbeddingRecord> = Vec::new();
    let path = path.as_ref();
    let shown = path.display().to_string();
    for row in read_rows(path, &shown)? {
        let rec = EmbeddingRecord {
            item_id: row.req_str("item_id")?,
            vector: row.req_vector("vector")?,
        };
        if let Some(first) = out.first() {
            if first.vector.len() != rec.vector.len() {
                return Err(row.err(
                    "vector",
                    format!("dimension {} differs from {}", rec.vector.len(), first.vector.len()),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Loads and validates a dataset. Duplicate (item, student) rows are kept.
pub fn load_dataset(
    items_path: impl AsRef<Path>,
    responses_path: impl AsRef<Path>,
    embeddings_path: Option<&Path>,
) -> Result<Dataset, DataError> {
    let items = read_items(items_path)?;
    let cats: BTreeMap<String, usize> = items.iter().map(|i| (i.item_id.clone(), i.num_categories)).collect();
    let responses = read_responses(responses_path, &cats)?;
    let embeddings = embeddings_path.map(read_embeddings).transpose()?;
    Ok(Dataset {
        items,
        responses,
        embeddings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DifficultyRow {
    item_id: String,
    difficulty: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    item_id: String,
    raw: f64,
    normalized: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::io(path, source),
        other => DataError::Schema {
            path: path.display().to_string(),
            line,
            field: "<row>".into(),
            message: format!("{other:?}"),
        },
    }
}

/// Item difficulties from either a fitted-parameter JSON document (`.json`)
/// or a CSV with `item_id,difficulty` columns.
pub fn read_difficulties(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>, DataError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        let fit = irt::read_params(path).map_err(|e| match e {
            IrtError::Io { source, .. } => DataError::io(path, source),
            other => DataError::Invalid(format!("{}: {other}", path.display())),
        })?;
        return Ok(fit
            .item_params
            .iter()
            .map(|(id, p)| (id.clone(), p.difficulty()))
            .collect());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<DifficultyRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if out.insert(row.item_id.clone(), row.difficulty).is_some() {
            return Err(DataError::Invalid(format!("duplicate item `{}` in {}", row.item_id, path.display())));
        }
    }
    Ok(out)
}

pub fn write_difficulties(path: impl AsRef<Path>, difficulties: &BTreeMap<String, f64>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (item_id, &difficulty) in difficulties {
        w.serialize(DifficultyRow {
            item_id: item_id.clone(),
            difficulty,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Writes predictions as CSV with columns `item_id,raw,normalized`.
pub fn write_predictions(path: impl AsRef<Path>, preds: &[DifficultyPrediction]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in preds {
        w.serialize(PredictionRow {
            item_id: p.item_id.clone(),
            raw: p.raw_difficulty,
            normalized: p.normalized_difficulty,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<DifficultyPrediction>, DataError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize::<PredictionRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok(DifficultyPrediction {
                item_id: row.item_id,
                raw_difficulty: row.raw,
                normalized_difficulty: row.normalized,
            })
        })
        .collect()
}
