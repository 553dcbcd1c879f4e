//! Parameter document: `{"items": [...], "meta": {...}, "students": [...]}`.
//!
//! Output is written by hand rather than through `serde_json` so that keys
//! are sorted and every real is printed with exactly nine decimals; the same
//! fit always produces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::fit::{FitConfig, FitResult};
use super::model::{steps_from_free, AbilityRecord, ItemParams};
use super::IrtError;

/// Fixed nine-decimal rendering; never emits `-0.000000000`.
pub(crate) fn fixed9(x: f64) -> String {
    let s = format!("{x:.9}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

pub fn params_to_json(fit: &FitResult) -> String {
    let mut out = String::from("{\n  \"items\": [");
    let n_items = fit.item_params.len();
    for (i, p) in fit.item_params.values().enumerate() {
        let steps: Vec<String> = p.steps().iter().map(|d| fixed9(*d)).collect();
        let _ = write!(
            out,
            "\n    {{\"a\": {}, \"b\": {}, \"d\": [{}], \"item_id\": {}}}{}",
            fixed9(p.discrimination()),
            fixed9(p.difficulty()),
            steps.join(", "),
            json_str(p.item_id()),
            if i + 1 < n_items { "," } else { "" }
        );
    }
    out.push_str(if n_items > 0 { "\n  ],\n" } else { "],\n" });

    let c = &fit.config;
    let qwk = fit.holdout_qwk.map_or_else(|| "null".to_string(), fixed9);
    let _ = write!(
        out,
        "  \"meta\": {{\"batch_size\": {}, \"epochs\": {}, \"final_loss\": {}, \"holdout_fraction\": {}, \
         \"holdout_qwk\": {}, \"learning_rate\": {}, \"seed\": {}, \"weight_decay\": {}}},\n",
        c.batch_size,
        c.epochs,
        fixed9(fit.final_loss),
        fixed9(c.holdout_fraction),
        qwk,
        fixed9(c.learning_rate),
        c.rng_seed,
        fixed9(c.weight_decay),
    );

    out.push_str("  \"students\": [");
    let n_students = fit.abilities.len();
    for (i, a) in fit.abilities.values().enumerate() {
        let _ = write!(
            out,
            "\n    {{\"student_id\": {}, \"theta\": {}}}{}",
            json_str(&a.student_id),
            fixed9(a.theta),
            if i + 1 < n_students { "," } else { "" }
        );
    }
    out.push_str(if n_students > 0 { "\n  ]\n}\n" } else { "]\n}\n" });
    out
}

#[derive(Deserialize)]
struct ItemRow {
    item_id: String,
    a: f64,
    b: f64,
    d: Vec<f64>,
}

#[derive(Deserialize)]
struct StudentRow {
    student_id: String,
    theta: f64,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct Meta {
    seed: Option<u64>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    holdout_fraction: Option<f64>,
    holdout_qwk: Option<f64>,
    final_loss: Option<f64>,
}

#[derive(Deserialize)]
struct Document {
    items: Vec<ItemRow>,
    #[serde(default)]
    students: Vec<StudentRow>,
    #[serde(default)]
    meta: Meta,
}

/// Parses a parameter document.
///
/// Steps are rebuilt from their interior entries, so rounding in the stored
/// last step cannot break the sum-to-zero constraint; a stored last step that
/// disagrees by more than 1e-6 is rejected.
pub fn params_from_json(text: &str) -> Result<FitResult, IrtError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| IrtError::Format(e.to_string()))?;
    let mut item_params = BTreeMap::new();
    for row in doc.items {
        if row.d.len() < 2 {
            return Err(IrtError::InvalidParams {
                item: row.item_id,
                reason: "step vector needs at least 2 entries".into(),
            });
        }
        if row.d[0].abs() > 1e-9 {
            return Err(IrtError::InvalidParams {
                item: row.item_id,
                reason: format!("first step must be 0, got {}", row.d[0]),
            });
        }
        let free = &row.d[1..row.d.len() - 1];
        let steps = steps_from_free(free);
        let stored_last = row.d[row.d.len() - 1];
        if (steps[steps.len() - 1] - stored_last).abs() > 1e-6 {
            return Err(IrtError::InvalidParams {
                item: row.item_id,
                reason: "steps do not sum to 0".into(),
            });
        }
        let params = ItemParams::new(row.item_id.clone(), row.a, row.b, steps)?;
        if item_params.insert(row.item_id.clone(), params).is_some() {
            return Err(IrtError::Format(format!("duplicate item `{}`", row.item_id)));
        }
    }
    let mut abilities = BTreeMap::new();
    for row in doc.students {
        if !row.theta.is_finite() {
            return Err(IrtError::NonFinite(format!("theta of `{}`", row.student_id)));
        }
        let id = row.student_id.clone();
        let record = AbilityRecord {
            student_id: row.student_id,
            theta: row.theta,
        };
        if abilities.insert(id.clone(), record).is_some() {
            return Err(IrtError::Format(format!("duplicate student `{id}`")));
        }
    }
    let defaults = FitConfig::default();
    let m = doc.meta;
    Ok(FitResult {
        item_params,
        abilities,
        holdout_qwk: m.holdout_qwk,
        final_loss: m.final_loss.unwrap_or(f64::NAN),
        loss_curve: Vec::new(),
        config: FitConfig {
            epochs: m.epochs.unwrap_or(defaults.epochs),
            learning_rate: m.learning_rate.unwrap_or(defaults.learning_rate),
            weight_decay: m.weight_decay.unwrap_or(defaults.weight_decay),
            batch_size: m.batch_size.unwrap_or(defaults.batch_size),
            holdout_fraction: m.holdout_fraction.unwrap_or(defaults.holdout_fraction),
            rng_seed: m.seed.unwrap_or(defaults.rng_seed),
        },
    })
}

pub fn write_params(fit: &FitResult, path: impl AsRef<Path>) -> Result<(), IrtError> {
    let path = path.as_ref();
    std::fs::write(path, params_to_json(fit)).map_err(|source| IrtError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_params(path: impl AsRef<Path>) -> Result<FitResult, IrtError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IrtError::Io {
        path: path.display().to_string(),
        source,
    })?;
    params_from_json(&text)
}
