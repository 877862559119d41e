//! RunRecord JSON documents and their schema check.
//!
//! ```text
//! {
//!   "format": "di-ws/1",
//!   "config": { ...experiment config... },
//!   "epochs": [{"epoch": 0, "phase": "supernet" | "controller",
//!               "steps": [{"arch": "e0:op1,...", "loss": 1.3, "reward": 0.25}]}],
//!   "final_policy": {"logits": [[...]], "entropy_weight": 0.005,
//!                    "baseline": {"decay": 0.9, "value": 0.5} | null},
//!   "store": {"num_classes": 4,
//!             "layers": [{"key": "e0:op0", "weight": {"rows", "cols", "data"},
//!                         "lambda": 1.0, "absorbed_count": 120}]},
//!   "pd_matrix": {"archs": [...], "cells": [[0.5, null], ...]}   (optional)
//! }
//! ```

use diws_core::metrics::PdMatrix;
use diws_core::searchspace::SharedParamStore;
use diws_core::trainer::{RunRecord, FORMAT_TAG};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub fn store_json(store: &SharedParamStore) -> Value {
    let layers: Vec<Value> = store
        .layers()
        .map(|(key, layer)| {
            json!({
                "key": key.to_string(),
                "weight": layer.weight,
                "lambda": layer.projection.lambda(),
                "absorbed_count": layer.projection.absorbed_count(),
            })
        })
        .collect();
    json!({ "num_classes": store.num_classes(), "layers": layers })
}

pub fn pd_matrix_json(m: &PdMatrix) -> Value {
    json!({ "archs": m.archs, "cells": m.cells })
}

pub fn run_record_json(record: &RunRecord, config: &ExperimentConfig, pd: Option<&PdMatrix>) -> Value {
    let epochs: Vec<Value> = record
        .phases
        .iter()
        .map(|p| {
            let steps: Vec<Value> =
                p.steps.iter().map(|s| json!({ "arch": s.arch, "loss": s.loss, "reward": s.reward })).collect();
            json!({ "epoch": p.epoch, "phase": p.phase.name(), "steps": steps })
        })
        .collect();
    let mut doc = json!({
        "format": record.format,
        "config": config,
        "epochs": epochs,
        "final_policy": record.final_policy,
        "store": store_json(&record.store),
    });
    if let Some(m) = pd {
        doc["pd_matrix"] = pd_matrix_json(m);
    }
    doc
}

/// Pretty JSON with a trailing newline.
pub fn to_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values are finite");
    s.push('\n');
    s
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("{ctx}: missing \"{key}\""))
}

fn number(v: &Value, key: &str, ctx: &str) -> Result<f64, String> {
    field(v, key, ctx)?.as_f64().ok_or_else(|| format!("{ctx}.{key}: not a number"))
}

fn array<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Vec<Value>, String> {
    field(v, key, ctx)?.as_array().ok_or_else(|| format!("{ctx}.{key}: not an array"))
}

fn check_pd_matrix(m: &Value) -> Result<(), String> {
    let archs = array(m, "archs", "pd_matrix")?;
    let cells = array(m, "cells", "pd_matrix")?;
    if cells.len() != archs.len() {
        return Err("pd_matrix: row count differs from architecture count".into());
    }
    for (i, row) in cells.iter().enumerate() {
        let row = row.as_array().ok_or(format!("pd_matrix.cells[{i}]: not an array"))?;
        if row.len() != archs.len() {
            return Err(format!("pd_matrix.cells[{i}]: wrong width"));
        }
        for c in row {
            if !(c.is_null() || c.as_f64().is_some_and(|v| (0.0..=1.0).contains(&v))) {
                return Err(format!("pd_matrix.cells[{i}]: cell {c} is neither null nor in [0, 1]"));
            }
        }
    }
    Ok(())
}

/// Checks a parsed document against the layout above.
pub fn validate_run_record(doc: &Value) -> Result<(), String> {
    if field(doc, "format", "record")?.as_str() != Some(FORMAT_TAG) {
        return Err(format!("record.format: expected \"{FORMAT_TAG}\""));
    }
    if !field(doc, "config", "record")?.is_object() {
        return Err("record.config: not an object".into());
    }
    for (e, epoch) in array(doc, "epochs", "record")?.iter().enumerate() {
        let ctx = format!("epochs[{e}]");
        number(epoch, "epoch", &ctx)?;
        match field(epoch, "phase", &ctx)?.as_str() {
            Some("supernet" | "controller") => {}
            _ => return Err(format!("{ctx}.phase: expected supernet or controller")),
        }
        for (s, step) in array(epoch, "steps", &ctx)?.iter().enumerate() {
            let ctx = format!("{ctx}.steps[{s}]");
            if !field(step, "arch", &ctx)?.is_string() {
                return Err(format!("{ctx}.arch: not a string"));
            }
            number(step, "loss", &ctx)?;
            let r = number(step, "reward", &ctx)?;
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{ctx}.reward: outside [0, 1]"));
            }
        }
    }
    let policy = field(doc, "final_policy", "record")?;
    for row in array(policy, "logits", "final_policy")? {
        if !row.as_array().is_some_and(|r| r.iter().all(Value::is_number)) {
            return Err("final_policy.logits: not a matrix of numbers".into());
        }
    }
    number(policy, "entropy_weight", "final_policy")?;
    let store = field(doc, "store", "record")?;
    number(store, "num_classes", "store")?;
    for (i, layer) in array(store, "layers", "store")?.iter().enumerate() {
        let ctx = format!("store.layers[{i}]");
        if !field(layer, "key", &ctx)?.is_string() {
            return Err(format!("{ctx}.key: not a string"));
        }
        let w = field(layer, "weight", &ctx)?;
        let rows = number(w, "rows", &ctx)? as usize;
        let cols = number(w, "cols", &ctx)? as usize;
        if array(w, "data", &ctx)?.len() != rows * cols {
            return Err(format!("{ctx}.weight: data length is not rows * cols"));
        }
        number(layer, "lambda", &ctx)?;
        number(layer, "absorbed_count", &ctx)?;
    }
    if let Some(m) = doc.get("pd_matrix") {
        check_pd_matrix(m)?;
    }
    Ok(())
}
