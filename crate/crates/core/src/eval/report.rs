//! Canonical JSON reports.
//!
//! Keys are sorted, floats carry exactly six decimals and the layout is fixed,
//! so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, SerError};
use crate::eval::metrics::{unweighted_accuracy, weighted_accuracy, Confusion, N_CLASSES};
use crate::eval::predict::PredictionMode;
use crate::eval::separation::SeparationDiagnostics;

/// Test-set scores of one model, or of pooled models when `run` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold_index: Option<u8>,
    pub run: Option<usize>,
    pub weighted_accuracy: f64,
    pub unweighted_accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
    /// `null` for classes absent from the test set.
    pub per_class_recall: [Option<f64>; N_CLASSES],
    pub n_test: u64,
    pub prediction_mode: PredictionMode,
    pub seed: u64,
    pub config_hash: String,
    pub separation: Option<SeparationDiagnostics>,
}

impl EvalReport {
    pub fn from_confusion(
        confusion: &Confusion,
        fold_index: Option<u8>,
        run: Option<usize>,
        prediction_mode: PredictionMode,
        seed: u64,
        config_hash: &str,
    ) -> Result<EvalReport> {
        Ok(EvalReport {
            fold_index,
            run,
            weighted_accuracy: weighted_accuracy(confusion)?,
            unweighted_accuracy: unweighted_accuracy(confusion)?,
            confusion: confusion.0,
            per_class_recall: confusion.per_class_recall(),
            n_test: confusion.total(),
            prediction_mode,
            seed,
            config_hash: config_hash.to_string(),
            separation: None,
        })
    }

    pub fn confusion(&self) -> Confusion {
        Confusion(self.confusion)
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                // Avoid "-0.000000" so sign noise cannot change bytes.
                let s = format!("{f:.6}");
                out.push_str(if s == "-0.000000" { "0.000000" } else { &s });
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (k, i) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, i, indent);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (k, i) in items.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    write_value(out, i, indent + 1);
                    out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(indent));
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*key], indent + 1);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Canonical text of any serializable value, newline terminated.
pub fn canonical_json<T: Serialize>(v: &T) -> Result<String> {
    let value = serde_json::to_value(v)?;
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical text of `v`.
pub fn config_hash<T: Serialize>(v: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(v)?.as_bytes()))
}

pub fn write_canonical<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SerError::io(parent, e))?;
    }
    std::fs::write(path, canonical_json(v)?).map_err(|e| SerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let c = Confusion([[5, 1, 0, 0], [2, 3, 0, 0], [0, 0, 4, 0], [0, 0, 0, 0]]);
        EvalReport::from_confusion(&c, Some(5), Some(0), PredictionMode::Average, 7, "abc").unwrap()
    }

    #[test]
    fn canonical_format() {
        let text = canonical_json(&serde_json::json!({"b": 1.0/3.0, "a": [1, 2], "c": {"z": null, "y": -0.0}})).unwrap();
        assert_eq!(
            text,
            "{\n  \"a\": [1, 2],\n  \"b\": 0.333333,\n  \"c\": {\n    \"y\": 0.000000,\n    \"z\": null\n  }\n}\n"
        );
    }

    #[test]
    fn report_is_byte_stable() {
        let a = canonical_json(&sample()).unwrap();
        let b = canonical_json(&sample()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"weighted_accuracy\": 0.800000"));
        assert!(a.contains("\"per_class_recall\": [0.833333, 0.600000, 1.000000, null]"));
        let back: EvalReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back.confusion, sample().confusion);
    }

    #[test]
    fn hash_depends_on_content_only() {
        let x = serde_json::json!({"a": 1, "b": 2});
        let y = serde_json::json!({"b": 2, "a": 1});
        assert_eq!(config_hash(&x).unwrap(), config_hash(&y).unwrap());
        assert_ne!(config_hash(&x).unwrap(), config_hash(&serde_json::json!({"a": 1})).unwrap());
        assert_eq!(config_hash(&x).unwrap().len(), 64);
    }
}
