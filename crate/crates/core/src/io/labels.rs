use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered class names; index `i` names class `i` of the model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    labels: Vec<String>,
}

impl LabelTable {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("label table is empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Validation(format!("duplicate label \"{l}\"")));
            }
        }
        Ok(LabelTable { labels })
    }

    /// `class_0`, `class_1`, ... for models shipped without names.
    pub fn numbered(count: usize) -> Self {
        LabelTable {
            labels: (0..count).map(|i| format!("class_{i}")).collect(),
        }
    }

    /// One label per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn check_class_count(&self, class_count: usize) -> Result<()> {
        if self.labels.len() != class_count {
            return Err(Error::Validation(format!(
                "{} labels for a model with {class_count} classes",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class_index: usize,
    pub label: String,
    pub probability: f64,
}

/// Top `min(k, K)` classes by probability, descending; ties go to the
/// lower class index.
pub fn decode_predictions(probabilities: &Tensor, labels: &LabelTable, k: usize) -> Result<Vec<Prediction>> {
    if k == 0 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    let probs = match probabilities.shape() {
        [_] | [1, _] => probabilities.data(),
        other => {
            return Err(Error::Validation(format!(
                "expected a single probability row, got shape {other:?}"
            )))
        }
    };
    if probs.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| Prediction {
            class_index: i,
            label: labels.labels[i].clone(),
            probability: probs[i],
        })
        .collect())
}
