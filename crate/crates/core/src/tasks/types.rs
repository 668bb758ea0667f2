//! Task data structures: a header describing the task and a pool of
//! input/target string pairs.
//!
//! The last `test_size` examples of a pool form the fixed test block (see
//! [`crate::tasks::fewshot`]); everything before it is the candidate pool for
//! few-shot sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How predictions are scored against targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    TokenF1,
}

/// The fixed ontology of task tags. The part before `/` is the task's
/// category; everything that is not `cls` counts as non-classification.
pub const ONTOLOGY: &[&str] = &[
    "cls/sentiment analysis",
    "cls/emotion",
    "cls/hate speech detection",
    "cls/NLI",
    "cls/fact checking",
    "cls/paraphrase",
    "cls/topic",
    "cls/other",
    "qa/closed-book qa",
    "qa/multiple-choice qa",
    "qa/long-form qa",
    "qa/MRC",
    "qa/binary",
    "cg/summarization",
    "cg/dialogue",
    "cg/other",
    "other/linguistic phenomenon",
    "other/generate explanation",
    "other/slot_filling",
    "other/entity linking",
    "other/other",
];

pub const CLS_CATEGORY: &str = "cls";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub name: String,
    pub category: String,
    pub ontology: String,
    pub metric: Metric,
    /// Optional override of the few-shot budget for this task.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub header: TaskHeader,
    pub examples: Vec<Example>,
}

impl TaskHeader {
    pub fn is_cls(&self) -> bool {
        self.category == CLS_CATEGORY
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Usage(format!(
                "task name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        if !ONTOLOGY.contains(&self.ontology.as_str()) {
            return Err(Error::Usage(format!("unknown ontology tag {:?}", self.ontology)));
        }
        let expected_category = self.ontology.split('/').next().unwrap_or("");
        if self.category != expected_category {
            return Err(Error::Usage(format!(
                "category {:?} does not match ontology tag {:?}",
                self.category, self.ontology
            )));
        }
        if self.k == Some(0) {
            return Err(Error::Usage(format!("task {:?} has K = 0", self.name)));
        }
        Ok(())
    }
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.examples.is_empty() {
            return Err(Error::InsufficientData(format!("task {:?} has no examples", self.header.name)));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.header.name
    }
}

/// Derive the category from an ontology tag.
pub fn category_of(ontology: &str) -> &str {
    ontology.split('/').next().unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ontology_has_21_unique_tags_in_4_categories() {
        assert_eq!(ONTOLOGY.len(), 21);
        let mut unique: Vec<&str> = ONTOLOGY.to_vec();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 21);
        let mut cats: Vec<&str> = ONTOLOGY.iter().map(|t| category_of(t)).collect();
        cats.sort();
        cats.dedup();
        assert_eq!(cats, vec!["cg", "cls", "other", "qa"]);
    }

    #[test]
    fn header_validation_catches_mismatches() {
        let ok = TaskHeader {
            name: "t-0".into(),
            category: "cls".into(),
            ontology: "cls/topic".into(),
            metric: Metric::ExactMatch,
            k: None,
        };
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.category = "qa".into();
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.ontology = "cls/unheard of".into();
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.name = "has space".into();
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.k = Some(0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn header_serializes_k_only_when_present() {
        let h = TaskHeader {
            name: "t".into(),
            category: "qa".into(),
            ontology: "qa/binary".into(),
            metric: Metric::TokenF1,
            k: None,
        };
        let json = serde_json::to_string(&h).unwrap();
        assert!(!json.contains("\"K\""));
        assert!(json.contains("\"token_f1\""));
        let with_k = TaskHeader { k: Some(4), ..h };
        let json = serde_json::to_string(&with_k).unwrap();
        assert!(json.contains("\"K\":4"));
        let back: TaskHeader = serde_json::from_str(&json).unwrap();
        assert_eq!(back, with_k);
    }
}
