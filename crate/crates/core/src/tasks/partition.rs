//! Splitting a bank of tasks into training tasks and held-out test tasks.
//!
//! `Random` holds out arbitrary tasks. `Category` trains inside one category
//! and reports two held-out groups: unseen tasks of the same category
//! (`test_in`) and every task of the other categories (`test_out`).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tasks::types::TaskHeader;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionStrategy {
    Random { train: usize },
    Category { category: String, train: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub test_in: Vec<String>,
    pub test_out: Vec<String>,
}

pub fn partition_tasks(headers: &[TaskHeader], strategy: &PartitionStrategy, seed: u64) -> Result<Partition> {
    let mut names: Vec<&TaskHeader> = headers.iter().collect();
    names.sort_by(|a, b| a.name.cmp(&b.name));
    match strategy {
        PartitionStrategy::Random { train } => {
            if *train == 0 || *train > names.len() {
                return Err(Error::InsufficientData(format!(
                    "cannot train on {train} of {} tasks",
                    names.len()
                )));
            }
            let mut shuffled: Vec<String> = names.iter().map(|h| h.name.clone()).collect();
            shuffled.shuffle(&mut stream(seed, "partition/random"));
            let (train_names, rest) = shuffled.split_at(*train);
            Ok(Partition {
                train: train_names.to_vec(),
                test_in: rest.to_vec(),
                test_out: Vec::new(),
            })
        }
        PartitionStrategy::Category { category, train } => {
            let mut inside: Vec<String> = names
                .iter()
                .filter(|h| &h.category == category)
                .map(|h| h.name.clone())
                .collect();
            let outside: Vec<String> = names
                .iter()
                .filter(|h| &h.category != category)
                .map(|h| h.name.clone())
                .collect();
            if *train == 0 || *train > inside.len() {
                return Err(Error::InsufficientData(format!(
                    "category {category:?} has {} tasks; cannot train on {train}",
                    inside.len()
                )));
            }
            inside.shuffle(&mut stream(seed, "partition/category"));
            let (train_names, rest) = inside.split_at(*train);
            Ok(Partition {
                train: train_names.to_vec(),
                test_in: rest.to_vec(),
                test_out: outside,
            })
        }
    }
}
