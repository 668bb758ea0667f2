//! Tasks: data structures, serialization, splits, partitions, and the
//! planted-subspace synthetic generator.

pub mod fewshot;
pub mod jsonl;
pub mod partition;
pub mod synth;
pub mod types;

pub use fewshot::{
    few_shot_split, few_shot_split_with_k, resample, resolve_k, FewShotSplit, CLS_DEFAULT_K,
    NON_CLS_DEFAULT_K,
};
pub use jsonl::{parse_task, read_header, read_task, render_multi_choice, write_task};
pub use partition::{partition_tasks, Partition, PartitionStrategy};
pub use synth::{
    family_checkpoint, family_from_checkpoint, generate_family, PlantedFamily, SynthFamily,
    SynthFamilyConfig, FAMILY_KIND,
};
pub use types::{category_of, Example, Metric, Task, TaskHeader, CLS_CATEGORY, ONTOLOGY};
