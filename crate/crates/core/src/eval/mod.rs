//! Evaluation: metrics, aggregate scores, challenge protocols, stability
//! statistics, and ablation sweeps.

pub mod challenge;
pub mod metrics;
pub mod report;
pub mod stability;
pub mod sweep;

pub use challenge::{run_challenge, ChallengeConfig, ChallengeKind, PartitionReport, TaskBundle};
pub use metrics::{exact_match, mean_score, score, token_f1};
pub use report::{e_abs, e_rel, fmt_sig6, ERel, ScoreRow, ScoreTable, SCORE_CSV_HEADER};
pub use stability::{collect_stability, stability_std, StabilityReport, TaskStd};
pub use sweep::{sweep, SweepKind, SweepPoint};
