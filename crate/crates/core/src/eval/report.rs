//! Score tables and the two aggregate metrics.
//!
//! Every experiment writes per-task rows into a [`ScoreTable`]; the two
//! aggregates are the mean absolute score `E_abs` and the mean per-task
//! ratio `E_rel` against a baseline (per-task ratios averaged, *not* a ratio
//! of sums). E_rel is a fraction here; reports print it as a percentage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCORE_CSV_HEADER: &str = "task,method,partition,d_I,seed,score,baseline_pt,baseline_ft";

/// One (task, method) measurement plus the baselines it is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub method: String,
    pub partition: String,
    /// Subspace dimension, when the method has one.
    pub d_i: Option<usize>,
    pub seed: u64,
    pub score: f64,
    pub baseline_pt: Option<f64>,
    pub baseline_ft: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Format with six significant digits, deterministically. Values in a
/// human scale get plain decimal notation; extreme magnitudes fall back to
/// scientific notation.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..=9).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

pub(crate) fn csv_field(s: &str) -> Result<&str> {
    if s.contains(',') || s.contains('\n') || s.contains('\r') {
        return Err(Error::Usage(format!("CSV field {s:?} must not contain separators")));
    }
    Ok(s)
}

fn opt_usize(s: &str, line: usize) -> Result<Option<usize>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e| Error::Parse { line, detail: format!("bad d_I {s:?}: {e}") })
}

fn opt_f64(s: &str, line: usize, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e| Error::Parse { line, detail: format!("bad {what} {s:?}: {e}") })
}

impl ScoreTable {
    pub fn push(&mut self, row: ScoreRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: ScoreTable) {
        self.rows.extend(other.rows);
    }

    /// Deterministic row order: task, then seed, then method.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.task, a.seed, &a.method).cmp(&(&b.task, b.seed, &b.method))
        });
    }

    /// Rows for one (method, partition) pair, in table order.
    pub fn select(&self, method: &str, partition: &str) -> Vec<&ScoreRow> {
        self.rows.iter().filter(|r| r.method == method && r.partition == partition).collect()
    }

    /// Render as CSV. An optional `config_hash` is embedded as a leading
    /// comment so artifacts record what produced them.
    pub fn to_csv(&self, config_hash: Option<&str>) -> Result<String> {
        let mut out = String::new();
        if let Some(hash) = config_hash {
            writeln!(out, "# config_hash={}", csv_field(hash)?).expect("string write");
        }
        out.push_str(SCORE_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let d_i = row.d_i.map(|d| d.to_string()).unwrap_or_default();
            let bp = row.baseline_pt.map(fmt_sig6).unwrap_or_default();
            let bf = row.baseline_ft.map(fmt_sig6).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&row.task)?,
                csv_field(&row.method)?,
                csv_field(&row.partition)?,
                d_i,
                row.seed,
                fmt_sig6(row.score),
                bp,
                bf,
            )
            .expect("string write");
        }
        Ok(out)
    }

    /// Parse a table written by [`ScoreTable::to_csv`]; returns the embedded
    /// config hash when present.
    pub fn from_csv(text: &str) -> Result<(ScoreTable, Option<String>)> {
        let mut rows = Vec::new();
        let mut hash = None;
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("# config_hash=") {
                if saw_header {
                    return Err(Error::Parse {
                        line: lineno,
                        detail: "config_hash comment must precede the header".into(),
                    });
                }
                hash = Some(rest.to_string());
                continue;
            }
            if !saw_header {
                if line != SCORE_CSV_HEADER {
                    return Err(Error::Parse {
                        line: lineno,
                        detail: format!("expected header {SCORE_CSV_HEADER:?}, got {line:?}"),
                    });
                }
                saw_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Parse {
                    line: lineno,
                    detail: format!("expected 8 fields, got {}", fields.len()),
                });
            }
            rows.push(ScoreRow {
                task: fields[0].to_string(),
                method: fields[1].to_string(),
                partition: fields[2].to_string(),
                d_i: opt_usize(fields[3], lineno)?,
                seed: fields[4].parse().map_err(|e| Error::Parse {
                    line: lineno,
                    detail: format!("bad seed {:?}: {e}", fields[4]),
                })?,
                score: fields[5].parse().map_err(|e| Error::Parse {
                    line: lineno,
                    detail: format!("bad score {:?}: {e}", fields[5]),
                })?,
                baseline_pt: opt_f64(fields[6], lineno, "baseline_pt")?,
                baseline_ft: opt_f64(fields[7], lineno, "baseline_ft")?,
            });
        }
        if !saw_header {
            return Err(Error::Parse { line: 1, detail: "missing CSV header".into() });
        }
        Ok((ScoreTable { rows }, hash))
    }

    /// `E_abs` over one (method, partition) selection.
    pub fn e_abs(&self, method: &str, partition: &str) -> Result<f64> {
        e_abs(&self.select(method, partition).iter().map(|r| r.score).collect::<Vec<_>>())
    }

    /// `E_rel` against the recorded prompt-tuning baselines. Rows without a
    /// baseline are a caller bug: baselines must be present before any
    /// relative score is computed.
    pub fn e_rel_pt(&self, method: &str, partition: &str) -> Result<ERel> {
        self.e_rel_against(method, partition, |r| r.baseline_pt, "baseline_pt")
    }

    /// `E_rel` against the recorded fine-tuning baselines.
    pub fn e_rel_ft(&self, method: &str, partition: &str) -> Result<ERel> {
        self.e_rel_against(method, partition, |r| r.baseline_ft, "baseline_ft")
    }

    fn e_rel_against(
        &self,
        method: &str,
        partition: &str,
        baseline: impl Fn(&ScoreRow) -> Option<f64>,
        what: &str,
    ) -> Result<ERel> {
        let rows = self.select(method, partition);
        let mut pairs = Vec::with_capacity(rows.len());
        for row in rows {
            let base = baseline(row).ok_or_else(|| {
                Error::Usage(format!(
                    "row (task {:?}, method {:?}) has no {what}; baselines must be recorded before E_rel",
                    row.task, row.method
                ))
            })?;
            pairs.push((row.score, base));
        }
        e_rel(&pairs)
    }
}

/// Mean absolute score over tasks.
pub fn e_abs(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Usage("e_abs needs at least one score".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// A relative-performance aggregate: the mean of per-task score/baseline
/// ratios, with the tasks that had no valid (positive) baseline counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ERel {
    /// Mean per-task ratio, as a fraction (1.0 = parity with the baseline).
    pub mean_ratio: f64,
    /// Tasks that entered the mean.
    pub used: usize,
    /// Tasks dropped because their baseline was zero or negative.
    pub excluded: usize,
}

impl ERel {
    /// The reporting form: percent of baseline performance.
    pub fn percent(&self) -> f64 {
        self.mean_ratio * 100.0
    }
}

/// Mean per-task `score / baseline`. Pairs whose baseline is zero or
/// negative are excluded (the ratio is undefined there) with a warning; the
/// exclusion count is part of the result.
pub fn e_rel(pairs: &[(f64, f64)]) -> Result<ERel> {
    if pairs.is_empty() {
        return Err(Error::Usage("e_rel needs at least one (score, baseline) pair".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for &(score, baseline) in pairs {
        if baseline > 0.0 {
            sum += score / baseline;
            used += 1;
        }
    }
    let excluded = pairs.len() - used;
    if excluded > 0 {
        log::warn!("e_rel: excluded {excluded} of {} tasks with non-positive baselines", pairs.len());
    }
    if used == 0 {
        return Err(Error::Usage(format!(
            "e_rel: all {} baselines are zero or negative; the ratio is undefined",
            pairs.len()
        )));
    }
    Ok(ERel { mean_ratio: sum / used as f64, used, excluded })
}
