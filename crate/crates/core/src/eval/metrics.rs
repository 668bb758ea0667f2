//! Scoring predictions against targets.
//!
//! `exact_match` is binary string equality. `token_f1` is balanced F1 over
//! token multisets: tokens are whitespace-separated words when either string
//! contains at least two of them, otherwise individual characters (so
//! single-word strings still score with partial credit).

use std::collections::HashMap;

use crate::tasks::types::Metric;

pub fn exact_match(target: &str, prediction: &str) -> f64 {
    if target == prediction {
        1.0
    } else {
        0.0
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn counts(tokens: impl Iterator<Item = String>) -> HashMap<String, usize> {
    let mut map = HashMap::new();
    for t in tokens {
        *map.entry(t).or_insert(0) += 1;
    }
    map
}

pub fn token_f1(target: &str, prediction: &str) -> f64 {
    let word_level = word_count(target) >= 2 || word_count(prediction) >= 2;
    let (gold, pred) = if word_level {
        (
            counts(target.split_whitespace().map(str::to_string)),
            counts(prediction.split_whitespace().map(str::to_string)),
        )
    } else {
        (
            counts(target.chars().map(String::from)),
            counts(prediction.chars().map(String::from)),
        )
    };
    let gold_total: usize = gold.values().sum();
    let pred_total: usize = pred.values().sum();
    if gold_total == 0 && pred_total == 0 {
        return 1.0;
    }
    if gold_total == 0 || pred_total == 0 {
        return 0.0;
    }
    let overlap: usize = gold.iter().map(|(t, &c)| c.min(pred.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_total as f64;
    let recall = overlap as f64 / gold_total as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn score(metric: Metric, target: &str, prediction: &str) -> f64 {
    match metric {
        Metric::ExactMatch => exact_match(target, prediction),
        Metric::TokenF1 => token_f1(target, prediction),
    }
}

/// Mean score over (target, prediction) pairs. Empty input is a caller bug.
pub fn mean_score<'a>(metric: Metric, pairs: impl Iterator<Item = (&'a str, &'a str)>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (target, prediction) in pairs {
        total += score(metric, target, prediction);
        count += 1;
    }
    assert!(count > 0, "mean_score over an empty set");
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_is_binary() {
        assert_eq!(exact_match("abc", "abc"), 1.0);
        assert_eq!(exact_match("abc", "abd"), 0.0);
        assert_eq!(exact_match("", ""), 1.0);
    }

    #[test]
    fn word_level_f1_by_hand() {
        // gold {ab, cd}, pred {cd, ef}: overlap 1, P = R = 1/2, F1 = 1/2.
        assert!((token_f1("ab cd", "cd ef") - 0.5).abs() < 1e-12);
        assert_eq!(token_f1("ab cd", "ab cd"), 1.0);
        assert_eq!(token_f1("ab cd", "xy zw"), 0.0);
    }

    #[test]
    fn single_word_strings_fall_back_to_characters() {
        // chars {a,b,c} vs {a,b,d}: overlap 2, P = R = 2/3, F1 = 2/3.
        assert!((token_f1("abc", "abd") - 2.0 / 3.0).abs() < 1e-12);
        // Multiset counting: "aa" vs "a" has overlap 1, P = 1, R = 1/2.
        assert!((token_f1("aa", "a") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_strings_score_like_sets() {
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("abc", ""), 0.0);
        assert_eq!(token_f1("", "abc"), 0.0);
    }

    #[test]
    fn mean_score_averages() {
        let pairs = [("a", "a"), ("b", "c")];
        let m = mean_score(Metric::ExactMatch, pairs.iter().map(|&(t, p)| (t, p)));
        assert_eq!(m, 0.5);
    }
}
