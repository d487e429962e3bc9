//! Measurements over ledgers: edit distance, per-model acceptance/edit
//! rates and latency statistics, and the model preference ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ledger::Ledger;
use crate::model::{Disposition, OutputStatus};

/// Levenshtein distance over unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    // Keep the shorter string on the row axis.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }

    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// `edit_distance / max(len)` in unicode scalar values; `0.0` for two empty
/// strings.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

/// Aggregates for one model (or for all models together).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub n_outputs: u64,
    pub n_terminal: u64,
    pub acceptance_rate: f64,
    pub edit_rate: f64,
    pub mean_edit_distance_norm: f64,
    pub latency_ms_mean: f64,
    pub latency_ms_p50: f64,
    pub latency_ms_p95: f64,
    pub n_timeouts: u64,
    pub n_errors: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_model: BTreeMap<String, ModelMetrics>,
    pub overall: ModelMetrics,
}

impl MetricsReport {
    /// Pretty JSON followed by a newline. Both the service and the CLI emit
    /// exactly this.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// Aligned plain-text table, one row per model then `(overall)`.
    pub fn to_table(&self) -> String {
        const HEADERS: [&str; 11] = [
            "model", "outputs", "terminal", "accept", "edit", "mean_ed", "lat_mean", "lat_p50",
            "lat_p95", "timeouts", "errors",
        ];
        let row = |name: &str, m: &ModelMetrics| -> Vec<String> {
            vec![
                name.to_owned(),
                m.n_outputs.to_string(),
                m.n_terminal.to_string(),
                format!("{:.3}", m.acceptance_rate),
                format!("{:.3}", m.edit_rate),
                format!("{:.3}", m.mean_edit_distance_norm),
                format!("{:.1}", m.latency_ms_mean),
                format!("{:.0}", m.latency_ms_p50),
                format!("{:.0}", m.latency_ms_p95),
                m.n_timeouts.to_string(),
                m.n_errors.to_string(),
            ]
        };
        let mut rows: Vec<Vec<String>> = vec![HEADERS.iter().map(|h| (*h).to_owned()).collect()];
        rows.extend(self.per_model.iter().map(|(name, m)| row(name, m)));
        rows.push(row("(overall)", &self.overall));

        let widths: Vec<usize> = (0..HEADERS.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            for (c, cell) in r.iter().enumerate() {
                if c == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Default)]
struct Tally {
    latencies: Vec<u64>,
    accepted: u64,
    edited: u64,
    edit_distances: Vec<f64>,
    timeouts: u64,
    errors: u64,
}

impl Tally {
    fn finish(mut self) -> ModelMetrics {
        let n_terminal = self.accepted + self.edited;
        let denom = n_terminal.max(1) as f64;
        self.latencies.sort_unstable();
        ModelMetrics {
            n_outputs: self.latencies.len() as u64,
            n_terminal,
            acceptance_rate: self.accepted as f64 / denom,
            edit_rate: self.edited as f64 / denom,
            mean_edit_distance_norm: mean(&self.edit_distances),
            latency_ms_mean: mean(&self.latencies.iter().map(|&l| l as f64).collect::<Vec<_>>()),
            latency_ms_p50: nearest_rank(&self.latencies, 50) as f64,
            latency_ms_p95: nearest_rank(&self.latencies, 95) as f64,
            n_timeouts: self.timeouts,
            n_errors: self.errors,
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Nearest-rank percentile of an ascending slice; `0` when empty.
pub fn nearest_rank(sorted: &[u64], percentile: u32) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let n = sorted.len();
    let rank = (percentile as usize * n).div_ceil(100).clamp(1, n);
    sorted[rank - 1]
}

/// Phase-level measurements over every session in the ledger.
///
/// Rates count only terminal outputs (accepted or edited); latency covers ok
/// outputs only; the mean edit distance is taken over edited outputs using
/// their last edit.
pub fn compute_metrics(ledger: &Ledger) -> MetricsReport {
    let mut per_model: BTreeMap<String, Tally> = BTreeMap::new();
    let mut overall = Tally::default();

    for log in ledger.sessions() {
        let dispositions = log.dispositions();
        for output in log.outputs() {
            let model = per_model.entry(output.model_name.clone()).or_default();
            for tally in [model, &mut overall] {
                match output.status {
                    OutputStatus::Timeout => tally.timeouts += 1,
                    OutputStatus::ProviderError => tally.errors += 1,
                    OutputStatus::Ok => {
                        tally.latencies.push(output.latency_ms);
                        let (disposition, last) = &dispositions[&output.output_id];
                        match disposition {
                            Disposition::Accepted => tally.accepted += 1,
                            Disposition::Edited => {
                                tally.edited += 1;
                                if let Some(fb) = last {
                                    tally.edit_distances.push(fb.edit_distance_norm);
                                }
                            }
                            Disposition::Superseded | Disposition::Pending => {}
                        }
                    }
                }
            }
        }
    }

    MetricsReport {
        per_model: per_model
            .into_iter()
            .map(|(name, tally)| (name, tally.finish()))
            .collect(),
        overall: overall.finish(),
    }
}

/// Preference ranking: acceptance rate descending, then mean edit distance,
/// p50 latency and model name ascending.
pub fn compare_models(report: &MetricsReport) -> Vec<String> {
    let mut entries: Vec<(&String, &ModelMetrics)> = report.per_model.iter().collect();
    entries.sort_by(|(na, a), (nb, b)| {
        b.acceptance_rate
            .total_cmp(&a.acceptance_rate)
            .then_with(|| {
                a.mean_edit_distance_norm
                    .total_cmp(&b.mean_edit_distance_norm)
            })
            .then_with(|| a.latency_ms_p50.total_cmp(&b.latency_ms_p50))
            .then_with(|| na.cmp(nb))
    });
    entries.into_iter().map(|(name, _)| name.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive recursive Levenshtein, exponential but exact.
    fn oracle(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ha, ta)), Some((hb, tb))) => {
                let sub = oracle(ta, tb) + usize::from(ha != hb);
                let del = oracle(ta, b) + 1;
                let ins = oracle(a, tb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(edit_distance("same", "same"), 0);
        assert_eq!(oracle(&chars("kitten"), &chars("sitting")), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("café", "cafe"), 1);
        assert_eq!(edit_distance("日本語", "日本"), 1);
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(normalized_edit_distance("", ""), 0.0);
        assert_eq!(normalized_edit_distance("abcd", ""), 1.0);
        assert!((normalized_edit_distance("kitten", "sitting") - 3.0 / 7.0).abs() < 1e-12);
        assert!((normalized_edit_distance("kitten", "sitting") - 0.428571).abs() < 1e-6);
    }

    #[test]
    fn nearest_rank_examples() {
        let l = [100, 200, 300, 400];
        assert_eq!(nearest_rank(&l, 50), 200);
        assert_eq!(nearest_rank(&l, 95), 400);
        assert_eq!(nearest_rank(&[7], 50), 7);
        assert_eq!(nearest_rank(&[], 95), 0);
        let twenty: Vec<u64> = (1..=20).collect();
        assert_eq!(nearest_rank(&twenty, 95), 19);
        assert_eq!(nearest_rank(&twenty, 50), 10);
    }

    #[test]
    fn empty_ledger_report_is_zero() {
        let report = compute_metrics(&Ledger::new());
        assert!(report.per_model.is_empty());
        assert_eq!(report.overall, ModelMetrics::default());
        assert!(compare_models(&report).is_empty());
    }

    fn metrics(acc: f64, ed: f64, p50: f64) -> ModelMetrics {
        ModelMetrics {
            acceptance_rate: acc,
            mean_edit_distance_norm: ed,
            latency_ms_p50: p50,
            ..ModelMetrics::default()
        }
    }

    #[test]
    fn ranking_rules() {
        let mut r = MetricsReport::default();
        r.per_model.insert("low".into(), metrics(0.5, 0.0, 1.0));
        r.per_model.insert("high".into(), metrics(0.8, 0.9, 9.0));
        assert_eq!(compare_models(&r), vec!["high", "low"]);

        let mut r = MetricsReport::default();
        r.per_model.insert("x".into(), metrics(0.5, 0.3, 1.0));
        r.per_model.insert("y".into(), metrics(0.5, 0.1, 1.0));
        assert_eq!(compare_models(&r), vec!["y", "x"]);

        let mut r = MetricsReport::default();
        r.per_model.insert("p".into(), metrics(0.5, 0.1, 300.0));
        r.per_model.insert("q".into(), metrics(0.5, 0.1, 200.0));
        assert_eq!(compare_models(&r), vec!["q", "p"]);

        let mut r = MetricsReport::default();
        r.per_model.insert("b".into(), metrics(0.5, 0.1, 1.0));
        r.per_model.insert("a".into(), metrics(0.5, 0.1, 1.0));
        assert_eq!(compare_models(&r), vec!["a", "b"]);
    }

    #[test]
    fn table_has_row_per_model_plus_overall() {
        let mut r = MetricsReport::default();
        r.per_model.insert("mock-a".into(), metrics(1.0, 0.0, 5.0));
        let table = r.to_table();
        let lines: Vec<_> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("model"));
        assert!(lines[1].starts_with("mock-a"));
        assert!(lines[2].starts_with("(overall)"));
    }

    proptest! {
        #[test]
        fn matches_recursive_oracle(a in "[abcd]{0,7}", b in "[abcd]{0,7}") {
            prop_assert_eq!(edit_distance(&a, &b), oracle(&chars(&a), &chars(&b)));
        }

        #[test]
        fn metric_axioms(a in "[a-e]{0,10}", b in "[a-e]{0,10}", c in "[a-e]{0,10}") {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            let (la, lb) = (a.chars().count(), b.chars().count());
            prop_assert!(ab >= la.abs_diff(lb));
            prop_assert!(ab <= la.max(lb));
            let n = normalized_edit_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&n));
        }
    }
}
