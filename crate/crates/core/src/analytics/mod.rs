//! Narrative metrics, persona-transition analysis and corpus comparison.

mod corpus;
mod metrics;
mod transitions;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::domain::PersonaId;

pub use corpus::{load_corpus, load_story, CorpusEntry};
pub use metrics::{
    compute_metrics, dialogue_ratio, gunning_fog, is_complex, locations, sentence_count, syllables,
    vowel_groups, NarrativeMetrics, LOCATION_PREPOSITIONS,
};
pub use transitions::{
    asymmetry_stats, build_transition_matrix, AsymmetryStats, PairAsymmetry, TransitionMatrix,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("persona `{0}` is not in the roster")]
    UnknownPersona(PersonaId),
    #[error("no transitions between distinct personas")]
    NoTransitions,
    #[error("corpora cannot be paired: {0}")]
    UnpairedCorpora(String),
    #[error("cannot read corpus at {path}: {message}")]
    Corpus { path: String, message: String },
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let sd = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Self { n, mean, sd }
    }

    /// One-sample t statistic against zero: `mean / (sd / sqrt(n))`.
    /// Zero spread gives 0 for a zero mean and no value otherwise.
    pub fn t_against_zero(&self) -> Option<f64> {
        let sd = self.sd?;
        if sd == 0.0 {
            return (self.mean == 0.0).then_some(0.0);
        }
        Some(self.mean / (sd / (self.n as f64).sqrt()))
    }
}

/// Two-sided p-value of `t` under Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mean_a: f64,
    pub sd_a: Option<f64>,
    pub mean_b: f64,
    pub sd_b: Option<f64>,
    /// Mean of `b - a` over pairs.
    pub mean_diff: f64,
    pub sd_diff: Option<f64>,
    pub t: Option<f64>,
    pub df: usize,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusComparison {
    pub pairs: usize,
    pub metrics: Vec<MetricComparison>,
}

/// Metric names and accessors, in report order.
pub const METRICS: [(&str, fn(&NarrativeMetrics) -> f64); 4] = [
    ("word_count", |m| m.word_count as f64),
    ("gunning_fog", |m| m.gunning_fog),
    ("dialogue_ratio", |m| m.dialogue_ratio),
    ("location_count", |m| m.location_count as f64),
];

/// Paired t-test per metric. Stories are paired by id; both corpora must
/// hold the same ids, at least two.
pub fn compare_corpora(a: &[CorpusEntry], b: &[CorpusEntry]) -> Result<CorpusComparison, AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::UnpairedCorpora(format!("{} stories vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(AnalyticsError::UnpairedCorpora("at least two pairs are needed".into()));
    }
    let mut a: Vec<&CorpusEntry> = a.iter().collect();
    let mut b: Vec<&CorpusEntry> = b.iter().collect();
    a.sort_by(|x, y| x.id.cmp(&y.id));
    b.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some((x, y)) = a.iter().zip(&b).find(|(x, y)| x.id != y.id) {
        return Err(AnalyticsError::UnpairedCorpora(format!("`{}` has no partner (found `{}`)", x.id, y.id)));
    }
    let n = a.len();
    let metrics = METRICS
        .iter()
        .map(|(name, get)| {
            let xs: Vec<f64> = a.iter().map(|e| get(&e.metrics)).collect();
            let ys: Vec<f64> = b.iter().map(|e| get(&e.metrics)).collect();
            let diffs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - x).collect();
            let (sa, sb, sd) = (Summary::of(&xs), Summary::of(&ys), Summary::of(&diffs));
            let t = sd.t_against_zero();
            MetricComparison {
                metric: (*name).to_owned(),
                mean_a: sa.mean,
                sd_a: sa.sd,
                mean_b: sb.mean,
                sd_b: sb.sd,
                mean_diff: sd.mean,
                sd_diff: sd.sd,
                t,
                df: n - 1,
                p: t.map(|t| student_t_two_sided(t, (n - 1) as f64)),
            }
        })
        .collect();
    Ok(CorpusComparison { pairs: n, metrics })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.digits$}"))
}

/// Render rows as an aligned-column text table; the first row is the header.
pub fn table(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ");
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}

impl CorpusComparison {
    pub fn to_table(&self) -> String {
        let mut rows = vec![["metric", "mean_a", "sd_a", "mean_b", "sd_b", "t", "df", "p"].map(String::from).to_vec()];
        for m in &self.metrics {
            rows.push(vec![
                m.metric.clone(),
                format!("{:.3}", m.mean_a),
                opt(m.sd_a, 3),
                format!("{:.3}", m.mean_b),
                opt(m.sd_b, 3),
                opt(m.t, 3),
                m.df.to_string(),
                opt(m.p, 4),
            ]);
        }
        table(&rows)
    }
}

/// Per-story metrics table for a corpus.
pub fn metrics_table(entries: &[CorpusEntry]) -> String {
    let mut rows = vec![["story", "words", "fog", "dialogue", "locations"].map(String::from).to_vec()];
    for e in entries {
        rows.push(vec![
            e.id.clone(),
            e.metrics.word_count.to_string(),
            format!("{:.2}", e.metrics.gunning_fog),
            format!("{:.3}", e.metrics.dialogue_ratio),
            e.metrics.location_count.to_string(),
        ]);
    }
    table(&rows)
}

impl TransitionMatrix {
    pub fn to_table(&self) -> String {
        let mut header = vec!["from \\ to".to_owned()];
        header.extend(self.personas.iter().map(ToString::to_string));
        header.push("opening".to_owned());
        let mut rows = vec![header];
        for (i, id) in self.personas.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(self.counts[i].iter().map(ToString::to_string));
            row.push(self.opening_counts[i].to_string());
            rows.push(row);
        }
        table(&rows)
    }
}

impl AsymmetryStats {
    pub fn to_table(&self) -> String {
        let mut rows = vec![["pair", "forward", "reverse", "d"].map(String::from).to_vec()];
        for p in &self.pairs {
            rows.push(vec![
                format!("{} / {}", p.a, p.b),
                p.forward.to_string(),
                p.reverse.to_string(),
                p.difference.to_string(),
            ]);
        }
        let mut out = table(&rows);
        let _ = writeln!(
            out,
            "\nn = {}, mean d = {:.3}, sd = {}, t({}) = {}, p = {}",
            self.n,
            self.mean,
            opt(self.sd, 3),
            self.df.map_or_else(|| "-".to_owned(), |d| d.to_string()),
            opt(self.t, 3),
            opt(self.p, 4)
        );
        out
    }
}
