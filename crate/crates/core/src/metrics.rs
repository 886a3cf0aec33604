//! Binary confusion scoring, metric derivation and report tables.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotators::{AnnotationVerdict, ParseStatus, PositivePolicy};
use crate::datasets::ReferenceLabels;

pub const RANDOM_ROW_NAME: &str = "Random";
pub const DELTA_COLUMN: &str = "delta_f1_variant_minus_baseline";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, reference: bool, predicted: bool) {
        match (reference, predicted) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, F1 and accuracy with 0 for every empty denominator.
pub fn derive(c: ConfusionCounts) -> Derived {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Derived { f1, accuracy: ratio(c.tp + c.tn, c.total()), precision, recall }
}

/// Rounds half to even at `digits` decimals.
pub fn round_half_even(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    let scaled = x * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    rounded / scale
}

pub fn display2(x: f64) -> String {
    format!("{:.2}", round_half_even(x, 2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub annotator_name: String,
    pub config_name: String,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Absent for the constant baseline row.
    pub counts: Option<ConfusionCounts>,
    pub unparseable: u64,
}

impl MetricsRow {
    pub fn from_counts(annotator_name: &str, config_name: &str, counts: ConfusionCounts, unparseable: u64) -> Self {
        let d = derive(counts);
        Self {
            annotator_name: annotator_name.to_owned(),
            config_name: config_name.to_owned(),
            f1: d.f1,
            accuracy: d.accuracy,
            precision: d.precision,
            recall: d.recall,
            counts: Some(counts),
            unparseable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scored {
    pub counts: ConfusionCounts,
    pub unparseable: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("verdicts and reference disagree on transition ids: missing {missing:?}, extra {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("transition {0} has more than one verdict")]
    DuplicateVerdict(String),
}

/// Reference-positive iff any reference flag is true; prediction-positive
/// per `policy`. Unparseable verdicts predict negative.
pub fn score(
    verdicts: &[AnnotationVerdict],
    reference: &ReferenceLabels,
    policy: PositivePolicy,
) -> Result<Scored, ScoreError> {
    let mut seen = HashSet::new();
    for v in verdicts {
        if !seen.insert(v.transition_id.as_str()) {
            return Err(ScoreError::DuplicateVerdict(v.transition_id.clone()));
        }
    }
    let missing: Vec<String> = reference.labels.keys().filter(|k| !seen.contains(k.as_str())).cloned().collect();
    let extra: Vec<String> = verdicts
        .iter()
        .filter(|v| reference.get(&v.transition_id).is_none())
        .map(|v| v.transition_id.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(ScoreError::IdMismatch { missing, extra });
    }
    let mut counts = ConfusionCounts::default();
    let mut unparseable = 0;
    for v in verdicts {
        let label = reference.get(&v.transition_id).expect("checked above");
        if v.parse_status == ParseStatus::Unparseable {
            unparseable += 1;
        }
        counts.add(label.is_positive(), v.is_positive(policy));
    }
    Ok(Scored { counts, unparseable })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomBaseline {
    /// 1/3 in every column, from the three-category design.
    Constant,
    /// A uniform pick among the three categories per transition.
    Simulated { seed: u64 },
}

impl RandomBaseline {
    pub fn row(&self, reference: Option<&ReferenceLabels>) -> MetricsRow {
        match (self, reference) {
            (RandomBaseline::Simulated { seed }, Some(reference)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut counts = ConfusionCounts::default();
                for label in reference.labels.values() {
                    counts.add(label.is_positive(), rng.random_range(0..3) != 2);
                }
                MetricsRow::from_counts(RANDOM_ROW_NAME, "", counts, 0)
            }
            _ => {
                let third = 1.0 / 3.0;
                MetricsRow {
                    annotator_name: RANDOM_ROW_NAME.to_owned(),
                    config_name: String::new(),
                    f1: third,
                    accuracy: third,
                    precision: third,
                    recall: third,
                    counts: None,
                    unparseable: 0,
                }
            }
        }
    }
}

/// F1 descending, then accuracy descending, then name ascending.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        b.f1.total_cmp(&a.f1)
            .then_with(|| b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.annotator_name.cmp(&b.annotator_name))
            .then_with(|| a.config_name.cmp(&b.config_name))
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policy: PositivePolicy,
    pub rows: Vec<MetricsRow>,
    pub baseline: MetricsRow,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    annotator: String,
    config: String,
    f1: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    tp: Option<u64>,
    tn: Option<u64>,
    fp: Option<u64>,
    #[serde(rename = "fn")]
    fn_: Option<u64>,
    unparseable: u64,
}

impl From<&MetricsRow> for CsvRow {
    fn from(r: &MetricsRow) -> Self {
        Self {
            annotator: r.annotator_name.clone(),
            config: r.config_name.clone(),
            f1: r.f1,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            tp: r.counts.map(|c| c.tp),
            tn: r.counts.map(|c| c.tn),
            fp: r.counts.map(|c| c.fp),
            fn_: r.counts.map(|c| c.fn_),
            unparseable: r.unparseable,
        }
    }
}

impl From<CsvRow> for MetricsRow {
    fn from(r: CsvRow) -> Self {
        let counts = match (r.tp, r.tn, r.fp, r.fn_) {
            (Some(tp), Some(tn), Some(fp), Some(fn_)) => Some(ConfusionCounts { tp, tn, fp, fn_ }),
            _ => None,
        };
        Self {
            annotator_name: r.annotator,
            config_name: r.config,
            f1: r.f1,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            counts,
            unparseable: r.unparseable,
        }
    }
}

fn count_cell(c: Option<u64>) -> String {
    c.map_or_else(|| "-".to_owned(), |v| v.to_string())
}

impl Report {
    /// Sorts `rows` and appends the baseline.
    pub fn new(mut rows: Vec<MetricsRow>, baseline: MetricsRow, policy: PositivePolicy) -> Self {
        sort_rows(&mut rows);
        Self { policy, rows, baseline }
    }

    pub fn all_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().chain(std::iter::once(&self.baseline))
    }

    /// Aligned plain-text table, values rounded to two decimals.
    pub fn table(&self) -> String {
        let header = ["Annotator", "Config", "F1", "Accuracy", "Precision", "Recall", "TP", "TN", "FP", "FN"];
        let cells: Vec<Vec<String>> = self
            .all_rows()
            .map(|r| {
                let c = r.counts;
                vec![
                    r.annotator_name.clone(),
                    if r.config_name.is_empty() { "-".into() } else { r.config_name.clone() },
                    display2(r.f1),
                    display2(r.accuracy),
                    display2(r.precision),
                    display2(r.recall),
                    count_cell(c.map(|c| c.tp)),
                    count_cell(c.map(|c| c.tn)),
                    count_cell(c.map(|c| c.fp)),
                    count_cell(c.map(|c| c.fn_)),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| cells.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let mut line = |row: Vec<&str>| {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, s)| if i < 2 { format!("{s:<w$}", w = widths[i]) } else { format!("{s:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec());
        for r in &cells {
            line(r.iter().map(String::as_str).collect());
        }
        let _ = writeln!(out, "positive policy: {}", self.policy);
        out
    }

    /// CSV with full-precision values; the baseline row has empty counts.
    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.all_rows() {
            w.serialize(CsvRow::from(r)).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Parses rows written by [`Report::csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize::<CsvRow>().map(|r| r.map(MetricsRow::from)).collect()
}

/// Configuration name with the variant suffixes removed.
pub fn base_config(config_name: &str) -> String {
    config_name.replace("-nosep", "").replace("-action", "")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub annotator: String,
    pub base_config: String,
    pub variant_config: String,
    pub baseline_f1: f64,
    pub variant_f1: f64,
    pub delta_f1_variant_minus_baseline: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AblationError {
    #[error("annotator sets differ: only in baseline {only_baseline:?}, only in variant {only_variant:?}")]
    AnnotatorMismatch { only_baseline: Vec<String>, only_variant: Vec<String> },
    #[error("no baseline row for annotator {annotator:?} with configuration {base_config:?}")]
    MissingBaseline { annotator: String, base_config: String },
}

/// Per-annotator F1 change, variant minus baseline. The random baseline
/// row is ignored on both sides.
pub fn ablation_delta(baseline: &[MetricsRow], variant: &[MetricsRow]) -> Result<Vec<DeltaRow>, AblationError> {
    let names = |rows: &[MetricsRow]| -> Vec<String> {
        let mut v: Vec<String> =
            rows.iter().filter(|r| r.annotator_name != RANDOM_ROW_NAME).map(|r| r.annotator_name.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let (b, v) = (names(baseline), names(variant));
    if b != v {
        return Err(AblationError::AnnotatorMismatch {
            only_baseline: b.iter().filter(|n| !v.contains(n)).cloned().collect(),
            only_variant: v.iter().filter(|n| !b.contains(n)).cloned().collect(),
        });
    }
    let mut out = Vec::new();
    for row in variant.iter().filter(|r| r.annotator_name != RANDOM_ROW_NAME) {
        let base = base_config(&row.config_name);
        let Some(b) =
            baseline.iter().find(|b| b.annotator_name == row.annotator_name && base_config(&b.config_name) == base)
        else {
            return Err(AblationError::MissingBaseline { annotator: row.annotator_name.clone(), base_config: base });
        };
        out.push(DeltaRow {
            annotator: row.annotator_name.clone(),
            base_config: base,
            variant_config: row.config_name.clone(),
            baseline_f1: b.f1,
            variant_f1: row.f1,
            delta_f1_variant_minus_baseline: row.f1 - b.f1,
        });
    }
    out.sort_by(|a, b| a.annotator.cmp(&b.annotator).then_with(|| a.variant_config.cmp(&b.variant_config)));
    Ok(out)
}

pub fn delta_csv(rows: &[DeltaRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    if rows.is_empty() {
        w.write_record(["annotator", "base_config", "variant_config", "baseline_f1", "variant_f1", DELTA_COLUMN])
            .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}
