//! Overlap metrics and per-condition aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Condition;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Pixel-level confusion counts of a binary prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &Tensor4, gt: &Tensor4) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::config(format!(
            "prediction {} and ground truth {} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::validation("confusion needs binary masks"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`; defined as 1 when both masks are empty.
pub fn dsc(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

/// `tp / (tp + fp + fn)`; defined as 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let den = c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        c.tp as f64 / den as f64
    }
}

/// Scores of one evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub condition: Condition,
    pub dsc: f64,
    pub iou: f64,
}

impl SampleScore {
    pub fn from_masks(
        id: &str,
        condition: Condition,
        pred: &Tensor4,
        gt: &Tensor4,
    ) -> Result<Self> {
        let c = confusion(pred, gt)?;
        Ok(Self {
            id: id.to_string(),
            condition,
            dsc: dsc(&c),
            iou: iou(&c),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Display label (`5/6Nx`, ..., `All`).
    pub label: String,
    pub n: usize,
    /// Mean DSC in percent.
    pub dsc: f64,
    /// Mean IoU in percent.
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: Option<u64>,
}

/// Per-condition and overall mean scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One row per condition that has samples, in [`Condition`] order.
    pub conditions: Vec<(Condition, ReportRow)>,
    pub overall: ReportRow,
    pub metadata: RunMetadata,
}

fn row(label: &str, scores: &[&SampleScore]) -> ReportRow {
    let n = scores.len();
    // summation in sorted id order keeps the result independent of input order
    let mut sorted: Vec<_> = scores.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let (d, i) = sorted
        .iter()
        .fold((0.0, 0.0), |(d, i), s| (d + s.dsc, i + s.iou));
    ReportRow {
        label: label.to_string(),
        n,
        dsc: if n == 0 { 0.0 } else { 100.0 * d / n as f64 },
        iou: if n == 0 { 0.0 } else { 100.0 * i / n as f64 },
    }
}

/// Aggregates sample scores; "All" is the mean over samples, not over rows.
pub fn aggregate(scores: &[SampleScore], metadata: RunMetadata) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::validation("cannot aggregate an empty score list"));
    }
    let mut groups: BTreeMap<Condition, Vec<&SampleScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.condition).or_default().push(s);
    }
    let conditions = groups
        .iter()
        .map(|(c, v)| (*c, row(c.label(), v)))
        .collect();
    let all: Vec<&SampleScore> = scores.iter().collect();
    Ok(MetricsReport {
        conditions,
        overall: row("All", &all),
        metadata,
    })
}

impl MetricsReport {
    pub fn row_for(&self, c: Condition) -> Option<&ReportRow> {
        self.conditions
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, r)| r)
    }

    /// Column labels: the four kidney conditions, any extra condition
    /// present, then `All`.
    pub fn columns(&self) -> Vec<(String, Option<&ReportRow>)> {
        let mut cols: Vec<(String, Option<&ReportRow>)> = Condition::KIDNEY
            .iter()
            .map(|c| (c.label().to_string(), self.row_for(*c)))
            .collect();
        for (c, r) in &self.conditions {
            if !Condition::KIDNEY.contains(c) {
                cols.push((c.label().to_string(), Some(r)));
            }
        }
        cols.push(("All".to_string(), Some(&self.overall)));
        cols
    }

    /// Fixed-width text table with one column per condition, titled `method`.
    pub fn render_table(&self, method: &str) -> String {
        let cols = self.columns();
        let first = "Metric".len().max("DSC (%)".len());
        let width = cols.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
        let line = |label: &str, cells: &[String]| {
            let mut s = format!("{label:<first$}");
            for c in cells {
                let _ = write!(s, " | {c:>width$}");
            }
            s
        };
        let cells = |f: &dyn Fn(&ReportRow) -> String| -> Vec<String> {
            cols.iter()
                .map(|(_, r)| r.map_or_else(|| "-".to_string(), f))
                .collect()
        };
        let labels: Vec<String> = cols.iter().map(|(l, _)| l.clone()).collect();
        let header = line("Metric", &labels);
        let mut out = String::new();
        let _ = writeln!(out, "{method}");
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        let _ = writeln!(
            out,
            "{}",
            line("DSC (%)", &cells(&|r| format!("{:.2}", r.dsc)))
        );
        let _ = writeln!(
            out,
            "{}",
            line("IoU (%)", &cells(&|r| format!("{:.2}", r.iou)))
        );
        let _ = writeln!(out, "{}", line("n", &cells(&|r| r.n.to_string())));
        if let Some(h) = &self.metadata.config_hash {
            let _ = writeln!(out, "config hash: {h}");
        }
        out
    }

    /// Machine-readable report: `condition, n, dsc_mean, iou_mean` (percent).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(s) = self.metadata.seed {
            let _ = writeln!(out, "# seed={s}");
        }
        if let Some(h) = &self.metadata.config_hash {
            let _ = writeln!(out, "# config_hash={h}");
        }
        if let Some(t) = self.metadata.timestamp {
            let _ = writeln!(out, "# timestamp={t}");
        }
        out.push_str("condition\tn\tdsc_mean\tiou_mean\n");
        for (_, r) in &self.conditions {
            let _ = writeln!(out, "{}\t{}\t{:.2}\t{:.2}", r.label, r.n, r.dsc, r.iou);
        }
        let r = &self.overall;
        let _ = writeln!(out, "{}\t{}\t{:.2}\t{:.2}", r.label, r.n, r.dsc, r.iou);
        out
    }
}
