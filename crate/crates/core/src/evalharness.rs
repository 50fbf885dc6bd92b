//! Linear-probe evaluation of a training set against an IID dev set and any
//! number of out-of-distribution sets, plus table rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aflite::PROBES;
use crate::corpus::Dataset;
use crate::embeddings::EmbeddingMatrix;
use crate::linmodels::{self, LinearModel, ModelError, ModelKind, TrainConfig};

pub const BANNER: &str = "Linear-probe accuracies; not comparable to fine-tuned encoder results";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation set {0:?} is empty")]
    EmptyEvalSet(String),
    #[error("label {label:?} in {set:?} is not a training label")]
    LabelMismatch { set: String, label: String },
    #[error("{missing} ids in {set:?} have no feature row (first: {first:?})")]
    CoverageGap { set: String, missing: usize, first: String },
    #[error("feature matrices disagree on dimension: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("report columns differ: expected {expected:?}, found {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Several embedding matrices searched in order, e.g. one per file.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    mats: Vec<EmbeddingMatrix>,
}

impl FeatureSet {
    pub fn new(mats: Vec<EmbeddingMatrix>) -> Result<Self, EvalError> {
        if let Some(first) = mats.first() {
            if let Some(bad) = mats.iter().find(|m| m.dim() != first.dim()) {
                return Err(EvalError::DimMismatch(first.dim(), bad.dim()));
            }
        }
        Ok(Self { mats })
    }

    pub fn dim(&self) -> usize {
        self.mats.first().map_or(0, EmbeddingMatrix::dim)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.mats.iter().find_map(|m| m.get(id))
    }

    fn matrix(&self, set: &str, d: &Dataset) -> Result<Array2<f64>, EvalError> {
        let mut missing = d.ids().filter(|id| self.get(id).is_none());
        if let Some(first) = missing.next() {
            return Err(EvalError::CoverageGap {
                set: set.to_owned(),
                missing: 1 + missing.count(),
                first: first.to_owned(),
            });
        }
        let ids: Vec<&str> = d.ids().collect();
        Ok(Array2::from_shape_fn((d.len(), self.dim()), |(i, j)| {
            f64::from(self.get(ids[i]).expect("coverage checked")[j])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub train_name: String,
    pub train_size: usize,
    /// The probe whose scores are reported.
    pub probe: ModelKind,
    pub iid_accuracy: f64,
    pub ood: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// OOD column names in display order. `"group/name"` renders under a
    /// group heading.
    pub eval_names: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(eval_names: Vec<String>) -> Self {
        Self {
            eval_names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: EvalRow) -> Result<(), EvalError> {
        let mut expected = self.eval_names.clone();
        expected.sort();
        let found: Vec<String> = row.ood.keys().cloned().collect();
        if expected != found {
            return Err(EvalError::ColumnMismatch { expected, found });
        }
        self.rows.push(row);
        Ok(())
    }
}

fn label_indices(set: &str, d: &Dataset, labels: &[String]) -> Result<Vec<usize>, EvalError> {
    d.samples()
        .iter()
        .map(|s| {
            labels
                .iter()
                .position(|l| *l == s.label)
                .ok_or_else(|| EvalError::LabelMismatch {
                    set: set.to_owned(),
                    label: s.label.clone(),
                })
        })
        .collect()
}

fn scored(model: &LinearModel, x: &Array2<f64>, y: &[usize]) -> Result<f64, EvalError> {
    Ok(linmodels::accuracy(&linmodels::predict(model, x.view())?, y))
}

/// Trains both probes on `train`, keeps the one with the higher dev
/// accuracy (logistic regression on ties) and scores it on every set.
pub fn evaluate(
    train_name: &str,
    train: &Dataset,
    dev: &Dataset,
    ood: &[(String, Dataset)],
    features: &FeatureSet,
    probe: &TrainConfig,
) -> Result<EvalRow, EvalError> {
    let labels = &train.schema.labels;
    for (name, d) in std::iter::once(("dev", dev)).chain(ood.iter().map(|(n, d)| (n.as_str(), d))) {
        if d.is_empty() {
            return Err(EvalError::EmptyEvalSet(name.to_owned()));
        }
    }
    let train_x = features.matrix(train_name, train)?;
    let train_y = label_indices(train_name, train, labels)?;
    let dev_x = features.matrix("dev", dev)?;
    let dev_y = label_indices("dev", dev, labels)?;
    let ood_xy: Vec<(Array2<f64>, Vec<usize>)> = ood
        .iter()
        .map(|(name, d)| Ok((features.matrix(name, d)?, label_indices(name, d, labels)?)))
        .collect::<Result<_, EvalError>>()?;

    let models: Vec<LinearModel> = PROBES
        .par_iter()
        .map(|&kind| linmodels::train(kind, train_x.view(), &train_y, labels, probe))
        .collect::<Result<_, _>>()?;
    let dev_acc: Vec<f64> = models
        .iter()
        .map(|m| scored(m, &dev_x, &dev_y))
        .collect::<Result<_, _>>()?;
    let best = if dev_acc[1] > dev_acc[0] { 1 } else { 0 };
    let model = &models[best];
    let ood_acc: Vec<f64> = ood_xy
        .par_iter()
        .map(|(x, y)| scored(model, x, y))
        .collect::<Result<_, _>>()?;
    Ok(EvalRow {
        train_name: train_name.to_owned(),
        train_size: train.len(),
        probe: model.kind,
        iid_accuracy: dev_acc[best],
        ood: ood.iter().map(|(n, _)| n.clone()).zip(ood_acc).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Markdown,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(TableFormat::Text),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "json" => Ok(TableFormat::Json),
            other => Err(format!("unknown format {other:?} (text, markdown, json)")),
        }
    }
}

/// Accuracy as a percentage with at most two decimals, trailing zeros dropped.
pub fn format_accuracy(acc: f64) -> String {
    let s = format!("{:.2}", acc * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_owned()
    } else {
        s.to_owned()
    }
}

/// Sizes of at least 100000 that are whole thousands render as `"550k"`.
pub fn format_size(n: usize) -> String {
    if n >= 100_000 && n.is_multiple_of(1000) {
        format!("{}k", n / 1000)
    } else {
        n.to_string()
    }
}

fn split_name(name: &str) -> (Option<&str>, &str) {
    match name.split_once('/') {
        Some((g, s)) => (Some(g), s),
        None => (None, name),
    }
}

fn flat_header(name: &str) -> String {
    match split_name(name) {
        (Some(g), s) => format!("{g} {s}"),
        (None, s) => s.to_owned(),
    }
}

fn cells(r: &EvalReport) -> Vec<Vec<String>> {
    r.rows
        .iter()
        .map(|row| {
            let mut out = vec![format_size(row.train_size), format_accuracy(row.iid_accuracy)];
            out.extend(r.eval_names.iter().map(|n| format_accuracy(row.ood[n])));
            out
        })
        .collect()
}

fn render_text(r: &EvalReport) -> String {
    // Two header lines: OOD group headings over their columns, then column names.
    let mut top = vec![String::new(); 2];
    let mut bottom = vec!["Size".to_owned(), "IID".to_owned()];
    let mut groups: Vec<(usize, usize, String)> = Vec::new();
    for (i, name) in r.eval_names.iter().enumerate() {
        let col = i + 2;
        let (group, sub) = split_name(name);
        let heading = group.map_or_else(|| "OOD".to_owned(), |g| format!("OOD {g}"));
        match groups.last_mut() {
            Some((_, end, h)) if *h == heading && group.is_some() && *end + 1 == col => *end = col,
            _ => groups.push((col, col, heading)),
        }
        top.push(String::new());
        bottom.push(sub.to_owned());
    }
    let body = cells(r);
    let mut widths: Vec<usize> = bottom.iter().map(String::len).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    for (start, end, heading) in &groups {
        let span: usize = widths[*start..=*end].iter().sum::<usize>() + 2 * (end - start);
        if heading.len() > span {
            widths[*end] += heading.len() - span;
        }
        top[*start] = heading.clone();
    }

    let mut out = String::new();
    let _ = writeln!(out, "{BANNER}");
    let mut line = String::new();
    let mut col = 0;
    while col < widths.len() {
        let group = groups.iter().find(|(s, _, _)| *s == col);
        let (text, end) = match group {
            Some((s, e, h)) => (h.as_str(), *e.max(s)),
            None => (top[col].as_str(), col),
        };
        let span: usize = widths[col..=end].iter().sum::<usize>() + 2 * (end - col);
        let _ = write!(line, "{text:<span$}  ");
        col = end + 1;
    }
    out.push_str(line.trim_end());
    out.push('\n');
    push_row(&mut out, &bottom, &widths);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    push_row(&mut out, &rule, &widths);
    for row in &body {
        push_row(&mut out, row, &widths);
    }
    out
}

fn push_row(out: &mut String, row: &[String], widths: &[usize]) {
    let line: Vec<String> = row.iter().zip(widths).map(|(c, &w)| format!("{c:<w$}")).collect();
    out.push_str(line.join("  ").trim_end());
    out.push('\n');
}

fn render_markdown(r: &EvalReport) -> String {
    let mut header = vec!["Size".to_owned(), "IID".to_owned()];
    header.extend(r.eval_names.iter().map(|n| flat_header(n)));
    let mut out = format!("_{BANNER}_\n\n");
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in cells(r) {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

/// Renders columns Size, IID, then the OOD sets in report order.
pub fn render_table(r: &EvalReport, format: TableFormat) -> String {
    match format {
        TableFormat::Text => render_text(r),
        TableFormat::Markdown => render_markdown(r),
        TableFormat::Json => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
    }
}
