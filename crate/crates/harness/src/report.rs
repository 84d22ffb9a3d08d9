use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use shortcut_probe::eval::MethodResult;
use shortcut_probe::models::Arch;

use crate::error::{HarnessError, Result};
use crate::pipeline::CellVerification;

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub corpus: String,
    pub shortcut: String,
    pub model: String,
    pub method: String,
    pub objective: String,
    pub variant: String,
    pub precision: String,
    pub mean_rank: String,
    pub n: usize,
    pub verified: bool,
}

pub const EVAL_COLUMNS: [&str; 10] = [
    "corpus",
    "shortcut",
    "model",
    "method",
    "objective",
    "variant",
    "precision",
    "mean_rank",
    "n",
    "verified",
];

impl EvalRow {
    pub fn new(corpus: &str, shortcut: &str, arch: Arch, r: &MethodResult, verified: bool) -> Self {
        Self {
            corpus: corpus.to_string(),
            shortcut: shortcut.to_string(),
            model: arch.name().to_string(),
            method: r.method.family().to_string(),
            objective: r.method.objective_label().to_string(),
            variant: r.method.variant(),
            precision: format!("{:.4}", r.precision),
            mean_rank: format!("{:.3}", r.mean_rank),
            n: r.n_examples,
            verified,
        }
    }

    pub fn method_id(&self) -> String {
        let mut parts = vec![self.method.as_str()];
        if self.objective != "-" && self.method != "lime" {
            parts.push(&self.objective);
        }
        if self.variant != "-" {
            parts.push(&self.variant);
        }
        parts.join("-")
    }

    pub fn precision_value(&self) -> f64 {
        self.precision.parse().unwrap_or(f64::NAN)
    }

    fn cells(&self) -> [String; 10] {
        [
            self.corpus.clone(),
            self.shortcut.clone(),
            self.model.clone(),
            self.method.clone(),
            self.objective.clone(),
            self.variant.clone(),
            self.precision.clone(),
            self.mean_rank.clone(),
            self.n.to_string(),
            self.verified.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub shortcut: String,
    pub model: String,
    pub method: String,
    /// Worst relative completeness gap of integrated gradients.
    pub max_completeness_gap: String,
    pub ridge_bumped: usize,
}

impl Diagnostic {
    pub fn new(shortcut: &str, arch: Arch, r: &MethodResult) -> Self {
        Self {
            shortcut: shortcut.to_string(),
            model: arch.name().to_string(),
            method: r.method.id(),
            max_completeness_gap: r
                .max_completeness_gap
                .map(|g| format!("{g:.3e}"))
                .unwrap_or_default(),
            ridge_bumped: r.ridge_bumped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMethod {
    pub shortcut: String,
    pub model: String,
    pub method: String,
    pub reason: String,
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::Other(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Other(e.to_string()))
}

pub fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Other(format!("reading CSV: {e}")))
}

fn table(out: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

/// The evaluation rows as a Markdown table, columns in CSV order.
pub fn rows_markdown(rows: &[EvalRow]) -> String {
    let mut out = String::from("# Salience evaluation\n\n");
    table(
        &mut out,
        &EVAL_COLUMNS,
        rows.iter().map(|r| r.cells().to_vec()),
    );
    out
}

pub fn verification_markdown(cells: &[CellVerification]) -> String {
    let mut out = String::from("# Verification\n\n");
    table(
        &mut out,
        &[
            "shortcut",
            "model",
            "shortcut model acc",
            "clean model acc",
            "result",
        ],
        cells.iter().map(|c| {
            vec![
                c.shortcut.clone(),
                c.arch.name().to_string(),
                format!("{:.3}", c.result.synthetic_acc_shortcut_model),
                format!("{:.3}", c.result.synthetic_acc_clean_model),
                if c.result.passed {
                    "pass".to_string()
                } else {
                    let failed: Vec<String> =
                        c.result.failed.iter().map(|t| t.to_string()).collect();
                    format!("FAIL: {}", failed.join(", "))
                },
            ]
        }),
    );
    out
}

/// Verification table plus one precision / mean-rank grid per shortcut.
pub fn summary_markdown(cells: &[CellVerification], rows: &[EvalRow]) -> String {
    let mut out = verification_markdown(cells);
    let mut by_shortcut: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        by_shortcut.entry(&r.shortcut).or_default().push(r);
    }
    for (shortcut, rows) in by_shortcut {
        let mut models: Vec<&str> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        for r in &rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
            if !methods.contains(&r.method_id()) {
                methods.push(r.method_id());
            }
        }
        let _ = write!(out, "\n## {shortcut}: precision / mean rank\n\n");
        let mut header = vec!["method"];
        header.extend(models.iter().copied());
        table(
            &mut out,
            &header,
            methods.iter().map(|m| {
                let mut line = vec![m.clone()];
                for model in &models {
                    let cell = rows
                        .iter()
                        .find(|r| r.model == *model && r.method_id() == *m)
                        .map(|r| format!("{} / {}", r.precision, r.mean_rank))
                        .unwrap_or_else(|| "-".into());
                    line.push(cell);
                }
                line
            }),
        );
    }
    out
}
