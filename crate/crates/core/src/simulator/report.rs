use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::run::SimulationMetrics;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    /// BLEU in points at each budget.
    pub bleu: Vec<f64>,
    pub average_revisions: f64,
    pub unk_count: usize,
}

impl ReportRow {
    /// Mean BLEU over the budgets that allow at least one revision.
    pub fn average(&self) -> f64 {
        let rest = &self.bleu[1.min(self.bleu.len() - 1)..];
        rest.iter().sum::<f64>() / rest.len() as f64
    }
}

/// Strategies side by side, each against its own zero-revision baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(metrics: &[SimulationMetrics]) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::Empty("metrics"));
        }
        let rows = metrics
            .iter()
            .map(|m| ReportRow {
                label: m.config.strategy.to_string(),
                bleu: m.bleu.iter().map(|b| 100.0 * b).collect(),
                average_revisions: m.average_revisions,
                unk_count: m.unk_count,
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fixed-width table: one column per budget, then `Ave.` over budgets
    /// 1.. and `Δ` of that average over budget 0.
    pub fn to_text(&self) -> String {
        let budgets = self.rows.iter().map(|r| r.bleu.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "strategy");
        for k in 0..budgets {
            let _ = write!(out, "{:>8}", format!("@{k}"));
        }
        let _ = writeln!(out, "{:>8}{:>8}{:>8}{:>6}", "Ave.", "Δ", "revs", "unk");
        for r in &self.rows {
            let _ = write!(out, "{:<10}", r.label);
            for k in 0..budgets {
                match r.bleu.get(k) {
                    Some(b) => {
                        let _ = write!(out, "{b:>8.2}");
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "-");
                    }
                }
            }
            let avg = r.average();
            let _ = writeln!(
                out,
                "{:>8.2}{:>+8.2}{:>8.2}{:>6}",
                avg,
                avg - r.bleu[0],
                r.average_revisions,
                r.unk_count
            );
        }
        out
    }
}
