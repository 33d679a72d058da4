use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    TauVsAccuracy,
    KVsSpeedup,
    DifficultyVsSteps,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [Self::TauVsAccuracy, Self::KVsSpeedup, Self::DifficultyVsSteps];

    pub fn name(self) -> &'static str {
        match self {
            Self::TauVsAccuracy => "tau-vs-accuracy",
            Self::KVsSpeedup => "k-vs-speedup",
            Self::DifficultyVsSteps => "difficulty-vs-steps",
        }
    }

    /// `(series, x column, y column)` inside the metrics block.
    fn columns(self) -> (&'static str, &'static str, &'static str) {
        match self {
            Self::TauVsAccuracy => ("rows", "tau", "accuracy"),
            Self::KVsSpeedup => ("k_sweep", "k", "simulated_speedup"),
            Self::DifficultyVsSteps => ("rows", "difficulty", "steps_used"),
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown plot kind {s:?}")))
    }
}

/// Whitespace-separated `x y` rows sorted by `x`, one per line, using the
/// shortest decimal form that round-trips.
pub fn emit_plot_data(report: &RunReport, kind: PlotKind) -> Result<String> {
    let (series, xk, yk) = kind.columns();
    let missing = || Error::MissingSeries(format!("{series}[].{xk}, {series}[].{yk}"));
    let rows = report.metrics.get(series).and_then(Value::as_array).ok_or_else(missing)?;
    let mut points = rows
        .iter()
        .map(|r| Some((r.get(xk)?.as_f64()?, r.get(yk)?.as_f64()?)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(missing)?;
    if points.is_empty() {
        return Err(missing());
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points.iter().map(|(x, y)| format!("{x:?} {y:?}\n")).collect())
}
