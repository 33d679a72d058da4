//! Two-stage classifier with an entropy gate, on synthetic 2-D data.
//!
//! The ground-truth boundary is the cubic `y = x³ - x` for `x ∈ [-1.5, 1.5]`.
//! "Easy" points sit far from it (vertically), where a straight line already
//! separates the classes; "hard" points sit in a thin band around it, where
//! only the cubic-feature stage can tell them apart.

use serde::Serialize;

use crate::dist::{entropy, ProbDist};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const X_RANGE: f64 = 1.5;
/// Hard points lie within this vertical distance of the boundary.
pub const HARD_BAND: f64 = 0.4;
/// Easy points lie at least this far (vertically) from the boundary.
pub const EASY_MARGIN: f64 = 0.6;
/// ... and at most `EASY_MARGIN + EASY_SPREAD`.
pub const EASY_SPREAD: f64 = 1.0;

pub const STAGE0_COST: f64 = 1.0;
pub const STAGE1_COST: f64 = 4.0;
pub const TRAIN_ITERATIONS: usize = 500;
pub const TRAIN_STEP: f64 = 0.1;

/// `0, 0.05, ..., 0.75`.
pub fn default_taus() -> Vec<f64> {
    (0..=15).map(|i| i as f64 * 0.05).collect()
}

pub fn boundary(x: f64) -> f64 {
    x * x * x - x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
    pub label: u8,
}

impl Point2 {
    /// Signed vertical offset from the boundary.
    pub fn offset(&self) -> f64 {
        self.y - boundary(self.x)
    }
}

/// Labeled points with exactly balanced classes (±1). Class 1 lies above
/// the boundary. `round(count · hard_fraction)` points are hard.
pub fn gen_dataset(count: usize, hard_fraction: f64, rng: &mut Rng) -> Result<Vec<Point2>> {
    if count < 10 {
        return Err(Error::InvalidParameter(format!("count {count} must be >= 10")));
    }
    if !(0.0..=1.0).contains(&hard_fraction) {
        return Err(Error::InvalidParameter(format!(
            "hard_fraction {hard_fraction} outside [0, 1]"
        )));
    }
    let n_hard = (count as f64 * hard_fraction).round() as usize;
    let mut points: Vec<Point2> = (0..count)
        .map(|i| {
            let label = (i % 2) as u8;
            let x = rng.uniform_range(-X_RANGE, X_RANGE);
            let magnitude = if i < n_hard {
                rng.uniform_range(0.0, HARD_BAND)
            } else {
                rng.uniform_range(EASY_MARGIN, EASY_MARGIN + EASY_SPREAD)
            };
            let sign = if label == 1 { 1.0 } else { -1.0 };
            Point2 {
                x,
                y: boundary(x) + sign * magnitude,
                label,
            }
        })
        .collect();
    for i in (1..points.len()).rev() {
        points.swap(i, rng.below(i + 1));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    /// `(x, y)`
    Linear,
    /// `(x, y, x², xy, y², x³, x²y, xy², y³)`
    Cubic,
}

impl FeatureMap {
    pub fn apply(self, p: &Point2) -> Vec<f64> {
        let (x, y) = (p.x, p.y);
        match self {
            FeatureMap::Linear => vec![x, y],
            FeatureMap::Cubic => vec![
                x,
                y,
                x * x,
                x * y,
                y * y,
                x * x * x,
                x * x * y,
                x * y * y,
                y * y * y,
            ],
        }
    }
}

/// Logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStage {
    pub features: FeatureMap,
    pub cost_units: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl ExitStage {
    /// Full-batch gradient descent on the mean log loss from zero weights.
    pub fn train(
        data: &[Point2],
        features: FeatureMap,
        cost_units: f64,
        iterations: usize,
        step: f64,
    ) -> Self {
        let raw: Vec<Vec<f64>> = data.iter().map(|p| features.apply(p)).collect();
        let dim = raw[0].len();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = raw.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| (0..dim).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();

        let mut weights = vec![0.0; dim];
        let mut bias = 0.0;
        for _ in 0..iterations {
            let mut grad = vec![0.0; dim];
            let mut grad_b = 0.0;
            for (x, p) in xs.iter().zip(data) {
                let z = bias + dot(&weights, x);
                let err = sigmoid(z) - f64::from(p.label);
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += err * xi;
                }
                grad_b += err;
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= step * g / n;
            }
            bias -= step * grad_b / n;
        }
        Self {
            features,
            cost_units,
            mean,
            scale,
            weights,
            bias,
        }
    }

    /// `[P(class 0), P(class 1)]`.
    pub fn predict(&self, p: &Point2) -> ProbDist {
        let x: Vec<f64> = self
            .features
            .apply(p)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect();
        let p1 = sigmoid(self.bias + dot(&self.weights, &x));
        ProbDist::new(vec![1.0 - p1, p1]).expect("sigmoid output is a distribution")
    }

    pub fn weights(&self) -> (&[f64], f64) {
        (&self.weights, self.bias)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiExitNet {
    pub stages: Vec<ExitStage>,
    /// Entropy gate in nats; a non-final stage answers iff its entropy is
    /// strictly below `tau`.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitDecision {
    pub label: u8,
    pub exit_index: usize,
    pub cost_spent: f64,
}

impl MultiExitNet {
    pub fn new(stages: Vec<ExitStage>, tau: f64) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::InvalidParameter("need at least two stages".into()));
        }
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau {tau} must be >= 0")));
        }
        Ok(Self { stages, tau })
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.stages.clone(), tau)
    }

    pub fn full_cost(&self) -> f64 {
        self.stages.iter().map(|s| s.cost_units).sum()
    }
}

/// Stage 0: linear logistic regression (cost 1). Stage 1: cubic-feature
/// logistic regression (cost 4). Gate starts closed (`tau = 0`).
pub fn train_stages(data: &[Point2]) -> Result<MultiExitNet> {
    if data.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least 100",
            data.len()
        )));
    }
    for class in [0u8, 1] {
        if !data.iter().any(|p| p.label == class) {
            return Err(Error::DegenerateData(format!("class {class} is absent")));
        }
    }
    let stages = vec![
        ExitStage::train(data, FeatureMap::Linear, STAGE0_COST, TRAIN_ITERATIONS, TRAIN_STEP),
        ExitStage::train(data, FeatureMap::Cubic, STAGE1_COST, TRAIN_ITERATIONS, TRAIN_STEP),
    ];
    MultiExitNet::new(stages, 0.0)
}

pub fn infer_with_exit(net: &MultiExitNet, p: &Point2) -> ExitDecision {
    let mut cost_spent = 0.0;
    let last = net.stages.len() - 1;
    for (index, stage) in net.stages.iter().enumerate() {
        cost_spent += stage.cost_units;
        let dist = stage.predict(p);
        if index == last || entropy(&dist) < net.tau {
            return ExitDecision {
                label: dist.argmax().index() as u8,
                exit_index: index,
                cost_spent,
            };
        }
    }
    unreachable!("the final stage always answers")
}

/// Accuracy of one stage used alone.
pub fn stage_accuracy(net: &MultiExitNet, stage: usize, data: &[Point2]) -> f64 {
    let correct = data
        .iter()
        .filter(|p| net.stages[stage].predict(p).argmax().index() as u8 == p.label)
        .count();
    correct as f64 / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub accuracy: f64,
    pub mean_cost: f64,
    pub early_exit_fraction: f64,
    pub speedup: f64,
}

pub fn sweep(net: &MultiExitNet, data: &[Point2], taus: &[f64]) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter("tau list is empty".into()));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("tau list must be sorted ascending".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    let full = net.full_cost();
    let n = data.len() as f64;
    taus.iter()
        .map(|&tau| {
            let gated = net.with_tau(tau)?;
            let (mut correct, mut cost, mut early) = (0usize, 0.0, 0usize);
            for p in data {
                let d = infer_with_exit(&gated, p);
                correct += usize::from(d.label == p.label);
                cost += d.cost_spent;
                early += usize::from(d.exit_index + 1 < net.stages.len());
            }
            let mean_cost = cost / n;
            Ok(SweepRow {
                tau,
                accuracy: correct as f64 / n,
                mean_cost,
                early_exit_fraction: early as f64 / n,
                speedup: full / mean_cost,
            })
        })
        .collect()
}
