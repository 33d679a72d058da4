//! Adaptive denoising-step budgets for a toy diffusion sampler.
//!
//! Targets are 1-D Gaussian mixtures, so the denoiser is analytic: at every
//! step the sampler uses the exact posterior mean and variance of `x0` given
//! `x_t`. Reduced budgets use an evenly spaced subsequence of the `T`-step
//! schedule. Quality is the exact 1-D Wasserstein-1 distance to direct
//! samples from the target.
//!
//! Noise is coupled across budgets: every sample draws one initial value
//! and one normal per fine timestep from its own stream, and a coarse step
//! spanning several fine timesteps uses their normalized sum. Runs with
//! different budgets on the same stream therefore differ by discretization,
//! not by independent Monte Carlo noise.

mod isotonic;
mod mixture;
mod schedule;
mod wasserstein;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use isotonic::isotonic_fit;
pub use mixture::{Component, MixtureSpec, MAX_DIFFICULTY};
pub use schedule::{NoiseSchedule, DEFAULT_STEPS};
pub use wasserstein::wasserstein1;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Budgets the minimal-step oracle scans, ascending.
pub const STEP_GRID: [usize; 18] = [
    1, 2, 3, 4, 5, 6, 8, 10, 13, 16, 20, 25, 32, 40, 50, 63, 79, 100,
];

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.5;
pub const DEFAULT_COUNT: usize = 10_000;

/// Ancestral sampling with `steps` denoising steps. Sample `j` uses stream
/// `rng.child(j)`; `rng` itself is not advanced.
pub fn generate(
    spec: &MixtureSpec,
    schedule: &NoiseSchedule,
    steps: usize,
    count: usize,
    rng: &Rng,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let timesteps = schedule.respaced(steps)?;
    let fine = schedule.steps();
    Ok((0..count as u64)
        .into_par_iter()
        .map(|j| {
            let mut r = rng.child(j);
            let mut x = r.normal();
            let noise: Vec<f64> = (0..fine).map(|_| r.normal()).collect();
            for (i, &t) in timesteps.iter().enumerate() {
                let next = timesteps.get(i + 1).copied();
                let ab = schedule.alpha_bar(t);
                let ab_next = next.map_or(1.0, |n| schedule.alpha_bar(n));
                // Fine timesteps (next, t] covered by this step.
                let lo = next.map_or(0, |n| n + 1);
                let z = noise[lo..=t].iter().sum::<f64>() / ((t + 1 - lo) as f64).sqrt();

                let (m, v) = spec.posterior(x, ab);
                let beta = 1.0 - ab / ab_next;
                let c_x0 = ab_next.sqrt() * beta / (1.0 - ab);
                let c_xt = (1.0 - beta).sqrt() * (1.0 - ab_next) / (1.0 - ab);
                let var = (1.0 - ab_next) / (1.0 - ab) * beta + c_x0 * c_x0 * v;
                x = c_x0 * m + c_xt * x + var.sqrt() * z;
            }
            x
        })
        .collect())
}

/// W1 between `samples` and `reference_count` direct draws from `spec`.
pub fn quality(samples: &[f64], spec: &MixtureSpec, reference_count: usize, rng: &mut Rng) -> Result<f64> {
    if samples.is_empty() || reference_count == 0 {
        return Err(Error::InvalidParameter("empty sample set".into()));
    }
    let reference = spec.sample(reference_count, rng);
    Ok(wasserstein1(samples, &reference))
}

/// Shared randomness for comparing budgets on one spec: a fixed reference
/// set (`rng.child(0)`) and a fixed generation stream (`rng.child(1)`).
#[derive(Debug, Clone)]
pub struct StepEvaluator<'a> {
    spec: &'a MixtureSpec,
    schedule: &'a NoiseSchedule,
    count: usize,
    reference: Vec<f64>,
    stream: Rng,
}

impl<'a> StepEvaluator<'a> {
    pub fn new(spec: &'a MixtureSpec, schedule: &'a NoiseSchedule, count: usize, rng: &Rng) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("count must be positive".into()));
        }
        spec.validate()?;
        Ok(Self {
            spec,
            schedule,
            count,
            reference: spec.sample(count, &mut rng.child(0)),
            stream: rng.child(1),
        })
    }

    pub fn samples(&self, steps: usize) -> Result<Vec<f64>> {
        generate(self.spec, self.schedule, steps, self.count, &self.stream)
    }

    pub fn w1(&self, steps: usize) -> Result<f64> {
        Ok(wasserstein1(&self.samples(steps)?, &self.reference))
    }
}

/// Smallest grid budget whose W1 is within `(1 + ε)` of the full-`T` W1;
/// `T` if none qualifies.
pub fn min_steps_oracle(
    spec: &MixtureSpec,
    schedule: &NoiseSchedule,
    epsilon: f64,
    count: usize,
    rng: &Rng,
) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be > 0")));
    }
    let eval = StepEvaluator::new(spec, schedule, count, rng)?;
    let t = schedule.steps();
    let bound = (1.0 + epsilon) * eval.w1(t)?;
    for s in STEP_GRID.iter().copied().filter(|&s| s < t) {
        if eval.w1(s)? <= bound {
            return Ok(s);
        }
    }
    Ok(t)
}

/// Monotone piecewise-linear map from difficulty to a step budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecommender {
    /// `(difficulty, steps)`, strictly increasing in difficulty and
    /// non-decreasing in steps.
    pub breakpoints: Vec<(f64, f64)>,
    pub max_steps: usize,
}

impl StepRecommender {
    /// Interpolated budget, rounded up and clamped to `[1, T]`. Flat beyond
    /// the outermost breakpoints.
    pub fn recommend(&self, difficulty: f64) -> usize {
        let bp = &self.breakpoints;
        let raw = if difficulty <= bp[0].0 {
            bp[0].1
        } else if difficulty >= bp[bp.len() - 1].0 {
            bp[bp.len() - 1].1
        } else {
            let i = bp.partition_point(|&(x, _)| x <= difficulty);
            let ((x0, y0), (x1, y1)) = (bp[i - 1], bp[i]);
            y0 + (y1 - y0) * (difficulty - x0) / (x1 - x0)
        };
        (raw.ceil() as usize).clamp(1, self.max_steps)
    }
}

/// Isotonic fit of oracle budgets against difficulty.
pub fn fit_recommender(labels: &[(f64, usize)], max_steps: usize) -> Result<StepRecommender> {
    if labels.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} labeled specs, need at least 5",
            labels.len()
        )));
    }
    let mut sorted: Vec<(f64, f64)> = labels.iter().map(|&(d, s)| (d, s as f64)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Tied difficulties collapse to one weighted point.
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for (d, s) in sorted {
        if xs.last() == Some(&d) {
            let k = ys.len() - 1;
            ys[k] = (ys[k] * ws[k] + s) / (ws[k] + 1.0);
            ws[k] += 1.0;
        } else {
            xs.push(d);
            ys.push(s);
            ws.push(1.0);
        }
    }
    let fitted = isotonic_fit(&ys, &ws);
    Ok(StepRecommender {
        breakpoints: xs.into_iter().zip(fitted).collect(),
        max_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityReport {
    pub steps_used: usize,
    pub w1: f64,
}

/// Generates with the recommended budget and scores the result.
pub fn adaptive_generate(
    spec: &MixtureSpec,
    recommender: &StepRecommender,
    schedule: &NoiseSchedule,
    count: usize,
    rng: &Rng,
) -> Result<(Vec<f64>, QualityReport)> {
    let steps = recommender.recommend(spec.difficulty()).min(schedule.steps());
    let eval = StepEvaluator::new(spec, schedule, count, rng)?;
    let samples = eval.samples(steps)?;
    let w1 = wasserstein1(&samples, &eval.reference);
    Ok((samples, QualityReport { steps_used: steps, w1 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub id: String,
    pub components: Vec<Component>,
}

impl WorkloadSpec {
    pub fn mixture(&self) -> Result<MixtureSpec> {
        MixtureSpec::new(self.components.clone())
            .map_err(|e| e.context(format!("workload spec {}", self.id)))
    }
}

/// Broad, unimodal or nearly unimodal target.
pub fn easy_spec(rng: &mut Rng) -> MixtureSpec {
    let mean = rng.uniform_range(-1.0, 1.0);
    let stddev = rng.uniform_range(0.8, 1.2);
    if rng.uniform() < 0.5 {
        return MixtureSpec::gaussian(mean, stddev);
    }
    let delta = rng.uniform_range(0.2, 0.5);
    MixtureSpec {
        components: vec![
            Component { weight: 0.5, mean: mean - delta, stddev },
            Component { weight: 0.5, mean: mean + delta, stddev },
        ],
    }
}

/// Three or four narrow, well-separated modes.
pub fn hard_spec(rng: &mut Rng) -> MixtureSpec {
    let k = 3 + rng.below(2);
    let raw: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.5, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut mean = -3.0;
    let components = raw
        .iter()
        .map(|w| {
            let c = Component {
                weight: w / total,
                mean,
                stddev: rng.uniform_range(0.08, 0.2),
            };
            mean += rng.uniform_range(1.5, 2.2);
            c
        })
        .collect();
    MixtureSpec { components }
}

/// `count` specs with `round(count · hard_fraction)` hard ones spread evenly.
pub fn default_workload(count: usize, hard_fraction: f64, rng: &mut Rng) -> Vec<WorkloadSpec> {
    (0..count)
        .map(|i| {
            let hard = ((i + 1) as f64 * hard_fraction).floor() > (i as f64 * hard_fraction).floor();
            let (kind, spec) = if hard {
                ("hard", hard_spec(rng))
            } else {
                ("easy", easy_spec(rng))
            };
            WorkloadSpec {
                id: format!("{kind}-{i:02}"),
                components: spec.components,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadRow {
    pub spec_id: String,
    pub difficulty: f64,
    pub steps_used: usize,
    pub w1: f64,
    pub baseline_w1: f64,
    pub throughput_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLabel {
    pub spec_id: String,
    pub difficulty: f64,
    pub oracle_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadReport {
    pub rows: Vec<WorkloadRow>,
    pub training: Vec<TrainingLabel>,
    pub recommender: StepRecommender,
    /// `T · |workload| / Σ steps_used`.
    pub throughput_ratio: f64,
    pub mean_w1: f64,
    pub mean_baseline_w1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadParams {
    pub epsilon: f64,
    pub train_frac: f64,
    pub count: usize,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            train_frac: DEFAULT_TRAIN_FRAC,
            count: DEFAULT_COUNT,
        }
    }
}

/// Labels a training split with the oracle, fits the recommender, then runs
/// every spec at its recommended budget and at the full `T` budget.
///
/// The split is stratified by difficulty: in difficulty order, spec `i`
/// trains iff `floor((i+1)·f) > floor(i·f)`. Spec `i` (workload order) uses
/// stream `rng.child(i)` for the oracle, the adaptive run and the baseline.
pub fn run_workload(
    workload: &[WorkloadSpec],
    schedule: &NoiseSchedule,
    params: WorkloadParams,
    rng: &Rng,
) -> Result<WorkloadReport> {
    if workload.is_empty() {
        return Err(Error::InvalidParameter("workload is empty".into()));
    }
    if !(params.train_frac > 0.0 && params.train_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_frac {} outside (0, 1]",
            params.train_frac
        )));
    }
    let specs: Vec<MixtureSpec> = workload.iter().map(WorkloadSpec::mixture).collect::<Result<_>>()?;
    let difficulties: Vec<f64> = specs.iter().map(MixtureSpec::difficulty).collect();
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| difficulties[a].total_cmp(&difficulties[b]).then(a.cmp(&b)));
    let f = params.train_frac;
    let mut train: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(rank, _)| ((rank + 1) as f64 * f).floor() > (*rank as f64 * f).floor())
        .map(|(_, &i)| i)
        .collect();
    train.sort_unstable();

    let training = train
        .iter()
        .map(|&i| {
            let steps = min_steps_oracle(&specs[i], schedule, params.epsilon, params.count, &rng.child(i as u64))?;
            Ok(TrainingLabel {
                spec_id: workload[i].id.clone(),
                difficulty: difficulties[i],
                oracle_steps: steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<(f64, usize)> = training.iter().map(|l| (l.difficulty, l.oracle_steps)).collect();
    let recommender = fit_recommender(&labels, schedule.steps())?;

    let t = schedule.steps();
    let rows = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let eval = StepEvaluator::new(spec, schedule, params.count, &rng.child(i as u64))?;
            let steps = recommender.recommend(difficulties[i]);
            Ok(WorkloadRow {
                spec_id: workload[i].id.clone(),
                difficulty: difficulties[i],
                steps_used: steps,
                w1: eval.w1(steps)?,
                baseline_w1: eval.w1(t)?,
                throughput_ratio: t as f64 / steps as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len() as f64;
    let total_steps: usize = rows.iter().map(|r| r.steps_used).sum();
    Ok(WorkloadReport {
        throughput_ratio: t as f64 * n / total_steps as f64,
        mean_w1: rows.iter().map(|r| r.w1).sum::<f64>() / n,
        mean_baseline_w1: rows.iter().map(|r| r.baseline_w1).sum::<f64>() / n,
        rows,
        training,
        recommender,
    })
}
