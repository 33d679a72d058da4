//! Threshold routing between a cheap and an expensive model.
//!
//! The cheap model doubles as the probe: a prompt's difficulty is the mean
//! entropy of its next-token distributions over the prompt prefixes, and
//! prompts harder than `theta` go to the expensive model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::entropy;
use crate::error::{Error, Result};
use crate::model::{check_context, SequenceModel, TokenId};
use crate::rng::Rng;
use crate::specdec::autoregressive_decode;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn default_thetas() -> Vec<f64> {
    vec![-1.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, f64::INFINITY]
}

#[derive(Clone, Copy)]
pub struct RoutePolicy<'a> {
    pub theta: f64,
    pub probe: &'a dyn SequenceModel,
}

impl<'a> RoutePolicy<'a> {
    pub fn new(theta: f64, probe: &'a dyn SequenceModel) -> Result<Self> {
        if theta.is_nan() {
            return Err(Error::InvalidParameter("theta is NaN".into()));
        }
        Ok(Self { theta, probe })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub prompt: Vec<TokenId>,
    pub reference_continuation: Vec<TokenId>,
}

impl WorkloadItem {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if self.reference_continuation.is_empty() {
            return Err(Error::InvalidParameter("reference continuation is empty".into()));
        }
        check_context(&self.prompt, vocab_size)?;
        check_context(&self.reference_continuation, vocab_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteReport {
    pub total_cost: f64,
    pub mean_quality: f64,
    pub fraction_large: f64,
}

/// Mean probe entropy over prompt prefixes of length `1..=len`, in nats.
pub fn difficulty(prompt: &[TokenId], probe: &dyn SequenceModel) -> Result<f64> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let dists = probe.predict_prefixes(prompt, 1)?;
    Ok(dists.iter().map(entropy).sum::<f64>() / dists.len() as f64)
}

/// Cost of probing a prompt: one probe call per prefix.
pub fn probe_cost(prompt: &[TokenId], probe: &dyn SequenceModel) -> f64 {
    prompt.len() as f64 * probe.cost_units()
}

pub fn route(policy: &RoutePolicy<'_>, item: &WorkloadItem) -> Result<Choice> {
    Ok(decide(policy.theta, difficulty(&item.prompt, policy.probe)?))
}

fn decide(theta: f64, difficulty: f64) -> Choice {
    if difficulty > theta {
        Choice::Large
    } else {
        Choice::Small
    }
}

/// Mean log-likelihood per token of the reference continuation.
pub fn continuation_quality(model: &dyn SequenceModel, item: &WorkloadItem) -> Result<f64> {
    let mut full = item.prompt.clone();
    full.extend_from_slice(&item.reference_continuation);
    let dists = model.predict_prefixes(&full, item.prompt.len())?;
    let total: f64 = item
        .reference_continuation
        .iter()
        .zip(&dists)
        .map(|(&tok, d)| d.prob(tok).max(LOG_FLOOR).ln())
        .sum();
    Ok(total / item.reference_continuation.len() as f64)
}

/// Per-item quantities that do not depend on `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemScore {
    pub difficulty: f64,
    pub probe_cost: f64,
    pub small_quality: f64,
    pub large_quality: f64,
    pub small_cost: f64,
    pub large_cost: f64,
}

/// Scores every item under both models, probing with `probe`. Items are scored in parallel and
/// returned in workload order.
pub fn score_workload(
    workload: &[WorkloadItem],
    probe: &dyn SequenceModel,
    small: &dyn SequenceModel,
    large: &dyn SequenceModel,
) -> Result<Vec<ItemScore>> {
    if workload.is_empty() {
        return Err(Error::InvalidParameter("workload is empty".into()));
    }
    if small.vocab_size() != large.vocab_size() {
        return Err(Error::InvalidParameter(format!(
            "small vocab {} != large vocab {}",
            small.vocab_size(),
            large.vocab_size()
        )));
    }
    workload
        .par_iter()
        .map(|item| {
            item.validate(small.vocab_size())?;
            let n = item.reference_continuation.len() as f64;
            Ok(ItemScore {
                difficulty: difficulty(&item.prompt, probe)?,
                probe_cost: probe_cost(&item.prompt, probe),
                small_quality: continuation_quality(small, item)?,
                large_quality: continuation_quality(large, item)?,
                small_cost: n * small.cost_units(),
                large_cost: n * large.cost_units(),
            })
        })
        .collect()
}

/// Aggregates a report from per-item choices. Sums run in workload order.
pub fn report_from<F: Fn(&ItemScore) -> Choice>(scores: &[ItemScore], choose: F) -> RouteReport {
    let mut total_cost = 0.0;
    let mut quality = 0.0;
    let mut large = 0usize;
    for s in scores {
        total_cost += s.probe_cost;
        match choose(s) {
            Choice::Small => {
                total_cost += s.small_cost;
                quality += s.small_quality;
            }
            Choice::Large => {
                total_cost += s.large_cost;
                quality += s.large_quality;
                large += 1;
            }
        }
    }
    let n = scores.len() as f64;
    RouteReport {
        total_cost,
        mean_quality: quality / n,
        fraction_large: large as f64 / n,
    }
}

pub fn evaluate(
    policy: &RoutePolicy<'_>,
    workload: &[WorkloadItem],
    small: &dyn SequenceModel,
    large: &dyn SequenceModel,
) -> Result<RouteReport> {
    let scores = score_workload(workload, policy.probe, small, large)?;
    let theta = policy.theta;
    Ok(report_from(&scores, |s| decide(theta, s.difficulty)))
}

/// Every item sent to one model. The probe is still billed.
pub fn evaluate_forced(
    choice: Choice,
    workload: &[WorkloadItem],
    small: &dyn SequenceModel,
    large: &dyn SequenceModel,
) -> Result<RouteReport> {
    let scores = score_workload(workload, small, small, large)?;
    Ok(report_from(&scores, |_| choice))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub fraction_large: f64,
    pub total_cost: f64,
    pub mean_quality: f64,
}

/// One row per theta, in the given order. Items are scored once.
pub fn sweep(
    thetas: &[f64],
    workload: &[WorkloadItem],
    small: &dyn SequenceModel,
    large: &dyn SequenceModel,
) -> Result<Vec<SweepRow>> {
    if let Some(t) = thetas.iter().find(|t| t.is_nan()) {
        return Err(Error::InvalidParameter(format!("theta {t}")));
    }
    let scores = score_workload(workload, small, small, large)?;
    Ok(thetas
        .iter()
        .map(|&theta| {
            let r = report_from(&scores, |s| decide(theta, s.difficulty));
            SweepRow {
                theta,
                fraction_large: r.fraction_large,
                total_cost: r.total_cost,
                mean_quality: r.mean_quality,
            }
        })
        .collect())
}

/// Items whose continuations are sampled from `source` after a random
/// prompt of length `prompt_len.0..=prompt_len.1`. Item `i` uses
/// `rng.child(i)`.
pub fn gen_workload(
    source: &dyn SequenceModel,
    count: usize,
    prompt_len: (usize, usize),
    continuation_len: usize,
    rng: &Rng,
) -> Result<Vec<WorkloadItem>> {
    let (lo, hi) = prompt_len;
    if lo == 0 || hi < lo || continuation_len == 0 {
        return Err(Error::InvalidParameter(format!(
            "prompt lengths {lo}..={hi}, continuation {continuation_len}"
        )));
    }
    (0..count as u64)
        .map(|i| {
            let mut r = rng.child(i);
            let len = lo + r.below(hi - lo + 1);
            let prompt: Vec<TokenId> = (0..len)
                .map(|_| TokenId::from_index(r.below(source.vocab_size())))
                .collect();
            let mut meter = crate::model::CostMeter::new();
            let reference_continuation =
                autoregressive_decode(source, &prompt, continuation_len, &mut r, &mut meter)?;
            Ok(WorkloadItem { prompt, reference_continuation })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ProbDist;
    use crate::model::{tokens, TableModel};

    fn item(p: &[u32], c: &[u32]) -> WorkloadItem {
        WorkloadItem { prompt: tokens(p), reference_continuation: tokens(c) }
    }

    #[test]
    fn difficulty_of_extreme_probes() {
        let one_hot = TableModel::from_fn(4, 1, 1.0, |w| ProbDist::one_hot(4, (w[0].index() + 1) % 4)).unwrap();
        assert_eq!(difficulty(&tokens(&[0, 1, 2]), &one_hot).unwrap(), 0.0);
        let uniform = TableModel::uniform(4, 1, 1.0).unwrap();
        assert!((difficulty(&tokens(&[3, 3]), &uniform).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(difficulty(&[], &uniform), Err(Error::EmptyPrompt)));
    }

    #[test]
    fn difficulty_is_mean_prefix_entropy() {
        let rows = [[0.5, 0.5, 0.0, 0.0], [0.9, 0.05, 0.05, 0.0], [0.25; 4], [1.0, 0.0, 0.0, 0.0]];
        let m = TableModel::from_fn(4, 1, 1.0, |w| ProbDist::new(rows[w[0].index()].to_vec()).unwrap()).unwrap();
        let prompt = tokens(&[1, 0, 2]);
        let h = |r: &[f64]| -r.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        let expected = (h(&rows[1]) + h(&rows[0]) + h(&rows[2])) / 3.0;
        assert!((difficulty(&prompt, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let uniform = TableModel::uniform(4, 1, 1.0).unwrap();
        let it = item(&[0, 1], &[2]);
        let at = |theta| route(&RoutePolicy::new(theta, &uniform).unwrap(), &it).unwrap();
        assert_eq!(at(f64::INFINITY), Choice::Small);
        assert_eq!(at(-1.0), Choice::Large);
        assert_eq!(at(2f64.ln()), Choice::Large);
        assert_eq!(at(4f64.ln()), Choice::Small);
        assert!(RoutePolicy::new(f64::NAN, &uniform).is_err());
    }

    #[test]
    fn identical_models_give_flat_quality() {
        let m = TableModel::random(4, 1, 1.0, 0.0, 1.0, &mut Rng::new(3)).unwrap();
        let work = gen_workload(&m, 20, (1, 4), 5, &Rng::new(4)).unwrap();
        let rows = sweep(&default_thetas(), &work, &m, &m).unwrap();
        for r in &rows {
            assert_eq!(r.mean_quality, rows[0].mean_quality);
            assert_eq!(r.total_cost, rows[0].total_cost);
        }
    }

    #[test]
    fn quality_floor_keeps_reports_finite() {
        let small = TableModel::context_free(ProbDist::new(vec![1.0, 0.0]).unwrap(), 1.0).unwrap();
        let large = TableModel::uniform(2, 0, 8.0).unwrap();
        let work = vec![item(&[0], &[1, 1])];
        let r = evaluate_forced(Choice::Small, &work, &small, &large).unwrap();
        assert!((r.mean_quality - LOG_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(r.total_cost, 1.0 + 2.0);
        let r = evaluate_forced(Choice::Large, &work, &small, &large).unwrap();
        assert_eq!(r.total_cost, 1.0 + 16.0);
        assert_eq!(r.fraction_large, 1.0);
    }

    #[test]
    fn validation() {
        let m = TableModel::uniform(4, 1, 1.0).unwrap();
        assert!(score_workload(&[], &m, &m, &m).is_err());
        assert!(score_workload(&[item(&[0], &[])], &m, &m, &m).is_err());
        assert!(matches!(score_workload(&[item(&[], &[1])], &m, &m, &m), Err(Error::EmptyPrompt)));
        assert!(score_workload(&[item(&[9], &[1])], &m, &m, &m).is_err());
    }
}
