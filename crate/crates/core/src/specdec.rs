//! Token-level speculative sampling.
//!
//! A cheap draft proposes `K` tokens; the target scores all of them in one
//! batched call; drafts are accepted left to right with probability
//! `min(1, p(x)/q(x))`. The first rejection is replaced by a sample from
//! `norm(max(0, p - q))` and ends the cycle. If every draft survives, one
//! bonus token is sampled from the target's distribution after the last
//! draft. The emitted sequence is distributed exactly as target sampling.
//!
//! Randomness: each drafted token consumes one uniform, each scanned
//! position one uniform, and the terminal (residual or bonus) sample one
//! uniform.

use serde::Serialize;

use crate::dist::{normalize, sample, ProbDist};
use crate::error::{Error, Result};
use crate::model::{check_context, CallRole, CostMeter, SequenceModel, TokenId};
use crate::rng::UniformSource;

#[derive(Debug, Clone, PartialEq)]
pub struct DraftOutput {
    pub tokens: Vec<TokenId>,
    /// Draft distribution each token was sampled from.
    pub dists: Vec<ProbDist>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationResult {
    pub n_accepted: usize,
    /// Accepted drafts followed by one residual or bonus token.
    pub emitted: Vec<TokenId>,
    /// A draft was rejected and the last token came from the residual.
    pub resampled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecodeStats {
    /// Tokens emitted across all cycles, including any surplus of the final
    /// cycle that was cut off at `N`.
    pub tokens_generated: u64,
    pub target_calls: u64,
    pub draft_calls: u64,
    pub cycles: u64,
    pub accepted_drafts: u64,
    /// `K` per cycle.
    pub drafted_tokens: u64,
    /// Drafted tokens the verifier actually tested: the accepted run plus
    /// the rejected token, if any. Drafts after a rejection are never tested.
    pub verified_drafts: u64,
    /// `accepted_drafts / verified_drafts`, the per-position accept rate.
    pub acceptance_rate: f64,
    pub tokens_per_target_call: f64,
    pub cost_accumulated: f64,
}

impl DecodeStats {
    /// `tokens · c_t / (target_calls · c_t + draft_calls · c_d)`: cost of
    /// plain autoregressive decoding over the cost actually paid.
    pub fn simulated_speedup(&self, target_cost: f64) -> f64 {
        if self.cost_accumulated == 0.0 {
            return 1.0;
        }
        self.tokens_generated as f64 * target_cost / self.cost_accumulated
    }

    pub fn mean_tokens_per_cycle(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.tokens_generated as f64 / self.cycles as f64
        }
    }

    fn finish(&mut self, meter: &CostMeter) {
        self.target_calls = meter.target_calls;
        self.draft_calls = meter.draft_calls;
        self.cost_accumulated = meter.cost_accumulated;
        self.acceptance_rate = if self.verified_drafts == 0 {
            0.0
        } else {
            self.accepted_drafts as f64 / self.verified_drafts as f64
        };
        self.tokens_per_target_call = if self.target_calls == 0 {
            0.0
        } else {
            self.tokens_generated as f64 / self.target_calls as f64
        };
    }
}

/// Anything that can propose a chain of draft tokens.
pub trait Drafter {
    fn vocab_size(&self) -> usize;

    /// Cost billed per drafted token.
    fn cost_per_draft(&self) -> f64;

    /// Appends `k` drafted tokens to `buf` (which holds the context) and
    /// returns the distribution each was sampled from.
    fn draft_into(
        &self,
        buf: &mut Vec<TokenId>,
        k: usize,
        rng: &mut dyn UniformSource,
    ) -> Result<Vec<ProbDist>>;
}

/// Drafts by sampling autoregressively from a small sequence model.
#[derive(Debug, Clone, Copy)]
pub struct ModelDrafter<M>(pub M);

impl<M: SequenceModel> Drafter for ModelDrafter<M> {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn cost_per_draft(&self) -> f64 {
        self.0.cost_units()
    }

    fn draft_into(
        &self,
        buf: &mut Vec<TokenId>,
        k: usize,
        rng: &mut dyn UniformSource,
    ) -> Result<Vec<ProbDist>> {
        let mut dists = Vec::with_capacity(k);
        for _ in 0..k {
            let d = self.0.predict(buf)?;
            buf.push(sample(&d, rng));
            dists.push(d);
        }
        Ok(dists)
    }
}

/// Samples `k` tokens autoregressively from `draft_model`.
pub fn draft<M: SequenceModel + ?Sized, U: UniformSource>(
    draft_model: &M,
    ctx: &[TokenId],
    k: usize,
    rng: &mut U,
    meter: &mut CostMeter,
) -> Result<DraftOutput> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    check_context(ctx, draft_model.vocab_size())?;
    let mut buf = ctx.to_vec();
    let dists = ModelDrafter(draft_model).draft_into(&mut buf, k, rng)?;
    meter.bill(CallRole::Draft, k as u64, draft_model.cost_units());
    Ok(DraftOutput {
        tokens: buf.split_off(ctx.len()),
        dists,
    })
}

/// `norm(max(0, p - q))`.
pub fn residual(p: &ProbDist, q: &ProbDist) -> Result<ProbDist> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let weights: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    normalize(&weights).map_err(|e| match e {
        Error::AllZero => Error::AllZeroResidual,
        other => other,
    })
}

/// Accept/reject scan of one drafted chain.
///
/// `target_dists[i]` is the target's distribution at drafted position `i`;
/// `target_dists[K]` is the distribution after all `K` drafts.
pub fn verify<U: UniformSource + ?Sized>(
    target_dists: &[ProbDist],
    draft: &DraftOutput,
    rng: &mut U,
) -> Result<VerificationResult> {
    let k = draft.tokens.len();
    if k == 0 {
        return Err(Error::InvalidParameter("empty draft".into()));
    }
    if draft.dists.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: draft.dists.len(),
        });
    }
    if target_dists.len() != k + 1 {
        return Err(Error::LengthMismatch {
            expected: k + 1,
            actual: target_dists.len(),
        });
    }
    let mut emitted = Vec::with_capacity(k + 1);
    for (i, (&token, q)) in draft.tokens.iter().zip(&draft.dists).enumerate() {
        let p = &target_dists[i];
        if p.len() != q.len() || token.index() >= q.len() {
            return Err(Error::LengthMismatch {
                expected: p.len(),
                actual: q.len(),
            });
        }
        let q_x = q.prob(token);
        if q_x <= 0.0 {
            return Err(Error::ContractViolation(format!(
                "drafted token {token} at position {i} has zero draft probability"
            )));
        }
        let u = rng.next_uniform();
        if u < (p.prob(token) / q_x).min(1.0) {
            emitted.push(token);
        } else {
            emitted.push(sample(&residual(p, q)?, rng));
            return Ok(VerificationResult {
                n_accepted: i,
                emitted,
                resampled: true,
            });
        }
    }
    emitted.push(sample(&target_dists[k], rng));
    Ok(VerificationResult {
        n_accepted: k,
        emitted,
        resampled: false,
    })
}

/// State of one speculative decoding session, advanced one cycle at a time.
#[derive(Debug)]
pub struct SpecSession<'a, T: ?Sized, D> {
    target: &'a T,
    drafter: &'a D,
    k: usize,
    prompt_len: usize,
    history: Vec<TokenId>,
    meter: CostMeter,
    stats: DecodeStats,
}

impl<T: ?Sized, D> Clone for SpecSession<'_, T, D> {
    fn clone(&self) -> Self {
        Self {
            target: self.target,
            drafter: self.drafter,
            k: self.k,
            prompt_len: self.prompt_len,
            history: self.history.clone(),
            meter: self.meter.clone(),
            stats: self.stats.clone(),
        }
    }
}

impl<'a, T: SequenceModel + ?Sized, D: Drafter> SpecSession<'a, T, D> {
    pub fn new(target: &'a T, drafter: &'a D, prompt: &[TokenId], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if drafter.vocab_size() != target.vocab_size() {
            return Err(Error::InvalidParameter(format!(
                "draft vocabulary {} differs from target vocabulary {}",
                drafter.vocab_size(),
                target.vocab_size()
            )));
        }
        check_context(prompt, target.vocab_size())?;
        Ok(Self {
            target,
            drafter,
            k,
            prompt_len: prompt.len(),
            history: prompt.to_vec(),
            meter: CostMeter::new(),
            stats: DecodeStats::default(),
        })
    }

    /// One draft → batched score → verify cycle.
    pub fn step(&mut self, rng: &mut dyn UniformSource) -> Result<VerificationResult> {
        let base = self.history.len();
        let dists = self.drafter.draft_into(&mut self.history, self.k, rng)?;
        self.meter
            .bill(CallRole::Draft, self.k as u64, self.drafter.cost_per_draft());
        let target_dists = self.target.predict_prefixes(&self.history, base)?;
        self.meter
            .bill(CallRole::Target, 1, self.target.cost_units());
        let drafted = DraftOutput {
            tokens: self.history.split_off(base),
            dists,
        };
        let result = verify(&target_dists, &drafted, rng)?;
        self.history.extend_from_slice(&result.emitted);
        self.stats.cycles += 1;
        self.stats.accepted_drafts += result.n_accepted as u64;
        self.stats.drafted_tokens += self.k as u64;
        self.stats.verified_drafts += (result.n_accepted + usize::from(result.resampled)) as u64;
        self.stats.tokens_generated += result.emitted.len() as u64;
        Ok(result)
    }

    /// Tokens generated so far (prompt excluded).
    pub fn generated(&self) -> &[TokenId] {
        &self.history[self.prompt_len..]
    }

    pub fn stats(&self) -> DecodeStats {
        let mut s = self.stats.clone();
        s.finish(&self.meter);
        s
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }
}

/// Runs cycles until `n` tokens exist, then truncates to exactly `n`.
pub fn decode_with<T, D, U>(
    target: &T,
    drafter: &D,
    prompt: &[TokenId],
    n: usize,
    k: usize,
    rng: &mut U,
) -> Result<(Vec<TokenId>, DecodeStats)>
where
    T: SequenceModel + ?Sized,
    D: Drafter,
    U: UniformSource,
{
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let mut session = SpecSession::new(target, drafter, prompt, k)?;
    while session.generated().len() < n {
        session.step(rng)?;
    }
    Ok((session.generated()[..n].to_vec(), session.stats()))
}

pub fn speculative_decode<T, M, U>(
    target: &T,
    draft_model: &M,
    prompt: &[TokenId],
    n: usize,
    k: usize,
    rng: &mut U,
) -> Result<(Vec<TokenId>, DecodeStats)>
where
    T: SequenceModel + ?Sized,
    M: SequenceModel,
    U: UniformSource,
{
    decode_with(target, &ModelDrafter(draft_model), prompt, n, k, rng)
}

/// Plain autoregressive sampling from `model`, one call per token.
pub fn autoregressive_decode<M: SequenceModel + ?Sized, U: UniformSource>(
    model: &M,
    prompt: &[TokenId],
    n: usize,
    rng: &mut U,
    meter: &mut CostMeter,
) -> Result<Vec<TokenId>> {
    check_context(prompt, model.vocab_size())?;
    let mut history = prompt.to_vec();
    for _ in 0..n {
        let d = model.predict(&history)?;
        meter.bill(CallRole::Target, 1, model.cost_units());
        history.push(sample(&d, rng));
    }
    Ok(history.split_off(prompt.len()))
}

/// `β = Σ min(p_i, q_i)`: per-position acceptance probability for
/// context-free target/draft pairs.
pub fn acceptance_rate_memoryless(p: &ProbDist, q: &ProbDist) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| a.min(*b))
        .sum()
}

/// Expected tokens emitted per cycle, `(1 - β^(K+1)) / (1 - β)`, with the
/// limit `K + 1` at `β = 1`.
pub fn expected_tokens_per_cycle(beta: f64, k: usize) -> f64 {
    if beta >= 1.0 {
        return (k + 1) as f64;
    }
    (1.0 - beta.powi(k as i32 + 1)) / (1.0 - beta)
}
