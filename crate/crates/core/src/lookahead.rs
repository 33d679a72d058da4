//! Greedy decoding accelerated by an n-gram cache.
//!
//! Each round proposes a continuation by chaining cache hits from the
//! trailing window, scores every proposal position in one batched target
//! call, and keeps the longest prefix that matches the target's argmax. The
//! argmax at the first mismatch (or after the last proposal) is always
//! emitted, so output is token-for-token identical to plain greedy decoding.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_context, SequenceModel, TokenId};

pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_WINDOW: usize = 4;

/// Most-recent-wins map from `(n-1)`-token windows to the token that
/// followed them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCache {
    n: usize,
    map: HashMap<Vec<TokenId>, TokenId>,
    /// History length already ingested by `update_incremental`.
    seen: usize,
}

impl NGramCache {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("n-gram size {n} must be >= 2")));
        }
        Ok(Self {
            n,
            map: HashMap::new(),
            seen: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, window: &[TokenId]) -> Option<TokenId> {
        self.map.get(window).copied()
    }

    /// Inserts every `(window → next)` pair of `history`, later occurrences
    /// overwriting earlier ones.
    pub fn update(&mut self, history: &[TokenId]) {
        for gram in history.windows(self.n) {
            let (window, next) = gram.split_at(self.n - 1);
            self.map.insert(window.to_vec(), next[0]);
        }
    }

    /// Ingests only the n-grams of `history` that end after the last call.
    /// `history` must extend the history passed previously.
    fn update_incremental(&mut self, history: &[TokenId]) {
        let start = self.seen.saturating_sub(self.n - 1);
        self.update(&history[start..]);
        self.seen = history.len();
    }

    /// Chains cache hits from the trailing window of `ctx`, up to `max_len`
    /// tokens, stopping at the first miss.
    pub fn propose(&self, ctx: &[TokenId], max_len: usize) -> Vec<TokenId> {
        let w = self.n - 1;
        if ctx.len() < w {
            return Vec::new();
        }
        let mut window: Vec<TokenId> = ctx[ctx.len() - w..].to_vec();
        let mut out = Vec::new();
        while out.len() < max_len {
            let Some(next) = self.get(&window) else { break };
            out.push(next);
            window.remove(0);
            window.push(next);
        }
        out
    }
}

/// Returns the updated cache (pure form).
pub fn cache_update(cache: &NGramCache, history: &[TokenId]) -> NGramCache {
    let mut next = cache.clone();
    next.update(history);
    next
}

pub fn propose(cache: &NGramCache, ctx: &[TokenId], max_len: usize) -> Vec<TokenId> {
    cache.propose(ctx, max_len)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LookaheadStats {
    pub tokens_generated: u64,
    pub target_calls: u64,
    pub proposed: u64,
    pub verified_hits: u64,
}

pub fn lookahead_decode<M: SequenceModel + ?Sized>(
    target: &M,
    prompt: &[TokenId],
    n_tokens: usize,
    ngram: usize,
    window: usize,
) -> Result<(Vec<TokenId>, LookaheadStats)> {
    if n_tokens == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if window == 0 {
        return Err(Error::InvalidParameter("window L must be at least 1".into()));
    }
    check_context(prompt, target.vocab_size())?;
    let mut cache = NGramCache::new(ngram)?;
    let mut history = prompt.to_vec();
    let mut stats = LookaheadStats::default();

    while history.len() - prompt.len() < n_tokens {
        cache.update_incremental(&history);
        // Every round emits one token past the accepted prefix, so a full hit
        // on this proposal lands exactly on `n_tokens`.
        let remaining = n_tokens - (history.len() - prompt.len());
        let proposal = cache.propose(&history, window.min(remaining - 1));
        let base = history.len();
        history.extend_from_slice(&proposal);
        let dists = target.predict_prefixes(&history, base)?;
        history.truncate(base);
        stats.target_calls += 1;
        stats.proposed += proposal.len() as u64;

        let mut hits = 0;
        for (proposed, dist) in proposal.iter().zip(&dists) {
            if dist.argmax() != *proposed {
                break;
            }
            hits += 1;
        }
        history.extend_from_slice(&proposal[..hits]);
        history.push(dists[hits].argmax());
        stats.verified_hits += hits as u64;
        stats.tokens_generated += hits as u64 + 1;
    }
    Ok((history.split_off(prompt.len()), stats))
}

/// Plain greedy decoding, one call per token.
pub fn greedy_decode<M: SequenceModel + ?Sized>(
    target: &M,
    prompt: &[TokenId],
    n_tokens: usize,
) -> Result<Vec<TokenId>> {
    check_context(prompt, target.vocab_size())?;
    let mut history = prompt.to_vec();
    for _ in 0..n_tokens {
        let next = target.predict(&history)?.argmax();
        history.push(next);
    }
    Ok(history.split_off(prompt.len()))
}
