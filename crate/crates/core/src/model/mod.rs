//! Toy sequence models, token ids, and cost accounting.

mod feature;
mod table;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use feature::{Activation, FeatureModel};
pub use table::TableModel;

use crate::dist::ProbDist;
use crate::error::{Error, Result};

pub const MIN_VOCAB: usize = 2;
pub const MAX_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn from_index(index: usize) -> Self {
        TokenId(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

pub(crate) fn check_vocab_size(vocab_size: usize) -> Result<()> {
    if !(MIN_VOCAB..=MAX_VOCAB).contains(&vocab_size) {
        return Err(Error::InvalidParameter(format!(
            "vocab_size {vocab_size} outside [{MIN_VOCAB}, {MAX_VOCAB}]"
        )));
    }
    Ok(())
}

/// Fails with `VocabMismatch` on the first token outside the vocabulary.
pub fn check_context(ctx: &[TokenId], vocab_size: usize) -> Result<()> {
    match ctx.iter().find(|t| t.index() >= vocab_size) {
        Some(t) => Err(Error::VocabMismatch {
            token: t.0,
            vocab_size,
        }),
        None => Ok(()),
    }
}

/// A deterministic next-token distribution with a per-call cost.
///
/// `predict` assumes every token of `ctx` is inside the vocabulary; use
/// [`model_next`] or [`check_context`] at trust boundaries.
pub trait SequenceModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Abstract cost of one forward call.
    fn cost_units(&self) -> f64;

    fn predict(&self, ctx: &[TokenId]) -> Result<ProbDist>;

    /// Distributions after each prefix `tokens[..from]`, `tokens[..from + 1]`,
    /// ..., `tokens[..]`, i.e. `tokens.len() - from + 1` entries. This is what
    /// one batched scoring pass over a drafted continuation returns.
    fn predict_prefixes(&self, tokens: &[TokenId], from: usize) -> Result<Vec<ProbDist>> {
        (from..=tokens.len())
            .map(|end| self.predict(&tokens[..end]))
            .collect()
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn cost_units(&self) -> f64 {
        (**self).cost_units()
    }
    fn predict(&self, ctx: &[TokenId]) -> Result<ProbDist> {
        (**self).predict(ctx)
    }
    fn predict_prefixes(&self, tokens: &[TokenId], from: usize) -> Result<Vec<ProbDist>> {
        (**self).predict_prefixes(tokens, from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallRole {
    Target,
    Draft,
}

/// Call counters and accumulated cost for one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostMeter {
    pub target_calls: u64,
    pub draft_calls: u64,
    pub cost_accumulated: f64,
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bill(&mut self, role: CallRole, calls: u64, cost_units: f64) {
        match role {
            CallRole::Target => self.target_calls += calls,
            CallRole::Draft => self.draft_calls += calls,
        }
        self.cost_accumulated += calls as f64 * cost_units;
    }
}

/// One metered forward call.
pub fn model_next<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &[TokenId],
    meter: &mut CostMeter,
    role: CallRole,
) -> Result<ProbDist> {
    check_context(ctx, model.vocab_size())?;
    let dist = model.predict(ctx)?;
    meter.bill(role, 1, model.cost_units());
    Ok(dist)
}

/// A model as stored on disk: `{"vocab_size": V, "kind": "table" | "feature", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Table(TableModel),
    Feature(FeatureModel),
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(format!("model {}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Table(m) => m.validate(),
            ModelSpec::Feature(m) => m.validate(),
        }
    }

    pub fn as_model(&self) -> &dyn SequenceModel {
        match self {
            ModelSpec::Table(m) => m,
            ModelSpec::Feature(m) => m,
        }
    }
}

impl SequenceModel for ModelSpec {
    fn vocab_size(&self) -> usize {
        self.as_model().vocab_size()
    }
    fn cost_units(&self) -> f64 {
        self.as_model().cost_units()
    }
    fn predict(&self, ctx: &[TokenId]) -> Result<ProbDist> {
        self.as_model().predict(ctx)
    }
    fn predict_prefixes(&self, tokens: &[TokenId], from: usize) -> Result<Vec<ProbDist>> {
        self.as_model().predict_prefixes(tokens, from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meter_accumulates_cost() {
        let model = TableModel::uniform(3, 1, 2.0).unwrap();
        let mut meter = CostMeter::new();
        for _ in 0..3 {
            model_next(&model, &tokens(&[0, 1]), &mut meter, CallRole::Target).unwrap();
        }
        assert_eq!(meter.target_calls, 3);
        assert_eq!(meter.draft_calls, 0);
        assert_eq!(meter.cost_accumulated, 6.0);
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let model = TableModel::uniform(3, 1, 1.0).unwrap();
        let mut meter = CostMeter::new();
        let err = model_next(&model, &tokens(&[0, 3]), &mut meter, CallRole::Draft).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { token: 3, vocab_size: 3 }));
        assert_eq!(meter.draft_calls, 0);
    }

    #[test]
    fn model_json_has_kind_and_vocab() {
        let spec = ModelSpec::Table(TableModel::uniform(4, 0, 1.0).unwrap());
        let v: serde_json::Value = serde_json::from_str(&spec.to_json()).unwrap();
        assert_eq!(v["kind"], "table");
        assert_eq!(v["vocab_size"], 4);
    }

    #[test]
    fn malformed_model_json_reports_position() {
        let err = ModelSpec::from_json("{\"kind\": \"table\",\n  \"vocab_size\": }").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }
}
