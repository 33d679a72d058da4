use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_vocab_size, SequenceModel, TokenId};
use crate::dist::{normalize, ProbDist};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_ORDER: usize = 4;
const MAX_GENERATED_ROWS: usize = 1 << 20;

/// Order-`m` lookup table: the distribution depends only on the last `m`
/// tokens. Contexts shorter than `m`, or windows with no stored row, get the
/// fallback distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableModelRepr", into = "TableModelRepr")]
pub struct TableModel {
    vocab_size: usize,
    order: usize,
    cost_units: f64,
    rows: BTreeMap<Vec<TokenId>, ProbDist>,
    fallback: ProbDist,
}

impl TableModel {
    pub fn new(
        vocab_size: usize,
        order: usize,
        rows: BTreeMap<Vec<TokenId>, ProbDist>,
        fallback: Option<ProbDist>,
        cost_units: f64,
    ) -> Result<Self> {
        let model = Self {
            vocab_size,
            order,
            cost_units,
            rows,
            fallback: fallback.unwrap_or_else(|| ProbDist::uniform(vocab_size)),
        };
        model.validate()?;
        Ok(model)
    }

    /// No rows at all; every context gets the uniform fallback.
    pub fn uniform(vocab_size: usize, order: usize, cost_units: f64) -> Result<Self> {
        Self::new(vocab_size, order, BTreeMap::new(), None, cost_units)
    }

    /// Order-0 model emitting `dist` regardless of context.
    pub fn context_free(dist: ProbDist, cost_units: f64) -> Result<Self> {
        let vocab_size = dist.len();
        let rows = BTreeMap::from([(Vec::new(), dist)]);
        Self::new(vocab_size, 0, rows, None, cost_units)
    }

    /// Order-`order` model whose row for every window is `f(window)`.
    pub fn from_fn(
        vocab_size: usize,
        order: usize,
        cost_units: f64,
        mut f: impl FnMut(&[TokenId]) -> ProbDist,
    ) -> Result<Self> {
        check_vocab_size(vocab_size)?;
        let rows = all_windows(vocab_size, order)?
            .into_iter()
            .map(|w| {
                let d = f(&w);
                (w, d)
            })
            .collect();
        Self::new(vocab_size, order, rows, None, cost_units)
    }

    /// Every window gets a random row. Weights are `exp(sharpness · z)` with
    /// `z` standard normal; each entry is zeroed with probability `zero_prob`
    /// (at least one entry always survives).
    pub fn random(
        vocab_size: usize,
        order: usize,
        sharpness: f64,
        zero_prob: f64,
        cost_units: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::from_fn(vocab_size, order, cost_units, |_| {
            random_row(vocab_size, sharpness, zero_prob, rng)
        })
    }

    /// Mixes every row (and the fallback) with a fresh random row:
    /// `(1 - mix) · self + mix · noise`. Handy for building draft models that
    /// roughly track a target.
    pub fn perturbed(&self, mix: f64, cost_units: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::InvalidParameter(format!("mix {mix} outside [0, 1]")));
        }
        let v = self.vocab_size;
        let mut blend = |d: &ProbDist| -> Result<ProbDist> {
            let noise = random_row(v, 1.0, 0.0, rng);
            let w: Vec<f64> = d
                .probs()
                .iter()
                .zip(noise.probs())
                .map(|(p, n)| (1.0 - mix) * p + mix * n)
                .collect();
            normalize(&w)
        };
        let rows = self
            .rows
            .iter()
            .map(|(w, d)| Ok((w.clone(), blend(d)?)))
            .collect::<Result<_>>()?;
        let fallback = blend(&self.fallback)?;
        Self::new(v, self.order, rows, Some(fallback), cost_units)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &BTreeMap<Vec<TokenId>, ProbDist> {
        &self.rows
    }

    pub fn fallback(&self) -> &ProbDist {
        &self.fallback
    }

    pub fn with_cost(mut self, cost_units: f64) -> Self {
        self.cost_units = cost_units;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_vocab_size(self.vocab_size)?;
        if self.order > MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "order {} exceeds {MAX_ORDER}",
                self.order
            )));
        }
        if !(self.cost_units.is_finite() && self.cost_units > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cost_units must be positive, got {}",
                self.cost_units
            )));
        }
        if self.fallback.len() != self.vocab_size {
            return Err(Error::LengthMismatch {
                expected: self.vocab_size,
                actual: self.fallback.len(),
            });
        }
        for (window, dist) in &self.rows {
            if window.len() != self.order {
                return Err(Error::InvalidParameter(format!(
                    "window {window:?} has length {}, order is {}",
                    window.len(),
                    self.order
                )));
            }
            super::check_context(window, self.vocab_size)?;
            if dist.len() != self.vocab_size {
                return Err(Error::LengthMismatch {
                    expected: self.vocab_size,
                    actual: dist.len(),
                });
            }
        }
        Ok(())
    }
}

impl SequenceModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn cost_units(&self) -> f64 {
        self.cost_units
    }

    fn predict(&self, ctx: &[TokenId]) -> Result<ProbDist> {
        if ctx.len() < self.order {
            return Ok(self.fallback.clone());
        }
        let window = &ctx[ctx.len() - self.order..];
        Ok(self.rows.get(window).unwrap_or(&self.fallback).clone())
    }
}

fn random_row(vocab_size: usize, sharpness: f64, zero_prob: f64, rng: &mut Rng) -> ProbDist {
    let keep = rng.below(vocab_size);
    let weights: Vec<f64> = (0..vocab_size)
        .map(|i| {
            let w = (sharpness * rng.normal()).exp();
            let zeroed = rng.uniform() < zero_prob;
            if zeroed && i != keep {
                0.0
            } else {
                w
            }
        })
        .collect();
    normalize(&weights).expect("at least one positive weight")
}

/// All `vocab_size^order` windows in lexicographic order.
fn all_windows(vocab_size: usize, order: usize) -> Result<Vec<Vec<TokenId>>> {
    let count = (vocab_size as u128).pow(order as u32);
    if order > MAX_ORDER || count > MAX_GENERATED_ROWS as u128 {
        return Err(Error::InvalidParameter(format!(
            "{vocab_size}^{order} windows is too many to enumerate"
        )));
    }
    let mut windows = vec![Vec::new()];
    for _ in 0..order {
        windows = windows
            .into_iter()
            .flat_map(|w| {
                (0..vocab_size).map(move |t| {
                    let mut next = w.clone();
                    next.push(TokenId::from_index(t));
                    next
                })
            })
            .collect();
    }
    Ok(windows)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableModelRepr {
    vocab_size: usize,
    cost_units: f64,
    order: usize,
    #[serde(default)]
    rows: Vec<TableRow>,
    #[serde(default)]
    fallback: Option<ProbDist>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    window: Vec<TokenId>,
    probs: ProbDist,
}

impl TryFrom<TableModelRepr> for TableModel {
    type Error = Error;

    fn try_from(r: TableModelRepr) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for row in r.rows {
            if rows.insert(row.window.clone(), row.probs).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate window {:?}",
                    row.window
                )));
            }
        }
        TableModel::new(r.vocab_size, r.order, rows, r.fallback, r.cost_units)
    }
}

impl From<TableModel> for TableModelRepr {
    fn from(m: TableModel) -> Self {
        TableModelRepr {
            vocab_size: m.vocab_size,
            cost_units: m.cost_units,
            order: m.order,
            rows: m
                .rows
                .into_iter()
                .map(|(window, probs)| TableRow { window, probs })
                .collect(),
            fallback: Some(m.fallback),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tokens, ModelSpec};

    #[test]
    fn unseen_window_uses_fallback() {
        let rows = BTreeMap::from([(tokens(&[1]), ProbDist::one_hot(3, 2))]);
        let fallback = ProbDist::new(vec![0.2, 0.3, 0.5]).unwrap();
        let m = TableModel::new(3, 1, rows, Some(fallback.clone()), 1.0).unwrap();
        assert_eq!(m.predict(&tokens(&[0])).unwrap(), fallback);
        assert_eq!(m.predict(&[]).unwrap(), fallback);
        assert_eq!(m.predict(&tokens(&[0, 1])).unwrap(), ProbDist::one_hot(3, 2));
    }

    #[test]
    fn default_fallback_is_uniform() {
        let m = TableModel::uniform(4, 2, 1.0).unwrap();
        assert_eq!(m.predict(&tokens(&[3, 3])).unwrap(), ProbDist::uniform(4));
    }

    #[test]
    fn predict_is_bit_deterministic() {
        let m = TableModel::random(5, 2, 1.5, 0.2, 1.0, &mut Rng::new(3)).unwrap();
        let ctx = tokens(&[4, 1, 2]);
        let a = m.predict(&ctx).unwrap();
        let b = m.predict(&ctx).unwrap();
        let bits = |d: &ProbDist| d.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn random_tables_are_reproducible() {
        let a = TableModel::random(4, 2, 1.0, 0.3, 1.0, &mut Rng::new(9)).unwrap();
        let b = TableModel::random(4, 2, 1.0, 0.3, 1.0, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows().len(), 16);
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let m = TableModel::random(6, 2, 2.0, 0.1, 0.25, &mut Rng::new(11)).unwrap();
        let spec = ModelSpec::Table(m.clone());
        let back = ModelSpec::from_json(&spec.to_json()).unwrap();
        let ModelSpec::Table(back) = back else { panic!("wrong kind") };
        for (w, d) in m.rows() {
            let e = &back.rows()[w];
            for (x, y) in d.probs().iter().zip(e.probs()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_bad_models() {
        let bad_row = r#"{"kind":"table","vocab_size":2,"cost_units":1,"order":1,
            "rows":[{"window":[0],"probs":[0.7,0.7]}]}"#;
        assert!(ModelSpec::from_json(bad_row).is_err());
        let bad_window = r#"{"kind":"table","vocab_size":2,"cost_units":1,"order":1,
            "rows":[{"window":[5],"probs":[0.5,0.5]}]}"#;
        assert!(ModelSpec::from_json(bad_window).is_err());
        let too_deep = r#"{"kind":"table","vocab_size":2,"cost_units":1,"order":5}"#;
        assert!(ModelSpec::from_json(too_deep).is_err());
        let unknown = r#"{"kind":"table","vocab_size":2,"cost_units":1,"order":0,"bogus":1}"#;
        assert!(ModelSpec::from_json(unknown).is_err());
    }
}
