use serde::{Deserialize, Serialize};

use super::{check_vocab_size, SequenceModel, TokenId};
use crate::dist::ProbDist;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_DIM: usize = 4;
pub const MAX_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Makes the recurrence exactly affine; used for extrapolation fixtures.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// A one-layer recurrent network.
///
/// ```text
/// f[-1] = 0
/// f[t]  = act(W_state · f[t-1] + W_input · embed(x[t]) + b)
/// p     = softmax(W_head · f[last] + b_head)
/// ```
///
/// `f[t]` is the penultimate representation; the head is the top layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureModel {
    pub vocab_size: usize,
    pub dim: usize,
    pub cost_units: f64,
    #[serde(default)]
    pub activation: Activation,
    /// `vocab_size × dim`
    pub embed: Vec<Vec<f64>>,
    /// `dim × dim`
    pub recur_state: Vec<Vec<f64>>,
    /// `dim × dim`
    pub recur_input: Vec<Vec<f64>>,
    pub recur_bias: Vec<f64>,
    /// `vocab_size × dim`
    pub head_weight: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
}

impl FeatureModel {
    /// All parameters zero.
    pub fn zeros(vocab_size: usize, dim: usize, cost_units: f64) -> Self {
        Self {
            vocab_size,
            dim,
            cost_units,
            activation: Activation::Tanh,
            embed: vec![vec![0.0; dim]; vocab_size],
            recur_state: vec![vec![0.0; dim]; dim],
            recur_input: vec![vec![0.0; dim]; dim],
            recur_bias: vec![0.0; dim],
            head_weight: vec![vec![0.0; dim]; vocab_size],
            head_bias: vec![0.0; vocab_size],
        }
    }

    /// Gaussian parameters. The state matrix is rescaled to spectral-ish norm
    /// `state_gain` (by its Frobenius norm) so long rollouts stay bounded even
    /// with the identity activation.
    pub fn random(
        vocab_size: usize,
        dim: usize,
        head_scale: f64,
        state_gain: f64,
        activation: Activation,
        cost_units: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut m = Self::zeros(vocab_size, dim, cost_units);
        m.activation = activation;
        let mut fill = |rows: &mut Vec<Vec<f64>>, scale: f64| {
            for row in rows.iter_mut() {
                for w in row.iter_mut() {
                    *w = scale * rng.normal();
                }
            }
        };
        fill(&mut m.embed, 1.0);
        fill(&mut m.recur_state, 1.0);
        fill(&mut m.recur_input, 1.0 / (dim as f64).sqrt());
        fill(&mut m.head_weight, head_scale);
        let frob = m
            .recur_state
            .iter()
            .flatten()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt();
        if frob > 0.0 {
            for w in m.recur_state.iter_mut().flatten() {
                *w *= state_gain / frob;
            }
        }
        for b in m.recur_bias.iter_mut() {
            *b = 0.1 * rng.normal();
        }
        for b in m.head_bias.iter_mut() {
            *b = 0.1 * rng.normal();
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_vocab_size(self.vocab_size)?;
        if !(MIN_DIM..=MAX_DIM).contains(&self.dim) {
            return Err(Error::InvalidParameter(format!(
                "feature dim {} outside [{MIN_DIM}, {MAX_DIM}]",
                self.dim
            )));
        }
        if !(self.cost_units.is_finite() && self.cost_units > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cost_units must be positive, got {}",
                self.cost_units
            )));
        }
        let (v, d) = (self.vocab_size, self.dim);
        check_matrix("embed", &self.embed, v, d)?;
        check_matrix("recur_state", &self.recur_state, d, d)?;
        check_matrix("recur_input", &self.recur_input, d, d)?;
        check_matrix("head_weight", &self.head_weight, v, d)?;
        check_vector("recur_bias", &self.recur_bias, d)?;
        check_vector("head_bias", &self.head_bias, v)?;
        Ok(())
    }

    pub fn embedding(&self, token: TokenId) -> &[f64] {
        &self.embed[token.index()]
    }

    /// Pre-activation of the recurrence. The accumulation order (state terms,
    /// then input terms, then bias) is part of the contract: an extrapolator
    /// built from these weights reproduces it bit for bit.
    pub fn recur_preactivation(&self, prev: &[f64], token: TokenId) -> Vec<f64> {
        let e = self.embedding(token);
        (0..self.dim)
            .map(|i| {
                let mut acc = 0.0;
                for (w, x) in self.recur_state[i].iter().zip(prev) {
                    acc += w * x;
                }
                for (w, x) in self.recur_input[i].iter().zip(e) {
                    acc += w * x;
                }
                acc + self.recur_bias[i]
            })
            .collect()
    }

    pub fn step(&self, prev: &[f64], token: TokenId) -> Vec<f64> {
        let mut f = self.recur_preactivation(prev, token);
        for x in f.iter_mut() {
            *x = self.activation.apply(*x);
        }
        f
    }

    pub fn head_dist(&self, feature: &[f64]) -> ProbDist {
        let scores: Vec<f64> = self
            .head_weight
            .iter()
            .zip(&self.head_bias)
            .map(|(row, b)| {
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(feature) {
                    acc += w * x;
                }
                acc + b
            })
            .collect();
        ProbDist::softmax(&scores)
    }

    /// Penultimate features after each prefix of `ctx`, plus the output
    /// distribution after the whole context.
    pub fn feature_forward(&self, ctx: &[TokenId]) -> Result<(Vec<Vec<f64>>, ProbDist)> {
        let features = self.features(ctx)?;
        let dist = self.head_dist(features.last().expect("non-empty"));
        Ok((features, dist))
    }

    pub fn features(&self, ctx: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        if ctx.is_empty() {
            return Err(Error::EmptyContext);
        }
        super::check_context(ctx, self.vocab_size)?;
        let mut out = Vec::with_capacity(ctx.len());
        let mut f = vec![0.0; self.dim];
        for &t in ctx {
            f = self.step(&f, t);
            out.push(f.clone());
        }
        Ok(out)
    }

    /// Penultimate feature after the whole context.
    pub fn last_feature(&self, ctx: &[TokenId]) -> Result<Vec<f64>> {
        if ctx.is_empty() {
            return Err(Error::EmptyContext);
        }
        let mut f = vec![0.0; self.dim];
        for &t in ctx {
            f = self.step(&f, t);
        }
        Ok(f)
    }
}

impl SequenceModel for FeatureModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn cost_units(&self) -> f64 {
        self.cost_units
    }

    fn predict(&self, ctx: &[TokenId]) -> Result<ProbDist> {
        Ok(self.head_dist(&self.last_feature(ctx)?))
    }

    /// Single recurrent pass; identical results to calling `predict` per prefix.
    fn predict_prefixes(&self, tokens: &[TokenId], from: usize) -> Result<Vec<ProbDist>> {
        if from == 0 {
            return Err(Error::EmptyContext);
        }
        let mut f = self.last_feature(&tokens[..from])?;
        let mut out = Vec::with_capacity(tokens.len() - from + 1);
        out.push(self.head_dist(&f));
        for &t in &tokens[from..] {
            f = self.step(&f, t);
            out.push(self.head_dist(&f));
        }
        Ok(out)
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows {
        return Err(Error::InvalidParameter(format!(
            "{name} has {} rows, expected {rows}",
            m.len()
        )));
    }
    for row in m {
        check_vector(name, row, cols)?;
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::InvalidParameter(format!(
            "{name} has length {}, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
    }
    Ok(())
}
