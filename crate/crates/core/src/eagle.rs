//! Feature-level drafting.
//!
//! Drafts come from the target's own output head applied to extrapolated
//! penultimate features: starting from the target's true feature for the
//! context, an affine extrapolator predicts the next feature from the
//! current one and the embedding of the token just drafted. Verification is
//! the unchanged speculative-sampling scan, so the output distribution is
//! the target's regardless of extrapolator quality.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dist::{sample, ProbDist};
use crate::error::{Error, Result};
use crate::model::{FeatureModel, SequenceModel, TokenId};
use crate::rng::{Rng, UniformSource};
use crate::specdec::{decode_with, DecodeStats, DraftOutput, Drafter};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_COST_RATIO: f64 = 0.1;
pub const DEFAULT_FIT_SEQS: usize = 256;
pub const DEFAULT_FIT_LEN: usize = 16;

/// `f_next = W · [f ; embed(token)] + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extrapolator {
    pub dim: usize,
    /// `dim × 2·dim`
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Extrapolator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            weight: vec![vec![0.0; 2 * dim]; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn random(dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut ex = Self::zeros(dim);
        for w in ex.weight.iter_mut().flatten() {
            *w = scale * rng.normal();
        }
        for b in ex.bias.iter_mut() {
            *b = scale * rng.normal();
        }
        ex
    }

    /// The model's own pre-activation recurrence. Exact (bit for bit) when
    /// the model's activation is the identity.
    pub fn from_recurrence(model: &FeatureModel) -> Self {
        let weight = model
            .recur_state
            .iter()
            .zip(&model.recur_input)
            .map(|(s, i)| s.iter().chain(i).copied().collect())
            .collect();
        Self {
            dim: model.dim,
            weight,
            bias: model.recur_bias.clone(),
        }
    }

    pub fn apply(&self, feature: &[f64], embedding: &[f64]) -> Vec<f64> {
        self.weight
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| {
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(feature.iter().chain(embedding)) {
                    acc += w * x;
                }
                acc + b
            })
            .collect()
    }

    pub fn validate_for(&self, model: &FeatureModel) -> Result<()> {
        let d = model.dim;
        let shape_ok = self.dim == d
            && self.bias.len() == d
            && self.weight.len() == d
            && self.weight.iter().all(|r| r.len() == 2 * d);
        if !shape_ok {
            return Err(Error::InvalidParameter(format!(
                "extrapolator shape does not match feature dim {d}"
            )));
        }
        if self.weight.iter().flatten().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("extrapolator has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("extrapolator serializes");
        crate::harness::write_atomic(path, text.as_bytes())
    }
}

/// Penultimate features of one context, aligned with its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrajectory {
    pub features: Vec<Vec<f64>>,
    pub tokens: Vec<TokenId>,
}

impl FeatureTrajectory {
    pub fn of(model: &FeatureModel, ctx: &[TokenId]) -> Result<Self> {
        Ok(Self {
            features: model.features(ctx)?,
            tokens: ctx.to_vec(),
        })
    }

    /// `([f_t ; embed(x_{t+1})], f_{t+1})` pairs.
    fn transitions<'a>(
        &'a self,
        model: &'a FeatureModel,
    ) -> impl Iterator<Item = (Vec<f64>, &'a [f64])> + 'a {
        self.features.windows(2).zip(&self.tokens[1..]).map(|(pair, &next)| {
            let input = pair[0].iter().chain(model.embedding(next)).copied().collect();
            (input, pair[1].as_slice())
        })
    }
}

/// Self-distillation corpus: `count` sequences of length `len`, each
/// starting from a uniformly random token and continued by ancestral
/// sampling from the model.
pub fn sample_corpus(
    model: &FeatureModel,
    count: usize,
    len: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<TokenId>>> {
    (0..count)
        .map(|_| {
            let mut seq = vec![TokenId::from_index(rng.below(model.vocab_size))];
            let mut f = model.step(&vec![0.0; model.dim], seq[0]);
            while seq.len() < len {
                let t = sample(&model.head_dist(&f), rng);
                f = model.step(&f, t);
                seq.push(t);
            }
            Ok(seq)
        })
        .collect()
}

/// Ridge least squares of `f_{t+1}` on `[f_t ; embed(x_{t+1})]` with an
/// unpenalized intercept.
pub fn fit_extrapolator(
    model: &FeatureModel,
    corpus: &[Vec<TokenId>],
    ridge: f64,
) -> Result<Extrapolator> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge {ridge} must be >= 0")));
    }
    let d = model.dim;
    let p = 2 * d;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for ctx in corpus.iter().filter(|c| !c.is_empty()) {
        let traj = FeatureTrajectory::of(model, ctx)?;
        for (x, y) in traj.transitions(model) {
            inputs.push(x);
            targets.push(y.to_vec());
        }
    }
    let n = inputs.len();
    if n < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} transitions, need at least {}",
            p + 1
        )));
    }

    let mean = |rows: &[Vec<f64>], width: usize| -> Vec<f64> {
        let mut m = vec![0.0; width];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    };
    let mean_x = mean(&inputs, p);
    let mean_y = mean(&targets, d);

    let xc = DMatrix::from_fn(n, p, |i, j| inputs[i][j] - mean_x[j]);
    let yc = DMatrix::from_fn(n, d, |i, j| targets[i][j] - mean_y[j]);
    let mut gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * &yc;

    if ridge == 0.0 {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().copied().fold(0.0_f64, f64::max);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if max <= 0.0 || min <= 1e-12 * max {
            return Err(Error::SingularSystem);
        }
    }
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let coef = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or(Error::SingularSystem)?,
    };

    // coef is p × d; row i of the extrapolator is column i of coef.
    let weight: Vec<Vec<f64>> = (0..d).map(|i| (0..p).map(|j| coef[(j, i)]).collect()).collect();
    let bias = (0..d)
        .map(|i| mean_y[i] - (0..p).map(|j| coef[(j, i)] * mean_x[j]).sum::<f64>())
        .collect();
    Ok(Extrapolator { dim: d, weight, bias })
}

/// Root-mean-square prediction error over all transitions in `corpus`.
pub fn fit_residual(model: &FeatureModel, ex: &Extrapolator, corpus: &[Vec<TokenId>]) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for ctx in corpus.iter().filter(|c| !c.is_empty()) {
        let traj = FeatureTrajectory::of(model, ctx)?;
        for (x, y) in traj.transitions(model) {
            let pred = ex.apply(&x[..model.dim], &x[model.dim..]);
            sq += pred.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += y.len();
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("no transitions".into()));
    }
    Ok((sq / count as f64).sqrt())
}

/// Drafts through the target's head on extrapolated features.
#[derive(Debug, Clone, Copy)]
pub struct EagleDrafter<'a> {
    pub model: &'a FeatureModel,
    pub extrapolator: &'a Extrapolator,
    /// Cost billed per drafted token.
    pub cost_per_draft: f64,
}

impl Drafter for EagleDrafter<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size
    }

    fn cost_per_draft(&self) -> f64 {
        self.cost_per_draft
    }

    fn draft_into(
        &self,
        buf: &mut Vec<TokenId>,
        k: usize,
        rng: &mut dyn UniformSource,
    ) -> Result<Vec<ProbDist>> {
        // The true feature of the context comes out of the target's own
        // scoring pass, so it is not billed to the draft.
        let mut feature = self.model.last_feature(buf)?;
        let mut dists = Vec::with_capacity(k);
        for _ in 0..k {
            let dist = self.model.head_dist(&feature);
            let token = sample(&dist, rng);
            feature = self.extrapolator.apply(&feature, self.model.embedding(token));
            buf.push(token);
            dists.push(dist);
        }
        Ok(dists)
    }
}

pub fn eagle_draft<U: UniformSource>(
    model: &FeatureModel,
    ex: &Extrapolator,
    ctx: &[TokenId],
    k: usize,
    rng: &mut U,
) -> Result<DraftOutput> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    ex.validate_for(model)?;
    crate::model::check_context(ctx, model.vocab_size)?;
    let drafter = EagleDrafter {
        model,
        extrapolator: ex,
        cost_per_draft: 0.0,
    };
    let mut buf = ctx.to_vec();
    let dists = drafter.draft_into(&mut buf, k, rng)?;
    Ok(DraftOutput {
        tokens: buf.split_off(ctx.len()),
        dists,
    })
}

/// Speculative decoding with feature-level drafts. Drafts cost
/// `cost_ratio · c_t` each.
pub fn eagle_decode<U: UniformSource>(
    model: &FeatureModel,
    ex: &Extrapolator,
    prompt: &[TokenId],
    n: usize,
    k: usize,
    cost_ratio: f64,
    rng: &mut U,
) -> Result<(Vec<TokenId>, DecodeStats)> {
    if prompt.is_empty() {
        return Err(Error::EmptyContext);
    }
    ex.validate_for(model)?;
    let drafter = EagleDrafter {
        model,
        extrapolator: ex,
        cost_per_draft: cost_ratio * model.cost_units(),
    };
    decode_with(model, &drafter, prompt, n, k, rng)
}
