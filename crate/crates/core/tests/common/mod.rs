//! Exact enumeration of speculative decoding outcomes.
//!
//! Every random draw in a decoding cycle is a uniform. For each discrete
//! outcome (drafted tokens, accept/reject decisions, terminal token) this
//! oracle computes its probability from the models directly and picks a
//! uniform inside the interval that produces it. A cloned session is then
//! stepped with exactly those uniforms, which checks that the
//! implementation takes the predicted branch and consumes the predicted
//! number of draws.

#![allow(dead_code)]

use std::collections::HashMap;

use dynexec_core::model::{SequenceModel, TokenId};
use dynexec_core::specdec::{Drafter, SpecSession};
use dynexec_core::{ProbDist, UniformSource};

/// Replays a fixed list of uniforms.
pub struct Script {
    values: Vec<f64>,
    next: usize,
}

impl Script {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, next: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.next == self.values.len()
    }
}

impl UniformSource for Script {
    fn next_uniform(&mut self) -> f64 {
        let u = *self.values.get(self.next).expect("script over-consumed");
        self.next += 1;
        u
    }
}

/// Midpoint of the inverse-CDF interval that selects `token`.
pub fn midpoint(d: &[f64], token: usize) -> f64 {
    let lo: f64 = d[..token].iter().sum();
    lo + d[token] / 2.0
}

fn residual(p: &[f64], q: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub struct Outcome {
    pub uniforms: Vec<f64>,
    pub emitted: Vec<TokenId>,
    pub prob: f64,
}

/// Draft distribution at `ctx` after the already drafted tokens.
pub type DraftDist<'a> = dyn Fn(&[TokenId], &[TokenId]) -> Vec<f64> + 'a;

/// All outcomes of one cycle from context `ctx`.
pub fn cycle_outcomes(target: &dyn SequenceModel, q_of: &DraftDist<'_>, ctx: &[TokenId], k: usize) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut drafted = Vec::new();
    let mut qs = Vec::new();
    let mut us = Vec::new();
    draft_branches(target, q_of, ctx, k, &mut drafted, &mut qs, &mut us, 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn draft_branches(
    target: &dyn SequenceModel,
    q_of: &DraftDist<'_>,
    ctx: &[TokenId],
    k: usize,
    drafted: &mut Vec<TokenId>,
    qs: &mut Vec<Vec<f64>>,
    us: &mut Vec<f64>,
    prob: f64,
    out: &mut Vec<Outcome>,
) {
    if drafted.len() == k {
        verify_branches(target, ctx, drafted, qs, us, prob, out);
        return;
    }
    let q = q_of(ctx, drafted);
    for x in 0..q.len() {
        if q[x] == 0.0 {
            continue;
        }
        drafted.push(TokenId(x as u32));
        qs.push(q.clone());
        us.push(midpoint(&q, x));
        draft_branches(target, q_of, ctx, k, drafted, qs, us, prob * q[x], out);
        drafted.pop();
        qs.pop();
        us.pop();
    }
}

fn verify_branches(
    target: &dyn SequenceModel,
    ctx: &[TokenId],
    drafted: &[TokenId],
    qs: &[Vec<f64>],
    draft_us: &[f64],
    draft_prob: f64,
    out: &mut Vec<Outcome>,
) {
    let mut uniforms = draft_us.to_vec();
    let mut prob = draft_prob;
    let mut history = ctx.to_vec();
    for (i, &x) in drafted.iter().enumerate() {
        let p = target.predict(&history).unwrap().probs().to_vec();
        let q = &qs[i];
        let a = (p[x.index()] / q[x.index()]).min(1.0);
        if a < 1.0 {
            let r = residual(&p, q);
            for y in 0..r.len() {
                if r[y] > 0.0 {
                    let mut u = uniforms.clone();
                    u.push((1.0 + a) / 2.0);
                    u.push(midpoint(&r, y));
                    let mut emitted = drafted[..i].to_vec();
                    emitted.push(TokenId(y as u32));
                    out.push(Outcome { uniforms: u, emitted, prob: prob * (1.0 - a) * r[y] });
                }
            }
        }
        if a == 0.0 {
            return;
        }
        uniforms.push(a / 2.0);
        prob *= a;
        history.push(x);
    }
    let p = target.predict(&history).unwrap().probs().to_vec();
    for y in 0..p.len() {
        if p[y] > 0.0 {
            let mut u = uniforms.clone();
            u.push(midpoint(&p, y));
            let mut emitted = drafted.to_vec();
            emitted.push(TokenId(y as u32));
            out.push(Outcome { uniforms: u, emitted, prob: prob * p[y] });
        }
    }
}

/// Exact distribution of the first `n` emitted tokens, stepping clones of
/// `session` through every outcome.
pub fn speculative_distribution<T, D>(
    session: &SpecSession<'_, T, D>,
    target: &dyn SequenceModel,
    q_of: &DraftDist<'_>,
    prompt: &[TokenId],
    n: usize,
    k: usize,
) -> HashMap<Vec<TokenId>, f64>
where
    T: SequenceModel + ?Sized,
    D: Drafter,
{
    let mut acc = HashMap::new();
    walk(session, target, q_of, prompt, n, k, 1.0, &mut acc);
    acc
}

#[allow(clippy::too_many_arguments)]
fn walk<T, D>(
    session: &SpecSession<'_, T, D>,
    target: &dyn SequenceModel,
    q_of: &DraftDist<'_>,
    prompt: &[TokenId],
    n: usize,
    k: usize,
    prob: f64,
    acc: &mut HashMap<Vec<TokenId>, f64>,
) where
    T: SequenceModel + ?Sized,
    D: Drafter,
{
    let generated = session.generated();
    if generated.len() >= n {
        *acc.entry(generated[..n].to_vec()).or_insert(0.0) += prob;
        return;
    }
    let mut ctx = prompt.to_vec();
    ctx.extend_from_slice(generated);
    for o in cycle_outcomes(target, q_of, &ctx, k) {
        let mut next = session.clone();
        let mut script = Script::new(o.uniforms);
        let result = next.step(&mut script).unwrap();
        assert_eq!(result.emitted, o.emitted, "implementation left the predicted branch");
        assert!(script.exhausted(), "implementation consumed fewer uniforms than predicted");
        walk(&next, target, q_of, prompt, n, k, prob * o.prob, acc);
    }
}

/// Exact distribution of `n` tokens sampled autoregressively.
pub fn autoregressive_distribution(model: &dyn SequenceModel, prompt: &[TokenId], n: usize) -> HashMap<Vec<TokenId>, f64> {
    let mut acc = HashMap::new();
    let mut history = prompt.to_vec();
    ar_walk(model, &mut history, prompt.len(), n, 1.0, &mut acc);
    acc
}

fn ar_walk(
    model: &dyn SequenceModel,
    history: &mut Vec<TokenId>,
    start: usize,
    n: usize,
    prob: f64,
    acc: &mut HashMap<Vec<TokenId>, f64>,
) {
    if history.len() - start == n {
        *acc.entry(history[start..].to_vec()).or_insert(0.0) += prob;
        return;
    }
    let p = model.predict(history).unwrap();
    for (x, &px) in p.probs().iter().enumerate() {
        if px > 0.0 {
            history.push(TokenId(x as u32));
            ar_walk(model, history, start, n, prob * px, acc);
            history.pop();
        }
    }
}

/// Largest absolute difference over the union of supports.
pub fn max_deviation(a: &HashMap<Vec<TokenId>, f64>, b: &HashMap<Vec<TokenId>, f64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|key| (a.get(key).unwrap_or(&0.0) - b.get(key).unwrap_or(&0.0)).abs())
        .fold(0.0, f64::max)
}

pub fn probs(d: &ProbDist) -> Vec<f64> {
    d.probs().to_vec()
}

use dynexec_core::model::TableModel;
use dynexec_core::Rng;

/// A random target/draft pair with `V ≤ 4`, a prompt of length 1 or 2,
/// `N ≤ 3` and `K ≤ 2`.
pub struct Case {
    pub target: TableModel,
    pub draft: TableModel,
    pub prompt: Vec<TokenId>,
    pub n: usize,
    pub k: usize,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let v = 2 + rng.below(3);
    let target_order = rng.below(3);
    let zero_prob = if rng.uniform() < 0.3 { 0.3 } else { 0.0 };
    let target = TableModel::random(v, target_order, 1.5, zero_prob, 1.0, &mut rng).unwrap();
    let draft = match rng.below(3) {
        0 => target.perturbed(rng.uniform_range(0.1, 0.6), 0.1, &mut rng).unwrap(),
        _ => TableModel::random(v, rng.below(3), 1.0, zero_prob, 0.1, &mut rng).unwrap(),
    };
    let prompt = (0..1 + rng.below(2)).map(|_| TokenId(rng.below(v) as u32)).collect();
    Case { target, draft, prompt, n: 1 + rng.below(3), k: 1 + rng.below(2) }
}
