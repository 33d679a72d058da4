use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_DIFFICULTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// A 1-D Gaussian mixture target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<Component>,
}

impl MixtureSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let spec = Self { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(mean: f64, stddev: f64) -> Self {
        Self {
            components: vec![Component {
                weight: 1.0,
                mean,
                stddev,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("mixture has no components".into()));
        }
        for c in &self.components {
            if !(c.weight > 0.0 && c.stddev > 0.0 && c.mean.is_finite() && c.stddev.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad component {c:?}")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// `#components + Σ_{i<j} w_i w_j |μ_i - μ_j| / (σ_i + σ_j)`, clamped to
    /// `[0, 10]`.
    pub fn difficulty(&self) -> f64 {
        let c = &self.components;
        let mut separation = 0.0;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                separation += c[i].weight * c[j].weight * (c[i].mean - c[j].mean).abs()
                    / (c[i].stddev + c[j].stddev);
            }
        }
        (c.len() as f64 + separation).clamp(0.0, MAX_DIFFICULTY)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.stddev * c.stddev + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }

    /// Direct samples from the mixture.
    pub fn sample(&self, count: usize, rng: &mut Rng) -> Vec<f64> {
        (0..count)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut chosen = self.components.last().expect("non-empty");
                for c in &self.components {
                    acc += c.weight;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                chosen.mean + chosen.stddev * rng.normal()
            })
            .collect()
    }

    /// Mean and variance of `x0` given `x_t = √ᾱ x0 + √(1-ᾱ) ε`.
    pub fn posterior(&self, x_t: f64, alpha_bar: f64) -> (f64, f64) {
        let a = alpha_bar.sqrt();
        let noise = 1.0 - alpha_bar;
        let mut log_r = Vec::with_capacity(self.components.len());
        let mut moments = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let s2 = c.stddev * c.stddev;
            let v = alpha_bar * s2 + noise;
            let d = x_t - a * c.mean;
            log_r.push(c.weight.ln() - 0.5 * v.ln() - 0.5 * d * d / v);
            let m = c.mean + s2 * a * d / v;
            let var = s2 * noise / v;
            moments.push((m, var));
        }
        let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let (mut mean, mut second) = (0.0, 0.0);
        for (lr, (m, var)) in log_r.iter().zip(&moments) {
            let r = (lr - max).exp();
            total += r;
            mean += r * m;
            second += r * (var + m * m);
        }
        mean /= total;
        second /= total;
        (mean, (second - mean * mean).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(weight: f64, mean: f64, stddev: f64) -> Component {
        Component { weight, mean, stddev }
    }

    #[test]
    fn difficulty_formula() {
        assert_eq!(MixtureSpec::gaussian(0.0, 1.0).difficulty(), 1.0);
        let two = MixtureSpec::new(vec![comp(0.5, -1.0, 0.5), comp(0.5, 1.0, 0.5)]).unwrap();
        assert!((two.difficulty() - 2.5).abs() < 1e-12);
        let wide = MixtureSpec::new(vec![comp(0.5, -100.0, 0.1), comp(0.5, 100.0, 0.1)]).unwrap();
        assert_eq!(wide.difficulty(), MAX_DIFFICULTY);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MixtureSpec::new(vec![]).is_err());
        assert!(MixtureSpec::new(vec![comp(0.5, 0.0, 1.0)]).is_err());
        assert!(MixtureSpec::new(vec![comp(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn posterior_of_gaussian_is_closed_form() {
        let spec = MixtureSpec::gaussian(0.5, 2.0);
        let (ab, x) = (0.3_f64, 1.7);
        let v = ab * 4.0 + 0.7;
        let (m, var) = spec.posterior(x, ab);
        assert!((m - (0.5 + 4.0 * ab.sqrt() * (x - ab.sqrt() * 0.5) / v)).abs() < 1e-12);
        assert!((var - 4.0 * 0.7 / v).abs() < 1e-12);
    }

    #[test]
    fn posterior_at_zero_noise_is_identity() {
        let spec = MixtureSpec::new(vec![comp(0.3, -2.0, 0.2), comp(0.7, 1.0, 0.5)]).unwrap();
        let (m, var) = spec.posterior(0.9, 1.0);
        assert!((m - 0.9).abs() < 1e-12);
        assert!(var.abs() < 1e-12);
    }

    #[test]
    fn direct_samples_match_moments() {
        let spec = MixtureSpec::new(vec![comp(0.25, -2.0, 0.3), comp(0.75, 1.0, 0.6)]).unwrap();
        let xs = spec.sample(100_000, &mut Rng::new(3));
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - spec.mean()).abs() < 0.02);
        assert!((var - spec.variance()).abs() < 0.03);
    }
}
