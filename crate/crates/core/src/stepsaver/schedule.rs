use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 100;

/// Linear β schedule with cumulative products `ᾱ_t = Π_{s≤t} (1 - β_s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `T` betas linearly spaced from `1e-4 · 1000/T` to `0.02 · 1000/T`:
    /// the classic 1000-step range, rescaled so that `ᾱ_T ≈ 0` for any `T`.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(format!("T = {steps} must be >= 2")));
        }
        let scale = 1000.0 / steps as f64;
        let (start, end) = (1e-4 * scale, 0.02 * scale);
        let betas = (0..steps)
            .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidParameter("betas must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `s` timesteps evenly spaced over `[0, T-1]`, descending, always
    /// starting at `T-1`; `s = 1` is the single timestep `T-1`.
    pub fn respaced(&self, s: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if s == 0 || s > t {
            return Err(Error::StepsOutOfRange { steps: s, max: t });
        }
        if s == 1 {
            return Ok(vec![t - 1]);
        }
        let mut ts: Vec<usize> = (0..s)
            .map(|i| ((i * (t - 1)) as f64 / (s - 1) as f64).round() as usize)
            .collect();
        ts.dedup();
        ts.reverse();
        Ok(ts)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(99) < 1e-4);
        assert!(s.alpha_bar(0) > 0.99);
    }

    #[test]
    fn respacing() {
        let s = NoiseSchedule::default();
        assert_eq!(s.respaced(1).unwrap(), vec![99]);
        assert_eq!(s.respaced(2).unwrap(), vec![99, 0]);
        assert_eq!(s.respaced(100).unwrap(), (0..100).rev().collect::<Vec<_>>());
        for k in 1..=100 {
            assert_eq!(s.respaced(k).unwrap().len(), k);
        }
        assert!(matches!(s.respaced(0), Err(Error::StepsOutOfRange { .. })));
        assert!(matches!(s.respaced(101), Err(Error::StepsOutOfRange { .. })));
    }
}
