//! Ground-truth link-delay distributions for the simulation studies.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::gamma as gamma_fn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParametricError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quantile probability must lie in (0, 1), got {0}")]
    QuantileDomain(f64),
}

/// A simulation-side delay distribution with closed-form (or quadrature)
/// moments, CF, CDF and quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParametricModel {
    /// Probabilities over the integer grid `{0, 1, ..., len-1}`.
    DiscreteGrid { probs: Vec<f64> },
    Exponential { mean: f64 },
    Gamma { shape: f64, mean: f64 },
    Weibull { shape: f64, scale: f64 },
    Mixture {
        weights: Vec<f64>,
        components: Vec<ParametricModel>,
    },
}

impl ParametricModel {
    pub fn discrete_grid(probs: Vec<f64>) -> Result<Self, ParametricError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ParametricError::InvalidParameter(format!(
                "grid probabilities must be a simplex vector, got {probs:?}"
            )));
        }
        Ok(Self::DiscreteGrid { probs })
    }

    pub fn exponential(mean: f64) -> Result<Self, ParametricError> {
        if !(mean > 0.0) {
            return Err(ParametricError::InvalidParameter(format!(
                "exponential mean {mean}"
            )));
        }
        Ok(Self::Exponential { mean })
    }

    pub fn gamma_with_mean(shape: f64, mean: f64) -> Result<Self, ParametricError> {
        if !(shape > 0.0 && mean > 0.0) {
            return Err(ParametricError::InvalidParameter(format!(
                "gamma shape {shape}, mean {mean}"
            )));
        }
        Ok(Self::Gamma { shape, mean })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self, ParametricError> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(ParametricError::InvalidParameter(format!(
                "weibull shape {shape}, scale {scale}"
            )));
        }
        Ok(Self::Weibull { shape, scale })
    }

    pub fn weibull_with_mean(shape: f64, mean: f64) -> Result<Self, ParametricError> {
        let scale = mean / gamma_fn(1.0 + 1.0 / shape);
        Self::weibull(shape, scale)
    }

    pub fn mixture(
        weights: Vec<f64>,
        components: Vec<ParametricModel>,
    ) -> Result<Self, ParametricError> {
        let sum: f64 = weights.iter().sum();
        if weights.len() != components.len()
            || weights.iter().any(|w| *w < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(ParametricError::InvalidParameter(
                "mixture weights must be a simplex vector matching components".into(),
            ));
        }
        Ok(Self::Mixture {
            weights,
            components,
        })
    }

    /// Point mass at zero; used to inject zero-delay atoms into mixtures.
    pub fn zero_atom() -> Self {
        Self::DiscreteGrid { probs: vec![1.0] }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::DiscreteGrid { probs } => probs
                .iter()
                .enumerate()
                .map(|(k, p)| k as f64 * p)
                .sum(),
            Self::Exponential { mean } => *mean,
            Self::Gamma { mean, .. } => *mean,
            Self::Weibull { shape, scale } => scale * gamma_fn(1.0 + 1.0 / shape),
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.mean())
                .sum(),
        }
    }

    fn second_moment(&self) -> f64 {
        match self {
            Self::DiscreteGrid { probs } => probs
                .iter()
                .enumerate()
                .map(|(k, p)| (k * k) as f64 * p)
                .sum(),
            Self::Exponential { mean } => 2.0 * mean * mean,
            Self::Gamma { shape, mean } => {
                let scale = mean / shape;
                shape * scale * scale + mean * mean
            }
            Self::Weibull { shape, scale } => scale * scale * gamma_fn(1.0 + 2.0 / shape),
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.second_moment())
                .sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment() - self.mean().powi(2)).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn cf(&self, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        match self {
            Self::DiscreteGrid { probs } => probs
                .iter()
                .enumerate()
                .map(|(k, p)| p * Complex64::cis(t * k as f64))
                .sum(),
            Self::Exponential { mean } => (Complex64::new(1.0, -t * mean)).inv(),
            Self::Gamma { shape, mean } => {
                let scale = mean / shape;
                Complex64::new(1.0, -t * scale).powf(-shape)
            }
            Self::Weibull { shape, scale } => weibull_cf(*shape, *scale, t),
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.cf(t))
                .sum(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::DiscreteGrid { probs } => {
                if x < 0.0 {
                    0.0
                } else {
                    let top = (x.floor() as usize).min(probs.len() - 1);
                    probs[..=top].iter().sum()
                }
            }
            Self::Exponential { mean } => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0 - (-x / mean).exp()
                }
            }
            Self::Gamma { shape, mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let rate = shape / mean;
                    statrs::distribution::Gamma::new(*shape, rate)
                        .expect("validated parameters")
                        .cdf(x)
                }
            }
            Self::Weibull { shape, scale } => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0 - (-(x / scale).powf(*shape)).exp()
                }
            }
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.cdf(x))
                .sum(),
        }
    }

    /// Generalized inverse CDF for p in (0, 1).
    pub fn quantile(&self, p: f64) -> Result<f64, ParametricError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ParametricError::QuantileDomain(p));
        }
        Ok(match self {
            Self::DiscreteGrid { probs } => {
                let mut cum = 0.0;
                let mut value = (probs.len() - 1) as f64;
                for (k, w) in probs.iter().enumerate() {
                    cum += w;
                    if p <= cum {
                        value = k as f64;
                        break;
                    }
                }
                value
            }
            Self::Exponential { mean } => -mean * (1.0 - p).ln(),
            Self::Gamma { shape, mean } => {
                let rate = shape / mean;
                statrs::distribution::Gamma::new(*shape, rate)
                    .expect("validated parameters")
                    .inverse_cdf(p)
            }
            Self::Weibull { shape, scale } => scale * (-(1.0 - p).ln()).powf(1.0 / shape),
            Self::Mixture { .. } => {
                if self.cdf(0.0) >= p {
                    return Ok(0.0);
                }
                // Bisection; mixtures have no joint closed form.
                let mut hi = 1.0;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                    if hi > 1e12 {
                        break;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::DiscreteGrid { probs } => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (k, w) in probs.iter().enumerate() {
                    cum += w;
                    if u < cum {
                        return k as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Self::Exponential { mean } => rand_distr::Exp::new(1.0 / mean)
                .expect("validated parameters")
                .sample(rng),
            Self::Gamma { shape, mean } => rand_distr::Gamma::new(*shape, mean / shape)
                .expect("validated parameters")
                .sample(rng),
            Self::Weibull { shape, scale } => rand_distr::Weibull::new(*scale, *shape)
                .expect("validated parameters")
                .sample(rng),
            Self::Mixture {
                weights,
                components,
            } => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    cum += w;
                    if u < cum {
                        return c.sample(rng);
                    }
                }
                components.last().expect("nonempty mixture").sample(rng)
            }
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Weibull CF by quadrature. Substituting u = (x/scale)^shape turns
/// E[e^{itX}] into ∫₀^∞ e^{it·scale·u^{1/shape}} e^{-u} du, which removes the
/// density singularity at 0 for shape < 1; composite Simpson then converges.
fn weibull_cf(shape: f64, scale: f64, t: f64) -> Complex64 {
    let upper = 50.0;
    let n = 8192;
    let h = upper / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..=n {
        let u = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (-u).exp() * Complex64::cis(t * scale * u.powf(1.0 / shape));
    }
    acc * (h / 3.0)
}
