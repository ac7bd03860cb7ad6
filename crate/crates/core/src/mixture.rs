//! The estimable link-delay model: a finite mixture of fixed basis kernels
//! with unknown mixing probabilities.
//!
//! The continuous layout is an optional point mass at zero, piecewise-uniform
//! bins over `[0, b_last]`, and a shifted exponential tail on
//! `[b_last, ∞)`. A pure point-mass grid layout covers discrete delay
//! studies. Kernels are fixed up front; only the weights are estimated.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bin endpoints must start at 0 and strictly increase, got {0:?}")]
    BadEndpoints(Vec<f64>),
    #[error("tail scale must be positive, got {0}")]
    BadTailScale(f64),
    #[error("grid points must be finite, nonnegative and strictly increasing")]
    BadGrid,
    #[error("weights invalid: {0}")]
    BadWeights(String),
    #[error("weight count {got} does not match component count {want}")]
    WeightCount { got: usize, want: usize },
    #[error("quantile probability must lie in (0, 1), got {0}")]
    QuantileDomain(f64),
}

/// One mixture component. Constructors keep kernels ordered by support so
/// the quantile walk below is a valid generalized inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    PointMass { at: f64 },
    Uniform { lo: f64, hi: f64 },
    ExpTail { start: f64, scale: f64 },
}

impl Kernel {
    /// Characteristic function of the component at frequency `t`.
    pub fn cf(&self, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        match *self {
            Kernel::PointMass { at } => Complex64::cis(t * at),
            Kernel::Uniform { lo, hi } => {
                // exp(it(lo+hi)/2) · sinc(t(hi-lo)/2); algebraically equal to
                // (e^{it·hi} − e^{it·lo}) / (it(hi−lo)) but stable as t → 0.
                Complex64::cis(t * 0.5 * (lo + hi)) * sinc(t * 0.5 * (hi - lo))
            }
            Kernel::ExpTail { start, scale } => {
                Complex64::cis(t * start) / Complex64::new(1.0, -t * scale)
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Kernel::PointMass { at } => at,
            Kernel::Uniform { lo, hi } => 0.5 * (lo + hi),
            Kernel::ExpTail { start, scale } => start + scale,
        }
    }

    fn second_moment(&self) -> f64 {
        match *self {
            Kernel::PointMass { at } => at * at,
            Kernel::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
            Kernel::ExpTail { start, scale } => {
                start * start + 2.0 * start * scale + 2.0 * scale * scale
            }
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Kernel::PointMass { at } => {
                if x >= at {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Kernel::ExpTail { start, scale } => {
                if x < start {
                    0.0
                } else {
                    1.0 - (-(x - start) / scale).exp()
                }
            }
        }
    }

    /// Inverse CDF for p in [0, 1).
    fn quantile(&self, p: f64) -> f64 {
        match *self {
            Kernel::PointMass { at } => at,
            Kernel::Uniform { lo, hi } => lo + p * (hi - lo),
            Kernel::ExpTail { start, scale } => start - scale * (1.0 - p).ln(),
        }
    }
}

/// sin(x)/x with a 6th-order series near zero to dodge cancellation; the
/// subproblem assembly hits tiny arguments constantly.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Fixed basis layout for one link.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    link: usize,
    kernels: Vec<Kernel>,
}

impl MixtureSpec {
    /// Continuous layout: optional zero atom, uniform bins over the given
    /// endpoints (first must be 0, strictly increasing), exponential tail
    /// from the last endpoint.
    pub fn continuous(
        link: usize,
        zero_atom: bool,
        endpoints: &[f64],
        tail_scale: f64,
    ) -> Result<Self, ModelError> {
        if endpoints.len() < 2
            || endpoints[0] != 0.0
            || endpoints.windows(2).any(|w| !(w[1] > w[0]))
            || endpoints.iter().any(|e| !e.is_finite())
        {
            return Err(ModelError::BadEndpoints(endpoints.to_vec()));
        }
        if !(tail_scale > 0.0) || !tail_scale.is_finite() {
            return Err(ModelError::BadTailScale(tail_scale));
        }
        let mut kernels = Vec::with_capacity(endpoints.len() + 1);
        if zero_atom {
            kernels.push(Kernel::PointMass { at: 0.0 });
        }
        for w in endpoints.windows(2) {
            kernels.push(Kernel::Uniform { lo: w[0], hi: w[1] });
        }
        kernels.push(Kernel::ExpTail {
            start: *endpoints.last().unwrap(),
            scale: tail_scale,
        });
        Ok(Self { link, kernels })
    }

    /// Discrete layout: point masses at the given strictly increasing
    /// nonnegative locations.
    pub fn discrete_grid(link: usize, points: &[f64]) -> Result<Self, ModelError> {
        if points.is_empty()
            || points.iter().any(|p| !p.is_finite() || *p < 0.0)
            || points.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(ModelError::BadGrid);
        }
        Ok(Self {
            link,
            kernels: points.iter().map(|&at| Kernel::PointMass { at }).collect(),
        })
    }

    /// Point masses at `{0, 1, ..., states-1}`.
    pub fn integer_grid(link: usize, states: usize) -> Result<Self, ModelError> {
        let points: Vec<f64> = (0..states).map(|v| v as f64).collect();
        Self::discrete_grid(link, &points)
    }

    pub fn link(&self) -> usize {
        self.link
    }

    pub fn n_components(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn include_zero_atom(&self) -> bool {
        matches!(self.kernels.first(), Some(Kernel::PointMass { at }) if *at == 0.0)
            && self.kernels.len() > 1
            && !matches!(self.kernels[1], Kernel::PointMass { .. })
    }

    /// Bin boundary points of a continuous layout, or `None` for grids.
    pub fn bin_endpoints(&self) -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for k in &self.kernels {
            if let Kernel::Uniform { lo, hi } = *k {
                if out.is_empty() {
                    out.push(lo);
                }
                out.push(hi);
            }
        }
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }

    pub fn tail_scale(&self) -> Option<f64> {
        self.kernels.iter().find_map(|k| match *k {
            Kernel::ExpTail { scale, .. } => Some(scale),
            _ => None,
        })
    }

    pub fn grid_points(&self) -> Option<Vec<f64>> {
        let pts: Vec<f64> = self
            .kernels
            .iter()
            .filter_map(|k| match *k {
                Kernel::PointMass { at } => Some(at),
                _ => None,
            })
            .collect();
        if pts.len() == self.kernels.len() {
            Some(pts)
        } else {
            None
        }
    }

    /// CF of basis component `index` at frequency `t`.
    pub fn basis_cf(&self, index: usize, t: f64) -> Complex64 {
        self.kernels[index].cf(t)
    }

    /// All component CFs at `t`, written into `out`.
    pub fn basis_cf_into(&self, t: f64, out: &mut [Complex64]) {
        for (slot, kernel) in out.iter_mut().zip(&self.kernels) {
            *slot = kernel.cf(t);
        }
    }

    /// Mixture CF Σ_l p_l φ_l(t).
    pub fn cf(&self, weights: &MixtureWeights, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        self.kernels
            .iter()
            .zip(weights.as_slice())
            .map(|(k, &p)| p * k.cf(t))
            .sum()
    }

    /// Continuous density at `x`; point masses are excluded (see [`Self::atoms`]).
    pub fn density(&self, weights: &MixtureWeights, x: f64) -> f64 {
        self.kernels
            .iter()
            .zip(weights.as_slice())
            .map(|(k, &p)| match *k {
                Kernel::PointMass { .. } => 0.0,
                Kernel::Uniform { lo, hi } => {
                    if x >= lo && x < hi {
                        p / (hi - lo)
                    } else {
                        0.0
                    }
                }
                Kernel::ExpTail { start, scale } => {
                    if x >= start {
                        p / scale * (-(x - start) / scale).exp()
                    } else {
                        0.0
                    }
                }
            })
            .sum()
    }

    /// Point masses as explicit (location, mass) pairs.
    pub fn atoms(&self, weights: &MixtureWeights) -> Vec<(f64, f64)> {
        self.kernels
            .iter()
            .zip(weights.as_slice())
            .filter_map(|(k, &p)| match *k {
                Kernel::PointMass { at } if p > 0.0 => Some((at, p)),
                _ => None,
            })
            .collect()
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, weights: &MixtureWeights, x: f64) -> f64 {
        self.kernels
            .iter()
            .zip(weights.as_slice())
            .map(|(k, &p)| p * k.cdf(x))
            .sum()
    }

    /// Generalized inverse CDF: inf{x : F(x) ≥ p} for p in (0, 1).
    pub fn quantile(&self, weights: &MixtureWeights, p: f64) -> Result<f64, ModelError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ModelError::QuantileDomain(p));
        }
        let mut cum = 0.0;
        for (k, &w) in self.kernels.iter().zip(weights.as_slice()) {
            if w <= 0.0 {
                continue;
            }
            if p <= cum + w {
                return Ok(k.quantile((p - cum) / w));
            }
            cum += w;
        }
        // p exceeded the accumulated mass by rounding dust; land on the
        // supremum of the last weighted component.
        let last = self
            .kernels
            .iter()
            .zip(weights.as_slice())
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, _)| k)
            .next_back()
            .expect("weights sum to 1");
        Ok(last.quantile(1.0 - f64::EPSILON))
    }

    pub fn mean(&self, weights: &MixtureWeights) -> f64 {
        self.kernels
            .iter()
            .zip(weights.as_slice())
            .map(|(k, &p)| p * k.mean())
            .sum()
    }

    pub fn variance(&self, weights: &MixtureWeights) -> f64 {
        let mean = self.mean(weights);
        let second: f64 = self
            .kernels
            .iter()
            .zip(weights.as_slice())
            .map(|(k, &p)| p * k.second_moment())
            .sum();
        (second - mean * mean).max(0.0)
    }

    /// Inverse-transform sampling.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        weights: &MixtureWeights,
        rng: &mut R,
        count: usize,
    ) -> Vec<f64> {
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                self.quantile(weights, u.min(1.0 - f64::EPSILON))
                    .expect("u in (0,1)")
            })
            .collect()
    }
}

/// Mixing probabilities on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    /// Validates nonnegativity and normalizes the sum to 1 (rejecting totals
    /// further than 1e-6 from 1, which indicate a logic bug upstream).
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::BadWeights("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ModelError::BadWeights(format!(
                "negative or non-finite entry in {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::BadWeights(format!("sum {sum} far from 1")));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Uniform draw from the simplex via normalized exponential spacings.
    pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut draws: Vec<f64> = (0..n)
            .map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln())
            .collect();
        let sum: f64 = draws.iter().sum();
        for d in &mut draws {
            *d /= sum;
        }
        Self(draws)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A spec paired with fitted weights; the serialization unit for results.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedMixture {
    pub spec: MixtureSpec,
    pub weights: MixtureWeights,
}

impl FittedMixture {
    pub fn cf(&self, t: f64) -> Complex64 {
        self.spec.cf(&self.weights, t)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.spec.density(&self.weights, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.spec.cdf(&self.weights, x)
    }

    pub fn quantile(&self, p: f64) -> Result<f64, ModelError> {
        self.spec.quantile(&self.weights, p)
    }

    pub fn mean(&self) -> f64 {
        self.spec.mean(&self.weights)
    }

    pub fn variance(&self) -> f64 {
        self.spec.variance(&self.weights)
    }
}

/// JSON form of a fitted link model. Continuous layouts carry
/// `zero_atom`/`bins`/`tail_scale`; grid layouts carry `grid`.
#[derive(Debug, Serialize, Deserialize)]
struct FittedMixtureRepr {
    link: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_atom: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bins: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    weights: Vec<f64>,
}

impl Serialize for FittedMixture {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = if let Some(grid) = self.spec.grid_points() {
            FittedMixtureRepr {
                link: self.spec.link(),
                zero_atom: None,
                bins: None,
                tail_scale: None,
                grid: Some(grid),
                weights: self.weights.as_slice().to_vec(),
            }
        } else {
            FittedMixtureRepr {
                link: self.spec.link(),
                zero_atom: Some(self.spec.include_zero_atom()),
                bins: self.spec.bin_endpoints(),
                tail_scale: self.spec.tail_scale(),
                grid: None,
                weights: self.weights.as_slice().to_vec(),
            }
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FittedMixture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = FittedMixtureRepr::deserialize(deserializer)?;
        let spec = if let Some(grid) = repr.grid {
            MixtureSpec::discrete_grid(repr.link, &grid).map_err(D::Error::custom)?
        } else {
            let bins = repr
                .bins
                .ok_or_else(|| D::Error::custom("missing bins or grid"))?;
            MixtureSpec::continuous(
                repr.link,
                repr.zero_atom.unwrap_or(false),
                &bins,
                repr.tail_scale
                    .ok_or_else(|| D::Error::custom("missing tail_scale"))?,
            )
            .map_err(D::Error::custom)?
        };
        let weights = MixtureWeights::new(repr.weights).map_err(D::Error::custom)?;
        if weights.len() != spec.n_components() {
            return Err(D::Error::custom("weight count mismatch"));
        }
        Ok(FittedMixture { spec, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Composite-Simpson CF of a density on [lo, hi]; test-side oracle.
    fn simpson_cf(density: impl Fn(f64) -> f64, lo: f64, hi: f64, t: f64, n: usize) -> Complex64 {
        let h = (hi - lo) / n as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * density(x) * Complex64::cis(t * x);
        }
        acc * (h / 3.0)
    }

    fn unit_spec() -> (MixtureSpec, MixtureWeights) {
        let spec = MixtureSpec::continuous(1, true, &[0.0, 1.0, 2.5], 1.5).unwrap();
        let w = MixtureWeights::new(vec![0.3, 0.25, 0.25, 0.2]).unwrap();
        (spec, w)
    }

    #[test]
    fn uniform_cf_values() {
        let k = Kernel::Uniform { lo: 0.0, hi: 1.0 };
        assert_eq!(k.cf(0.0), Complex64::new(1.0, 0.0));
        // Quadrature oracle and the closed form 2i/π agree at t = π.
        let oracle = simpson_cf(|_| 1.0, 0.0, 1.0, PI, 4000);
        let got = k.cf(PI);
        assert_relative_eq!(got.re, oracle.re, epsilon = 1e-10);
        assert_relative_eq!(got.im, oracle.im, epsilon = 1e-10);
        assert_relative_eq!(got.im, 2.0 / PI, epsilon = 1e-12);
        assert!(got.re.abs() < 1e-12);
    }

    #[test]
    fn uniform_cf_tiny_argument_is_smooth() {
        let k = Kernel::Uniform { lo: 0.0, hi: 1.0 };
        // Around the series/direct switchover (t·(hi−lo)/2 = 1e-4) the value
        // must agree with the subtraction form (e^{it·hi} − e^{it·lo})/(it).
        for t in [1.999e-4, 2.0e-4, 2.001e-4, 1e-6, 1e-9] {
            let direct = (Complex64::cis(t) - Complex64::new(1.0, 0.0)) / Complex64::new(0.0, t);
            assert!((k.cf(t) - direct).norm() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn exp_tail_cf() {
        let k = Kernel::ExpTail {
            start: 5.0,
            scale: 2.0,
        };
        assert_eq!(k.cf(0.0), Complex64::new(1.0, 0.0));
        let density = |x: f64| {
            if x >= 5.0 {
                0.5 * (-(x - 5.0) / 2.0).exp()
            } else {
                0.0
            }
        };
        let oracle = simpson_cf(density, 5.0, 5.0 + 2.0 * 45.0, 0.7, 200_000);
        let got = k.cf(0.7);
        assert!((got - oracle).norm() < 1e-8);
    }

    #[test]
    fn point_mass_mixture_cf_is_one() {
        let spec = MixtureSpec::continuous(0, true, &[0.0, 1.0], 1.0).unwrap();
        let w = MixtureWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        for t in [-3.0, 0.0, 0.4, 11.0] {
            assert_eq!(spec.cf(&w, t), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn mixture_cf_of_adjacent_bins_matches_quadrature() {
        let spec = MixtureSpec::continuous(0, false, &[0.0, 1.0, 2.0], 1.0).unwrap();
        let w = MixtureWeights::new(vec![0.5, 0.5, 0.0]).unwrap();
        let oracle = simpson_cf(|_| 0.5, 0.0, 2.0, 1.0, 4000);
        let got = spec.cf(&w, 1.0);
        assert!((got - oracle).norm() < 1e-10);
        // Equals the average of the two uniform CFs.
        let avg = 0.5 * (spec.basis_cf(0, 1.0) + spec.basis_cf(1, 1.0));
        assert!((got - avg).norm() < 1e-15);
    }

    #[test]
    fn cdf_and_atoms() {
        let (spec, w) = unit_spec();
        assert_relative_eq!(spec.cdf(&w, 0.0), 0.3, epsilon = 1e-15);
        assert_relative_eq!(spec.cdf(&w, -1e-9), 0.0, epsilon = 1e-15);
        assert_relative_eq!(spec.cdf(&w, 1e9), 1.0, epsilon = 1e-12);
        assert_eq!(spec.atoms(&w), vec![(0.0, 0.3)]);
        // Mass accounting: atom + piecewise quadrature of the continuous
        // part, with panels aligned to the kernel supports.
        let mut quad = 0.0;
        for (lo, hi, n) in [(0.0, 1.0, 1000), (1.0, 2.5, 1000), (2.5, 2.5 + 1.5 * 50.0, 200_000)] {
            let h = (hi - lo) / n as f64;
            for i in 0..n {
                quad += spec.density(&w, lo + (i as f64 + 0.5) * h) * h;
            }
        }
        assert_relative_eq!(0.3 + quad, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn quantile_round_trip_in_bin_interior() {
        let (spec, w) = unit_spec();
        for x in [0.2, 0.6, 1.1, 2.0, 3.2] {
            let p = spec.cdf(&w, x);
            let back = spec.quantile(&w, p).unwrap();
            assert_relative_eq!(back, x, epsilon = 1e-10);
        }
        assert!(spec.quantile(&w, 0.0).is_err());
        assert!(spec.quantile(&w, 1.0).is_err());
        // Inside the atom's mass the generalized inverse sits at 0.
        assert_eq!(spec.quantile(&w, 0.15).unwrap(), 0.0);
    }

    #[test]
    fn sampling_matches_cdf() {
        let (spec, w) = unit_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = spec.sample(&w, &mut rng, 200_000);
        assert!(samples.iter().all(|&x| x >= 0.0));
        let below: f64 = samples.iter().filter(|&&x| x <= 1.0).count() as f64;
        let frac = below / samples.len() as f64;
        assert_relative_eq!(frac, spec.cdf(&w, 1.0), epsilon = 0.01);
    }

    #[test]
    fn grid_spec_quantile_is_step() {
        let spec = MixtureSpec::integer_grid(0, 3).unwrap();
        let w = MixtureWeights::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(spec.quantile(&w, 0.5).unwrap(), 0.0);
        assert_eq!(spec.quantile(&w, 0.500001).unwrap(), 1.0);
        assert_eq!(spec.quantile(&w, 0.81).unwrap(), 2.0);
    }

    #[test]
    fn weights_validation() {
        assert!(MixtureWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(MixtureWeights::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(MixtureWeights::new(vec![0.2, 0.2]).is_err());
        let w = MixtureWeights::new(vec![0.25, 0.75000000001]).unwrap();
        let total: f64 = w.as_slice().iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(MixtureSpec::continuous(0, false, &[0.0, 1.0], 0.0).is_err());
        assert!(MixtureSpec::continuous(0, false, &[0.1, 1.0], 1.0).is_err());
        assert!(MixtureSpec::continuous(0, false, &[0.0, 1.0, 1.0], 1.0).is_err());
        assert!(MixtureSpec::discrete_grid(0, &[]).is_err());
        assert!(MixtureSpec::discrete_grid(0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn fitted_mixture_json_round_trip() {
        let (spec, weights) = unit_spec();
        let fitted = FittedMixture { spec, weights };
        let json = serde_json::to_string(&fitted).unwrap();
        let back: FittedMixture = serde_json::from_str(&json).unwrap();
        assert_eq!(fitted, back);

        let grid = FittedMixture {
            spec: MixtureSpec::integer_grid(3, 4).unwrap(),
            weights: MixtureWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        };
        let json = serde_json::to_string(&grid).unwrap();
        let back: FittedMixture = serde_json::from_str(&json).unwrap();
        assert_eq!(grid, back);
    }

    proptest! {
        #[test]
        fn cf_properties(
            raw in proptest::collection::vec(0.01f64..1.0, 4),
            t in -50.0f64..50.0,
        ) {
            let sum: f64 = raw.iter().sum();
            let w = MixtureWeights::new(raw.iter().map(|x| x / sum).collect()).unwrap();
            let spec = MixtureSpec::continuous(0, true, &[0.0, 0.7, 2.0], 1.2).unwrap();
            let phi = spec.cf(&w, t);
            prop_assert!(phi.norm() <= 1.0 + 1e-12);
            prop_assert_eq!(spec.cf(&w, 0.0), Complex64::new(1.0, 0.0));
            let conj_gap = (spec.cf(&w, -t) - phi.conj()).norm();
            prop_assert!(conj_gap <= 1e-14);
        }

        #[test]
        fn cdf_monotone_quantile_monotone(
            raw in proptest::collection::vec(0.01f64..1.0, 5),
            xs in proptest::collection::vec(0.0f64..8.0, 2),
            ps in proptest::collection::vec(0.001f64..0.999, 2),
        ) {
            let sum: f64 = raw.iter().sum();
            let w = MixtureWeights::new(raw.iter().map(|x| x / sum).collect()).unwrap();
            let spec = MixtureSpec::continuous(0, true, &[0.0, 0.5, 1.5, 3.0], 2.0).unwrap();
            let (xa, xb) = (xs[0].min(xs[1]), xs[0].max(xs[1]));
            prop_assert!(spec.cdf(&w, xa) <= spec.cdf(&w, xb) + 1e-12);
            let (pa, pb) = (ps[0].min(ps[1]), ps[0].max(ps[1]));
            let qa = spec.quantile(&w, pa).unwrap();
            let qb = spec.quantile(&w, pb).unwrap();
            prop_assert!(qa <= qb + 1e-12);
        }
    }
}
