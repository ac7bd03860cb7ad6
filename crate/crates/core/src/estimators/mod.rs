//! Mixture-weight estimation by iterative quadratic programming.
//!
//! The model CF of `Y` is a product over links, and it is affine in any one
//! link's weight vector when the others are held fixed. Cycling over links
//! therefore reduces the squared-residual objective to a sequence of small
//! simplex-constrained QPs, each solved exactly, so the objective never
//! increases. The WCF variant whitens the residuals with the covariance
//! matrix `W + δI` estimated from an initial CF fit.

mod em;

pub use em::{fit_mle_discrete, EmConfig};

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cf::{
    check_dims, empirical_cf_all, sample_frequencies, weight_matrix, CfError, FrequencySet,
    MeasurementSet,
};
use crate::mixture::{FittedMixture, MixtureSpec, MixtureWeights, ModelError};
use crate::qp::{solve_simplex_qp, QpError, QuadraticSubproblem};
use crate::topology::RoutingMatrix;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("quadratic subproblem for link {link}: {source}")]
    Qp { link: usize, source: QpError },
    #[error("residual covariance not invertible even with ridge {delta:.3e}")]
    WeightMatrixSingular { delta: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("discrete grid data: {0}")]
    GridData(String),
    #[error("joint support of {states} states on {links} links exceeds the enumeration budget")]
    Budget { states: usize, links: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cf,
    Wcf,
    Mle,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Cf => write!(f, "cf"),
            Variant::Wcf => write!(f, "wcf"),
            Variant::Mle => write!(f, "mle"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub variant: Variant,
    /// Frequency points for the CF objective.
    pub k_frequencies: usize,
    /// Frequency points for the WCF objective; the weighted solve is cubic in
    /// this count, so it defaults lower than `k_frequencies`.
    pub wcf_frequencies: Option<usize>,
    /// Gaussian scale of the sampled frequencies (applied to normalized
    /// coordinates).
    pub t_scale: f64,
    pub max_outer_iters: usize,
    /// Stop when the relative objective decrease over one sweep falls below
    /// this.
    pub objective_tol: f64,
    /// Ridge added to the residual covariance; defaults to N^{-1/2}.
    pub delta: Option<f64>,
    pub qp_tolerance: f64,
    /// Coordinate descent can stall in a local minimum; extra starts draw
    /// random simplex initializations. The first start is always uniform.
    pub starts: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cf,
            k_frequencies: 3000,
            wcf_frequencies: Some(480),
            t_scale: 5.0,
            max_outer_iters: 50,
            objective_tol: 1e-6,
            delta: None,
            qp_tolerance: 1e-9,
            starts: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn cf() -> Self {
        Self::default()
    }

    pub fn wcf() -> Self {
        Self {
            variant: Variant::Wcf,
            ..Self::default()
        }
    }
}

/// Outcome of a fit: per-link weights plus the objective trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub variant: Variant,
    pub weights: Vec<MixtureWeights>,
    /// Objective value at initialization and after each outer sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl EstimationResult {
    /// Largest single-sweep objective increase (0 for a monotone trace).
    pub fn max_objective_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    pub fn fitted(&self, specs: &[MixtureSpec]) -> Vec<FittedMixture> {
        specs
            .iter()
            .zip(&self.weights)
            .map(|(spec, weights)| FittedMixture {
                spec: spec.clone(),
                weights: weights.clone(),
            })
            .collect()
    }
}

/// JSON form of a fit together with its specs.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub variant: Variant,
    pub links: Vec<FittedMixture>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl ResultFile {
    pub fn new(result: &EstimationResult, specs: &[MixtureSpec]) -> Self {
        Self {
            variant: result.variant,
            links: result.fitted(specs),
            objective_trace: result.objective_trace.clone(),
            iterations: result.iterations,
            converged: result.converged,
            wall_time_s: result.wall_time_s,
        }
    }
}

/// Per-fit state: the empirical CF, the basis CF table of every link at its
/// scalar arguments `t_k·A^j`, and the current per-link mixture CFs. Only the
/// updated link's row is recomputed inside the sweep.
pub struct CfEngine<'a> {
    specs: &'a [MixtureSpec],
    freqs: &'a FrequencySet,
    n_samples: usize,
    emp: Vec<Complex64>,
    basis: Vec<Vec<Complex64>>,
    link_cf: Vec<Vec<Complex64>>,
    weights: Vec<MixtureWeights>,
}

impl<'a> CfEngine<'a> {
    pub fn new(
        measurements: &MeasurementSet,
        a: &'a RoutingMatrix,
        specs: &'a [MixtureSpec],
        freqs: &'a FrequencySet,
        init: Vec<MixtureWeights>,
    ) -> Result<Self, EstimatorError> {
        check_dims(measurements, a, specs, freqs)?;
        if init.len() != specs.len()
            || init
                .iter()
                .zip(specs)
                .any(|(w, s)| w.len() != s.n_components())
        {
            return Err(EstimatorError::Config(
                "initial weights do not match spec component counts".into(),
            ));
        }
        let emp = empirical_cf_all(measurements, freqs);
        let k = freqs.len();
        let mut basis = Vec::with_capacity(specs.len());
        for (j, spec) in specs.iter().enumerate() {
            let n = spec.n_components();
            let mut table = vec![Complex64::new(0.0, 0.0); k * n];
            for (ki, point) in freqs.points.iter().enumerate() {
                let arg = point.dot_column(a, j);
                spec.basis_cf_into(arg, &mut table[ki * n..(ki + 1) * n]);
            }
            basis.push(table);
        }
        let mut engine = Self {
            specs,
            freqs,
            n_samples: measurements.len(),
            emp,
            basis,
            link_cf: vec![Vec::new(); specs.len()],
            weights: init,
        };
        for j in 0..specs.len() {
            engine.refresh_link_cf(j);
        }
        Ok(engine)
    }

    fn refresh_link_cf(&mut self, j: usize) {
        let n = self.specs[j].n_components();
        let w = self.weights[j].as_slice();
        let table = &self.basis[j];
        self.link_cf[j] = (0..self.freqs.len())
            .map(|k| {
                table[k * n..(k + 1) * n]
                    .iter()
                    .zip(w)
                    .map(|(phi, &p)| p * phi)
                    .sum()
            })
            .collect();
    }

    pub fn set_link_weights(&mut self, j: usize, weights: MixtureWeights) {
        self.weights[j] = weights;
        self.refresh_link_cf(j);
    }

    pub fn weights(&self) -> &[MixtureWeights] {
        &self.weights
    }

    pub fn empirical(&self) -> &[Complex64] {
        &self.emp
    }

    fn model_cf_at(&self, k: usize) -> Complex64 {
        self.link_cf
            .iter()
            .map(|row| row[k])
            .product()
    }

    /// Π_{l≠j} φ_{X_l}(t_k·A^l) for every k.
    fn products_excluding(&self, j: usize) -> Vec<Complex64> {
        let k = self.freqs.len();
        let mut out = vec![Complex64::new(1.0, 0.0); k];
        for (l, row) in self.link_cf.iter().enumerate() {
            if l == j {
                continue;
            }
            for (acc, &v) in out.iter_mut().zip(row) {
                *acc *= v;
            }
        }
        out
    }

    /// Σ_k |ε_k|² with ε_k = √N (φ̂(t_k) − φ_Y(t_k; θ)).
    pub fn objective(&self) -> f64 {
        let sum: f64 = (0..self.freqs.len())
            .map(|k| (self.emp[k] - self.model_cf_at(k)).norm_sqr())
            .sum();
        self.n_samples as f64 * sum
    }

    /// ε^H (W + δI)^{-1} ε under the given weighting.
    pub fn weighted_objective(&self, weighting: &WcfWeighting) -> f64 {
        let k = self.freqs.len();
        let root_n = (self.n_samples as f64).sqrt();
        let r = DVector::from_iterator(
            k,
            (0..k).map(|ki| root_n * (self.emp[ki] - self.model_cf_at(ki))),
        );
        let gr = weighting.chol.solve(&r);
        r.iter()
            .zip(gr.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }

    /// Build the block QP for one link given all other links' current
    /// weights: `D_j = Σ_k |Π_{l≠j}φ_l|² Re{Φ_j* Φ_jᵀ}` and
    /// `d_j = Σ_k Re{φ̂* Π_{l≠j}φ_l Φ_j}`, or their whitened counterparts.
    pub fn assemble_subproblem(
        &self,
        j: usize,
        weighting: Option<&WcfWeighting>,
    ) -> QuadraticSubproblem {
        let n = self.specs[j].n_components();
        let k = self.freqs.len();
        let prod = self.products_excluding(j);
        let table = &self.basis[j];
        match weighting {
            None => {
                let mut curvature = DMatrix::zeros(n, n);
                let mut linear = DVector::zeros(n);
                for ki in 0..k {
                    let p = prod[ki];
                    let w2 = p.norm_sqr();
                    let phi = &table[ki * n..(ki + 1) * n];
                    let lead = self.emp[ki].conj() * p;
                    for a in 0..n {
                        linear[a] += (lead * phi[a]).re;
                        for b in a..n {
                            curvature[(a, b)] +=
                                w2 * (phi[a].re * phi[b].re + phi[a].im * phi[b].im);
                        }
                    }
                }
                for a in 0..n {
                    for b in 0..a {
                        curvature[(a, b)] = curvature[(b, a)];
                    }
                }
                QuadraticSubproblem { curvature, linear }
            }
            Some(w) => {
                // Residual is affine in θ_j: ε = √N(u − Mθ). With
                // G = (W+δI)^{-1}: D = Re{M^H G M}, d = Re{M^H G u}.
                let mut m = DMatrix::zeros(k, n);
                for ki in 0..k {
                    let p = prod[ki];
                    for a in 0..n {
                        m[(ki, a)] = p * table[ki * n + a];
                    }
                }
                let gm = w.chol.solve(&m);
                let mut curvature = DMatrix::zeros(n, n);
                let mut linear = DVector::zeros(n);
                for a in 0..n {
                    let col_a = m.column(a);
                    for b in 0..n {
                        let v: Complex64 = col_a
                            .iter()
                            .zip(gm.column(b).iter())
                            .map(|(x, y)| x.conj() * y)
                            .sum();
                        curvature[(a, b)] = v.re;
                    }
                    let v: Complex64 = col_a
                        .iter()
                        .zip(w.whitened_empirical.iter())
                        .map(|(x, y)| x.conj() * y)
                        .sum();
                    linear[a] = v.re;
                }
                QuadraticSubproblem { curvature, linear }
            }
        }
    }
}

/// Cholesky factor of `W + δI` plus the pre-whitened empirical CF vector.
pub struct WcfWeighting {
    chol: nalgebra::Cholesky<Complex64, Dyn>,
    pub delta: f64,
    whitened_empirical: DVector<Complex64>,
}

impl WcfWeighting {
    /// Factor `w + delta·I`; fails if the ridge leaves it non-positive.
    pub fn from_matrix(
        w: &DMatrix<Complex64>,
        delta: f64,
        empirical: &[Complex64],
    ) -> Option<Self> {
        let mut m = w.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += Complex64::new(delta, 0.0);
        }
        let chol = nalgebra::Cholesky::new(m)?;
        let u = DVector::from_column_slice(empirical);
        let whitened_empirical = chol.solve(&u);
        Some(Self {
            chol,
            delta,
            whitened_empirical,
        })
    }
}

/// Fit mixture weights by the configured variant. For [`Variant::Wcf`] this
/// runs a CF fit first and uses it both as the starting point and to build
/// the weighting, then calls [`fit_wcf`].
pub fn fit<R: Rng + ?Sized>(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<EstimationResult, EstimatorError> {
    match config.variant {
        Variant::Cf => fit_cf(measurements, a, specs, config, rng),
        Variant::Wcf => {
            let cf_config = EstimatorConfig {
                variant: Variant::Cf,
                ..config.clone()
            };
            let initial = fit_cf(measurements, a, specs, &cf_config, rng)?;
            fit_wcf(measurements, a, specs, config, &initial, rng)
        }
        Variant::Mle => Err(EstimatorError::Config(
            "use fit_mle_discrete for the EM baseline".into(),
        )),
    }
}

fn fit_cf<R: Rng + ?Sized>(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<EstimationResult, EstimatorError> {
    let freqs = sample_frequencies(
        measurements.dim(),
        config.k_frequencies,
        config.t_scale,
        measurements.sds(),
        rng,
    )?;
    let mut best: Option<EstimationResult> = None;
    for start in 0..config.starts.max(1) {
        let init: Vec<MixtureWeights> = specs
            .iter()
            .map(|s| {
                if start == 0 {
                    MixtureWeights::uniform(s.n_components())
                } else {
                    MixtureWeights::random_simplex(s.n_components(), rng)
                }
            })
            .collect();
        let result =
            coordinate_descent(measurements, a, specs, &freqs, init, config, None, Variant::Cf)?;
        if best
            .as_ref()
            .map_or(true, |b| result.final_objective() < b.final_objective())
        {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Weighted fit started from an existing estimate. The covariance is built
/// once from `initial` on a freshly sampled (usually smaller) frequency set;
/// if its factorization fails, the ridge grows tenfold until it succeeds.
pub fn fit_wcf<R: Rng + ?Sized>(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    config: &EstimatorConfig,
    initial: &EstimationResult,
    rng: &mut R,
) -> Result<EstimationResult, EstimatorError> {
    let k = config.wcf_frequencies.unwrap_or(config.k_frequencies);
    let freqs = sample_frequencies(
        measurements.dim(),
        k,
        config.t_scale,
        measurements.sds(),
        rng,
    )?;
    let w = weight_matrix(a, specs, &initial.weights, &freqs);
    let emp = empirical_cf_all(measurements, &freqs);
    let base_delta = config
        .delta
        .unwrap_or_else(|| (measurements.len() as f64).powf(-0.5));
    let mut delta = base_delta;
    let weighting = loop {
        match WcfWeighting::from_matrix(&w, delta, &emp) {
            Some(weighting) => break weighting,
            None if delta < base_delta * 1e7 => {
                log::warn!("residual covariance factorization failed, raising ridge to {delta:e}");
                delta *= 10.0;
            }
            None => return Err(EstimatorError::WeightMatrixSingular { delta }),
        }
    };
    coordinate_descent(
        measurements,
        a,
        specs,
        &freqs,
        initial.weights.clone(),
        config,
        Some(&weighting),
        Variant::Wcf,
    )
}

#[allow(clippy::too_many_arguments)]
fn coordinate_descent(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    freqs: &FrequencySet,
    init: Vec<MixtureWeights>,
    config: &EstimatorConfig,
    weighting: Option<&WcfWeighting>,
    variant: Variant,
) -> Result<EstimationResult, EstimatorError> {
    let start = Instant::now();
    let mut engine = CfEngine::new(measurements, a, specs, freqs, init)?;
    let eval = |e: &CfEngine| match weighting {
        None => e.objective(),
        Some(w) => e.weighted_objective(w),
    };
    let mut trace = vec![eval(&engine)];
    let mut converged = false;
    for _ in 0..config.max_outer_iters {
        for j in 0..specs.len() {
            let sub = engine.assemble_subproblem(j, weighting);
            let theta = solve_simplex_qp(&sub, config.qp_tolerance)
                .map_err(|source| EstimatorError::Qp { link: j, source })?;
            engine.set_link_weights(j, MixtureWeights::new(theta.iter().copied().collect())?);
        }
        let objective = eval(&engine);
        let previous = *trace.last().unwrap();
        trace.push(objective);
        if previous - objective < config.objective_tol * previous.abs().max(1e-12) {
            converged = true;
            break;
        }
    }
    Ok(EstimationResult {
        variant,
        weights: engine.weights().to_vec(),
        iterations: trace.len() - 1,
        objective_trace: trace,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
