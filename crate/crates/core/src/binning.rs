//! Bin layout selection: moment-based equal-width bins to bootstrap, then
//! quantile-adaptive varying bins refined from successive fits.
//!
//! Link-delay second moments are recoverable from the measurements alone:
//! with independent links, `Cov(Y_i, Y_k) = Σ_j B_{(i,k),j} Var(X_j)` where
//! `B` is the row-product matrix, giving a linear system for the per-link
//! variances. Means have the usual shift ambiguity, so supports stay
//! anchored at zero and the minimum-norm solution of `E[Y] = A·E[X]` is used
//! for bin-span sizing only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::cf::{CfError, MeasurementSet};
use crate::estimators::{fit, fit_wcf, EstimationResult, EstimatorConfig, EstimatorError, Variant};
use crate::mixture::{FittedMixture, MixtureSpec, ModelError};
use crate::topology::{product_matrix, RoutingMatrix, RANK_TOLERANCE};

#[derive(Debug, Error)]
pub enum BinningError {
    #[error("need at least two measurement rows for moment estimation")]
    TooFewSamples,
    #[error("link variances underdetermined; links {0:?} are not identifiable from covariances")]
    Underdetermined(Vec<usize>),
    #[error("least-squares solve failed: {0}")]
    Solve(String),
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Per-link first and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub variances: Vec<f64>,
    /// Minimum-norm mean solution; individual entries carry the shift
    /// ambiguity and may even be negative.
    pub means: Vec<f64>,
    /// Links whose raw variance estimate came out negative and was clamped.
    pub clamped: Vec<bool>,
}

impl MomentEstimates {
    pub fn sd(&self, link: usize) -> f64 {
        self.variances[link].max(0.0).sqrt()
    }
}

/// Estimate link variances and means from sample moments of `Y`.
pub fn estimate_link_moments(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
) -> Result<MomentEstimates, BinningError> {
    if measurements.len() < 2 {
        return Err(BinningError::TooFewSamples);
    }
    let receivers = a.receivers();
    let cov = DMatrix::from_fn(receivers, receivers, |i, k| measurements.covariance(i, k));
    moments_from_population(&cov, measurements.means(), a)
}

/// Same solve fed with explicit (e.g. population) covariances and means.
pub fn moments_from_population(
    cov_y: &DMatrix<f64>,
    mean_y: &[f64],
    a: &RoutingMatrix,
) -> Result<MomentEstimates, BinningError> {
    let receivers = a.receivers();
    let links = a.links();
    let b = product_matrix(a);
    let rows = b.rows();
    let b_dense = b.to_dense();
    let mut lhs = DVector::zeros(rows);
    for i in 0..receivers {
        lhs[i] = cov_y[(i, i)];
        for k in (i + 1)..receivers {
            lhs[b.pair_row(receivers, i, k)] = cov_y[(i, k)];
        }
    }

    let svd = b_dense.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * max_sv)
        .count();
    if rank < links {
        // Columns touching the kernel of B are the unidentifiable ones; the
        // kernel comes out of the Gram matrix since the SVD here is thin.
        let gram = b_dense.transpose() * &b_dense;
        let eig = gram.symmetric_eigen();
        let max_eig = eig.eigenvalues.amax();
        let mut bad = Vec::new();
        for j in 0..links {
            let in_null = (0..links).any(|e| {
                eig.eigenvalues[e] <= RANK_TOLERANCE * max_eig
                    && eig.eigenvectors[(j, e)].abs() > 1e-6
            });
            if in_null {
                bad.push(j);
            }
        }
        return Err(BinningError::Underdetermined(bad));
    }
    let variances_raw = svd
        .solve(&lhs, RANK_TOLERANCE * max_sv)
        .map_err(|e| BinningError::Solve(e.to_string()))?;

    let mean_vec = DVector::from_column_slice(mean_y);
    let a_svd = a.to_dense().svd(true, true);
    let eps = RANK_TOLERANCE * a_svd.singular_values.max();
    let means = a_svd
        .solve(&mean_vec, eps)
        .map_err(|e| BinningError::Solve(e.to_string()))?;

    let mut variances = Vec::with_capacity(links);
    let mut clamped = Vec::with_capacity(links);
    for j in 0..links {
        clamped.push(variances_raw[j] < 0.0);
        variances.push(variances_raw[j].max(0.0));
    }
    Ok(MomentEstimates {
        variances,
        means: means.iter().copied().collect(),
        clamped,
    })
}

/// Crude tail scale: the link's estimated standard deviation, floored.
pub fn crude_tail_scale(moments: &MomentEstimates, link: usize) -> f64 {
    moments.sd(link).max(1e-6)
}

const DEGENERATE_SPAN: f64 = 1e-6;

/// Equal-width bins spanning `[0, mean + 3·sd]` (at least `sd`, so a
/// negative shifted mean cannot collapse the span), with the crude tail.
pub fn equal_bins(
    moments: &MomentEstimates,
    link: usize,
    n_bins: usize,
    zero_atom: bool,
) -> Result<MixtureSpec, BinningError> {
    let sd = moments.sd(link);
    let span = (moments.means[link] + 3.0 * sd).max(sd);
    let tail = crude_tail_scale(moments, link);
    if !(span > DEGENERATE_SPAN) {
        log::warn!("link {link}: no delay spread detected, using a degenerate single-bin layout");
        return Ok(MixtureSpec::continuous(
            link,
            zero_atom,
            &[0.0, DEGENERATE_SPAN],
            tail,
        )?);
    }
    let endpoints: Vec<f64> = (0..=n_bins)
        .map(|i| span * i as f64 / n_bins as f64)
        .collect();
    Ok(MixtureSpec::continuous(link, zero_atom, &endpoints, tail)?)
}

/// Varying bins with interior endpoints at the pilot quantiles
/// `i/(n_bins+1)`, `i = 1..n_bins`; the tail scale is carried over from the
/// pilot spec.
pub fn varying_bins(
    pilot: &FittedMixture,
    n_bins: usize,
    zero_atom: bool,
) -> Result<MixtureSpec, BinningError> {
    let tail = pilot.spec.tail_scale().unwrap_or(1e-6);
    varying_bins_from_quantiles(
        pilot.spec.link(),
        |p| pilot.quantile(p).map_err(BinningError::from),
        n_bins,
        zero_atom,
        tail,
    )
}

/// Quantile-placed bins from an arbitrary quantile function; also the oracle
/// entry point when true distribution quantiles are available.
pub fn varying_bins_from_quantiles<F>(
    link: usize,
    quantile: F,
    n_bins: usize,
    zero_atom: bool,
    tail_scale: f64,
) -> Result<MixtureSpec, BinningError>
where
    F: Fn(f64) -> Result<f64, BinningError>,
{
    let mut endpoints = Vec::with_capacity(n_bins + 1);
    endpoints.push(0.0);
    for i in 1..=n_bins {
        let p = i as f64 / (n_bins + 1) as f64;
        endpoints.push(quantile(p)?.max(0.0));
    }
    let span = *endpoints.last().unwrap();
    if !(span > DEGENERATE_SPAN) {
        log::warn!("link {link}: pilot mass concentrated at zero, using a degenerate layout");
        return Ok(MixtureSpec::continuous(
            link,
            zero_atom,
            &[0.0, DEGENERATE_SPAN],
            tail_scale.max(1e-6),
        )?);
    }
    // Deduplicate with a minimum gap so the endpoints stay strictly
    // increasing after quantiles collide (atoms, empty bins).
    let gap = 1e-9 * span;
    for i in 1..endpoints.len() {
        if endpoints[i] <= endpoints[i - 1] + gap {
            endpoints[i] = endpoints[i - 1] + gap;
        }
    }
    Ok(MixtureSpec::continuous(
        link,
        zero_atom,
        &endpoints,
        tail_scale.max(1e-6),
    )?)
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub n_bins: usize,
    pub zero_atom: bool,
    /// Number of quantile-rebinning rounds after the equal-bin fit.
    pub rounds: usize,
    pub estimator: EstimatorConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            n_bins: 12,
            zero_atom: false,
            rounds: 2,
            estimator: EstimatorConfig::cf(),
        }
    }
}

/// One stage of the refinement pipeline: the bin layout and its CF fit.
#[derive(Debug, Clone)]
pub struct RefineStage {
    pub specs: Vec<MixtureSpec>,
    pub fit: EstimationResult,
}

impl RefineStage {
    pub fn fitted(&self) -> Vec<FittedMixture> {
        self.fit.fitted(&self.specs)
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub moments: MomentEstimates,
    /// Stage 0 is the equal-bin fit; stage r > 0 re-bins at the quantiles of
    /// stage r−1. All stage fits are CF fits.
    pub stages: Vec<RefineStage>,
    /// The requested estimate on the final bin layout: the last CF stage
    /// itself, or a WCF fit started from it.
    pub final_fit: EstimationResult,
}

impl RefineOutcome {
    pub fn final_specs(&self) -> &[MixtureSpec] {
        &self.stages.last().expect("at least one stage").specs
    }

    pub fn final_fitted(&self) -> Vec<FittedMixture> {
        self.final_fit.fitted(self.final_specs())
    }
}

/// Full pipeline: moments → equal bins → CF fit → (quantile bins → refit) ×
/// rounds, then a WCF pass when the config asks for it.
pub fn refine<R: Rng + ?Sized>(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    config: &RefineConfig,
    rng: &mut R,
) -> Result<RefineOutcome, BinningError> {
    let moments = estimate_link_moments(measurements, a)?;
    let cf_config = EstimatorConfig {
        variant: Variant::Cf,
        ..config.estimator.clone()
    };
    let specs: Vec<MixtureSpec> = (0..a.links())
        .map(|j| equal_bins(&moments, j, config.n_bins, config.zero_atom))
        .collect::<Result<_, _>>()?;
    let first = fit(measurements, a, &specs, &cf_config, rng)?;
    let mut stages = vec![RefineStage { specs, fit: first }];
    for _ in 0..config.rounds {
        let prev = stages.last().unwrap();
        let specs: Vec<MixtureSpec> = prev
            .fitted()
            .iter()
            .map(|fitted| varying_bins(fitted, config.n_bins, config.zero_atom))
            .collect::<Result<_, _>>()?;
        let refit = fit(measurements, a, &specs, &cf_config, rng)?;
        stages.push(RefineStage { specs, fit: refit });
    }
    let final_fit = match config.estimator.variant {
        Variant::Wcf => {
            let last = stages.last().unwrap();
            fit_wcf(
                measurements,
                a,
                &last.specs,
                &config.estimator,
                &last.fit,
                rng,
            )?
        }
        _ => stages.last().unwrap().fit.clone(),
    };
    Ok(RefineOutcome {
        moments,
        stages,
        final_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::MixtureWeights;
    use crate::parametric::ParametricModel;
    use crate::topology::{routing_matrix, TreeTopology};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn population_moments_recovered_exactly() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        // Var(X) = (1, 2, 3) ⇒ Var(Y1) = 3, Var(Y2) = 4, Cov = 1.
        let cov = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 4.0]);
        let m = moments_from_population(&cov, &[2.0, 2.0], &a).unwrap();
        for (got, want) in m.variances.iter().zip([1.0, 2.0, 3.0]) {
            assert_relative_eq!(got, &want, epsilon = 1e-10);
        }
        // Mean solution satisfies A·m = E[Y] even though it is only
        // shift-identified.
        assert_relative_eq!(m.means[0] + m.means[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(m.means[0] + m.means[2], 2.0, epsilon = 1e-10);
        assert!(!m.clamped.iter().any(|&c| c));
    }

    #[test]
    fn deterministic_links_have_zero_variance() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        let cov = DMatrix::zeros(2, 2);
        let m = moments_from_population(&cov, &[1.0, 1.0], &a).unwrap();
        assert!(m.variances.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn serial_links_are_underdetermined() {
        let a = crate::topology::RoutingMatrix::from_binary_rows(vec![vec![1, 1]]).unwrap();
        let cov = DMatrix::from_element(1, 1, 2.0);
        match moments_from_population(&cov, &[3.0], &a) {
            Err(BinningError::Underdetermined(links)) => assert_eq!(links, vec![0, 1]),
            other => panic!("expected underdetermined, got {other:?}"),
        }
    }

    #[test]
    fn sample_moments_on_four_leaf_exponentials() {
        let topo = TreeTopology::four_leaf();
        let a = routing_matrix(&topo);
        let means = [3.0, 1.0, 5.0, 10.0, 6.0, 4.0, 20.0];
        let models: Vec<ParametricModel> = means
            .iter()
            .map(|&m| ParametricModel::exponential(m).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut rel_errors: Vec<Vec<f64>> = vec![Vec::new(); 7];
        for _ in 0..20 {
            let n = 2000;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = models.iter().map(|m| m.sample(&mut rng)).collect();
                    (0..4)
                        .map(|r| {
                            (0..7)
                                .filter(|&j| a.entry(r, j) == 1)
                                .map(|j| x[j])
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let meas = MeasurementSet::new(rows).unwrap();
            let est = estimate_link_moments(&meas, &a).unwrap();
            for j in 0..7 {
                let truth = means[j] * means[j];
                rel_errors[j].push((est.variances[j] - truth).abs() / truth);
            }
        }
        for (j, errs) in rel_errors.iter_mut().enumerate() {
            errs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let median = errs[errs.len() / 2];
            if means[j] >= 5.0 {
                // Large links are well determined by the covariance system.
                assert!(median <= 0.25, "link {j}: median relative error {median}");
            } else {
                // Small links share paths with links of 100×+ their variance,
                // so the covariance noise floor dominates; the estimate is
                // only good to that floor, not to a relative tolerance.
                let floor = 3.0 / (means[j] * means[j]);
                assert!(
                    median <= floor.max(0.25),
                    "link {j}: median relative error {median} vs floor {floor}"
                );
            }
        }
    }

    #[test]
    fn equal_bins_arithmetic() {
        let m = MomentEstimates {
            variances: vec![1.0],
            means: vec![3.0],
            clamped: vec![false],
        };
        let spec = equal_bins(&m, 0, 12, false).unwrap();
        let endpoints = spec.bin_endpoints().unwrap();
        assert_eq!(endpoints.len(), 13);
        assert_relative_eq!(endpoints[12], 6.0, epsilon = 1e-12);
        assert_relative_eq!(endpoints[1] - endpoints[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(spec.tail_scale().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(spec.n_components(), 13);

        // 20× the scale gets 20× the bin width.
        let m20 = MomentEstimates {
            variances: vec![400.0],
            means: vec![60.0],
            clamped: vec![false],
        };
        let wide = equal_bins(&m20, 0, 12, false).unwrap();
        let w20 = wide.bin_endpoints().unwrap()[1];
        assert_relative_eq!(w20, 20.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn equal_bins_degenerate_spread() {
        let m = MomentEstimates {
            variances: vec![0.0],
            means: vec![0.0],
            clamped: vec![false],
        };
        let spec = equal_bins(&m, 0, 12, false).unwrap();
        assert_eq!(spec.bin_endpoints().unwrap().len(), 2);
        assert_relative_eq!(spec.tail_scale().unwrap(), 1e-6, epsilon = 1e-18);
    }

    #[test]
    fn crude_tail_scale_rules() {
        let m = MomentEstimates {
            variances: vec![4.0, 0.0],
            means: vec![1.0, 1.0],
            clamped: vec![false, false],
        };
        assert_relative_eq!(crude_tail_scale(&m, 0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(crude_tail_scale(&m, 1), 1e-6, epsilon = 1e-18);
    }

    #[test]
    fn varying_bins_uniform_pilot_is_equally_spaced() {
        let spec = MixtureSpec::continuous(0, false, &[0.0, 1.0], 0.5).unwrap();
        let pilot = FittedMixture {
            spec,
            weights: MixtureWeights::new(vec![1.0, 0.0]).unwrap(),
        };
        let refined = varying_bins(&pilot, 12, false).unwrap();
        let endpoints = refined.bin_endpoints().unwrap();
        for (i, e) in endpoints.iter().enumerate() {
            assert_relative_eq!(e, &(i as f64 / 13.0), epsilon = 1e-12);
        }
        assert_relative_eq!(refined.tail_scale().unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn varying_bins_exponential_oracle_quantiles() {
        let model = ParametricModel::exponential(1.0).unwrap();
        let spec = varying_bins_from_quantiles(
            3,
            |p| Ok(model.quantile(p).unwrap()),
            12,
            false,
            1.0,
        )
        .unwrap();
        let endpoints = spec.bin_endpoints().unwrap();
        for i in 1..=12 {
            let expected = -(1.0 - i as f64 / 13.0).ln();
            assert_relative_eq!(endpoints[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn varying_bins_dedups_atom_quantiles() {
        // Pilot with a heavy zero atom: low quantiles collapse to 0 and must
        // be pushed apart.
        let spec = MixtureSpec::continuous(0, true, &[0.0, 2.0], 1.0).unwrap();
        let pilot = FittedMixture {
            spec,
            weights: MixtureWeights::new(vec![0.5, 0.4, 0.1]).unwrap(),
        };
        let refined = varying_bins(&pilot, 6, true).unwrap();
        let endpoints = refined.bin_endpoints().unwrap();
        for w in endpoints.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(refined.n_components(), 8); // atom + 6 bins + tail
    }

    #[test]
    fn refine_zero_rounds_is_equal_bin_fit() {
        let topo = TreeTopology::two_leaf();
        let a = routing_matrix(&topo);
        let models: Vec<ParametricModel> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&m| ParametricModel::exponential(m).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..1500)
            .map(|_| {
                let x: Vec<f64> = models.iter().map(|m| m.sample(&mut rng)).collect();
                vec![x[0] + x[1], x[0] + x[2]]
            })
            .collect();
        let meas = MeasurementSet::new(rows).unwrap();
        let config = RefineConfig {
            n_bins: 6,
            rounds: 0,
            estimator: EstimatorConfig {
                k_frequencies: 200,
                ..EstimatorConfig::cf()
            },
            ..RefineConfig::default()
        };
        let outcome = refine(&meas, &a, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(outcome.stages.len(), 1);
        for (a_, b_) in outcome
            .final_fit
            .weights
            .iter()
            .zip(&outcome.stages[0].fit.weights)
        {
            assert_eq!(a_.as_slice(), b_.as_slice());
        }
    }

    #[test]
    fn rebinning_a_self_consistent_fit_drifts_little() {
        // Data drawn from mixtures whose bins sit at their own quantiles:
        // fitting on those bins and re-deriving quantile bins should
        // reproduce nearly the same endpoints.
        let topo = TreeTopology::two_leaf();
        let a = routing_matrix(&topo);
        let n_bins = 8;
        let truth: Vec<FittedMixture> = [2.0, 1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(j, &mean)| {
                let model = ParametricModel::exponential(mean).unwrap();
                let spec = varying_bins_from_quantiles(
                    j,
                    |p| Ok(model.quantile(p).unwrap()),
                    n_bins,
                    false,
                    mean,
                )
                .unwrap();
                // Uniform weights make the bins exactly the quantile bins.
                let weights = MixtureWeights::uniform(spec.n_components());
                FittedMixture { spec, weights }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let links: Vec<Vec<f64>> = truth
            .iter()
            .map(|f| f.spec.sample(&f.weights, &mut rng, 6000))
            .collect();
        let rows: Vec<Vec<f64>> = (0..6000)
            .map(|i| vec![links[0][i] + links[1][i], links[0][i] + links[2][i]])
            .collect();
        let meas = MeasurementSet::new(rows).unwrap();

        let specs: Vec<MixtureSpec> = truth.iter().map(|f| f.spec.clone()).collect();
        let config = EstimatorConfig {
            k_frequencies: 500,
            ..EstimatorConfig::cf()
        };
        let refit = fit(&meas, &a, &specs, &config, &mut ChaCha8Rng::seed_from_u64(35)).unwrap();
        for (j, fitted) in refit.fitted(&specs).iter().enumerate() {
            let rebinned = varying_bins(fitted, n_bins, false).unwrap();
            let new_e = rebinned.bin_endpoints().unwrap();
            let old_e = truth[j].spec.bin_endpoints().unwrap();
            let span = *old_e.last().unwrap();
            for (x, y) in new_e.iter().zip(&old_e) {
                assert!(
                    (x - y).abs() < 0.10 * span,
                    "link {j}: endpoint drift {x} vs {y} (span {span})"
                );
            }
        }
    }
}
