//! Seeded replication studies: simulate a scenario, fit every configured
//! estimator, score against the ground truth, and summarize quartiles.
//!
//! Replication `r` runs entirely from seed `base_seed + r`, so runs are
//! reproducible and replications can execute in parallel with identical
//! output either way.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{refine, BinningError, RefineConfig};
use crate::cf::{CfError, MeasurementSet};
use crate::estimators::{
    fit_mle_discrete, fit_wcf, EmConfig, EstimationResult, EstimatorConfig, EstimatorError,
    Variant,
};
use crate::metrics::{
    l1_density_distance, normalized_mallows, ErrorSummary, MetricsError, MALLOWS_POINTS,
};
use crate::mixture::{FittedMixture, MixtureSpec, MixtureWeights, ModelError};
use crate::parametric::ParametricModel;
use crate::topology::{routing_matrix, RoutingMatrix, TreeTopology};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario `{0}`; built in: discrete4, exp4, expgamma4, weibull8")]
    UnknownScenario(String),
    #[error("scenario link models do not match the topology ({got} for {want} links)")]
    LinkCount { got: usize, want: usize },
    #[error("discrete study requires grid models with exactly the study's state count")]
    GridModelMismatch,
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Ground-truth link models for a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkModels {
    /// The same models in every replication.
    Fixed { models: Vec<ParametricModel> },
    /// Fresh uniform-simplex grid probabilities per link per replication.
    RandomGridSimplex { states: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousEstimate {
    CfEqual,
    WcfEqual,
    CfVarying,
    WcfVarying,
}

impl ContinuousEstimate {
    pub fn label(self) -> &'static str {
        match self {
            ContinuousEstimate::CfEqual => "CF_equal_bin",
            ContinuousEstimate::WcfEqual => "WCF_equal_bin",
            ContinuousEstimate::CfVarying => "CF_varying_bin",
            ContinuousEstimate::WcfVarying => "WCF_varying_bin",
        }
    }

    fn varying(self) -> bool {
        matches!(
            self,
            ContinuousEstimate::CfVarying | ContinuousEstimate::WcfVarying
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Study {
    /// Grid-delay efficiency study: MLE, CF and WCF on point-mass bases,
    /// scored by L1 distance on the grid.
    Discrete { states: usize },
    /// Continuous mixtures with moment/quantile binning, scored by
    /// normalized Mallows distance.
    Continuous {
        n_bins: usize,
        zero_atom: bool,
        refine_rounds: usize,
        estimates: Vec<ContinuousEstimate>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub topology: TreeTopology,
    pub links: LinkModels,
    pub n_samples: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub study: Study,
    /// Template for CF/WCF fits (`variant` is ignored; the study decides).
    pub estimator: EstimatorConfig,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// The four built-in scenarios.
pub fn builtin_scenario(name: &str) -> Result<Scenario, SimError> {
    let estimator = EstimatorConfig {
        k_frequencies: 3000,
        wcf_frequencies: Some(480),
        t_scale: 5.0,
        max_outer_iters: 200,
        objective_tol: 1e-8,
        ..EstimatorConfig::cf()
    };
    let all_four = vec![
        ContinuousEstimate::CfEqual,
        ContinuousEstimate::WcfEqual,
        ContinuousEstimate::CfVarying,
        ContinuousEstimate::WcfVarying,
    ];
    let exp_means = [3.0, 1.0, 5.0, 10.0, 6.0, 4.0, 20.0];
    match name {
        "discrete4" => Ok(Scenario {
            name: name.into(),
            topology: TreeTopology::four_leaf(),
            links: LinkModels::RandomGridSimplex { states: 6 },
            n_samples: 500,
            replications: 20,
            base_seed: 20_0417,
            study: Study::Discrete { states: 6 },
            // Point-mass bases are the most local-minimum-prone layout, so
            // hedge the uniform start with random restarts.
            estimator: EstimatorConfig {
                starts: 3,
                ..estimator
            },
        }),
        "exp4" => Ok(Scenario {
            name: name.into(),
            topology: TreeTopology::four_leaf(),
            links: LinkModels::Fixed {
                models: exp_means
                    .iter()
                    .map(|&m| ParametricModel::exponential(m).expect("positive mean"))
                    .collect(),
            },
            n_samples: 2000,
            replications: 20,
            base_seed: 20_0418,
            study: Study::Continuous {
                n_bins: 12,
                zero_atom: false,
                refine_rounds: 2,
                estimates: all_four,
            },
            estimator,
        }),
        "expgamma4" => Ok(Scenario {
            name: name.into(),
            topology: TreeTopology::four_leaf(),
            links: LinkModels::Fixed {
                models: exp_means
                    .iter()
                    .map(|&m| {
                        ParametricModel::mixture(
                            vec![0.5, 0.5],
                            vec![
                                ParametricModel::exponential(m).expect("positive mean"),
                                ParametricModel::gamma_with_mean(2.0, m).expect("positive mean"),
                            ],
                        )
                        .expect("valid mixture")
                    })
                    .collect(),
            },
            n_samples: 2000,
            replications: 20,
            base_seed: 20_0419,
            study: Study::Continuous {
                n_bins: 12,
                zero_atom: false,
                refine_rounds: 2,
                estimates: all_four,
            },
            estimator,
        }),
        "weibull8" => Ok(Scenario {
            name: name.into(),
            topology: TreeTopology::balanced_binary(3),
            links: LinkModels::Fixed {
                models: weibull8_models(),
            },
            n_samples: 1800,
            replications: 5,
            base_seed: 20_0420,
            study: Study::Continuous {
                n_bins: 6,
                zero_atom: true,
                refine_rounds: 2,
                estimates: vec![
                    ContinuousEstimate::CfVarying,
                    ContinuousEstimate::WcfVarying,
                ],
            },
            estimator,
        }),
        other => Err(SimError::UnknownScenario(other.into())),
    }
}

/// Synthetic heterogeneous 15-link truth: per-link zero-delay atoms between
/// 0.2 and 0.6 and Weibull bodies with shape 0.9, with unconditional means
/// spanning a factor of 40. The fast links live in the left subtree and the
/// slow ones in the right, so every link shares a path scale with at least
/// one receiver pair.
pub fn weibull8_models() -> Vec<ParametricModel> {
    let means = [
        0.6, // root link
        0.8, 16.0, // first interior level (fast left, slow right)
        0.7, 1.0, 14.0, 18.0, // second interior level
        0.5, 0.9, 1.2, 0.8, 12.0, 20.0, 15.0, 18.0, // receiver links
    ];
    means
        .iter()
        .enumerate()
        .map(|(j, &mean)| {
            let atom = 0.2 + 0.4 * j as f64 / 14.0;
            let body_mean = mean / (1.0 - atom);
            ParametricModel::mixture(
                vec![atom, 1.0 - atom],
                vec![
                    ParametricModel::zero_atom(),
                    ParametricModel::weibull_with_mean(0.9, body_mean).expect("positive"),
                ],
            )
            .expect("valid mixture")
        })
        .collect()
}

/// One replication's simulated data plus the realized truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub seed: u64,
    pub measurements: MeasurementSet,
    pub models: Vec<ParametricModel>,
    /// Per-link delay samples underlying the measurements.
    pub link_samples: Vec<Vec<f64>>,
}

/// Simulate replication `index`: draw per-link delays i.i.d. and push them
/// through `Y = A·X` row by row.
pub fn generate(scenario: &Scenario, index: usize) -> Result<GeneratedData, SimError> {
    let a = routing_matrix(&scenario.topology);
    let seed = scenario.base_seed + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = realize_models(scenario, &a, &mut rng)?;
    let link_samples: Vec<Vec<f64>> = models
        .iter()
        .map(|m| m.sample_n(&mut rng, scenario.n_samples))
        .collect();
    let rows: Vec<Vec<f64>> = (0..scenario.n_samples)
        .map(|n| {
            (0..a.receivers())
                .map(|i| {
                    (0..a.links())
                        .filter(|&j| a.entry(i, j) == 1)
                        .map(|j| link_samples[j][n])
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(GeneratedData {
        seed,
        measurements: MeasurementSet::new(rows)?,
        models,
        link_samples,
    })
}

fn realize_models(
    scenario: &Scenario,
    a: &RoutingMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ParametricModel>, SimError> {
    let models = match &scenario.links {
        LinkModels::Fixed { models } => models.clone(),
        LinkModels::RandomGridSimplex { states } => (0..a.links())
            .map(|_| {
                let probs = MixtureWeights::random_simplex(*states, rng);
                ParametricModel::discrete_grid(probs.as_slice().to_vec()).expect("simplex draw")
            })
            .collect(),
    };
    if models.len() != a.links() {
        return Err(SimError::LinkCount {
            got: models.len(),
            want: a.links(),
        });
    }
    Ok(models)
}

/// Monotonicity bookkeeping for one executed fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitStat {
    pub label: String,
    pub initial_objective: f64,
    pub max_objective_increase: f64,
    pub converged: bool,
}

impl FitStat {
    fn of(label: impl Into<String>, result: &EstimationResult) -> Self {
        Self {
            label: label.into(),
            initial_objective: result.objective_trace.first().copied().unwrap_or(f64::NAN),
            max_objective_increase: result.max_objective_increase(),
            converged: result.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub label: String,
    pub fitted: Vec<FittedMixture>,
    pub per_link_error: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub estimates: Vec<EstimateRecord>,
    /// One entry per fit executed anywhere in this replication, including
    /// binning pilots.
    pub fit_stats: Vec<FitStat>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSummary {
    pub label: String,
    pub summary: ErrorSummary,
    /// Replications missing this estimate (failed or not requested).
    pub missing: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<LabeledSummary>,
}

impl RunSummary {
    pub fn summary(&self, label: &str) -> Option<&LabeledSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// All per-link errors for one estimate, pooled across replications.
    pub fn pooled_errors(&self, label: &str) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.estimates.iter())
            .filter(|e| e.label == label)
            .flat_map(|e| e.per_link_error.iter().copied())
            .collect()
    }
}

/// Run every replication of a scenario (in parallel unless `jobs` is 1) and
/// summarize per-link quartiles per estimator.
pub fn run(scenario: &Scenario, jobs: Option<usize>) -> Result<RunSummary, SimError> {
    let worker = |rep: usize| run_replication(scenario, rep);
    let records: Vec<ReplicationRecord> = match jobs {
        Some(1) => (0..scenario.replications).map(worker).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(|| (0..scenario.replications).into_par_iter().map(worker).collect()),
        None => (0..scenario.replications)
            .into_par_iter()
            .map(worker)
            .collect(),
    };

    let labels: Vec<String> = match &scenario.study {
        Study::Discrete { .. } => ["MLE", "CF", "WCF"].map(String::from).to_vec(),
        Study::Continuous { estimates, .. } => {
            estimates.iter().map(|e| e.label().to_string()).collect()
        }
    };
    let links = routing_matrix(&scenario.topology).links();
    let mut summaries = Vec::new();
    for label in labels {
        let mut per_link: Vec<Vec<f64>> = vec![Vec::new(); links];
        let mut present = 0;
        for record in &records {
            if let Some(est) = record.estimates.iter().find(|e| e.label == label) {
                present += 1;
                for (j, &v) in est.per_link_error.iter().enumerate() {
                    per_link[j].push(v);
                }
            }
        }
        if present == 0 {
            continue;
        }
        let metric = match &scenario.study {
            Study::Discrete { .. } => "l1",
            Study::Continuous { .. } => "normalized_mallows",
        };
        summaries.push(LabeledSummary {
            label,
            summary: ErrorSummary::summarize(metric, &per_link)?,
            missing: records.len() - present,
        });
    }
    Ok(RunSummary {
        scenario: scenario.name.clone(),
        records,
        summaries,
    })
}

/// Run a single replication; estimator failures are recorded, not fatal.
pub fn run_replication(scenario: &Scenario, index: usize) -> ReplicationRecord {
    let mut record = ReplicationRecord {
        replication: index,
        seed: scenario.base_seed + index as u64,
        estimates: Vec::new(),
        fit_stats: Vec::new(),
        failures: Vec::new(),
    };
    let data = match generate(scenario, index) {
        Ok(data) => data,
        Err(e) => {
            record.failures.push(format!("generate: {e}"));
            return record;
        }
    };
    // The generator above consumed an unknown amount of the seed stream, so
    // fits get their own deterministic stream.
    let mut rng = ChaCha8Rng::seed_from_u64(record.seed ^ 0x5eed_0f17);
    let outcome = match &scenario.study {
        Study::Discrete { states } => {
            discrete_replication(scenario, &data, *states, &mut rng, &mut record)
        }
        Study::Continuous {
            n_bins,
            zero_atom,
            refine_rounds,
            estimates,
        } => continuous_replication(
            scenario,
            &data,
            *n_bins,
            *zero_atom,
            *refine_rounds,
            estimates,
            &mut rng,
            &mut record,
        ),
    };
    if let Err(e) = outcome {
        record.failures.push(e.to_string());
    }
    record
}

fn discrete_replication(
    scenario: &Scenario,
    data: &GeneratedData,
    states: usize,
    rng: &mut ChaCha8Rng,
    record: &mut ReplicationRecord,
) -> Result<(), SimError> {
    let a = routing_matrix(&scenario.topology);
    let truth: Vec<Vec<f64>> = data
        .models
        .iter()
        .map(|m| match m {
            ParametricModel::DiscreteGrid { probs } if probs.len() == states => Ok(probs.clone()),
            _ => Err(SimError::GridModelMismatch),
        })
        .collect::<Result<_, _>>()?;
    let specs: Vec<MixtureSpec> = (0..a.links())
        .map(|j| MixtureSpec::integer_grid(j, states))
        .collect::<Result<_, _>>()?;
    let score = |weights: &[MixtureWeights]| -> Result<Vec<f64>, SimError> {
        truth
            .iter()
            .zip(weights)
            .map(|(t, w)| Ok(l1_density_distance(t, w.as_slice())?))
            .collect()
    };

    match fit_mle_discrete(&data.measurements, &a, states, &EmConfig::default()) {
        Ok(mle) => {
            record.fit_stats.push(FitStat::of("MLE", &mle));
            record.estimates.push(EstimateRecord {
                label: "MLE".into(),
                fitted: mle.fitted(&specs),
                per_link_error: score(&mle.weights)?,
                objective_trace: mle.objective_trace.clone(),
                converged: mle.converged,
                wall_time_s: mle.wall_time_s,
            });
        }
        Err(e) => record.failures.push(format!("MLE: {e}")),
    }

    let cf_config = EstimatorConfig {
        variant: Variant::Cf,
        ..scenario.estimator.clone()
    };
    let cf = match crate::estimators::fit(&data.measurements, &a, &specs, &cf_config, rng) {
        Ok(cf) => cf,
        Err(e) => {
            record.failures.push(format!("CF: {e}"));
            return Ok(());
        }
    };
    record.fit_stats.push(FitStat::of("CF", &cf));
    record.estimates.push(EstimateRecord {
        label: "CF".into(),
        fitted: cf.fitted(&specs),
        per_link_error: score(&cf.weights)?,
        objective_trace: cf.objective_trace.clone(),
        converged: cf.converged,
        wall_time_s: cf.wall_time_s,
    });

    let wcf_config = EstimatorConfig {
        variant: Variant::Wcf,
        ..scenario.estimator.clone()
    };
    match fit_wcf(&data.measurements, &a, &specs, &wcf_config, &cf, rng) {
        Ok(wcf) => {
            record.fit_stats.push(FitStat::of("WCF", &wcf));
            record.estimates.push(EstimateRecord {
                label: "WCF".into(),
                fitted: wcf.fitted(&specs),
                per_link_error: score(&wcf.weights)?,
                objective_trace: wcf.objective_trace.clone(),
                converged: wcf.converged,
                wall_time_s: wcf.wall_time_s,
            });
        }
        Err(e) => record.failures.push(format!("WCF: {e}")),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn continuous_replication(
    scenario: &Scenario,
    data: &GeneratedData,
    n_bins: usize,
    zero_atom: bool,
    refine_rounds: usize,
    estimates: &[ContinuousEstimate],
    rng: &mut ChaCha8Rng,
    record: &mut ReplicationRecord,
) -> Result<(), SimError> {
    let a = routing_matrix(&scenario.topology);
    let rounds = if estimates.iter().any(|e| e.varying()) {
        refine_rounds
    } else {
        0
    };
    let config = RefineConfig {
        n_bins,
        zero_atom,
        rounds,
        estimator: EstimatorConfig {
            variant: Variant::Cf,
            ..scenario.estimator.clone()
        },
    };
    let outcome = refine(&data.measurements, &a, &config, rng)?;
    for (stage_idx, stage) in outcome.stages.iter().enumerate() {
        let label = if stage_idx == 0 {
            "pilot_equal_bin".to_string()
        } else {
            format!("refine_round_{stage_idx}")
        };
        record.fit_stats.push(FitStat::of(label, &stage.fit));
    }

    let score = |fitted: &[FittedMixture]| -> Result<Vec<f64>, SimError> {
        data.models
            .iter()
            .zip(fitted)
            .map(|(truth, fit)| Ok(normalized_mallows(truth, fit, MALLOWS_POINTS)?))
            .collect()
    };
    let push = |label: &str,
                    result: &EstimationResult,
                    specs: &[MixtureSpec],
                    record: &mut ReplicationRecord|
     -> Result<(), SimError> {
        let fitted = result.fitted(specs);
        record.estimates.push(EstimateRecord {
            label: label.into(),
            per_link_error: score(&fitted)?,
            fitted,
            objective_trace: result.objective_trace.clone(),
            converged: result.converged,
            wall_time_s: result.wall_time_s,
        });
        Ok(())
    };

    let equal_stage = &outcome.stages[0];
    let varying_stage = outcome.stages.last().expect("at least one stage");
    let wcf_config = EstimatorConfig {
        variant: Variant::Wcf,
        ..scenario.estimator.clone()
    };
    for estimate in estimates {
        match estimate {
            ContinuousEstimate::CfEqual => {
                push(estimate.label(), &equal_stage.fit, &equal_stage.specs, record)?;
            }
            ContinuousEstimate::CfVarying => {
                push(
                    estimate.label(),
                    &varying_stage.fit,
                    &varying_stage.specs,
                    record,
                )?;
            }
            ContinuousEstimate::WcfEqual => {
                match fit_wcf(
                    &data.measurements,
                    &a,
                    &equal_stage.specs,
                    &wcf_config,
                    &equal_stage.fit,
                    rng,
                ) {
                    Ok(wcf) => {
                        record.fit_stats.push(FitStat::of(estimate.label(), &wcf));
                        push(estimate.label(), &wcf, &equal_stage.specs, record)?;
                    }
                    Err(e) => record.failures.push(format!("{}: {e}", estimate.label())),
                }
            }
            ContinuousEstimate::WcfVarying => {
                match fit_wcf(
                    &data.measurements,
                    &a,
                    &varying_stage.specs,
                    &wcf_config,
                    &varying_stage.fit,
                    rng,
                ) {
                    Ok(wcf) => {
                        record.fit_stats.push(FitStat::of(estimate.label(), &wcf));
                        push(estimate.label(), &wcf, &varying_stage.specs, record)?;
                    }
                    Err(e) => record.failures.push(format!("{}: {e}", estimate.label())),
                }
            }
        }
    }
    Ok(())
}
