//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tomo_core::binning::{refine, RefineConfig};
use tomo_core::cf::MeasurementSet;
use tomo_core::estimators::{
    fit_mle_discrete, EmConfig, EstimatorConfig, ResultFile, Variant,
};
use tomo_core::identifiability::{
    counterexample_report, identifiability_check, polya_cf, polya_density, LAMBDA, LEAF_A,
    SHARED_A, SHARED_A_ALT,
};
use tomo_core::mixture::{FittedMixture, MixtureSpec};
use tomo_core::parametric::ParametricModel;
use tomo_core::sim::{builtin_scenario, generate, run, LinkModels, RunSummary, Scenario};
use tomo_core::topology::{routing_matrix, TreeTopology};

use crate::error::CliError;
use crate::{BinStrategy, EstimatorKind, EstimatorOpts, FigureId};

/// Ground-truth sidecar written next to simulated measurements.
#[derive(Serialize, Deserialize)]
struct TruthFile {
    scenario: String,
    replication: usize,
    seed: u64,
    n_samples: usize,
    links: Vec<LinkTruth>,
}

#[derive(Serialize, Deserialize)]
struct LinkTruth {
    link: usize,
    model: ParametricModel,
}

fn load_scenario(name_or_path: &str) -> Result<Scenario, CliError> {
    if Path::new(name_or_path).exists() {
        let text = fs::read_to_string(name_or_path)?;
        Ok(Scenario::from_json(&text)?)
    } else {
        Ok(builtin_scenario(name_or_path)?)
    }
}

pub fn simulate(
    scenario: &str,
    n: Option<usize>,
    rep: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut scenario = load_scenario(scenario)?;
    if let Some(n) = n {
        scenario.n_samples = n;
    }
    if let Some(seed) = seed {
        scenario.base_seed = seed;
    }
    fs::create_dir_all(out)?;
    let data = generate(&scenario, rep)?;
    let leaf_ids = scenario.topology.leaves().to_vec();
    data.measurements
        .write_csv(out.join("measurements.csv"), &leaf_ids)?;
    let truth = TruthFile {
        scenario: scenario.name.clone(),
        replication: rep,
        seed: data.seed,
        n_samples: scenario.n_samples,
        links: data
            .models
            .iter()
            .enumerate()
            .map(|(j, model)| LinkTruth {
                link: j + 1,
                model: model.clone(),
            })
            .collect(),
    };
    fs::write(
        out.join("truth.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    fs::write(out.join("topology.json"), scenario.topology.to_json())?;
    println!(
        "wrote {} rows × {} receivers to {}",
        scenario.n_samples,
        leaf_ids.len(),
        out.display()
    );
    Ok(())
}

pub struct EstimateArgs {
    pub measurements: PathBuf,
    pub topology: PathBuf,
    pub estimator: EstimatorKind,
    pub bins: BinStrategy,
    pub n_bins: usize,
    pub zero_atom: bool,
    pub rounds: usize,
    pub grid_states: Option<usize>,
    pub seed: Option<u64>,
    pub opts: EstimatorOpts,
    pub out: PathBuf,
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let topology = TreeTopology::from_json(&fs::read_to_string(&args.topology)?)?;
    let a = routing_matrix(&topology);
    let (measurements, headers) = MeasurementSet::read_csv(&args.measurements)?;
    if measurements.dim() != topology.leaf_count() {
        return Err(CliError::config(format!(
            "measurements have {} columns but the topology has {} receivers",
            measurements.dim(),
            topology.leaf_count()
        )));
    }
    let expected: Vec<String> = topology
        .leaves()
        .iter()
        .map(|id| format!("leaf_{id}"))
        .collect();
    if headers.iter().all(|h| h.starts_with("leaf_")) && headers != expected {
        return Err(CliError::config(format!(
            "measurement columns {headers:?} do not match topology receivers {expected:?}"
        )));
    }

    let report = identifiability_check(&a);
    if !report.identifiable_up_to_shift {
        log::warn!(
            "topology is not identifiable up to shift: row-product rank {} < {} links; \
             estimates for the affected links are not unique",
            report.rank,
            report.links
        );
    }

    fs::create_dir_all(&args.out)?;
    let seed = args.seed.unwrap_or(0);
    let (result_file, fitted) = match args.estimator {
        EstimatorKind::Mle => {
            let states = match args.grid_states {
                Some(s) => s,
                None => {
                    let max = measurements
                        .rows()
                        .flat_map(|r| r.iter())
                        .fold(0.0f64, |m, &v| m.max(v));
                    max.round() as usize + 1
                }
            };
            let result = fit_mle_discrete(&measurements, &a, states, &EmConfig::default())?;
            let specs: Vec<MixtureSpec> = (0..a.links())
                .map(|j| MixtureSpec::integer_grid(j, states))
                .collect::<Result<_, _>>()?;
            let fitted = result.fitted(&specs);
            (ResultFile::new(&result, &specs), fitted)
        }
        EstimatorKind::Cf | EstimatorKind::Wcf => {
            let variant = if args.estimator == EstimatorKind::Wcf {
                Variant::Wcf
            } else {
                Variant::Cf
            };
            let config = RefineConfig {
                n_bins: args.n_bins,
                zero_atom: args.zero_atom,
                rounds: match args.bins {
                    BinStrategy::Equal => 0,
                    BinStrategy::Varying => args.rounds,
                },
                estimator: EstimatorConfig {
                    variant,
                    k_frequencies: args.opts.k_frequencies,
                    wcf_frequencies: Some(args.opts.wcf_frequencies),
                    t_scale: args.opts.t_scale,
                    ..EstimatorConfig::cf()
                },
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outcome = refine(&measurements, &a, &config, &mut rng)?;
            let fitted = outcome.final_fitted();
            (
                ResultFile::new(&outcome.final_fit, outcome.final_specs()),
                fitted,
            )
        }
    };

    fs::write(
        args.out.join("result.json"),
        serde_json::to_string_pretty(&result_file)?,
    )?;
    write_cdf_grid(&args.out.join("cdf.csv"), &fitted)?;
    println!(
        "fitted {} links; results in {}",
        fitted.len(),
        args.out.display()
    );
    Ok(())
}

/// Per-link fitted CDF samples: link, x, cdf.
fn write_cdf_grid(path: &Path, fitted: &[FittedMixture]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["link", "x", "cdf"])?;
    for (j, fit) in fitted.iter().enumerate() {
        let hi = fit.quantile(0.995).unwrap_or(1.0).max(1e-9);
        for i in 0..=200 {
            let x = hi * i as f64 / 200.0;
            w.write_record([
                (j + 1).to_string(),
                format!("{x}"),
                format!("{}", fit.cdf(x)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn check(topology: &Path) -> Result<(), CliError> {
    let topology = TreeTopology::from_json(&fs::read_to_string(topology)?)?;
    let report = identifiability_check(&routing_matrix(&topology));
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn reproduce(
    figure: FigureId,
    reps: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    match figure {
        FigureId::Fig4 => {
            run_study("discrete4", reps, seed, jobs, out, false)?;
        }
        FigureId::Fig6 => {
            // Single-run CDF overlays for the bimodal mixture study.
            run_study("expgamma4", Some(reps.unwrap_or(1)), seed, jobs, out, true)?;
        }
        FigureId::Fig7 => {
            run_study("exp4", reps, seed, jobs, out, false)?;
        }
        FigureId::Fig8 => {
            run_study("expgamma4", reps, seed, jobs, out, false)?;
        }
        FigureId::Fig9 => {
            let summary = run_study("weibull8", reps, seed, jobs, out, true)?;
            let mut w = csv::Writer::from_path(out.join("average_mallows.csv"))?;
            w.write_record(["estimate", "average_normalized_mallows", "links"])?;
            for labeled in &summary.summaries {
                let links = labeled.summary.links.len();
                let avg: f64 = labeled
                    .summary
                    .links
                    .iter()
                    .map(|l| l.q50)
                    .sum::<f64>()
                    / links as f64;
                w.write_record([
                    labeled.label.clone(),
                    format!("{avg}"),
                    links.to_string(),
                ])?;
                println!("{}: average normalized Mallows {avg:.4} over {links} links", labeled.label);
            }
            w.flush()?;
        }
        FigureId::Fig10 => {
            reproduce_counterexample(out)?;
        }
    }
    Ok(())
}

fn run_study(
    name: &str,
    reps: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: &Path,
    overlays: bool,
) -> Result<RunSummary, CliError> {
    let mut scenario = builtin_scenario(name)?;
    if let Some(reps) = reps {
        scenario.replications = reps;
    }
    if let Some(seed) = seed {
        scenario.base_seed = seed;
    }
    fs::write(out.join("scenario.json"), scenario.to_json())?;
    let summary = run(&scenario, jobs)?;

    let records_dir = out.join("records");
    fs::create_dir_all(&records_dir)?;
    for record in &summary.records {
        fs::write(
            records_dir.join(format!("rep_{:03}.json", record.replication)),
            serde_json::to_string_pretty(record)?,
        )?;
        for failure in &record.failures {
            log::warn!("replication {}: {failure}", record.replication);
        }
    }
    for labeled in &summary.summaries {
        labeled
            .summary
            .write_csv(out.join(format!("summary_{}.csv", labeled.label)))?;
        let medians: Vec<String> = labeled
            .summary
            .links
            .iter()
            .map(|l| format!("{:.3}", l.q50))
            .collect();
        println!(
            "{name} {}: per-link median {} = [{}]",
            labeled.label,
            labeled.summary.metric,
            medians.join(", ")
        );
    }
    if overlays {
        if let LinkModels::Fixed { models } = &scenario.links {
            write_cdf_overlays(&out.join("cdf_overlay.csv"), models, &summary)?;
        }
    }
    Ok(summary)
}

/// Truth and fitted CDFs from replication 0 on a per-link grid.
fn write_cdf_overlays(
    path: &Path,
    models: &[ParametricModel],
    summary: &RunSummary,
) -> Result<(), CliError> {
    let Some(record) = summary.records.first() else {
        return Ok(());
    };
    let labels: Vec<&str> = record.estimates.iter().map(|e| e.label.as_str()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["link".to_string(), "x".to_string(), "truth".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for (j, model) in models.iter().enumerate() {
        let hi = model.quantile(0.995).map_err(|e| {
            CliError::Numerical(format!("truth quantile for link {}: {e}", j + 1))
        })?;
        for i in 0..=200 {
            let x = hi * i as f64 / 200.0;
            let mut row = vec![
                (j + 1).to_string(),
                format!("{x}"),
                format!("{}", model.cdf(x)),
            ];
            for est in &record.estimates {
                row.push(format!("{}", est.fitted[j].cdf(x)));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn reproduce_counterexample(out: &Path) -> Result<(), CliError> {
    let report = counterexample_report(3.0, 0.01);
    let mut w = csv::Writer::from_path(out.join("counterexample_stats.csv"))?;
    w.write_record(["max_joint_cf_gap", "max_marginal_cf_gap", "grid_points_per_axis"])?;
    w.write_record([
        format!("{}", report.max_joint_gap),
        format!("{}", report.max_marginal_gap),
        report.grid_points_per_axis.to_string(),
    ])?;
    w.flush()?;

    // CF curves for the shared link under both constructions and the leaves.
    let mut w = csv::Writer::from_path(out.join("counterexample_cf.csv"))?;
    w.write_record(["t", "cf_shared", "cf_shared_alt", "cf_leaf"])?;
    let steps = 1400;
    for i in 0..=steps {
        let t = -3.5 + 7.0 * i as f64 / steps as f64;
        w.write_record([
            format!("{t}"),
            format!("{}", polya_cf(SHARED_A, LAMBDA, t)),
            format!("{}", polya_cf(SHARED_A_ALT, LAMBDA, t)),
            format!("{}", polya_cf(LEAF_A, LAMBDA, t)),
        ])?;
    }
    w.flush()?;

    // Matching densities by Fourier inversion.
    let mut w = csv::Writer::from_path(out.join("counterexample_density.csv"))?;
    w.write_record(["x", "density_shared", "density_shared_alt", "density_leaf"])?;
    let steps = 800;
    for i in 0..=steps {
        let x = -8.0 + 16.0 * i as f64 / steps as f64;
        w.write_record([
            format!("{x}"),
            format!("{}", polya_density(SHARED_A, LAMBDA, x, 2048)),
            format!("{}", polya_density(SHARED_A_ALT, LAMBDA, x, 2048)),
            format!("{}", polya_density(LEAF_A, LAMBDA, x, 2048)),
        ])?;
    }
    w.flush()?;

    println!(
        "joint CF gap {:.3e} on a {}×{} grid; marginal CF gap {:.4}",
        report.max_joint_gap, report.grid_points_per_axis, report.grid_points_per_axis, report.max_marginal_gap
    );
    Ok(())
}
