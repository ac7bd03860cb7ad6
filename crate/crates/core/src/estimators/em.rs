//! EM maximum-likelihood baseline for link delays on a common integer grid.
//!
//! The joint support consistent with an observed row is enumerated once: in
//! a multicast tree every receiver terminates in a link used by it alone, so
//! free choices live on the shared (internal) links and each receiver's own
//! link value is forced to `y_i` minus the shared part. The E-step then
//! weighs those combinations by the current per-link probabilities and the
//! M-step renormalizes expected counts.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cf::MeasurementSet;
use crate::estimators::{EstimationResult, EstimatorError, Variant};
use crate::mixture::MixtureWeights;
use crate::topology::RoutingMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
        }
    }
}

const STATE_BUDGET: f64 = 1e7;

/// Maximum-likelihood fit of per-link probabilities on the grid
/// `{0, ..., states-1}` for every link, by EM over the enumerated joint
/// support. Refuses instances whose support would not fit the budget.
pub fn fit_mle_discrete(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    states: usize,
    config: &EmConfig,
) -> Result<EstimationResult, EstimatorError> {
    let start = Instant::now();
    let links = a.links();
    let receivers = a.receivers();
    if states == 0 {
        return Err(EstimatorError::Config("states must be positive".into()));
    }
    if measurements.dim() != receivers {
        return Err(EstimatorError::Config(format!(
            "measurements have {} columns, routing matrix has {} receivers",
            measurements.dim(),
            receivers
        )));
    }
    if (states as f64).powi(links as i32) > STATE_BUDGET {
        return Err(EstimatorError::Budget { states, links });
    }

    // Each receiver must own exactly one private link (its terminal edge).
    let col_use: Vec<usize> = (0..links)
        .map(|j| a.receivers_on_link(j).len())
        .collect();
    let mut leaf_link = vec![usize::MAX; receivers];
    for i in 0..receivers {
        let own: Vec<usize> = (0..links)
            .filter(|&j| a.entry(i, j) == 1 && col_use[j] == 1)
            .collect();
        if own.len() != 1 {
            return Err(EstimatorError::Config(format!(
                "receiver {i} does not terminate in a single private link; \
                 not a multicast routing matrix"
            )));
        }
        leaf_link[i] = own[0];
    }
    let shared_links: Vec<usize> = (0..links).filter(|j| !leaf_link.contains(j)).collect();

    // Round measurements to the grid and collapse duplicates.
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for (r, row) in measurements.rows().enumerate() {
        let mut y = Vec::with_capacity(receivers);
        for &v in row {
            let rounded = v.round();
            if (v - rounded).abs() > 1e-9 || rounded < 0.0 {
                return Err(EstimatorError::GridData(format!(
                    "row {r} has non-grid value {v}"
                )));
            }
            y.push(rounded as u32);
        }
        *counts.entry(y).or_insert(0) += 1;
    }

    // Enumerate joint assignments consistent with each distinct row.
    let mut supports: Vec<(usize, Vec<Vec<u8>>)> = Vec::with_capacity(counts.len());
    let mut shared_combo = vec![0u8; shared_links.len()];
    let mut combos: Vec<(Vec<u8>, Vec<i64>)> = Vec::new();
    loop {
        let sums: Vec<i64> = (0..receivers)
            .map(|i| {
                shared_links
                    .iter()
                    .zip(&shared_combo)
                    .filter(|(&j, _)| a.entry(i, j) == 1)
                    .map(|(_, &v)| v as i64)
                    .sum()
            })
            .collect();
        combos.push((shared_combo.clone(), sums));
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == shared_combo.len() {
                break;
            }
            shared_combo[pos] += 1;
            if (shared_combo[pos] as usize) < states {
                break;
            }
            shared_combo[pos] = 0;
            pos += 1;
        }
        if pos == shared_combo.len() {
            break;
        }
    }
    for (y, count) in &counts {
        let mut consistent = Vec::new();
        for (combo, sums) in &combos {
            let mut x = vec![0u8; links];
            for (slot, &j) in combo.iter().zip(&shared_links) {
                x[j] = *slot;
            }
            let mut ok = true;
            for i in 0..receivers {
                let leaf_value = y[i] as i64 - sums[i];
                if leaf_value < 0 || leaf_value >= states as i64 {
                    ok = false;
                    break;
                }
                x[leaf_link[i]] = leaf_value as u8;
            }
            if ok {
                consistent.push(x);
            }
        }
        if consistent.is_empty() {
            return Err(EstimatorError::GridData(format!(
                "row {y:?} has no grid-consistent link assignment"
            )));
        }
        supports.push((*count, consistent));
    }

    let n = measurements.len() as f64;
    let mut probs = vec![vec![1.0 / states as f64; states]; links];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..config.max_iters {
        let mut expected = vec![vec![0.0f64; states]; links];
        let mut ll = 0.0;
        let mut combo_weights: Vec<f64> = Vec::new();
        for (count, consistent) in &supports {
            combo_weights.clear();
            let mut total = 0.0;
            for x in consistent {
                let mut w = 1.0;
                for (j, &v) in x.iter().enumerate() {
                    w *= probs[j][v as usize];
                }
                combo_weights.push(w);
                total += w;
            }
            ll += *count as f64 * total.max(f64::MIN_POSITIVE).ln();
            if total > 0.0 {
                let scale = *count as f64 / total;
                for (x, w) in consistent.iter().zip(&combo_weights) {
                    let q = w * scale;
                    for (j, &v) in x.iter().enumerate() {
                        expected[j][v as usize] += q;
                    }
                }
            }
        }
        for (j, row) in expected.iter().enumerate() {
            for (v, &e) in row.iter().enumerate() {
                probs[j][v] = e / n;
            }
        }
        trace.push(-ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() < config.tol * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    let weights: Result<Vec<MixtureWeights>, _> =
        probs.into_iter().map(MixtureWeights::new).collect();
    Ok(EstimationResult {
        variant: Variant::Mle,
        weights: weights?,
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{routing_matrix, TreeTopology};
    use approx::assert_relative_eq;

    #[test]
    fn single_observed_link_is_empirical_histogram() {
        let t = TreeTopology::new(0, vec![(0, 1)], vec![1]).unwrap();
        let a = routing_matrix(&t);
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 5.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let meas = MeasurementSet::new(rows).unwrap();
        let result = fit_mle_discrete(&meas, &a, 6, &EmConfig::default()).unwrap();
        let expected = [0.2, 0.3, 0.4, 0.0, 0.0, 0.1];
        for (got, want) in result.weights[0].as_slice().iter().zip(expected) {
            assert_relative_eq!(got, &want, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_links_recovered_exactly() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        // X = (0, 0, 3) always, so Y = (0, 3). The zero end-to-end delay pins
        // the shared link at zero and the assignment is unique.
        let meas = MeasurementSet::new(vec![vec![0.0, 3.0]; 40]).unwrap();
        let result = fit_mle_discrete(&meas, &a, 6, &EmConfig::default()).unwrap();
        let expected = [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        ];
        for (link, want) in expected.iter().enumerate() {
            for (got, w) in result.weights[link].as_slice().iter().zip(want) {
                assert_relative_eq!(got, w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shift_slack_keeps_symmetric_fixed_point() {
        // X = (2, 1, 3) always: Y = (3, 5) admits four shift-consistent
        // assignments. EM from the uniform start must stay at the symmetric
        // stationary point spreading mass evenly across the slack range.
        let a = routing_matrix(&TreeTopology::two_leaf());
        let meas = MeasurementSet::new(vec![vec![3.0, 5.0]; 40]).unwrap();
        let result = fit_mle_discrete(&meas, &a, 6, &EmConfig::default()).unwrap();
        for x1 in 0..4 {
            assert_relative_eq!(result.weights[0].as_slice()[x1], 0.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_likelihood_nondecreasing() {
        let a = routing_matrix(&TreeTopology::four_leaf());
        let mut rows = Vec::new();
        // A deterministic but varied synthetic data set on the grid.
        for i in 0..200u32 {
            let x: Vec<u32> = (0..7).map(|j| (i * (j + 3) + j * j) % 6).collect();
            rows.push(vec![
                (x[0] + x[1] + x[3]) as f64,
                (x[0] + x[1] + x[4]) as f64,
                (x[0] + x[2] + x[5]) as f64,
                (x[0] + x[2] + x[6]) as f64,
            ]);
        }
        let meas = MeasurementSet::new(rows).unwrap();
        let result = fit_mle_discrete(&meas, &a, 6, &EmConfig::default()).unwrap();
        let neg_ll = &result.objective_trace;
        let scale = 1.0 + neg_ll[0].abs();
        for w in neg_ll.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * scale, "increase in {w:?}");
        }
        assert!(result.converged);
    }

    #[test]
    fn budget_guard_refuses_large_instances() {
        let a = routing_matrix(&TreeTopology::balanced_binary(3));
        let meas = MeasurementSet::new(vec![vec![0.0; 8]; 4]).unwrap();
        let err = fit_mle_discrete(&meas, &a, 12, &EmConfig::default());
        assert!(matches!(err, Err(EstimatorError::Budget { .. })));
    }

    #[test]
    fn non_grid_data_rejected() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        let meas = MeasurementSet::new(vec![vec![1.5, 2.0]]).unwrap();
        assert!(matches!(
            fit_mle_discrete(&meas, &a, 6, &EmConfig::default()),
            Err(EstimatorError::GridData(_))
        ));
    }
}
