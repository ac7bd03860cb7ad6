//! Error metrics between true and estimated delay distributions, and
//! quartile summaries across replications.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::FittedMixture;
use crate::parametric::ParametricModel;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("distributions live on different grids ({0} vs {1} points)")]
    GridMismatch(usize, usize),
    #[error("true distribution has zero standard deviation")]
    ZeroVariance,
    #[error("no values to summarize")]
    Empty,
    #[error("quantile evaluation failed: {0}")]
    Quantile(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// L1 distance between two probability vectors on the same grid; equals
/// twice the total-variation distance, so it ranges over [0, 2].
pub fn l1_density_distance(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::GridMismatch(p.len(), q.len()));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

pub const MALLOWS_POINTS: usize = 2000;

/// Mallows distance `∫₀¹ |F⁻¹(p) − G⁻¹(p)| dp` by the midpoint rule on the
/// given number of probability points.
pub fn mallows<F, G>(f_inv: F, g_inv: G, points: usize) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let q = points.max(1);
    (0..q)
        .map(|i| {
            let p = (i as f64 + 0.5) / q as f64;
            (f_inv(p) - g_inv(p)).abs()
        })
        .sum::<f64>()
        / q as f64
}

/// Mallows distance between the true model and a fitted mixture, divided by
/// the true standard deviation so heterogeneous links are comparable.
pub fn normalized_mallows(
    truth: &ParametricModel,
    fitted: &FittedMixture,
    points: usize,
) -> Result<f64, MetricsError> {
    let sd = truth.sd();
    if !(sd > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let q = points.max(1);
    let mut acc = 0.0;
    for i in 0..q {
        let p = (i as f64 + 0.5) / q as f64;
        let a = truth
            .quantile(p)
            .map_err(|e| MetricsError::Quantile(e.to_string()))?;
        let b = fitted
            .quantile(p)
            .map_err(|e| MetricsError::Quantile(e.to_string()))?;
        acc += (a - b).abs();
    }
    Ok(acc / q as f64 / sd)
}

/// Quartiles with the linear-interpolation convention (as in sorted sample
/// index `h = (n−1)p`).
pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN metric values"));
    let at = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok((at(0.25), at(0.5), at(0.75)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub link: usize,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub n_reps: usize,
}

/// Per-link quartiles of a metric across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub metric: String,
    pub links: Vec<LinkSummary>,
}

impl ErrorSummary {
    /// `values_per_link[j]` holds link j's metric value in each replication.
    pub fn summarize(metric: &str, values_per_link: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let links = values_per_link
            .iter()
            .enumerate()
            .map(|(link, values)| {
                let (q25, q50, q75) = quartiles(values)?;
                Ok(LinkSummary {
                    link: link + 1,
                    q25,
                    q50,
                    q75,
                    n_reps: values.len(),
                })
            })
            .collect::<Result<Vec<_>, MetricsError>>()?;
        Ok(Self {
            metric: metric.to_string(),
            links,
        })
    }

    pub fn median(&self, link_index: usize) -> f64 {
        self.links[link_index].q50
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["link", "metric", "q25", "q50", "q75", "n_reps"])?;
        for row in &self.links {
            w.write_record([
                row.link.to_string(),
                self.metric.clone(),
                format!("{}", row.q25),
                format!("{}", row.q50),
                format!("{}", row.q75),
                row.n_reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut metric = String::new();
        let mut links = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |i: usize| {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| MetricsError::Quantile(e.to_string()))
            };
            metric = record[1].to_string();
            links.push(LinkSummary {
                link: record[0]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| MetricsError::Quantile(e.to_string()))?,
                q25: parse(2)?,
                q50: parse(3)?,
                q75: parse(4)?,
                n_reps: record[5]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| MetricsError::Quantile(e.to_string()))?,
            });
        }
        Ok(Self { metric, links })
    }
}
