//! Empirical and model characteristic functions of the end-to-end delay
//! vector, and the frequency points they are compared at.
//!
//! Frequencies are drawn on two-coordinate subspaces: a point touching every
//! receiver at once pushes `|φ_Y|` toward zero, where the residual variance
//! `1 − |φ_Y|²` is largest and the point carries no information. Receiver
//! pairs are cycled round-robin so all pairs are equally represented and a
//! run is reproducible from its seed.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::{MixtureSpec, MixtureWeights};
use crate::topology::RoutingMatrix;

#[derive(Debug, Error)]
pub enum CfError {
    #[error("measurements empty or ragged")]
    BadShape,
    #[error("measurement entry at row {row}, column {col} is negative or not finite")]
    BadEntry { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least one frequency point and one coordinate")]
    BadFrequencyRequest,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// A frequency point with at most a couple of nonzero coordinates, stored
/// sparsely as (receiver index, value) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFreq {
    pub entries: Vec<(usize, f64)>,
}

impl SparseFreq {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        Self { entries }
    }

    pub fn zero() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn dot(&self, row: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * row[i]).sum()
    }

    /// t·A^j for a 0/1 column of the routing matrix.
    #[inline]
    pub fn dot_column(&self, a: &RoutingMatrix, link: usize) -> f64 {
        self.entries
            .iter()
            .filter(|&&(i, _)| a.entry(i, link) == 1)
            .map(|&(_, v)| v)
            .sum()
    }

    /// Coordinate-wise difference, still sparse.
    pub fn minus(&self, other: &SparseFreq) -> SparseFreq {
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(ia, va)), Some(&&(ib, vb))) => {
                    if ia == ib {
                        let d = va - vb;
                        if d != 0.0 {
                            entries.push((ia, d));
                        }
                        a.next();
                        b.next();
                    } else if ia < ib {
                        entries.push((ia, va));
                        a.next();
                    } else {
                        entries.push((ib, -vb));
                        b.next();
                    }
                }
                (Some(&&(ia, va)), None) => {
                    entries.push((ia, va));
                    a.next();
                }
                (None, Some(&&(ib, vb))) => {
                    entries.push((ib, -vb));
                    b.next();
                }
                (None, None) => break,
            }
        }
        SparseFreq { entries }
    }
}

/// End-to-end delay measurements: N probes, one row each, plus per-receiver
/// sample statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    data: Vec<f64>,
    n: usize,
    dim: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, CfError> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || dim == 0 {
            return Err(CfError::BadShape);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row_idx, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(CfError::BadShape);
            }
            for (col, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(CfError::BadEntry { row: row_idx, col });
                }
                data.push(v);
            }
        }
        Ok(Self::from_flat(data, rows.len(), dim))
    }

    fn from_flat(data: Vec<f64>, n: usize, dim: usize) -> Self {
        let mut means = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut sds = vec![0.0; dim];
        if n > 1 {
            for row in data.chunks_exact(dim) {
                for ((s, &m), &v) in sds.iter_mut().zip(&means).zip(row) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in &mut sds {
                *s = (*s / (n - 1) as f64).sqrt();
            }
        }
        Self {
            data,
            n,
            dim,
            means,
            sds,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Per-coordinate sample standard deviations (ddof 1; zero for N = 1).
    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Sample covariance between coordinates `i` and `k` (ddof 1).
    pub fn covariance(&self, i: usize, k: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let (mi, mk) = (self.means[i], self.means[k]);
        let sum: f64 = self
            .rows()
            .map(|row| (row[i] - mi) * (row[k] - mk))
            .sum();
        sum / (self.n - 1) as f64
    }

    /// One row per probe, one column per receiver, header `leaf_<id>`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, leaf_ids: &[u32]) -> Result<(), CfError> {
        if leaf_ids.len() != self.dim {
            return Err(CfError::Dimension(format!(
                "{} leaf ids for {} columns",
                leaf_ids.len(),
                self.dim
            )));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(leaf_ids.iter().map(|id| format!("leaf_{id}")))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Returns the measurements and the header names.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Self, Vec<String>), CfError> {
        let mut r = csv::Reader::from_path(path)?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let row: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| {
                CfError::Dimension(format!("non-numeric measurement value: {e}"))
            })?);
        }
        Ok((Self::new(rows)?, headers))
    }
}

/// Sampled frequency points plus the sampler configuration they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySet {
    pub dim: usize,
    pub scale: f64,
    pub points: Vec<SparseFreq>,
}

impl FrequencySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Truncate to the first `k` points. Round-robin pair assignment keeps a
    /// prefix balanced to within one point per pair.
    pub fn truncated(&self, k: usize) -> FrequencySet {
        FrequencySet {
            dim: self.dim,
            scale: self.scale,
            points: self.points[..k.min(self.points.len())].to_vec(),
        }
    }
}

/// Draw `k` frequency points supported on receiver pairs, cycling the pairs
/// round-robin. Nonzero coordinates are Gaussian with the given scale,
/// divided by that coordinate's empirical standard deviation so that
/// heterogeneous receivers see comparable phases. A degenerate (zero)
/// standard deviation leaves the coordinate unnormalized.
pub fn sample_frequencies<R: Rng + ?Sized>(
    dim: usize,
    k: usize,
    scale: f64,
    sds: &[f64],
    rng: &mut R,
) -> Result<FrequencySet, CfError> {
    if dim == 0 || k == 0 || sds.len() != dim {
        return Err(CfError::BadFrequencyRequest);
    }
    let norm = |i: usize| if sds[i] > 1e-12 { sds[i] } else { 1.0 };
    let pairs: Vec<(usize, usize)> = if dim == 1 {
        vec![(0, 0)]
    } else {
        (0..dim)
            .flat_map(|i| ((i + 1)..dim).map(move |j| (i, j)))
            .collect()
    };
    let mut points = Vec::with_capacity(k);
    for idx in 0..k {
        let (i, j) = pairs[idx % pairs.len()];
        let gi: f64 = StandardNormal.sample(rng);
        let mut entries = vec![(i, scale * gi / norm(i))];
        if j != i {
            let gj: f64 = StandardNormal.sample(rng);
            entries.push((j, scale * gj / norm(j)));
        }
        points.push(SparseFreq::new(entries));
    }
    Ok(FrequencySet { dim, scale, points })
}

/// Empirical CF of the measurements at `t`: `(1/N) Σ_n exp(i t·Y(n))`.
pub fn empirical_cf(measurements: &MeasurementSet, t: &SparseFreq) -> Complex64 {
    let sum: Complex64 = measurements
        .rows()
        .map(|row| Complex64::cis(t.dot(row)))
        .sum();
    sum / measurements.len() as f64
}

/// Empirical CF at every point of a frequency set (parallel over points).
pub fn empirical_cf_all(measurements: &MeasurementSet, freqs: &FrequencySet) -> Vec<Complex64> {
    freqs
        .points
        .par_iter()
        .map(|t| empirical_cf(measurements, t))
        .collect()
}

/// Model CF of `Y` under independent link delays:
/// `φ_Y(t) = Π_j φ_{X_j}(t·A^j)`.
pub fn model_cf_y(
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    weights: &[MixtureWeights],
    t: &SparseFreq,
) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for j in 0..a.links() {
        let arg = t.dot_column(a, j);
        if arg != 0.0 {
            acc *= specs[j].cf(&weights[j], arg);
        }
    }
    acc
}

/// Scaled residuals `ε_k = √N (φ̂_Y(t_k) − φ_Y(t_k; θ))`.
pub fn residuals(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    weights: &[MixtureWeights],
    freqs: &FrequencySet,
) -> Result<Vec<Complex64>, CfError> {
    check_dims(measurements, a, specs, freqs)?;
    let root_n = (measurements.len() as f64).sqrt();
    Ok(freqs
        .points
        .iter()
        .map(|t| root_n * (empirical_cf(measurements, t) - model_cf_y(a, specs, weights, t)))
        .collect())
}

/// Covariance matrix of the residual vector under the model `θ`:
/// `W[r][c] = φ_Y(t_r − t_c) − φ_Y(t_r) φ_Y*(t_c)`. Hermitian PSD with
/// diagonal `1 − |φ_Y(t_k)|²`.
pub fn weight_matrix(
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    weights: &[MixtureWeights],
    freqs: &FrequencySet,
) -> DMatrix<Complex64> {
    let k = freqs.len();
    let phi: Vec<Complex64> = freqs
        .points
        .iter()
        .map(|t| model_cf_y(a, specs, weights, t))
        .collect();
    let mut w = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for r in 0..k {
        w[(r, r)] = Complex64::new(1.0 - phi[r].norm_sqr(), 0.0);
        for c in (r + 1)..k {
            let diff = freqs.points[r].minus(&freqs.points[c]);
            let value = model_cf_y(a, specs, weights, &diff) - phi[r] * phi[c].conj();
            w[(r, c)] = value;
            w[(c, r)] = value.conj();
        }
    }
    w
}

pub(crate) fn check_dims(
    measurements: &MeasurementSet,
    a: &RoutingMatrix,
    specs: &[MixtureSpec],
    freqs: &FrequencySet,
) -> Result<(), CfError> {
    if measurements.dim() != a.receivers() {
        return Err(CfError::Dimension(format!(
            "measurements have {} columns, routing matrix has {} receivers",
            measurements.dim(),
            a.receivers()
        )));
    }
    if specs.len() != a.links() {
        return Err(CfError::Dimension(format!(
            "{} link specs for {} links",
            specs.len(),
            a.links()
        )));
    }
    if freqs.dim != a.receivers() {
        return Err(CfError::Dimension(format!(
            "frequency dim {} vs {} receivers",
            freqs.dim,
            a.receivers()
        )));
    }
    Ok(())
}
