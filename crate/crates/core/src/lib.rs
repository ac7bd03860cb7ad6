//! Link delay tomography from end-to-end multicast probe measurements.
//!
//! A probe sent down a multicast tree accumulates one queuing delay per
//! traversed link, so the vector of end-to-end delays satisfies `Y = A·X`
//! where `A` is the binary routing matrix of the tree and the link delays
//! `X` are mutually independent but unobservable. This crate estimates the
//! per-link delay distributions from samples of `Y`:
//!
//! * [`topology`] — multicast trees, routing matrices, and the row-product
//!   matrix whose column rank decides identifiability.
//! * [`mixture`] — the estimable link-delay model: an optional point mass at
//!   zero, piecewise-uniform bins, and an exponential tail.
//! * [`parametric`] — ground-truth distributions used by the simulation
//!   scenarios (discrete grids, exponential, gamma, Weibull, mixtures).
//! * [`cf`] — empirical and model characteristic functions of `Y`, sparse
//!   frequency sampling, residuals, and the residual covariance matrix.
//! * [`qp`] — a small dense quadratic-program solver over the probability
//!   simplex.
//! * [`estimators`] — the CF and WCF fits via iterative quadratic
//!   programming, plus [`estimators::fit_mle_discrete`], an EM baseline for
//!   discrete grids.
//! * [`binning`] — moment-based equal-width bins and quantile-adaptive
//!   varying bins with iterative refinement.
//! * [`metrics`] — L1 and (normalized) Mallows error metrics and
//!   replication summaries.
//! * [`identifiability`] — the rank criterion and a numeric verification of
//!   the Pólya-type counterexample where two distinct link-delay triples
//!   produce identical end-to-end joint distributions.
//! * [`sim`] — seeded replication studies wiring everything together.

pub mod binning;
pub mod cf;
pub mod estimators;
pub mod identifiability;
pub mod metrics;
pub mod mixture;
pub mod parametric;
pub mod qp;
pub mod sim;
pub mod topology;

pub use binning::{estimate_link_moments, refine, MomentEstimates, RefineConfig};
pub use cf::{sample_frequencies, FrequencySet, MeasurementSet, SparseFreq};
pub use estimators::{
    fit, fit_mle_discrete, fit_wcf, EstimationResult, EstimatorConfig, Variant,
};
pub use identifiability::{identifiability_check, polya_cf, IdentifiabilityReport};
pub use metrics::{l1_density_distance, normalized_mallows, ErrorSummary};
pub use mixture::{FittedMixture, Kernel, MixtureSpec, MixtureWeights};
pub use parametric::ParametricModel;
pub use sim::{builtin_scenario, Scenario};
pub use topology::{ProductMatrix, RoutingMatrix, TreeTopology};
