//! Error-to-exit-code mapping: 2 configuration, 3 numerical, 4 I/O.

use std::fmt;

use tomo_core::binning::BinningError;
use tomo_core::cf::CfError;
use tomo_core::estimators::EstimatorError;
use tomo_core::metrics::MetricsError;
use tomo_core::mixture::ModelError;
use tomo_core::sim::SimError;
use tomo_core::topology::TopologyError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "{m}"),
            Self::Numerical(m) => write!(f, "{m}"),
            Self::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<CfError> for CliError {
    fn from(e: CfError) -> Self {
        match e {
            CfError::Csv(_) | CfError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Qp { .. } | EstimatorError::WeightMatrixSingular { .. } => {
                Self::Numerical(e.to_string())
            }
            EstimatorError::Cf(inner) => inner.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<BinningError> for CliError {
    fn from(e: BinningError) -> Self {
        match e {
            BinningError::Solve(_) => Self::Numerical(e.to_string()),
            BinningError::Cf(inner) => inner.into(),
            BinningError::Estimator(inner) => inner.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Csv(_) | MetricsError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Cf(inner) => inner.into(),
            SimError::Estimator(inner) => inner.into(),
            SimError::Binning(inner) => inner.into(),
            SimError::Metrics(inner) => inner.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}
