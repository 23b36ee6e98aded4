use serde::Serialize;

use motionkit::datasets::DatasetError;
use motionkit::geometry::GeometryError;
use motionkit::lie::LieError;
use motionkit::metrics::MetricsError;
use motionkit::tvae::TvaeError;

/// Domain failure, reported on stderr as one JSON object.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            error: kind,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new("invalid_argument", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

macro_rules! from_error {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e.to_string())
            }
        }
    };
}

from_error!(DatasetError, "dataset");
from_error!(TvaeError, "model");
from_error!(MetricsError, "metrics");
from_error!(GeometryError, "geometry");
from_error!(LieError, "skeleton");
from_error!(std::io::Error, "io");
from_error!(serde_json::Error, "parse");

pub type CliResult<T> = Result<T, CliError>;
