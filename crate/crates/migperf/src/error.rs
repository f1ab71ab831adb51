//! Error type shared by the CLI and the HTTP surface.

use migperf_core::bench::BenchError;
use migperf_core::controller::ControllerError;
use migperf_core::device::DeviceError;
use migperf_core::report::FigureError;
use migperf_core::telemetry::TelemetryError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Invalid,
    Infeasible,
    NotFound,
    Busy,
    ModeConflict,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::Invalid | ErrorCode::Infeasible => 400,
            ErrorCode::NotFound => 404,
            ErrorCode::Busy | ErrorCode::ModeConflict => 409,
            ErrorCode::Internal => 500,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Invalid => "invalid",
            ErrorCode::Infeasible => "infeasible",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Busy => "busy",
            ErrorCode::ModeConflict => "mode_conflict",
            ErrorCode::Internal => "internal",
        }
    }
}

/// `{code, message}` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Invalid, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl From<DeviceError> for ApiError {
    fn from(e: DeviceError) -> Self {
        let code = match &e {
            DeviceError::AlreadyEnabled(_) | DeviceError::MigDisabled(_) | DeviceError::ModeConflict { .. } => {
                ErrorCode::ModeConflict
            }
            DeviceError::NoCapacity { .. } => ErrorCode::Infeasible,
            DeviceError::NotFound(_) => ErrorCode::NotFound,
            DeviceError::Busy(_) => ErrorCode::Busy,
            DeviceError::UnknownProfile(_) | DeviceError::InvalidStart { .. } | DeviceError::ZeroSlices => {
                ErrorCode::Invalid
            }
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ControllerError> for ApiError {
    fn from(e: ControllerError) -> Self {
        let code = match &e {
            ControllerError::Device(d) => return d.clone().into(),
            ControllerError::UnknownDevice(_) => ErrorCode::NotFound,
            ControllerError::InfeasibleTarget { .. } => ErrorCode::Infeasible,
            ControllerError::BusyInstance { .. } | ControllerError::AlreadyBound { .. } => ErrorCode::Busy,
            ControllerError::NotBound(_) => ErrorCode::Invalid,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<TelemetryError> for ApiError {
    fn from(e: TelemetryError) -> Self {
        let code = match &e {
            TelemetryError::UnknownRun(_) => ErrorCode::NotFound,
            _ => ErrorCode::Invalid,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<BenchError> for ApiError {
    fn from(e: BenchError) -> Self {
        let code = match &e {
            BenchError::SweepPoint { source, .. } => {
                let inner: ApiError = (**source).clone().into();
                return ApiError::new(inner.code, e.to_string());
            }
            BenchError::Controller(c) => return c.clone().into(),
            BenchError::Telemetry(t) => return t.clone().into(),
            BenchError::InvalidSpec(_) | BenchError::Backend(_) => ErrorCode::Invalid,
            BenchError::BindFailed(_) => ErrorCode::Busy,
            BenchError::NoEqualSplit { .. } => ErrorCode::Infeasible,
            BenchError::Conservation { .. } => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<FigureError> for ApiError {
    fn from(e: FigureError) -> Self {
        let code = match &e {
            FigureError::Telemetry(t) => return t.clone().into(),
            FigureError::UnknownFigure(_) => ErrorCode::NotFound,
            FigureError::NoRuns(_) | FigureError::IncompleteGrid { .. } => ErrorCode::Invalid,
        };
        ApiError::new(code, e.to_string())
    }
}
