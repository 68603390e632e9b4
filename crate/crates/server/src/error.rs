use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chor_core::ledger::RejectCode;
use chor_core::offchain::{BusError, CasError};
use chor_core::runtime::RuntimeError;
use chor_core::store::StoreError;
use serde_json::json;

/// An error answered as `{"error": code, "reason": text}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub reason: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, reason: impl Into<String>) -> ApiError {
        ApiError { status, code: code.into(), reason: reason.into() }
    }

    pub fn bad_request(reason: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", reason)
    }

    pub fn not_found(reason: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "NotFound", reason)
    }

    pub fn conflict(reason: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::CONFLICT, "Conflict", reason)
    }

    pub fn unprocessable(code: impl Into<String>, reason: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, reason)
    }

    pub fn internal(reason: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", reason)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "reason": self.reason }))).into_response()
    }
}

fn reject_status(code: RejectCode) -> StatusCode {
    use RejectCode as C;
    match code {
        C::AccessDenied | C::UnknownMembership => StatusCode::FORBIDDEN,
        C::UnknownContract | C::UnknownInstance | C::UnknownOperation => StatusCode::NOT_FOUND,
        C::NotEnabled | C::NotWaiting | C::RequestClosed | C::EndorsementMismatch => StatusCode::CONFLICT,
        C::BadArgs
        | C::PayloadInvalid
        | C::HashMismatch
        | C::DigestMismatch
        | C::DecisionError
        | C::SignatureMismatch
        | C::NoBranch => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> ApiError {
        let reason = e.to_string();
        match e {
            RuntimeError::Rejected { reject, .. } => {
                let code = serde_json::to_value(reject.code).ok().and_then(|v| v.as_str().map(str::to_string));
                ApiError::new(reject_status(reject.code), code.unwrap_or_default(), reason)
            }
            RuntimeError::UnknownInstance(_) | RuntimeError::UnknownContract(_) | RuntimeError::UnknownElement(_) => {
                ApiError::not_found(reason)
            }
            RuntimeError::MissingContent { .. } => ApiError::unprocessable("MissingContent", reason),
            RuntimeError::Bus(b) => b.into(),
            RuntimeError::Ledger(_) => ApiError::bad_request(reason),
        }
    }
}

impl From<BusError> for ApiError {
    fn from(e: BusError) -> ApiError {
        let reason = e.to_string();
        match e {
            BusError::AccessDenied { .. } => ApiError::new(StatusCode::FORBIDDEN, "AccessDenied", reason),
            BusError::UnknownMembership(_) => ApiError::new(StatusCode::FORBIDDEN, "UnknownMembership", reason),
            BusError::NotFound(_) => ApiError::not_found(reason),
            BusError::Cas(c) => c.into(),
        }
    }
}

impl From<CasError> for ApiError {
    fn from(e: CasError) -> ApiError {
        let reason = e.to_string();
        match e {
            CasError::NotFound(_) => ApiError::not_found(reason),
            CasError::BadCid(_) => ApiError::bad_request(reason),
            CasError::Io(_) => ApiError::internal(reason),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> ApiError {
        let reason = e.to_string();
        match e {
            StoreError::UnknownEnv(_) | StoreError::UnknownConsortium(_) => ApiError::not_found(reason),
            StoreError::Exists(_) => ApiError::conflict(reason),
            StoreError::BadId(_) => ApiError::bad_request(reason),
            StoreError::Runtime(r) => r.into(),
            _ => ApiError::internal(reason),
        }
    }
}
