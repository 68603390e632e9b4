use std::io::Write as _;
use std::path::PathBuf;

use chor_core::bpmn::BpmnError;
use chor_core::dmn::{DecisionError, DmnError};
use chor_core::ledger::ChainError;
use chor_core::runtime::RuntimeError;
use chor_core::scenario::ScenarioError;
use chor_core::store::StoreError;
use serde_json::{json, Value as Json};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A malformed argument value; exit status 2 like other usage errors.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{message}")]
    Failed { code: &'static str, message: String, detail: Option<Json> },
}

impl CliError {
    pub fn failed(code: &'static str, message: impl Into<String>) -> CliError {
        CliError::Failed { code, message: message.into(), detail: None }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn status(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Io { .. } => "Io",
            CliError::Failed { code, .. } => code,
        }
    }

    pub fn report(&self, command: &str, json: bool) {
        if json {
            let mut out = json!({ "command": command, "error": self.code(), "message": self.to_string() });
            if let CliError::Failed { detail: Some(d), .. } = self {
                out["detail"] = d.clone();
            }
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&out).expect("JSON"));
        } else {
            let _ = writeln!(std::io::stderr().lock(), "chor {command}: {self}");
        }
    }
}

impl From<BpmnError> for CliError {
    fn from(e: BpmnError) -> CliError {
        CliError::failed("BadModel", e.to_string())
    }
}

impl From<DmnError> for CliError {
    fn from(e: DmnError) -> CliError {
        CliError::failed("BadDecisionModel", e.to_string())
    }
}

impl From<DecisionError> for CliError {
    fn from(e: DecisionError) -> CliError {
        CliError::failed("DecisionError", e.to_string())
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> CliError {
        let detail = serde_json::to_value(&e).ok();
        CliError::Failed { code: "BrokenChain", message: e.to_string(), detail }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> CliError {
        let message = e.to_string();
        match e {
            RuntimeError::Rejected { reject, .. } => {
                CliError::Failed { code: "Rejected", message, detail: serde_json::to_value(reject).ok() }
            }
            _ => CliError::failed("Runtime", message),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> CliError {
        match e {
            ScenarioError::Runtime(r) => r.into(),
            other => CliError::failed("BadScenario", other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> CliError {
        match e {
            StoreError::Runtime(r) => r.into(),
            other => CliError::failed("Store", other.to_string()),
        }
    }
}
