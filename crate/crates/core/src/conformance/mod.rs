//! Conformance harness: an independent token-game oracle over the
//! choreography graph, basic-path enumeration, trace mutation, and a runner
//! that replays labelled traces against fresh environments and compares the
//! outcome with the oracle's label.

mod mutate;
mod oracle;
mod paths;
mod run;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::scenario::Actor;

pub use mutate::{mutate_traces, mutate_traces_with, AddMode, Mutation};
pub use oracle::{file_content, OracleVerdict, TraceOracle};
pub use paths::{enumerate_basic_paths, enumerate_runs, PathLimits};
pub use run::{build_suite, build_suite_with, run_conformance, run_trace, ConformanceReport, Disagreement, Suite, TraceOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Message,
    Confirm,
    Brt,
}

/// One invocation in a trace. `payload` is only meaningful for `Message`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Step {
    pub element: String,
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub payload: Map<String, Json>,
    pub invoker: Actor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum TraceOrigin {
    /// A distinct path through the model.
    Basic,
    Mutant { mutation: Mutation, base: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trace {
    pub id: String,
    pub steps: Vec<Step>,
    pub origin: TraceOrigin,
    /// Label assigned by the oracle.
    pub conforming: bool,
}

impl Trace {
    /// The (element, kind) sequence, which identifies a path.
    pub fn signature(&self) -> Vec<(String, StepKind)> {
        self.steps.iter().map(|s| (s.element.clone(), s.kind)).collect()
    }
}
