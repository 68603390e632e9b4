use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{file_content, TraceOracle};
use super::paths::enumerate_basic_paths;
use super::{mutate_traces_with, AddMode, StepKind, Trace};
use crate::model::{ElementKind, ValueType};
use crate::runtime::Environment;
use crate::scenario::Bundle;

/// Labelled traces for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Suite {
    pub scenario: String,
    pub basic_paths: usize,
    pub traces: Vec<Trace>,
}

/// The basic paths followed by `mutants` labelled mutants of them.
pub fn build_suite(bundle: &Bundle, mutants: usize, seed: u64) -> Suite {
    build_suite_with(bundle, mutants, seed, AddMode::Duplicate)
}

pub fn build_suite_with(bundle: &Bundle, mutants: usize, seed: u64, add: AddMode) -> Suite {
    let oracle = TraceOracle::new(bundle);
    let basic = enumerate_basic_paths(bundle);
    let mut traces = basic.clone();
    traces.extend(mutate_traces_with(&oracle, &basic, mutants, seed, add));
    Suite { scenario: bundle.name.clone(), basic_paths: basic.len(), traces }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceOutcome {
    pub accepted: bool,
    pub failed_at: Option<usize>,
    pub detail: Option<String>,
}

/// Replays a trace against a fresh environment. Accepted means every step
/// committed, every decision completed, and an end event was reached.
pub fn run_trace(bundle: &Bundle, trace: &Trace) -> TraceOutcome {
    let fail = |i: Option<usize>, d: String| TraceOutcome { accepted: false, failed_at: i, detail: Some(d) };
    let (mut env, contract) = match bundle.environment(&trace.id) {
        Ok(x) => x,
        Err(e) => return fail(None, e.to_string()),
    };
    stock_files(bundle, &env);
    let inst = match bundle.create_instance(&mut env, &contract) {
        Ok(i) => i,
        Err(e) => return fail(None, e.to_string()),
    };
    for (i, step) in trace.steps.iter().enumerate() {
        let who = env.identity(&step.invoker.membership, &step.invoker.user);
        let r = match step.kind {
            StepKind::Message => env.send_message(&who, &inst, &step.element, &step.payload).map(|_| true),
            StepKind::Confirm => env.confirm_message(&who, &inst, &step.element).map(|_| true),
            // A loop may reset the decision right after it completes, so the
            // callback transaction is the evidence, not the element state.
            StepKind::Brt => {
                env.trigger_brt(&who, &inst, &step.element).map(|o| o.callback().is_some_and(|c| c.committed()))
            }
        };
        match r {
            Err(e) => return fail(Some(i), e.to_string()),
            Ok(false) => return fail(Some(i), format!("decision `{}` did not complete", step.element)),
            Ok(true) => {}
        }
    }
    match env.instance_view(&inst) {
        Ok(v) if v.completed => TraceOutcome { accepted: true, failed_at: None, detail: None },
        Ok(_) => fail(None, "no end event completed".into()),
        Err(e) => fail(None, e.to_string()),
    }
}

/// Puts the content behind every generated file CID into the store.
fn stock_files(bundle: &Bundle, env: &Environment) {
    for el in bundle.model.elements.values() {
        if let ElementKind::ChoreographyTask { message, .. } = &el.kind {
            for f in bundle.model.messages[message].fields.iter().filter(|f| f.ty == ValueType::File) {
                env.cas.put(&file_content(&el.id, &f.name));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Disagreement {
    pub trace_id: String,
    pub expected: bool,
    pub outcome: TraceOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConformanceReport {
    pub scenario: String,
    pub basic_paths: usize,
    pub traces: usize,
    pub conforming: usize,
    pub non_conforming: usize,
    pub agreements: usize,
    pub disagreements: Vec<Disagreement>,
}

impl ConformanceReport {
    pub fn rate(&self) -> f64 {
        if self.traces == 0 {
            return 0.0;
        }
        self.agreements as f64 / self.traces as f64
    }

    pub fn passed(&self) -> bool {
        self.traces > 0 && self.disagreements.is_empty()
    }
}

/// Runs every trace of the suite in parallel, each against its own environment.
pub fn run_conformance(bundle: &Bundle, suite: &Suite) -> ConformanceReport {
    let outcomes: Vec<(usize, TraceOutcome)> =
        suite.traces.par_iter().enumerate().map(|(i, t)| (i, run_trace(bundle, t))).collect();
    let mut disagreements = Vec::new();
    for (i, outcome) in outcomes {
        let t = &suite.traces[i];
        if outcome.accepted != t.conforming {
            disagreements.push(Disagreement { trace_id: t.id.clone(), expected: t.conforming, outcome });
        }
    }
    let conforming = suite.traces.iter().filter(|t| t.conforming).count();
    ConformanceReport {
        scenario: suite.scenario.clone(),
        basic_paths: suite.basic_paths,
        traces: suite.traces.len(),
        conforming,
        non_conforming: suite.traces.len() - conforming,
        agreements: suite.traces.len() - disagreements.len(),
        disagreements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purchase_suite_agrees() {
        let b = Bundle::builtin("purchase").unwrap();
        let suite = build_suite(&b, 60, 1);
        assert_eq!(suite.traces.len(), 62);
        assert!(suite.traces.iter().any(|t| !t.conforming));
        let report = run_conformance(&b, &suite);
        assert!(report.passed(), "{:#?}", report.disagreements);
    }

    #[test]
    fn graft_suites_agree() {
        for name in ["supply-chain", "blood-analysis"] {
            let b = Bundle::builtin(name).unwrap();
            let suite = build_suite_with(&b, 80, 5, AddMode::Graft);
            let report = run_conformance(&b, &suite);
            assert!(report.passed(), "{name}: {:#?}", report.disagreements);
        }
    }

    #[test]
    fn suites_are_reproducible() {
        let b = Bundle::builtin("pizza-order").unwrap();
        let a = build_suite(&b, 40, 9);
        let c = build_suite(&b, 40, 9);
        assert_eq!(a.traces, c.traces);
    }
}
