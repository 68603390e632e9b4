use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::value::{Value, ValueType};
use super::{ChoreographyModel, ElementKind, MessageDef};
use crate::hash::is_hex_digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    StartEventCount,
    MissingEndEvent,
    Unreachable,
    CannotReachEnd,
    DanglingFlow,
    DuplicateFlow,
    Degree,
    UnknownParticipant,
    SameInitiatorRecipient,
    UnknownMessage,
    DuplicateField,
    BrtInputs,
    BrtOutput,
    MissingCondition,
    BadDefault,
    UnexpectedCondition,
    BadCondition,
    EventGateway,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, element: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            element: element.map(str::to_string),
            message: message.into(),
        });
    }
}

/// Checks every structural invariant of a choreography. An empty report means
/// the model is admissible for compilation.
pub fn validate_model(model: &ChoreographyModel) -> ValidationReport {
    use ViolationCode as C;
    let mut r = ValidationReport::default();

    let starts: Vec<_> = model.start_events().map(|e| e.id.clone()).collect();
    if starts.len() != 1 {
        r.push(C::StartEventCount, None, format!("expected exactly one start event, found {}", starts.len()));
    }
    let ends: Vec<_> = model
        .elements
        .values()
        .filter(|e| e.kind == ElementKind::EndEvent)
        .map(|e| e.id.clone())
        .collect();
    if ends.is_empty() {
        r.push(C::MissingEndEvent, None, "model has no end event");
    }

    let mut seen_flows = BTreeSet::new();
    for f in &model.flows {
        if !seen_flows.insert(f.id.as_str()) || model.elements.contains_key(&f.id) {
            r.push(C::DuplicateFlow, Some(&f.id), format!("flow id `{}` is not unique", f.id));
        }
        for end in [&f.source, &f.target] {
            if !model.elements.contains_key(end) {
                r.push(C::DanglingFlow, Some(&f.id), format!("flow `{}` references unknown element `{end}`", f.id));
            }
        }
    }

    for m in model.messages.values() {
        let mut names = BTreeSet::new();
        for field in &m.fields {
            if !names.insert(field.name.as_str()) {
                r.push(C::DuplicateField, None, format!("message `{}` repeats field `{}`", m.id, field.name));
            }
        }
    }

    let context = model.context_variables();
    let mut brt_input_names: BTreeMap<String, String> = BTreeMap::new();

    for e in model.elements.values() {
        let id = e.id.as_str();
        let ins = model.incoming(id).count();
        let outs: Vec<_> = model.outgoing(id).collect();
        let degree = |r: &mut ValidationReport, want_in: &str, want_out: &str| {
            r.push(
                C::Degree,
                Some(id),
                format!("{} `{id}` needs {want_in} incoming and {want_out} outgoing flows, has {ins}/{}", e.kind.name(), outs.len()),
            );
        };
        match &e.kind {
            ElementKind::StartEvent => {
                if ins != 0 || outs.len() != 1 {
                    degree(&mut r, "0", "1");
                }
            }
            ElementKind::EndEvent => {
                if ins == 0 || !outs.is_empty() {
                    degree(&mut r, ">=1", "0");
                }
            }
            ElementKind::ChoreographyTask { initiator, recipient, message } => {
                if ins != 1 || outs.len() != 1 {
                    degree(&mut r, "1", "1");
                }
                for p in [initiator, recipient] {
                    if model.participant(p).is_none() {
                        r.push(C::UnknownParticipant, Some(id), format!("task `{id}` names unknown participant `{p}`"));
                    }
                }
                if initiator == recipient {
                    r.push(C::SameInitiatorRecipient, Some(id), format!("task `{id}` has the same initiator and recipient"));
                }
                if !model.messages.contains_key(message) {
                    r.push(C::UnknownMessage, Some(id), format!("task `{id}` references unknown message `{message}`"));
                }
            }
            ElementKind::BusinessRuleTask { inputs, output } => {
                if ins != 1 || outs.len() != 1 {
                    degree(&mut r, "1", "1");
                }
                if inputs.is_empty() {
                    r.push(C::BrtInputs, Some(id), format!("business rule task `{id}` declares no inputs"));
                }
                let mut local = BTreeSet::new();
                for input in inputs {
                    match model.messages.get(&input.message).and_then(|m| m.field(&input.field)) {
                        None => r.push(
                            C::BrtInputs,
                            Some(id),
                            format!("input `{}.{}` does not name a message field", input.message, input.field),
                        ),
                        Some(f) if f.ty == ValueType::File => r.push(
                            C::BrtInputs,
                            Some(id),
                            format!("input `{}.{}` is a file field", input.message, input.field),
                        ),
                        Some(_) => {}
                    }
                    if !local.insert(input.field.as_str()) {
                        r.push(C::BrtInputs, Some(id), format!("input name `{}` is declared twice", input.field));
                    }
                    brt_input_names.entry(input.field.clone()).or_insert_with(|| id.to_string());
                }
                if output.name.is_empty() || output.name.contains('.') {
                    r.push(C::BrtOutput, Some(id), format!("output name `{}` is not a plain identifier", output.name));
                }
                if output.ty == ValueType::File {
                    r.push(C::BrtOutput, Some(id), "a decision output cannot be a file");
                }
                let clashes = model
                    .elements
                    .values()
                    .filter(|o| matches!(&o.kind, ElementKind::BusinessRuleTask { output: oo, .. } if oo.name == output.name))
                    .count();
                if clashes > 1 {
                    r.push(C::BrtOutput, Some(id), format!("output `{}` is produced by more than one task", output.name));
                }
            }
            ElementKind::ExclusiveGateway { default_flow } => {
                if ins == 0 || outs.is_empty() {
                    degree(&mut r, ">=1", ">=1");
                }
                if let Some(d) = default_flow {
                    match outs.iter().find(|f| &f.id == d) {
                        None => r.push(C::BadDefault, Some(id), format!("default flow `{d}` is not an outgoing flow of `{id}`")),
                        Some(f) if f.condition.is_some() => {
                            r.push(C::BadDefault, Some(id), format!("default flow `{d}` must not carry a condition"))
                        }
                        Some(_) => {}
                    }
                }
                if outs.len() > 1 {
                    for f in &outs {
                        if f.condition.is_none() && default_flow.as_deref() != Some(f.id.as_str()) {
                            r.push(
                                C::MissingCondition,
                                Some(id),
                                format!("missing condition on flow `{}` leaving exclusive split `{id}`", f.id),
                            );
                        }
                    }
                }
            }
            ElementKind::ParallelGateway => {
                if ins == 0 || outs.is_empty() {
                    degree(&mut r, ">=1", ">=1");
                }
            }
            ElementKind::EventBasedGateway => {
                if ins != 1 {
                    degree(&mut r, "1", ">=2");
                }
                if outs.len() < 2 {
                    r.push(C::EventGateway, Some(id), format!("event-based gateway `{id}` needs at least two outgoing flows"));
                }
                for f in &outs {
                    let ok = model
                        .element(&f.target)
                        .is_some_and(|t| matches!(t.kind, ElementKind::ChoreographyTask { .. }));
                    if !ok {
                        r.push(
                            C::EventGateway,
                            Some(id),
                            format!("event-based gateway `{id}` must lead to choreography tasks, `{}` does not", f.target),
                        );
                    }
                }
            }
        }
    }

    for f in &model.flows {
        let Some(text) = &f.condition else { continue };
        let from_split = model.element(&f.source).is_some_and(|s| {
            matches!(s.kind, ElementKind::ExclusiveGateway { .. }) && model.outgoing(&s.id).count() > 1
        });
        if !from_split {
            r.push(C::UnexpectedCondition, Some(&f.id), format!("flow `{}` carries a condition but does not leave an exclusive split", f.id));
        }
        match Expr::parse(text) {
            Err(e) => r.push(C::BadCondition, Some(&f.id), format!("condition on `{}`: {e}", f.id)),
            Ok(expr) => {
                for v in expr.variables() {
                    if !context.contains_key(&v) {
                        r.push(C::BadCondition, Some(&f.id), format!("condition on `{}` reads unknown variable `{v}`", f.id));
                    }
                }
            }
        }
    }

    if let [start] = starts.as_slice() {
        let reach = reachable(model, start, |f| (&f.source, &f.target));
        for id in model.elements.keys() {
            if !reach.contains(id.as_str()) {
                r.push(C::Unreachable, Some(id), format!("`{id}` is not reachable from the start event"));
            }
        }
    }
    if !ends.is_empty() {
        let mut co_reach = BTreeSet::new();
        for end in &ends {
            co_reach.extend(reachable(model, end, |f| (&f.target, &f.source)));
        }
        for id in model.elements.keys() {
            if !co_reach.contains(id.as_str()) {
                r.push(C::CannotReachEnd, Some(id), format!("no end event is reachable from `{id}`"));
            }
        }
    }

    r.violations.sort();
    r.violations.dedup();
    r
}

fn reachable<'a>(
    model: &'a ChoreographyModel,
    from: &'a str,
    dir: impl Fn(&'a super::SequenceFlow) -> (&'a String, &'a String),
) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(cur) = queue.pop_front() {
        for f in &model.flows {
            let (a, b) = dir(f);
            if a == cur && seen.insert(b.as_str()) {
                queue.push_back(b.as_str());
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadViolation {
    pub field: String,
    pub message: String,
}

/// Checks a payload against its message schema: required fields present,
/// declared types respected, `file` fields holding CIDs, no unknown fields.
pub fn validate_message_payload(
    def: &MessageDef,
    payload: &serde_json::Map<String, serde_json::Value>,
) -> Result<(), Vec<PayloadViolation>> {
    let mut out = Vec::new();
    let mut bad = |field: &str, message: String| out.push(PayloadViolation { field: field.to_string(), message });
    for spec in &def.fields {
        match payload.get(&spec.name) {
            None if spec.required => bad(&spec.name, "required field is missing".into()),
            None => {}
            Some(raw) => match Value::from_json(raw) {
                Err(e) => bad(&spec.name, e),
                Ok(v) if !v.conforms_to(spec.ty) => bad(&spec.name, format!("expected {}, found {}", spec.ty, v.kind())),
                Ok(Value::String(s)) if spec.ty == ValueType::File && !is_hex_digest(&s) => {
                    bad(&spec.name, "file fields must hold a 64-character lowercase hex CID".into())
                }
                Ok(_) => {}
            },
        }
    }
    for key in payload.keys() {
        if def.field(key).is_none() {
            bad(key, "field is not declared by the message".into());
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
