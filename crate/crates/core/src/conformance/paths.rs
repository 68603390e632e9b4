//! Depth-first enumeration of valid runs over the oracle. At every state the
//! smallest enabled unit is taken, so parallel branches contribute a single
//! interleaving; event-based races branch over every competitor. Payloads are
//! drawn from the literals the model's conditions and decision tables compare
//! against, so every branch that data can steer is reached.

use std::collections::{BTreeMap, BTreeSet};

use rust_decimal::Decimal;
use serde_json::{Map, Value as Json};

use super::oracle::{file_content, OracleState, TraceOracle};
use super::{Step, StepKind, Trace, TraceOrigin};
use crate::hash::sha256_hex;
use crate::model::{context_key, ElementKind, Expr, Value, ValueType};
use crate::scenario::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathLimits {
    /// Times a task or decision may complete on one run; 2 lets each loop turn once.
    pub max_visits: u32,
    pub max_runs: usize,
    pub max_payloads_per_task: usize,
}

impl Default for PathLimits {
    fn default() -> PathLimits {
        PathLimits { max_visits: 2, max_runs: 20_000, max_payloads_per_task: 256 }
    }
}

/// Candidate values per published context key.
fn steering_literals(bundle: &Bundle) -> BTreeMap<String, Vec<Value>> {
    let mut out: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    let mut add = |key: String, v: Value| {
        let list = out.entry(key).or_default();
        if !list.contains(&v) {
            list.push(v);
        }
    };
    for f in &bundle.model.flows {
        if let Some(expr) = f.condition.as_deref().and_then(|c| Expr::parse(c).ok()) {
            for (var, v) in expr.literals_by_variable() {
                add(var, v);
            }
        }
    }
    for el in bundle.model.elements.values() {
        let ElementKind::BusinessRuleTask { inputs, .. } = &el.kind else { continue };
        let Some(dmn) = bundle.dmn.get(&el.id).and_then(|x| crate::dmn::parse_dmn(x).ok()) else { continue };
        for r in inputs {
            for d in &dmn.decisions {
                for (i, clause) in d.table.inputs.iter().enumerate() {
                    if clause.input_ref != r.field {
                        continue;
                    }
                    for rule in &d.table.rules {
                        for v in rule.input_entries[i].literals() {
                            add(r.context_key(), v);
                        }
                    }
                }
            }
        }
    }
    out
}

fn expand(ty: ValueType, lits: &[Value]) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::new();
    let mut push = |v: Value| {
        if !out.contains(&v) {
            out.push(v)
        }
    };
    match ty {
        ValueType::Boolean => {
            push(Value::Bool(true));
            push(Value::Bool(false));
        }
        ValueType::Number => {
            for v in lits {
                if let Value::Number(n) = v {
                    push(Value::Number(n - Decimal::ONE));
                    push(Value::Number(*n));
                    push(Value::Number(n + Decimal::ONE));
                }
            }
        }
        _ => {
            for v in lits.iter().filter(|v| matches!(v, Value::String(_))) {
                push(v.clone());
            }
        }
    }
    out
}

fn default_value(element: &str, field: &str, ty: ValueType) -> Json {
    match ty {
        ValueType::Boolean => Json::Bool(true),
        ValueType::Number => Json::from(1),
        ValueType::File => Json::String(sha256_hex(file_content(element, field))),
        _ => Json::String(format!("{field}-value")),
    }
}

/// Payload alternatives for every task, capped at `limit` each.
fn payload_candidates(bundle: &Bundle, limit: usize) -> BTreeMap<String, Vec<Map<String, Json>>> {
    let lits = steering_literals(bundle);
    let mut out = BTreeMap::new();
    for el in bundle.model.elements.values() {
        let ElementKind::ChoreographyTask { message, .. } = &el.kind else { continue };
        let def = &bundle.model.messages[message];
        let axes: Vec<(String, Vec<Json>)> = def
            .fields
            .iter()
            .map(|f| {
                let vals = lits.get(&context_key(message, &f.name)).map(|l| expand(f.ty, l)).unwrap_or_default();
                let vals: Vec<Json> = if vals.is_empty() {
                    vec![default_value(&el.id, &f.name, f.ty)]
                } else {
                    vals.iter().map(Value::to_json).collect()
                };
                (f.name.clone(), vals)
            })
            .collect();
        let mut combos = vec![Map::new()];
        for (name, vals) in &axes {
            let mut next = Vec::new();
            'outer: for c in &combos {
                for v in vals {
                    let mut m = c.clone();
                    m.insert(name.clone(), v.clone());
                    next.push(m);
                    if next.len() >= limit {
                        break 'outer;
                    }
                }
            }
            combos = next;
        }
        out.insert(el.id.clone(), combos);
    }
    out
}

struct Walker<'a> {
    oracle: TraceOracle<'a>,
    bundle: &'a Bundle,
    payloads: BTreeMap<String, Vec<Map<String, Json>>>,
    limits: PathLimits,
    runs: Vec<Vec<Step>>,
}

impl Walker<'_> {
    fn unit_steps(&self, el: &str, payload: Option<&Map<String, Json>>) -> Vec<Step> {
        match &self.bundle.model.elements[el].kind {
            ElementKind::ChoreographyTask { initiator, recipient, .. } => vec![
                Step {
                    element: el.to_string(),
                    kind: StepKind::Message,
                    payload: payload.cloned().unwrap_or_default(),
                    invoker: self.oracle.actor(initiator).cloned().expect("actor for initiator"),
                },
                Step {
                    element: el.to_string(),
                    kind: StepKind::Confirm,
                    payload: Map::new(),
                    invoker: self.oracle.actor(recipient).cloned().expect("actor for recipient"),
                },
            ],
            _ => {
                let invoker = self.bundle.bindings.actors.values().next().cloned().expect("some actor");
                vec![Step { element: el.to_string(), kind: StepKind::Brt, payload: Map::new(), invoker }]
            }
        }
    }

    fn walk(&mut self, st: &OracleState, trail: &mut Vec<Step>) {
        if self.runs.len() >= self.limits.max_runs {
            return;
        }
        let units = self.oracle.enabled_units(st);
        let Some(first) = units.first() else {
            if st.ended && st.idle() {
                self.runs.push(trail.clone());
            }
            return;
        };
        let mut choices = vec![first.clone()];
        choices.extend(self.oracle.race_siblings(first).into_iter().filter(|s| units.contains(s)));
        for el in choices {
            if st.visits.get(&el).copied().unwrap_or(0) >= self.limits.max_visits {
                continue;
            }
            let payloads: Vec<Option<Map<String, Json>>> = match self.payloads.get(&el) {
                Some(list) => list.iter().cloned().map(Some).collect(),
                None => vec![None],
            };
            for p in payloads {
                let steps = self.unit_steps(&el, p.as_ref());
                let mut next = st.clone();
                if steps.iter().all(|s| self.oracle.apply(&mut next, s).is_ok()) {
                    let n = trail.len();
                    trail.extend(steps);
                    self.walk(&next, trail);
                    trail.truncate(n);
                }
            }
        }
    }
}

/// Every valid run the enumeration reaches, in discovery order.
pub fn enumerate_runs(bundle: &Bundle, limits: PathLimits) -> Vec<Vec<Step>> {
    let oracle = TraceOracle::new(bundle);
    let Ok(init) = oracle.initial() else { return Vec::new() };
    let payloads = payload_candidates(bundle, limits.max_payloads_per_task);
    let mut w = Walker { oracle, bundle, payloads, limits, runs: Vec::new() };
    w.walk(&init, &mut Vec::new());
    w.runs
}

/// Runs with distinct (element, kind) sequences: the basic paths.
pub fn enumerate_basic_paths(bundle: &Bundle) -> Vec<Trace> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for steps in enumerate_runs(bundle, PathLimits::default()) {
        let t = Trace { id: format!("{}/path-{}", bundle.name, out.len() + 1), steps, origin: TraceOrigin::Basic, conforming: true };
        if seen.insert(t.signature()) {
            out.push(t);
        }
    }
    out
}
