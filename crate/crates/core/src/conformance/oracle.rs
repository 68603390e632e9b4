//! Reference semantics as a token game on sequence flows. Shares no code with
//! the compiler or the contract interpreter; only the expression and decision
//! evaluators are reused.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{Step, StepKind, Trace};
use crate::dmn::{evaluate_drd, parse_dmn};
use crate::model::{context_key, validate_message_payload, ChoreographyModel, DmnModel, ElementKind, Expr, Value};
use crate::scenario::{Actor, Bundle};

const MAX_PROPAGATION: usize = 10_000;

/// Deterministic content behind the CID a generated payload puts in a file field.
pub fn file_content(element: &str, field: &str) -> Vec<u8> {
    format!("{element}/{field}").into_bytes()
}

/// Token-game state: tokens per flow, sent but unconfirmed messages, and the
/// data published so far.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OracleState {
    pub tokens: BTreeMap<String, u32>,
    pub pending: BTreeMap<String, Map<String, serde_json::Value>>,
    pub context: BTreeMap<String, Value>,
    pub ended: bool,
    /// How often each task or decision has completed.
    pub visits: BTreeMap<String, u32>,
}

impl OracleState {
    fn has(&self, flow: &str) -> bool {
        self.tokens.get(flow).is_some_and(|n| *n > 0)
    }

    fn take(&mut self, flow: &str) {
        if let Some(n) = self.tokens.get_mut(flow) {
            *n -= 1;
            if *n == 0 {
                self.tokens.remove(flow);
            }
        }
    }

    fn give(&mut self, flow: &str) {
        *self.tokens.entry(flow.to_string()).or_default() += 1;
    }

    /// No tokens in flight and nothing awaiting confirmation.
    pub fn idle(&self) -> bool {
        self.tokens.is_empty() && self.pending.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleVerdict {
    pub conforming: bool,
    /// Index of the first step that was not enabled.
    pub failed_at: Option<usize>,
    pub reason: Option<String>,
}

pub struct TraceOracle<'a> {
    model: &'a ChoreographyModel,
    actors: &'a BTreeMap<String, Actor>,
    dmn: BTreeMap<String, DmnModel>,
}

impl<'a> TraceOracle<'a> {
    pub fn new(bundle: &'a Bundle) -> TraceOracle<'a> {
        let dmn = bundle.dmn.iter().filter_map(|(k, xml)| parse_dmn(xml).ok().map(|m| (k.clone(), m))).collect();
        TraceOracle { model: &bundle.model, actors: &bundle.bindings.actors, dmn }
    }

    pub fn model(&self) -> &ChoreographyModel {
        self.model
    }

    pub fn actor(&self, role: &str) -> Option<&Actor> {
        self.actors.get(role)
    }

    pub fn initial(&self) -> Result<OracleState, String> {
        let mut st = OracleState::default();
        let start = self.model.start_event().ok_or("no unique start event")?;
        for f in self.model.outgoing(&start.id) {
            st.give(&f.id);
        }
        self.propagate(&mut st)?;
        Ok(st)
    }

    fn incoming_token(&self, st: &OracleState, el: &str) -> Option<String> {
        self.model.incoming(el).find(|f| st.has(&f.id)).map(|f| f.id.clone())
    }

    /// Tasks and decisions that can start now, sorted by id.
    pub fn enabled_units(&self, st: &OracleState) -> Vec<String> {
        self.model
            .elements
            .values()
            .filter(|e| matches!(e.kind, ElementKind::ChoreographyTask { .. } | ElementKind::BusinessRuleTask { .. }))
            .filter(|e| !st.pending.contains_key(&e.id) && self.incoming_token(st, &e.id).is_some())
            .map(|e| e.id.clone())
            .collect()
    }

    /// Tasks competing with `el` behind the same event-based gateway.
    pub fn race_siblings(&self, el: &str) -> Vec<String> {
        let mut out = BTreeSet::new();
        for f in self.model.incoming(el) {
            if matches!(self.model.element(&f.source).map(|e| &e.kind), Some(ElementKind::EventBasedGateway)) {
                for g in self.model.outgoing(&f.source) {
                    if g.target != el {
                        out.insert(g.target.clone());
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn apply(&self, st: &mut OracleState, step: &Step) -> Result<(), String> {
        let el = self.model.element(&step.element).ok_or_else(|| format!("unknown element `{}`", step.element))?;
        match (&el.kind, step.kind) {
            (ElementKind::ChoreographyTask { initiator, message, .. }, StepKind::Message) => {
                self.check_invoker(step, initiator)?;
                if st.pending.contains_key(&el.id) {
                    return Err(format!("`{}` already awaits confirmation", el.id));
                }
                let flow = self.incoming_token(st, &el.id).ok_or_else(|| format!("`{}` holds no token", el.id))?;
                let def = &self.model.messages[message];
                validate_message_payload(def, &step.payload).map_err(|v| format!("invalid payload: {v:?}"))?;
                st.take(&flow);
                // The first message behind an event-based gateway withdraws the alternatives.
                let source = &self.model.flow(&flow).expect("flow").source;
                if matches!(self.model.element(source).map(|e| &e.kind), Some(ElementKind::EventBasedGateway)) {
                    for g in self.model.outgoing(source) {
                        st.tokens.remove(&g.id);
                    }
                }
                st.pending.insert(el.id.clone(), step.payload.clone());
                Ok(())
            }
            (ElementKind::ChoreographyTask { recipient, message, .. }, StepKind::Confirm) => {
                self.check_invoker(step, recipient)?;
                let payload = st.pending.remove(&el.id).ok_or_else(|| format!("`{}` has no message to confirm", el.id))?;
                for f in &self.model.messages[message].fields {
                    let key = context_key(message, &f.name);
                    match payload.get(&f.name).map(Value::from_json) {
                        Some(Ok(v)) => {
                            st.context.insert(key, v);
                        }
                        _ => {
                            st.context.remove(&key);
                        }
                    }
                }
                self.complete(st, &el.id)
            }
            (ElementKind::BusinessRuleTask { inputs, output }, StepKind::Brt) => {
                if !self.actors.values().any(|a| *a == step.invoker) {
                    return Err("invoker plays no role".into());
                }
                let flow = self.incoming_token(st, &el.id).ok_or_else(|| format!("`{}` holds no token", el.id))?;
                st.take(&flow);
                let model = self.dmn.get(&el.id).ok_or_else(|| format!("no decision model for `{}`", el.id))?;
                let data: BTreeMap<String, Value> = inputs
                    .iter()
                    .filter_map(|r| st.context.get(&r.context_key()).map(|v| (r.field.clone(), v.clone())))
                    .collect();
                let result = evaluate_drd(model, &data).map_err(|e| format!("decision failed: {e}"))?;
                let value = result.outputs.get(&output.name).ok_or("decision has no such output")?.clone();
                st.context.insert(output.name.clone(), value);
                self.complete(st, &el.id)
            }
            (kind, k) => Err(format!("{k:?} does not apply to {kind:?}")),
        }
    }

    fn check_invoker(&self, step: &Step, role: &str) -> Result<(), String> {
        match self.actors.get(role) {
            Some(a) if *a == step.invoker => Ok(()),
            _ => Err(format!("{}/{} does not play {role}", step.invoker.membership, step.invoker.user)),
        }
    }

    fn complete(&self, st: &mut OracleState, el: &str) -> Result<(), String> {
        *st.visits.entry(el.to_string()).or_default() += 1;
        for f in self.model.outgoing(el) {
            st.give(&f.id);
        }
        self.propagate(st)
    }

    /// Fires gateways and end events until none can move.
    fn propagate(&self, st: &mut OracleState) -> Result<(), String> {
        for _ in 0..MAX_PROPAGATION {
            let mut fired = false;
            for el in self.model.elements.values() {
                let incoming: Vec<&str> = self.model.incoming(&el.id).map(|f| f.id.as_str()).collect();
                let outgoing: Vec<_> = self.model.outgoing(&el.id).collect();
                match &el.kind {
                    ElementKind::EndEvent => {
                        if let Some(f) = incoming.iter().find(|f| st.has(f)) {
                            st.take(f);
                            st.ended = true;
                            fired = true;
                        }
                    }
                    ElementKind::EventBasedGateway => {
                        if let Some(f) = incoming.iter().find(|f| st.has(f)) {
                            st.take(f);
                            outgoing.iter().for_each(|g| st.give(&g.id));
                            fired = true;
                        }
                    }
                    ElementKind::ParallelGateway => {
                        if !incoming.is_empty() && incoming.iter().all(|f| st.has(f)) {
                            incoming.iter().for_each(|f| st.take(f));
                            outgoing.iter().for_each(|g| st.give(&g.id));
                            fired = true;
                        }
                    }
                    ElementKind::ExclusiveGateway { default_flow } => {
                        if let Some(f) = incoming.iter().find(|f| st.has(f)) {
                            st.take(f);
                            let chosen = if outgoing.len() == 1 {
                                outgoing[0].id.clone()
                            } else {
                                self.choose(st, &el.id, &outgoing, default_flow.as_deref())?
                            };
                            st.give(&chosen);
                            fired = true;
                        }
                    }
                    _ => {}
                }
            }
            if !fired {
                return Ok(());
            }
        }
        Err("gateway propagation does not settle".into())
    }

    fn choose(
        &self,
        st: &OracleState,
        gateway: &str,
        outgoing: &[&crate::model::SequenceFlow],
        default: Option<&str>,
    ) -> Result<String, String> {
        for f in outgoing {
            let Some(cond) = &f.condition else { continue };
            let expr = Expr::parse(cond).map_err(|e| e.to_string())?;
            if expr.eval_bool(&|n| st.context.get(n).cloned()).map_err(|e| format!("`{gateway}`: {e}"))? {
                return Ok(f.id.clone());
            }
        }
        default.map(str::to_string).ok_or_else(|| format!("no branch of `{gateway}` applies"))
    }

    pub fn judge(&self, steps: &[Step]) -> OracleVerdict {
        let fail = |i: Option<usize>, r: String| OracleVerdict { conforming: false, failed_at: i, reason: Some(r) };
        let mut st = match self.initial() {
            Ok(st) => st,
            Err(e) => return fail(None, e),
        };
        for (i, step) in steps.iter().enumerate() {
            if let Err(e) = self.apply(&mut st, step) {
                return fail(Some(i), e);
            }
        }
        if !st.ended {
            return fail(None, "no end event reached".into());
        }
        OracleVerdict { conforming: true, failed_at: None, reason: None }
    }

    pub fn label(&self, trace: &mut Trace) {
        trace.conforming = self.judge(&trace.steps).conforming;
    }
}
