use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::contract::{binding_key, ctx_key, meta_key, state_key, DmnBinding, InstanceMeta, MessageRecord};
use crate::compiler::{ContractProgram, ElementState, SpecKind, OP_BRT, OP_CONFIRM, OP_MESSAGE};
use crate::ledger::{abac_check, Identity, MembershipSelector, WorldState};
use crate::offchain::oracle::record_key;

/// Pseudo-role of operations any bound participant may invoke.
pub const ANY_PARTICIPANT: &str = "participant";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElementView {
    pub state: ElementState,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnabledOp {
    pub element: String,
    pub op: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DmnView {
    pub digest: String,
    pub cid: Option<String>,
}

/// Snapshot of one instance, computed from world state alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceView {
    pub meta: InstanceMeta,
    pub elements: BTreeMap<String, ElementView>,
    pub context: BTreeMap<String, Json>,
    pub messages: BTreeMap<String, MessageRecord>,
    pub dmn: BTreeMap<String, DmnView>,
    pub decisions: BTreeMap<String, Json>,
    pub bindings: BTreeMap<String, MembershipSelector>,
    pub enabled: Vec<EnabledOp>,
    /// Some end event has completed.
    pub completed: bool,
}

impl InstanceView {
    pub fn state_of(&self, element: &str) -> ElementState {
        self.elements.get(element).map_or(ElementState::Disabled, |e| e.state)
    }

    /// Enabled operations this identity would pass access control for.
    pub fn enabled_for(&self, identity: &Identity) -> Vec<EnabledOp> {
        if identity.is_system() {
            return Vec::new();
        }
        let allowed = |role: &str| match self.bindings.get(role) {
            Some(sel) => abac_check(identity, sel).is_allowed(),
            None => false,
        };
        let any_role = self.bindings.keys().any(|r| allowed(r));
        self.enabled
            .iter()
            .filter(|op| if op.role == ANY_PARTICIPANT { any_role } else { allowed(&op.role) })
            .cloned()
            .collect()
    }

    /// Enabled operations per directly bound membership.
    pub fn enabled_by_membership(&self) -> BTreeMap<String, Vec<EnabledOp>> {
        let mut out: BTreeMap<String, Vec<EnabledOp>> = BTreeMap::new();
        for op in &self.enabled {
            for (role, sel) in &self.bindings {
                if op.role == *role || op.role == ANY_PARTICIPANT {
                    for m in &sel.memberships {
                        let list = out.entry(m.clone()).or_default();
                        if !list.contains(op) {
                            list.push(op.clone());
                        }
                    }
                }
            }
        }
        out
    }
}

fn get<T: serde::de::DeserializeOwned>(state: &WorldState, key: &str) -> Option<T> {
    state.get(key).and_then(|v| serde_json::from_value(v.value.clone()).ok())
}

pub fn instance_view(state: &WorldState, program: &ContractProgram, inst: &str) -> Option<InstanceView> {
    let meta: InstanceMeta = get(state, &meta_key(inst))?;
    let mut elements = BTreeMap::new();
    let mut messages = BTreeMap::new();
    let mut dmn = BTreeMap::new();
    let mut decisions = BTreeMap::new();
    let mut enabled = Vec::new();
    for (id, spec) in &program.element_specs {
        let st = get(state, &state_key(inst, id, "state")).unwrap_or(ElementState::Disabled);
        let epoch = get(state, &state_key(inst, id, "epoch")).unwrap_or(0);
        elements.insert(id.clone(), ElementView { state: st, epoch });
        if let Some(rec) = get::<MessageRecord>(state, &state_key(inst, id, "message")) {
            messages.insert(id.clone(), rec);
        }
        if let Some(b) = get::<DmnBinding>(state, &state_key(inst, id, "dmn")) {
            let cid = state.get(&record_key(&b.record)).and_then(|v| v.value.get("cid")?.as_str().map(str::to_string));
            dmn.insert(id.clone(), DmnView { digest: b.digest, cid });
        }
        if let Some(d) = state.get(&state_key(inst, id, "decision")) {
            decisions.insert(id.clone(), d.value.clone());
        }
        match (spec.kind, st) {
            (SpecKind::ChoreographyTask, ElementState::Enabled | ElementState::WaitForConfirm) => {
                let (initiator, recipient, _) = program.task_roles(id).expect("task spec");
                let (op, role) =
                    if st == ElementState::Enabled { (OP_MESSAGE, initiator) } else { (OP_CONFIRM, recipient) };
                enabled.push(EnabledOp { element: id.clone(), op: op.into(), role: role.into() });
            }
            (SpecKind::BusinessRuleTask, ElementState::Enabled) => {
                enabled.push(EnabledOp { element: id.clone(), op: OP_BRT.into(), role: ANY_PARTICIPANT.into() });
            }
            _ => {}
        }
    }
    let prefix = ctx_key(inst, "");
    let context = state
        .range(prefix.clone()..)
        .take_while(|(k, _)| k.starts_with(&prefix))
        .map(|(k, v)| (k[prefix.len()..].to_string(), v.value.clone()))
        .collect();
    let bindings = program
        .role_slots
        .iter()
        .filter_map(|r| get(state, &binding_key(inst, r)).map(|s| (r.clone(), s)))
        .collect();
    let completed = program.end_events.iter().any(|e| elements.get(e).is_some_and(|v: &ElementView| v.state == ElementState::Completed));
    Some(InstanceView { meta, elements, context, messages, dmn, decisions, bindings, enabled, completed })
}
