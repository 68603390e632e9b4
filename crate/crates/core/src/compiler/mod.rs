//! Choreography to contract-program compilation.
//!
//! Pass one derives hook sets from the flow topology. Pass two assembles each
//! element's operations from a fixed template per element kind and embeds the
//! element's hooks at the template's completion point (`ApplyHooks`).

mod hooks;
mod pretty;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::hash::{canonical_json, sha256_hex};
use crate::model::{validate_model, ChoreographyModel, ElementKind, FieldRef, FieldSpec, MessageDef, ValidationReport, ValueType};

pub use hooks::{back_edges, generate_hooks, ConditionalEnable, HookAction, HookSet, JoinCondition};
pub use pretty::pretty_print;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("model is not admissible: {} violation(s)", .0.violations.len())]
    Invalid(ValidationReport),
    #[error("exclusive split `{gateway}` has no condition on flow `{flow}`")]
    MissingCondition { gateway: String, flow: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementState {
    Disabled,
    Enabled,
    WaitForConfirm,
    WaitForCallback,
    Completed,
}

impl ElementState {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementState::Disabled => "Disabled",
            ElementState::Enabled => "Enabled",
            ElementState::WaitForConfirm => "WaitForConfirm",
            ElementState::WaitForCallback => "WaitForCallback",
            ElementState::Completed => "Completed",
        }
    }
}

pub const OP_MESSAGE: &str = "Message";
pub const OP_CONFIRM: &str = "MessageConfirm";
pub const OP_BRT: &str = "BusinessRuleTask";
pub const OP_BRT_CALLBACK: &str = "BusinessRuleTaskCallback";
/// Internal operation of auto-firing elements (events and gateways).
pub const OP_FIRE: &str = "Fire";
pub const OP_CREATE_INSTANCE: &str = "CreateInstance";

/// One step of an operation body, executed in order by the contract interpreter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum Instr {
    GuardState { state: ElementState },
    CheckAccess { role: String },
    /// Invoker must be bound to some role of the instance.
    CheckParticipant,
    CheckSystem,
    ValidatePayload { message: String },
    VerifyPayloadHash,
    RecordMessage,
    DisableRaceGroup { siblings: Vec<String> },
    MatchRecordedHash,
    PublishFields { message: String, fields: Vec<String> },
    RequestDecision,
    ResolveCallback,
    VerifyDigest,
    EvaluateDecision { inputs: Vec<FieldRef>, output: String },
    SetState { state: ElementState },
    ApplyHooks,
    Emit { event: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecKind {
    Event,
    Gateway,
    ChoreographyTask,
    BusinessRuleTask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElementFsmSpec {
    pub kind: SpecKind,
    pub states: Vec<ElementState>,
    /// Fires as soon as it is enabled and its join condition holds.
    pub auto: bool,
    pub operations: BTreeMap<String, Vec<Instr>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BrtInput {
    pub name: String,
    pub message: String,
    pub field: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BrtSlot {
    pub inputs: Vec<BrtInput>,
    pub output: FieldSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InterfaceOp {
    pub name: String,
    pub element: String,
    /// Role whose binding authorizes the call; `system` for oracle callbacks.
    pub invoker: String,
    pub params: Json,
    pub emits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContractProgram {
    pub model_id: String,
    pub start_event: String,
    pub end_events: Vec<String>,
    pub element_specs: BTreeMap<String, ElementFsmSpec>,
    pub hooks: BTreeMap<String, HookSet>,
    pub message_schemas: BTreeMap<String, MessageDef>,
    pub brt_slots: BTreeMap<String, BrtSlot>,
    pub role_slots: Vec<String>,
    pub interface_description: Vec<InterfaceOp>,
}

impl ContractProgram {
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical_json(self)
    }

    /// Content digest of the canonical encoding.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_canonical_json())
    }

    pub fn spec(&self, element: &str) -> Option<&ElementFsmSpec> {
        self.element_specs.get(element)
    }

    /// Roles and fields of a choreography task: (initiator, recipient, message).
    pub fn task_roles(&self, element: &str) -> Option<(&str, &str, &str)> {
        let spec = self.spec(element)?;
        let role = |op: &str| {
            spec.operations.get(op)?.iter().find_map(|i| match i {
                Instr::CheckAccess { role } => Some(role.as_str()),
                _ => None,
            })
        };
        let message = spec.operations.get(OP_MESSAGE)?.iter().find_map(|i| match i {
            Instr::ValidatePayload { message } => Some(message.as_str()),
            _ => None,
        })?;
        Some((role(OP_MESSAGE)?, role(OP_CONFIRM)?, message))
    }
}

fn guarded(state: ElementState, rest: impl IntoIterator<Item = Instr>) -> Vec<Instr> {
    std::iter::once(Instr::GuardState { state }).chain(rest).collect()
}

fn field_schema(fields: &[FieldSpec]) -> Json {
    Json::Array(
        fields
            .iter()
            .map(|f| json!({ "name": f.name, "type": f.ty, "required": f.required, "description": f.description }))
            .collect(),
    )
}

/// Both passes: hooks, then per-element operations from templates.
pub fn compile(model: &ChoreographyModel) -> Result<ContractProgram, CompileError> {
    let report = validate_model(model);
    if !report.is_ok() {
        return Err(CompileError::Invalid(report));
    }
    let hooks = generate_hooks(model)?;
    let public = model.public_fields();

    let mut element_specs = BTreeMap::new();
    let mut brt_slots = BTreeMap::new();
    let mut interface = Vec::new();
    use ElementState as S;

    for e in model.elements.values() {
        let spec = match &e.kind {
            ElementKind::StartEvent | ElementKind::EndEvent => ElementFsmSpec {
                kind: SpecKind::Event,
                states: vec![S::Disabled, S::Enabled, S::Completed],
                auto: true,
                operations: BTreeMap::from([(
                    OP_FIRE.to_string(),
                    guarded(
                        S::Enabled,
                        [
                            Instr::SetState { state: S::Completed },
                            Instr::ApplyHooks,
                            Instr::Emit {
                                event: if e.kind == ElementKind::StartEvent { "InstanceStarted" } else { "EndEventReached" }.into(),
                            },
                        ],
                    ),
                )]),
            },
            k if k.is_gateway() => ElementFsmSpec {
                kind: SpecKind::Gateway,
                states: vec![S::Disabled, S::Enabled, S::Completed],
                auto: true,
                operations: BTreeMap::from([(
                    OP_FIRE.to_string(),
                    guarded(S::Enabled, [Instr::SetState { state: S::Completed }, Instr::ApplyHooks]),
                )]),
            },
            ElementKind::ChoreographyTask { initiator, recipient, message } => {
                let published: Vec<String> =
                    public.iter().filter(|r| &r.message == message).map(|r| r.field.clone()).collect();
                let mut send = vec![
                    Instr::CheckAccess { role: initiator.clone() },
                    Instr::ValidatePayload { message: message.clone() },
                    Instr::VerifyPayloadHash,
                    Instr::RecordMessage,
                ];
                if let Some(siblings) = &hooks[&e.id].race_group {
                    send.push(Instr::DisableRaceGroup { siblings: siblings.clone() });
                }
                send.extend([Instr::SetState { state: S::WaitForConfirm }, Instr::Emit { event: "MessageSent".into() }]);
                let confirm = [
                    Instr::CheckAccess { role: recipient.clone() },
                    Instr::MatchRecordedHash,
                    Instr::PublishFields { message: message.clone(), fields: published },
                    Instr::SetState { state: S::Completed },
                    Instr::ApplyHooks,
                    Instr::Emit { event: "MessageConfirmed".into() },
                ];
                let schema = &model.messages[message];
                interface.push(InterfaceOp {
                    name: OP_MESSAGE.into(),
                    element: e.id.clone(),
                    invoker: initiator.clone(),
                    params: json!({ "message": message, "fields": field_schema(&schema.fields) }),
                    emits: vec!["MessageSent".into()],
                });
                interface.push(InterfaceOp {
                    name: OP_CONFIRM.into(),
                    element: e.id.clone(),
                    invoker: recipient.clone(),
                    params: json!({ "message": message }),
                    emits: vec!["MessageConfirmed".into()],
                });
                ElementFsmSpec {
                    kind: SpecKind::ChoreographyTask,
                    states: vec![S::Disabled, S::Enabled, S::WaitForConfirm, S::Completed],
                    auto: false,
                    operations: BTreeMap::from([
                        (OP_MESSAGE.to_string(), guarded(S::Enabled, send)),
                        (OP_CONFIRM.to_string(), guarded(S::WaitForConfirm, confirm)),
                    ]),
                }
            }
            ElementKind::BusinessRuleTask { inputs, output } => {
                let slot = BrtSlot {
                    inputs: inputs
                        .iter()
                        .map(|r| BrtInput {
                            name: r.field.clone(),
                            message: r.message.clone(),
                            field: r.field.clone(),
                            ty: model.messages[&r.message].field(&r.field).map_or(ValueType::String, |f| f.ty),
                        })
                        .collect(),
                    output: output.clone(),
                };
                let in_schema: Vec<Json> = slot.inputs.iter().map(|i| json!({ "name": i.name, "type": i.ty })).collect();
                interface.push(InterfaceOp {
                    name: OP_BRT.into(),
                    element: e.id.clone(),
                    invoker: "participant".into(),
                    params: json!({ "inputs": in_schema, "output": { "name": output.name, "type": output.ty } }),
                    emits: vec!["DecisionRequested".into(), "OracleFetch".into()],
                });
                interface.push(InterfaceOp {
                    name: OP_BRT_CALLBACK.into(),
                    element: e.id.clone(),
                    invoker: crate::ledger::SYSTEM_MEMBERSHIP.into(),
                    params: json!({ "requestId": "string", "content": "transient DMN bytes", "output": { "name": output.name, "type": output.ty } }),
                    emits: vec!["DecisionMade".into()],
                });
                brt_slots.insert(e.id.clone(), slot);
                ElementFsmSpec {
                    kind: SpecKind::BusinessRuleTask,
                    states: vec![S::Disabled, S::Enabled, S::WaitForCallback, S::Completed],
                    auto: false,
                    operations: BTreeMap::from([
                        (
                            OP_BRT.to_string(),
                            guarded(
                                S::Enabled,
                                [
                                    Instr::CheckParticipant,
                                    Instr::RequestDecision,
                                    Instr::SetState { state: S::WaitForCallback },
                                    Instr::Emit { event: "DecisionRequested".into() },
                                ],
                            ),
                        ),
                        (
                            OP_BRT_CALLBACK.to_string(),
                            guarded(
                                S::WaitForCallback,
                                [
                                    Instr::CheckSystem,
                                    Instr::ResolveCallback,
                                    Instr::VerifyDigest,
                                    Instr::EvaluateDecision { inputs: inputs.clone(), output: output.name.clone() },
                                    Instr::SetState { state: S::Completed },
                                    Instr::ApplyHooks,
                                    Instr::Emit { event: "DecisionMade".into() },
                                ],
                            ),
                        ),
                    ]),
                }
            }
            _ => unreachable!("all kinds covered"),
        };
        element_specs.insert(e.id.clone(), spec);
    }

    Ok(ContractProgram {
        model_id: model.model_id.clone(),
        start_event: model.start_event().map(|s| s.id.clone()).unwrap_or_default(),
        end_events: model.elements.values().filter(|e| e.kind == ElementKind::EndEvent).map(|e| e.id.clone()).collect(),
        element_specs,
        hooks,
        message_schemas: model.messages.clone(),
        brt_slots,
        role_slots: model.participants.iter().map(|p| p.id.clone()).collect(),
        interface_description: interface,
    })
}

/// Blockchain-agnostic description of the invocable operations and events.
pub fn emit_interface(program: &ContractProgram) -> Json {
    let bindings: Vec<Json> = program
        .brt_slots
        .iter()
        .map(|(id, s)| json!({ "element": id, "inputs": s.inputs, "output": s.output }))
        .collect();
    json!({
        "modelId": program.model_id,
        "programDigest": program.digest(),
        "operations": program.interface_description,
        "lifecycle": {
            "operations": [{
                "name": OP_CREATE_INSTANCE,
                "params": {
                    "bindings": { "roles": program.role_slots, "selector": { "memberships": "list of membership ids", "predicate": "optional attribute expression" } },
                    "dmn": bindings,
                }
            }],
            "events": ["InstanceCreated", "InstanceStarted", "EndEventReached", "ElementEnabled", "OracleSave", "OracleFetch"],
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpmn::parse_choreography;

    const MINIMAL: &str = r#"<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:chor="urn:chor:bpmn-extension:1.0" id="d">
  <message id="M1" name="Order"><extensionElements><chor:field name="qty" type="number" required="true"/></extensionElements></message>
  <choreography id="c">
    <participant id="A" name="Buyer"/><participant id="B" name="Seller"/>
    <messageFlow id="mf" sourceRef="A" targetRef="B" messageRef="M1"/>
    <startEvent id="s"/>
    <choreographyTask id="t" initiatingParticipantRef="A"><participantRef>A</participantRef><participantRef>B</participantRef><messageFlowRef>mf</messageFlowRef></choreographyTask>
    <endEvent id="e"/>
    <sequenceFlow id="f1" sourceRef="s" targetRef="t"/><sequenceFlow id="f2" sourceRef="t" targetRef="e"/>
  </choreography>
</definitions>"#;

    #[test]
    fn minimal_program() {
        let p = compile(&parse_choreography(MINIMAL).unwrap()).unwrap();
        assert_eq!(p.element_specs.len(), 3);
        let ops: Vec<_> = p.interface_description.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(ops, [OP_MESSAGE, OP_CONFIRM]);
        assert_eq!(p.hooks["s"].on_complete, vec![HookAction::Enable { target: "t".into(), flow: "f1".into() }]);
        assert_eq!(p.task_roles("t"), Some(("A", "B", "M1")));
    }

    #[test]
    fn compile_is_byte_deterministic() {
        let m = parse_choreography(MINIMAL).unwrap();
        assert_eq!(compile(&m).unwrap().to_canonical_json(), compile(&m).unwrap().to_canonical_json());
    }

    #[test]
    fn every_operation_starts_with_guard() {
        let p = compile(&parse_choreography(MINIMAL).unwrap()).unwrap();
        for spec in p.element_specs.values() {
            assert!(spec.states.starts_with(&[ElementState::Disabled, ElementState::Enabled]));
            for body in spec.operations.values() {
                assert!(matches!(body[0], Instr::GuardState { .. }));
            }
        }
    }

    #[test]
    fn interface_round_trips() {
        let p = compile(&parse_choreography(MINIMAL).unwrap()).unwrap();
        let doc = emit_interface(&p);
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(serde_json::from_str::<Json>(&text).unwrap(), doc);
        assert_eq!(doc["operations"].as_array().unwrap().len(), 2);
        let back: ContractProgram = serde_json::from_slice(&p.to_canonical_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_model_refused() {
        let mut m = parse_choreography(MINIMAL).unwrap();
        m.flows.pop();
        assert!(matches!(compile(&m), Err(CompileError::Invalid(_))));
    }
}
