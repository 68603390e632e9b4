use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::compiler::{
    ContractProgram, ElementState, HookAction, Instr, JoinCondition, OP_BRT_CALLBACK, OP_CREATE_INSTANCE, OP_FIRE,
};
use crate::dmn::{dmn_digest, evaluate_drd, parse_dmn};
use crate::hash::sha256_hex;
use crate::ledger::{abac_check, AccessDecision, Contract, MembershipSelector, Reject, RejectCode, TxContext};
use crate::model::{context_key, validate_message_payload, Expr, Value};
use crate::offchain::oracle::{close_request, open_request, record_key, request_fetch, request_save, Callback, RequestKind, RequestStatus};

/// Cascades of auto-firing elements deeper than this abort the transaction.
const MAX_CASCADE: usize = 256;

pub fn state_key(inst: &str, el: &str, slot: &str) -> String {
    format!("{inst}/{el}/{slot}")
}

pub fn ctx_key(inst: &str, name: &str) -> String {
    format!("{inst}/ctx/{name}")
}

pub fn binding_key(inst: &str, role: &str) -> String {
    format!("{inst}/bindings/{role}")
}

pub fn meta_key(inst: &str) -> String {
    format!("{inst}/meta")
}

/// Key of the off-chain record holding a BRT's decision model.
pub fn dmn_record_name(inst: &str, brt: &str) -> String {
    format!("{inst}/{brt}/dmn")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceMeta {
    pub instance_id: String,
    pub contract: String,
    pub model_id: String,
    pub program_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MessageRecord {
    pub message_id: String,
    pub hash: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DmnBinding {
    pub digest: String,
    pub record: String,
}

fn reject(code: RejectCode, detail: impl Into<String>) -> Reject {
    Reject::new(code, detail)
}

fn str_arg<'a>(args: &'a Json, name: &str) -> Result<&'a str, Reject> {
    args.get(name).and_then(Json::as_str).ok_or_else(|| reject(RejectCode::BadArgs, format!("missing string argument `{name}`")))
}

/// Interprets a compiled program as a ledger contract. All instance state
/// lives in world state under `<instanceId>/...`.
pub struct ProgramContract {
    name: String,
    program: Arc<ContractProgram>,
}

impl ProgramContract {
    pub fn new(name: impl Into<String>, program: Arc<ContractProgram>) -> ProgramContract {
        ProgramContract { name: name.into(), program }
    }

    pub fn program(&self) -> &ContractProgram {
        &self.program
    }
}

impl Contract for ProgramContract {
    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Json) -> Result<(), Reject> {
        if op == OP_CREATE_INSTANCE {
            return self.create_instance(ctx, args);
        }
        if op == OP_FIRE {
            return Err(reject(RejectCode::UnknownOperation, "auto-fired operations cannot be invoked"));
        }
        let inst = str_arg(args, "instanceId")?;
        let el = str_arg(args, "elementId")?;
        let meta: InstanceMeta =
            ctx.get_as(&meta_key(inst))?.ok_or_else(|| reject(RejectCode::UnknownInstance, inst))?;
        if meta.contract != self.name {
            return Err(reject(RejectCode::UnknownInstance, format!("{inst} belongs to {}", meta.contract)));
        }
        let spec = self.program.spec(el).ok_or_else(|| reject(RejectCode::BadArgs, format!("unknown element `{el}`")))?;
        let body = spec
            .operations
            .get(op)
            .ok_or_else(|| reject(RejectCode::UnknownOperation, format!("`{el}` has no operation {op}")))?;
        Run { c: self, inst, args }.body(ctx, el, body, 0)
    }
}

impl ProgramContract {
    fn create_instance(&self, ctx: &mut TxContext<'_>, args: &Json) -> Result<(), Reject> {
        if ctx.invoker().is_system() {
            return Err(reject(RejectCode::AccessDenied, "instances are created by participants"));
        }
        let bindings: BTreeMap<String, MembershipSelector> = serde_json::from_value(args.get("bindings").cloned().unwrap_or(json!({})))
            .map_err(|e| reject(RejectCode::BadArgs, format!("bindings: {e}")))?;
        let unbound: Vec<&str> =
            self.program.role_slots.iter().filter(|r| !bindings.contains_key(*r)).map(String::as_str).collect();
        if !unbound.is_empty() {
            return Err(reject(RejectCode::BadArgs, format!("unbound roles: {}", unbound.join(", "))));
        }
        let digests: BTreeMap<String, String> = serde_json::from_value(args.get("dmn").cloned().unwrap_or(json!({})))
            .map_err(|e| reject(RejectCode::BadArgs, format!("dmn: {e}")))?;
        let contents: BTreeMap<String, String> = match ctx.transient() {
            Some(bytes) => serde_json::from_slice(bytes).map_err(|e| reject(RejectCode::BadArgs, format!("dmn content: {e}")))?,
            None => BTreeMap::new(),
        };
        for brt in self.program.brt_slots.keys() {
            if !contents.contains_key(brt) {
                return Err(reject(RejectCode::BadArgs, format!("business rule task `{brt}` has no decision model")));
            }
        }
        for brt in contents.keys() {
            if !self.program.brt_slots.contains_key(brt) {
                return Err(reject(RejectCode::BadArgs, format!("`{brt}` is not a business rule task")));
            }
        }
        for (brt, xml) in &contents {
            check_signature(&self.program, brt, xml)?;
            if digests.get(brt).is_some_and(|d| d != &dmn_digest(xml)) {
                return Err(reject(RejectCode::DigestMismatch, format!("declared digest for `{brt}` does not match content")));
            }
        }

        let n = ctx.get("instances/next").and_then(|v| v.as_u64()).unwrap_or(0) + 1;
        ctx.put("instances/next", n);
        let inst = format!("inst-{n}");
        ctx.put(
            meta_key(&inst),
            InstanceMeta {
                instance_id: inst.clone(),
                contract: self.name.clone(),
                model_id: self.program.model_id.clone(),
                program_digest: self.program.digest(),
            },
        );
        for (role, sel) in &bindings {
            ctx.put(binding_key(&inst, role), sel);
        }
        for (brt, xml) in &contents {
            let record = dmn_record_name(&inst, brt);
            ctx.put(state_key(&inst, brt, "dmn"), DmnBinding { digest: dmn_digest(xml), record: record.clone() });
            request_save(ctx, &record, xml.as_bytes(), &inst);
        }
        ctx.emit("InstanceCreated", &inst, json!({ "instanceId": inst, "modelId": self.program.model_id }));
        let run = Run { c: self, inst: &inst, args };
        run.enable(ctx, &self.program.start_event, None, 0)
    }
}

/// The DMN must take exactly the BRT's declared inputs and yield its output.
fn check_signature(program: &ContractProgram, brt: &str, xml: &str) -> Result<(), Reject> {
    let slot = &program.brt_slots[brt];
    let model = parse_dmn(xml).map_err(|e| reject(RejectCode::SignatureMismatch, format!("`{brt}`: {e}")))?;
    let declared: BTreeMap<&str, _> = slot.inputs.iter().map(|i| (i.name.as_str(), i.ty.runtime_kind())).collect();
    let offered: BTreeMap<&str, _> = model.input_data.iter().map(|i| (i.name.as_str(), i.ty.runtime_kind())).collect();
    let mut bad: BTreeSet<&str> = BTreeSet::new();
    for (name, ty) in &declared {
        if offered.get(name) != Some(ty) {
            bad.insert(name);
        }
    }
    for name in offered.keys() {
        if !declared.contains_key(name) {
            bad.insert(name);
        }
    }
    match model.primary_output() {
        Some(o) if o.name == slot.output.name && o.ty.runtime_kind() == slot.output.ty.runtime_kind() => {}
        _ => {
            bad.insert(&slot.output.name);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(reject(RejectCode::SignatureMismatch, bad.into_iter().collect::<Vec<_>>().join(", ")))
    }
}

struct Run<'a> {
    c: &'a ProgramContract,
    inst: &'a str,
    args: &'a Json,
}

impl Run<'_> {
    fn program(&self) -> &ContractProgram {
        &self.c.program
    }

    fn state(&self, ctx: &mut TxContext<'_>, el: &str) -> ElementState {
        ctx.get(&state_key(self.inst, el, "state"))
            .and_then(|v| serde_json::from_value(v).ok())
            .unwrap_or(ElementState::Disabled)
    }

    fn set_state(&self, ctx: &mut TxContext<'_>, el: &str, s: ElementState) {
        ctx.put(state_key(self.inst, el, "state"), s);
    }

    fn payload(&self, ctx: &TxContext<'_>) -> Result<serde_json::Map<String, Json>, Reject> {
        let bytes = ctx.transient().ok_or_else(|| reject(RejectCode::PayloadInvalid, "no payload supplied"))?;
        match serde_json::from_slice(bytes) {
            Ok(Json::Object(m)) => Ok(m),
            _ => Err(reject(RejectCode::PayloadInvalid, "payload is not a JSON object")),
        }
    }

    fn allowed(&self, ctx: &mut TxContext<'_>, role: &str) -> Result<AccessDecision, Reject> {
        let sel: MembershipSelector = ctx
            .get_as(&binding_key(self.inst, role))?
            .ok_or_else(|| reject(RejectCode::AccessDenied, format!("role `{role}` is unbound")))?;
        Ok(abac_check(ctx.invoker(), &sel))
    }

    fn body(&self, ctx: &mut TxContext<'_>, el: &str, body: &[Instr], depth: usize) -> Result<(), Reject> {
        let mut request = None;
        for instr in body {
            match instr {
                Instr::GuardState { state } => {
                    let cur = self.state(ctx, el);
                    if cur != *state {
                        let code = if *state == ElementState::Enabled { RejectCode::NotEnabled } else { RejectCode::NotWaiting };
                        return Err(reject(code, format!("`{el}` is {}, expected {}", cur.as_str(), state.as_str())));
                    }
                }
                Instr::CheckAccess { role } => {
                    if ctx.invoker().is_system() {
                        return Err(reject(RejectCode::AccessDenied, "the system membership cannot act for a role"));
                    }
                    if let AccessDecision::Deny(why) = self.allowed(ctx, role)? {
                        return Err(reject(RejectCode::AccessDenied, format!("role `{role}`: {why:?}")));
                    }
                }
                Instr::CheckParticipant => {
                    let mut ok = false;
                    if !ctx.invoker().is_system() {
                        for role in &self.program().role_slots {
                            if self.allowed(ctx, role)?.is_allowed() {
                                ok = true;
                                break;
                            }
                        }
                    }
                    if !ok {
                        return Err(reject(RejectCode::AccessDenied, "invoker is not bound to any role"));
                    }
                }
                Instr::CheckSystem => {
                    if !ctx.invoker().is_system() {
                        return Err(reject(RejectCode::AccessDenied, "callbacks require the system membership"));
                    }
                }
                Instr::ValidatePayload { message } => {
                    let payload = self.payload(ctx)?;
                    let def = &self.program().message_schemas[message];
                    if let Err(v) = validate_message_payload(def, &payload) {
                        let detail: Vec<String> = v.iter().map(|p| format!("{}: {}", p.field, p.message)).collect();
                        return Err(reject(RejectCode::PayloadInvalid, detail.join("; ")));
                    }
                }
                Instr::VerifyPayloadHash => {
                    let claimed = str_arg(self.args, "hash")?;
                    let actual = sha256_hex(ctx.transient().unwrap_or_default());
                    if claimed != actual {
                        return Err(reject(RejectCode::HashMismatch, "payload does not match the declared hash"));
                    }
                }
                Instr::RecordMessage => {
                    let rec = MessageRecord {
                        message_id: str_arg(self.args, "messageId")?.to_string(),
                        hash: str_arg(self.args, "hash")?.to_string(),
                        status: "sent".into(),
                    };
                    ctx.put(state_key(self.inst, el, "message"), rec);
                }
                Instr::DisableRaceGroup { siblings } => {
                    for s in siblings {
                        if self.state(ctx, s) == ElementState::Enabled {
                            self.set_state(ctx, s, ElementState::Disabled);
                        }
                    }
                }
                Instr::MatchRecordedHash => {
                    let key = state_key(self.inst, el, "message");
                    let mut rec: MessageRecord =
                        ctx.get_as(&key)?.ok_or_else(|| reject(RejectCode::NotWaiting, "no message recorded"))?;
                    let bytes = ctx.transient().ok_or_else(|| reject(RejectCode::HashMismatch, "no payload supplied"))?;
                    if sha256_hex(bytes) != rec.hash {
                        return Err(reject(RejectCode::HashMismatch, format!("payload of {} differs from its on-chain hash", rec.message_id)));
                    }
                    rec.status = "confirmed".into();
                    ctx.put(key, rec);
                }
                Instr::PublishFields { message, fields } => {
                    let payload = self.payload(ctx)?;
                    for f in fields {
                        let key = ctx_key(self.inst, &context_key(message, f));
                        match payload.get(f) {
                            Some(v) => ctx.put(key, v),
                            None => ctx.delete(key),
                        }
                    }
                }
                Instr::RequestDecision => {
                    let record = dmn_record_name(self.inst, el);
                    let cid = ctx
                        .get(&record_key(&record))
                        .and_then(|v| v.get("cid").and_then(Json::as_str).map(str::to_string))
                        .ok_or_else(|| reject(RejectCode::NotEnabled, "decision model has not been stored yet"))?;
                    let cb = Callback {
                        contract: self.c.name.clone(),
                        op: OP_BRT_CALLBACK.into(),
                        args: json!({ "instanceId": self.inst, "elementId": el }),
                    };
                    let id = request_fetch(ctx, &cid, cb, self.inst);
                    ctx.put(state_key(self.inst, el, "request"), id);
                }
                Instr::ResolveCallback => {
                    let id = str_arg(self.args, "requestId")?;
                    let expected = ctx.get(&state_key(self.inst, el, "request"));
                    if expected.as_ref().and_then(Json::as_str) != Some(id) {
                        return Err(reject(RejectCode::RequestClosed, format!("{id} is not the open request of `{el}`")));
                    }
                    let req = open_request(ctx, id, RequestKind::Fetch)?;
                    if let Some(failure) = self.args.get("failure") {
                        close_request(ctx, req, RequestStatus::Failed);
                        self.set_state(ctx, el, ElementState::Enabled);
                        ctx.emit("DecisionFetchFailed", self.inst, json!({ "elementId": el, "failure": failure }));
                        return Ok(());
                    }
                    request = Some(req);
                }
                Instr::VerifyDigest => {
                    let binding: DmnBinding = ctx
                        .get_as(&state_key(self.inst, el, "dmn"))?
                        .ok_or_else(|| reject(RejectCode::DigestMismatch, "no decision model bound"))?;
                    if dmn_digest(ctx.transient().unwrap_or_default()) != binding.digest {
                        return Err(reject(RejectCode::DigestMismatch, "decision model content does not match the recorded digest"));
                    }
                }
                Instr::EvaluateDecision { inputs, output } => {
                    let text = std::str::from_utf8(ctx.transient().unwrap_or_default())
                        .map_err(|_| reject(RejectCode::DecisionError, "decision model is not UTF-8"))?
                        .to_string();
                    let model = parse_dmn(&text).map_err(|e| reject(RejectCode::DecisionError, e.to_string()))?;
                    let mut data = BTreeMap::new();
                    for r in inputs {
                        if let Some(v) = ctx.get(&ctx_key(self.inst, &r.context_key())) {
                            let v = Value::from_json(&v).map_err(|e| reject(RejectCode::DecisionError, e))?;
                            data.insert(r.field.clone(), v);
                        }
                    }
                    let result = evaluate_drd(&model, &data).map_err(|e| reject(RejectCode::DecisionError, e.to_string()))?;
                    let value = result
                        .outputs
                        .get(output)
                        .ok_or_else(|| reject(RejectCode::DecisionError, format!("decision produced no `{output}`")))?;
                    ctx.put(ctx_key(self.inst, output), value);
                    ctx.put(
                        state_key(self.inst, el, "decision"),
                        json!({
                            "dmnId": model.dmn_id,
                            "digest": dmn_digest(&text),
                            "inputs": data,
                            "outputs": result.outputs,
                            "trace": result.trace,
                        }),
                    );
                    if let Some(req) = request.take() {
                        close_request(ctx, req, RequestStatus::Done);
                    }
                }
                Instr::SetState { state } => self.set_state(ctx, el, *state),
                Instr::ApplyHooks => self.apply_hooks(ctx, el, depth)?,
                Instr::Emit { event } => ctx.emit(event.as_str(), self.inst, json!({ "elementId": el })),
            }
        }
        Ok(())
    }

    fn apply_hooks(&self, ctx: &mut TxContext<'_>, el: &str, depth: usize) -> Result<(), Reject> {
        let actions = self.program().hooks[el].on_complete.clone();
        for a in &actions {
            self.action(ctx, el, a, depth)?;
        }
        Ok(())
    }

    fn action(&self, ctx: &mut TxContext<'_>, el: &str, a: &HookAction, depth: usize) -> Result<(), Reject> {
        match a {
            HookAction::Enable { target, flow } => self.enable(ctx, target, Some(flow), depth + 1),
            HookAction::ResetSubgraph { members, .. } => {
                for m in members {
                    self.set_state(ctx, m, ElementState::Disabled);
                    let key = state_key(self.inst, m, "epoch");
                    let epoch = ctx.get(&key).and_then(|v| v.as_u64()).unwrap_or(0);
                    ctx.put(key, epoch + 1);
                    let arrivals = state_key(self.inst, m, "arrivals");
                    if ctx.get(&arrivals).is_some() {
                        ctx.delete(arrivals);
                    }
                }
                Ok(())
            }
            HookAction::Choose { branches } => {
                let inst = self.inst;
                let mut vars: BTreeMap<String, Option<Value>> = BTreeMap::new();
                for b in branches {
                    let Some(text) = &b.condition else { continue };
                    let expr = Expr::parse(text).map_err(|e| reject(RejectCode::NoBranch, format!("`{}`: {e}", b.flow)))?;
                    for v in expr.variables() {
                        if !vars.contains_key(&v) {
                            let val = ctx.get(&ctx_key(inst, &v)).and_then(|j| Value::from_json(&j).ok());
                            vars.insert(v, val);
                        }
                    }
                    let taken = expr
                        .eval_bool(&|name| vars.get(name).cloned().flatten())
                        .map_err(|e| reject(RejectCode::NoBranch, format!("`{el}` condition on `{}`: {e}", b.flow)))?;
                    if taken {
                        return b.then.iter().try_for_each(|t| self.action(ctx, el, t, depth));
                    }
                }
                match branches.iter().find(|b| b.is_default) {
                    Some(b) => b.then.iter().try_for_each(|t| self.action(ctx, el, t, depth)),
                    None => Err(reject(RejectCode::NoBranch, format!("no condition of `{el}` holds and there is no default"))),
                }
            }
        }
    }

    fn enable(&self, ctx: &mut TxContext<'_>, target: &str, flow: Option<&String>, depth: usize) -> Result<(), Reject> {
        if depth > MAX_CASCADE {
            return Err(reject(RejectCode::NoBranch, "automatic cascade does not terminate"));
        }
        let spec = &self.program().element_specs[target];
        if !spec.auto {
            self.set_state(ctx, target, ElementState::Enabled);
            ctx.emit("ElementEnabled", self.inst, json!({ "elementId": target }));
            return Ok(());
        }
        if let JoinCondition::AllIncoming { flows } = &self.program().hooks[target].join_condition {
            let key = state_key(self.inst, target, "arrivals");
            let mut arrived: BTreeSet<String> = ctx.get_as(&key)?.unwrap_or_default();
            if let Some(f) = flow {
                arrived.insert(f.clone());
            }
            if !flows.iter().all(|f| arrived.contains(f)) {
                ctx.put(key, arrived);
                return Ok(());
            }
            if ctx.get(&key).is_some() {
                ctx.delete(key);
            }
        }
        self.set_state(ctx, target, ElementState::Enabled);
        let body = spec.operations[OP_FIRE].clone();
        self.body(ctx, target, &body, depth)
    }
}
