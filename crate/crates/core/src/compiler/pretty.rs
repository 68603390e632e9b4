use std::fmt::Write;

use super::{ContractProgram, HookAction, Instr, JoinCondition};

fn action(out: &mut String, indent: &str, a: &HookAction) {
    match a {
        HookAction::Enable { target, flow } => {
            let _ = writeln!(out, "{indent}enable({target})  // via {flow}");
        }
        HookAction::ResetSubgraph { entry, members } => {
            let _ = writeln!(out, "{indent}resetSubgraph({entry}, [{}])", members.join(", "));
        }
        HookAction::Choose { branches } => {
            for (i, b) in branches.iter().enumerate() {
                let head = if b.is_default {
                    "else".to_string()
                } else {
                    format!("{}if ({})", if i == 0 { "" } else { "else " }, b.condition.as_deref().unwrap_or("true"))
                };
                let _ = writeln!(out, "{indent}{head} {{");
                for t in &b.then {
                    action(out, &format!("{indent}    "), t);
                }
                let _ = writeln!(out, "{indent}}}");
            }
            if !branches.iter().any(|b| b.is_default) {
                let _ = writeln!(out, "{indent}else {{ abort(NoBranch) }}");
            }
        }
    }
}

fn instr(i: &Instr) -> String {
    match i {
        Instr::GuardState { state } => format!("require(state == {})", state.as_str()),
        Instr::CheckAccess { role } => format!("require(abac(invoker, bindings[{role}]))"),
        Instr::CheckParticipant => "require(invoker bound to a role)".into(),
        Instr::CheckSystem => "require(invoker is system)".into(),
        Instr::ValidatePayload { message } => format!("validate(payload, schema[{message}])"),
        Instr::VerifyPayloadHash => "require(sha256(payload) == args.hash)".into(),
        Instr::RecordMessage => "record(messageId, hash)".into(),
        Instr::DisableRaceGroup { siblings } => format!("disable([{}])", siblings.join(", ")),
        Instr::MatchRecordedHash => "require(sha256(payload) == record.hash)".into(),
        Instr::PublishFields { message, fields } => format!("publish({message}: [{}])", fields.join(", ")),
        Instr::RequestDecision => "oracle.fetchData(dmnRecord, callback)".into(),
        Instr::ResolveCallback => "resolve(request)".into(),
        Instr::VerifyDigest => "require(sha256(dmn) == dmnDigest)".into(),
        Instr::EvaluateDecision { output, .. } => format!("context[{output}] = evaluate(dmn, inputs)"),
        Instr::SetState { state } => format!("state = {}", state.as_str()),
        Instr::ApplyHooks => "hooks()".into(),
        Instr::Emit { event } => format!("emit {event}"),
    }
}

/// Human-readable pseudo-contract. Debug output only; not parsed back.
pub fn pretty_print(program: &ContractProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "contract {} {{", program.model_id);
    let _ = writeln!(out, "    roles: [{}]", program.role_slots.join(", "));
    for (id, spec) in &program.element_specs {
        let hooks = &program.hooks[id];
        let states: Vec<_> = spec.states.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "\n    element {id}: {:?} [{}]{}", spec.kind, states.join(", "), if spec.auto { " auto" } else { "" });
        match &hooks.join_condition {
            JoinCondition::None => {}
            JoinCondition::AnyIncoming => {
                let _ = writeln!(out, "        join: any incoming");
            }
            JoinCondition::AllIncoming { flows } => {
                let _ = writeln!(out, "        join: all of [{}]", flows.join(", "));
            }
        }
        for (name, body) in &spec.operations {
            let _ = writeln!(out, "        op {name} {{");
            for i in body {
                if *i == Instr::ApplyHooks {
                    for a in &hooks.on_complete {
                        action(&mut out, "            ", a);
                    }
                } else {
                    let _ = writeln!(out, "            {}", instr(i));
                }
            }
            let _ = writeln!(out, "        }}");
        }
    }
    out.push_str("}\n");
    out
}
