use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::model::{ChoreographyModel, ElementKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum HookAction {
    Enable { target: String, flow: String },
    /// Returns a loop body to Disabled (new epoch) before its entry is re-enabled.
    ResetSubgraph { entry: String, members: Vec<String> },
    /// Exclusive choice: the first branch whose condition holds, else the default.
    Choose { branches: Vec<ConditionalEnable> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConditionalEnable {
    pub target: String,
    pub flow: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub is_default: bool,
    /// Actions run when the branch is taken: an optional reset, then the enable.
    pub then: Vec<HookAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "join", rename_all = "camelCase")]
pub enum JoinCondition {
    None,
    AnyIncoming,
    AllIncoming { flows: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HookSet {
    pub on_complete: Vec<HookAction>,
    pub join_condition: JoinCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race_group: Option<Vec<String>>,
}

/// Flows that close a cycle in a depth-first walk from the start event,
/// visiting outgoing flows in declaration order.
pub fn back_edges(model: &ChoreographyModel) -> BTreeSet<String> {
    let mut back = BTreeSet::new();
    let Some(start) = model.start_event() else { return back };
    let mut color: BTreeMap<&str, u8> = BTreeMap::new();
    // (node, index of next outgoing flow)
    let mut stack: Vec<(&str, usize)> = vec![(start.id.as_str(), 0)];
    color.insert(&start.id, 1);
    while let Some((node, i)) = stack.pop() {
        let outs: Vec<_> = model.outgoing(node).collect();
        if i >= outs.len() {
            color.insert(node, 2);
            continue;
        }
        stack.push((node, i + 1));
        let f = outs[i];
        match color.get(f.target.as_str()).copied().unwrap_or(0) {
            0 => {
                color.insert(&f.target, 1);
                stack.push((&f.target, 0));
            }
            1 => {
                back.insert(f.id.clone());
            }
            _ => {}
        }
    }
    back
}

/// Elements on some cycle through the back edge `source -> entry`: reachable
/// from `entry` and able to reach `source`.
fn loop_body(model: &ChoreographyModel, entry: &str, source: &str) -> Vec<String> {
    let walk = |from: &str, forward: bool| {
        let mut seen = BTreeSet::from([from.to_string()]);
        let mut queue = VecDeque::from([from.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for f in &model.flows {
                let (a, b) = if forward { (&f.source, &f.target) } else { (&f.target, &f.source) };
                if *a == cur && seen.insert(b.clone()) {
                    queue.push_back(b.clone());
                }
            }
        }
        seen
    };
    walk(entry, true).intersection(&walk(source, false)).cloned().collect()
}

/// First pass: per-element hook sets derived from the flow topology.
pub fn generate_hooks(model: &ChoreographyModel) -> Result<BTreeMap<String, HookSet>, CompileError> {
    let back = back_edges(model);
    let follow = |flow: &crate::model::SequenceFlow| {
        let mut actions = Vec::new();
        if back.contains(&flow.id) {
            actions.push(HookAction::ResetSubgraph {
                entry: flow.target.clone(),
                members: loop_body(model, &flow.target, &flow.source),
            });
        }
        actions.push(HookAction::Enable { target: flow.target.clone(), flow: flow.id.clone() });
        actions
    };

    let mut out = BTreeMap::new();
    for e in model.elements.values() {
        let outs: Vec<_> = model.outgoing(&e.id).collect();
        let ins: Vec<_> = model.incoming(&e.id).collect();
        let on_complete = match &e.kind {
            ElementKind::ExclusiveGateway { default_flow } if outs.len() > 1 => {
                let mut branches = Vec::new();
                for f in &outs {
                    let is_default = default_flow.as_deref() == Some(f.id.as_str());
                    if f.condition.is_none() && !is_default {
                        return Err(CompileError::MissingCondition { gateway: e.id.clone(), flow: f.id.clone() });
                    }
                    branches.push(ConditionalEnable {
                        target: f.target.clone(),
                        flow: f.id.clone(),
                        condition: f.condition.clone(),
                        is_default,
                        then: follow(f),
                    });
                }
                vec![HookAction::Choose { branches }]
            }
            _ => outs.iter().flat_map(|f| follow(f)).collect(),
        };
        let join_condition = match &e.kind {
            ElementKind::ParallelGateway if ins.len() > 1 => {
                JoinCondition::AllIncoming { flows: ins.iter().map(|f| f.id.clone()).collect() }
            }
            ElementKind::ExclusiveGateway { .. } if ins.len() > 1 => JoinCondition::AnyIncoming,
            _ => JoinCondition::None,
        };
        let race_group = ins.iter().find_map(|f| {
            let src = model.element(&f.source)?;
            (src.kind == ElementKind::EventBasedGateway).then(|| {
                model.outgoing(&src.id).map(|g| g.target.clone()).filter(|t| t != &e.id).collect::<Vec<_>>()
            })
        });
        out.insert(e.id.clone(), HookSet { on_complete, join_condition, race_group });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Element, SequenceFlow};

    fn model(elements: &[(&str, ElementKind)], flows: &[(&str, &str, &str)]) -> ChoreographyModel {
        ChoreographyModel {
            model_id: "m".into(),
            name: String::new(),
            participants: vec![],
            elements: elements
                .iter()
                .map(|(id, k)| (id.to_string(), Element { id: id.to_string(), name: String::new(), kind: k.clone() }))
                .collect(),
            flows: flows
                .iter()
                .map(|(id, s, t)| SequenceFlow { id: id.to_string(), source: s.to_string(), target: t.to_string(), name: None, condition: None })
                .collect(),
            messages: BTreeMap::new(),
        }
    }

    #[test]
    fn parallel_split_and_join() {
        let m = model(
            &[
                ("s", ElementKind::StartEvent),
                ("p", ElementKind::ParallelGateway),
                ("a", ElementKind::EndEvent),
                ("b", ElementKind::EndEvent),
                ("j", ElementKind::ParallelGateway),
                ("e", ElementKind::EndEvent),
            ],
            &[("f0", "s", "p"), ("f1", "p", "a"), ("f2", "p", "b"), ("f3", "a", "j"), ("f4", "b", "j"), ("f5", "j", "e")],
        );
        let h = generate_hooks(&m).unwrap();
        assert_eq!(h["p"].on_complete.len(), 2);
        assert_eq!(h["j"].join_condition, JoinCondition::AllIncoming { flows: vec!["f3".into(), "f4".into()] });
    }

    #[test]
    fn back_edge_found_in_cycle() {
        let m = model(
            &[("s", ElementKind::StartEvent), ("x", ElementKind::ExclusiveGateway { default_flow: None }), ("y", ElementKind::EndEvent)],
            &[("f0", "s", "x"), ("f1", "x", "y"), ("f2", "y", "x")],
        );
        assert_eq!(back_edges(&m), BTreeSet::from(["f2".to_string()]));
        assert_eq!(loop_body(&m, "x", "y"), vec!["x".to_string(), "y".to_string()]);
    }
}
