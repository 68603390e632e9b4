//! Random block-structured choreographies: sequences, exclusive and parallel
//! blocks, event-based races and (optionally) loops, always well-formed.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chor_core::ledger::{Membership, MembershipSelector};
use chor_core::model::{ChoreographyModel, Element, ElementKind, FieldSpec, MessageDef, ParticipantDef, SequenceFlow, ValueType};
use chor_core::runtime::{Consortium, User};
use chor_core::scenario::{Actor, Bindings, Bundle};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ROLES: [&str; 3] = ["Alpha", "Beta", "Gamma"];

pub struct ModelGen {
    rng: ChaCha8Rng,
    pub loops: bool,
    elements: Vec<Element>,
    flows: Vec<SequenceFlow>,
    messages: BTreeMap<String, MessageDef>,
    next: usize,
}

impl ModelGen {
    pub fn new(rng: ChaCha8Rng, loops: bool) -> ModelGen {
        ModelGen { rng, loops, elements: Vec::new(), flows: Vec::new(), messages: BTreeMap::new(), next: 0 }
    }

    fn id(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn add(&mut self, prefix: &str, kind: ElementKind) -> String {
        let id = self.id(prefix);
        self.elements.push(Element { id: id.clone(), name: id.clone(), kind });
        id
    }

    fn flow(&mut self, source: &str, target: &str, condition: Option<String>) -> String {
        let id = self.id("Flow_");
        self.flows.push(SequenceFlow { id: id.clone(), source: source.into(), target: target.into(), name: None, condition });
        id
    }

    /// A task carrying a fresh message with a numeric field `n`; returns (task, message).
    fn task(&mut self) -> (String, String) {
        let message = self.id("Msg");
        self.messages.insert(
            message.clone(),
            MessageDef {
                id: message.clone(),
                name: message.clone(),
                fields: vec![FieldSpec { name: "n".into(), description: String::new(), ty: ValueType::Number, required: true }],
            },
        );
        let i = self.rng.random_range(0..ROLES.len());
        let r = (i + self.rng.random_range(1..ROLES.len())) % ROLES.len();
        let kind = ElementKind::ChoreographyTask { initiator: ROLES[i].into(), recipient: ROLES[r].into(), message: message.clone() };
        (self.add("Task", kind), message)
    }

    fn link(&mut self, parts: &[(String, String)]) -> (String, String) {
        for w in parts.windows(2) {
            self.flow(&w[0].1, &w[1].0, None);
        }
        (parts[0].0.clone(), parts[parts.len() - 1].1.clone())
    }

    /// Builds a block and returns its (entry, exit) elements.
    pub fn block(&mut self, depth: u32, in_parallel: bool) -> (String, String) {
        let pick = if depth == 0 { 0 } else { self.rng.random_range(0..6) };
        match pick {
            0 => {
                let (t, _) = self.task();
                (t.clone(), t)
            }
            1 => {
                let a = self.block(depth - 1, in_parallel);
                let b = self.block(depth - 1, in_parallel);
                self.link(&[a, b])
            }
            2 => {
                // Exclusive choice on the number sent just before the split.
                let (t, msg) = self.task();
                let split = self.add("Split", ElementKind::ExclusiveGateway { default_flow: None });
                let merge = self.add("Merge", ElementKind::ExclusiveGateway { default_flow: None });
                self.flow(&t, &split, None);
                let branches = self.rng.random_range(2..=3);
                let mut default = None;
                for k in 0..branches {
                    let (entry, exit) = self.block(depth - 1, in_parallel);
                    let cond = (k + 1 < branches).then(|| format!("{msg}.n == {k}"));
                    let f = self.flow(&split, &entry, cond.clone());
                    if cond.is_none() {
                        default = Some(f);
                    }
                    self.flow(&exit, &merge, None);
                }
                self.set_default(&split, default);
                (t, merge)
            }
            3 => {
                let split = self.add("Fork", ElementKind::ParallelGateway);
                let join = self.add("Join", ElementKind::ParallelGateway);
                for _ in 0..2 {
                    let (entry, exit) = self.block(depth - 1, true);
                    self.flow(&split, &entry, None);
                    self.flow(&exit, &join, None);
                }
                (split, join)
            }
            4 => {
                let race = self.add("Race", ElementKind::EventBasedGateway);
                let merge = self.add("Merge", ElementKind::ExclusiveGateway { default_flow: None });
                for _ in 0..2 {
                    let (t, _) = self.task();
                    let (entry, exit) = self.block(depth - 1, in_parallel);
                    self.flow(&t, &entry, None);
                    self.flow(&race, &t, None);
                    self.flow(&exit, &merge, None);
                }
                (race, merge)
            }
            _ if self.loops && !in_parallel => {
                // Body, then a task whose number decides whether to go round again.
                let merge = self.add("Loop", ElementKind::ExclusiveGateway { default_flow: None });
                let (entry, exit) = self.block(depth - 1, in_parallel);
                let (t, msg) = self.task();
                let split = self.add("Again", ElementKind::ExclusiveGateway { default_flow: None });
                let after = self.add("Exit", ElementKind::ExclusiveGateway { default_flow: None });
                self.flow(&merge, &entry, None);
                self.flow(&exit, &t, None);
                self.flow(&t, &split, None);
                self.flow(&split, &merge, Some(format!("{msg}.n == 1")));
                let d = self.flow(&split, &after, None);
                self.set_default(&split, Some(d));
                (merge, after)
            }
            _ => {
                let (t, _) = self.task();
                (t.clone(), t)
            }
        }
    }

    fn set_default(&mut self, gateway: &str, flow: Option<String>) {
        let el = self.elements.iter_mut().find(|e| e.id == gateway).expect("gateway exists");
        el.kind = ElementKind::ExclusiveGateway { default_flow: flow };
    }

    pub fn model(mut self, depth: u32) -> ChoreographyModel {
        let start = self.add("Start", ElementKind::StartEvent);
        let (entry, exit) = self.block(depth, false);
        let end = self.add("End", ElementKind::EndEvent);
        self.flow(&start, &entry, None);
        self.flow(&exit, &end, None);
        ChoreographyModel {
            model_id: "generated".into(),
            name: "Generated".into(),
            participants: ROLES
                .iter()
                .map(|r| ParticipantDef { id: r.to_string(), name: r.to_string(), description: String::new() })
                .collect(),
            elements: self.elements.into_iter().map(|e| (e.id.clone(), e)).collect(),
            flows: self.flows,
            messages: self.messages,
        }
    }
}

/// A runnable bundle around a generated model: one membership and user per role.
pub fn bundle_for(model: ChoreographyModel) -> Bundle {
    let member = |r: &str| format!("{}-m1", r.to_lowercase());
    let consortium = Consortium {
        id: "generated".into(),
        organizations: Vec::new(),
        memberships: ROLES.iter().map(|r| Membership::new(member(r), r.to_lowercase())).collect(),
        users: ROLES
            .iter()
            .map(|r| User { id: r.to_lowercase(), membership: member(r), attributes: BTreeMap::new() })
            .collect(),
    };
    let bindings = Bindings {
        consortium,
        roles: ROLES.iter().map(|r| (r.to_string(), MembershipSelector::membership(member(r)))).collect(),
        actors: ROLES.iter().map(|r| (r.to_string(), Actor { membership: member(r), user: r.to_lowercase() })).collect(),
    };
    Bundle {
        name: "generated".into(),
        dir: PathBuf::new(),
        bpmn: chor_core::bpmn::serialize_choreography(&model),
        model,
        dmn: BTreeMap::new(),
        bindings,
    }
}
