//! In-memory model types shared by the parsers, compiler, runtime and
//! conformance harness.

pub mod expr;
mod validate;
pub mod value;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use expr::{CmpOp, Expr, ExprError, Interval, UnaryTest, UnaryTests};
pub use validate::{validate_message_payload, validate_model, PayloadViolation, ValidationReport, Violation, ViolationCode};
pub use value::{Value, ValueType};

/// A choreography participant (role). Bindings to memberships happen per instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantDef {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDef {
    pub id: String,
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl MessageDef {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// A field of a message, used as a decision input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldRef {
    pub message: String,
    pub field: String,
}

impl FieldRef {
    /// Key under which the field is published in the instance context.
    pub fn context_key(&self) -> String {
        context_key(&self.message, &self.field)
    }
}

pub fn context_key(message: &str, field: &str) -> String {
    format!("{message}.{field}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ElementKind {
    StartEvent,
    EndEvent,
    ChoreographyTask {
        initiator: String,
        recipient: String,
        message: String,
    },
    BusinessRuleTask {
        inputs: Vec<FieldRef>,
        output: FieldSpec,
    },
    ExclusiveGateway {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default_flow: Option<String>,
    },
    ParallelGateway,
    EventBasedGateway,
}

impl ElementKind {
    pub fn is_gateway(&self) -> bool {
        matches!(
            self,
            ElementKind::ExclusiveGateway { .. } | ElementKind::ParallelGateway | ElementKind::EventBasedGateway
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElementKind::StartEvent => "StartEvent",
            ElementKind::EndEvent => "EndEvent",
            ElementKind::ChoreographyTask { .. } => "ChoreographyTask",
            ElementKind::BusinessRuleTask { .. } => "BusinessRuleTask",
            ElementKind::ExclusiveGateway { .. } => "ExclusiveGateway",
            ElementKind::ParallelGateway => "ParallelGateway",
            ElementKind::EventBasedGateway => "EventBasedGateway",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub kind: ElementKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceFlow {
    pub id: String,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Condition text exactly as authored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoreographyModel {
    pub model_id: String,
    #[serde(default)]
    pub name: String,
    pub participants: Vec<ParticipantDef>,
    pub elements: BTreeMap<String, Element>,
    pub flows: Vec<SequenceFlow>,
    pub messages: BTreeMap<String, MessageDef>,
}

/// Element counts in the shape of the evaluation table columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub tasks: usize,
    pub messages: usize,
    pub gateways: usize,
    pub brts: usize,
}

impl ChoreographyModel {
    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.get(id)
    }

    pub fn flow(&self, id: &str) -> Option<&SequenceFlow> {
        self.flows.iter().find(|f| f.id == id)
    }

    /// Outgoing flows of `id`, in declaration order.
    pub fn outgoing<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.source == id)
    }

    pub fn incoming<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.target == id)
    }

    pub fn start_events(&self) -> impl Iterator<Item = &Element> {
        self.elements.values().filter(|e| e.kind == ElementKind::StartEvent)
    }

    pub fn start_event(&self) -> Option<&Element> {
        let mut it = self.start_events();
        match (it.next(), it.next()) {
            (Some(s), None) => Some(s),
            _ => None,
        }
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantDef> {
        self.participants.iter().find(|p| p.id == id)
    }

    pub fn census(&self) -> Census {
        let count = |pred: fn(&ElementKind) -> bool| self.elements.values().filter(|e| pred(&e.kind)).count();
        Census {
            tasks: count(|k| matches!(k, ElementKind::ChoreographyTask { .. })),
            messages: self.messages.len(),
            gateways: count(ElementKind::is_gateway),
            brts: count(|k| matches!(k, ElementKind::BusinessRuleTask { .. })),
        }
    }

    /// Message fields that become public context when their carrying message
    /// is confirmed: every decision input and every field a flow condition reads.
    pub fn public_fields(&self) -> BTreeSet<FieldRef> {
        let mut out = BTreeSet::new();
        for e in self.elements.values() {
            if let ElementKind::BusinessRuleTask { inputs, .. } = &e.kind {
                out.extend(inputs.iter().cloned());
            }
        }
        let fields: BTreeMap<String, FieldRef> = self
            .messages
            .values()
            .flat_map(|m| {
                m.fields.iter().map(|f| {
                    let r = FieldRef { message: m.id.clone(), field: f.name.clone() };
                    (r.context_key(), r)
                })
            })
            .collect();
        for flow in &self.flows {
            if let Some(Ok(expr)) = flow.condition.as_deref().map(Expr::parse) {
                for v in expr.variables() {
                    if let Some(r) = fields.get(&v) {
                        out.insert(r.clone());
                    }
                }
            }
        }
        out
    }

    /// Names every context variable can take, with its type: published message
    /// fields plus decision outputs.
    pub fn context_variables(&self) -> BTreeMap<String, ValueType> {
        let mut out = BTreeMap::new();
        for m in self.messages.values() {
            for f in &m.fields {
                out.insert(context_key(&m.id, &f.name), f.ty);
            }
        }
        for e in self.elements.values() {
            if let ElementKind::BusinessRuleTask { output, .. } = &e.kind {
                out.insert(output.name.clone(), output.ty);
            }
        }
        out
    }

    /// Ids of choreography tasks sending `message`.
    pub fn tasks_sending<'a>(&'a self, message: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.elements.values().filter(move |e| {
            matches!(&e.kind, ElementKind::ChoreographyTask { message: m, .. } if m == message)
        })
    }
}

// ---------------------------------------------------------------------------
// Decision models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HitPolicy {
    Unique,
    First,
    Any,
}

impl HitPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            HitPolicy::Unique => "UNIQUE",
            HitPolicy::First => "FIRST",
            HitPolicy::Any => "ANY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputClause {
    /// Name of the variable the clause reads: an input data name or a required
    /// decision's output name.
    pub input_ref: String,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputClause {
    pub name: String,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub input_entries: Vec<UnaryTests>,
    pub output_entries: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTable {
    pub hit_policy: HitPolicy,
    pub inputs: Vec<InputClause>,
    pub outputs: Vec<OutputClause>,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub id: String,
    pub name: String,
    pub required_inputs: Vec<String>,
    pub required_decisions: Vec<String>,
    pub table: DecisionTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDataDef {
    pub id: String,
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmnModel {
    pub dmn_id: String,
    pub name: String,
    pub input_data: Vec<InputDataDef>,
    pub decisions: Vec<Decision>,
    pub output_decision: String,
}

impl DmnModel {
    pub fn decision(&self, id: &str) -> Option<&Decision> {
        self.decisions.iter().find(|d| d.id == id)
    }

    pub fn input(&self, id: &str) -> Option<&InputDataDef> {
        self.input_data.iter().find(|i| i.id == id)
    }

    /// The single output the model hands back to a business rule task: the
    /// output decision's first output clause.
    pub fn primary_output(&self) -> Option<&OutputClause> {
        self.decision(&self.output_decision).and_then(|d| d.table.outputs.first())
    }
}
