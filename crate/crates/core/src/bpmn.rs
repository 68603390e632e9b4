//! BPMN 2.0 choreography XML reader and writer.
//!
//! The accepted dialect is the one produced by choreography editors: a single
//! `choreography` holding participants, message flows, flow nodes and sequence
//! flows. A task's initiator is `initiatingParticipantRef` (falling back to the
//! first participant band); the other band is the recipient. The task's message
//! is the one carried by the message flow leaving the initiator.
//!
//! Message field schemas and business rule task I/O declarations are carried in
//! `extensionElements` under [`EXTENSION_NS`]:
//!
//! ```xml
//! <bpmn2:message id="Order" name="Order">
//!   <bpmn2:extensionElements>
//!     <chor:field name="qty" type="number" required="true" description="units"/>
//!   </bpmn2:extensionElements>
//! </bpmn2:message>
//!
//! <bpmn2:businessRuleTask id="Decide" name="Decide">
//!   <bpmn2:extensionElements>
//!     <chor:decisionIo>
//!       <chor:input message="Order" field="qty"/>
//!       <chor:output name="priority" type="string" description="..."/>
//!     </chor:decisionIo>
//!   </bpmn2:extensionElements>
//! </bpmn2:businessRuleTask>
//! ```
//!
//! Diagram interchange (`bpmndi`) content is ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::escape::escape;
use roxmltree::{Document, Node};
use thiserror::Error;

use crate::model::{
    ChoreographyModel, Element, ElementKind, FieldRef, FieldSpec, MessageDef, ParticipantDef, SequenceFlow, ValueType,
};

pub const BPMN_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";
pub const EXTENSION_NS: &str = "urn:chor:bpmn-extension:1.0";
const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BpmnError {
    #[error("XML syntax error: {0}")]
    Xml(String),
    #[error("document root is not a BPMN definitions element")]
    NotBpmn,
    #[error("document contains no choreography")]
    NoChoreography,
    #[error("document contains more than one choreography")]
    MultipleChoreographies,
    #[error("unsupported element <{tag}> (id `{id}`)")]
    Unsupported { id: String, tag: String },
    #[error("element <{tag}> is missing attribute `{attr}`")]
    MissingAttribute { tag: String, attr: &'static str },
    #[error("task `{task}` is missing its {which}")]
    MissingParticipant { task: String, which: &'static str },
    #[error("task `{task}` carries no message")]
    MissingMessage { task: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("field `{field}` of message `{message}` has unknown type `{ty}`")]
    BadFieldType { message: String, field: String, ty: String },
    #[error("business rule task `{id}`: {reason}")]
    BadBusinessRuleTask { id: String, reason: String },
    #[error("flow node count mismatch: {tags} tags but {elements} elements")]
    CountMismatch { tags: usize, elements: usize },
}

fn is_bpmn(n: &Node, local: &str) -> bool {
    n.is_element() && n.tag_name().namespace() == Some(BPMN_NS) && n.tag_name().name() == local
}

fn is_ext(n: &Node, local: &str) -> bool {
    n.is_element() && n.tag_name().namespace() == Some(EXTENSION_NS) && n.tag_name().name() == local
}

fn required_attr<'a>(n: &Node<'a, '_>, attr: &'static str) -> Result<&'a str, BpmnError> {
    n.attribute(attr).ok_or_else(|| BpmnError::MissingAttribute { tag: n.tag_name().name().to_string(), attr })
}

fn extension_children<'a, 'i>(n: &Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    n.children()
        .filter(|c| is_bpmn(c, "extensionElements"))
        .flat_map(|ext| ext.children().filter(Node::is_element))
}

fn field_spec(message: &str, n: &Node) -> Result<FieldSpec, BpmnError> {
    let name = required_attr(n, "name")?.to_string();
    let ty_text = required_attr(n, "type")?;
    let ty = ValueType::parse(ty_text).ok_or_else(|| BpmnError::BadFieldType {
        message: message.to_string(),
        field: name.clone(),
        ty: ty_text.to_string(),
    })?;
    Ok(FieldSpec {
        name,
        description: n.attribute("description").unwrap_or_default().to_string(),
        ty,
        required: n.attribute("required").map(|v| v == "true").unwrap_or(true),
    })
}

/// Flow-node tags the reader maps onto model elements.
const FLOW_NODES: &[&str] = &[
    "startEvent",
    "endEvent",
    "choreographyTask",
    "businessRuleTask",
    "exclusiveGateway",
    "parallelGateway",
    "eventBasedGateway",
];

/// Children of a choreography that carry no execution semantics.
const IGNORED: &[&str] = &["documentation", "extensionElements", "textAnnotation", "association"];

pub fn parse_choreography(xml: &str) -> Result<ChoreographyModel, BpmnError> {
    let doc = Document::parse(xml).map_err(|e| BpmnError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if !is_bpmn(&root, "definitions") {
        return Err(BpmnError::NotBpmn);
    }

    let mut messages = BTreeMap::new();
    for m in root.children().filter(|c| is_bpmn(c, "message")) {
        let id = required_attr(&m, "id")?.to_string();
        let fields = extension_children(&m)
            .filter(|c| is_ext(c, "field"))
            .map(|c| field_spec(&id, &c))
            .collect::<Result<Vec<_>, _>>()?;
        let def = MessageDef { name: m.attribute("name").unwrap_or(&id).to_string(), id: id.clone(), fields };
        if messages.insert(id.clone(), def).is_some() {
            return Err(BpmnError::DuplicateId(id));
        }
    }

    let mut chors = root.children().filter(|c| is_bpmn(c, "choreography"));
    let chor = chors.next().ok_or(BpmnError::NoChoreography)?;
    if chors.next().is_some() {
        return Err(BpmnError::MultipleChoreographies);
    }

    let mut participants = Vec::new();
    let mut message_flows: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    let mut flows = Vec::new();
    let mut elements = BTreeMap::new();
    let mut node_tags = 0usize;

    for n in chor.children().filter(Node::is_element) {
        let tag = n.tag_name().name();
        if n.tag_name().namespace() != Some(BPMN_NS) {
            // Foreign-namespace children (e.g. diagram hints) are not flow nodes.
            continue;
        }
        match tag {
            "participant" => {
                let id = required_attr(&n, "id")?.to_string();
                let description = n
                    .children()
                    .find(|c| is_bpmn(c, "documentation"))
                    .and_then(|d| d.text())
                    .unwrap_or_default()
                    .to_string();
                participants.push(ParticipantDef { name: n.attribute("name").unwrap_or(&id).to_string(), id, description });
            }
            "messageFlow" => {
                let id = required_attr(&n, "id")?;
                let source = required_attr(&n, "sourceRef")?;
                let message = required_attr(&n, "messageRef")?;
                message_flows.insert(id, (source, message));
            }
            "sequenceFlow" => {
                let condition = n
                    .children()
                    .find(|c| is_bpmn(c, "conditionExpression"))
                    .map(|c| c.text().unwrap_or_default().to_string());
                flows.push(SequenceFlow {
                    id: required_attr(&n, "id")?.to_string(),
                    source: required_attr(&n, "sourceRef")?.to_string(),
                    target: required_attr(&n, "targetRef")?.to_string(),
                    name: n.attribute("name").map(str::to_string),
                    condition,
                });
            }
            t if FLOW_NODES.contains(&t) => node_tags += 1,
            t if IGNORED.contains(&t) => {}
            other => {
                return Err(BpmnError::Unsupported {
                    id: n.attribute("id").unwrap_or_default().to_string(),
                    tag: other.to_string(),
                })
            }
        }
    }

    for n in chor.children().filter(|c| c.is_element() && c.tag_name().namespace() == Some(BPMN_NS)) {
        let tag = n.tag_name().name();
        if !FLOW_NODES.contains(&tag) {
            continue;
        }
        let id = required_attr(&n, "id")?.to_string();
        let kind = match tag {
            "startEvent" => ElementKind::StartEvent,
            "endEvent" => ElementKind::EndEvent,
            "parallelGateway" => ElementKind::ParallelGateway,
            "eventBasedGateway" => ElementKind::EventBasedGateway,
            "exclusiveGateway" => ElementKind::ExclusiveGateway { default_flow: n.attribute("default").map(str::to_string) },
            "choreographyTask" => read_task(&n, &id, &message_flows)?,
            "businessRuleTask" => read_brt(&n, &id)?,
            _ => unreachable!("filtered to flow nodes"),
        };
        let el = Element { name: n.attribute("name").unwrap_or_default().to_string(), id: id.clone(), kind };
        if elements.insert(id.clone(), el).is_some() {
            return Err(BpmnError::DuplicateId(id));
        }
    }
    if node_tags != elements.len() {
        return Err(BpmnError::CountMismatch { tags: node_tags, elements: elements.len() });
    }

    Ok(ChoreographyModel {
        model_id: required_attr(&chor, "id")?.to_string(),
        name: chor.attribute("name").unwrap_or_default().to_string(),
        participants,
        elements,
        flows,
        messages,
    })
}

fn read_task(n: &Node, id: &str, message_flows: &BTreeMap<&str, (&str, &str)>) -> Result<ElementKind, BpmnError> {
    let bands: Vec<&str> = n
        .children()
        .filter(|c| is_bpmn(c, "participantRef"))
        .filter_map(|c| c.text())
        .map(str::trim)
        .collect();
    let initiator = n
        .attribute("initiatingParticipantRef")
        .or_else(|| bands.first().copied())
        .ok_or_else(|| BpmnError::MissingParticipant { task: id.to_string(), which: "initiator" })?;
    let recipient = bands
        .iter()
        .copied()
        .find(|b| *b != initiator)
        .ok_or_else(|| BpmnError::MissingParticipant { task: id.to_string(), which: "recipient" })?;
    let carried: Vec<(&str, &str)> = n
        .children()
        .filter(|c| is_bpmn(c, "messageFlowRef"))
        .filter_map(|c| c.text())
        .filter_map(|r| message_flows.get(r.trim()).copied())
        .collect();
    let message = carried
        .iter()
        .find(|(src, _)| *src == initiator)
        .or_else(|| carried.first())
        .map(|(_, m)| m.to_string())
        .ok_or_else(|| BpmnError::MissingMessage { task: id.to_string() })?;
    Ok(ElementKind::ChoreographyTask { initiator: initiator.to_string(), recipient: recipient.to_string(), message })
}

fn read_brt(n: &Node, id: &str) -> Result<ElementKind, BpmnError> {
    let bad = |reason: &str| BpmnError::BadBusinessRuleTask { id: id.to_string(), reason: reason.to_string() };
    let io = extension_children(n)
        .find(|c| is_ext(c, "decisionIo"))
        .ok_or_else(|| bad("missing decisionIo extension"))?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for c in io.children().filter(Node::is_element) {
        if is_ext(&c, "input") {
            inputs.push(FieldRef {
                message: required_attr(&c, "message")?.to_string(),
                field: required_attr(&c, "field")?.to_string(),
            });
        } else if is_ext(&c, "output") {
            outputs.push(field_spec(id, &c)?);
        }
    }
    match outputs.len() {
        1 => Ok(ElementKind::BusinessRuleTask { inputs, output: outputs.remove(0) }),
        0 => Err(bad("declares no output")),
        _ => Err(bad("declares more than one output")),
    }
}

fn esc(s: &str) -> String {
    escape(s).replace('\r', "&#13;")
}

/// Writes a model in the dialect [`parse_choreography`] reads.
pub fn serialize_choreography(model: &ChoreographyModel) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<bpmn2:definitions xmlns:bpmn2="{BPMN_NS}" xmlns:chor="{EXTENSION_NS}" xmlns:xsi="{XSI_NS}" id="Definitions_{}">"#,
        esc(&model.model_id)
    );
    for m in model.messages.values() {
        let _ = write!(w, r#"  <bpmn2:message id="{}" name="{}">"#, esc(&m.id), esc(&m.name));
        if !m.fields.is_empty() {
            let _ = writeln!(w, "\n    <bpmn2:extensionElements>");
            for f in &m.fields {
                let _ = writeln!(
                    w,
                    r#"      <chor:field name="{}" type="{}" required="{}" description="{}"/>"#,
                    esc(&f.name),
                    f.ty,
                    f.required,
                    esc(&f.description)
                );
            }
            let _ = write!(w, "    </bpmn2:extensionElements>\n  ");
        }
        let _ = writeln!(w, "</bpmn2:message>");
    }
    let _ = writeln!(w, r#"  <bpmn2:choreography id="{}" name="{}">"#, esc(&model.model_id), esc(&model.name));
    for p in &model.participants {
        let _ = write!(w, r#"    <bpmn2:participant id="{}" name="{}">"#, esc(&p.id), esc(&p.name));
        if !p.description.is_empty() {
            let _ = write!(w, "<bpmn2:documentation>{}</bpmn2:documentation>", esc(&p.description));
        }
        let _ = writeln!(w, "</bpmn2:participant>");
    }
    for e in model.elements.values() {
        if let ElementKind::ChoreographyTask { initiator, recipient, message } = &e.kind {
            let _ = writeln!(
                w,
                r#"    <bpmn2:messageFlow id="MessageFlow_{}" sourceRef="{}" targetRef="{}" messageRef="{}"/>"#,
                esc(&e.id),
                esc(initiator),
                esc(recipient),
                esc(message)
            );
        }
    }
    for e in model.elements.values() {
        write_element(w, model, e);
    }
    for f in &model.flows {
        let _ = write!(w, r#"    <bpmn2:sequenceFlow id="{}" sourceRef="{}" targetRef="{}""#, esc(&f.id), esc(&f.source), esc(&f.target));
        if let Some(name) = &f.name {
            let _ = write!(w, r#" name="{}""#, esc(name));
        }
        match &f.condition {
            Some(c) => {
                let _ = writeln!(
                    w,
                    r#"><bpmn2:conditionExpression xsi:type="bpmn2:tFormalExpression">{}</bpmn2:conditionExpression></bpmn2:sequenceFlow>"#,
                    esc(c)
                );
            }
            None => {
                let _ = writeln!(w, "/>");
            }
        }
    }
    let _ = writeln!(w, "  </bpmn2:choreography>");
    let _ = writeln!(w, "</bpmn2:definitions>");
    out
}

fn write_element(w: &mut String, model: &ChoreographyModel, e: &Element) {
    let (tag, extra_attrs) = match &e.kind {
        ElementKind::StartEvent => ("startEvent", String::new()),
        ElementKind::EndEvent => ("endEvent", String::new()),
        ElementKind::ParallelGateway => ("parallelGateway", String::new()),
        ElementKind::EventBasedGateway => ("eventBasedGateway", String::new()),
        ElementKind::ExclusiveGateway { default_flow } => (
            "exclusiveGateway",
            default_flow.as_ref().map(|d| format!(r#" default="{}""#, esc(d))).unwrap_or_default(),
        ),
        ElementKind::ChoreographyTask { initiator, .. } => {
            ("choreographyTask", format!(r#" initiatingParticipantRef="{}""#, esc(initiator)))
        }
        ElementKind::BusinessRuleTask { .. } => ("businessRuleTask", String::new()),
    };
    let _ = writeln!(w, r#"    <bpmn2:{tag} id="{}" name="{}"{extra_attrs}>"#, esc(&e.id), esc(&e.name));
    for f in model.incoming(&e.id) {
        let _ = writeln!(w, "      <bpmn2:incoming>{}</bpmn2:incoming>", esc(&f.id));
    }
    for f in model.outgoing(&e.id) {
        let _ = writeln!(w, "      <bpmn2:outgoing>{}</bpmn2:outgoing>", esc(&f.id));
    }
    match &e.kind {
        ElementKind::ChoreographyTask { initiator, recipient, .. } => {
            let _ = writeln!(w, "      <bpmn2:participantRef>{}</bpmn2:participantRef>", esc(initiator));
            let _ = writeln!(w, "      <bpmn2:participantRef>{}</bpmn2:participantRef>", esc(recipient));
            let _ = writeln!(w, "      <bpmn2:messageFlowRef>MessageFlow_{}</bpmn2:messageFlowRef>", esc(&e.id));
        }
        ElementKind::BusinessRuleTask { inputs, output } => {
            let _ = writeln!(w, "      <bpmn2:extensionElements>\n        <chor:decisionIo>");
            for i in inputs {
                let _ = writeln!(w, r#"          <chor:input message="{}" field="{}"/>"#, esc(&i.message), esc(&i.field));
            }
            let _ = writeln!(
                w,
                r#"          <chor:output name="{}" type="{}" required="{}" description="{}"/>"#,
                esc(&output.name),
                output.ty,
                output.required,
                esc(&output.description)
            );
            let _ = writeln!(w, "        </chor:decisionIo>\n      </bpmn2:extensionElements>");
        }
        _ => {}
    }
    let _ = writeln!(w, "    </bpmn2:{tag}>");
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<bpmn2:definitions xmlns:bpmn2="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:chor="urn:chor:bpmn-extension:1.0" id="d">
  <bpmn2:message id="Order" name="Order">
    <bpmn2:extensionElements><chor:field name="qty" type="number" required="true"/></bpmn2:extensionElements>
  </bpmn2:message>
  <bpmn2:choreography id="Minimal">
    <bpmn2:participant id="Buyer" name="Buyer"/>
    <bpmn2:participant id="Seller" name="Seller"/>
    <bpmn2:messageFlow id="mf1" sourceRef="Buyer" targetRef="Seller" messageRef="Order"/>
    <bpmn2:startEvent id="start"/>
    <bpmn2:choreographyTask id="PlaceOrder" name="Place Order" initiatingParticipantRef="Buyer">
      <bpmn2:participantRef>Buyer</bpmn2:participantRef>
      <bpmn2:participantRef>Seller</bpmn2:participantRef>
      <bpmn2:messageFlowRef>mf1</bpmn2:messageFlowRef>
    </bpmn2:choreographyTask>
    <bpmn2:endEvent id="end"/>
    <bpmn2:sequenceFlow id="f1" sourceRef="start" targetRef="PlaceOrder"/>
    <bpmn2:sequenceFlow id="f2" sourceRef="PlaceOrder" targetRef="end"/>
  </bpmn2:choreography>
</bpmn2:definitions>"#;

    #[test]
    fn minimal_document() {
        let m = parse_choreography(MINIMAL).unwrap();
        assert_eq!(m.elements.len(), 3);
        assert_eq!(m.flows.len(), 2);
        assert_eq!(
            m.elements["PlaceOrder"].kind,
            ElementKind::ChoreographyTask { initiator: "Buyer".into(), recipient: "Seller".into(), message: "Order".into() }
        );
        assert_eq!(m.messages["Order"].fields[0].ty, ValueType::Number);
    }

    #[test]
    fn round_trip_minimal() {
        let m = parse_choreography(MINIMAL).unwrap();
        assert_eq!(parse_choreography(&serialize_choreography(&m)).unwrap(), m);
    }

    #[test]
    fn subprocess_rejected() {
        let xml = MINIMAL.replace(r#"<bpmn2:endEvent id="end"/>"#, r#"<bpmn2:endEvent id="end"/><bpmn2:subProcess id="sp1"/>"#);
        assert_eq!(
            parse_choreography(&xml).unwrap_err(),
            BpmnError::Unsupported { id: "sp1".into(), tag: "subProcess".into() }
        );
    }

    #[test]
    fn syntax_error() {
        assert!(matches!(parse_choreography("<bpmn2:definitions"), Err(BpmnError::Xml(_))));
    }

    #[test]
    fn missing_recipient() {
        let xml = MINIMAL.replace("<bpmn2:participantRef>Seller</bpmn2:participantRef>", "");
        assert!(matches!(parse_choreography(&xml), Err(BpmnError::MissingParticipant { which: "recipient", .. })));
    }

    #[test]
    fn band_order_defines_initiator() {
        let xml = MINIMAL.replace(r#" initiatingParticipantRef="Buyer""#, "");
        let m = parse_choreography(&xml).unwrap();
        assert!(matches!(&m.elements["PlaceOrder"].kind, ElementKind::ChoreographyTask { initiator, .. } if initiator == "Buyer"));
    }

    #[test]
    fn condition_text_survives_byte_exact() {
        let mut m = parse_choreography(MINIMAL).unwrap();
        let text = "  Order.qty >= 10 && Order.qty < 20 \n or \"a<b & c\"=='x' ";
        m.flows[1].condition = Some(text.to_string());
        let back = parse_choreography(&serialize_choreography(&m)).unwrap();
        assert_eq!(back.flows[1].condition.as_deref(), Some(text));
    }
}
