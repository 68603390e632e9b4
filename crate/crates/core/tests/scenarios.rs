//! Shape checks on every bundled scenario.

use chor_core::bpmn::parse_choreography;
use chor_core::compiler::compile;
use chor_core::model::ElementKind;
use chor_core::scenario::{builtin_dir, load_all};

const FLOW_NODES: [&str; 7] = [
    "startEvent",
    "endEvent",
    "choreographyTask",
    "businessRuleTask",
    "exclusiveGateway",
    "parallelGateway",
    "eventBasedGateway",
];

#[test]
fn parser_keeps_every_flow_node() {
    for b in load_all(builtin_dir()).unwrap() {
        let doc = roxmltree::Document::parse(&b.bpmn).unwrap();
        let tags = doc.descendants().filter(|n| n.is_element() && FLOW_NODES.contains(&n.tag_name().name())).count();
        let model = parse_choreography(&b.bpmn).unwrap();
        assert_eq!(model.elements.len(), tags, "{}", b.name);
    }
}

#[test]
fn interface_has_two_operations_per_task_and_decision() {
    for b in load_all(builtin_dir()).unwrap() {
        let program = compile(&b.model).unwrap();
        let units = b
            .model
            .elements
            .values()
            .filter(|e| matches!(e.kind, ElementKind::ChoreographyTask { .. } | ElementKind::BusinessRuleTask { .. }))
            .count();
        assert_eq!(program.interface_description.len(), 2 * units, "{}", b.name);
        if b.name == "supply-chain" {
            assert_eq!(program.interface_description.len(), 28);
        }
    }
}
