use std::collections::{BTreeMap, BTreeSet};

use roxmltree::{Document, Node};

use super::{topological_order, DmnError};
use crate::model::expr::parse_literal;
use crate::model::{
    Decision, DecisionTable, DmnModel, HitPolicy, InputClause, InputDataDef, OutputClause, Rule, UnaryTests, ValueType,
};

fn child<'a, 'i>(n: &Node<'a, 'i>, local: &str) -> Option<Node<'a, 'i>> {
    n.children().find(|c| c.is_element() && c.tag_name().name() == local)
}

fn children<'a, 'i: 'a>(n: &Node<'a, 'i>, local: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    n.children().filter(move |c| c.is_element() && c.tag_name().name() == local)
}

fn attr<'a>(n: &Node<'a, '_>, name: &'static str) -> Result<&'a str, DmnError> {
    n.attribute(name)
        .ok_or_else(|| DmnError::MissingAttribute { tag: n.tag_name().name().to_string(), attr: name })
}

fn text_of(n: &Node) -> String {
    child(n, "text").and_then(|t| t.text()).unwrap_or_default().trim().to_string()
}

fn type_ref(n: &Node, owner: &str) -> Result<ValueType, DmnError> {
    let raw = attr(n, "typeRef")?;
    ValueType::parse(raw).ok_or_else(|| DmnError::BadType { owner: owner.to_string(), ty: raw.to_string() })
}

fn href_id(n: &Node) -> Result<String, DmnError> {
    Ok(attr(n, "href")?.trim_start_matches('#').to_string())
}

/// Reads the DMN subset: input data, decisions with decision tables, and
/// information requirements. Namespace versions are not distinguished.
pub fn parse_dmn(xml: &str) -> Result<DmnModel, DmnError> {
    let doc = Document::parse(xml).map_err(|e| DmnError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "definitions" {
        return Err(DmnError::NotDmn);
    }

    let mut input_data = Vec::new();
    for n in children(&root, "inputData") {
        let id = attr(&n, "id")?.to_string();
        let name = n.attribute("name").unwrap_or(&id).to_string();
        let var = child(&n, "variable").ok_or_else(|| DmnError::MissingAttribute {
            tag: "inputData".into(),
            attr: "variable",
        })?;
        input_data.push(InputDataDef { ty: type_ref(&var, &id)?, id, name });
    }

    let mut decisions = Vec::new();
    for n in children(&root, "decision") {
        decisions.push(read_decision(&n)?);
    }

    let mut ids = BTreeSet::new();
    for id in input_data.iter().map(|i| &i.id).chain(decisions.iter().map(|d| &d.id)) {
        if !ids.insert(id.clone()) {
            return Err(DmnError::DuplicateId(id.clone()));
        }
    }
    for d in &decisions {
        for r in &d.required_inputs {
            if !input_data.iter().any(|i| &i.id == r) {
                return Err(DmnError::DanglingRequirement { decision: d.id.clone(), target: r.clone() });
            }
        }
        for r in &d.required_decisions {
            if !decisions.iter().any(|o| &o.id == r) {
                return Err(DmnError::DanglingRequirement { decision: d.id.clone(), target: r.clone() });
            }
        }
    }

    topological_order(&decisions)?;

    for d in &decisions {
        check_table(d, &input_data, &decisions)?;
    }

    let output_decision = match children(&root, "decisionService").find_map(|s| child(&s, "outputDecision")) {
        Some(out) => {
            let id = href_id(&out)?;
            if !decisions.iter().any(|d| d.id == id) {
                return Err(DmnError::DanglingRequirement { decision: "decisionService".into(), target: id });
            }
            id
        }
        None => {
            let required: BTreeSet<&String> = decisions.iter().flat_map(|d| d.required_decisions.iter()).collect();
            let sinks: Vec<&Decision> = decisions.iter().filter(|d| !required.contains(&d.id)).collect();
            match sinks.as_slice() {
                [one] => one.id.clone(),
                [] => return Err(DmnError::NoDecision),
                many => return Err(DmnError::AmbiguousOutput(many.iter().map(|d| d.id.clone()).collect())),
            }
        }
    };

    let dmn_id = attr(&root, "id")?.to_string();
    Ok(DmnModel {
        name: root.attribute("name").unwrap_or(&dmn_id).to_string(),
        dmn_id,
        input_data,
        decisions,
        output_decision,
    })
}

fn read_decision(n: &Node) -> Result<Decision, DmnError> {
    let id = attr(n, "id")?.to_string();
    let mut required_inputs = Vec::new();
    let mut required_decisions = Vec::new();
    for req in children(n, "informationRequirement") {
        if let Some(r) = child(&req, "requiredInput") {
            required_inputs.push(href_id(&r)?);
        }
        if let Some(r) = child(&req, "requiredDecision") {
            required_decisions.push(href_id(&r)?);
        }
    }
    let table_node = child(n, "decisionTable").ok_or_else(|| DmnError::UnsupportedDecisionLogic(id.clone()))?;

    let policy_text = table_node.attribute("hitPolicy").unwrap_or("UNIQUE");
    let hit_policy = match policy_text {
        "UNIQUE" | "U" => HitPolicy::Unique,
        "FIRST" | "F" => HitPolicy::First,
        "ANY" | "A" => HitPolicy::Any,
        other => return Err(DmnError::UnsupportedHitPolicy(other.to_string())),
    };
    if table_node.attribute("aggregation").is_some() {
        return Err(DmnError::UnsupportedHitPolicy(format!("{policy_text} with aggregation")));
    }

    let mut inputs = Vec::new();
    for input in children(&table_node, "input") {
        let expr = child(&input, "inputExpression").ok_or_else(|| DmnError::MissingAttribute {
            tag: "input".into(),
            attr: "inputExpression",
        })?;
        inputs.push(InputClause { input_ref: text_of(&expr), ty: type_ref(&expr, &id)? });
    }
    let mut outputs = Vec::new();
    for output in children(&table_node, "output") {
        outputs.push(OutputClause { name: attr(&output, "name")?.to_string(), ty: type_ref(&output, &id)? });
    }
    if outputs.is_empty() {
        return Err(DmnError::Table { decision: id, reason: "table has no output clause".into() });
    }

    let mut rules = Vec::new();
    for (idx, rule) in children(&table_node, "rule").enumerate() {
        let bad = |reason: String| DmnError::Table { decision: id.clone(), reason: format!("rule {}: {reason}", idx + 1) };
        let input_entries = children(&rule, "inputEntry")
            .map(|e| UnaryTests::parse(&text_of(&e)).map_err(|err| bad(err.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let output_entries = children(&rule, "outputEntry")
            .map(|e| parse_literal(&text_of(&e)).map_err(|err| bad(err.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        rules.push(Rule { input_entries, output_entries });
    }

    Ok(Decision {
        name: n.attribute("name").unwrap_or(&id).to_string(),
        id,
        required_inputs,
        required_decisions,
        table: DecisionTable { hit_policy, inputs, outputs, rules },
    })
}

/// Arity, literal types, and that every clause reads a variable the decision
/// actually requires.
fn check_table(d: &Decision, input_data: &[InputDataDef], decisions: &[Decision]) -> Result<(), DmnError> {
    let bad = |reason: String| DmnError::Table { decision: d.id.clone(), reason };
    let mut visible: BTreeMap<&str, ValueType> = BTreeMap::new();
    for r in &d.required_inputs {
        if let Some(i) = input_data.iter().find(|i| &i.id == r) {
            visible.insert(&i.name, i.ty);
        }
    }
    for r in &d.required_decisions {
        if let Some(sub) = decisions.iter().find(|o| &o.id == r) {
            for o in &sub.table.outputs {
                visible.insert(&o.name, o.ty);
            }
        }
    }
    for clause in &d.table.inputs {
        match visible.get(clause.input_ref.as_str()) {
            None => return Err(bad(format!("input `{}` is not a required input or decision output", clause.input_ref))),
            Some(ty) if ty.runtime_kind() != clause.ty.runtime_kind() => {
                return Err(bad(format!("input `{}` is {ty} but the clause expects {}", clause.input_ref, clause.ty)))
            }
            Some(_) => {}
        }
    }
    let t = &d.table;
    for (idx, rule) in t.rules.iter().enumerate() {
        if rule.input_entries.len() != t.inputs.len() || rule.output_entries.len() != t.outputs.len() {
            return Err(bad(format!(
                "rule {} has {}/{} entries, table has {}/{} clauses",
                idx + 1,
                rule.input_entries.len(),
                rule.output_entries.len(),
                t.inputs.len(),
                t.outputs.len()
            )));
        }
        for (entry, clause) in rule.input_entries.iter().zip(&t.inputs) {
            entry.check_type(clause.ty).map_err(|e| bad(format!("rule {}: {e}", idx + 1)))?;
        }
        for (lit, clause) in rule.output_entries.iter().zip(&t.outputs) {
            if !lit.conforms_to(clause.ty) {
                return Err(bad(format!("rule {}: output `{}` expects {}, got {}", idx + 1, clause.name, clause.ty, lit.kind())));
            }
        }
    }
    Ok(())
}
