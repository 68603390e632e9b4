//! Decision service: DMN reading, decision-table evaluation under the UNIQUE,
//! FIRST and ANY hit policies, and decision-requirement-graph evaluation.

mod parse;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::sha256_hex;
use crate::model::{Decision, DecisionTable, DmnModel, ExprError, HitPolicy, Value};

pub use parse::parse_dmn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DmnError {
    #[error("XML syntax error: {0}")]
    Xml(String),
    #[error("document root is not a DMN definitions element")]
    NotDmn,
    #[error("element <{tag}> is missing `{attr}`")]
    MissingAttribute { tag: String, attr: &'static str },
    #[error("`{owner}` has unknown type `{ty}`")]
    BadType { owner: String, ty: String },
    #[error("unsupported hit policy {0}")]
    UnsupportedHitPolicy(String),
    #[error("decision `{0}` has no decision table")]
    UnsupportedDecisionLogic(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("decision `{decision}` requires unknown `{target}`")]
    DanglingRequirement { decision: String, target: String },
    #[error("decision requirements form a cycle through {0:?}")]
    CyclicRequirements(Vec<String>),
    #[error("model declares no decision")]
    NoDecision,
    #[error("no single output decision; candidates {0:?}")]
    AmbiguousOutput(Vec<String>),
    #[error("decision `{decision}`: {reason}")]
    Table { decision: String, reason: String },
}

/// Evaluation failures. Rule numbers are 1-based, matching table rows.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionError {
    #[error("no rule matched")]
    NoMatch,
    #[error("UNIQUE table matched rules {0:?}")]
    MultipleMatches(Vec<usize>),
    #[error("ANY table matched rules {0:?} with different outputs")]
    Conflict(Vec<usize>),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("{0}")]
    Type(String),
    #[error("decision `{decision}`: {source}")]
    InDecision {
        decision: String,
        #[source]
        source: Box<DecisionError>,
    },
}

impl From<ExprError> for DecisionError {
    fn from(e: ExprError) -> Self {
        DecisionError::Type(e.to_string())
    }
}

/// Evaluates one table against named inputs.
pub fn evaluate_table(table: &DecisionTable, inputs: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, DecisionError> {
    let mut values = Vec::with_capacity(table.inputs.len());
    for clause in &table.inputs {
        let v = inputs
            .get(&clause.input_ref)
            .ok_or_else(|| DecisionError::MissingInput(clause.input_ref.clone()))?;
        if !v.conforms_to(clause.ty) {
            return Err(DecisionError::Type(format!(
                "input `{}` expects {}, got {}",
                clause.input_ref,
                clause.ty,
                v.kind()
            )));
        }
        values.push(v);
    }

    let mut matched = Vec::new();
    for (idx, rule) in table.rules.iter().enumerate() {
        let mut all = true;
        for (entry, v) in rule.input_entries.iter().zip(&values) {
            if !entry.matches(v)? {
                all = false;
                break;
            }
        }
        if all {
            matched.push(idx);
            if table.hit_policy == HitPolicy::First {
                break;
            }
        }
    }

    let chosen = match (table.hit_policy, matched.as_slice()) {
        (_, []) => return Err(DecisionError::NoMatch),
        (HitPolicy::First, [first, ..]) => *first,
        (HitPolicy::Unique, [only]) => *only,
        (HitPolicy::Unique, many) => return Err(DecisionError::MultipleMatches(many.iter().map(|i| i + 1).collect())),
        (HitPolicy::Any, [first, rest @ ..]) => {
            let out = &table.rules[*first].output_entries;
            if rest.iter().any(|i| &table.rules[*i].output_entries != out) {
                return Err(DecisionError::Conflict(matched.iter().map(|i| i + 1).collect()));
            }
            *first
        }
    };
    Ok(table
        .outputs
        .iter()
        .zip(&table.rules[chosen].output_entries)
        .map(|(clause, v)| (clause.name.clone(), v.clone()))
        .collect())
}

/// One evaluated decision, as recorded for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub dmn_id: String,
    pub decision_id: String,
    pub inputs: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionResult {
    pub outputs: BTreeMap<String, Value>,
    pub trace: Vec<DecisionTrace>,
}

/// Decisions ordered so every decision follows the decisions it requires.
/// Ties break on id, so storage order never matters.
pub(crate) fn topological_order(decisions: &[Decision]) -> Result<Vec<&Decision>, DmnError> {
    let by_id: BTreeMap<&str, &Decision> = decisions.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut pending: BTreeMap<&str, usize> = decisions
        .iter()
        .map(|d| (d.id.as_str(), d.required_decisions.iter().filter(|r| by_id.contains_key(r.as_str())).count()))
        .collect();
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();
    let mut out = Vec::with_capacity(decisions.len());
    while let Some(id) = ready.pop_first() {
        pending.remove(id);
        out.push(by_id[id]);
        for d in decisions {
            if d.required_decisions.iter().any(|r| r == id) {
                if let Some(n) = pending.get_mut(d.id.as_str()) {
                    *n -= 1;
                    if *n == 0 {
                        ready.insert(&d.id);
                    }
                }
            }
        }
    }
    if !pending.is_empty() {
        return Err(DmnError::CyclicRequirements(pending.keys().map(|s| s.to_string()).collect()));
    }
    Ok(out)
}

/// Evaluates the decisions the output decision depends on, feeding each
/// decision's outputs into its dependents.
pub fn evaluate_drd(model: &DmnModel, input_data: &BTreeMap<String, Value>) -> Result<DecisionResult, DecisionError> {
    for def in &model.input_data {
        match input_data.get(&def.name) {
            None => return Err(DecisionError::MissingInput(def.name.clone())),
            Some(v) if !v.conforms_to(def.ty) => {
                return Err(DecisionError::Type(format!("input `{}` expects {}, got {}", def.name, def.ty, v.kind())))
            }
            Some(_) => {}
        }
    }
    let order = topological_order(&model.decisions).map_err(|e| DecisionError::Type(e.to_string()))?;

    let mut needed = BTreeSet::from([model.output_decision.as_str()]);
    for d in order.iter().rev() {
        if needed.contains(d.id.as_str()) {
            needed.extend(d.required_decisions.iter().map(String::as_str));
        }
    }

    let mut decided: BTreeMap<&str, BTreeMap<String, Value>> = BTreeMap::new();
    let mut trace = Vec::new();
    for d in order.into_iter().filter(|d| needed.contains(d.id.as_str())) {
        let mut scope = BTreeMap::new();
        for r in &d.required_inputs {
            if let Some(def) = model.input(r) {
                scope.insert(def.name.clone(), input_data[&def.name].clone());
            }
        }
        for r in &d.required_decisions {
            if let Some(outs) = decided.get(r.as_str()) {
                scope.extend(outs.clone());
            }
        }
        let outputs = evaluate_table(&d.table, &scope)
            .map_err(|e| DecisionError::InDecision { decision: d.id.clone(), source: Box::new(e) })?;
        let read: BTreeMap<String, Value> = d
            .table
            .inputs
            .iter()
            .filter_map(|c| scope.get(&c.input_ref).map(|v| (c.input_ref.clone(), v.clone())))
            .collect();
        trace.push(DecisionTrace {
            dmn_id: model.dmn_id.clone(),
            decision_id: d.id.clone(),
            inputs: read,
            outputs: outputs.clone(),
        });
        decided.insert(&d.id, outputs);
    }
    let outputs = decided.remove(model.output_decision.as_str()).unwrap_or_default();
    Ok(DecisionResult { outputs, trace })
}

/// Integrity digest of DMN content: SHA-256 over the exact bytes.
pub fn dmn_digest(xml: impl AsRef<[u8]>) -> String {
    sha256_hex(xml)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputClause, OutputClause, Rule, UnaryTests, ValueType};

    const TWO_RULE: &str = r##"<definitions xmlns="https://www.omg.org/spec/DMN/20191111/MODEL/" id="level" name="Level">
  <inputData id="in_x" name="x"><variable name="x" typeRef="number"/></inputData>
  <decision id="level" name="Level">
    <informationRequirement><requiredInput href="#in_x"/></informationRequirement>
    <decisionTable hitPolicy="UNIQUE">
      <input id="i1"><inputExpression typeRef="number"><text>x</text></inputExpression></input>
      <output id="o1" name="level" typeRef="string"/>
      <rule><inputEntry><text>&lt; 10</text></inputEntry><outputEntry><text>"low"</text></outputEntry></rule>
      <rule><inputEntry><text>&gt;= 10</text></inputEntry><outputEntry><text>"high"</text></outputEntry></rule>
    </decisionTable>
  </decision>
</definitions>"##;

    fn x(n: i64) -> BTreeMap<String, Value> {
        BTreeMap::from([("x".to_string(), Value::number(n))])
    }

    #[test]
    fn parses_single_decision() {
        let m = parse_dmn(TWO_RULE).unwrap();
        assert_eq!(m.decisions.len(), 1);
        assert_eq!(m.output_decision, "level");
        assert_eq!(m.primary_output().unwrap().name, "level");
    }

    #[test]
    fn unique_table_and_boundary() {
        let m = parse_dmn(TWO_RULE).unwrap();
        let t = &m.decisions[0].table;
        assert_eq!(evaluate_table(t, &x(3)).unwrap()["level"], Value::string("low"));
        assert_eq!(evaluate_table(t, &x(10)).unwrap()["level"], Value::string("high"));
    }

    #[test]
    fn single_decision_drd_matches_table() {
        let m = parse_dmn(TWO_RULE).unwrap();
        for n in [-5, 0, 9, 10, 11] {
            let drd = evaluate_drd(&m, &x(n)).unwrap();
            assert_eq!(drd.outputs, evaluate_table(&m.decisions[0].table, &x(n)).unwrap());
            assert_eq!(drd.trace.len(), 1);
            assert_eq!(drd.trace[0].dmn_id, "level");
        }
    }

    #[test]
    fn missing_input_named() {
        let m = parse_dmn(TWO_RULE).unwrap();
        assert_eq!(evaluate_drd(&m, &BTreeMap::new()).unwrap_err(), DecisionError::MissingInput("x".into()));
    }

    #[test]
    fn no_coercion_of_number_strings() {
        let m = parse_dmn(TWO_RULE).unwrap();
        let inputs = BTreeMap::from([("x".to_string(), Value::string("3"))]);
        assert!(matches!(evaluate_drd(&m, &inputs), Err(DecisionError::Type(_))));
    }

    #[test]
    fn collect_policy_rejected() {
        let xml = TWO_RULE.replace("UNIQUE", "COLLECT");
        assert_eq!(parse_dmn(&xml).unwrap_err(), DmnError::UnsupportedHitPolicy("COLLECT".into()));
    }

    #[test]
    fn dangling_and_cyclic_requirements() {
        let xml = TWO_RULE.replace("#in_x", "#nope");
        assert!(matches!(parse_dmn(&xml), Err(DmnError::DanglingRequirement { .. })));
        let cyc = r##"<definitions id="c">
  <decision id="a"><informationRequirement><requiredDecision href="#b"/></informationRequirement>
    <decisionTable><output name="a" typeRef="string"/></decisionTable></decision>
  <decision id="b"><informationRequirement><requiredDecision href="#a"/></informationRequirement>
    <decisionTable><output name="b" typeRef="string"/></decisionTable></decision>
</definitions>"##;
        assert!(matches!(parse_dmn(cyc), Err(DmnError::CyclicRequirements(_))));
    }

    fn any_table() -> DecisionTable {
        DecisionTable {
            hit_policy: HitPolicy::Any,
            inputs: vec![InputClause { input_ref: "x".into(), ty: ValueType::Number }],
            outputs: vec![OutputClause { name: "y".into(), ty: ValueType::Number }],
            rules: vec![
                Rule { input_entries: vec![UnaryTests::parse("[0..10]").unwrap()], output_entries: vec![Value::number(7)] },
                Rule { input_entries: vec![UnaryTests::parse("[5..20]").unwrap()], output_entries: vec![Value::number(7)] },
                Rule { input_entries: vec![UnaryTests::parse("> 15").unwrap()], output_entries: vec![Value::number(8)] },
            ],
        }
    }

    #[test]
    fn any_policy_agreement_and_conflict() {
        let t = any_table();
        assert_eq!(evaluate_table(&t, &x(7)).unwrap()["y"], Value::number(7));
        assert_eq!(evaluate_table(&t, &x(17)).unwrap_err(), DecisionError::Conflict(vec![2, 3]));
        assert_eq!(evaluate_table(&t, &x(-1)).unwrap_err(), DecisionError::NoMatch);
    }

    #[test]
    fn first_policy_and_no_match() {
        let mut t = any_table();
        t.hit_policy = HitPolicy::First;
        assert_eq!(evaluate_table(&t, &x(17)).unwrap()["y"], Value::number(7));
        assert_eq!(evaluate_table(&t, &x(-1)).unwrap_err(), DecisionError::NoMatch);
        t.hit_policy = HitPolicy::Unique;
        assert_eq!(evaluate_table(&t, &x(7)).unwrap_err(), DecisionError::MultipleMatches(vec![1, 2]));
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(dmn_digest(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
