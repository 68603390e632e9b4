//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod model_gen;

use std::collections::BTreeMap;

use chor_core::conformance::{file_content, Step, StepKind};
use chor_core::model::{DecisionTable, ElementKind, HitPolicy, InputClause, OutputClause, Rule, UnaryTests, Value, ValueType};
use chor_core::runtime::{Environment, RuntimeError};
use chor_core::scenario::Bundle;
use rand::seq::IndexedRandom;
use rand::Rng;
use rust_decimal::Decimal;

/// Fresh environment with one instance of the bundle and every generated file stocked.
pub fn fresh(bundle: &Bundle) -> (Environment, String) {
    let (mut env, contract) = bundle.environment("acceptance").unwrap();
    for el in bundle.model.elements.values() {
        if let ElementKind::ChoreographyTask { message, .. } = &el.kind {
            for f in bundle.model.messages[message].fields.iter().filter(|f| f.ty == ValueType::File) {
                env.cas.put(&file_content(&el.id, &f.name));
            }
        }
    }
    let inst = bundle.create_instance(&mut env, &contract).unwrap();
    (env, inst)
}

pub fn apply(env: &mut Environment, inst: &str, step: &Step) -> Result<(), RuntimeError> {
    let who = env.identity(&step.invoker.membership, &step.invoker.user);
    match step.kind {
        StepKind::Message => env.send_message(&who, inst, &step.element, &step.payload).map(|_| ()),
        StepKind::Confirm => env.confirm_message(&who, inst, &step.element).map(|_| ()),
        StepKind::Brt => env.trigger_brt(&who, inst, &step.element).map(|_| ()),
    }
}

pub fn drive(env: &mut Environment, inst: &str, steps: &[Step]) {
    for s in steps {
        apply(env, inst, s).unwrap_or_else(|e| panic!("{} {:?}: {e}", s.element, s.kind));
    }
}

// ---- randomized decision tables with an independent reference evaluator ----

/// Structured input entry; the reference oracle evaluates this form directly,
/// the engine evaluates its rendered text.
#[derive(Debug, Clone)]
pub enum Cell {
    Any,
    Eq(Value),
    Cmp(&'static str, i64),
    Between { lo: i64, hi: i64, lo_closed: bool, hi_closed: bool },
    OneOf(Vec<Cell>),
    NoneOf(Vec<Cell>),
}

fn lit(v: &Value) -> String {
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => format!("\"{s}\""),
    }
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Any => "-".into(),
            Cell::Eq(v) => lit(v),
            Cell::Cmp(op, n) => format!("{op} {n}"),
            Cell::Between { lo, hi, lo_closed, hi_closed } => {
                format!("{}{lo}..{hi}{}", if *lo_closed { "[" } else { "(" }, if *hi_closed { "]" } else { ")" })
            }
            Cell::OneOf(cs) => cs.iter().map(Cell::render).collect::<Vec<_>>().join(", "),
            Cell::NoneOf(cs) => format!("not({})", cs.iter().map(Cell::render).collect::<Vec<_>>().join(", ")),
        }
    }

    pub fn holds(&self, v: &Value) -> bool {
        match (self, v) {
            (Cell::Any, _) => true,
            (Cell::Eq(a), b) => a == b,
            (Cell::Cmp(op, n), Value::Number(x)) => {
                let n = Decimal::from(*n);
                match *op {
                    "<" => *x < n,
                    "<=" => *x <= n,
                    ">" => *x > n,
                    ">=" => *x >= n,
                    "!=" => *x != n,
                    _ => unreachable!(),
                }
            }
            (Cell::Between { lo, hi, lo_closed, hi_closed }, Value::Number(x)) => {
                let (lo, hi) = (Decimal::from(*lo), Decimal::from(*hi));
                (if *lo_closed { *x >= lo } else { *x > lo }) && (if *hi_closed { *x <= hi } else { *x < hi })
            }
            (Cell::OneOf(cs), v) => cs.iter().any(|c| c.holds(v)),
            (Cell::NoneOf(cs), v) => !cs.iter().any(|c| c.holds(v)),
            _ => false,
        }
    }
}

const WORDS: [&str; 4] = ["a", "b", "c", "d"];

fn simple_cell(rng: &mut impl Rng, ty: ValueType) -> Cell {
    match ty {
        ValueType::Number => match rng.random_range(0..3) {
            0 => Cell::Eq(Value::number(rng.random_range(-4..=4))),
            1 => Cell::Cmp(*["<", "<=", ">", ">=", "!="].choose(rng).unwrap(), rng.random_range(-4..=4)),
            _ => {
                let lo = rng.random_range(-4..=3);
                Cell::Between { lo, hi: rng.random_range(lo..=4), lo_closed: rng.random(), hi_closed: rng.random() }
            }
        },
        ValueType::String => Cell::Eq(Value::string(*WORDS.choose(rng).unwrap())),
        _ => Cell::Eq(Value::Bool(rng.random())),
    }
}

pub fn random_cell(rng: &mut impl Rng, ty: ValueType) -> Cell {
    match rng.random_range(0..10) {
        0..=2 => Cell::Any,
        3..=6 => simple_cell(rng, ty),
        7 | 8 => Cell::OneOf((0..rng.random_range(2..=3)).map(|_| simple_cell(rng, ty)).collect()),
        _ => Cell::NoneOf((0..rng.random_range(1..=2)).map(|_| simple_cell(rng, ty)).collect()),
    }
}

pub fn random_value(rng: &mut impl Rng, ty: ValueType) -> Value {
    match ty {
        ValueType::Number => Value::number(rng.random_range(-6..=6)),
        ValueType::String => Value::string(*WORDS.choose(rng).unwrap()),
        _ => Value::Bool(rng.random()),
    }
}

/// A random table in both forms: the engine's and the oracle's.
pub struct RandomTable {
    pub table: DecisionTable,
    pub cells: Vec<Vec<Cell>>,
    pub input_types: Vec<ValueType>,
}

pub fn random_table(rng: &mut impl Rng) -> RandomTable {
    let types = [ValueType::Number, ValueType::String, ValueType::Boolean];
    let hit_policy = *[HitPolicy::Unique, HitPolicy::First, HitPolicy::Any].choose(rng).unwrap();
    let input_types: Vec<ValueType> = (0..rng.random_range(1..=3)).map(|_| *types.choose(rng).unwrap()).collect();
    let inputs = input_types.iter().enumerate().map(|(i, t)| InputClause { input_ref: format!("in{i}"), ty: *t }).collect();
    let outputs = vec![OutputClause { name: "out".into(), ty: ValueType::String }];
    let mut cells = Vec::new();
    let mut rules = Vec::new();
    for _ in 0..rng.random_range(1..=6) {
        let row: Vec<Cell> = input_types.iter().map(|t| random_cell(rng, *t)).collect();
        let input_entries = row.iter().map(|c| UnaryTests::parse(&c.render()).unwrap()).collect();
        let output_entries = vec![Value::string(*["x", "y", "z"].choose(rng).unwrap())];
        rules.push(Rule { input_entries, output_entries });
        cells.push(row);
    }
    RandomTable { table: DecisionTable { hit_policy, inputs, outputs, rules }, cells, input_types }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Output(Value),
    NoMatch,
    Multiple(Vec<usize>),
    Conflict(Vec<usize>),
}

/// Brute force: test every rule, then resolve by hit policy.
pub fn reference_eval(t: &RandomTable, inputs: &[Value]) -> Expected {
    let matched: Vec<usize> = t
        .cells
        .iter()
        .enumerate()
        .filter(|(_, row)| row.iter().zip(inputs).all(|(c, v)| c.holds(v)))
        .map(|(i, _)| i)
        .collect();
    let out = |i: usize| t.table.rules[i].output_entries[0].clone();
    if matched.is_empty() {
        return Expected::NoMatch;
    }
    match t.table.hit_policy {
        HitPolicy::First => Expected::Output(out(matched[0])),
        HitPolicy::Unique if matched.len() == 1 => Expected::Output(out(matched[0])),
        HitPolicy::Unique => Expected::Multiple(matched.iter().map(|i| i + 1).collect()),
        HitPolicy::Any => {
            if matched.iter().all(|i| out(*i) == out(matched[0])) {
                Expected::Output(out(matched[0]))
            } else {
                Expected::Conflict(matched.iter().map(|i| i + 1).collect())
            }
        }
    }
}

pub fn engine_eval(t: &RandomTable, inputs: &[Value]) -> Expected {
    use chor_core::dmn::{evaluate_table, DecisionError};
    let named: BTreeMap<String, Value> = inputs.iter().enumerate().map(|(i, v)| (format!("in{i}"), v.clone())).collect();
    match evaluate_table(&t.table, &named) {
        Ok(o) => Expected::Output(o["out"].clone()),
        Err(DecisionError::NoMatch) => Expected::NoMatch,
        Err(DecisionError::MultipleMatches(v)) => Expected::Multiple(v),
        Err(DecisionError::Conflict(v)) => Expected::Conflict(v),
        Err(e) => panic!("unexpected engine error {e}"),
    }
}
