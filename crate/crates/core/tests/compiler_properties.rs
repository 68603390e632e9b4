//! Properties of validation, compilation and hooks over random well-formed models.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use chor_core::bpmn::{parse_choreography, serialize_choreography};
use chor_core::compiler::{compile, ElementState, HookAction, HookSet, Instr};
use chor_core::conformance::enumerate_basic_paths;
use chor_core::ledger::replay;
use chor_core::model::{validate_model, ChoreographyModel};
use common::model_gen::{bundle_for, ModelGen};
use common::{apply, fresh};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generate(seed: u64, loops: bool, depth: u32) -> ChoreographyModel {
    ModelGen::new(ChaCha8Rng::seed_from_u64(seed), loops).model(depth)
}

fn enable_targets(actions: &[HookAction], out: &mut Vec<String>) {
    for a in actions {
        match a {
            HookAction::Enable { target, .. } => out.push(target.clone()),
            HookAction::Choose { branches } => branches.iter().for_each(|b| enable_targets(&b.then, out)),
            HookAction::ResetSubgraph { .. } => {}
        }
    }
}

fn hook_successors(hooks: &BTreeMap<String, HookSet>, el: &str) -> Vec<String> {
    let mut out = Vec::new();
    enable_targets(&hooks[el].on_complete, &mut out);
    out
}

/// Edges between non-gateway elements, following `succ` through gateways.
fn collapse(model: &ChoreographyModel, succ: &dyn Fn(&str) -> Vec<String>) -> BTreeSet<(String, String)> {
    let mut edges = BTreeSet::new();
    for el in model.elements.values().filter(|e| !e.kind.is_gateway()) {
        let mut stack = succ(&el.id);
        let mut seen = BTreeSet::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.clone()) {
                continue;
            }
            if model.elements[&t].kind.is_gateway() {
                stack.extend(succ(&t));
            } else {
                edges.insert((el.id.clone(), t));
            }
        }
    }
    edges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_models_compile_with_guarded_operations(seed in any::<u64>(), loops in any::<bool>()) {
        let m = generate(seed, loops, 3);
        let report = validate_model(&m);
        prop_assert!(report.is_ok(), "{:?}", report.violations);
        prop_assert_eq!(&report, &validate_model(&m));
        let program = compile(&m).unwrap();
        for spec in program.element_specs.values() {
            for body in spec.operations.values() {
                let guarded = matches!(body.first(), Some(Instr::GuardState { .. }));
                prop_assert!(guarded);
            }
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), loops in any::<bool>()) {
        let m = generate(seed, loops, 3);
        let xml = serialize_choreography(&m);
        prop_assert_eq!(parse_choreography(&xml).unwrap(), m);
    }

    #[test]
    fn loop_free_enable_edges_follow_the_flows(seed in any::<u64>()) {
        let m = generate(seed, false, 3);
        let program = compile(&m).unwrap();
        let by_hooks = collapse(&m, &|el| hook_successors(&program.hooks, el));
        let by_flows = collapse(&m, &|el| m.outgoing(el).map(|f| f.target.clone()).collect());
        prop_assert_eq!(by_hooks, by_flows);
        let resets = program.hooks.values().flat_map(|h| &h.on_complete).any(|a| matches!(a, HookAction::ResetSubgraph { .. }));
        prop_assert!(!resets);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Elements ever enabled while running every basic path are exactly those
    /// reachable through hooks from the start event. Along the way, every
    /// unfinished state offers some operation and replay reproduces the state.
    #[test]
    fn hook_closure_matches_runtime(seed in any::<u64>(), loops in any::<bool>()) {
        let m = generate(seed, loops, 3);
        let program = compile(&m).unwrap();
        let mut reach = BTreeSet::from([program.start_event.clone()]);
        let mut stack = vec![program.start_event.clone()];
        while let Some(el) = stack.pop() {
            for t in hook_successors(&program.hooks, &el) {
                if reach.insert(t.clone()) {
                    stack.push(t);
                }
            }
        }
        let bundle = bundle_for(m);
        let mut seen = BTreeSet::new();
        let paths = enumerate_basic_paths(&bundle);
        prop_assert!(!paths.is_empty());
        for path in paths {
            let (mut env, inst) = fresh(&bundle);
            let observe = |env: &chor_core::runtime::Environment, seen: &mut BTreeSet<String>| {
                let view = env.instance_view(&inst).unwrap();
                seen.extend(view.elements.keys().filter(|e| view.state_of(e) != ElementState::Disabled).cloned());
                view.completed || !view.enabled.is_empty()
            };
            prop_assert!(observe(&env, &mut seen));
            for step in &path.steps {
                apply(&mut env, &inst, step).unwrap();
                prop_assert!(observe(&env, &mut seen), "stuck after {} in {}", step.element, path.id);
            }
            prop_assert_eq!(&replay(env.ledger.log()), env.ledger.state());
        }
        prop_assert_eq!(seen, reach);
    }
}
