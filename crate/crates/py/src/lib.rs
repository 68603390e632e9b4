//! Python module `chor_py`. Structured values cross the boundary as JSON,
//! so Python sees plain dicts and lists; failures raise `ChorError`.

use std::collections::BTreeMap;
use std::sync::Arc;

use chor_core::bpmn::parse_choreography;
use chor_core::compiler::{compile, emit_interface, pretty_print, ContractProgram};
use chor_core::conformance::{build_suite, run_conformance};
use chor_core::dmn::{dmn_digest, evaluate_drd, parse_dmn};
use chor_core::ledger::{export_jsonl, parse_jsonl, LogFilter, MembershipSelector};
use chor_core::model::{validate_model, Value};
use chor_core::offchain::Cas;
use chor_core::runtime::{Consortium, Environment};
use chor_core::scenario::Bundle;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde_json::{json, Map, Value as Json};

create_exception!(chor_py, ChorError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    ChorError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &Json) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Json> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn from_py_as<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    serde_json::from_value(from_py(obj)?).map_err(err)
}

fn ser(v: impl serde::Serialize) -> Json {
    serde_json::to_value(v).expect("values serialize")
}

/// Parses a BPMN choreography into its model.
#[pyfunction]
fn parse_model<'py>(py: Python<'py>, xml: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ser(parse_choreography(xml).map_err(err)?))
}

/// Modelling-rule violations of a choreography; empty when valid.
#[pyfunction]
fn validate<'py>(py: Python<'py>, xml: &str) -> PyResult<Bound<'py, PyAny>> {
    let report = validate_model(&parse_choreography(xml).map_err(err)?);
    to_py(py, &ser(report.violations))
}

/// A compiled contract program.
#[pyclass(frozen, name = "Program")]
struct PyProgram {
    program: ContractProgram,
}

#[pymethods]
impl PyProgram {
    #[getter]
    fn model_id(&self) -> String {
        self.program.model_id.clone()
    }

    #[getter]
    fn digest(&self) -> String {
        self.program.digest()
    }

    fn interface<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &emit_interface(&self.program))
    }

    fn pretty(&self) -> String {
        pretty_print(&self.program)
    }

    fn __repr__(&self) -> String {
        format!("Program({}, {})", self.program.model_id, &self.program.digest()[..12])
    }
}

#[pyfunction(name = "compile")]
fn compile_model(xml: &str) -> PyResult<PyProgram> {
    let model = parse_choreography(xml).map_err(err)?;
    Ok(PyProgram { program: compile(&model).map_err(err)? })
}

/// Evaluates a decision model on `inputs`; returns outputs, trace and digest.
#[pyfunction]
fn evaluate_dmn<'py>(py: Python<'py>, xml: &str, inputs: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let model = parse_dmn(xml).map_err(err)?;
    let raw: BTreeMap<String, Json> = from_py_as(inputs)?;
    let data = raw
        .iter()
        .map(|(k, v)| Value::from_json(v).map(|v| (k.clone(), v)).map_err(|e| err(format!("input `{k}`: {e}"))))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let result = evaluate_drd(&model, &data).map_err(err)?;
    to_py(py, &json!({ "outputs": result.outputs, "trace": result.trace, "digest": dmn_digest(xml) }))
}

/// Checks an exported JSON-lines log; returns its length or raises with the
/// first broken index.
#[pyfunction]
fn verify_log(text: &str) -> PyResult<usize> {
    parse_jsonl(text).map(|log| log.len()).map_err(err)
}

/// Builds a labelled suite for the scenario in `dir` and runs the engine on it.
#[pyfunction]
#[pyo3(signature = (dir, paths = 400, seed = 0))]
fn conformance<'py>(py: Python<'py>, dir: &str, paths: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let bundle = Bundle::load(dir).map_err(err)?;
    let suite = build_suite(&bundle, paths, seed);
    let report = run_conformance(&bundle, &suite);
    let mut out = ser(&report);
    out["accuracy"] = json!(report.rate());
    to_py(py, &out)
}

/// An execution environment: ledger, content store, message bus and oracle
/// executor for one consortium.
#[pyclass(unsendable, name = "Environment")]
struct PyEnvironment {
    env: Environment,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    fn new(env_id: &str, consortium: &Bound<'_, PyAny>) -> PyResult<PyEnvironment> {
        let c: Consortium = from_py_as(consortium)?;
        Ok(PyEnvironment { env: Environment::new(env_id, c, Arc::new(Cas::in_memory())).map_err(err)? })
    }

    /// Deploys a compiled program; returns the contract name.
    fn deploy(&mut self, program: &PyProgram) -> String {
        self.env.deploy(program.program.clone())
    }

    #[pyo3(signature = (member, user, contract, bindings, dmn = None))]
    fn create_instance(
        &mut self,
        member: &str,
        user: &str,
        contract: &str,
        bindings: &Bound<'_, PyAny>,
        dmn: Option<BTreeMap<String, String>>,
    ) -> PyResult<String> {
        let roles: BTreeMap<String, MembershipSelector> = from_py_as(bindings)?;
        let who = self.env.identity(member, user);
        self.env.create_instance(&who, contract, &roles, &dmn.unwrap_or_default()).map_err(err)
    }

    fn send_message<'py>(
        &mut self,
        py: Python<'py>,
        member: &str,
        user: &str,
        instance: &str,
        task: &str,
        payload: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let Json::Object(map) = from_py(payload)? else { return Err(err("payload must be a dict")) };
        let who = self.env.identity(member, user);
        to_py(py, &ser(self.env.send_message(&who, instance, task, &map).map_err(err)?))
    }

    fn confirm_message<'py>(&mut self, py: Python<'py>, member: &str, user: &str, instance: &str, task: &str) -> PyResult<Bound<'py, PyAny>> {
        let who = self.env.identity(member, user);
        to_py(py, &ser(self.env.confirm_message(&who, instance, task).map_err(err)?))
    }

    fn trigger_brt<'py>(&mut self, py: Python<'py>, member: &str, user: &str, instance: &str, brt: &str) -> PyResult<Bound<'py, PyAny>> {
        let who = self.env.identity(member, user);
        to_py(py, &ser(self.env.trigger_brt(&who, instance, brt).map_err(err)?))
    }

    /// The payload bytes as the member can read them.
    fn fetch_payload(&self, member: &str, user: &str, instance: &str, task: &str) -> PyResult<Vec<u8>> {
        let who = self.env.identity(member, user);
        self.env.fetch_payload(&who, instance, task).map_err(err)
    }

    fn instance_view<'py>(&self, py: Python<'py>, instance: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &ser(self.env.instance_view(instance).map_err(err)?))
    }

    #[pyo3(signature = (instance = None, element = None, op = None, invoker = None))]
    fn audit<'py>(
        &self,
        py: Python<'py>,
        instance: Option<String>,
        element: Option<String>,
        op: Option<String>,
        invoker: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let filter = LogFilter { instance_id: instance, element_id: element, op, invoker };
        to_py(py, &ser(self.env.ledger.query_log(&filter)))
    }

    /// The committed log as canonical JSON lines.
    fn export_log(&self) -> String {
        export_jsonl(self.env.ledger.log())
    }

    /// Puts bytes into the content store; returns their CID.
    fn put_content(&self, bytes: Vec<u8>) -> PyResult<String> {
        self.env.cas.try_put(&bytes).map_err(err)
    }
}

/// A scenario bundle: the environment with the contract deployed, the
/// contract name, and the role bindings and decision models for instances.
#[pyfunction]
fn load_scenario<'py>(py: Python<'py>, dir: &str) -> PyResult<(PyEnvironment, String, Bound<'py, PyAny>, BTreeMap<String, String>)> {
    let bundle = Bundle::load(dir).map_err(err)?;
    let (env, contract) = bundle.environment(&bundle.name).map_err(err)?;
    let mut roles = Map::new();
    for (k, v) in &bundle.bindings.roles {
        roles.insert(k.clone(), ser(v));
    }
    Ok((PyEnvironment { env }, contract, to_py(py, &Json::Object(roles))?, bundle.dmn))
}

#[pymodule]
fn chor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ChorError", m.py().get_type::<ChorError>())?;
    m.add_class::<PyProgram>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_function(wrap_pyfunction!(parse_model, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(compile_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dmn, m)?)?;
    m.add_function(wrap_pyfunction!(verify_log, m)?)?;
    m.add_function(wrap_pyfunction!(conformance, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    Ok(())
}
