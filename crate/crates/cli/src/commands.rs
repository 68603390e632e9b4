use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chor_core::bpmn::parse_choreography;
use chor_core::compiler::{compile, emit_interface, pretty_print, CompileError};
use chor_core::conformance::{build_suite_with, run_conformance, run_trace, AddMode, Trace, TraceOracle};
use chor_core::dmn::{evaluate_drd, parse_dmn};
use chor_core::hash::sha256_hex;
use chor_core::ledger::{export_jsonl, parse_jsonl, Identity, LogFilter, MembershipSelector};
use chor_core::model::{validate_model, ChoreographyModel, Value};
use chor_core::runtime::{state_key, Consortium, Environment, MessageRecord};
use chor_core::scenario::Bundle;
use chor_core::store::EnvStore;
use serde_json::{json, Value as Json};

use crate::error::CliError;
use crate::{AddArg, Cli, Command, DmnCommand, EnvCommand, InstanceCommand, InvokeOp, Who};

/// What a command prints: text for people, JSON for `--json`.
pub struct Output {
    pub text: String,
    pub json: Json,
    /// Exit status for results that are not errors but still a failed check.
    pub status: u8,
}

impl Output {
    fn new(text: impl Into<String>, json: Json) -> Output {
        Output { text: text.into(), json, status: 0 }
    }

    fn failing_if(mut self, failed: bool) -> Output {
        self.status = u8::from(failed);
        self
    }

    /// Write errors are ignored, so a closed pipe ends output quietly.
    pub fn print(&self, json: bool) {
        let mut out = std::io::stdout().lock();
        let _ = if json {
            writeln!(out, "{}", serde_json::to_string_pretty(&self.json).expect("JSON"))
        } else if !self.text.is_empty() {
            writeln!(out, "{}", self.text.trim_end())
        } else {
            Ok(())
        };
    }
}

type Res = Result<Output, CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

/// A JSON argument given inline or as `@file`.
fn json_arg(arg: &str, what: &str) -> Result<Json, CliError> {
    let text = match arg.strip_prefix('@') {
        Some(path) => read(Path::new(path))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

fn json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::failed("BadInput", format!("{}: {e}", path.display())))
}

fn to_json(v: impl serde::Serialize) -> Json {
    serde_json::to_value(v).expect("outputs serialize")
}

fn load_model(path: &Path) -> Result<ChoreographyModel, CliError> {
    Ok(parse_choreography(&read(path)?)?)
}

/// A `.bpmn` file, or a scenario directory's model.
fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.bpmn")
    } else {
        path.to_path_buf()
    }
}

fn compile_model(model: &ChoreographyModel) -> Result<chor_core::compiler::ContractProgram, CliError> {
    compile(model).map_err(|e| match e {
        CompileError::Invalid(report) => CliError::Failed {
            code: "InvalidModel",
            message: format!("model has {} violation(s)", report.violations.len()),
            detail: Some(to_json(&report.violations)),
        },
        other => CliError::failed("InvalidModel", other.to_string()),
    })
}

fn identity(env: &Environment, who: &Who) -> Result<Identity, CliError> {
    let Some(attrs) = &who.attributes else { return Ok(env.identity(&who.member, &who.user)) };
    let Json::Object(map) = json_arg(attrs, "--attributes")? else {
        return Err(CliError::Usage("--attributes must be a JSON object".into()));
    };
    let mut id = Identity::new(&who.member, &who.user);
    for (k, v) in map {
        let v = Value::from_json(&v).map_err(|e| CliError::Usage(format!("--attributes `{k}`: {e}")))?;
        id.attributes.insert(k, v);
    }
    Ok(id)
}

fn open_store(cli: &Cli) -> Result<EnvStore, CliError> {
    Ok(EnvStore::open(&cli.store)?)
}

pub fn run(cli: Cli) -> Res {
    match &cli.command {
        Command::Parse { file } => parse(file),
        Command::Validate { file } => validate(file),
        Command::Compile { file, interface } => compile_cmd(file, *interface),
        Command::Dmn(DmnCommand::Eval { file, inputs }) => dmn_eval(file, inputs),
        Command::Env(cmd) => env_cmd(&cli, cmd),
        Command::Deploy { env, model } => deploy(&cli, env, model),
        Command::Instance(cmd) => instance_cmd(&cli, cmd),
        Command::Invoke { env, instance, element, op, who, payload } => {
            invoke(&cli, env, instance, element, *op, who, payload.as_deref())
        }
        Command::RunTrace { scenario, trace } => run_trace_cmd(scenario, trace),
        Command::Conformance { scenario, paths, seed, add, report } => {
            conformance(scenario, *paths, *seed, *add, report.as_deref())
        }
        Command::Audit { env, instance, element, op, invoker } => {
            let filter =
                LogFilter { instance_id: instance.clone(), element_id: element.clone(), op: op.clone(), invoker: invoker.clone() };
            audit(&cli, env, &filter)
        }
        Command::ChainVerify { file } => chain_verify(file),
        Command::Serve { port, bind, scenarios } => serve(&cli, SocketAddr::new(*bind, *port), scenarios.clone()),
    }
}

fn parse(file: &Path) -> Res {
    let model = load_model(file)?;
    let c = model.census();
    let text = format!(
        "{} ({}): {} elements, {} flows, {} tasks, {} messages, {} gateways, {} business rule tasks",
        model.model_id,
        model.name,
        model.elements.len(),
        model.flows.len(),
        c.tasks,
        c.messages,
        c.gateways,
        c.brts
    );
    Ok(Output::new(text, to_json(&model)))
}

fn validate(file: &Path) -> Res {
    let report = validate_model(&load_model(file)?);
    let mut text = String::new();
    for v in &report.violations {
        let _ = writeln!(text, "{:?} {}: {}", v.code, v.element.as_deref().unwrap_or("-"), v.message);
    }
    if report.is_ok() {
        text.push_str("valid");
    }
    let json = json!({ "valid": report.is_ok(), "violations": report.violations });
    Ok(Output::new(text, json).failing_if(!report.is_ok()))
}

fn compile_cmd(file: &Path, interface_only: bool) -> Res {
    let program = compile_model(&load_model(file)?)?;
    let interface = emit_interface(&program);
    if interface_only {
        let text = serde_json::to_string_pretty(&interface).expect("JSON");
        return Ok(Output::new(text, interface));
    }
    let json = json!({ "digest": program.digest(), "program": program, "interface": interface });
    Ok(Output::new(pretty_print(&program), json))
}

fn dmn_eval(file: &Path, inputs: &str) -> Res {
    let xml = read(file)?;
    let model = parse_dmn(&xml)?;
    let Json::Object(raw) = json_arg(inputs, "--inputs")? else {
        return Err(CliError::Usage("--inputs must be a JSON object".into()));
    };
    let mut data = BTreeMap::new();
    for (k, v) in raw {
        data.insert(k.clone(), Value::from_json(&v).map_err(|e| CliError::Usage(format!("--inputs `{k}`: {e}")))?);
    }
    let result = evaluate_drd(&model, &data)?;
    let text = result.outputs.iter().map(|(k, v)| format!("{k} = {}", v.to_json())).collect::<Vec<_>>().join("\n");
    let json = json!({ "dmnId": model.dmn_id, "digest": chor_core::dmn::dmn_digest(&xml), "outputs": result.outputs, "trace": result.trace });
    Ok(Output::new(text, json))
}

/// A consortium file, or a bindings file with a `consortium` member.
fn load_consortium(path: &Path) -> Result<Consortium, CliError> {
    let raw: Json = json_file(path)?;
    let raw = raw.get("consortium").cloned().unwrap_or(raw);
    serde_json::from_value(raw).map_err(|e| CliError::failed("BadInput", format!("{}: {e}", path.display())))
}

fn env_cmd(cli: &Cli, cmd: &EnvCommand) -> Res {
    let store = open_store(cli)?;
    match cmd {
        EnvCommand::Create { id, consortium } => {
            let c = load_consortium(consortium)?;
            store.save_consortium(&c)?;
            store.create_env(id, &c.id)?;
            let text = format!("created environment {id} for consortium {}", c.id);
            Ok(Output::new(text, json!({ "env": id, "consortium": c.id, "memberships": c.memberships.len() })))
        }
        EnvCommand::List => {
            let ids = store.env_ids();
            Ok(Output::new(ids.join("\n"), json!(ids)))
        }
        EnvCommand::Export { id, out } => {
            let env = store.load(id)?;
            let log = env.ledger.log();
            write(out, &export_jsonl(log))?;
            let text = format!("wrote {} transactions to {}", log.len(), out.display());
            Ok(Output::new(text, json!({ "env": id, "transactions": log.len() })))
        }
    }
}

fn deploy(cli: &Cli, env_id: &str, model: &Path) -> Res {
    let program = compile_model(&load_model(&model_path(model))?)?;
    let store = open_store(cli)?;
    let mut env = store.load(env_id)?;
    let digest = program.digest();
    let contract = env.deploy(program);
    store.save(&env)?;
    Ok(Output::new(contract.clone(), json!({ "env": env_id, "contract": contract, "digest": digest })))
}

/// Role bindings from a plain map or from a bindings file with `roles`.
fn load_bindings(path: &Path) -> Result<BTreeMap<String, MembershipSelector>, CliError> {
    let raw: Json = json_file(path)?;
    let raw = raw.get("roles").cloned().unwrap_or(raw);
    serde_json::from_value(raw).map_err(|e| CliError::failed("BadInput", format!("{}: {e}", path.display())))
}

fn instance_cmd(cli: &Cli, cmd: &InstanceCommand) -> Res {
    let store = open_store(cli)?;
    match cmd {
        InstanceCommand::Create { env: env_id, contract, who, scenario, bindings, dmn } => {
            let (roles, models) = match scenario {
                Some(dir) => {
                    let b = Bundle::load(dir)?;
                    (b.bindings.roles, b.dmn)
                }
                None => {
                    let roles = match bindings {
                        Some(p) => load_bindings(p)?,
                        None => BTreeMap::new(),
                    };
                    let mut models = BTreeMap::new();
                    for (task, path) in dmn {
                        models.insert(task.clone(), read(path)?);
                    }
                    (roles, models)
                }
            };
            let mut env = store.load(env_id)?;
            let caller = identity(&env, who)?;
            let result = env.create_instance(&caller, contract, &roles, &models);
            store.save(&env)?;
            let inst = result?;
            Ok(Output::new(inst.clone(), json!({ "env": env_id, "instanceId": inst })))
        }
        InstanceCommand::Show { env, instance } => {
            let env = store.load(env)?;
            let view = env.instance_view(instance)?;
            let mut text = format!("{} {}\n", view.meta.instance_id, if view.completed { "completed" } else { "running" });
            for (id, el) in &view.elements {
                let _ = writeln!(text, "  {id:<28} {:?}", el.state);
            }
            for op in &view.enabled {
                let _ = writeln!(text, "  enabled: {} {} by {}", op.op, op.element, op.role);
            }
            Ok(Output::new(text, to_json(&view)))
        }
    }
}

fn invoke(cli: &Cli, env_id: &str, inst: &str, element: &str, op: InvokeOp, who: &Who, payload: Option<&str>) -> Res {
    let store = open_store(cli)?;
    let mut env = store.load(env_id)?;
    let caller = identity(&env, who)?;
    if payload.is_some() && op != InvokeOp::Message {
        return Err(CliError::Usage("--payload only applies to `message`".into()));
    }
    let result = match op {
        InvokeOp::Message => {
            let Json::Object(map) = json_arg(payload.unwrap_or("{}"), "--payload")? else {
                return Err(CliError::Usage("--payload must be a JSON object".into()));
            };
            env.send_message(&caller, inst, element, &map).map(to_json)
        }
        InvokeOp::Confirm => env.confirm_message(&caller, inst, element).map(to_json),
        InvokeOp::Brt => env.trigger_brt(&caller, inst, element).map(to_json),
        InvokeOp::Fetch => return fetch(&env, &caller, inst, element),
    };
    store.save(&env)?;
    let receipt = result?;
    let text = format!("{} committed", receipt["tx_id"].as_str().unwrap_or("transaction"));
    Ok(Output::new(text, receipt))
}

fn fetch(env: &Environment, caller: &Identity, inst: &str, task: &str) -> Res {
    let bytes = env.fetch_payload(caller, inst, task)?;
    let recorded = env
        .ledger
        .query_state(&state_key(inst, task, "message"))
        .and_then(|v| serde_json::from_value::<MessageRecord>(v.clone()).ok())
        .map(|r| r.hash);
    let hash = sha256_hex(&bytes);
    let matches = recorded.as_deref() == Some(hash.as_str());
    let payload: Option<Json> = serde_json::from_slice(&bytes).ok();
    let text = format!(
        "{}\nhash {}",
        payload.as_ref().map_or_else(|| String::from_utf8_lossy(&bytes).into_owned(), |p| p.to_string()),
        if matches { "matches" } else { "MISMATCH" }
    );
    let json = json!({ "payload": payload, "hash": hash, "recordedHash": recorded, "matches": matches });
    Ok(Output::new(text, json).failing_if(!matches))
}

fn run_trace_cmd(scenario: &Path, trace: &Path) -> Res {
    let bundle = Bundle::load(scenario)?;
    let trace: Trace = json_file(trace)?;
    let oracle = TraceOracle::new(&bundle).judge(&trace.steps);
    let outcome = run_trace(&bundle, &trace);
    let agree = outcome.accepted == oracle.conforming;
    let text = format!(
        "{}: engine {}, oracle {}{}",
        trace.id,
        if outcome.accepted { "accepted" } else { "rejected" },
        if oracle.conforming { "conforming" } else { "not conforming" },
        outcome.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
    );
    let json = json!({ "traceId": trace.id, "engine": outcome, "oracle": oracle, "agree": agree });
    Ok(Output::new(text, json).failing_if(!agree))
}

fn conformance(scenario: &Path, mutants: usize, seed: u64, add: AddArg, report_path: Option<&Path>) -> Res {
    let bundle = Bundle::load(scenario)?;
    let add = match add {
        AddArg::Duplicate => AddMode::Duplicate,
        AddArg::Graft => AddMode::Graft,
    };
    let suite = build_suite_with(&bundle, mutants, seed, add);
    let report = run_conformance(&bundle, &suite);
    let census = bundle.model.census();
    let failing: Vec<Json> = report
        .disagreements
        .iter()
        .map(|d| {
            let trace = suite.traces.iter().find(|t| t.id == d.trace_id);
            json!({ "traceId": d.trace_id, "expected": d.expected, "outcome": d.outcome, "trace": trace })
        })
        .collect();
    let summary = json!({
        "scenario": report.scenario,
        "seed": seed,
        "add": add,
        "tasks": census.tasks,
        "messages": census.messages,
        "gateways": census.gateways,
        "businessRuleTasks": census.brts,
        "basicPaths": report.basic_paths,
        "traces": report.traces,
        "conforming": report.conforming,
        "nonConforming": report.non_conforming,
        "agreements": report.agreements,
        "accuracy": report.rate(),
        "disagreements": failing,
    });
    if let Some(path) = report_path {
        let mut full = summary.clone();
        full["suite"] = to_json(&suite.traces);
        write(path, &(serde_json::to_string_pretty(&full).expect("JSON") + "\n"))?;
    }
    let text = format!(
        "{}: tasks {} messages {} gateways {} brts {} | basic paths {} traces {} conforming {} non-conforming {} | accuracy {:.4}",
        report.scenario,
        census.tasks,
        census.messages,
        census.gateways,
        census.brts,
        report.basic_paths,
        report.traces,
        report.conforming,
        report.non_conforming,
        report.rate()
    );
    Ok(Output::new(text, summary).failing_if(!report.passed()))
}

fn audit(cli: &Cli, env_id: &str, filter: &LogFilter) -> Res {
    let env = open_store(cli)?.load(env_id)?;
    let txs = env.ledger.query_log(filter);
    let text = txs
        .iter()
        .map(|t| format!("{:>4} {} {} by {}/{}", t.seq, t.tx_id, t.op, t.invoker.membership_id, t.invoker.user_id))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Output::new(text, to_json(&txs)))
}

fn chain_verify(file: &Path) -> Res {
    let text = read(file)?;
    let log = parse_jsonl(&text)?;
    Ok(Output::new(format!("{} transactions, chain intact", log.len()), json!({ "valid": true, "transactions": log.len() })))
}

fn serve(cli: &Cli, addr: SocketAddr, scenarios: Option<PathBuf>) -> Res {
    let config = chor_server::ServerConfig { store_dir: Some(cli.store.clone()), scenario_dir: scenarios };
    let state = chor_server::AppState::new(config)?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::io(&cli.store))?;
    eprintln!("listening on http://{addr}");
    rt.block_on(chor_server::serve(addr, state)).map_err(|e| CliError::failed("Serve", format!("{addr}: {e}")))?;
    Ok(Output::new("", Json::Null))
}
