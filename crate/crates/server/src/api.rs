use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse};
use axum::Json;
use chor_core::bpmn::parse_choreography;
use chor_core::compiler::{compile, emit_interface};
use chor_core::hash::sha256_hex;
use chor_core::ledger::{LogFilter, MembershipSelector};
use chor_core::runtime::{state_key, Consortium, Environment, MessageRecord};
use chor_core::scenario::Bundle;
use serde::Deserialize;
use serde_json::{json, Map, Value as Json_};

use crate::error::ApiError;
use crate::identity::{Caller, MaybeCaller};
use crate::{AppState, Hosted, Registry};

type Reply = Result<Json<Json_>, ApiError>;

const CONSOLE_HTML: &str = include_str!("../../../console/index.html");
const CONSOLE_JS: &str = include_str!("../../../console/dist/app.js");

fn valid_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("`{id}` is not a valid identifier")))
    }
}

fn hosted<'a>(reg: &'a mut Registry, env: &str) -> Result<&'a mut Hosted, ApiError> {
    reg.envs.get_mut(env).ok_or_else(|| ApiError::not_found(format!("unknown environment `{env}`")))
}

fn scenario(state: &AppState, name: &str) -> Result<Bundle, ApiError> {
    valid_id(name)?;
    let dir = state.scenario_dir.as_ref().ok_or_else(|| ApiError::bad_request("no scenario directory configured"))?;
    let path = dir.join(name);
    if !path.is_dir() {
        return Err(ApiError::not_found(format!("unknown scenario `{name}`")));
    }
    Bundle::load(path).map_err(|e| ApiError::unprocessable("BadScenario", e.to_string()))
}

fn to_json(v: impl serde::Serialize) -> Json_ {
    serde_json::to_value(v).expect("responses serialize")
}

/// Runs `f` on a hosted environment, then broadcasts and persists what it committed.
fn mutate<T>(state: &AppState, env: &str, f: impl FnOnce(&mut Environment) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let mut reg = state.lock();
    let out = f(&mut hosted(&mut reg, env)?.env);
    reg.settle(env, &state.events)?;
    out
}

pub async fn console_page() -> Html<&'static str> {
    Html(CONSOLE_HTML)
}

pub async fn console_script() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/javascript; charset=utf-8")], CONSOLE_JS)
}

pub async fn list_scenarios(State(state): State<AppState>) -> Reply {
    let mut names = Vec::new();
    if let Some(dir) = &state.scenario_dir {
        if let Ok(entries) = std::fs::read_dir(dir) {
            names = entries
                .filter_map(Result::ok)
                .filter(|e| e.path().join("model.bpmn").is_file())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
        }
    }
    names.sort();
    Ok(Json(json!(names)))
}

pub async fn create_consortium(State(state): State<AppState>, Json(c): Json<Consortium>) -> Result<impl IntoResponse, ApiError> {
    valid_id(&c.id)?;
    if c.memberships.is_empty() {
        return Err(ApiError::unprocessable("BadConsortium", "a consortium needs at least one membership"));
    }
    let mut reg = state.lock();
    if reg.consortiums.contains_key(&c.id) {
        return Err(ApiError::conflict(format!("consortium `{}` exists", c.id)));
    }
    if let Some(s) = &reg.store {
        s.save_consortium(&c)?;
    }
    let id = c.id.clone();
    reg.consortiums.insert(id.clone(), c);
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateEnv {
    #[serde(default)]
    id: Option<String>,
    consortium: String,
}

pub async fn create_env(State(state): State<AppState>, Json(req): Json<CreateEnv>) -> Result<impl IntoResponse, ApiError> {
    let mut reg = state.lock();
    let consortium = reg
        .consortiums
        .get(&req.consortium)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown consortium `{}`", req.consortium)))?;
    let id = match req.id {
        Some(id) => {
            valid_id(&id)?;
            if reg.envs.contains_key(&id) {
                return Err(ApiError::conflict(format!("environment `{id}` exists")));
            }
            id
        }
        None => loop {
            reg.next_env += 1;
            let id = format!("env-{}", reg.next_env);
            if !reg.envs.contains_key(&id) {
                break id;
            }
        },
    };
    let env = Environment::new(id.clone(), consortium, reg.cas.clone())?;
    reg.envs.insert(id.clone(), Hosted { env, published: 0 });
    reg.settle(&id, &state.events)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

pub async fn list_envs(State(state): State<AppState>) -> Reply {
    Ok(Json(json!(state.lock().envs.keys().collect::<Vec<_>>())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deploy {
    #[serde(default)]
    bpmn: Option<String>,
    #[serde(default)]
    scenario: Option<String>,
}

pub async fn deploy_contract(State(state): State<AppState>, Path(e): Path<String>, Json(req): Json<Deploy>) -> Result<impl IntoResponse, ApiError> {
    let model = match (req.bpmn, req.scenario) {
        (Some(xml), None) => parse_choreography(&xml).map_err(|e| ApiError::unprocessable("BadModel", e.to_string()))?,
        (None, Some(name)) => scenario(&state, &name)?.model,
        _ => return Err(ApiError::bad_request("give exactly one of `bpmn` and `scenario`")),
    };
    let program = compile(&model).map_err(|e| match e {
        chor_core::compiler::CompileError::Invalid(report) => {
            ApiError::unprocessable("InvalidModel", serde_json::to_string(&report.violations).unwrap_or_default())
        }
        other => ApiError::unprocessable("InvalidModel", other.to_string()),
    })?;
    let interface = emit_interface(&program);
    let digest = program.digest();
    let contract = mutate(&state, &e, |env| Ok(env.deploy(program)))?;
    Ok((StatusCode::CREATED, Json(json!({ "contract": contract, "digest": digest, "interface": interface }))))
}

pub async fn list_contracts(State(state): State<AppState>, Path(e): Path<String>) -> Reply {
    let mut reg = state.lock();
    let env = &hosted(&mut reg, &e)?.env;
    let list: Vec<Json_> =
        env.programs().iter().map(|(name, p)| json!({ "contract": name, "modelId": p.model_id, "digest": p.digest() })).collect();
    Ok(Json(json!(list)))
}

pub async fn get_contract(State(state): State<AppState>, Path((e, c)): Path<(String, String)>) -> Reply {
    let mut reg = state.lock();
    let env = &hosted(&mut reg, &e)?.env;
    let program = env.program(&c).ok_or_else(|| ApiError::not_found(format!("unknown contract `{c}`")))?;
    Ok(Json(json!({ "contract": c, "digest": program.digest(), "interface": emit_interface(program) })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateInstance {
    contract: String,
    /// Takes bindings and decision models from a scenario bundle.
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default)]
    bindings: Option<BTreeMap<String, MembershipSelector>>,
    #[serde(default)]
    dmn: Option<BTreeMap<String, String>>,
}

pub async fn create_instance(
    State(state): State<AppState>,
    Path(e): Path<String>,
    caller: Caller,
    Json(req): Json<CreateInstance>,
) -> Result<impl IntoResponse, ApiError> {
    let (bindings, dmn) = match req.scenario {
        Some(name) => {
            let b = scenario(&state, &name)?;
            (req.bindings.unwrap_or(b.bindings.roles), req.dmn.unwrap_or(b.dmn))
        }
        None => (req.bindings.unwrap_or_default(), req.dmn.unwrap_or_default()),
    };
    let inst = mutate(&state, &e, |env| {
        let who = caller.identity(env);
        Ok(env.create_instance(&who, &req.contract, &bindings, &dmn)?)
    })?;
    Ok((StatusCode::CREATED, Json(json!({ "instanceId": inst }))))
}

pub async fn list_instances(State(state): State<AppState>, Path(e): Path<String>) -> Reply {
    let mut reg = state.lock();
    Ok(Json(json!(hosted(&mut reg, &e)?.env.instances())))
}

/// The instance view; with identity headers, also the operations that
/// identity may perform right now.
pub async fn get_instance(State(state): State<AppState>, Path((e, i)): Path<(String, String)>, MaybeCaller(caller): MaybeCaller) -> Reply {
    let mut reg = state.lock();
    let env = &hosted(&mut reg, &e)?.env;
    let view = env.instance_view(&i)?;
    let mut out = to_json(&view);
    if let Some(c) = caller {
        out["enabledForIdentity"] = to_json(view.enabled_for(&c.identity(env)));
    }
    Ok(Json(out))
}

pub async fn send_message(
    State(state): State<AppState>,
    Path((e, i, t)): Path<(String, String, String)>,
    caller: Caller,
    Json(payload): Json<Map<String, Json_>>,
) -> Reply {
    mutate(&state, &e, |env| {
        let who = caller.identity(env);
        Ok(Json(to_json(env.send_message(&who, &i, &t, &payload)?)))
    })
}

pub async fn confirm_message(State(state): State<AppState>, Path((e, i, t)): Path<(String, String, String)>, caller: Caller) -> Reply {
    mutate(&state, &e, |env| {
        let who = caller.identity(env);
        Ok(Json(to_json(env.confirm_message(&who, &i, &t)?)))
    })
}

/// The private payload as the caller can read it, with the on-chain hash and
/// whether they match.
pub async fn fetch_payload(State(state): State<AppState>, Path((e, i, t)): Path<(String, String, String)>, caller: Caller) -> Reply {
    let mut reg = state.lock();
    let env = &hosted(&mut reg, &e)?.env;
    let bytes = env.fetch_payload(&caller.identity(env), &i, &t)?;
    let record: Option<MessageRecord> =
        env.ledger.query_state(&state_key(&i, &t, "message")).and_then(|v| serde_json::from_value(v.clone()).ok());
    let hash = sha256_hex(&bytes);
    let recorded = record.map(|r| r.hash);
    Ok(Json(json!({
        "payload": serde_json::from_slice::<Json_>(&bytes).ok(),
        "hash": hash,
        "recordedHash": recorded,
        "matches": recorded.as_deref() == Some(hash.as_str()),
    })))
}

pub async fn trigger_brt(State(state): State<AppState>, Path((e, i, b)): Path<(String, String, String)>, caller: Caller) -> Reply {
    mutate(&state, &e, |env| {
        let who = caller.identity(env);
        Ok(Json(to_json(env.trigger_brt(&who, &i, &b)?)))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditQuery {
    #[serde(default)]
    instance: Option<String>,
    #[serde(default)]
    element: Option<String>,
    #[serde(default)]
    op: Option<String>,
    #[serde(default)]
    invoker: Option<String>,
}

pub async fn audit(State(state): State<AppState>, Path(e): Path<String>, Query(q): Query<AuditQuery>) -> Reply {
    let filter = LogFilter { instance_id: q.instance, element_id: q.element, op: q.op, invoker: q.invoker };
    let mut reg = state.lock();
    let env = &hosted(&mut reg, &e)?.env;
    Ok(Json(to_json(env.ledger.query_log(&filter))))
}

pub async fn cas_put(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let cid = state.lock().cas.try_put(&body)?;
    Ok((StatusCode::CREATED, Json(json!({ "cid": cid }))))
}

pub async fn cas_get(State(state): State<AppState>, Path(cid): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let bytes = state.lock().cas.get(&cid)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}
