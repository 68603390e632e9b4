use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chor_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

const BUYER: (&str, &str) = ("acme-m1", "sam");
const SELLER: (&str, &str) = ("globex-m1", "tia");

fn app_with(store: Option<&std::path::Path>) -> (Router, AppState) {
    let config = ServerConfig { store_dir: store.map(Into::into), scenario_dir: Some(chor_core::scenario::builtin_dir()) };
    let state = AppState::new(config).unwrap();
    (router(state.clone()), state)
}

async fn call(app: &Router, method: Method, uri: &str, who: Option<(&str, &str)>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some((m, u)) = who {
        req = req.header("x-member", m).header("x-user", u);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

fn consortium_of(scenario: &str) -> Value {
    let text = std::fs::read_to_string(chor_core::scenario::builtin_dir().join(scenario).join("bindings.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["consortium"].clone()
}

/// Consortium, environment `e1`, the purchase contract and one instance.
async fn purchase(app: &Router) -> String {
    let (s, _) = call(app, Method::POST, "/consortiums", None, Some(consortium_of("purchase"))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = call(app, Method::POST, "/envs", None, Some(json!({ "id": "e1", "consortium": "purchase" }))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, body) = call(app, Method::POST, "/envs/e1/contracts", None, Some(json!({ "scenario": "purchase" }))).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let contract = body["contract"].as_str().unwrap().to_string();
    let req = json!({ "contract": contract, "scenario": "purchase" });
    let (s, body) = call(app, Method::POST, "/envs/e1/instances", Some(BUYER), Some(req)).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    body["instanceId"].as_str().unwrap().to_string()
}

async fn send(app: &Router, inst: &str, task: &str, who: (&str, &str), payload: Value) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/envs/e1/instances/{inst}/tasks/{task}/message"), Some(who), Some(payload)).await
}

async fn confirm(app: &Router, inst: &str, task: &str, who: (&str, &str)) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/envs/e1/instances/{inst}/tasks/{task}/confirm"), Some(who), None).await
}

#[tokio::test]
async fn purchase_runs_to_completion() {
    let (app, _) = app_with(None);
    let inst = purchase(&app).await;
    let steps = [
        ("RequestQuote", BUYER, SELLER, json!({ "item": "bolts", "qty": 40 })),
        ("SendQuote", SELLER, BUYER, json!({ "price": 500 })),
        ("Order", BUYER, SELLER, json!({ "poNumber": "PO-7" })),
        ("Ship", SELLER, BUYER, json!({ "tracking": "TRK-1" })),
    ];
    for (task, from, to, payload) in steps {
        let (s, body) = send(&app, &inst, task, from, payload).await;
        assert_eq!(s, StatusCode::OK, "{task}: {body}");
        let (s, body) = confirm(&app, &inst, task, to).await;
        assert_eq!(s, StatusCode::OK, "{task}: {body}");
    }
    let (s, view) = call(&app, Method::GET, &format!("/envs/e1/instances/{inst}"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["completed"], json!(true));
    assert!(view.get("enabledForIdentity").is_none());
    assert_eq!(view["elements"]["DeclineQuote"]["state"], json!("Disabled"));

    let (_, list) = call(&app, Method::GET, "/envs/e1/instances", None, None).await;
    assert_eq!(list, json!([inst]));
}

#[tokio::test]
async fn enabled_operations_follow_the_identity() {
    let (app, _) = app_with(None);
    let inst = purchase(&app).await;
    let uri = format!("/envs/e1/instances/{inst}");
    let (_, buyer) = call(&app, Method::GET, &uri, Some(BUYER), None).await;
    assert_eq!(buyer["enabledForIdentity"], json!([{ "element": "RequestQuote", "op": "Message", "role": "Buyer" }]));
    let (_, seller) = call(&app, Method::GET, &uri, Some(SELLER), None).await;
    assert_eq!(seller["enabledForIdentity"], json!([]));
}

#[tokio::test]
async fn rejections_map_to_status_codes() {
    let (app, _) = app_with(None);
    let inst = purchase(&app).await;

    // Wrong role.
    let (s, body) = send(&app, &inst, "RequestQuote", SELLER, json!({ "item": "x", "qty": 1 })).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::FORBIDDEN, Some("AccessDenied")));
    // Not yet enabled.
    let (s, body) = send(&app, &inst, "Order", BUYER, json!({ "poNumber": "PO" })).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::CONFLICT, Some("NotEnabled")));
    // Missing required field.
    let (s, body) = send(&app, &inst, "RequestQuote", BUYER, json!({ "item": "x" })).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("PayloadInvalid")));
    // No identity.
    let (s, body) = call(&app, Method::POST, &format!("/envs/e1/instances/{inst}/tasks/RequestQuote/confirm"), None, None).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadRequest")));
    // Unknown things.
    let (s, _) = call(&app, Method::GET, "/envs/nope/instances", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/envs/e1/instances/nope", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // Duplicates and malformed input.
    let (s, _) = call(&app, Method::POST, "/envs", None, Some(json!({ "id": "e1", "consortium": "purchase" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, Method::POST, "/envs", None, Some(json!({ "id": "../x", "consortium": "purchase" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = call(&app, Method::POST, "/envs/e1/contracts", None, Some(json!({ "bpmn": "<nope" }))).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("BadModel")));

    // None of it reached the ledger.
    let (_, log) = call(&app, Method::GET, &format!("/envs/e1/audit?instance={inst}&op=Message"), None, None).await;
    assert_eq!(log, json!([]));
}

#[tokio::test]
async fn payload_endpoint_reports_tampering() {
    let (app, state) = app_with(None);
    let inst = purchase(&app).await;
    send(&app, &inst, "RequestQuote", BUYER, json!({ "item": "bolts", "qty": 40 })).await;
    let uri = format!("/envs/e1/instances/{inst}/tasks/RequestQuote/payload");

    let (s, p) = call(&app, Method::GET, &uri, Some(SELLER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(p["payload"], json!({ "item": "bolts", "qty": 40 }));
    assert_eq!(p["matches"], json!(true));
    assert_eq!(p["hash"], p["recordedHash"]);

    // Content is addressed by its hash, so the recorded hash names the blob.
    let cid = p["recordedHash"].as_str().unwrap();
    state.cas().overwrite_raw(cid, br#"{"item":"bolts","qty":4000}"#).unwrap();
    let (_, p) = call(&app, Method::GET, &uri, Some(SELLER), None).await;
    assert_eq!(p["matches"], json!(false));
    assert_ne!(p["hash"], p["recordedHash"]);

    let (s, body) = confirm(&app, &inst, "RequestQuote", SELLER).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("HashMismatch")));
}

#[tokio::test]
async fn audit_filters_the_log() {
    let (app, _) = app_with(None);
    let inst = purchase(&app).await;
    send(&app, &inst, "RequestQuote", BUYER, json!({ "item": "bolts", "qty": 40 })).await;
    send(&app, &inst, "RequestQuote", SELLER, json!({ "item": "bolts", "qty": 40 })).await;
    confirm(&app, &inst, "RequestQuote", SELLER).await;

    let (s, all) = call(&app, Method::GET, &format!("/envs/e1/audit?instance={inst}"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    let n = all.as_array().unwrap().len();
    let (_, sends) = call(&app, Method::GET, &format!("/envs/e1/audit?instance={inst}&op=Message"), None, None).await;
    // The seller's send was rejected and never logged.
    assert_eq!(sends.as_array().unwrap().len(), 1, "{sends}");
    assert_eq!(sends[0]["invoker"]["membershipId"], json!("acme-m1"));
    let (_, confirms) = call(&app, Method::GET, "/envs/e1/audit?op=MessageConfirm&invoker=globex-m1", None, None).await;
    assert_eq!(confirms.as_array().unwrap().len(), 1);
    let (_, none) = call(&app, Method::GET, "/envs/e1/audit?op=Message&invoker=globex-m1", None, None).await;
    assert_eq!(none, json!([]));
    assert_eq!(n, 3, "create, send and confirm");
    let (s, _) = call(&app, Method::GET, "/envs/e1/audit?color=red", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn content_store_round_trip() {
    let (app, _) = app_with(None);
    let req = Request::post("/cas").body(Body::from(&b"sample bytes"[..])).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::CREATED);
    let body: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let cid = body["cid"].as_str().unwrap();
    assert_eq!(cid, hex::encode(Sha256::digest(b"sample bytes")));

    let res = app.clone().oneshot(Request::get(format!("/cas/{cid}")).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(&res.into_body().collect().await.unwrap().to_bytes()[..], b"sample bytes");

    let (s, _) = call(&app, Method::GET, "/cas/not-a-cid", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, &format!("/cas/{}", "0".repeat(64)), None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn console_and_contract_interface_are_served() {
    let (app, _) = app_with(None);
    purchase(&app).await;
    let res = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let html = res.into_body().collect().await.unwrap().to_bytes();
    assert!(std::str::from_utf8(&html).unwrap().contains("/console/app.js"));
    let res = app.clone().oneshot(Request::get("/console/app.js").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);

    let (_, list) = call(&app, Method::GET, "/envs/e1/contracts", None, None).await;
    let contract = list[0]["contract"].as_str().unwrap().to_string();
    let (s, c) = call(&app, Method::GET, &format!("/envs/e1/contracts/{contract}"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    let ops = c["interface"]["operations"].as_array().unwrap();
    assert_eq!(ops.len(), 10, "two per choreography task");
    let (_, scenarios) = call(&app, Method::GET, "/scenarios", None, None).await;
    assert!(scenarios.as_array().unwrap().contains(&json!("purchase")));
}

/// Reads SSE frames until `want` events arrived or the wait runs out.
async fn read_events(body: Body, want: usize) -> Vec<(String, Value)> {
    let mut body = body;
    let mut text = String::new();
    let mut out = Vec::new();
    while out.len() < want {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame()).await.expect("event within 5s");
        let Some(Ok(frame)) = frame else { break };
        let Ok(data) = frame.into_data() else { continue };
        text.push_str(std::str::from_utf8(&data).unwrap());
        while let Some(end) = text.find("\n\n") {
            let block: String = text.drain(..end + 2).collect();
            let mut name = String::new();
            let mut payload = Value::Null;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event: ") {
                    name = v.to_string();
                } else if let Some(v) = line.strip_prefix("data: ") {
                    payload = serde_json::from_str(v).unwrap();
                }
            }
            if !name.is_empty() {
                out.push((name, payload));
            }
        }
    }
    out
}

#[tokio::test]
async fn event_stream_replays_then_follows() {
    let (app, _) = app_with(None);
    let inst = purchase(&app).await;
    let uri = format!("/envs/e1/events?topic={inst}");
    let res = app.clone().oneshot(Request::get(&uri).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.headers()["content-type"], "text/event-stream");

    let backlog_len = {
        let (_, log) = call(&app, Method::GET, "/envs/e1/audit", None, None).await;
        log.as_array().unwrap().iter().flat_map(|t| t["events"].as_array().unwrap()).filter(|e| e["topic"] == json!(inst)).count()
    };
    assert!(backlog_len > 0);

    let sender = app.clone();
    let inst2 = inst.clone();
    let live = tokio::spawn(async move {
        tokio::time::sleep(Duration::from_millis(50)).await;
        send(&sender, &inst2, "RequestQuote", BUYER, json!({ "item": "bolts", "qty": 40 })).await
    });
    let events = read_events(res.into_body(), backlog_len + 1).await;
    assert_eq!(live.await.unwrap().0, StatusCode::OK);

    assert_eq!(events[0].0, "InstanceCreated");
    assert!(events.iter().all(|(_, p)| p["topic"] == json!(inst) && p["env"] == json!("e1")));
    let indices: Vec<u64> = events.iter().map(|(_, p)| p["index"].as_u64().unwrap()).collect();
    assert!(indices.windows(2).all(|w| w[0] < w[1]), "{indices:?}");
    assert_eq!(events[backlog_len].0, "MessageSent");

    // `since` skips what the client already has.
    let from = indices[backlog_len];
    let res = app.clone().oneshot(Request::get(format!("{uri}&since={from}")).body(Body::empty()).unwrap()).await.unwrap();
    let again = read_events(res.into_body(), 1).await;
    assert_eq!(again[0].1["index"].as_u64(), Some(from));
}

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let inst = {
        let (app, _) = app_with(Some(dir.path()));
        let inst = purchase(&app).await;
        send(&app, &inst, "RequestQuote", BUYER, json!({ "item": "bolts", "qty": 40 })).await;
        inst
    };
    let (app, _) = app_with(Some(dir.path()));
    let (s, view) = call(&app, Method::GET, &format!("/envs/e1/instances/{inst}"), None, None).await;
    assert_eq!(s, StatusCode::OK, "{view}");
    assert_eq!(view["elements"]["RequestQuote"]["state"], json!("WaitForConfirm"));
    let (s, p) = call(&app, Method::GET, &format!("/envs/e1/instances/{inst}/tasks/RequestQuote/payload"), Some(SELLER), None).await;
    assert_eq!(s, StatusCode::OK, "{p}");
    assert_eq!(p["matches"], json!(true));
    let (s, body) = confirm(&app, &inst, "RequestQuote", SELLER).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    // New environments do not collide with stored ones.
    let (s, body) = call(&app, Method::POST, "/envs", None, Some(json!({ "consortium": "purchase" }))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_ne!(body["id"], json!("e1"));
}
