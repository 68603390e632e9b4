//! Every basic path of every bundled scenario, driven over HTTP.

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chor_core::conformance::{enumerate_basic_paths, file_content, StepKind};
use chor_core::model::{ElementKind, ValueType};
use chor_core::scenario::{builtin_dir, Bundle};
use chor_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, who: Option<(&str, &str)>, body: Body, json_body: bool) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some((m, u)) = who {
        req = req.header("x-member", m).header("x-user", u);
    }
    if json_body {
        req = req.header("content-type", "application/json");
    }
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, who: Option<(&str, &str)>, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, who, Body::from(body.to_string()), true).await
}

#[tokio::test]
async fn basic_paths_complete_over_http() {
    let state = AppState::new(ServerConfig { store_dir: None, scenario_dir: Some(builtin_dir()) }).unwrap();
    let app = router(state);
    let (_, names) = call(&app, Method::GET, "/scenarios", None, Body::empty(), false).await;
    let names: Vec<String> = serde_json::from_value(names).unwrap();
    assert_eq!(names.len(), 6);

    for name in names {
        let bundle = Bundle::load(builtin_dir().join(&name)).unwrap();
        let consortium = serde_json::to_value(&bundle.bindings.consortium).unwrap();
        let cid = consortium["id"].as_str().unwrap().to_string();
        let (s, _) = post(&app, "/consortiums", None, consortium).await;
        assert!(s == StatusCode::CREATED || s == StatusCode::CONFLICT, "{name}: {s}");
        let (s, body) = post(&app, "/envs", None, json!({ "id": name, "consortium": cid })).await;
        assert_eq!(s, StatusCode::CREATED, "{name}: {body}");
        let (s, body) = post(&app, &format!("/envs/{name}/contracts"), None, json!({ "scenario": name })).await;
        assert_eq!(s, StatusCode::CREATED, "{name}: {body}");
        let contract = body["contract"].as_str().unwrap().to_string();

        // File fields carry the CID of content uploaded beforehand.
        for el in bundle.model.elements.values() {
            if let ElementKind::ChoreographyTask { message, .. } = &el.kind {
                for f in bundle.model.messages[message].fields.iter().filter(|f| f.ty == ValueType::File) {
                    let (s, _) = call(&app, Method::POST, "/cas", None, Body::from(file_content(&el.id, &f.name)), false).await;
                    assert_eq!(s, StatusCode::CREATED);
                }
            }
        }

        let creator = bundle.bindings.actors.values().next().unwrap();
        let creator = (creator.membership.as_str(), creator.user.as_str());
        let paths = enumerate_basic_paths(&bundle);
        assert!(!paths.is_empty());
        for path in paths {
            let req = json!({ "contract": contract, "scenario": name });
            let (s, body) = post(&app, &format!("/envs/{name}/instances"), Some(creator), req).await;
            assert_eq!(s, StatusCode::CREATED, "{name}: {body}");
            let inst = body["instanceId"].as_str().unwrap().to_string();
            let base = format!("/envs/{name}/instances/{inst}");
            for step in &path.steps {
                let who = Some((step.invoker.membership.as_str(), step.invoker.user.as_str()));
                let (s, body) = match step.kind {
                    StepKind::Message => {
                        post(&app, &format!("{base}/tasks/{}/message", step.element), who, Value::Object(step.payload.clone())).await
                    }
                    StepKind::Confirm => post(&app, &format!("{base}/tasks/{}/confirm", step.element), who, Value::Null).await,
                    StepKind::Brt => post(&app, &format!("{base}/brts/{}/trigger", step.element), who, Value::Null).await,
                };
                assert_eq!(s, StatusCode::OK, "{name} {} {} {:?}: {body}", path.id, step.element, step.kind);
                if step.kind == StepKind::Brt {
                    let (_, view) = call(&app, Method::GET, &base, None, Body::empty(), false).await;
                    let decision = &view["decisions"][&step.element];
                    assert!(!decision["trace"].as_array().unwrap().is_empty(), "{name}: {view}");
                    assert_eq!(decision["digest"], view["dmn"][&step.element]["digest"]);
                }
            }
            let (_, view) = call(&app, Method::GET, &base, None, Body::empty(), false).await;
            assert_eq!(view["completed"], json!(true), "{name} {}", path.id);
            assert_eq!(view["enabled"], json!([]), "{name} {}", path.id);
        }
    }
}
