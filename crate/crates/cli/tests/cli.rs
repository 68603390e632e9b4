use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

struct Chor {
    store: tempfile::TempDir,
}

impl Chor {
    fn new() -> Chor {
        Chor { store: tempfile::tempdir().unwrap() }
    }

    fn cmd(&self) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_chor"));
        c.env("CHOR_STORE_DIR", self.store.path().join("store"));
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd().args(args).output().unwrap()
    }

    /// Runs with `--json` and returns the exit status and parsed stdout.
    fn json(&self, args: &[&str]) -> (i32, Value) {
        let out = self.cmd().arg("--json").args(args).output().unwrap();
        let v = serde_json::from_slice(&out.stdout)
            .unwrap_or_else(|e| panic!("{args:?}: {e}\n{}", String::from_utf8_lossy(&out.stderr)));
        (out.status.code().unwrap(), v)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.store.path().join(name)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_through_the_exit_status() {
    let chor = Chor::new();
    let good = scenarios().join("purchase/model.bpmn");
    let out = chor.run(&["validate", s(&good)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "valid");

    // The same model with its end event dropped.
    let text = std::fs::read_to_string(&good).unwrap();
    let start = text.find("<bpmn2:endEvent").unwrap();
    let end = text[start..].find("</bpmn2:endEvent>").unwrap() + start + "</bpmn2:endEvent>".len();
    let bad = chor.path("bad.bpmn");
    std::fs::write(&bad, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let (code, v) = chor.json(&["validate", s(&bad)]);
    assert_eq!(code, 1);
    assert_eq!(v["valid"], json!(false));
    assert!(!v["violations"].as_array().unwrap().is_empty());
    let (code, v) = chor.json(&["compile", s(&bad)]);
    assert_eq!((code, v["error"].as_str()), (1, Some("InvalidModel")));
}

#[test]
fn usage_errors_exit_with_two() {
    let chor = Chor::new();
    assert_eq!(chor.run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(chor.run(&["validate"]).status.code(), Some(2));
    assert_eq!(chor.run(&["conformance", "x", "--paths", "many"]).status.code(), Some(2));
    let dmn = scenarios().join("supply-chain/dmn/PriorityDecision.dmn");
    assert_eq!(chor.run(&["dmn", "eval", s(&dmn), "--inputs", "{not json"]).status.code(), Some(2));
    assert_eq!(chor.run(&["--help"]).status.code(), Some(0));
    let help = String::from_utf8(chor.run(&["serve", "--help"]).stdout).unwrap();
    assert!(help.contains("CHOR_PORT") && help.contains("CHOR_STORE_DIR") && help.contains("CHOR_SCENARIO_DIR"));
}

#[test]
fn parse_and_compile() {
    let chor = Chor::new();
    let model = scenarios().join("supply-chain/model.bpmn");
    let (code, v) = chor.json(&["parse", s(&model)]);
    assert_eq!(code, 0);
    assert_eq!(v["model_id"], json!("SupplyChain"));
    let (code, v) = chor.json(&["compile", s(&model), "--interface"]);
    assert_eq!(code, 0);
    assert_eq!(v["operations"].as_array().unwrap().len(), 28);
    let text = String::from_utf8(chor.run(&["compile", s(&model)]).stdout).unwrap();
    assert!(text.contains("RequestDetails"));
    assert_eq!(chor.run(&["parse", "/no/such/file.bpmn"]).status.code(), Some(1));
}

#[test]
fn dmn_eval_follows_the_requirements() {
    let chor = Chor::new();
    let dmn = scenarios().join("supply-chain/dmn/PriorityDecision.dmn");
    let inputs = r#"{"urgency": "high", "volume": "large", "reputation": "low"}"#;
    let (code, v) = chor.json(&["dmn", "eval", s(&dmn), "--inputs", inputs]);
    assert_eq!(code, 0);
    // Both high: P1 from the first table, one step down for low reputation.
    assert_eq!(v["outputs"]["priority"], json!("P2"));
    assert_eq!(v["trace"].as_array().unwrap().len(), 2);

    let file = chor.path("inputs.json");
    std::fs::write(&file, r#"{"urgency": "low", "volume": "small", "reputation": "high"}"#).unwrap();
    let (_, v) = chor.json(&["dmn", "eval", s(&dmn), "--inputs", &format!("@{}", s(&file))]);
    assert_eq!(v["outputs"]["priority"], json!("P3"));

    let (code, v) = chor.json(&["dmn", "eval", s(&dmn), "--inputs", r#"{"urgency": "high"}"#]);
    assert_eq!((code, v["error"].as_str()), (1, Some("DecisionError")));
}

#[test]
fn environment_lifecycle_and_chain_verification() {
    let chor = Chor::new();
    let purchase = scenarios().join("purchase");
    let bindings = purchase.join("bindings.json");
    let (code, _) = chor.json(&["env", "create", "e1", "--consortium", s(&bindings)]);
    assert_eq!(code, 0);
    let (code, v) = chor.json(&["env", "create", "e1", "--consortium", s(&bindings)]);
    assert_eq!((code, v["error"].as_str()), (1, Some("Store")));
    let (_, v) = chor.json(&["deploy", "e1", s(&purchase)]);
    let contract = v["contract"].as_str().unwrap().to_string();
    let buyer = ["--member", "acme-m1", "--user", "sam"];
    let seller = ["--member", "globex-m1", "--user", "tia"];

    let mut args = vec!["instance", "create", "e1", &contract, "--scenario", s(&purchase)];
    args.extend(buyer);
    let (code, v) = chor.json(&args);
    assert_eq!(code, 0, "{v}");
    let inst = v["instanceId"].as_str().unwrap().to_string();

    let invoke = |task: &str, op: &str, who: [&str; 4], payload: Option<&str>| {
        let mut args = vec!["invoke", "e1", &inst, task, op];
        args.extend(who);
        if let Some(p) = payload {
            args.extend(["--payload", p]);
        }
        chor.json(&args)
    };
    let (code, v) = invoke("RequestQuote", "message", seller, Some(r#"{"item": "bolts", "qty": 40}"#));
    assert_eq!((code, v["error"].as_str()), (1, Some("Rejected")));
    assert_eq!(v["detail"]["code"], json!("AccessDenied"));
    assert_eq!(invoke("RequestQuote", "message", buyer, Some("[1]")).0, 2);

    for (task, from, to, payload) in [
        ("RequestQuote", buyer, seller, r#"{"item": "bolts", "qty": 40}"#),
        ("SendQuote", seller, buyer, r#"{"price": 2500}"#),
        ("DeclineQuote", buyer, seller, r#"{"reason": "too dear"}"#),
    ] {
        let (code, v) = invoke(task, "message", from, Some(payload));
        assert_eq!(code, 0, "{task}: {v}");
        let (code, v) = invoke(task, "fetch", to, None);
        assert_eq!((code, &v["matches"]), (0, &json!(true)), "{task}: {v}");
        let (code, v) = invoke(task, "confirm", to, None);
        assert_eq!(code, 0, "{task}: {v}");
    }
    let (_, view) = chor.json(&["instance", "show", "e1", &inst]);
    assert_eq!(view["completed"], json!(true));
    assert_eq!(view["elements"]["Order"]["state"], json!("Disabled"));

    let (_, log) = chor.json(&["audit", "e1", "--instance", &inst, "--op", "MessageConfirm"]);
    assert_eq!(log.as_array().unwrap().len(), 3);
    let (_, log) = chor.json(&["audit", "e1", "--invoker", "globex-m1"]);
    assert!(log.as_array().unwrap().iter().all(|t| t["invoker"]["membershipId"] == json!("globex-m1")));

    let exported = chor.path("e1.jsonl");
    let (code, v) = chor.json(&["env", "export", "e1", s(&exported)]);
    assert_eq!(code, 0);
    let n = v["transactions"].as_u64().unwrap() as usize;
    let (code, v) = chor.json(&["chain-verify", s(&exported)]);
    assert_eq!((code, v["valid"].as_bool()), (0, Some(true)));
    assert_eq!(v["transactions"].as_u64(), Some(n as u64));

    // Change one committed write in the middle of the log.
    let text = std::fs::read_to_string(&exported).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let k = n / 2;
    lines[k] = lines[k].replacen("WaitForConfirm", "Completed", 1);
    assert_ne!(lines[k], text.lines().nth(k).unwrap(), "line {k} has a state write to change");
    let tampered = chor.path("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let (code, v) = chor.json(&["chain-verify", s(&tampered)]);
    assert_eq!((code, v["error"].as_str()), (1, Some("BrokenChain")));
    assert_eq!(v["detail"]["index"].as_u64(), Some(k as u64));
    let out = chor.run(&["chain-verify", s(&tampered)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("log entry {k}")));
}

#[test]
fn conformance_is_exact_and_reproducible() {
    let chor = Chor::new();
    let dir = scenarios().join("supply-chain");
    let report = chor.path("report.json");
    let args = ["conformance", s(&dir), "--paths", "400", "--seed", "7", "--report", s(&report)];
    let first = chor.cmd().arg("--json").args(args).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["accuracy"], json!(1.0));
    assert_eq!(v["traces"].as_u64().unwrap(), 400 + v["basicPaths"].as_u64().unwrap());
    assert_eq!(v["conforming"].as_u64().unwrap() + v["nonConforming"].as_u64().unwrap(), v["traces"].as_u64().unwrap());
    assert_eq!((v["tasks"].as_u64(), v["gateways"].as_u64(), v["businessRuleTasks"].as_u64()), (Some(13), Some(4), Some(1)));

    let second = chor.cmd().arg("--json").args(args).output().unwrap();
    assert_eq!(first.stdout, second.stdout);
    let other = chor.cmd().args(["--json", "conformance", s(&dir), "--paths", "400", "--seed", "8"]).output().unwrap();
    assert_ne!(first.stdout, other.stdout);

    // Every trace in the report replays to the same verdict on its own.
    let full: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let suite = full["suite"].as_array().unwrap();
    assert_eq!(suite.len() as u64, v["traces"].as_u64().unwrap());
    for t in [suite.iter().find(|t| t["conforming"] == json!(true)), suite.iter().find(|t| t["conforming"] == json!(false))] {
        let t = t.unwrap();
        let file = chor.path("trace.json");
        std::fs::write(&file, t.to_string()).unwrap();
        let (code, r) = chor.json(&["run-trace", s(&dir), s(&file)]);
        assert_eq!(code, 0, "{r}");
        assert_eq!(r["engine"]["accepted"], t["conforming"]);
        assert_eq!(r["agree"], json!(true));
    }

    let (code, g) = chor.json(&["conformance", s(&dir), "--paths", "100", "--seed", "7", "--add", "graft"]);
    assert_eq!((code, &g["accuracy"]), (0, &json!(1.0)));
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_http() {
    let chor = Chor::new();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = chor
        .cmd()
        .env("CHOR_PORT", port.to_string())
        .env("CHOR_SCENARIO_DIR", scenarios())
        .arg("serve")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = get(port, "/scenarios") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let page = get(port, "/");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"supply-chain\""));
    assert!(page.unwrap().contains("Participant console"));
}
