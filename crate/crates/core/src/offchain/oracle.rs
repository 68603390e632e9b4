use std::collections::BTreeSet;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::cas::{Cas, CasError};
use crate::hash::is_hex_digest;
use crate::ledger::{Contract, Identity, LedgerEnv, Reject, RejectCode, TxContext, TxReceipt};

/// Name under which [`OracleContract`] is deployed.
pub const ORACLE_CONTRACT: &str = "oracle";
pub const SAVE_EVENT: &str = "OracleSave";
pub const FETCH_EVENT: &str = "OracleFetch";
/// Value of the `failure` callback argument when the requested content is absent.
pub const FAILURE_NOT_FOUND: &str = "NotFound";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    Save,
    Fetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestStatus {
    Pending,
    Done,
    Failed,
}

/// Contract operation the executor calls with fetched content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Callback {
    pub contract: String,
    pub op: String,
    pub args: Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleRequest {
    pub request_id: String,
    pub kind: RequestKind,
    pub status: RequestStatus,
    /// Record key for saves, CID for fetches.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callback: Option<Callback>,
}

pub fn request_key(id: &str) -> String {
    format!("oracle/requests/{id}")
}

pub fn record_key(key: &str) -> String {
    format!("oracle/records/{key}")
}

fn next_request_id(ctx: &mut TxContext<'_>) -> String {
    let n = ctx.get("oracle/requests/next").and_then(|v| v.as_u64()).unwrap_or(0) + 1;
    ctx.put("oracle/requests/next", n);
    format!("req-{n}")
}

/// Asks the executor to store `content` off-chain and record its CID under
/// `oracle/records/<key>`. Called from inside a contract.
pub fn request_save(ctx: &mut TxContext<'_>, key: &str, content: &[u8], topic: &str) -> String {
    let id = next_request_id(ctx);
    ctx.put(
        request_key(&id),
        OracleRequest { request_id: id.clone(), kind: RequestKind::Save, status: RequestStatus::Pending, target: key.into(), callback: None },
    );
    ctx.emit(SAVE_EVENT, topic, json!({ "requestId": id, "key": key, "content": B64.encode(content) }));
    id
}

/// Asks the executor to read `cid` off-chain and deliver it to `callback`.
pub fn request_fetch(ctx: &mut TxContext<'_>, cid: &str, callback: Callback, topic: &str) -> String {
    let id = next_request_id(ctx);
    ctx.put(
        request_key(&id),
        OracleRequest {
            request_id: id.clone(),
            kind: RequestKind::Fetch,
            status: RequestStatus::Pending,
            target: cid.into(),
            callback: Some(callback.clone()),
        },
    );
    ctx.emit(FETCH_EVENT, topic, json!({ "requestId": id, "cid": cid, "callback": callback }));
    id
}

/// Loads a pending request, failing when it is unknown or already closed.
pub fn open_request(ctx: &mut TxContext<'_>, id: &str, kind: RequestKind) -> Result<OracleRequest, Reject> {
    let req: OracleRequest = ctx
        .get_as(&request_key(id))?
        .ok_or_else(|| Reject::new(RejectCode::RequestClosed, format!("unknown request {id}")))?;
    if req.kind != kind || req.status != RequestStatus::Pending {
        return Err(Reject::new(RejectCode::RequestClosed, format!("request {id} is not a pending {kind:?}")));
    }
    Ok(req)
}

pub fn close_request(ctx: &mut TxContext<'_>, mut req: OracleRequest, status: RequestStatus) {
    req.status = status;
    ctx.put(request_key(&req.request_id), req);
}

fn require_system(ctx: &TxContext<'_>) -> Result<(), Reject> {
    if ctx.invoker().is_system() {
        Ok(())
    } else {
        Err(Reject::new(RejectCode::AccessDenied, "oracle writes require the system membership"))
    }
}

/// On-chain half of the save path: records the CID an executor obtained.
pub struct OracleContract;

impl Contract for OracleContract {
    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Json) -> Result<(), Reject> {
        match op {
            "recordCid" => {
                require_system(ctx)?;
                let arg = |n: &str| {
                    args.get(n).and_then(Json::as_str).ok_or_else(|| Reject::new(RejectCode::BadArgs, format!("missing `{n}`")))
                };
                let (id, cid) = (arg("requestId")?, arg("cid")?);
                if !is_hex_digest(cid) {
                    return Err(Reject::new(RejectCode::BadArgs, "cid is not a digest"));
                }
                let req = open_request(ctx, id, RequestKind::Save)?;
                ctx.put(record_key(&req.target), json!({ "cid": cid, "requestId": id }));
                ctx.emit("OracleRecorded", &req.target, json!({ "requestId": id, "key": req.target, "cid": cid }));
                close_request(ctx, req, RequestStatus::Done);
                Ok(())
            }
            other => Err(Reject::new(RejectCode::UnknownOperation, other)),
        }
    }
}

/// Read-only view of on-chain data for off-chain callers.
pub fn outbound_query(ledger: &LedgerEnv, key: &str) -> Option<Json> {
    ledger.query_state(key).cloned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum OracleAction {
    Saved { request_id: String, cid: String, receipt: TxReceipt },
    Delivered { request_id: String, cid: String, found: bool, receipt: TxReceipt },
}

/// Off-chain executor. Walks the event log from its cursor and serves every
/// save and fetch request once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleExecutor {
    cursor: usize,
    processed: BTreeSet<String>,
}

impl OracleExecutor {
    pub fn new() -> OracleExecutor {
        OracleExecutor::default()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Handles every event emitted since the last step.
    pub fn step(&mut self, ledger: &mut LedgerEnv, cas: &Cas) -> Vec<OracleAction> {
        let mut actions = Vec::new();
        while self.cursor < ledger.events().len() {
            let record = ledger.events()[self.cursor].clone();
            self.cursor += 1;
            let p = &record.event.payload;
            let Some(id) = p.get("requestId").and_then(Json::as_str).map(str::to_string) else { continue };
            let kind = match record.event.name.as_str() {
                SAVE_EVENT => RequestKind::Save,
                FETCH_EVENT => RequestKind::Fetch,
                _ => continue,
            };
            if self.processed.contains(&id) || !is_pending(ledger, &id) {
                continue;
            }
            self.processed.insert(id.clone());
            match kind {
                RequestKind::Save => {
                    let Some(content) = p.get("content").and_then(Json::as_str).and_then(|c| B64.decode(c).ok()) else {
                        continue;
                    };
                    let cid = cas.put(&content);
                    let receipt = ledger.submit(
                        &Identity::system(),
                        ORACLE_CONTRACT,
                        "recordCid",
                        json!({ "requestId": id, "cid": cid }),
                        None,
                    );
                    actions.push(OracleAction::Saved { request_id: id, cid, receipt });
                }
                RequestKind::Fetch => {
                    let cid = p.get("cid").and_then(Json::as_str).unwrap_or_default().to_string();
                    let Some(cb) = p.get("callback").cloned().and_then(|c| serde_json::from_value::<Callback>(c).ok()) else {
                        continue;
                    };
                    let mut args = cb.args.clone();
                    args["requestId"] = json!(id);
                    let content = match cas.get(&cid) {
                        Ok(bytes) => Some(bytes),
                        Err(CasError::NotFound(_)) | Err(CasError::BadCid(_)) => {
                            args["failure"] = json!(FAILURE_NOT_FOUND);
                            None
                        }
                        Err(CasError::Io(e)) => {
                            args["failure"] = json!(e.to_string());
                            None
                        }
                    };
                    let receipt = ledger.submit(&Identity::system(), &cb.contract, &cb.op, args, content.as_deref());
                    actions.push(OracleAction::Delivered { request_id: id, cid, found: content.is_some(), receipt });
                }
            }
        }
        actions
    }

    /// Steps until no new events appear.
    pub fn pump(&mut self, ledger: &mut LedgerEnv, cas: &Cas) -> Vec<OracleAction> {
        let mut all = Vec::new();
        loop {
            let batch = self.step(ledger, cas);
            if batch.is_empty() {
                return all;
            }
            all.extend(batch);
        }
    }
}

fn is_pending(ledger: &LedgerEnv, id: &str) -> bool {
    ledger
        .query_state(&request_key(id))
        .and_then(|v| serde_json::from_value::<OracleRequest>(v.clone()).ok())
        .is_some_and(|r| r.status == RequestStatus::Pending)
}
