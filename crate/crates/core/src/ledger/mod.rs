//! Simulated permissioned ledger.
//!
//! Each non-system membership runs one peer. A submitted transaction is
//! executed by every peer against the same committed pre-state; the resulting
//! read/write sets are compared and the transaction commits only when a strict
//! majority of peers produced the same outcome. Committed transactions form a
//! SHA-256 hash chain. World state is a pure function of that chain.

mod abac;
mod chain;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{canonical_digest, sha256_hex};
use crate::model::Value;

pub use abac::{abac_check, identity_attribute, AccessDecision, DenyReason, MembershipSelector};
pub use chain::{export_jsonl, parse_jsonl, replay, verify_chain, ChainError, ChainFault, GENESIS_DIGEST};

/// Membership reserved for oracle executors. It has no peer and is the only
/// identity allowed to write oracle results back on-chain.
pub const SYSTEM_MEMBERSHIP: &str = "system";

/// Simulated certificate: membership, user and the attributes embedded in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Identity {
    pub membership_id: String,
    pub user_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

impl Identity {
    pub fn new(membership: impl Into<String>, user: impl Into<String>) -> Identity {
        Identity { membership_id: membership.into(), user_id: user.into(), attributes: BTreeMap::new() }
    }

    pub fn system() -> Identity {
        Identity::new(SYSTEM_MEMBERSHIP, "oracle-executor")
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: Value) -> Identity {
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn is_system(&self) -> bool {
        self.membership_id == SYSTEM_MEMBERSHIP
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Membership {
    pub id: String,
    pub org_id: String,
    #[serde(default)]
    pub system: bool,
}

impl Membership {
    pub fn new(id: impl Into<String>, org: impl Into<String>) -> Membership {
        Membership { id: id.into(), org_id: org.into(), system: false }
    }

    pub fn system() -> Membership {
        Membership { id: SYSTEM_MEMBERSHIP.into(), org_id: SYSTEM_MEMBERSHIP.into(), system: true }
    }

    pub fn peer(&self) -> Option<String> {
        (!self.system).then(|| format!("peer0.{}", self.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectCode {
    UnknownMembership,
    UnknownContract,
    UnknownOperation,
    UnknownInstance,
    BadArgs,
    NotEnabled,
    NotWaiting,
    AccessDenied,
    PayloadInvalid,
    HashMismatch,
    DigestMismatch,
    DecisionError,
    SignatureMismatch,
    NoBranch,
    RequestClosed,
    EndorsementMismatch,
}

/// Why a transaction did not commit.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code:?}: {detail}")]
pub struct Reject {
    pub code: RejectCode,
    pub detail: String,
}

impl Reject {
    pub fn new(code: RejectCode, detail: impl Into<String>) -> Reject {
        Reject { code, detail: detail.into() }
    }
}

/// A world-state entry with the sequence number of the transaction that last wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versioned {
    pub value: serde_json::Value,
    pub version: u64,
}

pub type WorldState = BTreeMap<String, Versioned>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmittedEvent {
    pub contract: String,
    pub name: String,
    /// Subscription topic; instance id for instance events.
    pub topic: String,
    pub payload: serde_json::Value,
}

/// An event in the env-wide log, positioned by its committing transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: u64,
    pub seq: u64,
    pub tx_id: String,
    #[serde(flatten)]
    pub event: EmittedEvent,
}

/// What one peer's execution produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RwSet {
    pub reads: BTreeMap<String, Option<u64>>,
    pub writes: BTreeMap<String, Option<serde_json::Value>>,
    pub events: Vec<EmittedEvent>,
}

pub type PeerOutcome = Result<RwSet, Reject>;

/// Execution context handed to a contract. Reads see the committed pre-state
/// overlaid with this transaction's own writes.
pub struct TxContext<'a> {
    state: &'a WorldState,
    invoker: &'a Identity,
    transient: Option<&'a [u8]>,
    contract: &'a str,
    rw: RwSet,
}

impl<'a> TxContext<'a> {
    fn new(state: &'a WorldState, invoker: &'a Identity, contract: &'a str, transient: Option<&'a [u8]>) -> Self {
        TxContext {
            state,
            invoker,
            transient,
            contract,
            rw: RwSet { reads: BTreeMap::new(), writes: BTreeMap::new(), events: Vec::new() },
        }
    }

    pub fn invoker(&self) -> &Identity {
        self.invoker
    }

    /// Private data that travels with the transaction but never reaches the log.
    pub fn transient(&self) -> Option<&[u8]> {
        self.transient
    }

    pub fn get(&mut self, key: &str) -> Option<serde_json::Value> {
        if let Some(w) = self.rw.writes.get(key) {
            return w.clone();
        }
        let entry = self.state.get(key);
        self.rw.reads.entry(key.to_string()).or_insert(entry.map(|v| v.version));
        entry.map(|v| v.value.clone())
    }

    pub fn get_as<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, Reject> {
        self.get(key)
            .map(|v| serde_json::from_value(v).map_err(|e| Reject::new(RejectCode::BadArgs, format!("state `{key}`: {e}"))))
            .transpose()
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("state value serializes");
        self.rw.writes.insert(key.into(), Some(v));
    }

    pub fn delete(&mut self, key: impl Into<String>) {
        self.rw.writes.insert(key.into(), None);
    }

    pub fn emit(&mut self, name: impl Into<String>, topic: impl Into<String>, payload: serde_json::Value) {
        self.rw.events.push(EmittedEvent {
            contract: self.contract.to_string(),
            name: name.into(),
            topic: topic.into(),
            payload,
        });
    }
}

pub trait Contract: Send + Sync {
    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &serde_json::Value) -> Result<(), Reject>;
}

/// Alters a peer's execution result, to simulate a faulty or malicious peer.
pub trait FaultInjector: Send + Sync {
    fn apply(&self, peer: &str, outcome: &mut PeerOutcome);
}

/// Replaces the first written value with a peer-specific forgery, so two
/// flipping peers disagree with each other as well as with honest peers.
#[derive(Debug, Clone, Copy, Default)]
pub struct WriteFlipper;

impl FaultInjector for WriteFlipper {
    fn apply(&self, peer: &str, outcome: &mut PeerOutcome) {
        if let Ok(rw) = outcome {
            if let Some((key, value)) = rw.writes.iter_mut().next() {
                let original = serde_json::to_string(value).unwrap_or_default();
                *value = Some(serde_json::Value::String(format!("forged:{}", sha256_hex(format!("{peer}|{key}|{original}")))));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommittedTx {
    pub seq: u64,
    pub tx_id: String,
    pub invoker: Identity,
    pub contract: String,
    pub op: String,
    pub args: serde_json::Value,
    pub args_digest: String,
    pub reads: BTreeMap<String, Option<u64>>,
    pub writes: BTreeMap<String, Option<serde_json::Value>>,
    pub events: Vec<EmittedEvent>,
    pub prev_digest: String,
    pub digest: String,
}

impl CommittedTx {
    /// Digest over the canonical encoding of every field except `digest`.
    pub fn compute_digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("tx serializes");
        v.as_object_mut().expect("tx is an object").remove("digest");
        canonical_digest(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedTx {
    pub tx_id: String,
    pub invoker: Identity,
    pub contract: String,
    pub op: String,
    pub args: serde_json::Value,
    pub reason: Reject,
}

/// Outcome of one submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxReceipt {
    pub tx_id: String,
    pub seq: Option<u64>,
    pub events: Vec<EmittedEvent>,
    pub reject: Option<Reject>,
    /// Size of the largest group of peers that produced the same outcome.
    pub agreeing: usize,
    pub peers: usize,
}

impl TxReceipt {
    pub fn committed(&self) -> bool {
        self.reject.is_none()
    }

    pub fn into_result(self) -> Result<TxReceipt, Reject> {
        match &self.reject {
            Some(r) => Err(r.clone()),
            None => Ok(self),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("duplicate membership `{0}`")]
    DuplicateMembership(String),
    #[error("an environment needs at least one peer-bearing membership")]
    NoPeers,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Filter for audit queries. Instance and element ids are read from the
/// transaction arguments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogFilter {
    pub instance_id: Option<String>,
    pub element_id: Option<String>,
    pub op: Option<String>,
    pub invoker: Option<String>,
}

impl LogFilter {
    pub fn matches(&self, tx: &CommittedTx) -> bool {
        let arg = |name: &str| tx.args.get(name).and_then(|v| v.as_str());
        // Creation carries no instance id argument but writes under it.
        let of_instance = |i: &str| arg("instanceId") == Some(i) || tx.writes.keys().any(|k| k.strip_prefix(i).is_some_and(|r| r.starts_with('/')));
        self.instance_id.as_deref().is_none_or(of_instance)
            && self.element_id.as_deref().is_none_or(|e| arg("elementId") == Some(e))
            && self.op.as_deref().is_none_or(|o| tx.op == o)
            && self.invoker.as_deref().is_none_or(|m| tx.invoker.membership_id == m)
    }
}

pub struct LedgerEnv {
    env_id: String,
    memberships: Vec<Membership>,
    contracts: BTreeMap<String, Arc<dyn Contract>>,
    faults: BTreeMap<String, Arc<dyn FaultInjector>>,
    log: Vec<CommittedTx>,
    rejected: Vec<RejectedTx>,
    state: WorldState,
    events: Vec<EventRecord>,
}

impl LedgerEnv {
    /// Creates an empty environment. The system membership is added when absent.
    pub fn new(env_id: impl Into<String>, memberships: Vec<Membership>) -> Result<LedgerEnv, LedgerError> {
        let mut all: Vec<Membership> = Vec::new();
        for m in memberships {
            if all.iter().any(|o| o.id == m.id) {
                return Err(LedgerError::DuplicateMembership(m.id));
            }
            all.push(m);
        }
        if !all.iter().any(|m| m.id == SYSTEM_MEMBERSHIP) {
            all.push(Membership::system());
        }
        if all.iter().all(|m| m.system) {
            return Err(LedgerError::NoPeers);
        }
        Ok(LedgerEnv {
            env_id: env_id.into(),
            memberships: all,
            contracts: BTreeMap::new(),
            faults: BTreeMap::new(),
            log: Vec::new(),
            rejected: Vec::new(),
            state: WorldState::new(),
            events: Vec::new(),
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn memberships(&self) -> &[Membership] {
        &self.memberships
    }

    pub fn membership(&self, id: &str) -> Option<&Membership> {
        self.memberships.iter().find(|m| m.id == id)
    }

    /// Peers in membership order, paired with their membership id.
    pub fn peers(&self) -> Vec<(String, String)> {
        self.memberships.iter().filter_map(|m| m.peer().map(|p| (m.id.clone(), p))).collect()
    }

    pub fn deploy(&mut self, name: impl Into<String>, contract: Arc<dyn Contract>) {
        self.contracts.insert(name.into(), contract);
    }

    pub fn has_contract(&self, name: &str) -> bool {
        self.contracts.contains_key(name)
    }

    pub fn set_fault(&mut self, membership: impl Into<String>, injector: Arc<dyn FaultInjector>) {
        self.faults.insert(membership.into(), injector);
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn query_state(&self, key: &str) -> Option<&serde_json::Value> {
        self.state.get(key).map(|v| &v.value)
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn scan_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a serde_json::Value)> + 'a {
        self.state.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix)).map(|(k, v)| (k, &v.value))
    }

    pub fn log(&self) -> &[CommittedTx] {
        &self.log
    }

    pub fn rejected(&self) -> &[RejectedTx] {
        &self.rejected
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn query_log(&self, filter: &LogFilter) -> Vec<&CommittedTx> {
        self.log.iter().filter(|tx| filter.matches(tx)).collect()
    }

    fn head_digest(&self) -> String {
        self.log.last().map_or_else(|| GENESIS_DIGEST.to_string(), |t| t.digest.clone())
    }

    pub fn submit(
        &mut self,
        invoker: &Identity,
        contract: &str,
        op: &str,
        args: serde_json::Value,
        transient: Option<&[u8]>,
    ) -> TxReceipt {
        let peers = self.peers();
        let (outcome, agreeing) = self.endorse(invoker, contract, op, &args, transient, &peers);
        match outcome {
            Ok(rw) => {
                let seq = self.log.len() as u64;
                let mut tx = CommittedTx {
                    seq,
                    tx_id: format!("tx-{seq}"),
                    invoker: invoker.clone(),
                    contract: contract.to_string(),
                    op: op.to_string(),
                    args_digest: canonical_digest(&args),
                    args,
                    reads: rw.reads,
                    writes: rw.writes,
                    events: rw.events,
                    prev_digest: self.head_digest(),
                    digest: String::new(),
                };
                tx.digest = tx.compute_digest();
                self.apply(&tx);
                let receipt = TxReceipt {
                    tx_id: tx.tx_id.clone(),
                    seq: Some(seq),
                    events: tx.events.clone(),
                    reject: None,
                    agreeing,
                    peers: peers.len(),
                };
                self.log.push(tx);
                receipt
            }
            Err(reason) => {
                let tx_id = format!("rejected-{}", self.rejected.len());
                self.rejected.push(RejectedTx {
                    tx_id: tx_id.clone(),
                    invoker: invoker.clone(),
                    contract: contract.to_string(),
                    op: op.to_string(),
                    args,
                    reason: reason.clone(),
                });
                TxReceipt { tx_id, seq: None, events: Vec::new(), reject: Some(reason), agreeing, peers: peers.len() }
            }
        }
    }

    fn endorse(
        &self,
        invoker: &Identity,
        contract_name: &str,
        op: &str,
        args: &serde_json::Value,
        transient: Option<&[u8]>,
        peers: &[(String, String)],
    ) -> (PeerOutcome, usize) {
        if self.membership(&invoker.membership_id).is_none() {
            return (Err(Reject::new(RejectCode::UnknownMembership, &invoker.membership_id)), 0);
        }
        let Some(contract) = self.contracts.get(contract_name) else {
            return (Err(Reject::new(RejectCode::UnknownContract, contract_name)), 0);
        };

        let mut groups: Vec<(PeerOutcome, usize)> = Vec::new();
        for (membership, peer) in peers {
            let mut ctx = TxContext::new(&self.state, invoker, contract_name, transient);
            let mut outcome = contract.invoke(&mut ctx, op, args).map(|()| ctx.rw);
            if let Some(f) = self.faults.get(membership) {
                f.apply(peer, &mut outcome);
            }
            match groups.iter_mut().find(|(o, _)| *o == outcome) {
                Some((_, n)) => *n += 1,
                None => groups.push((outcome, 1)),
            }
        }
        let (best, n) = groups.into_iter().max_by_key(|(_, n)| *n).expect("at least one peer");
        if n * 2 > peers.len() {
            (best, n)
        } else {
            (
                Err(Reject::new(
                    RejectCode::EndorsementMismatch,
                    format!("largest agreeing group has {n} of {} peers", peers.len()),
                )),
                n,
            )
        }
    }

    fn apply(&mut self, tx: &CommittedTx) {
        chain::apply_writes(&mut self.state, tx);
        for e in &tx.events {
            self.events.push(EventRecord {
                index: self.events.len() as u64,
                seq: tx.seq,
                tx_id: tx.tx_id.clone(),
                event: e.clone(),
            });
        }
    }

    /// Loads a verified transaction log into an empty environment.
    pub fn import(&mut self, log: Vec<CommittedTx>) -> Result<(), LedgerError> {
        verify_chain(&log)?;
        self.log.clear();
        self.rejected.clear();
        self.state.clear();
        self.events.clear();
        for tx in log {
            self.apply(&tx);
            self.log.push(tx);
        }
        Ok(())
    }
}
