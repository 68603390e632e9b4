//! Instance lifecycle on top of the ledger: consortium setup, deployment,
//! instance creation and the message, confirmation and decision round-trips.
//!
//! Every state change goes through [`LedgerEnv::submit`]; off-chain work
//! (private send and fetch, oracle pumping) happens around the transactions.

mod contract;
mod view;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::compiler::{ContractProgram, OP_BRT, OP_CONFIRM, OP_CREATE_INSTANCE, OP_MESSAGE};
use crate::dmn::dmn_digest;
use crate::hash::{canonical_json, is_hex_digest};
use crate::ledger::{
    Identity, LedgerEnv, LedgerError, Membership, MembershipSelector, Reject, TxReceipt, SYSTEM_MEMBERSHIP,
};
use crate::model::{Value, ValueType};
use crate::offchain::{BusError, Cas, OracleAction, OracleContract, OracleExecutor, PrivateBus, ORACLE_CONTRACT};

pub use contract::{
    binding_key, ctx_key, dmn_record_name, meta_key, state_key, DmnBinding, InstanceMeta, MessageRecord, ProgramContract,
};
pub use view::{instance_view, DmnView, ElementView, EnabledOp, InstanceView, ANY_PARTICIPANT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organization {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub membership: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

/// Organizations, their memberships in this consortium, and enrolled users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consortium {
    pub id: String,
    #[serde(default)]
    pub organizations: Vec<Organization>,
    pub memberships: Vec<Membership>,
    #[serde(default)]
    pub users: Vec<User>,
}

impl Consortium {
    pub fn user(&self, membership: &str, user: &str) -> Option<&User> {
        self.users.iter().find(|u| u.membership == membership && u.id == user)
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("file field `{field}` refers to {cid}, which is not in the content store")]
    MissingContent { field: String, cid: String },
    #[error("transaction {tx_id} rejected: {reject}")]
    Rejected { tx_id: String, reject: Reject },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl RuntimeError {
    pub fn reject(&self) -> Option<&Reject> {
        match self {
            RuntimeError::Rejected { reject, .. } => Some(reject),
            _ => None,
        }
    }
}

fn committed(r: TxReceipt) -> Result<TxReceipt, RuntimeError> {
    match r.reject {
        Some(reject) => Err(RuntimeError::Rejected { tx_id: r.tx_id, reject }),
        None => Ok(r),
    }
}

/// Result of triggering a business rule task: the trigger transaction plus
/// whatever the oracle executor did afterwards (normally the callback).
#[derive(Debug, Clone, Serialize)]
pub struct BrtOutcome {
    pub trigger: TxReceipt,
    pub oracle: Vec<OracleAction>,
}

impl BrtOutcome {
    /// The callback transaction, when the executor delivered one.
    pub fn callback(&self) -> Option<&TxReceipt> {
        self.oracle.iter().rev().find_map(|a| match a {
            OracleAction::Delivered { receipt, .. } => Some(receipt),
            _ => None,
        })
    }
}

/// A consortium environment: ledger, off-chain store, private bus and oracle executor.
pub struct Environment {
    pub ledger: LedgerEnv,
    pub cas: Arc<Cas>,
    pub bus: PrivateBus,
    pub executor: OracleExecutor,
    /// Pump the oracle executor after every committed transaction.
    pub auto_pump: bool,
    consortium: Consortium,
    programs: BTreeMap<String, Arc<ContractProgram>>,
}

impl Environment {
    pub fn new(env_id: impl Into<String>, consortium: Consortium, cas: Arc<Cas>) -> Result<Environment, RuntimeError> {
        let mut ledger = LedgerEnv::new(env_id, consortium.memberships.clone())?;
        ledger.deploy(ORACLE_CONTRACT, Arc::new(OracleContract));
        let bus = PrivateBus::new(cas.clone(), ledger.memberships().iter().filter(|m| !m.system).map(|m| m.id.clone()));
        Ok(Environment {
            ledger,
            cas,
            bus,
            executor: OracleExecutor::new(),
            auto_pump: true,
            consortium,
            programs: BTreeMap::new(),
        })
    }

    pub fn consortium(&self) -> &Consortium {
        &self.consortium
    }

    /// Identity for a membership/user pair, with the attributes enrolled for
    /// that user (none when the user is not enrolled).
    pub fn identity(&self, membership: &str, user: &str) -> Identity {
        let mut id = Identity::new(membership, user);
        if let Some(u) = self.consortium.user(membership, user) {
            id.attributes = u.attributes.clone();
        }
        id
    }

    /// Registers a compiled program; returns the contract name it is invocable under.
    pub fn deploy(&mut self, program: ContractProgram) -> String {
        let name = format!("{}@{}", program.model_id, &program.digest()[..12]);
        let program = Arc::new(program);
        self.ledger.deploy(name.clone(), Arc::new(ProgramContract::new(name.clone(), program.clone())));
        self.programs.insert(name.clone(), program);
        name
    }

    pub fn programs(&self) -> &BTreeMap<String, Arc<ContractProgram>> {
        &self.programs
    }

    pub fn program(&self, contract: &str) -> Option<&Arc<ContractProgram>> {
        self.programs.get(contract)
    }

    pub fn instance_meta(&self, inst: &str) -> Result<InstanceMeta, RuntimeError> {
        self.ledger
            .query_state(&meta_key(inst))
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| RuntimeError::UnknownInstance(inst.to_string()))
    }

    pub fn instances(&self) -> Vec<String> {
        self.ledger
            .state()
            .keys()
            .filter_map(|k| k.strip_suffix("/meta"))
            .filter(|k| !k.contains('/'))
            .map(str::to_string)
            .collect()
    }

    fn program_of(&self, inst: &str) -> Result<(InstanceMeta, Arc<ContractProgram>), RuntimeError> {
        let meta = self.instance_meta(inst)?;
        let program = self.programs.get(&meta.contract).cloned().ok_or_else(|| RuntimeError::UnknownContract(meta.contract.clone()))?;
        Ok((meta, program))
    }

    pub fn pump(&mut self) -> Vec<OracleAction> {
        self.executor.pump(&mut self.ledger, &self.cas)
    }

    fn after_commit(&mut self) -> Vec<OracleAction> {
        if self.auto_pump {
            self.pump()
        } else {
            Vec::new()
        }
    }

    /// Creates an instance with its role bindings and one DMN document per
    /// business rule task. The DMN content is stored off-chain through the
    /// save oracle; only its digest and CID are kept on-chain.
    pub fn create_instance(
        &mut self,
        identity: &Identity,
        contract: &str,
        bindings: &BTreeMap<String, MembershipSelector>,
        dmn: &BTreeMap<String, String>,
    ) -> Result<String, RuntimeError> {
        if !self.programs.contains_key(contract) {
            return Err(RuntimeError::UnknownContract(contract.to_string()));
        }
        let digests: BTreeMap<&String, String> = dmn.iter().map(|(k, v)| (k, dmn_digest(v))).collect();
        let args = json!({ "bindings": bindings, "dmn": digests });
        let content = canonical_json(dmn);
        let r = committed(self.ledger.submit(identity, contract, OP_CREATE_INSTANCE, args, Some(&content)))?;
        let inst = r
            .events
            .iter()
            .find(|e| e.name == "InstanceCreated")
            .and_then(|e| e.payload["instanceId"].as_str())
            .expect("creation emits the instance id")
            .to_string();
        self.after_commit();
        Ok(inst)
    }

    fn recipients(&self, inst: &str, role: &str) -> BTreeSet<String> {
        let sel: Option<MembershipSelector> =
            self.ledger.query_state(&binding_key(inst, role)).and_then(|v| serde_json::from_value(v.clone()).ok());
        match sel {
            Some(s) if s.predicate.is_none() => s.memberships.into_iter().collect(),
            // Attribute-bound roles may be played by any membership.
            _ => self
                .ledger
                .memberships()
                .iter()
                .filter(|m| !m.system && m.id != SYSTEM_MEMBERSHIP)
                .map(|m| m.id.clone())
                .collect(),
        }
    }

    /// Sends the payload privately to the recipient role, then records its
    /// hash on-chain through the task's Message operation.
    pub fn send_message(
        &mut self,
        identity: &Identity,
        inst: &str,
        task: &str,
        payload: &serde_json::Map<String, Json>,
    ) -> Result<TxReceipt, RuntimeError> {
        let (meta, program) = self.program_of(inst)?;
        let (_, recipient, message) =
            program.task_roles(task).ok_or_else(|| RuntimeError::UnknownElement(task.to_string()))?;
        // The contract can only check the CID format; presence is checked here.
        for f in program.message_schemas[message].fields.iter().filter(|f| f.ty == ValueType::File) {
            if let Some(cid) = payload.get(&f.name).and_then(Json::as_str) {
                if is_hex_digest(cid) && !self.cas.contains(cid) {
                    return Err(RuntimeError::MissingContent { field: f.name.clone(), cid: cid.to_string() });
                }
            }
        }
        let bytes = canonical_json(payload);
        let to = self.recipients(inst, recipient);
        let (message_id, hash) = self.bus.send(&identity.membership_id, &to, &bytes)?;
        let args = json!({ "instanceId": inst, "elementId": task, "messageId": message_id, "hash": hash });
        let r = committed(self.ledger.submit(identity, &meta.contract, OP_MESSAGE, args, Some(&bytes)))?;
        self.after_commit();
        Ok(r)
    }

    /// Fetches the payload as the caller and submits it for hash verification.
    pub fn confirm_message(&mut self, identity: &Identity, inst: &str, task: &str) -> Result<TxReceipt, RuntimeError> {
        let (meta, program) = self.program_of(inst)?;
        program.task_roles(task).ok_or_else(|| RuntimeError::UnknownElement(task.to_string()))?;
        let payload = self.fetch_payload(identity, inst, task).ok();
        let args = json!({ "instanceId": inst, "elementId": task });
        let r = committed(self.ledger.submit(identity, &meta.contract, OP_CONFIRM, args, payload.as_deref()))?;
        self.after_commit();
        Ok(r)
    }

    /// Reads the private payload recorded for a task, as `identity` would see it.
    pub fn fetch_payload(&self, identity: &Identity, inst: &str, task: &str) -> Result<Vec<u8>, RuntimeError> {
        let rec: MessageRecord = self
            .ledger
            .query_state(&state_key(inst, task, "message"))
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| RuntimeError::UnknownElement(format!("{task} has no message")))?;
        Ok(self.bus.fetch(&identity.membership_id, &rec.message_id)?)
    }

    /// Triggers a business rule task; with auto-pump on, the executor then
    /// fetches the DMN and delivers the callback.
    pub fn trigger_brt(&mut self, identity: &Identity, inst: &str, brt: &str) -> Result<BrtOutcome, RuntimeError> {
        let (meta, program) = self.program_of(inst)?;
        if !program.brt_slots.contains_key(brt) {
            return Err(RuntimeError::UnknownElement(brt.to_string()));
        }
        let args = json!({ "instanceId": inst, "elementId": brt });
        let trigger = committed(self.ledger.submit(identity, &meta.contract, OP_BRT, args, None))?;
        let oracle = self.after_commit();
        Ok(BrtOutcome { trigger, oracle })
    }

    pub fn instance_view(&self, inst: &str) -> Result<InstanceView, RuntimeError> {
        let (_, program) = self.program_of(inst)?;
        instance_view(self.ledger.state(), &program, inst).ok_or_else(|| RuntimeError::UnknownInstance(inst.to_string()))
    }
}
