use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cas::{Cas, CasError};
use crate::hash::sha256_hex;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("unknown membership `{0}`")]
    UnknownMembership(String),
    #[error("membership `{requester}` may not read message {message_id}")]
    AccessDenied { requester: String, message_id: String },
    #[error("unknown message {0}")]
    NotFound(String),
    #[error(transparent)]
    Cas(#[from] CasError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateMessage {
    pub message_id: String,
    pub sender: String,
    pub recipients: BTreeSet<String>,
    pub content_cid: String,
    pub content_hash: String,
    pub delivered: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct BusState {
    next: u64,
    messages: BTreeMap<String, PrivateMessage>,
}

/// Point-to-point channel for payloads that must stay off-chain. Content goes
/// to the shared store; the bus only controls who may read it back.
#[derive(Debug)]
pub struct PrivateBus {
    cas: Arc<Cas>,
    members: BTreeSet<String>,
    state: RwLock<BusState>,
}

impl PrivateBus {
    pub fn new(cas: Arc<Cas>, members: impl IntoIterator<Item = String>) -> PrivateBus {
        PrivateBus { cas, members: members.into_iter().collect(), state: RwLock::default() }
    }

    /// Stores `payload` for `recipients` and returns `(message_id, sha256(payload))`.
    pub fn send(&self, from: &str, recipients: &BTreeSet<String>, payload: &[u8]) -> Result<(String, String), BusError> {
        for m in std::iter::once(from).chain(recipients.iter().map(String::as_str)) {
            if !self.members.contains(m) {
                return Err(BusError::UnknownMembership(m.to_string()));
            }
        }
        let cid = self.cas.try_put(payload)?;
        let hash = sha256_hex(payload);
        let mut st = self.state.write().expect("bus lock");
        st.next += 1;
        let id = format!("pm-{}", st.next);
        st.messages.insert(
            id.clone(),
            PrivateMessage {
                message_id: id.clone(),
                sender: from.to_string(),
                recipients: recipients.clone(),
                content_cid: cid,
                content_hash: hash.clone(),
                delivered: false,
            },
        );
        Ok((id, hash))
    }

    /// Reads a message back for its sender or one of its recipients.
    pub fn fetch(&self, requester: &str, message_id: &str) -> Result<Vec<u8>, BusError> {
        let mut st = self.state.write().expect("bus lock");
        let msg = st.messages.get_mut(message_id).ok_or_else(|| BusError::NotFound(message_id.to_string()))?;
        let is_recipient = msg.recipients.contains(requester);
        if !is_recipient && msg.sender != requester {
            return Err(BusError::AccessDenied { requester: requester.to_string(), message_id: message_id.to_string() });
        }
        let bytes = self.cas.get(&msg.content_cid)?;
        if is_recipient {
            msg.delivered = true;
        }
        Ok(bytes)
    }

    pub fn message(&self, message_id: &str) -> Option<PrivateMessage> {
        self.state.read().expect("bus lock").messages.get(message_id).cloned()
    }

    pub fn export(&self) -> serde_json::Value {
        serde_json::to_value(&*self.state.read().expect("bus lock")).expect("bus state serializes")
    }

    pub fn restore(&self, snapshot: serde_json::Value) -> Result<(), serde_json::Error> {
        *self.state.write().expect("bus lock") = serde_json::from_value(snapshot)?;
        Ok(())
    }
}
