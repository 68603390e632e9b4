use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CommittedTx, Versioned, WorldState};
use crate::hash::canonical_json;

/// `prev_digest` of the first transaction.
pub const GENESIS_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", content = "detail", rename_all = "kebab-case")]
pub enum ChainFault {
    Unparseable(String),
    NotCanonical,
    DigestMismatch,
    BrokenLink,
    SequenceGap,
}

/// First position at which a log fails verification.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("log entry {index} is invalid: {fault:?}")]
pub struct ChainError {
    pub index: usize,
    pub fault: ChainFault,
}

/// One canonical JSON object per line.
pub fn export_jsonl(log: &[CommittedTx]) -> String {
    let mut out = String::new();
    for tx in log {
        out.push_str(std::str::from_utf8(&canonical_json(tx)).expect("JSON is UTF-8"));
        out.push('\n');
    }
    out
}

/// Parses an exported log, requiring each line to be exactly the canonical
/// encoding of its entry, then verifies the chain.
pub fn parse_jsonl(text: &str) -> Result<Vec<CommittedTx>, ChainError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut log = Vec::new();
    if body.is_empty() {
        return Ok(log);
    }
    for (index, line) in body.split('\n').enumerate() {
        let tx: CommittedTx = serde_json::from_str(line)
            .map_err(|e| ChainError { index, fault: ChainFault::Unparseable(e.to_string()) })?;
        if canonical_json(&tx) != line.as_bytes() {
            return Err(ChainError { index, fault: ChainFault::NotCanonical });
        }
        log.push(tx);
    }
    verify_chain(&log)?;
    Ok(log)
}

pub fn verify_chain(log: &[CommittedTx]) -> Result<(), ChainError> {
    let mut prev = GENESIS_DIGEST;
    for (index, tx) in log.iter().enumerate() {
        let fault = if tx.seq != index as u64 {
            Some(ChainFault::SequenceGap)
        } else if tx.prev_digest != prev {
            Some(ChainFault::BrokenLink)
        } else if tx.compute_digest() != tx.digest {
            Some(ChainFault::DigestMismatch)
        } else {
            None
        };
        if let Some(fault) = fault {
            return Err(ChainError { index, fault });
        }
        prev = &tx.digest;
    }
    Ok(())
}

pub(super) fn apply_writes(state: &mut WorldState, tx: &CommittedTx) {
    for (key, value) in &tx.writes {
        match value {
            Some(v) => {
                state.insert(key.clone(), Versioned { value: v.clone(), version: tx.seq });
            }
            None => {
                state.remove(key);
            }
        }
    }
}

/// World state obtained by applying every write set in log order to an empty state.
pub fn replay(log: &[CommittedTx]) -> WorldState {
    let mut state = WorldState::new();
    for tx in log {
        apply_writes(&mut state, tx);
    }
    state
}
