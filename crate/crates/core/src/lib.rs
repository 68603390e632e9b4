//! Blockchain-based choreography execution: model parsing and validation,
//! decision evaluation, contract compilation, a simulated permissioned ledger,
//! off-chain services, the runtime orchestrator and a conformance harness.

pub mod bpmn;
pub mod dmn;
pub mod hash;
pub mod model;
pub mod ledger;
pub mod offchain;
pub mod compiler;
pub mod runtime;
pub mod scenario;
pub mod conformance;
pub mod store;
