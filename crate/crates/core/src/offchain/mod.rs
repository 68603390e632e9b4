//! Off-chain services: the content-addressed store, the private data bus and
//! the oracle executor that bridges events and stored content.

mod bus;
mod cas;
pub mod oracle;

pub use bus::{BusError, PrivateBus, PrivateMessage};
pub use cas::{Cas, CasError};
pub use oracle::{outbound_query, OracleAction, OracleContract, OracleExecutor, ORACLE_CONTRACT};
