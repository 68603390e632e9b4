//! HTTP service over consortiums, environments and instances, with a
//! server-sent event stream of committed ledger events and the participant
//! console as static assets.
//!
//! Every state change runs under one lock per server, which is the ordering
//! point for all environments it hosts.

mod api;
mod error;
mod events;
pub mod identity;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::routing::{get, post};
use axum::Router;
use chor_core::ledger::EventRecord;
use chor_core::offchain::Cas;
use chor_core::runtime::{Consortium, Environment};
use chor_core::store::{EnvStore, StoreError};
use serde::Serialize;
use tokio::sync::broadcast;

pub use error::ApiError;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Persist consortiums, environments and content here.
    pub store_dir: Option<PathBuf>,
    /// Scenario bundles that contracts and instances may be created from by name.
    pub scenario_dir: Option<PathBuf>,
}

/// A ledger event as streamed: its environment plus the record.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Published {
    pub env: String,
    #[serde(flatten)]
    pub record: EventRecord,
}

pub(crate) struct Hosted {
    pub env: Environment,
    /// Events already broadcast.
    pub published: usize,
}

pub(crate) struct Registry {
    pub consortiums: BTreeMap<String, Consortium>,
    pub envs: BTreeMap<String, Hosted>,
    pub store: Option<EnvStore>,
    pub cas: Arc<Cas>,
    pub next_env: u64,
}

#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Mutex<Registry>>,
    pub(crate) events: broadcast::Sender<Published>,
    pub(crate) scenario_dir: Option<PathBuf>,
}

impl AppState {
    /// Opens the store, if any, and hosts every environment found in it.
    pub fn new(config: ServerConfig) -> Result<AppState, StoreError> {
        let store = config.store_dir.map(EnvStore::open).transpose()?;
        let cas = store.as_ref().map_or_else(|| Arc::new(Cas::in_memory()), EnvStore::cas);
        let mut envs = BTreeMap::new();
        let mut consortiums = BTreeMap::new();
        if let Some(s) = &store {
            for id in s.env_ids() {
                let env = s.load(&id)?;
                consortiums.insert(env.consortium().id.clone(), env.consortium().clone());
                let published = env.ledger.events().len();
                envs.insert(id, Hosted { env, published });
            }
        }
        let (events, _) = broadcast::channel(1024);
        let registry = Registry { consortiums, envs, store, cas, next_env: 0 };
        Ok(AppState { inner: Arc::new(Mutex::new(registry)), events, scenario_dir: config.scenario_dir })
    }

    /// The content store shared by all hosted environments.
    pub fn cas(&self) -> Arc<Cas> {
        self.lock().cas.clone()
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, Registry> {
        // A panic while holding the lock leaves the registry as it was after
        // the last completed call, so keep serving.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Registry {
    /// Broadcasts events committed since the last call and persists the environment.
    pub(crate) fn settle(&mut self, env_id: &str, tx: &broadcast::Sender<Published>) -> Result<(), ApiError> {
        let Some(h) = self.envs.get_mut(env_id) else { return Ok(()) };
        for record in &h.env.ledger.events()[h.published..] {
            // No subscribers is fine.
            let _ = tx.send(Published { env: env_id.to_string(), record: record.clone() });
        }
        h.published = h.env.ledger.events().len();
        if let Some(s) = &self.store {
            s.save(&h.env)?;
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(api::console_page))
        .route("/console/app.js", get(api::console_script))
        .route("/scenarios", get(api::list_scenarios))
        .route("/consortiums", post(api::create_consortium))
        .route("/cas", post(api::cas_put))
        .route("/cas/{cid}", get(api::cas_get))
        .route("/envs", post(api::create_env).get(api::list_envs))
        .route("/envs/{e}/contracts", post(api::deploy_contract).get(api::list_contracts))
        .route("/envs/{e}/contracts/{c}", get(api::get_contract))
        .route("/envs/{e}/instances", post(api::create_instance).get(api::list_instances))
        .route("/envs/{e}/instances/{i}", get(api::get_instance))
        .route("/envs/{e}/instances/{i}/tasks/{t}/message", post(api::send_message))
        .route("/envs/{e}/instances/{i}/tasks/{t}/confirm", post(api::confirm_message))
        .route("/envs/{e}/instances/{i}/tasks/{t}/payload", get(api::fetch_payload))
        .route("/envs/{e}/instances/{i}/brts/{b}/trigger", post(api::trigger_brt))
        .route("/envs/{e}/audit", get(api::audit))
        .route("/envs/{e}/events", get(events::stream))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
