//! Directory persistence for consortiums and environments, so separate
//! processes can pick up where the last one stopped.
//!
//! Layout under the root:
//!
//! ```text
//! cas/<xx>/<cid>                  content store
//! consortiums/<id>.json
//! envs/<env>/env.json             consortium and deployed programs
//! envs/<env>/ledger.jsonl         transaction log, one canonical entry per line
//! envs/<env>/bus.json             private message registry
//! envs/<env>/executor.json        oracle executor cursor
//! ```
//!
//! World state is never written: it is rebuilt by replaying the log.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::ContractProgram;
use crate::ledger::{export_jsonl, parse_jsonl, ChainError, LedgerError};
use crate::offchain::{Cas, CasError};
use crate::runtime::{Consortium, Environment, RuntimeError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("unknown consortium `{0}`")]
    UnknownConsortium(String),
    #[error("`{0}` already exists")]
    Exists(String),
    #[error("`{0}` is not a valid identifier")]
    BadId(String),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error("stored ledger: {0}")]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Serialize, Deserialize)]
struct EnvFile {
    consortium: Consortium,
    programs: Vec<ContractProgram>,
}

pub struct EnvStore {
    root: PathBuf,
    cas: Arc<Cas>,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadId(id.to_string()))
    }
}

fn read(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), StoreError> {
    let io = |source| StoreError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    // Write then rename, so a crash never leaves a half-written file behind.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    serde_json::from_str(&read(path)?).map_err(|source| StoreError::Json { path: path.to_path_buf(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), StoreError> {
    write(path, &serde_json::to_string_pretty(value).expect("store files serialize"))
}

impl EnvStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<EnvStore, StoreError> {
        let root = root.into();
        let cas = Arc::new(Cas::open(root.join("cas"))?);
        Ok(EnvStore { root, cas })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cas(&self) -> Arc<Cas> {
        self.cas.clone()
    }

    fn consortium_path(&self, id: &str) -> PathBuf {
        self.root.join("consortiums").join(format!("{id}.json"))
    }

    fn env_dir(&self, id: &str) -> PathBuf {
        self.root.join("envs").join(id)
    }

    pub fn save_consortium(&self, c: &Consortium) -> Result<(), StoreError> {
        check_id(&c.id)?;
        write_json(&self.consortium_path(&c.id), c)
    }

    pub fn consortium(&self, id: &str) -> Result<Consortium, StoreError> {
        check_id(id)?;
        let path = self.consortium_path(id);
        if !path.exists() {
            return Err(StoreError::UnknownConsortium(id.to_string()));
        }
        read_json(&path)
    }

    pub fn has_env(&self, id: &str) -> bool {
        self.env_dir(id).join("env.json").exists()
    }

    pub fn env_ids(&self) -> Vec<String> {
        let Ok(dir) = fs::read_dir(self.root.join("envs")) else { return Vec::new() };
        let mut ids: Vec<String> = dir
            .filter_map(Result::ok)
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|id| self.has_env(id))
            .collect();
        ids.sort();
        ids
    }

    /// A new, empty environment for a stored consortium, saved straight away.
    pub fn create_env(&self, env_id: &str, consortium_id: &str) -> Result<Environment, StoreError> {
        check_id(env_id)?;
        if self.has_env(env_id) {
            return Err(StoreError::Exists(env_id.to_string()));
        }
        let env = Environment::new(env_id, self.consortium(consortium_id)?, self.cas.clone())?;
        self.save(&env)?;
        Ok(env)
    }

    pub fn save(&self, env: &Environment) -> Result<(), StoreError> {
        let id = env.ledger.env_id();
        check_id(id)?;
        let dir = self.env_dir(id);
        let programs = env.programs().values().map(|p| (**p).clone()).collect();
        write_json(&dir.join("env.json"), &EnvFile { consortium: env.consortium().clone(), programs })?;
        write(&dir.join("ledger.jsonl"), &export_jsonl(env.ledger.log()))?;
        write_json(&dir.join("bus.json"), &env.bus.export())?;
        write_json(&dir.join("executor.json"), &env.executor)
    }

    /// Rebuilds an environment: deploys its programs, then verifies and
    /// replays the stored log.
    pub fn load(&self, env_id: &str) -> Result<Environment, StoreError> {
        check_id(env_id)?;
        if !self.has_env(env_id) {
            return Err(StoreError::UnknownEnv(env_id.to_string()));
        }
        let dir = self.env_dir(env_id);
        let file: EnvFile = read_json(&dir.join("env.json"))?;
        let mut env = Environment::new(env_id, file.consortium, self.cas.clone())?;
        for p in file.programs {
            env.deploy(p);
        }
        let log = parse_jsonl(&read(&dir.join("ledger.jsonl"))?)?;
        env.ledger.import(log)?;
        let bus_path = dir.join("bus.json");
        env.bus
            .restore(read_json(&bus_path)?)
            .map_err(|source| StoreError::Json { path: bus_path, source })?;
        env.executor = read_json(&dir.join("executor.json"))?;
        Ok(env)
    }
}
