//! Scenario bundles on disk:
//!
//! ```text
//! <name>/model.bpmn           choreography
//! <name>/dmn/<brtId>.dmn      one decision model per business rule task
//! <name>/bindings.json        consortium, role bindings and acting users
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{parse_choreography, BpmnError};
use crate::compiler::{compile, CompileError, ContractProgram};
use crate::ledger::{Identity, MembershipSelector};
use crate::model::ChoreographyModel;
use crate::offchain::Cas;
use crate::runtime::{Consortium, Environment, RuntimeError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Bpmn { path: PathBuf, source: BpmnError },
    #[error("{path}: {source}")]
    Bindings { path: PathBuf, source: serde_json::Error },
    #[error("role `{0}` has no actor")]
    NoActor(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub membership: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bindings {
    pub consortium: Consortium,
    pub roles: BTreeMap<String, MembershipSelector>,
    /// The user that plays each role when a scenario is driven automatically.
    #[serde(default)]
    pub actors: BTreeMap<String, Actor>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub name: String,
    pub dir: PathBuf,
    pub bpmn: String,
    pub model: ChoreographyModel,
    /// Business rule task id to DMN XML.
    pub dmn: BTreeMap<String, String>,
    pub bindings: Bindings,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })
}

/// Directory of the scenarios shipped with the repository.
pub fn builtin_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

impl Bundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Bundle, ScenarioError> {
        let dir = dir.as_ref();
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let bpmn_path = dir.join("model.bpmn");
        let bpmn = read(&bpmn_path)?;
        let model = parse_choreography(&bpmn).map_err(|source| ScenarioError::Bpmn { path: bpmn_path, source })?;
        let mut dmn = BTreeMap::new();
        let dmn_dir = dir.join("dmn");
        if dmn_dir.is_dir() {
            let entries = std::fs::read_dir(&dmn_dir).map_err(|source| ScenarioError::Io { path: dmn_dir.clone(), source })?;
            for entry in entries {
                let path = entry.map_err(|source| ScenarioError::Io { path: dmn_dir.clone(), source })?.path();
                if path.extension().is_some_and(|e| e == "dmn") {
                    let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    dmn.insert(id, read(&path)?);
                }
            }
        }
        let bindings_path = dir.join("bindings.json");
        let bindings = serde_json::from_str(&read(&bindings_path)?)
            .map_err(|source| ScenarioError::Bindings { path: bindings_path, source })?;
        Ok(Bundle { name, dir: dir.to_path_buf(), bpmn, model, dmn, bindings })
    }

    /// Loads a shipped scenario by name.
    pub fn builtin(name: &str) -> Result<Bundle, ScenarioError> {
        Bundle::load(builtin_dir().join(name))
    }

    pub fn program(&self) -> Result<ContractProgram, ScenarioError> {
        Ok(compile(&self.model)?)
    }

    /// A fresh environment for the scenario's consortium with the program deployed.
    pub fn environment(&self, env_id: &str) -> Result<(Environment, String), ScenarioError> {
        let mut env = Environment::new(env_id, self.bindings.consortium.clone(), Arc::new(Cas::in_memory()))?;
        let contract = env.deploy(self.program()?);
        Ok((env, contract))
    }

    pub fn actor(&self, env: &Environment, role: &str) -> Result<Identity, ScenarioError> {
        let a = self.bindings.actors.get(role).ok_or_else(|| ScenarioError::NoActor(role.to_string()))?;
        Ok(env.identity(&a.membership, &a.user))
    }

    /// Creates an instance as the actor of the first role.
    pub fn create_instance(&self, env: &mut Environment, contract: &str) -> Result<String, ScenarioError> {
        let creator = self
            .bindings
            .actors
            .keys()
            .next()
            .ok_or_else(|| ScenarioError::NoActor("<any>".into()))?;
        let id = self.actor(env, creator)?;
        Ok(env.create_instance(&id, contract, &self.bindings.roles, &self.dmn)?)
    }
}

/// Every bundle under `root`, sorted by name.
pub fn load_all(root: impl AsRef<Path>) -> Result<Vec<Bundle>, ScenarioError> {
    let root = root.as_ref();
    let entries = std::fs::read_dir(root).map_err(|source| ScenarioError::Io { path: root.to_path_buf(), source })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("model.bpmn").is_file())
        .collect();
    dirs.sort();
    dirs.into_iter().map(Bundle::load).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn shipped_scenarios_load_and_compile() {
        let all = load_all(builtin_dir()).unwrap();
        assert!(all.len() >= 5);
        for b in &all {
            let report = validate_model(&b.model);
            assert!(report.is_ok(), "{}: {report:?}", b.name);
            let p = b.program().unwrap();
            for brt in p.brt_slots.keys() {
                assert!(b.dmn.contains_key(brt), "{} lacks dmn for {brt}", b.name);
            }
            for role in &p.role_slots {
                assert!(b.bindings.roles.contains_key(role), "{}: unbound {role}", b.name);
                assert!(b.bindings.actors.contains_key(role), "{}: no actor for {role}", b.name);
            }
        }
    }

    #[test]
    fn supply_chain_shape() {
        let b = Bundle::builtin("supply-chain").unwrap();
        let c = b.model.census();
        assert_eq!((c.tasks, c.messages, c.gateways, c.brts), (13, 13, 4, 1));
        let w = Bundle::builtin("supply-chain-weber").unwrap().model.census();
        assert_eq!((w.tasks, w.messages, w.gateways, w.brts), (11, 11, 3, 1));
    }
}
