use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use crate::hash::{is_hex_digest, sha256_hex};

#[derive(Debug, Error)]
pub enum CasError {
    #[error("no content stored under {0}")]
    NotFound(String),
    #[error("`{0}` is not a content identifier")]
    BadCid(String),
    #[error("store I/O failed: {0}")]
    Io(#[from] io::Error),
}

/// Content-addressed store. The identifier of a blob is the SHA-256 of its
/// bytes. Blobs live in memory and, when a directory is configured, also on
/// disk under `<dir>/<first two hex chars>/<cid>`.
#[derive(Debug, Default)]
pub struct Cas {
    blobs: RwLock<BTreeMap<String, Vec<u8>>>,
    dir: Option<PathBuf>,
}

impl Cas {
    pub fn in_memory() -> Cas {
        Cas::default()
    }

    /// Opens a directory-backed store, loading every blob already on disk.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Cas, CasError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut blobs = BTreeMap::new();
        for shard in fs::read_dir(&dir)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if is_hex_digest(&name) {
                    blobs.insert(name, fs::read(entry.path())?);
                }
            }
        }
        Ok(Cas { blobs: RwLock::new(blobs), dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(dir: &Path, cid: &str) -> PathBuf {
        dir.join(&cid[..2]).join(cid)
    }

    /// Stores `bytes` and returns their CID. Storing the same bytes again is a no-op.
    pub fn put(&self, bytes: &[u8]) -> String {
        self.try_put(bytes).expect("content store write")
    }

    pub fn try_put(&self, bytes: &[u8]) -> Result<String, CasError> {
        let cid = sha256_hex(bytes);
        let mut blobs = self.blobs.write().expect("cas lock");
        if !blobs.contains_key(&cid) {
            if let Some(dir) = &self.dir {
                let path = Cas::path_for(dir, &cid);
                fs::create_dir_all(path.parent().expect("shard dir"))?;
                fs::write(&path, bytes)?;
            }
            blobs.insert(cid.clone(), bytes.to_vec());
        }
        Ok(cid)
    }

    /// Returns the stored bytes as they are. Integrity is checked by whoever
    /// holds the expected digest, not here.
    pub fn get(&self, cid: &str) -> Result<Vec<u8>, CasError> {
        if !is_hex_digest(cid) {
            return Err(CasError::BadCid(cid.to_string()));
        }
        self.blobs
            .read()
            .expect("cas lock")
            .get(cid)
            .cloned()
            .ok_or_else(|| CasError::NotFound(cid.to_string()))
    }

    pub fn contains(&self, cid: &str) -> bool {
        self.blobs.read().expect("cas lock").contains_key(cid)
    }

    /// True when the bytes under `cid` still hash to `cid`.
    pub fn verify(&self, cid: &str) -> Result<bool, CasError> {
        Ok(sha256_hex(self.get(cid)?) == cid)
    }

    pub fn len(&self) -> usize {
        self.blobs.read().expect("cas lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cids(&self) -> Vec<String> {
        self.blobs.read().expect("cas lock").keys().cloned().collect()
    }

    /// Replaces the bytes under an existing CID without rehashing. Exists to
    /// simulate storage tampering.
    pub fn overwrite_raw(&self, cid: &str, bytes: &[u8]) -> Result<(), CasError> {
        let mut blobs = self.blobs.write().expect("cas lock");
        let slot = blobs.get_mut(cid).ok_or_else(|| CasError::NotFound(cid.to_string()))?;
        if let Some(dir) = &self.dir {
            fs::write(Cas::path_for(dir, cid), bytes)?;
        }
        *slot = bytes.to_vec();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_idempotent() {
        let cas = Cas::in_memory();
        assert_eq!(cas.put(b"abc"), cas.put(b"abc"));
        assert_eq!(cas.len(), 1);
        assert_eq!(cas.put(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn unknown_cid_not_found() {
        let cas = Cas::in_memory();
        let cid = sha256_hex(b"missing");
        assert!(matches!(cas.get(&cid), Err(CasError::NotFound(_))));
        assert!(matches!(cas.get("zz"), Err(CasError::BadCid(_))));
    }

    #[test]
    fn directory_layout_and_reload() {
        let tmp = tempfile::tempdir().unwrap();
        let cid = {
            let cas = Cas::open(tmp.path()).unwrap();
            cas.put(b"persisted")
        };
        assert!(tmp.path().join(&cid[..2]).join(&cid).is_file());
        let cas = Cas::open(tmp.path()).unwrap();
        assert_eq!(cas.get(&cid).unwrap(), b"persisted");
    }

    #[test]
    fn tamper_is_detectable() {
        let cas = Cas::in_memory();
        let cid = cas.put(b"original");
        assert!(cas.verify(&cid).unwrap());
        cas.overwrite_raw(&cid, b"forged").unwrap();
        assert_eq!(cas.get(&cid).unwrap(), b"forged");
        assert!(!cas.verify(&cid).unwrap());
    }
}
