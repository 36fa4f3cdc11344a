//! Recorded request/response pairs on disk:
//! `<root>/<client-id>/<digest>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use predex::{Error, Result};
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(root: impl AsRef<Path>, client_id: &str) -> Result<Self> {
        if client_id.is_empty() || client_id.contains(['/', '\\']) || client_id.starts_with('.') {
            return Err(Error::InvalidInput(format!("unusable client id {client_id:?}")));
        }
        Ok(FixtureStore { dir: root.as_ref().join(client_id) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Value>> {
        let path = self.path(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Protocol(format!("corrupt fixture {}: {e}", path.display())))
    }

    /// Like [`get`](Self::get) but a missing entry is a protocol error.
    pub fn require(&self, digest: &str) -> Result<Value> {
        self.get(digest)?.ok_or_else(|| {
            Error::Protocol(format!("fixture miss: {} has no entry {digest}", self.dir.display()))
        })
    }

    /// Write atomically (temp file, then rename).
    pub fn put(&self, digest: &str, value: &Value) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(digest);
        let tmp = self.dir.join(format!(".{digest}.{}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string_pretty(value).expect("json values serialize").as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn put_get_and_miss() {
        let tmp = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(tmp.path(), "m").unwrap();
        assert!(store.get("abc").unwrap().is_none());
        let err = store.require("abc").unwrap_err();
        assert!(err.to_string().contains("fixture miss"));
        store.put("abc", &json!({"label": 1})).unwrap();
        assert_eq!(store.require("abc").unwrap(), json!({"label": 1}));
        assert!(tmp.path().join("m/abc.json").exists());
        assert!(FixtureStore::new(tmp.path(), "../x").is_err());
    }
}
