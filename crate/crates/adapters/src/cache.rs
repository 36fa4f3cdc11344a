//! Memoized predictions keyed by `(handle id, input digest)`, optionally
//! persisted as an append-only JSON-lines file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use predex::model::InputModel;
use predex::{Error, Prediction, Result};
use serde::{Deserialize, Serialize};

use crate::digest::request_digest;
use crate::wire::WireInput;

#[derive(Serialize, Deserialize)]
struct Record {
    handle: String,
    digest: String,
    prediction: Prediction,
}

#[derive(Default)]
pub struct PredictionCache {
    entries: RwLock<HashMap<(String, String), Prediction>>,
    log: Option<Mutex<File>>,
}

impl PredictionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load `path` if it exists and append new entries to it. A torn last
    /// line (from an interrupted write) is dropped from the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        let mut keep_len = None;
        let mut needs_newline = false;
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
            needs_newline = std::fs::metadata(path)?.len() > 0 && !std::fs::read(path)?.ends_with(b"\n");
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(r) => {
                        entries.insert((r.handle, r.digest), r.prediction);
                    }
                    Err(e) if i == last => {
                        log::warn!("{}: dropping torn last line: {e}", path.display());
                        keep_len = Some(lines[..i].iter().map(|l| l.len() as u64 + 1).sum());
                    }
                    Err(e) => {
                        return Err(Error::Parse { offset: lines[..i].iter().map(|l| l.len() + 1).sum(), message: e.to_string() })
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if let Some(n) = keep_len {
            file.set_len(n)?;
        } else if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(PredictionCache { entries: RwLock::new(entries), log: Some(Mutex::new(file)) })
    }

    pub fn get(&self, handle: &str, digest: &str) -> Option<Prediction> {
        self.entries.read().get(&(handle.to_string(), digest.to_string())).cloned()
    }

    /// Store an entry; a key already present keeps its first value.
    pub fn insert(&self, handle: &str, digest: &str, p: Prediction) -> Result<()> {
        let key = (handle.to_string(), digest.to_string());
        let mut entries = self.entries.write();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(log) = &self.log {
            let rec = Record { handle: key.0.clone(), digest: key.1.clone(), prediction: p.clone() };
            let mut line = serde_json::to_string(&rec).expect("records serialize");
            line.push('\n');
            log.lock().write_all(line.as_bytes())?;
        }
        entries.insert(key, p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a model so each distinct input reaches it at most once.
pub struct CachedModel<M> {
    handle_id: String,
    inner: M,
    cache: Arc<PredictionCache>,
    fetch: Mutex<()>,
}

impl<M> CachedModel<M> {
    pub fn new(handle_id: impl Into<String>, inner: M, cache: Arc<PredictionCache>) -> Self {
        CachedModel { handle_id: handle_id.into(), inner, cache, fetch: Mutex::new(()) }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<I, M> InputModel<I> for CachedModel<M>
where
    I: WireInput + Clone + Sync,
    M: InputModel<I>,
{
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>> {
        let digests = inputs
            .iter()
            .map(|i| i.to_wire().map(|v| request_digest(&v)))
            .collect::<Result<Vec<_>>>()?;
        let lookup = |ds: &[String]| ds.iter().map(|d| self.cache.get(&self.handle_id, d)).collect::<Vec<_>>();
        let mut out = lookup(&digests);
        if out.iter().any(Option::is_none) {
            // one fetch at a time, so concurrent callers never send the same key twice
            let _guard = self.fetch.lock();
            out = lookup(&digests);
            let mut seen = std::collections::HashSet::new();
            let todo: Vec<usize> =
                (0..inputs.len()).filter(|&i| out[i].is_none() && seen.insert(digests[i].as_str())).collect();
            if !todo.is_empty() {
                let batch: Vec<I> = todo.iter().map(|&i| inputs[i].clone()).collect();
                let fresh = self.inner.predict_batch(&batch)?;
                if fresh.len() != batch.len() {
                    return Err(Error::Protocol(format!("{} outputs for {} inputs", fresh.len(), batch.len())));
                }
                for (&i, p) in todo.iter().zip(fresh) {
                    self.cache.insert(&self.handle_id, &digests[i], p)?;
                }
                out = lookup(&digests);
            }
        }
        Ok(out.into_iter().map(|p| p.expect("cached above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl InputModel<String> for Counting {
        fn predict_batch(&self, inputs: &[String]) -> Result<Vec<Prediction>> {
            self.0.fetch_add(inputs.len(), Ordering::SeqCst);
            Ok(inputs.iter().map(|s| Prediction::label_only(s.len() % 2)).collect())
        }
    }

    fn calls(m: &CachedModel<Counting>) -> usize {
        m.inner().0.load(Ordering::SeqCst)
    }

    #[test]
    fn identical_inputs_hit_backend_once() {
        let cache = Arc::new(PredictionCache::in_memory());
        let m = CachedModel::new("a", Counting(AtomicUsize::new(0)), cache.clone());
        let out = m.predict_batch(&["x".to_string(), "x".to_string()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(calls(&m), 1);
        m.predict_batch(&["x".to_string()]).unwrap();
        assert_eq!(calls(&m), 1);

        let other = CachedModel::new("b", Counting(AtomicUsize::new(0)), cache);
        other.predict_batch(&["x".to_string()]).unwrap();
        assert_eq!(calls(&other), 1);
    }

    #[test]
    fn persisted_cache_needs_no_calls_on_rerun() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("cache.jsonl");
        let inputs: Vec<String> = ["a", "bb", "ccc"].iter().map(|s| s.to_string()).collect();
        let first = {
            let m = CachedModel::new("h", Counting(AtomicUsize::new(0)), Arc::new(PredictionCache::open(&path).unwrap()));
            let out = m.predict_batch(&inputs).unwrap();
            assert_eq!(calls(&m), 3);
            out
        };
        let m = CachedModel::new("h", Counting(AtomicUsize::new(0)), Arc::new(PredictionCache::open(&path).unwrap()));
        assert_eq!(m.predict_batch(&inputs).unwrap(), first);
        assert_eq!(calls(&m), 0);
    }

    #[test]
    fn torn_last_line_is_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("cache.jsonl");
        std::fs::write(&path, "{\"handle\":\"h\",\"digest\":\"d\",\"prediction\":{\"label\":1}}\n{\"handle\":").unwrap();
        let c = PredictionCache::open(&path).unwrap();
        assert_eq!(c.get("h", "d"), Some(Prediction::label_only(1)));
        assert_eq!(c.len(), 1);
        c.insert("h", "e", Prediction::label_only(0)).unwrap();
        drop(c);
        assert_eq!(PredictionCache::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn concurrent_callers_share_fetches() {
        use rayon::prelude::*;
        let m = CachedModel::new("h", Counting(AtomicUsize::new(0)), Arc::new(PredictionCache::in_memory()));
        (0..32).into_par_iter().for_each(|i| {
            m.predict_batch(&[format!("k{}", i % 4)]).unwrap();
        });
        assert_eq!(calls(&m), 4);
    }
}
