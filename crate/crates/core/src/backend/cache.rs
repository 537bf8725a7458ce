//! On-disk replay cache: `<dir>/<first-2-hex>/<fingerprint>.reply` holds the
//! verbatim reply, `.meta` a JSON sidecar.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::prompt::EvalRequest;
use crate::task::AspectKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyMeta {
    pub fingerprint: String,
    pub model_name: String,
    pub instance_id: String,
    pub aspect: AspectKind,
    pub timestamp_unix_ms: u64,
    pub latency_ms: u64,
}

#[derive(Debug)]
pub struct ReplayCache {
    root: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl ReplayCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(&self, fingerprint: &str) -> PathBuf {
        let shard = fingerprint.get(..2).unwrap_or("xx");
        self.root.join(shard).join(fingerprint)
    }

    pub fn reply_path(&self, fingerprint: &str) -> PathBuf {
        self.stem(fingerprint).with_extension("reply")
    }

    pub fn meta_path(&self, fingerprint: &str) -> PathBuf {
        self.stem(fingerprint).with_extension("meta")
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        self.reply_path(fingerprint).is_file()
    }

    /// Cached reply text and its sidecar, or `None` on a miss.
    pub fn get(&self, fingerprint: &str) -> io::Result<Option<(String, ReplyMeta)>> {
        let text = match std::fs::read_to_string(self.reply_path(fingerprint)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let meta = std::fs::read(self.meta_path(fingerprint))?;
        let meta: ReplyMeta = serde_json::from_slice(&meta).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(Some((text, meta)))
    }

    /// Stores a reply. Writes go through a temp file and rename, one writer at a time.
    pub fn put(
        &self,
        fingerprint: &str,
        text: &str,
        model_name: &str,
        request: &EvalRequest,
        latency_ms: u64,
    ) -> io::Result<()> {
        let meta = ReplyMeta {
            fingerprint: fingerprint.to_string(),
            model_name: model_name.to_string(),
            instance_id: request.instance_id.clone(),
            aspect: request.aspect,
            timestamp_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            latency_ms,
        };
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let reply_path = self.reply_path(fingerprint);
        if let Some(parent) = reply_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.write_atomic(&self.meta_path(fingerprint), &meta_json)?;
        self.write_atomic(&reply_path, text.as_bytes())
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::record_for;
    use crate::prompt::{ShotMode, TemplateSet};
    use crate::task::TaskKind;

    #[test]
    fn layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let req = TemplateSet::builtin()
            .assemble_request(&record_for(TaskKind::TextGuidedGeneration, "t"), AspectKind::Pq, ShotMode::ZeroShot, None)
            .unwrap();
        let fp = "abcdef0123";
        assert!(cache.get(fp).unwrap().is_none());
        cache.put(fp, "reply text\nwith newline", "gpt", &req, 40).unwrap();
        assert!(dir.path().join("ab").join("abcdef0123.reply").is_file());
        assert!(dir.path().join("ab").join("abcdef0123.meta").is_file());
        let (text, meta) = cache.get(fp).unwrap().unwrap();
        assert_eq!(text, "reply text\nwith newline");
        assert_eq!(meta.model_name, "gpt");
        assert_eq!(meta.instance_id, "t");
        assert_eq!(meta.aspect, AspectKind::Pq);
        assert_eq!(meta.latency_ms, 40);
        let leftovers: Vec<_> = std::fs::read_dir(dir.path().join("ab"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
