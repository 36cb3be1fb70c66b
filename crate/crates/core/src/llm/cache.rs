//! Content-addressed response cache.
//!
//! The key is the SHA-256 of (model_id, temperature, max_tokens, prompt);
//! entries live at `<dir>/<first two hex>/<key>.txt` as a one-line
//! `<key> <model_id>` header followed by the raw response text. Writes go
//! through a temp file and an atomic rename, so concurrent writers for one
//! key settle on last-writer-wins while readers never see a partial entry.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{Backend, CompletionOutcome, CompletionRequest, LlmError};

pub struct CacheBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Wrap `inner` with a cache rooted at `dir` (created if absent).
pub fn with_cache<B: Backend>(inner: B, dir: impl Into<PathBuf>) -> Result<CacheBackend<B>, LlmError> {
    let dir = dir.into();
    std::fs::create_dir_all(&dir).map_err(|e| LlmError::CacheIo {
        path: dir.display().to_string(),
        source: e,
    })?;
    Ok(CacheBackend {
        inner,
        dir,
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    })
}

pub fn cache_key(request: &CompletionRequest) -> String {
    let cfg = &request.config;
    let mut hasher = Sha256::new();
    hasher.update(cfg.model_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(cfg.temperature.to_string().as_bytes());
    hasher.update(b"\n");
    hasher.update(cfg.max_tokens.to_string().as_bytes());
    hasher.update(b"\n");
    hasher.update(request.prompt.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl<B> CacheBackend<B> {
    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.txt"))
    }

    fn read_entry(&self, path: &Path, key: &str, model_id: &str) -> Result<String, LlmError> {
        let corrupt = |reason: &str| LlmError::CacheCorrupt {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let content = std::fs::read_to_string(path).map_err(|e| LlmError::CacheIo {
            path: path.display().to_string(),
            source: e,
        })?;
        let (header, text) = content.split_once('\n').ok_or_else(|| corrupt("no header line"))?;
        let (stored_key, stored_model) =
            header.split_once(' ').ok_or_else(|| corrupt("header missing model id"))?;
        if stored_key != key {
            return Err(corrupt("header key does not match entry key"));
        }
        if stored_model != model_id {
            return Err(corrupt("header model id does not match request"));
        }
        Ok(text.to_string())
    }

    fn write_entry(&self, path: &Path, key: &str, model_id: &str, text: &str) -> Result<(), LlmError> {
        static TMP_SEQ: AtomicU64 = AtomicU64::new(0);
        let io_err = |p: &Path| {
            let path = p.display().to_string();
            move |e| LlmError::CacheIo {
                path: path.clone(),
                source: e,
            }
        };
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, format!("{key} {model_id}\n{text}")).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }
}

impl<B: Backend> Backend for CacheBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        let key = cache_key(request);
        let path = self.entry_path(&key);
        if path.exists() {
            let text = self.read_entry(&path, &key, &request.config.model_id)?;
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(CompletionOutcome {
                text,
                attempts: 0,
                from_cache: true,
            });
        }
        let outcome = self.inner.complete(request)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        self.write_entry(&path, &key, &request.config.model_id, &outcome.text)?;
        Ok(outcome)
    }
}
