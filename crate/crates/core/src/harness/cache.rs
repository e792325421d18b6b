//! Content-addressed cache of model calls.
//!
//! Entries live at `<dir>/<first two hex chars>/<sha256>.json` and are
//! published with a temp-file rename, so concurrent readers never see a
//! partial write. Unreadable entries are recomputed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backend::{
    Backend, BackendError, Capabilities, Differentiable, EncodedPrompt, GenerationParams, LabelScores, ModelProfile,
};
use crate::corpus::LabelSpace;
use crate::prompt::{render_chat, ChatPrompt};

/// Canonical JSON: object keys sorted, no whitespace.
pub fn canonical_json(value: &impl Serialize) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("cache values serialize");
    serde_json::to_vec(&v).expect("json value serializes")
}

pub fn cache_key(parts: &impl Serialize) -> String {
    hex::encode(Sha256::digest(canonical_json(parts)))
}

#[derive(Debug, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), ..Default::default() }
    }

    /// Pass-through cache that stores nothing.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    fn read<T: DeserializeOwned>(path: &Path, key: &str) -> Option<T> {
        let bytes = std::fs::read(path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("cache entry {key} is corrupt ({e}); recomputing");
                None
            }
        }
    }

    fn write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        let dir = path.parent().expect("entry has a shard directory");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Returns the stored value for `key`, or runs `producer` and stores its result.
    pub fn cached_call<T, E>(&self, key: &str, producer: impl FnOnce() -> Result<T, E>) -> Result<T, E>
    where
        T: Serialize + DeserializeOwned,
    {
        let Some(path) = self.path_for(key) else {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return producer();
        };
        if let Some(v) = Self::read(&path, key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = producer()?;
        if let Err(e) = Self::write(&path, &canonical_json(&value)) {
            log::warn!("could not write cache entry {key}: {e}");
        }
        Ok(value)
    }
}

/// Backend decorator that caches generation and label scoring.
pub struct CachedBackend<'a> {
    inner: &'a dyn Backend,
    cache: &'a Cache,
}

impl<'a> CachedBackend<'a> {
    pub fn new(inner: &'a dyn Backend, cache: &'a Cache) -> Self {
        Self { inner, cache }
    }
}

impl Backend for CachedBackend<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn profile(&self) -> &ModelProfile {
        self.inner.profile()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn context_window(&self) -> Option<usize> {
        self.inner.context_window()
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.inner.count_tokens(text)
    }

    fn encode(&self, prompt: &ChatPrompt) -> Result<EncodedPrompt, BackendError> {
        self.inner.encode(prompt)
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, BackendError> {
        let rendered = render_chat(prompt, self.profile());
        let key = cache_key(&("generate", self.id(), &rendered, params));
        self.cache.cached_call(&key, || self.inner.generate(prompt, params))
    }

    fn label_distribution(&self, prompt: &ChatPrompt, labels: &LabelSpace) -> Result<LabelScores, BackendError> {
        let rendered = render_chat(prompt, self.profile());
        let key = cache_key(&("labels", self.id(), &rendered, labels.labels()));
        self.cache.cached_call(&key, || self.inner.label_distribution(prompt, labels))
    }

    fn masked_score(&self, prompt: &EncodedPrompt, absent: &[usize], target: &str) -> Result<f64, BackendError> {
        self.inner.masked_score(prompt, absent, target)
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        self.inner.differentiable()
    }
}
