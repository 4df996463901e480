use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::provider::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    model_id: String,
    prompt_sha256: String,
    response: String,
}

/// On-disk response cache keyed by hash(model id, rendered prompt).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model_id: &str, prompt: &str) -> String {
        sha256_hex(&format!("{model_id}\u{0}{prompt}"))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, model_id: &str, prompt: &str) -> Option<String> {
        let text = fs::read_to_string(self.path(&Self::key(model_id, prompt))).ok()?;
        let entry: Entry = serde_json::from_str(&text).ok()?;
        (entry.model_id == model_id).then_some(entry.response)
    }

    /// Writes through a temp file so concurrent readers never see a torn entry.
    pub fn put(&self, model_id: &str, prompt: &str, response: &str) -> io::Result<()> {
        let key = Self::key(model_id, prompt);
        let entry = Entry {
            model_id: model_id.to_string(),
            prompt_sha256: sha256_hex(prompt),
            response: response.to_string(),
        };
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        fs::rename(tmp, self.path(&key))
    }
}
