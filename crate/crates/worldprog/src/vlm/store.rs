//! On-disk transcript store: `transcripts/<digest>.json` with images kept once
//! each under `blobs/<sha256 of raw RGB>.png`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use worldprog_core::prompt::{Content, Purpose};

use super::{image_digest, role_tag, ChatRequest, ChatResponse};
use crate::imageio::encode_png;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TranscriptPart {
    Text { role: String, text: String },
    Image { role: String, blob: String, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_digest: String,
    pub purpose: Purpose,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u32,
    pub parts: Vec<TranscriptPart>,
    pub response: ChatResponse,
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    root: PathBuf,
}

impl TranscriptStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("transcripts"))?;
        std::fs::create_dir_all(root.join("blobs"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn transcript_path(&self, digest: &str) -> PathBuf {
        self.root.join("transcripts").join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Transcript>> {
        if digest.is_empty() || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Precondition(format!("malformed digest {digest:?}")));
        }
        match std::fs::read_to_string(self.transcript_path(digest)) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Persists one exchange. An existing transcript for the digest is overwritten.
    pub fn record(&self, request: &ChatRequest, response: &ChatResponse) -> Result<Transcript> {
        let digest = request.digest();
        let mut parts = Vec::with_capacity(request.bundle.parts.len());
        for p in &request.bundle.parts {
            let role = role_tag(p.role).to_string();
            parts.push(match &p.content {
                Content::Text { text } => TranscriptPart::Text { role, text: text.clone() },
                Content::Image { image } => {
                    let blob = image_digest(image);
                    let path = self.root.join("blobs").join(format!("{blob}.png"));
                    if !path.exists() {
                        write_atomic(&path, &encode_png(image)?)?;
                    }
                    TranscriptPart::Image { role, blob, width: image.width, height: image.height }
                }
            });
        }
        let transcript = Transcript {
            request_digest: digest.clone(),
            purpose: request.bundle.purpose,
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            sample_index: request.sample_index,
            parts,
            response: response.clone(),
        };
        let path = self.transcript_path(&digest);
        if path.exists() {
            tracing::warn!(%digest, "overwriting existing transcript");
        }
        write_atomic(&path, serde_json::to_string_pretty(&transcript)?.as_bytes())?;
        Ok(transcript)
    }

    pub fn digests(&self) -> Result<Vec<String>> {
        let mut out: Vec<String> = std::fs::read_dir(self.root.join("transcripts"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Writes via a sibling temp file and rename so readers never see partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::Precondition(format!("{} has no parent", path.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
