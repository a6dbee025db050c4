//! The three-page replay corpus and the plain-text manifest format that
//! stands in for HTML parsing.
//!
//! An index file looks like
//!
//! ```text
//! #page doc_plus_assets
//! asset /doc_plus_assets/logo-1.png 15857 image/png
//! #padding
//! ...filler up to the index size...
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest has no '#page' line")]
    MissingPage,
    #[error("manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown page {0:?}")]
    UnknownPage(String),
    #[error("index for {page} needs {need} bytes but its size is {size}")]
    IndexTooSmall { page: String, need: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageClass {
    SingleDoc,
    DocPlusAssets,
    Complex,
}

impl PageClass {
    pub const ALL: [PageClass; 3] = [PageClass::SingleDoc, PageClass::DocPlusAssets, PageClass::Complex];

    pub fn id(self) -> &'static str {
        match self {
            PageClass::SingleDoc => "single_doc",
            PageClass::DocPlusAssets => "doc_plus_assets",
            PageClass::Complex => "complex",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn index_size(self) -> usize {
        match self {
            PageClass::SingleDoc => 1_200,
            PageClass::DocPlusAssets => 18_252,
            PageClass::Complex => 30_000,
        }
    }

    /// (file name, size, content type) of each asset.
    pub fn asset_specs(self) -> Vec<(String, u64, &'static str)> {
        match self {
            PageClass::SingleDoc => Vec::new(),
            PageClass::DocPlusAssets => vec![
                ("logo-1.png".into(), 15_857, "image/png"),
                ("logo-2.png".into(), 2_039, "image/png"),
                ("sprite.svg".into(), 17_229, "image/svg+xml"),
                ("app.js".into(), 614, "application/javascript"),
            ],
            PageClass::Complex => {
                let mut v: Vec<_> = (1..=7)
                    .map(|i| (format!("script-{i}.js"), 40_960, "application/javascript"))
                    .collect();
                v.extend((1..=2).map(|i| (format!("style-{i}.css"), 10_240, "text/css")));
                v
            }
        }
    }
}

impl fmt::Display for PageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub path: String,
    pub size_bytes: Option<u64>,
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageManifest {
    pub page_id: String,
    pub index_path: String,
    pub assets: Vec<Asset>,
}

pub fn index_path(page_id: &str) -> String {
    format!("/{page_id}/index.txt")
}

/// Parses an index document. Lines after `#padding` are ignored, as are
/// blank lines and other `#` comments.
pub fn parse_manifest(index: &[u8]) -> Result<PageManifest, CorpusError> {
    let text = String::from_utf8_lossy(index);
    let mut page: Option<String> = None;
    let mut assets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        let bad = |reason: &str| CorpusError::Malformed {
            line: i + 1,
            reason: reason.to_string(),
        };
        if line == "#padding" {
            break;
        }
        if let Some(rest) = line.strip_prefix("#page") {
            let id = rest.trim();
            if id.is_empty() || !rest.starts_with(' ') {
                return Err(bad("'#page' needs an id"));
            }
            page = Some(id.to_string());
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("asset") {
            return Err(bad("expected 'asset <path>'"));
        }
        if page.is_none() {
            return Err(CorpusError::MissingPage);
        }
        let path = parts.next().ok_or_else(|| bad("asset line without path"))?;
        if !path.starts_with('/') {
            return Err(bad("asset path must start with '/'"));
        }
        let size_bytes = match parts.next() {
            Some(s) => match s.parse::<u64>() {
                Ok(n) if n > 0 => Some(n),
                _ => return Err(bad("asset size must be a positive integer")),
            },
            None => None,
        };
        let content_type = parts.next().map(str::to_string);
        if parts.next().is_some() {
            return Err(bad("trailing fields on asset line"));
        }
        assets.push(Asset {
            path: path.to_string(),
            size_bytes,
            content_type,
        });
    }
    let page_id = page.ok_or(CorpusError::MissingPage)?;
    Ok(PageManifest {
        index_path: index_path(&page_id),
        page_id,
        assets,
    })
}

/// Deterministic body bytes: ChaCha20 keyed by SHA-256(seed || path).
pub fn asset_body(seed: u64, path: &str, size: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(path.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    let mut out = vec![0u8; size];
    rng.fill_bytes(&mut out);
    out
}

fn render_index(class: PageClass, seed: u64, manifest: &PageManifest) -> Result<Vec<u8>, CorpusError> {
    let mut text = format!("#page {}\n", manifest.page_id);
    for a in &manifest.assets {
        text.push_str(&format!(
            "asset {} {} {}\n",
            a.path,
            a.size_bytes.unwrap_or_default(),
            a.content_type.as_deref().unwrap_or("application/octet-stream")
        ));
    }
    text.push_str("#padding\n");
    let size = class.index_size();
    // filler keeps the newline at the very end
    if text.len() + 1 > size {
        return Err(CorpusError::IndexTooSmall {
            page: manifest.page_id.clone(),
            need: text.len() + 1,
            size,
        });
    }
    let mut out = text.into_bytes();
    let filler = asset_body(seed, &manifest.index_path, size - out.len() - 1);
    out.extend(filler.iter().map(|b| b'a' + b % 26));
    out.push(b'\n');
    Ok(out)
}

pub fn page_manifest(class: PageClass) -> PageManifest {
    let id = class.id();
    PageManifest {
        page_id: id.to_string(),
        index_path: index_path(id),
        assets: class
            .asset_specs()
            .into_iter()
            .map(|(name, size, ct)| Asset {
                path: format!("/{id}/{name}"),
                size_bytes: Some(size),
                content_type: Some(ct.to_string()),
            })
            .collect(),
    }
}

/// In-memory corpus: every (served path, bytes, content type).
pub fn corpus_files(seed: u64) -> Result<Vec<(String, Vec<u8>, String)>, CorpusError> {
    let mut files = Vec::new();
    for class in PageClass::ALL {
        let m = page_manifest(class);
        files.push((
            m.index_path.clone(),
            render_index(class, seed, &m)?,
            "text/plain".to_string(),
        ));
        for a in &m.assets {
            let size = a.size_bytes.unwrap_or_default() as usize;
            let ct = a.content_type.clone().unwrap_or_default();
            files.push((a.path.clone(), asset_body(seed, &a.path, size), ct));
        }
    }
    Ok(files)
}

/// Writes the corpus under `root` as `<root>/<page_id>/...` and returns the
/// three manifests.
pub fn generate_corpus(root: &Path, seed: u64) -> Result<Vec<PageManifest>, CorpusError> {
    for (path, bytes, _) in corpus_files(seed)? {
        let file = root.join(path.trim_start_matches('/'));
        let io = |source| CorpusError::Io {
            path: file.clone(),
            source,
        };
        if let Some(dir) = file.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(&file, bytes).map_err(io)?;
    }
    Ok(PageClass::ALL.into_iter().map(page_manifest).collect())
}
