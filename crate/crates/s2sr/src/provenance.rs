//! Provenance sidecars: `key: value` text recording what produced an
//! artifact. They hold only inputs and parameters (no timestamps or host
//! names), so identical runs write identical sidecars.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bin_io::{read_file, write_file};
use crate::error::Result;
use crate::raster::Manifest;

pub const PROVENANCE_FORMAT: &str = "s2sr-provenance 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance { entries: vec![("command".into(), command.into())] }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = format!("format: {PROVENANCE_FORMAT}\n");
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}: {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&read_file(path)?))
}

/// Digest over a manifest and, in manifest order, every band file it lists.
/// Independent of where the scene lives on disk.
pub fn sha256_scene(manifest_path: &Path) -> Result<String> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let mut hasher = Sha256::new();
    hasher.update(manifest.render().as_bytes());
    for e in &manifest.entries {
        hasher.update(read_file(&dir.join(&e.path))?);
    }
    Ok(hex(&hasher.finalize()))
}
