//! Artifact writer. Every file starts with the tool version, the config hash
//! and the seed, and nothing time-dependent is written, so reruns are
//! byte-identical.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

pub struct Output {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path, provenance: Provenance) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// CSV with a leading `#` provenance line.
    pub fn csv<F>(&mut self, name: &str, body: F) -> io::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        let p = &self.provenance;
        writeln!(w, "# {} {} config_sha256={} seed={}", p.tool, p.version, p.config_sha256, p.seed)?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> io::Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        let doc = Document {
            provenance: &self.provenance,
            result,
        };
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex() {
        let a = Provenance::new("x = 1", 7);
        assert_eq!(a.config_sha256.len(), 64);
        assert_eq!(a.config_sha256, Provenance::new("x = 1", 7).config_sha256);
        assert_ne!(a.config_sha256, Provenance::new("x = 2", 7).config_sha256);
    }
}
