//! Output directories and their run manifests.
//!
//! ```text
//! latent-probe-manifest v1
//! tool=latent-probe 0.1.0
//! command=perturb
//! [config]
//! alpha=3
//! ...
//! [notes]
//! patch_origin=fixed per sample
//! [inputs]
//! <sha256>  data/index.csv
//! [outputs]
//! <sha256>  report.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::settings::Snapshot;

pub const MANIFEST_HEADER: &str = "latent-probe-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Fails unless `dir` is absent or empty, or `force` is set.
pub fn check_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    let occupied = match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) if e.kind() == std::io::ErrorKind::NotADirectory => {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())))
        }
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", dir.display()))),
    };
    if occupied && !force {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to replace its contents",
            dir.display()
        )));
    }
    Ok(())
}

/// Files of one run. The directory is only touched once [`Run::start`] is
/// called, after every input has been read and every result computed.
pub struct Run {
    dir: PathBuf,
    snapshot: Snapshot,
    notes: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn new(dir: &Path, snapshot: Snapshot) -> Self {
        Self {
            dir: dir.to_path_buf(),
            snapshot,
            notes: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.snapshot.values.insert(key.to_string(), value.to_string());
    }

    pub fn note(&mut self, key: &str, value: &str) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    /// Hashes an input file.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| io(path, e))?;
        self.inputs.insert(display_path(path), sha256_hex(&bytes));
        Ok(())
    }

    /// Empties (or creates) the output directory.
    pub fn start(&self) -> Result<(), CliError> {
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        }
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))
    }

    pub fn output(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some other writer put under the output directory.
    pub fn adopt(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut m = format!(
            "{MANIFEST_HEADER}\ntool=latent-probe {}\ncommand={}\n[config]\n",
            env!("CARGO_PKG_VERSION"),
            self.snapshot.command
        );
        for (k, v) in &self.snapshot.values {
            m.push_str(&format!("{k}={v}\n"));
        }
        if !self.notes.is_empty() {
            m.push_str("[notes]\n");
            for (k, v) in &self.notes {
                m.push_str(&format!("{k}={v}\n"));
            }
        }
        m.push_str("[inputs]\n");
        for (path, hash) in &self.inputs {
            m.push_str(&format!("{hash}  {path}\n"));
        }
        m.push_str("[outputs]\n");
        for (path, hash) in &self.outputs {
            m.push_str(&format!("{hash}  {path}\n"));
        }
        m
    }

    pub fn finish(self) -> Result<(), CliError> {
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, self.manifest()).map_err(|e| io(&path, e))
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn display_path(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn refuses_non_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(check_out_dir(dir.path(), false).is_ok());
        fs::write(dir.path().join("x"), b"1").unwrap();
        assert!(matches!(check_out_dir(dir.path(), false), Err(CliError::Usage(_))));
        assert!(check_out_dir(dir.path(), true).is_ok());
        assert!(check_out_dir(&dir.path().join("missing"), false).is_ok());
    }
}
