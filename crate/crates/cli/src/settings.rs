//! Option resolution: command-line flag, then config file, then default.
//!
//! A config file is `key=value` lines under a `latent-probe-config v1`
//! header. A run manifest is accepted too; only its `[config]` section is
//! read, so any run can be repeated with `--config <out>/manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;
use crate::manifest::MANIFEST_HEADER;

pub const CONFIG_HEADER: &str = "latent-probe-config v1";

pub struct Settings {
    command: String,
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(path) => parse_config(command, path)?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            command: command.to_string(),
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Resolves `key`, recording the value in the config snapshot.
    pub fn get<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: Option<T>,
    ) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(text) => text.parse().map_err(|_| {
                    CliError::Usage(format!("config value {key}={text:?} is invalid"))
                })?,
                None => default.ok_or_else(|| CliError::Usage(format!("--{key} is required")))?,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`get`](Self::get) but absent values stay absent and are not recorded.
    pub fn get_opt<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        if flag.is_none() && !self.file.contains_key(key) {
            return Ok(None);
        }
        self.get(key, flag, None).map(Some)
    }

    /// Fails on config keys this command never asked for.
    pub fn finish(self) -> Result<Snapshot, CliError> {
        if let Some(key) = self.file.keys().find(|k| !self.resolved.contains_key(*k)) {
            return Err(CliError::Usage(format!(
                "config key {key:?} is not an option of {}",
                self.command
            )));
        }
        Ok(Snapshot {
            command: self.command,
            values: self.resolved,
        })
    }
}

/// Resolved configuration of one run.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub command: String,
    pub values: BTreeMap<String, String>,
}

fn parse_config(command: &str, path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut lines = text.lines().map(str::trim);
    let header = lines.next().unwrap_or_default();
    let is_manifest = header == MANIFEST_HEADER;
    if !is_manifest && header != CONFIG_HEADER {
        return Err(CliError::Usage(format!(
            "{} starts with {header:?}, expected {CONFIG_HEADER:?}",
            path.display()
        )));
    }
    let mut values = BTreeMap::new();
    let mut section = if is_manifest { "" } else { "config" };
    for line in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = if name == "config" { "config" } else { "other" };
            continue;
        }
        if is_manifest && section.is_empty() {
            if let Some(("command", c)) = line.split_once('=') {
                if c != command {
                    return Err(CliError::Usage(format!(
                        "manifest {} records command {c:?}, not {command:?}",
                        path.display()
                    )));
                }
            }
            continue;
        }
        if section != "config" {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line without '=': {line:?}")))?;
        values.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(values)
}

/// Comma-separated floats, e.g. damage levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(FloatList)
    }
}

impl Display for FloatList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, format!("{CONFIG_HEADER}\nalpha=0.5\nk=4\n")).unwrap();
        let mut s = Settings::new("score", Some(&path)).unwrap();
        assert_eq!(s.get("alpha", Some(2.0), Some(3.0)).unwrap(), 2.0);
        assert_eq!(s.get::<usize>("k", None, Some(10)).unwrap(), 4);
        assert_eq!(s.get::<u64>("seed", None, Some(0)).unwrap(), 0);
        let snap = s.finish().unwrap();
        assert_eq!(snap.values["alpha"], "2");
        assert_eq!(snap.values["k"], "4");
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, format!("{CONFIG_HEADER}\nbogus=1\n")).unwrap();
        let s = Settings::new("score", Some(&path)).unwrap();
        assert!(matches!(s.finish(), Err(CliError::Usage(_))));
    }

    #[test]
    fn manifest_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        std::fs::write(
            &path,
            format!("{MANIFEST_HEADER}\ncommand=gen\n[config]\ncount=3\n[outputs]\nabc  index.csv\n"),
        )
        .unwrap();
        let mut s = Settings::new("gen", Some(&path)).unwrap();
        assert_eq!(s.get::<usize>("count", None, None).unwrap(), 3);
        assert!(s.finish().is_ok());
        assert!(matches!(Settings::new("score", Some(&path)), Err(CliError::Usage(_))));
    }

    #[test]
    fn float_list_round_trip() {
        let l: FloatList = "0, 0.5,8".parse().unwrap();
        assert_eq!(l.0, vec![0.0, 0.5, 8.0]);
        assert_eq!(l.to_string(), "0,0.5,8");
        assert!("1,x".parse::<FloatList>().is_err());
    }
}
