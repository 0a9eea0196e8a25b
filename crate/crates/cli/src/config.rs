//! Settings files. A config file is a JSON object with one optional section
//! per subcommand (`build-w`, `align`, `audit`, `loss`). Keys mirror the
//! long flag names with `_` for `-`. Relative paths in a config file are
//! taken relative to the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub struct ConfigFile {
    root: Map<String, Value>,
    dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let root = match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
            Value::Object(map) => map,
            _ => bail!("config {} must hold a JSON object", path.display()),
        };
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(ConfigFile { root, dir })
    }

    pub fn section(&self, name: &str) -> Option<&Value> {
        self.root.get(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Resolves a path read from this file.
    pub fn rebase(&self, path: &str) -> String {
        let p = Path::new(path);
        if p.is_absolute() {
            path.to_string()
        } else {
            self.dir.join(p).to_string_lossy().into_owned()
        }
    }
}

/// Overlays the flags given on the command line onto the config section
/// `name`. `path_keys` name the string fields that hold file paths.
pub fn merge<T: Serialize + DeserializeOwned>(
    cli: &T,
    config: Option<&ConfigFile>,
    name: &str,
    path_keys: &[&str],
) -> anyhow::Result<T> {
    let mut merged = Map::new();
    if let Some(cfg) = config {
        if let Some(section) = cfg.section(name) {
            let Value::Object(map) = section else { bail!("config section {name:?} must be an object") };
            for (key, value) in map {
                let value = match value {
                    Value::String(s) if path_keys.contains(&key.as_str()) => Value::String(cfg.rebase(s)),
                    other => other.clone(),
                };
                merged.insert(key.clone(), value);
            }
        }
    }
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in flags {
        if !value.is_null() {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid {name} settings"))
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value.clone().with_context(|| format!("missing --{flag} (flag or config key)"))
}
