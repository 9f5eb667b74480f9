//! Settings layered as flag > `SPOTLAKE_<KEY>` environment variable >
//! config file > built-in default.
//!
//! The config file is flat `key = value` lines (TOML syntax), e.g.
//!
//! ```text
//! store = "archive"
//! seed = 42
//! period = "10m"
//! port = 8080
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "SPOTLAKE_";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PORT: u16 = 8080;

/// Keys accepted in the config file and as `SPOTLAKE_<KEY>`.
pub const KEYS: [&str; 10] = ["store", "universe", "plan", "model", "seed", "period", "port", "sim_port", "vendor", "out"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    file: BTreeMap<String, String>,
    env: BTreeMap<String, String>,
    /// Directory relative file paths are resolved against.
    base: Option<PathBuf>,
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase())
}

impl Settings {
    /// Reads the config file named by `--config` or `SPOTLAKE_CONFIG`, if
    /// any, and the environment overrides.
    pub fn load(flag: Option<&Path>) -> Result<Self, CliError> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(env_name("config")).map(PathBuf::from));
        let mut settings = Settings::default();
        if let Some(path) = path {
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
            settings.file = parse_file(&raw).map_err(|m| CliError::config("config", format!("{}: {m}", path.display())))?;
            settings.base = path.parent().map(Path::to_path_buf);
        }
        for key in KEYS {
            if let Ok(v) = std::env::var(env_name(key)) {
                settings.env.insert(key.to_string(), v);
            }
        }
        Ok(settings)
    }

    pub fn from_parts(file: BTreeMap<String, String>, env: BTreeMap<String, String>) -> Self {
        Settings { file, env, base: None }
    }

    fn raw(&self, key: &str) -> Option<(&str, String)> {
        debug_assert!(KEYS.contains(&key));
        self.env
            .get(key)
            .map(|v| (v.as_str(), env_name(key)))
            .or_else(|| self.file.get(key).map(|v| (v.as_str(), "config file".to_string())))
    }

    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|(v, origin)| {
                v.parse::<T>()
                    .map_err(|e| CliError::config("config", format!("{key} from {origin}: `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        if flag.is_some() {
            return flag;
        }
        if let Some(v) = self.env.get(key) {
            return Some(PathBuf::from(v));
        }
        self.file.get(key).map(|v| match &self.base {
            Some(base) if Path::new(v).is_relative() => base.join(v),
            _ => PathBuf::from(v),
        })
    }

    /// A path that must name an existing file.
    pub fn existing(&self, flag: Option<PathBuf>, key: &str, stage: &str) -> Result<Option<PathBuf>, CliError> {
        match self.path(flag, key) {
            Some(p) if !p.exists() => Err(CliError::config(stage, format!("{key} file {} does not exist", p.display()))),
            other => Ok(other),
        }
    }

    pub fn require(&self, flag: Option<PathBuf>, key: &str, stage: &str) -> Result<PathBuf, CliError> {
        self.path(flag, key).ok_or_else(|| {
            CliError::config(stage, format!("no {key} given: pass --{key} or set {} or `{key}` in the config file", env_name(key)))
        })
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        Ok(self.get(flag, "seed")?.unwrap_or(DEFAULT_SEED))
    }

    /// Collection period in seconds; defaults to ten minutes.
    pub fn period(&self, flag: Option<String>) -> Result<i64, CliError> {
        match self.get::<String>(flag, "period")? {
            Some(raw) => parse_period(&raw).map_err(|m| CliError::config("config", m)),
            None => Ok(600),
        }
    }
}

fn parse_file(raw: &str) -> Result<BTreeMap<String, String>, String> {
    let table: toml::Table = raw.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    let mut out = BTreeMap::new();
    for (k, v) in table {
        if !KEYS.contains(&k.as_str()) {
            return Err(format!("unknown key `{k}`; expected one of {}", KEYS.join(", ")));
        }
        let v = match v {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => return Err(format!("`{k}` must be a string or integer, got {}", other.type_str())),
        };
        out.insert(k, v);
    }
    Ok(out)
}

/// `600`, `600s`, `10m`, `1h 30m`.
pub fn parse_period(raw: &str) -> Result<i64, String> {
    let secs = match raw.trim().parse::<i64>() {
        Ok(n) => n,
        Err(_) => humantime::parse_duration(raw)
            .map_err(|e| format!("period `{raw}`: {e}"))?
            .as_secs() as i64,
    };
    if secs <= 0 {
        return Err(format!("period `{raw}` must be positive"));
    }
    Ok(secs)
}
