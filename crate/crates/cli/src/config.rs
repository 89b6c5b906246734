//! Flag / config-file / default resolution and the resolved-config echo.
//!
//! Precedence is flags > config file > built-in defaults. The config file is
//! TOML with one table per subcommand, e.g.
//!
//! ```toml
//! [train]
//! epochs = 6
//! lr = 0.001
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use refscreen::Pooling;
use toml::{Table, Value};

use crate::CliError;

pub trait ConfigValue: Sized {
    fn from_toml(value: &Value) -> Option<Self>;
    fn to_toml(&self) -> Value;
}

impl ConfigValue for u64 {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_integer().and_then(|i| u64::try_from(i).ok())
    }
    fn to_toml(&self) -> Value {
        // Seeds above i64::MAX do not fit a TOML integer.
        match i64::try_from(*self) {
            Ok(i) => Value::Integer(i),
            Err(_) => Value::String(self.to_string()),
        }
    }
}

impl ConfigValue for usize {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_integer().and_then(|i| usize::try_from(i).ok())
    }
    fn to_toml(&self) -> Value {
        Value::Integer(*self as i64)
    }
}

impl ConfigValue for f64 {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_float().or_else(|| value.as_integer().map(|i| i as f64))
    }
    fn to_toml(&self) -> Value {
        Value::Float(*self)
    }
}

impl ConfigValue for String {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_str().map(str::to_string)
    }
    fn to_toml(&self) -> Value {
        Value::String(self.clone())
    }
}

impl ConfigValue for PathBuf {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_str().map(PathBuf::from)
    }
    fn to_toml(&self) -> Value {
        Value::String(self.display().to_string())
    }
}

impl ConfigValue for Pooling {
    fn from_toml(value: &Value) -> Option<Self> {
        value.as_str().and_then(|s| Pooling::from_str(s).ok())
    }
    fn to_toml(&self) -> Value {
        Value::String(self.as_str().to_string())
    }
}

/// Resolves one subcommand's settings and records what was used.
pub struct Resolver {
    file: Table,
    echo: Table,
}

impl Resolver {
    pub fn new(config: Option<&Path>, section: &str) -> Result<Self, CliError> {
        let file = match config {
            None => Table::new(),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let mut root: Table = text
                    .parse()
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
                match root.remove(section) {
                    None => Table::new(),
                    Some(Value::Table(t)) => t,
                    Some(_) => return Err(CliError::Usage(format!("config section [{section}] must be a table"))),
                }
            }
        };
        let mut echo = Table::new();
        echo.insert("command".into(), Value::String(section.into()));
        Ok(Self { file, echo })
    }

    fn file_value<T: ConfigValue>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => T::from_toml(v)
                .map(Some)
                .ok_or_else(|| CliError::Usage(format!("config key '{key}' has an invalid value {v}"))),
        }
    }

    pub fn get<T: ConfigValue>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.echo.insert(key.into(), value.to_toml());
        Ok(value)
    }

    /// A setting without a default; absent everywhere resolves to `None`.
    pub fn get_opt<T: ConfigValue>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &value {
            self.echo.insert(key.into(), v.to_toml());
        }
        Ok(value)
    }

    pub fn require<T: ConfigValue>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.get_opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn write_echo(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(&self.echo).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn echo(&self) -> &Table {
        &self.echo
    }
}

/// `<path>.<suffix>` next to an output file.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
