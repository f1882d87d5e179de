//! Run configuration: defaults, then a flat `key = value` file, then
//! command-line overrides.
//!
//! File format, one setting per line, `#` starts a comment:
//!
//! ```text
//! schema = 1
//! seed = 7
//! model.d_model = 64
//! train.lr = 0.0005
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::train::TrainConfig;
use crate::model::ModelConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Append each step's summary to the encoder input.
    pub conditioned: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            seed: 0,
            threads: 0,
            conditioned: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(n) if n.is_f64() => "float",
        Value::Number(_) => "int",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

impl RunConfig {
    /// Every settable key with its current value.
    pub fn entries(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("serializable"), &mut out);
        out
    }

    /// Hash of the key names and value types; changes whenever the set of
    /// settings does.
    pub fn schema_hash() -> String {
        let mut h = Sha256::new();
        h.update(SCHEMA_VERSION.to_le_bytes());
        for (k, v) in RunConfig::default().entries() {
            h.update(k.as_bytes());
            h.update(b":");
            h.update(type_name(&v).as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Set one dotted key from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown setting {key:?}")))?;
        }
        let raw = raw.trim();
        let bad = || Error::Config(format!("bad value {raw:?} for {key}"));
        *slot = match slot {
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_f64() => {
                let f: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
            }
            Value::Number(_) => Value::Number(raw.parse::<u64>().map_err(|_| bad())?.into()),
            Value::String(_) => Value::String(raw.to_string()),
            Value::Object(_) => return Err(Error::Config(format!("{key} is a group, not a setting"))),
            _ => return Err(bad()),
        };
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Apply `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported config schema {}", self.schema)));
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        self.apply_text(&text)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.window == 0 {
            return Err(Error::Config("train.batch_size and train.window must be positive".into()));
        }
        if !(t.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        Ok(())
    }

    /// The flat text form, readable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("# editproc run configuration\n");
        for (k, v) in self.entries() {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
