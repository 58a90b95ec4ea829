//! Builds a [`RunConfig`] from defaults, command-line flags and an optional
//! TOML file. Values in the file win over flags.

use std::path::Path;

use g3_core::config::RunConfig;
use g3_core::{Error, Result};
use serde_json::{Map, Value};

/// A flag value destined for a JSON pointer inside the config.
pub struct Override {
    pub pointer: &'static str,
    pub value: Value,
}

#[derive(Default)]
pub struct Overrides(Vec<Override>);

impl Overrides {
    pub fn set<T: serde::Serialize>(&mut self, pointer: &'static str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push(Override { pointer, value: serde_json::to_value(v).expect("plain values serialize") });
        }
        self
    }

    /// Sets a whole tagged section, replacing what is there.
    pub fn replace(&mut self, pointer: &'static str, value: Value) -> &mut Self {
        self.0.push(Override { pointer, value });
        self
    }
}

fn set_pointer(root: &mut Value, pointer: &str, value: Value) {
    let mut cur = root;
    let keys: Vec<&str> = pointer.trim_start_matches('/').split('/').collect();
    for (i, key) in keys.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if i + 1 == keys.len() {
            obj.insert((*key).to_owned(), value);
            return;
        }
        cur = obj.entry(*key).or_insert(Value::Null);
    }
}

/// Recursively merges `over` into `base`. Arrays and scalars are replaced;
/// tables whose `kind` tags differ are replaced whole.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) if same_kind(existing, &v) => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn same_kind(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => match (x.get("kind"), y.get("kind")) {
            (Some(p), Some(q)) => p == q,
            _ => true,
        },
        _ => false,
    }
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

pub fn resolve(overrides: &Overrides, file: Option<&Path>) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    for o in &overrides.0 {
        set_pointer(&mut value, o.pointer, o.value.clone());
    }
    if let Some(path) = file {
        merge(&mut value, read_config_file(path)?);
    }
    serde_json::from_value(value).map_err(|e| Error::Usage(format!("invalid configuration: {e}")))
}
