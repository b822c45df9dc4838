//! `manifest.json` written next to every run's outputs.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub struct Manifest {
    fields: Map<String, Value>,
}

impl Manifest {
    /// Records the command, the hash of the exact config text and the seed.
    /// Nothing time-dependent is stored, so reruns produce identical files.
    pub fn new(command: &str, config_text: &str, seed: Option<u64>) -> Self {
        let mut fields = Map::new();
        fields.insert("command".into(), command.into());
        fields.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        fields.insert(
            "config_sha256".into(),
            format!("{:x}", Sha256::digest(config_text.as_bytes())).into(),
        );
        fields.insert("seed".into(), seed.into());
        Manifest { fields }
    }

    pub fn field(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).expect("manifest values serialize");
        self.fields.insert(key.into(), v);
        self
    }

    pub fn write(self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(&Value::Object(self.fields))?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
