//! JSON report envelope and small table writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Bumped when a report field changes meaning or is removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Report<'a, C: Serialize> {
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub config: &'a C,
    pub result: serde_json::Value,
}

impl<'a, C: Serialize> Report<'a, C> {
    pub fn new(command: &str, config: &'a C, result: serde_json::Value) -> Self {
        Self {
            schema: format!("bva.{command}"),
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            result,
        }
    }

    /// Pretty JSON to `path`, or stdout without one.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        match path {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
        }
    }
}

pub fn write_qq(path: &Path, pairs: &[(f64, f64)]) -> Result<()> {
    let mut text = String::from("theoretical,sample\n");
    for (t, s) in pairs {
        text.push_str(&format!("{t},{s}\n"));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
