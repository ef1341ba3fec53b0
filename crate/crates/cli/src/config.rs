//! Strict JSON configuration loading and run manifests.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad input: unreadable or malformed config, invalid values, misused flags.
    Config(String),
    /// Failure while running or writing results.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<maqt_core::Error> for CliError {
    fn from(err: maqt_core::Error) -> Self {
        use maqt_core::Error as E;
        match err {
            E::Config(_)
            | E::InvalidParams(_)
            | E::Infeasible { .. }
            | E::InvalidRealization { .. }
            | E::InvalidSchedule { .. } => CliError::Config(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Record of one invocation: enough to regenerate every output byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<C> {
    pub manifest_version: u32,
    pub tool: String,
    pub subcommand: String,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_sha256: String,
    pub event_seed: Option<u64>,
    pub agent_seed: Option<u64>,
    pub outputs: Vec<String>,
    pub config: C,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(
        subcommand: &str,
        config: C,
        seeds: (Option<u64>, Option<u64>),
        outputs: Vec<String>,
    ) -> CliResult<Self> {
        Ok(Self {
            manifest_version: MANIFEST_VERSION,
            tool: concat!("maqt ", env!("CARGO_PKG_VERSION")).to_string(),
            subcommand: subcommand.to_string(),
            config_sha256: config_hash(&config)?,
            event_seed: seeds.0,
            agent_seed: seeds.1,
            outputs,
            config,
        })
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> CliResult<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn diagnostic(path: &Path, err: &serde_json::Error) -> CliError {
    CliError::Config(format!("{}:{}:{}: {err}", path.display(), err.line(), err.column()))
}

/// Parses a config file, or the `config` section of a manifest written by
/// the same subcommand.
pub fn parse_config<C: DeserializeOwned + Serialize>(path: &Path, text: &str, subcommand: &str) -> CliResult<C> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| diagnostic(path, &e))?;
    let is_manifest = value.as_object().is_some_and(|o| o.contains_key("manifest_version"));
    if !is_manifest {
        return serde_json::from_str(text).map_err(|e| diagnostic(path, &e));
    }
    let version = value["manifest_version"].as_u64();
    if version != Some(MANIFEST_VERSION as u64) {
        return Err(CliError::Config(format!(
            "{}: unsupported manifest_version {} (expected {MANIFEST_VERSION})",
            path.display(),
            value["manifest_version"]
        )));
    }
    let writer = value["subcommand"].as_str().unwrap_or_default();
    if writer != subcommand {
        return Err(CliError::Config(format!(
            "{}: manifest was written by `{writer}`, not `{subcommand}`",
            path.display()
        )));
    }
    let manifest: Manifest<C> = serde_json::from_str(text).map_err(|e| diagnostic(path, &e))?;
    if config_hash(&manifest.config)? != manifest.config_sha256 {
        return Err(CliError::Config(format!("{}: config does not match config_sha256", path.display())));
    }
    Ok(manifest.config)
}

pub fn load_config<C: DeserializeOwned + Serialize>(path: &Path, subcommand: &str) -> CliResult<C> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(path, &text, subcommand)
}
