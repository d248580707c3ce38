use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use tactile_core::{Error, Result};

pub const FILE_NAME: &str = "manifest.txt";

/// What produced an output directory. Output paths are relative to the
/// directory holding the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seed: u64,
    /// Subcommand flags in a fixed order.
    pub args: Vec<(String, String)>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub tool_version: String,
    pub config_hash: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_path: Option<&Path>, seed: u64, config_hash: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            args: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.push((key.to_string(), value.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {}", self.subcommand);
        let _ = writeln!(s, "config = {}", self.config_path.as_deref().unwrap_or("(built-in)"));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = {:016x}", self.config_hash);
        let _ = writeln!(s, "tool_version = {}", self.tool_version);
        let _ = writeln!(s, "timestamp = {}", self.timestamp);
        for (k, v) in &self.args {
            let _ = writeln!(s, "arg.{k} = {v}");
        }
        for p in &self.inputs {
            let _ = writeln!(s, "input = {p}");
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {p}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            subcommand: String::new(),
            config_path: None,
            seed: 0,
            args: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: 0,
            tool_version: String::new(),
            config_hash: 0,
        };
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |message: String| Error::ConfigParse { line: idx + 1, message };
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let int = |v: &str| v.parse::<u64>().map_err(|e| bad(format!("`{k}`: {e}")));
            match k {
                "subcommand" => m.subcommand = v.to_string(),
                "config" => m.config_path = (v != "(built-in)").then(|| v.to_string()),
                "seed" => m.seed = int(v)?,
                "config_hash" => {
                    m.config_hash = u64::from_str_radix(v, 16).map_err(|e| bad(format!("`{k}`: {e}")))?
                }
                "tool_version" => m.tool_version = v.to_string(),
                "timestamp" => m.timestamp = int(v)?,
                "input" => m.inputs.push(v.to_string()),
                "output" => m.outputs.push(v.to_string()),
                _ => match k.strip_prefix("arg.") {
                    Some(name) => m.args.push((name.to_string(), v.to_string())),
                    None => {
                        return Err(Error::UnknownKey {
                            line: idx + 1,
                            key: k.to_string(),
                        })
                    }
                },
            }
        }
        Ok(m)
    }

    /// Equal apart from when it ran.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        RunManifest {
            timestamp: other.timestamp,
            ..self.clone()
        } == *other
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(FILE_NAME), self.to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(dir.join(FILE_NAME))?)
    }
}
