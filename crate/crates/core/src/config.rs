//! Versioned JSON run configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RecordFormat::Csv),
            "json" => Ok(RecordFormat::Json),
            other => Err(Error::Parse(format!("unknown record format `{other}` (expected csv or json)"))),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Format of the per-rep records; summaries are always JSON.
    #[serde(default)]
    pub format: RecordFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { out_dir: default_out_dir(), format: RecordFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub verbosity: u8,
}

fn config_error(line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// First line (1-based) that declares `"id": "<id>"`.
fn line_of_id(text: &str, id: &str) -> Option<usize> {
    let needle = format!("\"{id}\"");
    text.lines().position(|l| l.contains("\"id\"") && l.contains(&needle)).map(|i| i + 1)
}

impl RunConfig {
    /// Parses and validates, anchoring errors to the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_error(Some(e.line()), e.to_string()))?;
        cfg.validate_with_source(Some(text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, text: Option<&str>) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            let line = text.and_then(|t| t.lines().position(|l| l.contains("\"schema_version\"")).map(|i| i + 1));
            return Err(config_error(
                line,
                format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.scenarios.is_empty() {
            return Err(config_error(None, "config lists no scenarios"));
        }
        if self.threads == Some(0) {
            return Err(config_error(None, "threads must be >= 1"));
        }
        let mut seen = HashSet::new();
        for s in &self.scenarios {
            let line = text.and_then(|t| line_of_id(t, &s.id));
            if !seen.insert(s.id.as_str()) {
                return Err(config_error(line, format!("duplicate scenario id `{}`", s.id)));
            }
            s.validate().map_err(|e| config_error(line, e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Replaces every scenario's master seed.
    pub fn override_seed(&mut self, seed: u64) {
        for s in &mut self.scenarios {
            s.master_seed = seed;
        }
    }

    pub fn override_replications(&mut self, reps: usize) {
        for s in &mut self.scenarios {
            s.replications = reps;
        }
    }

    /// Keeps only the scenarios whose id is listed.
    pub fn retain_scenarios(&mut self, ids: &[String]) -> Result<()> {
        if let Some(missing) = ids.iter().find(|id| !self.scenarios.iter().any(|s| &s.id == *id)) {
            return Err(config_error(None, format!("no scenario with id `{missing}`")));
        }
        self.scenarios.retain(|s| ids.contains(&s.id));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
  "schema_version": 1,
  "scenarios": [
    {
      "id": "a",
      "design": { "n": 30, "p": 20, "kind": { "type": "iid_gaussian" } },
      "model": { "sparsity": 2, "magnitude": 1.0 },
      "noise": { "kind": "gaussian", "sigma": 0.5 },
      "lambda": { "rule": "universal_multiple", "multiple": 2.0 },
      "c_values": [3.0],
      "replications": 10,
      "master_seed": 1
    },
    {
      "id": "b",
      "design": { "n": 30, "p": 20, "kind": { "type": "ar1", "rho": 0.4 } },
      "model": { "sparsity": 2, "magnitude": 1.0, "sign_pattern": "positive" },
      "noise": { "kind": "martingale_arch", "sigma": 0.5, "a": 0.4, "b": 0.5 },
      "lambda": { "rule": "absolute", "value": 0.3 },
      "c_values": [3.0, 5.0],
      "replications": 10,
      "master_seed": 2,
      "t0": [{ "type": "padded_support", "extra": 3 }],
      "bounds": ["containment"]
    }
  ],
  "output": { "out_dir": "out", "format": "json" },
  "threads": 2
}"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(GOOD).unwrap();
        assert_eq!(cfg.scenarios.len(), 2);
        assert_eq!(cfg.output.format, RecordFormat::Json);
        let again = RunConfig::parse(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let broken = GOOD.replacen("\"replications\": 10,", "\"replications\": 10", 1);
        match RunConfig::parse(&broken).unwrap_err() {
            Error::Config { line: Some(l), .. } => assert_eq!(l, 12),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn validation_errors_point_at_the_scenario() {
        let bad = GOOD.replacen("\"c_values\": [3.0, 5.0]", "\"c_values\": [2.0, 5.0]", 1);
        let err = RunConfig::parse(&bad).unwrap_err();
        match &err {
            Error::Config { line: Some(l), message } => {
                assert_eq!(*l, 15);
                assert!(message.contains("c > 2"), "{message}");
            }
            e => panic!("{e}"),
        }
        assert!(err.to_string().starts_with("config error at line 15"));
    }

    #[test]
    fn rejects_duplicates_versions_and_unknown_fields() {
        let dup = GOOD.replacen("\"id\": \"b\"", "\"id\": \"a\"", 1);
        assert!(RunConfig::parse(&dup).unwrap_err().to_string().contains("duplicate"));
        let ver = GOOD.replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(RunConfig::parse(&ver), Err(Error::Config { line: Some(2), .. })));
        let unknown = GOOD.replacen("\"threads\": 2", "\"thread\": 2", 1);
        assert!(RunConfig::parse(&unknown).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::parse(GOOD).unwrap();
        cfg.override_seed(99);
        cfg.override_replications(3);
        assert!(cfg.scenarios.iter().all(|s| s.master_seed == 99 && s.replications == 3));
        cfg.retain_scenarios(&["b".into()]).unwrap();
        assert_eq!(cfg.scenarios.len(), 1);
        assert!(cfg.retain_scenarios(&["zzz".into()]).is_err());
    }
}
