//! Single structured run configuration (TOML).
//!
//! Several files may be layered: later files override earlier ones key by
//! key, and command-line flags override both. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::sim::ServerConfig;
use crate::trace::WorkloadProfile;
use crate::workload_models::ModelBundle;

/// Environment variable naming a config file used when no `--config` is given.
pub const CONFIG_ENV: &str = "LLMCC_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Stop simulating after this many seconds instead of draining the queue.
    pub cutoff_s: Option<f64>,
    /// Phase schedule for `gen-trace --recipe custom`, e.g. `"60:0-2.5,90:2.5"`.
    pub schedule: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            cutoff_s: None,
            schedule: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub server: ServerConfig,
    pub workload: WorkloadProfile,
    pub models: ModelBundle,
    pub controller: ControllerConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.server.validate()?;
        self.workload.validate()?;
        self.models.validate()?;
        self.controller.validate()?;
        if let Some(c) = self.run.cutoff_s {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Validation(format!(
                    "run.cutoff_s must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let table: toml::Table = parse_table(text, path)?;
        Self::from_table(table, path)
    }

    fn from_table(table: toml::Table, path: &Path) -> Result<Self> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.message().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Merge `paths` in order over the defaults. With no paths, falls back to
    /// the file named by [`CONFIG_ENV`], if set.
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let paths: Vec<PathBuf> = if paths.is_empty() {
            env_path.into_iter().collect()
        } else {
            paths.to_vec()
        };
        let mut merged = toml::Table::new();
        for p in &paths {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            deep_merge(&mut merged, parse_table(&text, p)?);
        }
        let origin = paths
            .last()
            .cloned()
            .unwrap_or_else(|| PathBuf::from("<defaults>"));
        Self::from_table(merged, &origin)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

fn parse_table(text: &str, path: &Path) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| {
        let line = e.span().map_or(0, |s| {
            text[..s.start.min(text.len())].lines().count().max(1)
        });
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
