//! Config file loading and command-line overrides.

use std::fs;
use std::path::Path;

use dgv_core::{PipelineConfig, SelectionRule};

use crate::error::{CliError, CliResult};

/// Knobs settable from the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub rule: Option<SelectionRule>,
    pub rho: Option<f64>,
    pub window: Option<usize>,
    pub smooth: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(rule) = self.rule {
            cfg.selection = rule;
        }
        if let Some(rho) = self.rho {
            cfg.completion.rho = rho;
        }
        if let Some(n) = self.window {
            cfg.memory.window = n;
        }
        if let Some(w) = self.smooth {
            cfg.smoothing.window = w;
        }
    }
}

/// Loads `path` (or the defaults), applies overrides and validates the result.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| match CliError::from(e) {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_rule(s: &str) -> Result<SelectionRule, String> {
    SelectionRule::parse(s).map_err(|e| e.to_string())
}
