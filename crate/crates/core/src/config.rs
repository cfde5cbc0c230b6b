//! Resolved pipeline configuration, loadable from TOML.
//!
//! Unknown keys are rejected and every component invariant is re-checked by
//! [`PipelineConfig::validate`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AnchorMode;
use crate::voxelgrid::ResolutionPolicy;

pub const DEFAULT_RHO: f64 = 0.1;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 3;
pub const DEFAULT_MEMORY_WINDOW: usize = 8;
pub const DEFAULT_HEADS: usize = 4;

/// Per-voxel representative policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectionRule {
    /// Keep every token of the newest frame in the cell.
    Latest,
    /// Keep the single best token by recency and proximity.
    Priority { w_recency: f64, w_proximity: f64 },
    /// Keep the `k` best tokens by the default priority score.
    MultiToken { k: usize },
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::Latest
    }
}

impl SelectionRule {
    pub const DEFAULT_PRIORITY: SelectionRule = SelectionRule::Priority {
        w_recency: 0.5,
        w_proximity: 0.5,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionRule::Latest => Ok(()),
            SelectionRule::Priority {
                w_recency,
                w_proximity,
            } => {
                let ok = w_recency.is_finite()
                    && w_proximity.is_finite()
                    && w_recency >= 0.0
                    && w_proximity >= 0.0
                    && (w_recency > 0.0 || w_proximity > 0.0);
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(
                        "priority weights must be non-negative and not both zero".into(),
                    ))
                }
            }
            SelectionRule::MultiToken { k } if k >= 1 => Ok(()),
            SelectionRule::MultiToken { .. } => {
                Err(Error::InvalidConfig("multi-token k must be >= 1".into()))
            }
        }
    }

    /// Upper bound on tokens a single cell keeps, when the rule has one.
    pub fn per_cell_bound(&self) -> Option<usize> {
        match *self {
            SelectionRule::Latest => None,
            SelectionRule::Priority { .. } => Some(1),
            SelectionRule::MultiToken { k } => Some(k),
        }
    }

    /// Parses the command-line shorthand `latest`, `priority[:wr,wp]`, `multi:K`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognized selection rule {s:?}"));
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let rule = match name {
            "latest" if args.is_empty() => SelectionRule::Latest,
            "priority" if args.is_empty() => Self::DEFAULT_PRIORITY,
            "priority" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                SelectionRule::Priority {
                    w_recency: a.trim().parse().map_err(|_| bad())?,
                    w_proximity: b.trim().parse().map_err(|_| bad())?,
                }
            }
            "multi" | "multi-token" => SelectionRule::MultiToken {
                k: args.trim().parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// Weights of the four completion factors; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionWeights {
    pub feature: f64,
    pub range: f64,
    pub spread: f64,
    pub recency: f64,
}

impl Default for CompletionWeights {
    fn default() -> Self {
        Self {
            feature: 0.3,
            range: 0.3,
            spread: 0.2,
            recency: 0.2,
        }
    }
}

impl CompletionWeights {
    pub fn new(feature: f64, range: f64, spread: f64, recency: f64) -> Result<Self> {
        let w = Self {
            feature,
            range,
            spread,
            recency,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.feature, self.range, self.spread, self.recency];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "completion weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "completion weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub mode: AnchorMode,
    /// Depths beyond this are treated as invalid.
    pub max_depth: Option<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            mode: AnchorMode::Centroid,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionConfig {
    /// Minimum keep ratio; zero disables completion.
    pub rho: f64,
    pub weights: CompletionWeights,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            weights: CompletionWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub window: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    /// Number of active frames `N`.
    pub window: usize,
    /// Let tokens still in the active window compete when folding an
    /// evicted frame into memory.
    pub consult_active: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_MEMORY_WINDOW,
            consult_active: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub heads: usize,
    pub residual: bool,
    pub layer_norm: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            heads: DEFAULT_HEADS,
            residual: false,
            layer_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub voxel: ResolutionPolicy,
    pub anchor: AnchorConfig,
    pub selection: SelectionRule,
    pub completion: CompletionConfig,
    pub smoothing: SmoothingConfig,
    pub memory: MemoryConfig,
    pub fusion: FusionConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.voxel.validate()?;
        self.selection.validate()?;
        self.completion.weights.validate()?;
        let rho = self.completion.rho;
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidConfig(format!("rho {rho} outside [0, 1]")));
        }
        if self.smoothing.window == 0 || self.smoothing.window % 2 == 0 {
            return Err(Error::InvalidConfig(
                "smoothing window must be a positive odd number".into(),
            ));
        }
        if self.memory.window == 0 {
            return Err(Error::InvalidConfig("memory window must be >= 1".into()));
        }
        if let Some(m) = self.anchor.max_depth {
            if !(m > 0.0) {
                return Err(Error::InvalidConfig("max_depth must be > 0".into()));
            }
        }
        if self.fusion.heads == 0 {
            return Err(Error::InvalidConfig("fusion heads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

/// `ceil(rho · n)`, guarded against representation error in `rho · n`.
pub fn keep_floor(rho: f64, n: usize) -> usize {
    let raw = (rho * n as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(n)
}
