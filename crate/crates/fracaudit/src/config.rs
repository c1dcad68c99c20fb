//! TOML configuration. Every key is optional and falls back to the library
//! default; unknown keys are rejected.
//!
//! ```toml
//! [audit]
//! thresholds = [0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95]
//! [retrieval]
//! k = 50
//! max_hamming = 64
//! [ssim]
//! max_side = 128
//! [match]
//! similarity_threshold = 0.9
//! normalize = true
//! [crop]
//! bottom_fraction = 0.10
//! [split]
//! k = 5
//! grouping = "image"
//! [baseline]
//! k = 9
//! [evaluate]
//! confidence = 0.95
//! ```

use std::path::Path;

use fracaudit_core::audit::AuditConfig;
use fracaudit_core::imghash::{RetrievalConfig, BASELINE_K};
use fracaudit_core::matcher::MatchConfig;
use fracaudit_core::split::Grouping;
use fracaudit_core::ssim::SsimConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::io::read_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroupingArg {
    Image,
    Foan,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::Image => Grouping::ImageLevel,
            GroupingArg::Foan => Grouping::FoanGrouped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub thresholds: Vec<f64>,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            thresholds: AuditConfig::default().thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    pub max_hamming: u32,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let d = RetrievalConfig::default();
        Self {
            k: d.k,
            max_hamming: d.max_hamming,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimSection {
    pub max_side: u32,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimSection {
    fn default() -> Self {
        let d = SsimConfig::default();
        Self {
            max_side: d.max_side,
            window: d.window,
            sigma: d.sigma,
            k1: d.k1,
            k2: d.k2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSection {
    pub similarity_threshold: f64,
    pub normalize: bool,
}

impl Default for MatchSection {
    fn default() -> Self {
        let d = MatchConfig::default();
        Self {
            similarity_threshold: d.similarity_threshold,
            normalize: d.normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSection {
    pub bottom_fraction: f64,
}

impl Default for CropSection {
    fn default() -> Self {
        Self { bottom_fraction: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub k: u32,
    pub grouping: GroupingArg,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            k: 5,
            grouping: GroupingArg::Image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub k: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { k: BASELINE_K }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub confidence: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub audit: AuditSection,
    pub retrieval: RetrievalSection,
    pub ssim: SsimSection,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub crop: CropSection,
    pub split: SplitSection,
    pub baseline: BaselineSection,
    pub evaluate: EvaluateSection,
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&read_text(p)?, p),
            None => Ok(Self::default()),
        }
    }

    /// Checks every section against the library's own validators.
    pub fn validate(&self) -> std::result::Result<(), String> {
        self.audit_config().validate().map_err(|e| format!("audit/retrieval: {e}"))?;
        self.ssim_config().validate().map_err(|e| format!("ssim: {e}"))?;
        self.match_config().validate().map_err(|e| format!("match: {e}"))?;
        if !(0.0..=0.5).contains(&self.crop.bottom_fraction) {
            return Err(format!("crop.bottom_fraction {} outside [0, 0.5]", self.crop.bottom_fraction));
        }
        if self.split.k < 2 {
            return Err(format!("split.k must be at least 2, got {}", self.split.k));
        }
        if self.baseline.k == 0 {
            return Err("baseline.k must be positive".to_string());
        }
        let c = self.evaluate.confidence;
        if !(c > 0.0 && c < 1.0) {
            return Err(format!("evaluate.confidence {c} outside (0, 1)"));
        }
        Ok(())
    }

    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig {
            thresholds: self.audit.thresholds.clone(),
            retrieval: RetrievalConfig {
                k: self.retrieval.k,
                max_hamming: self.retrieval.max_hamming,
            },
        }
    }

    pub fn ssim_config(&self) -> SsimConfig {
        SsimConfig {
            max_side: self.ssim.max_side,
            window: self.ssim.window,
            sigma: self.ssim.sigma,
            k1: self.ssim.k1,
            k2: self.ssim.k2,
            ..SsimConfig::default()
        }
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            similarity_threshold: self.matching.similarity_threshold,
            normalize: self.matching.normalize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = Config::parse("", Path::new("c.toml")).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.audit_config(), AuditConfig::default());
        assert_eq!(cfg.ssim_config(), SsimConfig::default());
        assert_eq!(cfg.match_config(), MatchConfig::default());
    }

    #[test]
    fn documented_example_parses() {
        let text: String = include_str!("config.rs")
            .lines()
            .take_while(|l| l.starts_with("//!"))
            .skip_while(|l| !l.contains("```toml"))
            .skip(1)
            .take_while(|l| !l.contains("```"))
            .map(|l| format!("{}\n", l.trim_start_matches("//!").trim_start()))
            .collect();
        let cfg = Config::parse(&text, Path::new("doc")).unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::parse(
            "[retrieval]\nk = 7\n[ssim]\nmax_side = 64\n[split]\ngrouping = \"foan\"\n",
            Path::new("c.toml"),
        )
        .unwrap();
        assert_eq!(cfg.audit_config().retrieval.k, 7);
        assert_eq!(cfg.ssim_config().max_side, 64);
        assert_eq!(Grouping::from(cfg.split.grouping), Grouping::FoanGrouped);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for text in [
            "[retrieval]\nkk = 3\n",
            "[nonsense]\n",
            "[audit]\nthresholds = [0.9, 0.5]\n",
            "[crop]\nbottom_fraction = 0.7\n",
            "[match]\nsimilarity_threshold = 0.0\n",
        ] {
            let err = Config::parse(text, Path::new("bad.toml")).unwrap_err();
            assert_eq!(err.exit_code(), crate::error::EXIT_USAGE, "{text}");
            assert!(err.to_string().contains("bad.toml"));
        }
    }
}
