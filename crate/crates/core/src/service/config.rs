use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AfmError, Result};
use crate::retrieval::{PipelineConfig, RankMethod, RerankMethod};

/// Overrides the bind address from flags or the config file.
pub const BIND_ENV: &str = "AFM_BIND";

/// Everything the service needs; loadable from TOML, every field optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub index: Option<PathBuf>,
    /// Spectra file; the bundled default set when absent.
    pub spectra: Option<PathBuf>,
    /// Aux vectors for query expansion.
    pub aux: Option<PathBuf>,
    /// Translation range and step at scale 1, reference pixels.
    pub max_shift: f64,
    pub step: f64,
    pub rank: String,
    /// `"none"` disables re-ranking.
    pub rerank: String,
    pub shortlist: usize,
    pub nbhd: usize,
    pub pre_factor: usize,
    pub qe_top_n: Option<usize>,
    pub bind: String,
    pub thumbs: Option<PathBuf>,
    /// Results returned when a request does not set `k`.
    pub default_k: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            index: None,
            spectra: None,
            aux: None,
            max_shift: 80.0,
            step: 20.0,
            rank: "proj".into(),
            rerank: "xy-star".into(),
            shortlist: 100,
            nbhd: 3,
            pre_factor: 3,
            qe_top_n: None,
            bind: "127.0.0.1:8080".into(),
            thumbs: None,
            default_k: 10,
        }
    }
}

pub(crate) fn parse_rerank(s: &str) -> Result<Option<RerankMethod>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AfmError::file(path, e))?;
        toml::from_str(&text)
            .map_err(|e| AfmError::Format(format!("{}: {}", path.display(), e.message())))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            rank: self.rank.parse::<RankMethod>()?,
            rerank: parse_rerank(&self.rerank)?,
            shortlist: self.shortlist,
            nbhd: self.nbhd,
            pre_factor: self.pre_factor,
            qe_top_n: self.qe_top_n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Method strings parse, sizes are in range and referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.pipeline()?;
        if !(self.max_shift >= 0.0 && self.step > 0.0) {
            return Err(AfmError::InvalidParameter(
                "max_shift must be ≥ 0 and step > 0".into(),
            ));
        }
        if self.default_k == 0 {
            return Err(AfmError::InvalidParameter("default_k must be ≥ 1".into()));
        }
        for p in [&self.index, &self.spectra, &self.aux, &self.thumbs]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(AfmError::file(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
                ));
            }
        }
        Ok(())
    }

    /// `AFM_BIND` when set, else the configured address.
    pub fn bind_address(&self) -> String {
        std::env::var(BIND_ENV).unwrap_or_else(|_| self.bind.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults() {
        let c: ServiceConfig = toml::from_str("shortlist = 50\nrerank = \"none\"\n").unwrap();
        assert_eq!(c.shortlist, 50);
        assert_eq!(c.pipeline().unwrap().rerank, None);
        assert_eq!(c.nbhd, 3);
        assert!(toml::from_str::<ServiceConfig>("bogus = 1").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let even = ServiceConfig {
            nbhd: 2,
            ..ServiceConfig::default()
        };
        assert!(even.validate().is_err());
        let missing = ServiceConfig {
            index: Some("/nonexistent/afm.idx".into()),
            ..ServiceConfig::default()
        };
        let msg = missing.validate().unwrap_err().to_string();
        assert!(msg.contains("/nonexistent/afm.idx"), "{msg}");
        assert!(ServiceConfig::default().validate().is_ok());
    }
}
