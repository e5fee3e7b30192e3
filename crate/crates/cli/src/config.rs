//! Optional TOML config file. Every key is optional and mirrors a flag;
//! flags given on the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vocab_surgeon::{Threshold, TokenId};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub budget: Option<usize>,
    pub percentile: Option<f64>,
    pub absolute_threshold: Option<f64>,
    pub split_threshold: Option<usize>,
    pub top_frac: Option<f64>,
    pub seed: Option<u64>,
    pub refine: Option<bool>,
    pub threads: Option<usize>,
    pub vocab_size: Option<usize>,
    pub lowercase: Option<bool>,
    pub exclude: Option<Vec<TokenId>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Flag values first, then file values, then the default percentile.
    pub fn threshold(&self, percentile: Option<f64>, absolute: Option<f64>) -> Result<Threshold> {
        if percentile.is_some() || absolute.is_some() {
            return Ok(match absolute {
                Some(v) => Threshold::Absolute(v),
                None => Threshold::Percentile(percentile.unwrap()),
            });
        }
        match (self.percentile, self.absolute_threshold) {
            (Some(_), Some(_)) => bail!("config sets both percentile and absolute_threshold"),
            (Some(p), None) => Ok(Threshold::Percentile(p)),
            (None, Some(v)) => Ok(Threshold::Absolute(v)),
            (None, None) => Ok(Threshold::default()),
        }
    }

    pub fn refine(&self, no_refine: bool) -> bool {
        !no_refine && self.refine.unwrap_or(true)
    }
}
