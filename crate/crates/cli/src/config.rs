//! Optional TOML run configuration. Command-line flags win over the file,
//! the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub server: Option<String>,
    pub embeddings: Option<PathBuf>,
    pub format: Option<String>,
    pub normalize: Option<bool>,
    pub lowercase_fallback: Option<bool>,
    pub specs: Option<Vec<String>>,
    pub k: Option<Vec<usize>>,
    pub strategy: Option<String>,
    pub order: Option<Vec<String>>,
    pub all_orders: Option<bool>,
    pub frozen_subspaces: Option<bool>,
    pub double_center: Option<bool>,
    pub strict: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.embeddings.as_mut() {
            rebase(p);
        }
        if let Some(p) = config.out.as_mut() {
            rebase(p);
        }
        if let Some(specs) = config.specs.as_mut() {
            for s in specs.iter_mut() {
                if !s.starts_with(crate::BUNDLED_PREFIX) && Path::new(s.as_str()).is_relative() {
                    *s = base.join(&*s).to_string_lossy().into_owned();
                }
            }
        }
        Ok(config)
    }
}
