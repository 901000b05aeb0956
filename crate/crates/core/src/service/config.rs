use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ResolutionPolicy;
use crate::search::{DEFAULT_EPSILON, DEFAULT_TOP_N};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_root: PathBuf,
    pub model_root: PathBuf,
    pub school_registry: PathBuf,
    pub case_store: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_root: "data".into(),
            model_root: "models".into(),
            school_registry: "data/schools.json".into(),
            case_store: "cases".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub uniform: f64,
    pub min_width: u32,
    pub min_height: u32,
    pub min_bytes: u64,
    /// Inputs above either ceiling are processed with a warning.
    pub oversize_bytes: u64,
    pub oversize_side: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        let policy = ResolutionPolicy::default();
        Thresholds {
            uniform: crate::uniform::DEFAULT_THRESHOLD,
            min_width: policy.min_width,
            min_height: policy.min_height,
            min_bytes: policy.min_bytes,
            oversize_bytes: 10 * 1024 * 1024,
            oversize_side: 4000,
        }
    }
}

impl Thresholds {
    pub fn resolution_policy(&self) -> ResolutionPolicy {
        ResolutionPolicy {
            min_width: self.min_width,
            min_height: self.min_height,
            min_bytes: self.min_bytes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchDefaults {
    pub epsilon: f64,
    pub top_n: usize,
}

impl Default for SearchDefaults {
    fn default() -> Self {
        SearchDefaults {
            epsilon: DEFAULT_EPSILON,
            top_n: DEFAULT_TOP_N,
        }
    }
}

/// Version pins; unpinned kinds resolve to the newest registered version.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPins {
    pub uniform: Option<String>,
    pub attribute: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub detector: String,
    pub bind: String,
    /// Parallel workers for batch runs and evaluation folds.
    pub workers: usize,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub search: SearchDefaults,
    pub models: ModelPins,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            detector: "metadata".into(),
            bind: "127.0.0.1:8080".into(),
            workers: 1,
            paths: Paths::default(),
            thresholds: Thresholds::default(),
            search: SearchDefaults::default(),
            models: ModelPins::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file. Relative paths are taken relative to the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = config.rooted_at(base);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves relative paths against `base`.
    pub fn rooted_at(mut self, base: &Path) -> Self {
        for p in [
            &mut self.paths.data_root,
            &mut self.paths.model_root,
            &mut self.paths.school_registry,
            &mut self.paths.case_store,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if !(0.0..=1.0).contains(&t.uniform) {
            return Err(Error::Config(format!("uniform threshold {} outside [0, 1]", t.uniform)));
        }
        if t.oversize_bytes == 0 || t.oversize_side == 0 {
            return Err(Error::Config("oversize ceilings must be positive".into()));
        }
        if !(self.search.epsilon > 0.0 && self.search.epsilon < 1.0) {
            return Err(Error::Config(format!("search epsilon {} outside (0, 1)", self.search.epsilon)));
        }
        if self.search.top_n == 0 {
            return Err(Error::Config("search top_n must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.detector.trim().is_empty() {
            return Err(Error::Config("detector name is empty".into()));
        }
        Ok(())
    }

    /// Startup check for serving: the model store and school registry must
    /// exist.
    pub fn check_paths(&self) -> Result<()> {
        for (what, p) in [
            ("model root", &self.paths.model_root),
            ("school registry", &self.paths.school_registry),
        ] {
            if !p.exists() {
                return Err(Error::Config(format!("{what} {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_rooting() {
        let config = PipelineConfig::default();
        let text = config.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("uniformid.toml");
        std::fs::write(&path, "seed = 7\n[thresholds]\nuniform = 0.7\n").unwrap();
        let loaded = PipelineConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.thresholds.uniform, 0.7);
        assert_eq!(loaded.paths.model_root, dir.path().join("models"));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        for bad in [
            "[thresholds]\nuniform = 1.5\n",
            "[search]\nepsilon = 0.0\n",
            "[search]\ntop_n = 0\n",
            "workers = 0\n",
            "unknown_key = 1\n",
        ] {
            std::fs::write(&path, bad).unwrap();
            assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))), "{bad}");
        }
    }
}
