//! Run configuration: a named preset, optionally overlaid with a TOML or
//! JSON file, then with command-line flags.

use std::path::{Path, PathBuf};

use actsum_core::synthgen::{FeatureProfile, GenConfig};
use actsum_pipeline::{ExperimentMatrixConfig, Preset};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the default config file or preset.
pub const CONFIG_ENV: &str = "ACTSUM_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub gen: GenConfig,
    pub matrix: ExperimentMatrixConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut gen = GenConfig::default();
        if p == Preset::Paper {
            gen.feature_profile = FeatureProfile::paper();
        }
        RunConfig { preset: p, gen, matrix: ExperimentMatrixConfig { preset: p, ..Default::default() } }
    }

    /// Resolve `spec` (a preset name or a file path), falling back to the
    /// environment variable and then to the desk preset.
    pub fn resolve(spec: Option<&str>) -> Result<(Self, Option<PathBuf>)> {
        let env = std::env::var(CONFIG_ENV).ok();
        match spec.or(env.as_deref()) {
            None | Some("desk") => Ok((RunConfig::preset(Preset::Desk), None)),
            Some("paper") => Ok((RunConfig::preset(Preset::Paper), None)),
            Some(path) => {
                let path = PathBuf::from(path);
                Ok((RunConfig::from_file(&path)?, Some(path)))
            }
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let overlay: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let preset = match overlay.get("preset") {
            None => Preset::Desk,
            Some(v) => serde_json::from_value(v.clone()).with_context(|| format!("{}: preset", path.display()))?,
        };
        let mut base = serde_json::to_value(RunConfig::preset(preset))?;
        merge(&mut base, overlay);
        let mut cfg: RunConfig = serde_json::from_value(base).with_context(|| format!("{}: invalid config", path.display()))?;
        cfg.matrix.preset = cfg.preset;
        if let Some(dir) = path.parent() {
            cfg.matrix.corpus = anchor(dir, &cfg.matrix.corpus);
            cfg.matrix.output_dir = anchor(dir, &cfg.matrix.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.matrix.validate()?;
        if self.matrix.preset != self.preset {
            bail!("matrix.preset disagrees with preset");
        }
        Ok(())
    }
}

/// Paths in a config file are relative to the file.
fn anchor(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Recursive overlay of JSON objects; any other value replaces the base.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overlays_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "preset = \"paper\"\n[gen]\nn_train = 10\n[matrix]\ncorpus = \"data\"\n[matrix.train]\nmax_epochs = 2\n[matrix.overrides.img2pddl]\nlearning_rate = 0.01\n",
        )
        .unwrap();
        let c = RunConfig::from_file(&p).unwrap();
        assert_eq!(c.gen.n_train, 10);
        assert_eq!(c.gen.feature_profile, FeatureProfile::paper());
        assert_eq!(c.matrix.preset, Preset::Paper);
        assert_eq!(c.matrix.corpus, dir.path().join("data"));
        assert_eq!(c.matrix.train_config("pddl2sum").max_epochs, 2);
        assert_eq!(c.matrix.train_config("img2pddl").learning_rate, 0.01);
        assert_eq!(c.matrix.rows.len(), 16);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"matrix": {"train": {"learning_rat": 1}}}"#).unwrap();
        assert!(RunConfig::from_file(&p).is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["desk.toml", "paper.toml"] {
            let c = RunConfig::from_file(&root.join(name)).unwrap();
            let expect = if name == "desk.toml" { Preset::Desk } else { Preset::Paper };
            assert_eq!(c.preset, expect);
        }
    }
}
