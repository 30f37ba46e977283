//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use choroid_core::augment::AugmentConfig;
use choroid_core::ingest::PreprocessConfig;
use choroid_core::measure::MeasureConfig;
use choroid_core::pipeline::DEFAULT_THRESHOLD;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Embedded CNN (`--spec` + `--weights`).
    Cnn,
    /// Precomputed maps located by `--maps`.
    External,
    /// Ground-truth maps, `{stem}.truth.pmap` next to each image by default.
    Oracle,
}

/// Every setting a subcommand may read. Fields left empty fall through to
/// the next layer (flags, then file, then built-in default).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub spec: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub maps: Option<String>,
    pub fovea_col: Option<usize>,
    pub fovea_csv: Option<PathBuf>,
    pub lateral_um: Option<f64>,
    pub axial_um: Option<f64>,
    pub threshold: Option<f32>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub plots: Option<bool>,
    pub preprocess: Option<PreprocessConfig>,
    pub measure: Option<MeasureConfig>,
    pub augment: Option<AugmentConfig>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Values from `top` win over values in `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, top; input, out, backend, spec, weights, maps, fovea_col, fovea_csv,
            lateral_um, axial_um, threshold, workers, seed, plots, preprocess, measure, augment)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("an output directory is required (--out or \"out\" in the config file)"),
        }
    }

    pub fn input_dir(&self) -> Result<&Path> {
        match &self.input {
            Some(p) => Ok(p),
            None => bail!("an input directory is required"),
        }
    }

    pub fn threshold(&self) -> Result<f32> {
        let t = self.threshold.unwrap_or(DEFAULT_THRESHOLD);
        if !(0.0..=1.0).contains(&t) {
            bail!("threshold {t} outside [0, 1]");
        }
        Ok(t)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let cfg = self.preprocess.clone().unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn measure(&self) -> Result<MeasureConfig> {
        let cfg = self.measure.clone().unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig =
            serde_json::from_str(r#"{"threshold": 0.3, "workers": 4, "seed": 9}"#).unwrap();
        let flags = RunConfig {
            threshold: Some(0.7),
            ..RunConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.threshold, Some(0.7));
        assert_eq!(merged.workers, Some(4));
        assert_eq!(merged.seed(), 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"treshold": 0.3}"#).is_err());
    }

    #[test]
    fn nested_configs_take_partial_objects() {
        let c: RunConfig =
            serde_json::from_str(r#"{"measure": {"area_halfwidth": 1500}}"#).unwrap();
        let m = c.measure().unwrap();
        assert_eq!(m.area_halfwidth, 1500.0);
        assert_eq!(m.smoothing_window, MeasureConfig::default().smoothing_window);
    }
}
