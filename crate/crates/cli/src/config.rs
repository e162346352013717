//! Flat `key = value` pipeline configuration.
//!
//! Every known key has a default, so the snapshot written to a run manifest
//! always lists the complete effective configuration. Later settings
//! override earlier ones: file values, then `--set`, then dedicated flags.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use canopyfuse::net::{parse_branches, Branch};
use canopyfuse::train::{parse_key_values, TrainConfig};

use crate::invalid;

const DEFAULTS: &[(&str, &str)] = &[
    // input paths; empty means unset
    ("bands", ""),
    ("labels", ""),
    ("footprints", ""),
    ("photons", ""),
    ("points", ""),
    ("centers", ""),
    ("checkpoint", ""),
    ("region_map", ""),
    ("prediction", ""),
    ("reference", ""),
    ("accuracy", ""),
    // synthetic scenes
    ("width", "128"),
    ("height", "128"),
    ("n_bands", "4"),
    ("height_field", "smooth"),
    ("band_model", "invertible"),
    ("region_grid", "3,3"),
    ("pixel_size", "10"),
    ("feature_size", "32"),
    ("pattern", "both"),
    ("gedi_along", "60"),
    ("gedi_across", "600"),
    ("height_noise", "0"),
    ("dropout", "0"),
    ("bad_quality", "0"),
    ("photons_per_meter", "5"),
    ("noise_rate", "0.5"),
    // lidar
    ("eps", "8.9"),
    ("min_pts", "11"),
    ("step_m", "10"),
    ("diameter", "25"),
    ("sigma_bins", "2"),
    // fusion
    ("harmonize", "icesat-to-gedi"),
    ("quality_filter", "true"),
    // model and tiling
    ("band_subset", ""),
    ("branches", "1,3,5,7,pool3"),
    ("entry_widths", "128,256,256"),
    ("num_blocks", "8"),
    ("patch", "15"),
    ("step", "1"),
    ("predict_step", "1"),
    // evaluation
    ("k", "10"),
    ("mode", "holdout"),
    ("train_regions", ""),
    ("test_regions", ""),
    ("tolerance", "10"),
    ("threshold", "80"),
];

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    values: BTreeMap<String, String>,
    train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_text(text: &str) -> anyhow::Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_key_values(text).map_err(|e| invalid(e.to_string()))? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        if self.train.set(key, value).map_err(|e| invalid(e.to_string()))? {
            return Ok(());
        }
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(invalid(format!("unknown config key {key:?}"))),
        }
    }

    /// The complete effective configuration, sorted by key.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut out = self.values.clone();
        for (k, v) in parse_key_values(&self.train.to_string()).expect("display output parses") {
            out.insert(k, v);
        }
        out
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(self.train.clone())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| invalid(format!("config key {key}: cannot parse {:?}: {e}", self.raw(key))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> anyhow::Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| invalid(format!("config key {key}: cannot parse {s:?}: {e}"))))
            .collect()
    }

    /// A required input path that must exist.
    pub fn input(&self, key: &str) -> anyhow::Result<PathBuf> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(invalid(format!("missing required input `{key}`")));
        }
        let p = PathBuf::from(raw);
        if !p.is_file() {
            return Err(invalid(format!("input `{key}` does not exist: {}", p.display())));
        }
        Ok(p)
    }

    /// Comma-separated input paths, each of which must exist.
    pub fn inputs(&self, key: &str) -> anyhow::Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> = self.list::<String>(key)?.into_iter().map(PathBuf::from).collect();
        if paths.is_empty() {
            return Err(invalid(format!("missing required input `{key}`")));
        }
        if let Some(p) = paths.iter().find(|p| !p.is_file()) {
            return Err(invalid(format!("input `{key}` does not exist: {}", p.display())));
        }
        Ok(paths)
    }

    pub fn optional_input(&self, key: &str) -> anyhow::Result<Option<PathBuf>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.input(key).map(Some)
        }
    }

    pub fn branches(&self) -> anyhow::Result<Vec<Branch>> {
        parse_branches(self.raw("branches")).map_err(|e| invalid(e.to_string()))
    }
}
