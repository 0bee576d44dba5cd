//! Pipeline configuration: one JSON document drives a full run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clean::CleaningRules;
use crate::error::{Error, Result};
use crate::features::{validate_specs, FeatureSpec};
use crate::ingest::{Category, WindowConfig};
use crate::report::RadarLayout;

/// Feature specs given inline or as a path to a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FeatureSource {
    Inline(Vec<FeatureSpec>),
    File(PathBuf),
}

impl<'de> Deserialize<'de> for FeatureSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(path) => Ok(FeatureSource::File(path.into())),
            other => serde_json::from_value(other)
                .map(FeatureSource::Inline)
                .map_err(D::Error::custom),
        }
    }
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Inline(Vec::new())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    /// Fixed dimension count per category; absent means automatic knee.
    pub dims: BTreeMap<Category, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Fixed k per category; absent means silhouette selection.
    pub k: BTreeMap<Category, usize>,
    pub silhouette_sample_cap: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k_min: 2,
            k_max: 10,
            restarts: 10,
            k: BTreeMap::new(),
            silhouette_sample_cap: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// JSON Lines inputs; `-` reads standard input.
    #[serde(default)]
    pub input: Vec<PathBuf>,
    /// Artifact directory. Not echoed into run artifacts.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub features: FeatureSource,
    #[serde(default)]
    pub cleaning: CleaningRules,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub report: RadarLayout,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: Vec::new(),
            output_dir: default_output_dir(),
            seed: 0,
            window: WindowConfig::default(),
            features: FeatureSource::default(),
            cleaning: CleaningRules::default(),
            pca: PcaConfig::default(),
            clustering: ClusteringConfig::default(),
            report: RadarLayout::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a config document. Relative paths stay as written.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// Reads a config file, resolving relative input, output and feature
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            if p.is_relative() && p != Path::new("-") {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        cfg.input = cfg.input.iter().map(|p| resolve(p)).collect();
        cfg.output_dir = resolve(&cfg.output_dir);
        if let FeatureSource::File(p) = &cfg.features {
            let p = resolve(p);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let specs: Vec<FeatureSpec> = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("features file {}: {e}", p.display())))?;
            cfg.features = FeatureSource::Inline(specs);
        }
        Ok(cfg)
    }

    /// Inline feature specs. Errors if they still point at an unloaded file.
    pub fn specs(&self) -> Result<&[FeatureSpec]> {
        match &self.features {
            FeatureSource::Inline(specs) => Ok(specs),
            FeatureSource::File(p) => Err(Error::config(format!(
                "features file {} has not been loaded",
                p.display()
            ))),
        }
    }

    /// Categories that have at least one feature, in canonical order.
    pub fn categories(&self) -> Result<Vec<Category>> {
        let specs = self.specs()?;
        Ok(Category::ALL
            .into_iter()
            .filter(|c| specs.iter().any(|s| s.category == *c))
            .collect())
    }

    /// Drops feature specs outside `category`.
    pub fn restrict_to(&mut self, category: Category) -> Result<()> {
        let specs: Vec<FeatureSpec> = self
            .specs()?
            .iter()
            .filter(|s| s.category == category)
            .cloned()
            .collect();
        if specs.is_empty() {
            return Err(Error::config(format!(
                "no features configured for category {category}"
            )));
        }
        self.features = FeatureSource::Inline(specs);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        validate_specs(self.specs()?, &self.window)?;
        self.cleaning.validate()?;
        self.report.validate()?;
        let c = &self.clustering;
        if c.k_min < 2 {
            return Err(Error::config("clustering.k_min must be at least 2"));
        }
        if c.k_max < c.k_min {
            return Err(Error::config(format!(
                "clustering.k_max ({}) is below clustering.k_min ({})",
                c.k_max, c.k_min
            )));
        }
        if c.restarts == 0 {
            return Err(Error::config("clustering.restarts must be at least 1"));
        }
        if c.silhouette_sample_cap < 2 {
            return Err(Error::config(
                "clustering.silhouette_sample_cap must be at least 2",
            ));
        }
        if let Some((cat, k)) = c.k.iter().find(|(_, k)| **k < 2) {
            return Err(Error::config(format!(
                "clustering.k.{cat} = {k} must be at least 2"
            )));
        }
        if let Some((cat, d)) = self.pca.dims.iter().find(|(_, d)| **d == 0) {
            return Err(Error::config(format!(
                "pca.dims.{cat} = {d} must be at least 1"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_case_study() {
        let cfg = PipelineConfig::from_json(
            r#"{"features":[{"name":"a","category":"action","match":["x"]}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.window.width_seconds, 300.0);
        assert_eq!(cfg.window.overlap_seconds, 30.0);
        assert_eq!(cfg.window.count, 2);
        assert_eq!(cfg.cleaning.min_duration_seconds, 300.0);
        assert_eq!(cfg.cleaning.max_duration_seconds, 2700.0);
        assert_eq!(cfg.cleaning.min_action_events, 10);
        assert_eq!(cfg.cleaning.outlier_sigma, 3.0);
        assert_eq!(cfg.cleaning.skew_threshold, 2.0);
        assert_eq!(
            cfg.cleaning
                .outlier_categories
                .iter()
                .copied()
                .collect::<Vec<_>>(),
            [Category::Action, Category::Feedback]
        );
        assert_eq!(cfg.clustering.k_min, 2);
        assert_eq!(cfg.clustering.k_max, 10);
        assert_eq!(cfg.clustering.restarts, 10);
        assert_eq!(cfg.report.radial_cap_percent, 300.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn overlap_error_names_the_field() {
        let cfg = PipelineConfig::from_json(
            r#"{"window":{"width_seconds":300,"overlap_seconds":300},
                "features":[{"name":"a","category":"action","match":["x"]}]}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("window.overlap_seconds"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"windw":{}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"cleaning":{"sigma":3}}"#).is_err());
    }

    #[test]
    fn overrides_parse_with_category_keys() {
        let cfg = PipelineConfig::from_json(
            r#"{"clustering":{"k":{"actions":6,"feedback":7,"progression":7}},"pca":{"dims":{"action":2}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.clustering.k[&Category::Action], 6);
        assert_eq!(cfg.clustering.k[&Category::Progression], 7);
        assert_eq!(cfg.pca.dims[&Category::Action], 2);
    }

    #[test]
    fn output_dir_is_not_echoed() {
        let cfg = PipelineConfig {
            output_dir: "/somewhere".into(),
            ..PipelineConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("somewhere"));
    }
}
