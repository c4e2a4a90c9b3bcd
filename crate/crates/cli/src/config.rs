//! Run configuration: a JSON file whose relative paths resolve against the
//! file's directory, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use palmsight_core::cluster::{HdbscanParams, Selection};
use palmsight_core::deteval::MatchConfig;
use palmsight_core::raster::SampleMode;
use palmsight_core::score::IdwParams;
use palmsight_core::stats::Adjustment;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub detections: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    pub study_area: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub labeled_area: Option<PathBuf>,
    pub buildings: Option<PathBuf>,
    pub gbif: Option<PathBuf>,
    pub srtm_dir: Option<PathBuf>,
}

impl Inputs {
    pub fn named(&self) -> Vec<(&'static str, &PathBuf)> {
        [
            ("detections", &self.detections),
            ("centroids", &self.centroids),
            ("study_area", &self.study_area),
            ("labels", &self.labels),
            ("labeled_area", &self.labeled_area),
            ("buildings", &self.buildings),
            ("gbif", &self.gbif),
            ("srtm_dir", &self.srtm_dir),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|p| (k, p)))
        .collect()
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.detections,
            &mut self.centroids,
            &mut self.study_area,
            &mut self.labels,
            &mut self.labeled_area,
            &mut self.buildings,
            &mut self.gbif,
            &mut self.srtm_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub min_confidence: f64,
    /// Confidence for features that carry none.
    pub default_confidence: Option<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.4,
            default_confidence: None,
        }
    }
}

/// Coordinates the clustering distances are measured in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    #[default]
    Meters,
    /// Raw longitude/latitude degrees.
    Degrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub min_cluster_size: usize,
    pub min_samples: Option<usize>,
    pub selection: Selection,
    pub space: ClusterSpace,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let p = HdbscanParams::default();
        Self {
            min_cluster_size: p.min_cluster_size,
            min_samples: p.min_samples,
            selection: p.selection,
            space: ClusterSpace::Meters,
        }
    }
}

impl ClusterConfig {
    pub fn params(&self) -> HdbscanParams {
        HdbscanParams {
            min_cluster_size: self.min_cluster_size,
            min_samples: self.min_samples,
            selection: self.selection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdwConfig {
    pub radius: f64,
    pub decay_w: f64,
    /// Score against the members of the enclosing cluster only.
    pub cluster_only: bool,
}

impl Default for IdwConfig {
    fn default() -> Self {
        let p = IdwParams::default();
        Self {
            radius: p.radius,
            decay_w: p.decay_w,
            cluster_only: false,
        }
    }
}

impl IdwConfig {
    pub fn params(&self) -> IdwParams {
        IdwParams {
            radius: self.radius,
            decay_w: self.decay_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub n: usize,
    pub buffer_m: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { n: 100, buffer_m: 1000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub sample_size: usize,
    pub ci_level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            sample_size: 17,
            ci_level: 0.80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cell_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { cell_size: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElevationConfig {
    pub mode: SampleMode,
    pub buffer_m: f64,
    pub iqr_k: f64,
    pub dunn_adjustment: Adjustment,
    pub kde_points: usize,
}

impl Default for ElevationConfig {
    fn default() -> Self {
        Self {
            mode: SampleMode::Bilinear,
            buffer_m: 1000.0,
            iqr_k: 1.5,
            dunn_adjustment: Adjustment::Holm,
            kde_points: 128,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    /// Output directory; kept out of the persisted copy so runs into
    /// different directories persist identical configs.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub detections: DetectionConfig,
    pub cluster: ClusterConfig,
    pub idw: IdwConfig,
    pub controls: ControlConfig,
    pub bootstrap: BootstrapConfig,
    pub grid: GridConfig,
    pub elevation: ElevationConfig,
    pub deteval: MatchConfig,
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub confidence: Option<f64>,
    pub min_cluster_size: Option<usize>,
    pub radius: Option<f64>,
    pub decay_w: Option<f64>,
    pub ci_level: Option<f64>,
    pub cluster_only: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        cfg.inputs.resolve(&base);
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
        if let Some(c) = o.confidence {
            self.detections.min_confidence = c;
        }
        if let Some(m) = o.min_cluster_size {
            self.cluster.min_cluster_size = m;
        }
        if let Some(r) = o.radius {
            self.idw.radius = r;
        }
        if let Some(w) = o.decay_w {
            self.idw.decay_w = w;
        }
        if let Some(ci) = o.ci_level {
            self.bootstrap.ci_level = ci;
        }
        if o.cluster_only {
            self.idw.cluster_only = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detections.min_confidence) {
            bail!("detections.min_confidence must be in [0, 1]");
        }
        self.cluster.params().validate()?;
        self.idw.params().validate()?;
        if !(self.bootstrap.ci_level > 0.0 && self.bootstrap.ci_level < 1.0) {
            bail!("bootstrap.ci_level must be in (0, 1)");
        }
        if self.bootstrap.samples == 0 || self.bootstrap.sample_size == 0 {
            bail!("bootstrap.samples and bootstrap.sample_size must be positive");
        }
        if self.grid.cell_size.is_nan() || self.grid.cell_size <= 0.0 {
            bail!("grid.cell_size must be positive");
        }
        self.deteval.validate()?;
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("palmsight-out"))
    }

    /// Seed for a named sub-task, derived from the run seed.
    pub fn sub_seed(&self, task: Task) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(task as u64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Task {
    ControlsWithin = 1,
    ControlsNoSites = 2,
    BootstrapSites = 3,
    BootstrapWithin = 4,
    BootstrapNoSites = 5,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"inputs":{"detections":"d.geojson"},"seed":3,"idw":{"radius":500}}"#).unwrap();
        let mut cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.inputs.detections.as_deref(), Some(dir.path().join("d.geojson").as_path()));
        assert_eq!(cfg.idw.radius, 500.0);
        assert_eq!(cfg.cluster.min_cluster_size, 100);
        cfg.apply(&Overrides {
            radius: Some(750.0),
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!((cfg.idw.radius, cfg.seed), (750.0, 9));
        assert!(!cfg.to_json().contains("output_dir"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"sede":3}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }
}
