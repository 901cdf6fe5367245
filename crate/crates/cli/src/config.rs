//! Per-scene JSON configuration.

use std::path::{Path, PathBuf};

use mvsfuse_core::filtering::{MeshFilterThresholds, OutlierParams, SkyFilterParams, StatisticalParams};
use mvsfuse_core::projection::OutOfRangePolicy;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

fn default_fusion_views() -> u32 {
    1
}

fn default_sample_count() -> usize {
    500_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Retain,
    Strict,
}

impl From<Policy> for OutOfRangePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Retain => OutOfRangePolicy::Retain,
            Policy::Strict => OutOfRangePolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub scene: String,
    /// Working image resolution in pixels.
    pub resolution: u32,
    /// Depth confidence threshold of the upstream reconstruction; kept for the record.
    pub confidence: f64,
    pub view_number: u32,
    #[serde(default = "default_fusion_views")]
    pub fusion_views: u32,
    /// Free-form tag for the reconstruction environment, e.g. "cpu" or "gpu".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default)]
    pub out_of_range_policy: Policy,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepare: Option<PrepareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blend: Option<BlendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    /// Dense cloud to distribute.
    pub cloud: PathBuf,
    /// COLMAP text model providing the camera poses.
    pub cameras: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sky: Option<SkyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outliers: Option<OutlierConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkyConfig {
    pub min_brightness: f64,
    pub blue_dominance_margin: f64,
    pub min_l: f64,
    pub max_b: f64,
}

impl Default for SkyConfig {
    fn default() -> Self {
        let p = SkyFilterParams::default();
        Self {
            min_brightness: p.min_brightness,
            blue_dominance_margin: p.blue_dominance_margin,
            min_l: p.min_l,
            max_b: p.max_b,
        }
    }
}

impl From<SkyConfig> for SkyFilterParams {
    fn from(c: SkyConfig) -> Self {
        SkyFilterParams {
            min_brightness: c.min_brightness,
            blue_dominance_margin: c.blue_dominance_margin,
            min_l: c.min_l,
            max_b: c.max_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub std_multiplier: f64,
}

/// Either stage may be switched off with `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutlierConfig {
    pub quantile_margin: Option<f64>,
    pub knn: Option<KnnConfig>,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        let p = OutlierParams::default();
        Self {
            quantile_margin: p.quantile_margin,
            knn: p.statistical.map(|s| KnnConfig {
                k: s.k,
                std_multiplier: s.std_multiplier,
            }),
        }
    }
}

impl From<OutlierConfig> for OutlierParams {
    fn from(c: OutlierConfig) -> Self {
        OutlierParams {
            quantile_margin: c.quantile_margin,
            statistical: c.knn.map(|k| StatisticalParams {
                k: k.k,
                std_multiplier: k.std_multiplier,
            }),
        }
    }
}

fn default_max_iterations() -> usize {
    50
}

fn default_passes() -> usize {
    2
}

fn default_convergence_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub source_cloud: PathBuf,
    pub source_cameras: PathBuf,
    pub target_cloud: PathBuf,
    pub target_cameras: PathBuf,
    /// First-pass rejection radius; defaults to 1% of the target's bounding-box diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_corr_dist: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default = "default_convergence_eps")]
    pub convergence_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub input: PathBuf,
    #[serde(default = "MeshConfig::default_max_area")]
    pub max_area: f64,
    #[serde(default = "MeshConfig::default_max_edge")]
    pub max_edge: f64,
    #[serde(default = "MeshConfig::default_max_aspect")]
    pub max_aspect: f64,
}

impl MeshConfig {
    fn default_max_area() -> f64 {
        MeshFilterThresholds::default().max_area
    }

    fn default_max_edge() -> f64 {
        MeshFilterThresholds::default().max_edge
    }

    fn default_max_aspect() -> f64 {
        MeshFilterThresholds::default().max_aspect
    }

    pub fn thresholds(&self) -> MeshFilterThresholds {
        MeshFilterThresholds {
            max_area: self.max_area,
            max_edge: self.max_edge,
            max_aspect: self.max_aspect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMethod {
    NormalClone,
    MonochromeTransfer,
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendPair {
    pub original: PathBuf,
    pub rendered: PathBuf,
    /// Region to take from the rendered image; Poisson methods only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub method: BlendMethod,
    /// Normalized low-band radius in (0, 1]; frequency method only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// File name under `<output_dir>/blended`.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendConfig {
    pub pairs: Vec<BlendPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeInput {
    pub path: PathBuf,
    /// Source label; defaults to the tags stored in the file, else the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    pub inputs: Vec<MergeInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_voxel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub ground_truth: PathBuf,
    /// Defaults to the merge stage output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PathBuf>,
    pub tau: f64,
}

fn err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        message: message.into(),
    }
}

fn non_empty(path: &str, p: &Path) -> Result<(), ConfigError> {
    if p.as_os_str().is_empty() {
        return Err(err(path, "path must not be empty"));
    }
    Ok(())
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(err(path, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

impl SceneConfig {
    /// Parses and validates. Error paths name the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: SceneConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(&path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scene.trim().is_empty() {
            return Err(err("scene", "must not be empty"));
        }
        if self.scene.contains(['/', '\\']) {
            return Err(err("scene", "must not contain path separators"));
        }
        if self.resolution == 0 {
            return Err(err("resolution", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(err("confidence", format!("must be in [0, 1], got {}", self.confidence)));
        }
        if self.view_number == 0 {
            return Err(err("view_number", "must be positive"));
        }
        if self.fusion_views == 0 {
            return Err(err("fusion_views", "must be positive"));
        }
        if self.sample_count == 0 {
            return Err(err("sample_count", "must be positive"));
        }
        non_empty("output_dir", &self.output_dir)?;
        if let Some(p) = &self.prepare {
            non_empty("prepare.cloud", &p.cloud)?;
            non_empty("prepare.cameras", &p.cameras)?;
            if let Some(sky) = p.sky {
                SkyFilterParams::from(sky)
                    .validate()
                    .map_err(|e| err("prepare.sky", e.to_string()))?;
            }
            if let Some(o) = p.outliers {
                OutlierParams::from(o)
                    .validate()
                    .map_err(|e| err("prepare.outliers", e.to_string()))?;
            }
        }
        if let Some(a) = &self.align {
            non_empty("align.source_cloud", &a.source_cloud)?;
            non_empty("align.source_cameras", &a.source_cameras)?;
            non_empty("align.target_cloud", &a.target_cloud)?;
            non_empty("align.target_cameras", &a.target_cameras)?;
            if let Some(d) = a.max_corr_dist {
                positive("align.max_corr_dist", d)?;
            }
            if a.max_iterations == 0 {
                return Err(err("align.max_iterations", "must be positive"));
            }
            if a.passes == 0 {
                return Err(err("align.passes", "must be positive"));
            }
            if !(a.convergence_eps >= 0.0 && a.convergence_eps.is_finite()) {
                return Err(err("align.convergence_eps", "must be non-negative"));
            }
        }
        if let Some(m) = &self.mesh {
            non_empty("mesh.input", &m.input)?;
            positive("mesh.max_area", m.max_area)?;
            positive("mesh.max_edge", m.max_edge)?;
            positive("mesh.max_aspect", m.max_aspect)?;
        }
        if let Some(b) = &self.blend {
            if b.pairs.is_empty() {
                return Err(err("blend.pairs", "must list at least one pair"));
            }
            for (i, pair) in b.pairs.iter().enumerate() {
                let at = |f: &str| format!("blend.pairs[{i}].{f}");
                non_empty(&at("original"), &pair.original)?;
                non_empty(&at("rendered"), &pair.rendered)?;
                let name = Path::new(&pair.output);
                if pair.output.is_empty() || name.file_name() != Some(name.as_os_str()) {
                    return Err(err(&at("output"), "must be a plain file name"));
                }
                match pair.method {
                    BlendMethod::Frequency => {
                        let c = pair
                            .cutoff
                            .ok_or_else(|| err(&at("cutoff"), "required for the frequency method"))?;
                        if !(c > 0.0 && c <= 1.0) {
                            return Err(err(&at("cutoff"), format!("must be in (0, 1], got {c}")));
                        }
                    }
                    BlendMethod::NormalClone | BlendMethod::MonochromeTransfer => {
                        let mask = pair
                            .mask
                            .as_ref()
                            .ok_or_else(|| err(&at("mask"), "required for Poisson methods"))?;
                        non_empty(&at("mask"), mask)?;
                    }
                }
            }
        }
        if let Some(m) = &self.merge {
            if m.inputs.is_empty() {
                return Err(err("merge.inputs", "must list at least one cloud"));
            }
            for (i, input) in m.inputs.iter().enumerate() {
                non_empty(&format!("merge.inputs[{i}].path"), &input.path)?;
            }
            if let Some(v) = m.dedup_voxel {
                positive("merge.dedup_voxel", v)?;
            }
        }
        if let Some(e) = &self.eval {
            non_empty("eval.ground_truth", &e.ground_truth)?;
            positive("eval.tau", e.tau)?;
            if e.prediction.is_none() && self.merge.is_none() {
                return Err(err("eval.prediction", "required when the config has no merge section"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MUSEUM: &str = r#"{
        "scene": "Museum",
        "resolution": 2048,
        "confidence": 0.5,
        "view_number": 20
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = SceneConfig::from_json(MUSEUM).unwrap();
        assert_eq!(c.scene, "Museum");
        assert_eq!((c.resolution, c.confidence, c.view_number), (2048, 0.5, 20));
        assert_eq!(c.sample_count, 500_000);
        assert_eq!(c.out_of_range_policy, Policy::Retain);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.prepare.is_none());
    }

    #[test]
    fn dump_is_canonical() {
        let c = SceneConfig::from_json(MUSEUM).unwrap();
        let dumped = c.to_json();
        let again = SceneConfig::from_json(&dumped).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_json(), dumped);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MUSEUM.replace("\"view_number\"", "\"view_numbr\": 3, \"view_number\"");
        let e = SceneConfig::from_json(&text).unwrap_err();
        assert!(e.message.contains("view_numbr"), "{e}");

        let text = MUSEUM.replace(
            "\"view_number\": 20",
            "\"view_number\": 20, \"prepare\": {\"cloud\": \"a.ply\", \"cameras\": \"c\", \"sky\": {\"min_L\": 3}}",
        );
        let e = SceneConfig::from_json(&text).unwrap_err();
        assert_eq!(e.path, "prepare.sky.min_L");
    }

    #[test]
    fn validation_names_fields() {
        let cases = [
            ("\"resolution\": 2048", "\"resolution\": 0", "resolution"),
            ("\"confidence\": 0.5", "\"confidence\": 1.5", "confidence"),
            (
                "\"view_number\": 20",
                "\"view_number\": 20, \"merge\": {\"inputs\": []}",
                "merge.inputs",
            ),
            (
                "\"view_number\": 20",
                "\"view_number\": 20, \"eval\": {\"ground_truth\": \"gt.ply\", \"tau\": 0.1}",
                "eval.prediction",
            ),
            (
                "\"view_number\": 20",
                "\"view_number\": 20, \"blend\": {\"pairs\": [{\"original\": \"a.png\", \"rendered\": \"b.png\", \"method\": \"frequency\", \"cutoff\": 0, \"output\": \"c.png\"}]}",
                "blend.pairs[0].cutoff",
            ),
            (
                "\"view_number\": 20",
                "\"view_number\": 20, \"blend\": {\"pairs\": [{\"original\": \"a.png\", \"rendered\": \"b.png\", \"method\": \"normal_clone\", \"output\": \"../c.png\", \"mask\": \"m.png\"}]}",
                "blend.pairs[0].output",
            ),
        ];
        for (from, to, path) in cases {
            let e = SceneConfig::from_json(&MUSEUM.replace(from, to)).unwrap_err();
            assert_eq!(e.path, path, "{e}");
        }
    }

    #[test]
    fn type_errors_carry_paths() {
        let e = SceneConfig::from_json(&MUSEUM.replace("2048", "\"big\"")).unwrap_err();
        assert_eq!(e.path, "resolution");
    }
}
