//! Point-cloud and mesh cleanup: color-based sky removal, far-outlier removal,
//! mesh face filtering and ensembling of several clouds into one.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{PointCloud, SourceTags, TriangleMesh, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("point cloud has no colors")]
    MissingColors,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no clouds to merge")]
    EmptyList,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("too many distinct source labels ({0})")]
    TooManySources(usize),
}

/// CIELAB coordinates under D65.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (8-bit) → linear RGB → XYZ (D65) → CIELAB.
pub fn rgb_to_lab(rgb: [u8; 3]) -> Lab {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / D65_WHITE[0]);
    let fy = lab_f(y / D65_WHITE[1]);
    let fz = lab_f(z / D65_WHITE[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Thresholds for the two sky rules; a point matching either is removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyFilterParams {
    /// RGB rule: minimum mean of R, G, B.
    pub min_brightness: f64,
    /// RGB rule: B must exceed both R and G by this much.
    pub blue_dominance_margin: f64,
    /// LAB rule: minimum lightness.
    pub min_l: f64,
    /// LAB rule: maximum b* (negative = blue).
    pub max_b: f64,
}

impl Default for SkyFilterParams {
    fn default() -> Self {
        Self {
            min_brightness: 120.0,
            blue_dominance_margin: 30.0,
            min_l: 60.0,
            max_b: -15.0,
        }
    }
}

impl SkyFilterParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=255.0).contains(&self.min_brightness) {
            return Err(FilterError::InvalidParams("min_brightness must be in [0, 255]".into()));
        }
        if !(0.0..=255.0).contains(&self.blue_dominance_margin) {
            return Err(FilterError::InvalidParams(
                "blue_dominance_margin must be in [0, 255]".into(),
            ));
        }
        if !(0.0..=100.0).contains(&self.min_l) {
            return Err(FilterError::InvalidParams("min_l must be in [0, 100]".into()));
        }
        if !self.max_b.is_finite() {
            return Err(FilterError::InvalidParams("max_b must be finite".into()));
        }
        Ok(())
    }

    pub fn is_sky(&self, rgb: [u8; 3]) -> bool {
        let [r, g, b] = rgb.map(f64::from);
        let rgb_rule = b >= r + self.blue_dominance_margin
            && b >= g + self.blue_dominance_margin
            && (r + g + b) / 3.0 >= self.min_brightness;
        rgb_rule || {
            let lab = rgb_to_lab(rgb);
            lab.l >= self.min_l && lab.b <= self.max_b
        }
    }
}

/// Splits `cloud` into `(kept, removed)` where `removed` holds the sky points.
pub fn filter_sky(cloud: &PointCloud, params: &SkyFilterParams) -> Result<(PointCloud, PointCloud), FilterError> {
    params.validate()?;
    if cloud.is_empty() {
        return Ok((cloud.clone(), cloud.select(&[])));
    }
    let colors = cloud.colors().ok_or(FilterError::MissingColors)?;
    Ok(cloud.partition(|i| !params.is_sky(colors[i])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticalParams {
    /// Neighbours per point, excluding the point itself.
    pub k: usize,
    pub std_multiplier: f64,
}

/// Far-outlier removal. Each stage can be switched off with `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierParams {
    /// Margin `q` of the per-axis `[q, 1 − q]` quantile box.
    pub quantile_margin: Option<f64>,
    pub statistical: Option<StatisticalParams>,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            quantile_margin: Some(0.01),
            statistical: Some(StatisticalParams {
                k: 8,
                std_multiplier: 3.0,
            }),
        }
    }
}

/// Each side of the quantile box is pushed out by this many box extents.
pub const QUANTILE_BOX_EXPANSION: f64 = 3.0;

/// Upper bound on quantile-box rounds.
pub const MAX_BOX_ROUNDS: usize = 64;

impl OutlierParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        if let Some(q) = self.quantile_margin {
            if !(q > 0.0 && q < 0.5) {
                return Err(FilterError::InvalidParams(format!(
                    "quantile_margin must be in (0, 0.5), got {q}"
                )));
            }
        }
        if let Some(s) = self.statistical {
            if s.k == 0 {
                return Err(FilterError::InvalidParams("k must be >= 1".into()));
            }
            if !(s.std_multiplier > 0.0 && s.std_multiplier.is_finite()) {
                return Err(FilterError::InvalidParams("std_multiplier must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn quantile_box_keep(points: &[Vec3], margin: f64) -> Vec<bool> {
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    for axis in 0..3 {
        let mut values: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        values.sort_by(f64::total_cmp);
        let a = quantile(&values, margin);
        let b = quantile(&values, 1.0 - margin);
        let extent = b - a;
        lo[axis] = a - QUANTILE_BOX_EXPANSION * extent;
        hi[axis] = b + QUANTILE_BOX_EXPANSION * extent;
    }
    points
        .iter()
        .map(|p| (0..3).all(|axis| p[axis] >= lo[axis] && p[axis] <= hi[axis]))
        .collect()
}

fn statistical_keep(points: &[Vec3], params: &StatisticalParams) -> Vec<bool> {
    let tree = KdTree::new(points);
    let mean_dist: Vec<f64> = points
        .par_iter()
        .map(|p| {
            // The query point is its own first neighbour.
            let nn = tree.nearest_k(p, params.k + 1);
            nn.iter().skip(1).map(|n| n.distance()).sum::<f64>() / params.k as f64
        })
        .collect();
    let n = mean_dist.len() as f64;
    let mean = mean_dist.iter().sum::<f64>() / n;
    let var = mean_dist.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let limit = mean + params.std_multiplier * var.sqrt();
    mean_dist.iter().map(|&d| d <= limit).collect()
}

/// Removes far outliers: points outside the expanded per-axis quantile box,
/// then points whose mean k-NN distance exceeds `mean + std_multiplier · std`.
///
/// The box stage is repeated until it removes nothing. The statistical stage
/// runs once; a second application may peel a few more boundary points.
pub fn filter_outliers(cloud: &PointCloud, params: &OutlierParams) -> Result<PointCloud, FilterError> {
    params.validate()?;
    if let Some(s) = params.statistical {
        if cloud.len() < s.k + 1 {
            return Err(FilterError::TooFewPoints {
                needed: s.k + 1,
                got: cloud.len(),
            });
        }
    }
    let mut current = cloud.clone();
    if let Some(q) = params.quantile_margin {
        for _ in 0..MAX_BOX_ROUNDS {
            if current.is_empty() {
                break;
            }
            let keep = quantile_box_keep(current.positions(), q);
            if keep.iter().all(|&k| k) {
                break;
            }
            current = current.partition(|i| keep[i]).0;
        }
    }
    if let Some(s) = params.statistical {
        if current.len() > s.k {
            let keep = statistical_keep(current.positions(), &s);
            current = current.partition(|i| keep[i]).0;
        }
    }
    Ok(current)
}

/// Face retention thresholds in mesh units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshFilterThresholds {
    /// Faces must have area strictly below this.
    pub max_area: f64,
    /// Longest edge must be at most this.
    pub max_edge: f64,
    /// Longest/shortest edge ratio must be at most this.
    pub max_aspect: f64,
}

impl Default for MeshFilterThresholds {
    fn default() -> Self {
        Self {
            max_area: 0.05,
            max_edge: 0.25,
            max_aspect: 7.0,
        }
    }
}

impl MeshFilterThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, v) in [
            ("max_area", self.max_area),
            ("max_edge", self.max_edge),
            ("max_aspect", self.max_aspect),
        ] {
            if !(v > 0.0) {
                return Err(FilterError::InvalidParams(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn keeps(&self, stats: &crate::geometry::FaceStats) -> bool {
        stats.area < self.max_area && stats.max_edge <= self.max_edge && stats.aspect_ratio() <= self.max_aspect
    }
}

/// Drops large or elongated faces and any vertex left unreferenced.
pub fn filter_mesh_faces(mesh: &TriangleMesh, thresholds: &MeshFilterThresholds) -> Result<TriangleMesh, FilterError> {
    thresholds.validate()?;
    Ok(mesh.retain_faces(|i| thresholds.keeps(&mesh.face_stats(i))))
}

/// Concatenates clouds, keeping per-point source labels.
///
/// Untagged inputs are labelled `input<N>` by position. Colors and normals
/// survive only if every input has them. With `dedup_voxel`, only the first
/// point (in input order) of each voxel is kept.
pub fn merge_clouds(clouds: &[PointCloud], dedup_voxel: Option<f64>) -> Result<PointCloud, FilterError> {
    if clouds.is_empty() {
        return Err(FilterError::EmptyList);
    }
    if let Some(v) = dedup_voxel {
        if !(v > 0.0 && v.is_finite()) {
            return Err(FilterError::InvalidParams(format!(
                "dedup_voxel must be positive, got {v}"
            )));
        }
    }
    let total: usize = clouds.iter().map(PointCloud::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut labels: Vec<String> = Vec::new();
    let mut per_point = Vec::with_capacity(total);
    let all_colors = clouds.iter().all(|c| c.colors().is_some());
    let all_normals = clouds.iter().all(|c| c.normals().is_some());
    let mut colors = Vec::new();
    let mut normals = Vec::new();

    let label_index = |label: &str, labels: &mut Vec<String>| -> Result<u16, FilterError> {
        let idx = match labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                labels.push(label.to_string());
                labels.len() - 1
            }
        };
        u16::try_from(idx).map_err(|_| FilterError::TooManySources(idx + 1))
    };

    for (ci, cloud) in clouds.iter().enumerate() {
        positions.extend_from_slice(cloud.positions());
        match cloud.sources() {
            Some(tags) => {
                let remap = tags
                    .labels
                    .iter()
                    .map(|l| label_index(l, &mut labels))
                    .collect::<Result<Vec<_>, _>>()?;
                per_point.extend(tags.per_point.iter().map(|&i| remap[i as usize]));
            }
            None => {
                let idx = label_index(&format!("input{ci}"), &mut labels)?;
                per_point.extend(std::iter::repeat_n(idx, cloud.len()));
            }
        }
        if all_colors {
            colors.extend_from_slice(cloud.colors().unwrap());
        }
        if all_normals {
            normals.extend_from_slice(cloud.normals().unwrap());
        }
    }

    let mut merged = PointCloud::new(positions);
    if all_colors {
        merged = merged.with_colors(colors).expect("lengths match");
    }
    if all_normals {
        merged = merged.with_normals(normals).expect("inputs validated");
    }
    merged = merged
        .with_sources(SourceTags { labels, per_point })
        .expect("indices in range");

    match dedup_voxel {
        None => Ok(merged),
        Some(voxel) => {
            let mut seen = HashSet::with_capacity(merged.len());
            let keep: Vec<usize> = merged
                .positions()
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    let key = (
                        (p.x / voxel).floor() as i64,
                        (p.y / voxel).floor() as i64,
                        (p.z / voxel).floor() as i64,
                    );
                    seen.insert(key)
                })
                .map(|(i, _)| i)
                .collect();
            Ok(merged.select(&keep))
        }
    }
}
