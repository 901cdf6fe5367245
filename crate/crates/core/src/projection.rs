//! Pinhole projection of world points and per-view distribution of sparse
//! points for dense-reconstruction initialization.
//!
//! Pixel convention: origin at the top-left corner, x to the right, y down,
//! pixel centers at integer coordinates.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraPose, PointCloud, Vec3};

/// Projections with `|depth|` below this are rejected as lying on the camera plane.
pub const MIN_ABS_DEPTH: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("point projects onto the camera plane (depth {0:e})")]
    DegenerateProjection(f64),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("sample count must be at least 1")]
    InvalidCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub point_id: u64,
    pub pixel: Vector2<f64>,
    pub depth: f64,
    /// Inside `[0, width) × [0, height)` with positive depth.
    pub in_image: bool,
}

/// What to do with points behind a camera or outside its image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfRangePolicy {
    /// List every projection, even with negative depth or off-image pixels.
    #[default]
    Retain,
    /// Only list projections with `in_image == true`.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewTrack {
    pub camera_id: String,
    pub observations: Vec<ProjectedPoint>,
}

/// Output of [`distribute_points`]: one track per camera plus the global point
/// table. Point ids are indices into `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub tracks: Vec<ViewTrack>,
    pub points: PointCloud,
}

/// Projects `point` into `camera`: `p̃ = K (R p + t)`, depth `p̃.z`, pixel `p̃.xy / p̃.z`.
///
/// Negative depths are divided through as well; such points are reported with
/// `in_image = false`.
pub fn project_point(camera: &CameraPose, point_id: u64, point: &Vec3) -> Result<ProjectedPoint, ProjectionError> {
    let homogeneous = camera.intrinsics() * (camera.rotation() * point + camera.translation());
    let depth = homogeneous.z;
    if !(depth.abs() >= MIN_ABS_DEPTH) {
        return Err(ProjectionError::DegenerateProjection(depth));
    }
    let pixel = Vector2::new(homogeneous.x / depth, homogeneous.y / depth);
    let in_image = depth > 0.0
        && pixel.x >= 0.0
        && pixel.x < camera.width() as f64
        && pixel.y >= 0.0
        && pixel.y < camera.height() as f64;
    Ok(ProjectedPoint {
        point_id,
        pixel,
        depth,
        in_image,
    })
}

/// Inverse of [`project_point`]: the world point seen at `pixel` with `depth`.
pub fn unproject(camera: &CameraPose, pixel: &Vector2<f64>, depth: f64) -> Vec3 {
    let homogeneous = Vec3::new(pixel.x * depth, pixel.y * depth, depth);
    let k = camera.intrinsics();
    // K is upper-triangular: back-substitute rather than invert.
    let z = homogeneous.z;
    let y = (homogeneous.y - k[(1, 2)] * z) / k[(1, 1)];
    let x = (homogeneous.x - k[(0, 1)] * y - k[(0, 2)] * z) / k[(0, 0)];
    let camera_point = Vec3::new(x, y, z);
    camera.rotation().transpose() * (camera_point - camera.translation())
}

/// Assigns every point the id equal to its index and lists its projection in
/// each camera according to `policy`. Projections exactly on a camera plane
/// have no pixel and are never listed.
pub fn distribute_points(
    cloud: &PointCloud,
    cameras: &[CameraPose],
    policy: OutOfRangePolicy,
) -> Result<Distribution, ProjectionError> {
    if cloud.is_empty() {
        return Err(ProjectionError::EmptyCloud);
    }
    let tracks = cameras
        .par_iter()
        .map(|camera| {
            let observations = cloud
                .positions()
                .iter()
                .enumerate()
                .filter_map(|(i, p)| project_point(camera, i as u64, p).ok())
                .filter(|obs| policy == OutOfRangePolicy::Retain || obs.in_image)
                .collect();
            ViewTrack {
                camera_id: camera.id().to_string(),
                observations,
            }
        })
        .collect();
    Ok(Distribution {
        tracks,
        points: cloud.clone(),
    })
}

/// Draws `n` points uniformly without replacement (seeded), preserving input
/// order among the survivors. Clouds with at most `n` points come back as-is.
pub fn sample_uniform(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, ProjectionError> {
    if n == 0 {
        return Err(ProjectionError::InvalidCount);
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    // Fisher–Yates, stopped after the first `n` slots are fixed.
    for i in 0..n {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let mut picked = order;
    picked.truncate(n);
    picked.sort_unstable();
    Ok(cloud.select(&picked))
}
