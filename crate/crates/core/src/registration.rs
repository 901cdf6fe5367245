//! Camera-pose based similarity initialization followed by scaled
//! point-to-point ICP.
//!
//! The pose step matches cameras by id, drops any camera missing from either
//! side, and solves the scaled orthogonal Procrustes problem on the camera
//! centers in closed form. ICP then re-solves the same problem on
//! nearest-neighbour correspondences, in several passes with a shrinking
//! rejection radius.

use std::collections::{HashMap, HashSet};

use nalgebra::Matrix3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraPose, Mat3, PointCloud, Sim3Transform, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("only {0} camera ids match, need at least 3")]
    TooFewMatches(usize),
    #[error("duplicate camera id `{0}`")]
    DuplicateId(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no correspondences within {max_corr_dist} (pass {pass})")]
    NoCorrespondences { pass: usize, max_corr_dist: f64 },
    #[error("invalid ICP parameters: {0}")]
    InvalidParams(String),
    #[error("clouds need at least 3 points")]
    TooFewPoints,
}

/// Index-aligned `(target, source)` point pairs; the estimated transform maps
/// source onto target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseCorrespondence {
    pub ids: Vec<String>,
    pub pairs: Vec<(Vec3, Vec3)>,
}

impl PoseCorrespondence {
    pub fn from_pairs(pairs: Vec<(Vec3, Vec3)>) -> Self {
        Self { ids: Vec::new(), pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub transform: Sim3Transform,
    /// Sum of squared pair distances after alignment.
    pub residual: f64,
    /// `sqrt(residual / N)`.
    pub rms: f64,
    pub pairs: usize,
}

impl AlignmentResult {
    fn new(transform: Sim3Transform, residual: f64, pairs: usize) -> Self {
        Self {
            transform,
            residual,
            rms: if pairs > 0 {
                (residual / pairs as f64).sqrt()
            } else {
                0.0
            },
            pairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondence rejection radius of the first pass; halved for each later pass.
    pub max_corr_dist: f64,
    /// Stop a pass once the relative RMS improvement falls below this.
    pub convergence_eps: f64,
    pub passes: usize,
}

impl IcpParams {
    pub const DEFAULT_MAX_ITERATIONS: usize = 50;
    pub const DEFAULT_CONVERGENCE_EPS: f64 = 1e-6;
    pub const DEFAULT_PASSES: usize = 2;
    /// Default radius as a fraction of the target bounding-box diagonal.
    pub const DEFAULT_RADIUS_FRACTION: f64 = 0.01;

    /// Defaults with the rejection radius set to 1% of `target`'s bounding-box diagonal.
    pub fn for_target(target: &PointCloud) -> Self {
        Self {
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            max_corr_dist: Self::DEFAULT_RADIUS_FRACTION * target.bbox_diagonal(),
            convergence_eps: Self::DEFAULT_CONVERGENCE_EPS,
            passes: Self::DEFAULT_PASSES,
        }
    }

    pub fn validate(&self) -> Result<(), RegistrationError> {
        if !(self.max_corr_dist.is_finite() && self.max_corr_dist > 0.0) {
            return Err(RegistrationError::InvalidParams(format!(
                "max_corr_dist must be positive, got {}",
                self.max_corr_dist
            )));
        }
        if self.passes == 0 {
            return Err(RegistrationError::InvalidParams("passes must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(RegistrationError::InvalidParams("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_eps >= 0.0) {
            return Err(RegistrationError::InvalidParams(
                "convergence_eps must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub alignment: AlignmentResult,
    /// RMS of every accepted iterate, starting with the initial transform.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

impl IcpResult {
    /// RMS of the correspondences under the initial transform.
    pub fn initial_rms(&self) -> f64 {
        self.rms_history[0]
    }
}

fn index_by_id(cameras: &[CameraPose]) -> Result<HashMap<&str, &CameraPose>, RegistrationError> {
    let mut map = HashMap::with_capacity(cameras.len());
    for cam in cameras {
        if map.insert(cam.id(), cam).is_some() {
            return Err(RegistrationError::DuplicateId(cam.id().to_string()));
        }
    }
    Ok(map)
}

/// Pairs camera centers by id, in `target` order. Ids present on only one
/// side are dropped.
pub fn match_poses(target: &[CameraPose], source: &[CameraPose]) -> Result<PoseCorrespondence, RegistrationError> {
    let by_id = index_by_id(source)?;
    let mut seen = HashSet::with_capacity(target.len());
    let mut matched = PoseCorrespondence::default();
    for cam in target {
        if !seen.insert(cam.id()) {
            return Err(RegistrationError::DuplicateId(cam.id().to_string()));
        }
        if let Some(other) = by_id.get(cam.id()) {
            matched.ids.push(cam.id().to_string());
            matched.pairs.push((cam.center(), other.center()));
        }
    }
    if matched.len() < 3 {
        return Err(RegistrationError::TooFewMatches(matched.len()));
    }
    Ok(matched)
}

/// `Σ |p − T q|²` over the pairs.
pub fn residual(transform: &Sim3Transform, pairs: &[(Vec3, Vec3)]) -> f64 {
    pairs.iter().map(|(p, q)| (p - transform.apply(q)).norm_squared()).sum()
}

/// Closed-form least-squares similarity mapping each source `q` onto its target `p`.
pub fn estimate_sim3(corr: &PoseCorrespondence) -> Result<AlignmentResult, RegistrationError> {
    let transform = umeyama(&corr.pairs)?;
    Ok(AlignmentResult::new(
        transform,
        residual(&transform, &corr.pairs),
        corr.len(),
    ))
}

fn umeyama(pairs: &[(Vec3, Vec3)]) -> Result<Sim3Transform, RegistrationError> {
    let n = pairs.len();
    if n < 3 {
        return Err(RegistrationError::DegenerateConfiguration(format!(
            "{n} pairs, need at least 3"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let (sum_p, sum_q) = pairs
        .iter()
        .fold((Vec3::zeros(), Vec3::zeros()), |(a, b), (p, q)| (a + p, b + q));
    let mean_p = sum_p * inv_n;
    let mean_q = sum_q * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_q = 0.0;
    for (p, q) in pairs {
        let dp = p - mean_p;
        let dq = q - mean_q;
        cov += dp * dq.transpose();
        var_q += dq.norm_squared();
    }
    cov *= inv_n;
    var_q *= inv_n;
    if !(var_q > 0.0) || !cov.iter().all(|v| v.is_finite()) {
        return Err(RegistrationError::DegenerateConfiguration(
            "source points coincide".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(RegistrationError::DegenerateConfiguration(
                "SVD did not converge".into(),
            ))
        }
    };
    let sigma = svd.singular_values;
    let mut sorted = [sigma[0], sigma[1], sigma[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-12 * sorted[0]) {
        return Err(RegistrationError::DegenerateConfiguration(
            "cross-covariance has rank < 2 (collinear points)".into(),
        ));
    }

    let mut s = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Flip the direction belonging to the smallest singular value.
        let smallest = sigma.imin();
        s[(smallest, smallest)] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace: f64 = (0..3).map(|i| sigma[i] * s[(i, i)]).sum();
    let scale = trace / var_q;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(RegistrationError::DegenerateConfiguration(format!(
            "non-positive scale {scale}"
        )));
    }
    let translation = mean_p - rotation * mean_q * scale;
    Ok(Sim3Transform::from_parts_unchecked(scale, rotation, translation))
}

struct Correspondences {
    pairs: Vec<(Vec3, Vec3)>,
    residual: f64,
}

impl Correspondences {
    fn rms(&self) -> f64 {
        (self.residual / self.pairs.len() as f64).sqrt()
    }
}

fn correspond(source: &[Vec3], target: &KdTree, transform: &Sim3Transform, max_dist: f64) -> Correspondences {
    let max_sq = max_dist * max_dist;
    let matches: Vec<Option<(Vec3, Vec3, f64)>> = source
        .par_iter()
        .map(|q| {
            let moved = transform.apply(q);
            let nn = target.nearest(&moved)?;
            (nn.distance_squared <= max_sq).then(|| (target.points()[nn.index], *q, nn.distance_squared))
        })
        .collect();
    let mut pairs = Vec::with_capacity(matches.len());
    let mut residual = 0.0;
    for (p, q, d) in matches.into_iter().flatten() {
        pairs.push((p, q));
        residual += d;
    }
    Correspondences { pairs, residual }
}

/// Refines `initial` so that `source` mapped through it lies on `target`.
///
/// Each iteration pairs every transformed source point with its nearest target
/// point, rejects pairs farther than the pass radius, and re-solves the
/// similarity on the survivors. A candidate is accepted only if it does not
/// increase the RMS, so `rms_history` is non-increasing. Later passes halve the
/// radius.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    initial: &Sim3Transform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    params.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(RegistrationError::TooFewPoints);
    }
    let tree = KdTree::new(target.positions());
    let src = source.positions();

    let mut transform = *initial;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut radius = params.max_corr_dist;
    let mut current = None;

    'passes: for pass in 0..params.passes {
        if pass > 0 {
            radius *= 0.5;
        }
        let mut corr = correspond(src, &tree, &transform, radius);
        iterations += 1;
        if corr.pairs.is_empty() {
            return Err(RegistrationError::NoCorrespondences {
                pass,
                max_corr_dist: radius,
            });
        }
        let mut rms = corr.rms();
        history.push(rms);
        if rms == 0.0 {
            current = Some(corr);
            break 'passes;
        }
        for _ in 1..params.max_iterations {
            let candidate = match umeyama(&corr.pairs) {
                Ok(t) => t,
                Err(_) if history.len() > 1 => break,
                Err(e) => return Err(e),
            };
            let next = correspond(src, &tree, &candidate, radius);
            iterations += 1;
            if next.pairs.is_empty() || next.rms() > rms {
                break;
            }
            let next_rms = next.rms();
            let improvement = (rms - next_rms) / rms;
            transform = candidate;
            corr = next;
            rms = next_rms;
            history.push(rms);
            if rms == 0.0 {
                current = Some(corr);
                break 'passes;
            }
            if improvement < params.convergence_eps {
                break;
            }
        }
        current = Some(corr);
    }

    let corr = current.expect("at least one pass runs");
    Ok(IcpResult {
        alignment: AlignmentResult::new(transform, corr.residual, corr.pairs.len()),
        rms_history: history,
        iterations,
    })
}

/// Output of [`align_clouds`].
#[derive(Debug, Clone)]
pub struct CloudAlignment {
    /// Closed-form estimate on matched camera centers.
    pub initial: AlignmentResult,
    pub icp: IcpResult,
    /// `source_cloud` mapped through the final transform.
    pub aligned: PointCloud,
}

impl CloudAlignment {
    pub fn transform(&self) -> &Sim3Transform {
        &self.icp.alignment.transform
    }
}

/// Pose-initialized alignment of `source_cloud` onto `target_cloud`.
pub fn align_clouds(
    source_cloud: &PointCloud,
    source_poses: &[CameraPose],
    target_cloud: &PointCloud,
    target_poses: &[CameraPose],
    params: &IcpParams,
) -> Result<CloudAlignment, RegistrationError> {
    let corr = match_poses(target_poses, source_poses)?;
    let initial = estimate_sim3(&corr)?;
    let icp = icp_refine(source_cloud, target_cloud, &initial.transform, params)?;
    let aligned = source_cloud.transformed(&icp.alignment.transform);
    Ok(CloudAlignment { initial, icp, aligned })
}
