//! Building blocks for fusing multi-view-stereo reconstructions: camera and
//! point-cloud geometry, point projection into views, sim(3) registration,
//! cloud and mesh filtering, image fusion, evaluation and file formats.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blending;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod io;
pub mod projection;
pub mod registration;
pub mod spatial;

pub use blending::{frequency_fuse, poisson_blend, BlendError, BlendMask, Image, PoissonMode, SolverOptions};
pub use evaluation::{aggregate, eval_scene, EvalError, EvalReport, Summary};
pub use filtering::{
    filter_mesh_faces, filter_outliers, filter_sky, merge_clouds, FilterError, MeshFilterThresholds, OutlierParams,
    SkyFilterParams, StatisticalParams,
};
pub use geometry::{
    CameraPose, FaceStats, GeometryError, Mat3, Mat4, PointCloud, Sim3Transform, SourceTags, TriangleMesh, Vec3,
};
pub use io::{ColmapModel, DepthMap, ModelIoError, PlyFormat};
pub use projection::{
    distribute_points, project_point, sample_uniform, unproject, Distribution, OutOfRangePolicy, ProjectedPoint,
    ProjectionError, ViewTrack,
};
pub use registration::{
    align_clouds, estimate_sim3, icp_refine, match_poses, AlignmentResult, CloudAlignment, IcpParams, IcpResult,
    PoseCorrespondence, RegistrationError,
};
pub use spatial::KdTree;
