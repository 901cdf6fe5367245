//! Cameras, point clouds, meshes and similarity transforms.
//!
//! Everything here is `f64`. Rotations are stored as plain matrices and are
//! validated when a value is constructed; nothing is re-orthonormalized behind
//! the caller's back.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Tolerance used when checking that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Tolerance on the norm of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation has determinant {0}, expected +1")]
    Reflection(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image size {width}x{height}")]
    InvalidImageSize { width: u32, height: u32 },
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("attribute `{name}` has {got} entries, expected {expected}")]
    AttributeLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("normal {index} has length {length}, expected unit length")]
    NonUnitNormal { index: usize, length: f64 },
    #[error("source index {index} out of range for {labels} labels")]
    SourceIndex { index: u16, labels: usize },
    #[error("face {face} references vertex {vertex}, mesh has {count} vertices")]
    FaceIndex { face: usize, vertex: u32, count: usize },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
}

/// Checks that `r` is orthonormal with determinant +1.
pub fn validate_rotation(r: &Mat3) -> Result<(), GeometryError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let deviation = (r.transpose() * r - Mat3::identity()).amax();
    if deviation > ROTATION_TOLERANCE {
        return Err(GeometryError::NotOrthonormal(deviation));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(GeometryError::Reflection(det));
    }
    Ok(())
}

fn check_finite(v: &Vec3, what: &'static str) -> Result<(), GeometryError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite(what))
    }
}

/// A pinhole camera with world-to-camera extrinsics: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    id: String,
    intrinsics: Mat3,
    rotation: Mat3,
    translation: Vec3,
    width: u32,
    height: u32,
}

impl CameraPose {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Mat3,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = &intrinsics;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "matrix must be upper-triangular".into(),
            ));
        }
        if k[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidIntrinsics("K[2][2] must be 1".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        validate_rotation(&rotation)?;
        check_finite(&translation, "translation")?;
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidImageSize { width, height });
        }
        Ok(Self {
            id: id.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Convenience constructor for `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
    pub fn pinhole(
        id: impl Into<String>,
        focal: (f64, f64),
        principal: (f64, f64),
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Mat3::new(
            focal.0,
            0.0,
            principal.0, //
            0.0,
            focal.1,
            principal.1, //
            0.0,
            0.0,
            1.0,
        );
        Self::new(id, k, rotation, translation, width, height)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Returns the same camera seen through a similarity transform of the world.
    ///
    /// A world point `p` maps to `T(p)`; the returned pose projects `T(p)` to the
    /// same pixel the original pose projects `p` to.
    pub fn transformed(&self, transform: &Sim3Transform) -> Self {
        // x_cam = R p + t, p = (R_tᵀ (q - t_t)) / c  =>  x_cam' = x_cam * c
        // so depth scales by c while pixels are unchanged.
        let r = self.rotation * transform.rotation().transpose();
        let t = self.translation * transform.scale() - r * transform.translation();
        Self {
            id: self.id.clone(),
            intrinsics: self.intrinsics,
            rotation: r,
            translation: t,
            width: self.width,
            height: self.height,
        }
    }
}

/// Similarity transform `p ↦ c R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    scale: f64,
    rotation: Mat3,
    translation: Vec3,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidScale(scale));
        }
        validate_rotation(&rotation)?;
        check_finite(&translation, "translation")?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    /// Builds a transform from parts already known to be valid.
    pub(crate) fn from_parts_unchecked(scale: f64, rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!(scale > 0.0);
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        Self {
            scale: inv_scale,
            rotation: rt,
            translation: -(rt * self.translation) * inv_scale,
        }
    }

    /// Homogeneous 4×4 form `[[cR, t], [0, 1]]`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.rotation * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Per-point provenance for clouds assembled from several reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTags {
    pub labels: Vec<String>,
    pub per_point: Vec<u16>,
}

/// Point positions plus optional colors, normals and source tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<[u8; 3]>>,
    normals: Option<Vec<Vec3>>,
    sources: Option<SourceTags>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        Self {
            positions,
            ..Default::default()
        }
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self, GeometryError> {
        if colors.len() != self.positions.len() {
            return Err(GeometryError::AttributeLength {
                name: "colors",
                got: colors.len(),
                expected: self.positions.len(),
            });
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        if normals.len() != self.positions.len() {
            return Err(GeometryError::AttributeLength {
                name: "normals",
                got: normals.len(),
                expected: self.positions.len(),
            });
        }
        for (index, n) in normals.iter().enumerate() {
            let length = n.norm();
            if !((length - 1.0).abs() <= NORMAL_TOLERANCE) {
                return Err(GeometryError::NonUnitNormal { index, length });
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_sources(mut self, sources: SourceTags) -> Result<Self, GeometryError> {
        if sources.per_point.len() != self.positions.len() {
            return Err(GeometryError::AttributeLength {
                name: "sources",
                got: sources.per_point.len(),
                expected: self.positions.len(),
            });
        }
        if let Some(&index) = sources.per_point.iter().find(|&&i| i as usize >= sources.labels.len()) {
            return Err(GeometryError::SourceIndex {
                index,
                labels: sources.labels.len(),
            });
        }
        self.sources = Some(sources);
        Ok(self)
    }

    /// Tags every point with a single source label.
    pub fn with_source(self, label: impl Into<String>) -> Self {
        let n = self.positions.len();
        let tags = SourceTags {
            labels: vec![label.into()],
            per_point: vec![0; n],
        };
        Self {
            sources: Some(tags),
            ..self
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn sources(&self) -> Option<&SourceTags> {
        self.sources.as_ref()
    }

    /// Source label of point `i`, if the cloud is tagged.
    pub fn source_of(&self, i: usize) -> Option<&str> {
        self.sources
            .as_ref()
            .map(|s| s.labels[s.per_point[i] as usize].as_str())
    }

    /// Keeps the points at `indices` (in that order), carrying all attributes.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            sources: self.sources.as_ref().map(|s| SourceTags {
                labels: s.labels.clone(),
                per_point: indices.iter().map(|&i| s.per_point[i]).collect(),
            }),
        }
    }

    /// Splits the cloud by a per-point predicate into `(true, false)` parts.
    pub fn partition(&self, mut keep: impl FnMut(usize) -> bool) -> (PointCloud, PointCloud) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| keep(i));
        (self.select(&a), self.select(&b))
    }

    /// Maps positions through `transform`; normals are rotated.
    pub fn transformed(&self, transform: &Sim3Transform) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|p| transform.apply(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| transform.rotation() * v).collect()),
            sources: self.sources.clone(),
        }
    }

    /// Axis-aligned bounds, `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(
            self.positions
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }

    /// Length of the bounding-box diagonal, 0 when empty.
    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }
}

/// Triangle mesh with validated face indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

/// Derived per-face statistics: area and shortest/longest edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceStats {
    pub area: f64,
    pub min_edge: f64,
    pub max_edge: f64,
}

impl FaceStats {
    pub fn of_triangle(a: &Vec3, b: &Vec3, c: &Vec3) -> Self {
        let edges = [(b - a).norm(), (c - b).norm(), (a - c).norm()];
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        Self {
            area,
            min_edge: edges.iter().copied().fold(f64::INFINITY, f64::min),
            max_edge: edges.iter().copied().fold(0.0, f64::max),
        }
    }

    /// `max_edge / min_edge`; infinite for a zero-length edge.
    pub fn aspect_ratio(&self) -> f64 {
        if self.min_edge > 0.0 {
            self.max_edge / self.min_edge
        } else {
            f64::INFINITY
        }
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, colors: Option<Vec<[u8; 3]>>) -> Result<Self, GeometryError> {
        let count = vertices.len();
        for (face, f) in faces.iter().enumerate() {
            if let Some(&vertex) = f.iter().find(|&&v| v as usize >= count) {
                return Err(GeometryError::FaceIndex { face, vertex, count });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::DegenerateFace(face));
            }
        }
        if let Some(c) = &colors {
            if c.len() != count {
                return Err(GeometryError::AttributeLength {
                    name: "colors",
                    got: c.len(),
                    expected: count,
                });
            }
        }
        Ok(Self {
            vertices,
            faces,
            colors,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn face_stats(&self, face: usize) -> FaceStats {
        let [a, b, c] = self.faces[face];
        FaceStats::of_triangle(
            &self.vertices[a as usize],
            &self.vertices[b as usize],
            &self.vertices[c as usize],
        )
    }

    /// Keeps the given faces and drops vertices no kept face references.
    /// Surviving vertices keep their relative order.
    pub fn retain_faces(&self, mut keep: impl FnMut(usize) -> bool) -> TriangleMesh {
        let kept: Vec<[u32; 3]> = (0..self.faces.len())
            .filter(|&i| keep(i))
            .map(|i| self.faces[i])
            .collect();
        let mut used = vec![false; self.vertices.len()];
        for f in &kept {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        for (next, (old, _)) in used.iter().enumerate().filter(|(_, &u)| u).enumerate() {
            remap[old] = next as u32;
        }
        let pick = |i: usize| used[i];
        TriangleMesh {
            vertices: (0..self.vertices.len())
                .filter(|&i| pick(i))
                .map(|i| self.vertices[i])
                .collect(),
            faces: kept.iter().map(|f| f.map(|v| remap[v as usize])).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| (0..self.vertices.len()).filter(|&i| pick(i)).map(|i| c[i]).collect()),
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;

    /// Uniformly distributed rotation from a random unit quaternion.
    pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
        loop {
            let q = nalgebra::Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = q.norm();
            if n > 0.1 && n <= 1.0 {
                let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
                return *q.to_rotation_matrix().matrix();
            }
        }
    }

    pub fn random_sim3(rng: &mut impl Rng) -> Sim3Transform {
        Sim3Transform::new(
            rng.random_range(0.2..5.0),
            random_rotation(rng),
            Vec3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ),
        )
        .unwrap()
    }

    pub fn random_point(rng: &mut impl Rng, extent: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_z_90() -> Mat3 {
        Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(3.0, 4.0, 5.0);
        assert_eq!(Sim3Transform::identity().apply(&p), p);

        let t = Sim3Transform::new(2.0, Mat3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(t.apply(&Vec3::new(1.0, 1.0, 1.0)), Vec3::new(3.0, 2.0, 2.0));

        let t = Sim3Transform::new(1.0, rot_z_90(), Vec3::zeros()).unwrap();
        assert!(close(
            &t.apply(&Vec3::new(1.0, 0.0, 0.0)),
            &Vec3::new(0.0, 1.0, 0.0),
            1e-15
        ));
    }

    #[test]
    fn compose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t2 = random_sim3(&mut rng);
        assert_eq!(Sim3Transform::identity().compose(&t2), t2);

        let a = Sim3Transform::new(2.0, Mat3::identity(), Vec3::zeros()).unwrap();
        let b = Sim3Transform::new(3.0, Mat3::identity(), Vec3::zeros()).unwrap();
        let ab = a.compose(&b);
        assert_eq!(ab.scale(), 6.0);
        assert_eq!(*ab.rotation(), Mat3::identity());
        assert_eq!(*ab.translation(), Vec3::zeros());
    }

    #[test]
    fn compose_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t1 = random_sim3(&mut rng);
        let t2 = random_sim3(&mut rng);
        let t12 = t1.compose(&t2);
        for _ in 0..100 {
            let p = random_point(&mut rng, 100.0);
            assert!(close(&t12.apply(&p), &t1.apply(&t2.apply(&p)), 1e-9));
        }
    }

    #[test]
    fn invert_examples() {
        let inv = Sim3Transform::identity().inverse();
        assert_eq!(inv, Sim3Transform::identity());

        let t = Sim3Transform::new(2.0, Mat3::identity(), Vec3::new(4.0, 0.0, 0.0)).unwrap();
        let inv = t.inverse();
        assert_eq!(inv.scale(), 0.5);
        assert_eq!(*inv.rotation(), Mat3::identity());
        assert_eq!(*inv.translation(), Vec3::new(-2.0, 0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_sim3(&mut rng);
        let inv = t.inverse();
        for _ in 0..100 {
            let p = random_point(&mut rng, 100.0);
            assert!(close(&inv.apply(&t.apply(&p)), &p, 1e-9));
            assert!(close(&t.apply(&inv.apply(&p)), &p, 1e-9));
        }
    }

    #[test]
    fn rotation_validation() {
        let reflection = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(
            validate_rotation(&reflection),
            Err(GeometryError::Reflection(_))
        ));
        let sheared = Mat3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            validate_rotation(&sheared),
            Err(GeometryError::NotOrthonormal(_))
        ));
        assert!(Sim3Transform::new(0.0, Mat3::identity(), Vec3::zeros()).is_err());
        assert!(Sim3Transform::new(-1.0, Mat3::identity(), Vec3::zeros()).is_err());
        assert!(Sim3Transform::new(1.0, reflection, Vec3::zeros()).is_err());
    }

    #[test]
    fn camera_validation() {
        let ok = CameraPose::pinhole(
            "a",
            (100.0, 100.0),
            (50.0, 50.0),
            Mat3::identity(),
            Vec3::zeros(),
            100,
            100,
        );
        assert!(ok.is_ok());
        let bad_k = CameraPose::pinhole(
            "a",
            (-1.0, 100.0),
            (50.0, 50.0),
            Mat3::identity(),
            Vec3::zeros(),
            100,
            100,
        );
        assert!(matches!(bad_k, Err(GeometryError::InvalidIntrinsics(_))));
        let bad_size = CameraPose::pinhole("a", (1.0, 1.0), (0.0, 0.0), Mat3::identity(), Vec3::zeros(), 0, 10);
        assert!(matches!(bad_size, Err(GeometryError::InvalidImageSize { .. })));
        let mut k = Mat3::identity();
        k[(2, 2)] = 2.0;
        assert!(CameraPose::new("a", k, Mat3::identity(), Vec3::zeros(), 1, 1).is_err());
    }

    #[test]
    fn camera_center() {
        let r = rot_z_90();
        let c = Vec3::new(1.0, 2.0, 3.0);
        let cam = CameraPose::pinhole("a", (1.0, 1.0), (0.0, 0.0), r, -(r * c), 10, 10).unwrap();
        assert!(close(&cam.center(), &c, 1e-15));
    }

    #[test]
    fn cloud_attribute_checks() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 2]);
        assert!(cloud.clone().with_colors(vec![[0, 0, 0]]).is_err());
        assert!(cloud.clone().with_normals(vec![Vec3::new(0.0, 0.0, 2.0); 2]).is_err());
        let tags = SourceTags {
            labels: vec!["a".into()],
            per_point: vec![0, 1],
        };
        assert!(matches!(
            cloud.clone().with_sources(tags),
            Err(GeometryError::SourceIndex { .. })
        ));
        assert_eq!(cloud.with_source("x").source_of(1), Some("x"));
    }

    #[test]
    fn mesh_validation_and_compaction() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 4]], None).is_err());
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 1]], None),
            Err(GeometryError::DegenerateFace(0))
        ));
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [1, 2, 3]], None).unwrap();
        let kept = mesh.retain_faces(|i| i == 1);
        assert_eq!(kept.vertices(), &[Vec3::x(), Vec3::y(), Vec3::z()]);
        assert_eq!(kept.faces(), &[[0, 1, 2]]);
    }

    fn arb_sim3() -> impl Strategy<Value = Sim3Transform> {
        any::<u64>().prop_map(|seed| random_sim3(&mut ChaCha8Rng::seed_from_u64(seed)))
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        (-500.0..500.0f64, -500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn distances_scale_by_c(t in arb_sim3(), p in arb_point(), q in arb_point()) {
            let d = (t.apply(&p) - t.apply(&q)).norm();
            let expected = t.scale() * (p - q).norm();
            prop_assert!((d - expected).abs() <= 1e-9 * expected.max(1e-300) + 1e-9);
        }

        #[test]
        fn group_laws(a in arb_sim3(), b in arb_sim3(), c in arb_sim3(), p in arb_point()) {
            let left = a.compose(&b).compose(&c).apply(&p);
            let right = a.compose(&b.compose(&c)).apply(&p);
            prop_assert!(close(&left, &right, 1e-9));
            prop_assert!(close(&a.compose(&a.inverse()).apply(&p), &p, 1e-9));
            prop_assert!(close(&a.inverse().compose(&a).apply(&p), &p, 1e-9));
        }

        #[test]
        fn transformed_camera_keeps_pixels(t in arb_sim3(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(&mut rng);
            let cam = CameraPose::pinhole("c", (500.0, 400.0), (320.0, 240.0), r,
                random_point(&mut rng, 5.0), 640, 480).unwrap();
            let moved = cam.transformed(&t);
            prop_assert!(close(&moved.center(), &t.apply(&cam.center()), 1e-9));
            let p = random_point(&mut rng, 20.0);
            let a = cam.intrinsics() * (cam.rotation() * p + cam.translation());
            let b = moved.intrinsics() * (moved.rotation() * t.apply(&p) + moved.translation());
            prop_assume!(a.z.abs() > 1e-3);
            let pa = a.xy() / a.z;
            let pb = b.xy() / b.z;
            prop_assert!((pa - pb).norm() <= 1e-7 * (1.0 + pa.norm()));
        }
    }
}
