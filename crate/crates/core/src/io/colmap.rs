use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

use crate::geometry::{CameraPose, Mat3, PointCloud, Vec3};
use crate::projection::{Distribution, ViewTrack};

use super::{format_significant, read_file, write_file, Location, ModelIoError};

/// Allowed deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

const DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub model: String,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

impl ColmapCamera {
    /// `K` for the PINHOLE and SIMPLE_PINHOLE models.
    pub fn intrinsics(&self) -> Result<Mat3, ModelIoError> {
        let (fx, fy, cx, cy) = match (self.model.as_str(), self.params.as_slice()) {
            ("PINHOLE", &[fx, fy, cx, cy]) => (fx, fy, cx, cy),
            ("SIMPLE_PINHOLE", &[f, cx, cy]) => (f, f, cx, cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", p) => {
                return Err(ModelIoError::InvariantViolation(format!(
                    "{} camera with {} parameters",
                    self.model,
                    p.len()
                )))
            }
            (other, _) => return Err(ModelIoError::UnsupportedCameraModel(other.to_string())),
        };
        Ok(Mat3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation2D {
    pub xy: [f64; 2],
    pub point3d_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    /// `(w, x, y, z)`, world-to-camera.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub points2d: Vec<Observation2D>,
}

impl ColmapImage {
    pub fn rotation(&self) -> Result<Mat3, ModelIoError> {
        let [w, x, y, z] = self.qvec;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
            return Err(ModelIoError::InvariantViolation(format!(
                "image `{}` quaternion has norm {norm}",
                self.name
            )));
        }
        Ok(*UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackElement {
    pub image_id: u32,
    pub point2d_idx: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint3D {
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    pub track: Vec<TrackElement>,
}

/// A COLMAP sparse model keyed by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: BTreeMap<u32, ColmapImage>,
    pub points: BTreeMap<u64, ColmapPoint3D>,
}

fn violation(msg: String) -> ModelIoError {
    ModelIoError::InvariantViolation(msg)
}

impl ColmapModel {
    /// Checks every cross reference between cameras, images and points.
    pub fn validate(&self) -> Result<(), ModelIoError> {
        for (id, image) in &self.images {
            if !self.cameras.contains_key(&image.camera_id) {
                return Err(violation(format!(
                    "image {id} references missing camera {}",
                    image.camera_id
                )));
            }
            for (idx, obs) in image.points2d.iter().enumerate() {
                if let Some(pid) = obs.point3d_id {
                    if !self.points.contains_key(&pid) {
                        return Err(violation(format!(
                            "image {id} observation {idx} references missing point {pid}"
                        )));
                    }
                }
            }
        }
        for (pid, point) in &self.points {
            for t in &point.track {
                let image = self
                    .images
                    .get(&t.image_id)
                    .ok_or_else(|| violation(format!("point {pid} track references missing image {}", t.image_id)))?;
                if t.point2d_idx as usize >= image.points2d.len() {
                    return Err(violation(format!(
                        "point {pid} track references observation {} of image {} which has {}",
                        t.point2d_idx,
                        t.image_id,
                        image.points2d.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// One pose per image, in image-id order. The pose id is the file stem of the image name.
    pub fn camera_poses(&self) -> Result<Vec<CameraPose>, ModelIoError> {
        self.images
            .values()
            .map(|image| {
                let camera = self
                    .cameras
                    .get(&image.camera_id)
                    .ok_or_else(|| violation(format!("image `{}` has no camera", image.name)))?;
                let id = Path::new(&image.name)
                    .file_stem()
                    .map_or(image.name.clone(), |s| s.to_string_lossy().into_owned());
                Ok(CameraPose::new(
                    id,
                    camera.intrinsics()?,
                    image.rotation()?,
                    Vec3::from(image.tvec),
                    camera.width,
                    camera.height,
                )?)
            })
            .collect()
    }

    /// Builds the sparse model for a projection result.
    ///
    /// Camera `i` becomes camera and image `i + 1`, named `image_names[i]`.
    /// Every point of the distribution becomes one 3D point whose id is its
    /// index. Observations are written with their raw projected coordinates,
    /// so out-of-range pixels keep their unclamped values.
    pub fn from_distribution(
        distribution: &Distribution,
        cameras: &[CameraPose],
        image_names: &[String],
    ) -> Result<Self, ModelIoError> {
        if image_names.len() != cameras.len() {
            return Err(violation(format!(
                "{} image names for {} cameras",
                image_names.len(),
                cameras.len()
            )));
        }
        if distribution.tracks.len() != cameras.len() {
            return Err(violation(format!(
                "{} tracks for {} cameras",
                distribution.tracks.len(),
                cameras.len()
            )));
        }
        let cloud = &distribution.points;
        let mut model = ColmapModel::default();
        let mut tracks: Vec<Vec<TrackElement>> = vec![Vec::new(); cloud.len()];
        for (i, (camera, track)) in cameras.iter().zip(&distribution.tracks).enumerate() {
            if track.camera_id != camera.id() {
                return Err(violation(format!(
                    "track {i} belongs to `{}`, expected `{}`",
                    track.camera_id,
                    camera.id()
                )));
            }
            let k = camera.intrinsics();
            if k[(0, 1)] != 0.0 {
                return Err(ModelIoError::UnsupportedCameraModel(format!(
                    "camera `{}` has skew, which PINHOLE cannot represent",
                    camera.id()
                )));
            }
            let id = i as u32 + 1;
            model.cameras.insert(
                id,
                ColmapCamera {
                    model: "PINHOLE".into(),
                    width: camera.width(),
                    height: camera.height(),
                    params: vec![k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]],
                },
            );
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*camera.rotation()));
            let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
            let mut points2d = Vec::with_capacity(track.observations.len());
            for obs in &track.observations {
                let pid = obs.point_id;
                let slot = tracks
                    .get_mut(pid as usize)
                    .ok_or_else(|| violation(format!("observation of unknown point {pid}")))?;
                slot.push(TrackElement {
                    image_id: id,
                    point2d_idx: points2d.len() as u32,
                });
                points2d.push(Observation2D {
                    xy: [obs.pixel.x, obs.pixel.y],
                    point3d_id: Some(pid),
                });
            }
            let t = camera.translation();
            model.images.insert(
                id,
                ColmapImage {
                    qvec: [q.w, q.i, q.j, q.k],
                    tvec: [t.x, t.y, t.z],
                    camera_id: id,
                    name: image_names[i].clone(),
                    points2d,
                },
            );
        }
        for (pid, track) in tracks.into_iter().enumerate() {
            let p = cloud.positions()[pid];
            model.points.insert(
                pid as u64,
                ColmapPoint3D {
                    xyz: [p.x, p.y, p.z],
                    rgb: cloud.colors().map_or([0, 0, 0], |c| c[pid]),
                    error: 0.0,
                    track,
                },
            );
        }
        Ok(model)
    }

    /// Cameras and images only, no 3D points.
    pub fn from_poses(cameras: &[CameraPose], image_names: &[String]) -> Result<Self, ModelIoError> {
        let empty = Distribution {
            tracks: cameras
                .iter()
                .map(|c| ViewTrack {
                    camera_id: c.id().to_string(),
                    observations: Vec::new(),
                })
                .collect(),
            points: PointCloud::default(),
        };
        Self::from_distribution(&empty, cameras, image_names)
    }

    pub fn write_cameras(&self) -> String {
        let mut out = String::from(
            "# Camera list with one line of data per camera:\n\
             #   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
        );
        let _ = writeln!(out, "# Number of cameras: {}", self.cameras.len());
        for (id, c) in &self.cameras {
            let _ = write!(out, "{id} {} {} {}", c.model, c.width, c.height);
            for p in &c.params {
                let _ = write!(out, " {}", fmt(*p));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_images(&self) -> String {
        let observations: usize = self.images.values().map(|i| i.points2d.len()).sum();
        let mean = if self.images.is_empty() {
            0.0
        } else {
            observations as f64 / self.images.len() as f64
        };
        let mut out = String::from(
            "# Image list with two lines of data per image:\n\
             #   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n\
             #   POINTS2D[] as (X, Y, POINT3D_ID)\n",
        );
        let _ = writeln!(
            out,
            "# Number of images: {}, mean observations per image: {}",
            self.images.len(),
            fmt(mean)
        );
        for (id, im) in &self.images {
            let _ = write!(out, "{id}");
            for v in im.qvec.iter().chain(&im.tvec) {
                let _ = write!(out, " {}", fmt(*v));
            }
            let _ = writeln!(out, " {} {}", im.camera_id, im.name);
            let mut first = true;
            for o in &im.points2d {
                if !first {
                    out.push(' ');
                }
                first = false;
                let pid = o.point3d_id.map_or("-1".to_string(), |p| p.to_string());
                let _ = write!(out, "{} {} {pid}", fmt(o.xy[0]), fmt(o.xy[1]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_points(&self) -> String {
        let total: usize = self.points.values().map(|p| p.track.len()).sum();
        let mean = if self.points.is_empty() {
            0.0
        } else {
            total as f64 / self.points.len() as f64
        };
        let mut out = String::from(
            "# 3D point list with one line of data per point:\n\
             #   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
        );
        let _ = writeln!(
            out,
            "# Number of points: {}, mean track length: {}",
            self.points.len(),
            fmt(mean)
        );
        for (id, p) in &self.points {
            let _ = write!(
                out,
                "{id} {} {} {} {} {} {} {}",
                fmt(p.xyz[0]),
                fmt(p.xyz[1]),
                fmt(p.xyz[2]),
                p.rgb[0],
                p.rgb[1],
                p.rgb[2],
                fmt(p.error)
            );
            for t in &p.track {
                let _ = write!(out, " {} {}", t.image_id, t.point2d_idx);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the three text files. Cross references are validated.
    pub fn parse(cameras: &str, images: &str, points: &str) -> Result<Self, ModelIoError> {
        let model = ColmapModel {
            cameras: parse_cameras(cameras)?,
            images: parse_images(images)?,
            points: parse_points(points)?,
        };
        model.validate()?;
        for image in model.images.values() {
            image.rotation()?;
        }
        Ok(model)
    }
}

fn fmt(x: f64) -> String {
    format_significant(x, DIGITS)
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        Fields {
            line,
            it: text.split_whitespace(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ModelIoError {
        ModelIoError::parse(Location::Line(self.line), msg)
    }

    fn next_str(&mut self, what: &str) -> Result<&'a str, ModelIoError> {
        let line = self.line;
        self.it
            .next()
            .ok_or_else(|| ModelIoError::parse(Location::Line(line), format!("missing {what}")))
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ModelIoError> {
        let s = self.next_str(what)?;
        s.parse().map_err(|_| self.err(format!("invalid {what} `{s}`")))
    }

    fn finite(&mut self, what: &str) -> Result<f64, ModelIoError> {
        let v: f64 = self.next(what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("{what} is not finite")))
        }
    }

    fn rest(self) -> std::str::SplitWhitespace<'a> {
        self.it
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn insert_unique<K: Ord + Copy + std::fmt::Display, V>(
    map: &mut BTreeMap<K, V>,
    key: K,
    value: V,
    line: usize,
) -> Result<(), ModelIoError> {
    if map.insert(key, value).is_some() {
        return Err(ModelIoError::parse(Location::Line(line), format!("duplicate id {key}")));
    }
    Ok(())
}

fn parse_cameras(text: &str) -> Result<BTreeMap<u32, ColmapCamera>, ModelIoError> {
    let mut cameras = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let mut f = Fields::new(n, line);
        let id: u32 = f.next("camera id")?;
        let model = f.next_str("camera model")?.to_string();
        let width = f.next("width")?;
        let height = f.next("height")?;
        let params = f
            .rest()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ModelIoError::parse(Location::Line(n), format!("invalid parameter `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let camera = ColmapCamera {
            model,
            width,
            height,
            params,
        };
        camera.intrinsics()?;
        insert_unique(&mut cameras, id, camera, n)?;
    }
    Ok(cameras)
}

fn parse_images(text: &str) -> Result<BTreeMap<u32, ColmapImage>, ModelIoError> {
    let mut images = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    while let Some((n, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = Fields::new(n, line);
        let id: u32 = f.next("image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = f.finite("quaternion")?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = f.finite("translation")?;
        }
        let camera_id = f.next("camera id")?;
        let name = f.next_str("image name")?.to_string();
        if f.rest().next().is_some() {
            return Err(ModelIoError::parse(
                Location::Line(n),
                "trailing fields after image name",
            ));
        }
        // The observation line may be empty, so it is consumed unconditionally.
        let (m, obs_line) = lines.next().unwrap_or((n + 1, ""));
        let tokens: Vec<&str> = obs_line.split_whitespace().collect();
        if !tokens.len().is_multiple_of(3) {
            return Err(ModelIoError::parse(
                Location::Line(m),
                "observations must be X Y POINT3D_ID triples",
            ));
        }
        let points2d = tokens
            .chunks(3)
            .map(|c| {
                let bad = || ModelIoError::parse(Location::Line(m), format!("invalid observation `{}`", c.join(" ")));
                let x: f64 = c[0].parse().map_err(|_| bad())?;
                let y: f64 = c[1].parse().map_err(|_| bad())?;
                let pid: i64 = c[2].parse().map_err(|_| bad())?;
                let point3d_id = match pid {
                    -1 => None,
                    p if p >= 0 => Some(p as u64),
                    _ => return Err(bad()),
                };
                Ok(Observation2D { xy: [x, y], point3d_id })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let image = ColmapImage {
            qvec,
            tvec,
            camera_id,
            name,
            points2d,
        };
        insert_unique(&mut images, id, image, n)?;
    }
    Ok(images)
}

fn parse_points(text: &str) -> Result<BTreeMap<u64, ColmapPoint3D>, ModelIoError> {
    let mut points = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let mut f = Fields::new(n, line);
        let id: u64 = f.next("point id")?;
        let mut xyz = [0.0; 3];
        for v in &mut xyz {
            *v = f.finite("coordinate")?;
        }
        let mut rgb = [0u8; 3];
        for c in &mut rgb {
            *c = f.next("color")?;
        }
        let error = f.next("error")?;
        let rest: Vec<&str> = f.rest().collect();
        if !rest.len().is_multiple_of(2) {
            return Err(ModelIoError::parse(
                Location::Line(n),
                "track must be IMAGE_ID POINT2D_IDX pairs",
            ));
        }
        let track = rest
            .chunks(2)
            .map(|c| {
                let bad = || ModelIoError::parse(Location::Line(n), format!("invalid track entry `{}`", c.join(" ")));
                Ok(TrackElement {
                    image_id: c[0].parse().map_err(|_| bad())?,
                    point2d_idx: c[1].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>, ModelIoError>>()?;
        insert_unique(&mut points, id, ColmapPoint3D { xyz, rgb, error, track }, n)?;
    }
    Ok(points)
}

/// Loads `cameras.txt`, `images.txt` and `points3D.txt` from `dir`, along
/// with one [`CameraPose`] per image.
pub fn load_colmap_model(dir: impl AsRef<Path>) -> Result<(ColmapModel, Vec<CameraPose>), ModelIoError> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<String, ModelIoError> {
        let path = dir.join(name);
        let bytes = read_file(&path)?;
        String::from_utf8(bytes).map_err(|e| {
            ModelIoError::parse(
                Location::Byte(e.utf8_error().valid_up_to()),
                format!("{name} is not UTF-8"),
            )
        })
    };
    let model = ColmapModel::parse(&read("cameras.txt")?, &read("images.txt")?, &read("points3D.txt")?)?;
    let poses = model.camera_poses()?;
    Ok((model, poses))
}

/// Writes the model as text after validating it. Creates `dir` if needed.
pub fn save_colmap_model(model: &ColmapModel, dir: impl AsRef<Path>) -> Result<(), ModelIoError> {
    model.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| ModelIoError::io(dir, e))?;
    write_file(&dir.join("cameras.txt"), model.write_cameras().as_bytes())?;
    write_file(&dir.join("images.txt"), model.write_images().as_bytes())?;
    write_file(&dir.join("points3D.txt"), model.write_points().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testing;
    use crate::projection::{distribute_points, OutOfRangePolicy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CAMERAS: &str = "# Camera list\n1 PINHOLE 640 480 500 510 320 240\n";
    const IMAGES: &str = "# Image list\n1 1 0 0 0 0.5 -1 2 1 view0.jpg\n\n";

    fn names(cams: &[CameraPose], ext: &str) -> Vec<String> {
        cams.iter().map(|c| format!("{}{ext}", c.id())).collect()
    }

    fn two_camera_scene() -> (PointCloud, Vec<CameraPose>) {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(1.0, 0.5, 6.0),
            Vec3::new(-1.0, 0.2, 4.0),
        ]);
        let cams = vec![
            CameraPose::pinhole(
                "a",
                (100.0, 100.0),
                (64.0, 48.0),
                Mat3::identity(),
                Vec3::zeros(),
                128,
                96,
            )
            .unwrap(),
            CameraPose::pinhole(
                "b",
                (120.0, 110.0),
                (64.0, 48.0),
                Mat3::identity(),
                Vec3::new(0.5, 0.0, 0.0),
                128,
                96,
            )
            .unwrap(),
        ];
        (cloud, cams)
    }

    #[test]
    fn minimal_fixture() {
        let model = ColmapModel::parse(CAMERAS, IMAGES, "").unwrap();
        let poses = model.camera_poses().unwrap();
        assert_eq!(poses.len(), 1);
        let p = &poses[0];
        assert_eq!(p.id(), "view0");
        assert_eq!(
            *p.intrinsics(),
            Mat3::new(500.0, 0.0, 320.0, 0.0, 510.0, 240.0, 0.0, 0.0, 1.0)
        );
        assert_eq!(*p.rotation(), Mat3::identity());
        assert_eq!(*p.translation(), Vec3::new(0.5, -1.0, 2.0));
        assert_eq!((p.width(), p.height()), (640, 480));
    }

    #[test]
    fn simple_pinhole_and_unsupported_models() {
        let model = ColmapModel::parse("1 SIMPLE_PINHOLE 10 10 7 5 5\n", "1 1 0 0 0 0 0 0 1 x.png\n\n", "").unwrap();
        let k = *model.camera_poses().unwrap()[0].intrinsics();
        assert_eq!((k[(0, 0)], k[(1, 1)]), (7.0, 7.0));
        let err = ColmapModel::parse("1 OPENCV 10 10 1 1 5 5 0 0 0 0\n", "", "").unwrap_err();
        assert!(matches!(err, ModelIoError::UnsupportedCameraModel(m) if m == "OPENCV"));
    }

    #[test]
    fn quaternion_normalization_tolerance() {
        let nearly = "1 1.0000005 0 0 0 0 0 0 1 x.png\n\n";
        assert!(ColmapModel::parse(CAMERAS, nearly, "").is_ok());
        let off = "1 1.01 0 0 0 0 0 0 1 x.png\n\n";
        assert!(matches!(
            ColmapModel::parse(CAMERAS, off, ""),
            Err(ModelIoError::InvariantViolation(_))
        ));
    }

    #[test]
    fn rotation_from_quaternion_matches_closed_form() {
        // 90 degrees about z.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let image = ColmapImage {
            qvec: [h, 0.0, 0.0, h],
            tvec: [0.0; 3],
            camera_id: 1,
            name: "x".into(),
            points2d: vec![],
        };
        let r = image.rotation().unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expected).abs().max() < 1e-15);
    }

    #[test]
    fn empty_model_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        save_colmap_model(&ColmapModel::default(), dir.path()).unwrap();
        for name in ["cameras.txt", "images.txt", "points3D.txt"] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(text.lines().all(|l| l.starts_with('#')), "{name}: {text}");
        }
        let (model, poses) = load_colmap_model(dir.path()).unwrap();
        assert_eq!(model, ColmapModel::default());
        assert!(poses.is_empty());
    }

    #[test]
    fn three_points_two_cameras() {
        let (cloud, cams) = two_camera_scene();
        let dist = distribute_points(&cloud, &cams, OutOfRangePolicy::Retain).unwrap();
        let model = ColmapModel::from_distribution(&dist, &cams, &names(&cams, ".jpg")).unwrap();
        let text = model.write_points();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 3);
        for p in model.points.values() {
            assert_eq!(p.track.len(), 2);
        }
        assert_eq!(model.images[&1].name, "a.jpg");
    }

    #[test]
    fn round_trip_keeps_tracks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points = (0..300)
            .map(|_| testing::random_point(&mut rng, 3.0) + Vec3::new(0.0, 0.0, 10.0))
            .collect();
        let cloud = PointCloud::new(points);
        let cams: Vec<CameraPose> = (0..6)
            .map(|i| {
                CameraPose::pinhole(
                    format!("cam{i}"),
                    (800.0, 790.0),
                    (320.0, 240.0),
                    Mat3::identity(),
                    Vec3::new(i as f64 * 0.3, 0.0, 0.0),
                    640,
                    480,
                )
                .unwrap()
            })
            .collect();
        let dist = distribute_points(&cloud, &cams, OutOfRangePolicy::Strict).unwrap();
        let model = ColmapModel::from_distribution(&dist, &cams, &names(&cams, ".png")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_colmap_model(&model, dir.path()).unwrap();
        let (back, poses) = load_colmap_model(dir.path()).unwrap();

        assert_eq!(
            back.points.keys().collect::<Vec<_>>(),
            model.points.keys().collect::<Vec<_>>()
        );
        for (a, b) in model.points.values().zip(back.points.values()) {
            assert_eq!(a.track, b.track);
            assert_eq!(a.rgb, b.rgb);
            for k in 0..3 {
                assert!((a.xyz[k] - b.xyz[k]).abs() <= 1e-11 * a.xyz[k].abs().max(1.0));
            }
        }
        for (a, b) in model.images.values().zip(back.images.values()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.points2d.len(), b.points2d.len());
            for (o, p) in a.points2d.iter().zip(&b.points2d) {
                assert_eq!(o.point3d_id, p.point3d_id);
            }
        }
        for (pose, cam) in poses.iter().zip(&cams) {
            assert_eq!(pose.id(), cam.id());
            assert!((pose.rotation() - cam.rotation()).abs().max() < 1e-11);
        }

        let again = tempfile::tempdir().unwrap();
        save_colmap_model(&back, again.path()).unwrap();
        for name in ["cameras.txt", "images.txt", "points3D.txt"] {
            assert_eq!(
                std::fs::read(dir.path().join(name)).unwrap(),
                std::fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn poses_only_model() {
        let (_, cams) = two_camera_scene();
        let model = ColmapModel::from_poses(&cams, &names(&cams, ".jpg")).unwrap();
        assert!(model.points.is_empty());
        let poses = model.camera_poses().unwrap();
        assert_eq!(poses, cams);
    }

    #[test]
    fn dangling_references() {
        let mut model = ColmapModel::parse(CAMERAS, IMAGES, "").unwrap();
        model.points.insert(
            7,
            ColmapPoint3D {
                xyz: [0.0; 3],
                rgb: [0; 3],
                error: 0.0,
                track: vec![TrackElement {
                    image_id: 1,
                    point2d_idx: 0,
                }],
            },
        );
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_colmap_model(&model, dir.path()),
            Err(ModelIoError::InvariantViolation(_))
        ));

        let images = "1 1 0 0 0 0 0 0 1 x.png\n1 2 5\n";
        assert!(matches!(
            ColmapModel::parse(CAMERAS, images, ""),
            Err(ModelIoError::InvariantViolation(_))
        ));
        let images = "1 1 0 0 0 0 0 0 9 x.png\n\n";
        assert!(ColmapModel::parse(CAMERAS, images, "").is_err());
    }

    #[test]
    fn rotation_quaternion_has_non_negative_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (cloud, _) = two_camera_scene();
        let cams: Vec<CameraPose> = (0..20)
            .map(|i| {
                CameraPose::pinhole(
                    format!("c{i}"),
                    (1.0, 1.0),
                    (0.0, 0.0),
                    testing::random_rotation(&mut rng),
                    Vec3::zeros(),
                    4,
                    4,
                )
                .unwrap()
            })
            .collect();
        let dist = distribute_points(&cloud, &cams, OutOfRangePolicy::Retain).unwrap();
        let model = ColmapModel::from_distribution(&dist, &cams, &names(&cams, ".png")).unwrap();
        for (image, cam) in model.images.values().zip(&cams) {
            assert!(image.qvec[0] >= 0.0);
            assert!((image.rotation().unwrap() - cam.rotation()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn parse_errors_name_lines() {
        let err = ColmapModel::parse("# c\n1 PINHOLE 10 ten 1 1 1 1\n", "", "").unwrap_err();
        assert!(
            matches!(
                err,
                ModelIoError::Parse {
                    location: Location::Line(2),
                    ..
                }
            ),
            "{err}"
        );
        let err = ColmapModel::parse(CAMERAS, "", "1 0 0 0 1 2 3 0.5 1\n").unwrap_err();
        assert!(
            matches!(
                err,
                ModelIoError::Parse {
                    location: Location::Line(1),
                    ..
                }
            ),
            "{err}"
        );
    }

    proptest! {
        #[test]
        fn parser_never_panics(a in "[ -~\n]{0,200}", b in "[ -~\n]{0,200}", c in "[ -~\n]{0,200}") {
            let _ = ColmapModel::parse(&a, &b, &c);
        }
    }
}
