#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvsfuse_core::io::{save_colmap_model, save_point_cloud, ColmapModel, PlyFormat};
use mvsfuse_core::{CameraPose, Mat3, PointCloud, Sim3Transform, Vec3};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn mvsfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsfuse"))
        .args(args)
        .env("MVSFUSE_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Height field with a step, so no sub-region is self-similar.
pub fn surface(u: f64, v: f64) -> Vec3 {
    let step = if u > 0.3 && v > -0.2 && v < 0.4 { 0.15 } else { 0.0 };
    Vec3::new(u, v, 0.3 * (2.0 * u).sin() * (3.0 * v).cos() + 0.1 * u * v + step)
}

pub fn sample_surface(rng: &mut impl Rng, n: usize, u_range: (f64, f64), noise: f64) -> Vec<Vec3> {
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    (0..n)
        .map(|_| {
            let u = rng.random_range(u_range.0..u_range.1);
            let v = rng.random_range(-1.0..1.0);
            let p = surface(u, v);
            if noise > 0.0 {
                p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
            } else {
                p
            }
        })
        .collect()
}

pub fn look_at(id: &str, center: Vec3, target: Vec3, width: u32, height: u32) -> CameraPose {
    let f = (target - center).normalize();
    let r = f.cross(&Vec3::z()).normalize();
    let d = f.cross(&r);
    let rot = Mat3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    let focal = width as f64;
    CameraPose::pinhole(
        id,
        (focal, focal),
        (width as f64 / 2.0, height as f64 / 2.0),
        rot,
        -(rot * center),
        width,
        height,
    )
    .unwrap()
}

pub fn ring_cameras(n: usize, radius: f64, height: f64) -> Vec<CameraPose> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let c = Vec3::new(radius * a.cos(), radius * a.sin(), height);
            look_at(&format!("view{i:02}"), c, Vec3::zeros(), 320, 240)
        })
        .collect()
}

pub fn random_sim3(rng: &mut impl Rng) -> Sim3Transform {
    let axis = Unit::new_normalize(Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(-3.0..3.0);
    let rot = *Rotation3::from_axis_angle(&axis, angle).matrix();
    let t = Vec3::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    );
    Sim3Transform::new(rng.random_range(0.3..3.0), rot, t).unwrap()
}

pub fn image_names(cams: &[CameraPose]) -> Vec<String> {
    cams.iter().map(|c| format!("{}.jpg", c.id())).collect()
}

pub fn write_cameras(dir: &Path, cams: &[CameraPose]) {
    let model = ColmapModel::from_poses(cams, &image_names(cams)).unwrap();
    save_colmap_model(&model, dir).unwrap();
}

fn gray(rng: &mut impl Rng, n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|_| {
            let g = rng.random_range(60..140u8);
            [g, g.saturating_sub(10), g.saturating_sub(20)]
        })
        .collect()
}

pub struct ToyScene {
    pub config: PathBuf,
    pub ground_truth: PointCloud,
    pub cloud_a: PointCloud,
    /// Cloud B mapped back into the ground-truth frame.
    pub cloud_b_world: PointCloud,
    pub tau: f64,
}

/// Two partial reconstructions of one surface seen by 8 cameras. Cloud A is
/// in the ground-truth frame; cloud B covers the other side and lives in a
/// frame related by a random similarity.
pub fn write_toy_scene(dir: &Path, seed: u64) -> ToyScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 0.03;
    let cams = ring_cameras(8, 3.0, 2.5);
    let gt = PointCloud::new(sample_surface(&mut rng, 20_000, (-1.0, 1.0), 0.0));
    let a_points = sample_surface(&mut rng, 8_000, (-1.0, 0.2), 0.002);
    let a_colors = gray(&mut rng, a_points.len());
    let cloud_a = PointCloud::new(a_points).with_colors(a_colors).unwrap();
    let b_world = PointCloud::new(sample_surface(&mut rng, 8_000, (-0.2, 1.0), 0.002));
    let t = random_sim3(&mut rng);
    let to_b = t.inverse();
    let cloud_b = b_world.transformed(&to_b);
    let cams_b: Vec<CameraPose> = cams.iter().map(|c| c.transformed(&to_b)).collect();

    std::fs::create_dir_all(dir).unwrap();
    save_point_cloud(&gt, dir.join("gt.ply"), PlyFormat::BinaryLittleEndian).unwrap();
    save_point_cloud(&cloud_a, dir.join("cpu.ply"), PlyFormat::BinaryLittleEndian).unwrap();
    save_point_cloud(&cloud_b, dir.join("gpu.ply"), PlyFormat::Ascii).unwrap();
    write_cameras(&dir.join("cams_cpu"), &cams);
    write_cameras(&dir.join("cams_gpu"), &cams_b);

    let config = serde_json::json!({
        "scene": "Toy",
        "resolution": 320,
        "confidence": 0.5,
        "view_number": 8,
        "fusion_views": 2,
        "device": "cpu",
        "sample_count": 5000,
        "seed": 7,
        "output_dir": "out",
        "prepare": {
            "cloud": "cpu.ply",
            "cameras": "cams_cpu",
            "sky": {},
            "outliers": {}
        },
        "align": {
            "source_cloud": "gpu.ply",
            "source_cameras": "cams_gpu",
            "target_cloud": "cpu.ply",
            "target_cameras": "cams_cpu"
        },
        "merge": {
            "inputs": [
                {"path": "cpu.ply", "source": "cpu"},
                {"path": "out/aligned.ply", "source": "gpu"}
            ],
            "dedup_voxel": 0.002
        },
        "eval": {"ground_truth": "gt.ply", "tau": tau}
    });
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    ToyScene {
        config: path,
        ground_truth: gt,
        cloud_a,
        cloud_b_world: b_world,
        tau,
    }
}

/// Every file under `dir`, relative path and contents, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
