//! Seeded inputs shared by the benchmarks.

use mvsfuse_core::{BlendMask, CameraPose, Image, Mat3, PointCloud, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points on a smooth height field over `[-1, 1]²`.
pub fn surface_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                Vec3::new(u, v, 0.3 * (2.0 * u).sin() * (3.0 * v).cos())
            })
            .collect(),
    )
}

/// `n` cameras on a ring of radius 3 looking at the origin.
pub fn ring_cameras(n: usize) -> Vec<CameraPose> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let center = Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 2.0);
            let f = (-center).normalize();
            let r = f.cross(&Vec3::z()).normalize();
            let d = f.cross(&r);
            let rot = Mat3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
            CameraPose::pinhole(
                format!("view{i:03}"),
                (640.0, 640.0),
                (320.0, 240.0),
                rot,
                -(rot * center),
                640,
                480,
            )
            .unwrap()
        })
        .collect()
}

pub fn random_image(width: u32, height: u32, channels: usize, seed: u64) -> Image {
    let mut rng = rng(seed);
    let len = width as usize * height as usize * channels;
    Image::new(width, height, channels, (0..len).map(|_| rng.random()).collect()).unwrap()
}

/// Centered rectangle covering half of each dimension.
pub fn center_mask(width: u32, height: u32) -> BlendMask {
    let (w, h) = (width as usize, height as usize);
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x >= w / 4 && x < 3 * w / 4 && y >= h / 4 && y < 3 * h / 4
        })
        .collect();
    BlendMask::new(width, height, data).unwrap()
}
