//! Readers and writers for PLY, COLMAP text models, PFM depth maps and
//! 8-bit PNG/PPM images.

mod colmap;
mod image_io;
mod pfm;
mod ply;

pub use colmap::{
    load_colmap_model, save_colmap_model, ColmapCamera, ColmapImage, ColmapModel, ColmapPoint3D, Observation2D,
    TrackElement,
};
pub use image_io::{load_image, load_mask, save_image};
pub use pfm::{load_depth_pfm, parse_depth_pfm, save_depth_pfm, write_depth_pfm, DepthMap};
pub use ply::{
    load_mesh, load_point_cloud, parse_mesh, parse_point_cloud, save_mesh, save_point_cloud, write_mesh,
    write_point_cloud, PlyFormat,
};

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::GeometryError;

/// Where in a file a parse error happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("vertex element lacks x/y/z properties")]
    MissingPositions,
    #[error("unsupported camera model `{0}`")]
    UnsupportedCameraModel(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("model invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("image codec: {0}")]
    Image(String),
}

impl ModelIoError {
    pub(crate) fn parse(location: Location, message: impl Into<String>) -> Self {
        ModelIoError::Parse {
            location,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, ModelIoError> {
    std::fs::read(path).map_err(|e| ModelIoError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ModelIoError> {
    std::fs::write(path, bytes).map_err(|e| ModelIoError::io(path, e))
}

/// Formats `x` with `digits` significant digits the way C's `%.{digits}g` does.
pub fn format_significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // `{:e}` rounds correctly, so its exponent is the exponent after rounding.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn significant_formatting_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (999999999999.9, "1e+12"),
            (7.12345678901234, "7.12345678901"),
        ];
        for (x, expected) in cases {
            assert_eq!(format_significant(x, 12), expected, "{x}");
        }
        assert_eq!(format_significant(1.5, 6), "1.5");
        assert_eq!(format_significant(2.0 / 3.0, 6), "0.666667");
    }

    proptest! {
        #[test]
        fn significant_formatting_is_stable(x in prop::num::f64::NORMAL) {
            let once = format_significant(x, 12);
            let back: f64 = once.parse().unwrap();
            prop_assert_eq!(format_significant(back, 12), once);
            prop_assert!((back - x).abs() <= 1e-11 * x.abs());
        }
    }
}
