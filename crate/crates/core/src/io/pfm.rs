use std::path::Path;

use super::{read_file, write_file, Location, ModelIoError};

/// Single-channel float image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ModelIoError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ModelIoError::parse(Location::Byte(start), "truncated PFM header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number<T: std::str::FromStr>(bytes: &[u8], pos: &mut usize, what: &str) -> Result<T, ModelIoError> {
    let start = *pos;
    let token = header_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelIoError::parse(Location::Byte(start), format!("invalid {what}")))
}

pub fn parse_depth_pfm(bytes: &[u8]) -> Result<DepthMap, ModelIoError> {
    let mut pos = 0;
    match header_token(bytes, &mut pos) {
        Ok(b"Pf") => {}
        Ok(b"PF") => {
            return Err(ModelIoError::BadHeader(
                "three-channel PF file; depth maps must be single-channel Pf".into(),
            ))
        }
        _ => return Err(ModelIoError::BadHeader("missing Pf magic".into())),
    }
    let width: usize = header_number(bytes, &mut pos, "width")?;
    let height: usize = header_number(bytes, &mut pos, "height")?;
    let scale: f64 = header_number(bytes, &mut pos, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(ModelIoError::BadHeader(format!("scale {scale} must be non-zero")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ModelIoError::parse(Location::Byte(pos), "missing raster"));
    }
    pos += 1;
    let little = scale < 0.0;
    let count = width
        .checked_mul(height)
        .filter(|n| n.checked_mul(4).is_some_and(|b| b == bytes.len() - pos))
        .ok_or_else(|| {
            ModelIoError::parse(
                Location::Byte(bytes.len()),
                format!(
                    "raster of {width}x{height} floats needs {} bytes, found {}",
                    width as u128 * height as u128 * 4,
                    bytes.len() - pos
                ),
            )
        })?;
    let raster = &bytes[pos..];
    let mut data = vec![0.0f32; count];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = v;
    }
    Ok(DepthMap { width, height, data })
}

pub fn load_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap, ModelIoError> {
    parse_depth_pfm(&read_file(path.as_ref())?)
}

/// Encodes as little-endian `Pf` with scale `-1`.
pub fn write_depth_pfm(depth: &DepthMap) -> Vec<u8> {
    assert_eq!(depth.data.len(), depth.width * depth.height, "raster size");
    let mut out = format!("Pf\n{} {}\n-1\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.data.len() * 4);
    for row in depth.data.chunks(depth.width.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_depth_pfm(depth: &DepthMap, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    write_file(path.as_ref(), &write_depth_pfm(depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn little_endian_fixture_is_flipped() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        // Bottom row first.
        for v in [3.0f32, 4.0, 1.0, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let d = parse_depth_pfm(&bytes).unwrap();
        assert_eq!((d.width, d.height), (2, 2));
        assert_eq!(d.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.get(1, 0), 2.0);
    }

    #[test]
    fn big_endian_scale() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        for v in [5.0f32, 6.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(parse_depth_pfm(&bytes).unwrap().data, vec![6.0, 5.0]);
    }

    #[test]
    fn three_channel_is_rejected() {
        let mut bytes = b"PF\n1 1\n-1\n".to_vec();
        bytes.extend_from_slice(&[0; 12]);
        assert!(matches!(parse_depth_pfm(&bytes), Err(ModelIoError::BadHeader(_))));
    }

    #[test]
    fn truncated_raster() {
        let mut bytes = b"Pf\n2 2\n-1\n".to_vec();
        bytes.extend_from_slice(&[0; 15]);
        assert!(matches!(parse_depth_pfm(&bytes), Err(ModelIoError::Parse { .. })));
        assert!(parse_depth_pfm(b"Pf\n99999999999 99999999999\n-1\n").is_err());
        assert!(parse_depth_pfm(b"Pf\n2").is_err());
    }

    #[test]
    fn file_round_trip() {
        let d = DepthMap {
            width: 3,
            height: 2,
            data: vec![0.5, f32::NAN, -1.0, f32::INFINITY, 1e-30, 7.25],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        save_depth_pfm(&d, &path).unwrap();
        let back = load_depth_pfm(&path).unwrap();
        let bits = |m: &DepthMap| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&d));
        assert_eq!(write_depth_pfm(&back), std::fs::read(&path).unwrap());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(w in 1usize..6, h in 1usize..6, seed in any::<u32>()) {
            let data = (0..w * h).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503))).collect();
            let d = DepthMap { width: w, height: h, data };
            let bytes = write_depth_pfm(&d);
            let back = parse_depth_pfm(&bytes).unwrap();
            prop_assert_eq!(write_depth_pfm(&back), bytes);
        }

        #[test]
        fn never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = parse_depth_pfm(&bytes);
            let mut prefixed = b"Pf\n".to_vec();
            prefixed.extend_from_slice(&bytes);
            let _ = parse_depth_pfm(&prefixed);
        }
    }
}
