use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::blending::{BlendMask, Image};

use super::ModelIoError;

fn codec(path: &Path, e: impl std::fmt::Display) -> ModelIoError {
    ModelIoError::Image(format!("{}: {e}", path.display()))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit PNG or PPM. Grayscale files give one channel, everything
/// else three; alpha is dropped. Samples are scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ModelIoError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec(path, e))?;
    let (width, height) = (img.width(), img.height());
    let (channels, raw) = if img.color().has_color() {
        (3, img.into_rgb8().into_raw())
    } else {
        (1, img.into_luma8().into_raw())
    };
    let data = raw.into_iter().map(|v| v as f64 / 255.0).collect();
    Image::new(width, height, channels, data).map_err(|e| codec(path, e))
}

/// Loads a single-channel image and thresholds it at 0.5.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BlendMask, ModelIoError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec(path, e))?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v as f64 / 255.0 >= 0.5).collect();
    BlendMask::new(w, h, data).map_err(|e| codec(path, e))
}

/// Saves as 8-bit PNG or binary PPM, chosen by extension. Samples are
/// clamped to `[0, 1]` and rounded.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path).map_err(|e| codec(path, e))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ModelIoError::Unsupported(format!(
            "{}: only .png and .ppm are written",
            path.display()
        )));
    }
    let (w, h) = image.dims();
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    let dynamic = if image.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size matches"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size matches"))
    };
    if format == ImageFormat::Pnm {
        let file = std::fs::File::create(path).map_err(|e| ModelIoError::io(path, e))?;
        let rgb = dynamic.into_rgb8();
        return PnmEncoder::new(BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(rgb.as_raw(), w, h, ExtendedColorType::Rgb8)
            .map_err(|e| codec(path, e));
    }
    dynamic.save_with_format(path, format).map_err(|e| codec(path, e))
}
