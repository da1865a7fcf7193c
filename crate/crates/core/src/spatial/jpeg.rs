use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use ndarray::{Array2, ArrayView2};

use super::SpatialError;

/// Grayscale JPEG round trip at `quality` (1..=100) through 8-bit samples.
pub fn jpeg_round_trip(image: ArrayView2<f32>, quality: u8) -> Result<Array2<f32>, SpatialError> {
    let (h, w) = image.dim();
    let bytes: Vec<u8> = image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100))
        .encode(&bytes, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| SpatialError::Jpeg(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| SpatialError::Jpeg(e.to_string()))?
        .to_luma8();
    if decoded.dimensions() != (w as u32, h as u32) {
        return Err(SpatialError::Jpeg("decoded size differs from input".into()));
    }
    Ok(Array2::from_shape_vec((h, w), decoded.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        .expect("decoded buffer matches dimensions"))
}
