use ndarray::{Array2, ArrayView2};

use super::SpatialError;

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps for one axis: first input index and normalised weights.
#[derive(Debug, Clone)]
struct AxisTaps {
    taps: Vec<(usize, Vec<f64>)>,
}

impl AxisTaps {
    /// Pixel-centre aligned mapping `src = (dst + 0.5) / s - 0.5`. When
    /// shrinking, the kernel is stretched by `1/s` so it doubles as the
    /// anti-aliasing prefilter. Out-of-range taps replicate the border.
    fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_out as f64 / n_in as f64;
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let taps = (0..n_out)
            .map(|i| {
                let centre = (i as f64 + 0.5) / scale - 0.5;
                let lo = (centre - support).floor() as isize + 1;
                let hi = (centre + support).ceil() as isize - 1;
                let mut weights = vec![0.0; n_in];
                let mut used = (usize::MAX, 0usize);
                for j in lo..=hi {
                    let w = cubic_kernel((centre - j as f64) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, n_in as isize - 1) as usize;
                    weights[idx] += w;
                    used = (used.0.min(idx), used.1.max(idx));
                }
                let (first, last) = used;
                let mut w: Vec<f64> = weights[first..=last].to_vec();
                let sum: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= sum;
                }
                (first, w)
            })
            .collect();
        Self { taps }
    }
}

/// Separable bicubic resampling to an explicit size, clamped to `[0, 1]`.
pub fn resize_bicubic_to(image: ArrayView2<f32>, out_h: usize, out_w: usize) -> Result<Array2<f32>, SpatialError> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(SpatialError::InvalidScale(format!("cannot resample {h}x{w} to {out_h}x{out_w}")));
    }
    Ok(resample(image, out_h, out_w).mapv_into(|v| v.clamp(0.0, 1.0)))
}

/// Same as [`resize_bicubic_to`] without the final clamp. Used where
/// intermediate out-of-range values must survive (e.g. flow fields).
pub(crate) fn resample(image: ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.to_owned();
    }
    let cols = AxisTaps::new(w, out_w);
    let rows = AxisTaps::new(h, out_h);
    let mut tmp = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        let src = image.row(y);
        for (x, (first, wts)) in cols.taps.iter().enumerate() {
            tmp[[y, x]] = wts.iter().enumerate().map(|(k, wk)| wk * src[first + k] as f64).sum();
        }
    }
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for (y, (first, wts)) in rows.taps.iter().enumerate() {
        for x in 0..out_w {
            let v: f64 = wts.iter().enumerate().map(|(k, wk)| wk * tmp[[first + k, x]]).sum();
            out[[y, x]] = v as f32;
        }
    }
    out
}

/// Bicubic resampling by a scale factor; output size is `round(H·scale) × round(W·scale)`.
pub fn bicubic_resize(image: ArrayView2<f32>, scale: f64) -> Result<Array2<f32>, SpatialError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(SpatialError::InvalidScale(format!("scale must be positive, got {scale}")));
    }
    let (h, w) = image.dim();
    let out_h = (h as f64 * scale).round() as usize;
    let out_w = (w as f64 * scale).round() as usize;
    if out_h < 1 || out_w < 1 {
        return Err(SpatialError::InvalidScale(format!("{h}x{w} scaled by {scale} is empty")));
    }
    resize_bicubic_to(image, out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (u, v) = (y as f64 / h as f64 - 0.5, x as f64 / w as f64 - 0.5);
            (0.5 + 0.35 * (-(u * u + v * v) * 6.0).exp() * (2.0 * u).cos()) as f32
        })
    }

    #[test]
    fn kernel_interpolates_and_partitions_unity() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        for &t in &[0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-2..=2).map(|k| cubic_kernel(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_scale_output_size() {
        let img = smooth(256, 256);
        assert_eq!(bicubic_resize(img.view(), 0.25).unwrap().dim(), (64, 64));
        assert_eq!(bicubic_resize(img.view(), 4.0).unwrap().dim(), (1024, 1024));
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = smooth(37, 23);
        let out = bicubic_resize(img.view(), 1.0).unwrap();
        for (a, b) in img.iter().zip(out.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_image_is_preserved_at_any_scale() {
        let img = Array2::from_elem((40, 30), 0.37f32);
        for &s in &[0.1, 0.25, 0.5, 1.3, 2.0, 4.0] {
            let out = bicubic_resize(img.view(), s).unwrap();
            assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-6), "scale {s}");
        }
    }

    #[test]
    fn invalid_scales_are_rejected() {
        let img = smooth(8, 8);
        for s in [0.0, -1.0, f64::NAN, 0.01] {
            assert!(matches!(bicubic_resize(img.view(), s), Err(SpatialError::InvalidScale(_))));
        }
    }

    #[test]
    fn upscale_reproduces_linear_ramp_in_the_interior() {
        // Keys' kernel reproduces polynomials up to degree two.
        let img = Array2::from_shape_fn((16, 16), |(y, x)| (0.1 + 0.02 * x as f64 + 0.01 * y as f64) as f32);
        let out = bicubic_resize(img.view(), 2.0).unwrap();
        for y in 6..26 {
            for x in 6..26 {
                let sx = (x as f64 + 0.5) / 2.0 - 0.5;
                let sy = (y as f64 + 0.5) / 2.0 - 0.5;
                let expect = 0.1 + 0.02 * sx + 0.01 * sy;
                assert!((out[[y, x]] as f64 - expect).abs() < 1e-6);
            }
        }
    }
}
