use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

/// Normalised 1-D Gaussian taps of odd length `size`.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Circular low-pass (2-D sinc) kernel with cutoff `omega` in radians/pixel.
pub fn sinc_kernel(size: usize, omega: f64) -> Array2<f64> {
    let c = (size / 2) as f64;
    let mut k = Array2::from_shape_fn((size, size), |(y, x)| {
        let r = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
        if r == 0.0 {
            omega * omega / (4.0 * PI)
        } else {
            omega * libm::j1(omega * r) / (2.0 * PI * r)
        }
    });
    let s = k.sum();
    k.mapv_inplace(|v| v / s);
    k
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // Mirror without repeating the edge sample: -1 -> 1, n -> n - 2.
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable filtering with reflect padding.
pub fn filter_separable(image: ArrayView2<f32>, taps: &[f64]) -> Array2<f32> {
    let (h, w) = image.dim();
    let r = (taps.len() / 2) as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * image[[y, reflect(x as isize + k as isize - r, w)]] as f64)
                .sum();
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * tmp[[reflect(y as isize + k as isize - r, h), x]])
            .sum::<f64>() as f32
    })
}

/// Dense 2-D correlation with reflect padding.
pub fn filter2d(image: ArrayView2<f32>, kernel: ArrayView2<f64>) -> Array2<f32> {
    let (h, w) = image.dim();
    let (kh, kw) = kernel.dim();
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for ky in 0..kh {
            let sy = reflect(y as isize + ky as isize - ry, h);
            for kx in 0..kw {
                let sx = reflect(x as isize + kx as isize - rx, w);
                acc += kernel[[ky, kx]] * image[[sy, sx]] as f64;
            }
        }
        acc as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalised_and_symmetric() {
        let g = gaussian_taps(9, 1.7);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g[0] - g[8]).abs() < 1e-15);
        let s = sinc_kernel(13, PI / 2.0);
        assert!((s.sum() - 1.0).abs() < 1e-12);
        assert!((s[[2, 5]] - s[[10, 7]]).abs() < 1e-15);
        assert!((s[[2, 5]] - s[[5, 2]]).abs() < 1e-15);
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
        assert_eq!(reflect(-7, 1), 0);
    }

    #[test]
    fn filters_preserve_constants() {
        let img = Array2::from_elem((12, 9), 0.42f32);
        let a = filter_separable(img.view(), &gaussian_taps(7, 2.0));
        let b = filter2d(img.view(), sinc_kernel(9, 1.3).view());
        assert!(a.iter().chain(b.iter()).all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn separable_equals_outer_product_filter() {
        let img = Array2::from_shape_fn((10, 11), |(y, x)| ((y * 7 + x * 3) % 5) as f32 / 5.0);
        let taps = gaussian_taps(5, 1.1);
        let k2 = Array2::from_shape_fn((5, 5), |(i, j)| taps[i] * taps[j]);
        let a = filter_separable(img.view(), &taps);
        let b = filter2d(img.view(), k2.view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
