use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};

use super::Float;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + kx - pad` is in bounds.
#[inline]
fn valid_span(kx: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(wo);
    (lo, hi.max(lo))
}

/// Unfold `x` `[B, C, H, W]` into `[C*k*k, B*Ho*Wo]`.
pub(crate) fn im2col<T: Float>(x: ArrayView4<T>, g: ConvGeom) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let cols_n = b * ho * wo;
    let mut cols = Array2::<T>::zeros((c * k * k, cols_n));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let out = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * cols_n..(row + 1) * cols_n];
                for bi in 0..b {
                    let plane = &xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let base = (bi * ho + oy) * wo;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_span(kx, g.pad, w, wo);
                            if lo < hi {
                                let off = lo + kx - g.pad;
                                dst[base + lo..base + hi].copy_from_slice(&src_row[off..off + hi - lo]);
                            }
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[B, C, H, W]`.
pub(crate) fn col2im<T: Float>(
    cols: ArrayView2<T>,
    shape: (usize, usize, usize, usize),
    g: ConvGeom,
) -> Array4<T> {
    let (b, c, h, w) = shape;
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let cols_n = b * ho * wo;
    let mut x = Array4::<T>::zeros(shape);
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let xs = x.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * cols_n..(row + 1) * cols_n];
                for bi in 0..b {
                    let plane = &mut xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (bi * ho + oy) * wo;
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_span(kx, g.pad, w, wo);
                            if lo < hi {
                                let off = lo + kx - g.pad;
                                for (d, &s) in dst_row[off..off + hi - lo].iter_mut().zip(&src[base + lo..base + hi]) {
                                    *d += s;
                                }
                            }
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[Co, B*Ho*Wo]` -> `[B, Co, Ho, Wo]`.
pub(crate) fn cols_to_nchw<T: Float>(y: Array2<T>, b: usize, ho: usize, wo: usize) -> Array4<T> {
    let co = y.nrows();
    y.into_shape_with_order((co, b, ho, wo))
        .expect("conv output reshape")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

/// `[B, C, H, W]` -> `[C, B*H*W]`.
pub(crate) fn nchw_to_cols<T: Float>(y: ArrayView4<T>) -> Array2<T> {
    let (b, c, h, w) = y.dim();
    y.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, b * h * w))
        .expect("conv grad reshape")
}

pub(crate) fn conv_forward<T: Float>(
    x: ArrayView4<T>,
    weight: ArrayView4<T>,
    bias: Option<&[T]>,
    g: ConvGeom,
) -> (Array4<T>, Array2<T>) {
    let (b, _, h, w) = x.dim();
    let co = weight.dim().0;
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let cols = im2col(x, g);
    let w2 = weight
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((co, cols.nrows()))
        .expect("weight reshape");
    let mut y = w2.dot(&cols);
    if let Some(bias) = bias {
        for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(bias) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    (cols_to_nchw(y, b, ho, wo), cols)
}

pub(crate) struct ConvGrads<T> {
    pub input: Array4<T>,
    pub weight: Array4<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv_backward<T: Float>(
    grad_out: ArrayView4<T>,
    cols: &Array2<T>,
    weight: ArrayView4<T>,
    input_shape: (usize, usize, usize, usize),
    g: ConvGeom,
) -> ConvGrads<T> {
    let wdim = weight.dim();
    let dy = nchw_to_cols(grad_out);
    let w2 = weight
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((wdim.0, cols.nrows()))
        .expect("weight reshape");
    let dw = dy.dot(&cols.t()).into_shape_with_order(wdim).expect("dw reshape");
    let db = dy.sum_axis(Axis(1)).to_vec();
    let dcols = w2.t().dot(&dy);
    let dx = col2im(dcols.view(), input_shape, g);
    ConvGrads { input: dx, weight: dw, bias: db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, g: ConvGeom) -> Array4<f64> {
        let (b, c, h, wd) = x.dim();
        let co = w.dim().0;
        let (ho, wo) = (g.out_len(h), g.out_len(wd));
        let mut y = Array4::zeros((b, co, ho, wo));
        for bi in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x[[bi, ci, iy as usize, ix as usize]]
                                            * w[[o, ci, ky, kx]];
                                    }
                                }
                            }
                        }
                        y[[bi, o, oy, ox]] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
            let g = ConvGeom { kernel: k, stride: s, pad: p };
            let x = Array::from_shape_fn((2, 3, 7, 6), |(a, b, c, d)| {
                ((a * 31 + b * 17 + c * 7 + d * 3) % 11) as f64 - 5.0
            });
            let w = Array::from_shape_fn((4, 3, k, k), |(a, b, c, d)| {
                ((a * 5 + b * 3 + c * 2 + d) % 7) as f64 * 0.1 - 0.3
            });
            let (y, _) = conv_forward(x.view(), w.view(), None, g);
            let yn = naive_conv(&x, &w, g);
            assert_eq!(y.dim(), yn.dim());
            for (a, b) in y.iter().zip(yn.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom { kernel: 3, stride: 2, pad: 1 };
        let x = Array::from_shape_fn((2, 2, 5, 6), |(a, b, c, d)| (a + 2 * b + 3 * c + d) as f64 * 0.01);
        let cols = im2col(x.view(), g);
        let c = Array::from_shape_fn(cols.dim(), |(i, j)| ((i * 13 + j * 7) % 5) as f64 - 2.0);
        let lhs: f64 = (&cols * &c).sum();
        let back = col2im(c.view(), x.dim(), g);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
