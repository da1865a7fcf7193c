//! Dense optical flow by polynomial expansion (Farnebäck), following the
//! structure of the OpenCV implementation: per-pixel quadratic fit,
//! coarse-to-fine pyramid, box-filtered displacement refinement.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::TemporalError;
use crate::spatial::kernels::{filter_separable, gaussian_taps};

/// Coarser levels narrower than this are skipped.
const MIN_LEVEL_SIZE: usize = 32;
/// The refinement regulariser is tuned for 8-bit intensity units.
const INTENSITY_SCALE: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Number of pyramid levels above the full-resolution one.
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    pub window_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { pyramid_levels: 3, pyramid_scale: 0.5, window_size: 15, iterations: 3, poly_n: 5, poly_sigma: 1.1 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let bad = |m: String| Err(TemporalError::InvalidParams(m));
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be at least 1".into());
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("pyramid_scale {} must lie in (0, 1)", self.pyramid_scale));
        }
        if self.window_size.is_multiple_of(2) || self.window_size < 3 {
            return bad(format!("window_size {} must be odd and at least 3", self.window_size));
        }
        if self.poly_n.is_multiple_of(2) || self.poly_n < 3 {
            return bad(format!("poly_n {} must be odd and at least 3", self.poly_n));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.poly_sigma > 0.0) {
            return bad("poly_sigma must be positive".into());
        }
        Ok(())
    }
}

/// Per-pixel displacement `[H, W, 2]` holding `(dx, dy)` such that
/// `a(p) ≈ b(p + d(p))` for a flow estimated from `a` to `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub displacement: Array3<f32>,
    /// Set when an input frame was constant and the flow was forced to zero.
    pub degenerate: bool,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { displacement: Array3::zeros((h, w, 2)), degenerate: false }
    }

    pub fn shape(&self) -> (usize, usize) {
        let (h, w, _) = self.displacement.dim();
        (h, w)
    }

    pub fn dx(&self, y: usize, x: usize) -> f32 {
        self.displacement[[y, x, 0]]
    }

    pub fn dy(&self, y: usize, x: usize) -> f32 {
        self.displacement[[y, x, 1]]
    }

    /// Mean `(dx, dy)` over pixels at least `margin` from every border.
    pub fn interior_mean(&self, margin: usize) -> (f64, f64) {
        let (h, w) = self.shape();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                sx += self.dx(y, x) as f64;
                sy += self.dy(y, x) as f64;
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        (sx / n as f64, sy / n as f64)
    }

    pub fn max_magnitude(&self) -> f64 {
        let (h, w) = self.shape();
        let mut m = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                m = m.max((self.dx(y, x) as f64).hypot(self.dy(y, x) as f64));
            }
        }
        m
    }
}

struct PolyBasis {
    g: Vec<f64>,
    xg: Vec<f64>,
    xxg: Vec<f64>,
    ig11: f64,
    ig03: f64,
    ig33: f64,
    ig55: f64,
}

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = [[0.0; 12]; 6];
    for i in 0..6 {
        a[i][..6].copy_from_slice(&m[i]);
        a[i][6 + i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty");
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..6 {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..12 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut inv = [[0.0; 6]; 6];
    for i in 0..6 {
        inv[i].copy_from_slice(&a[i][6..]);
    }
    inv
}

impl PolyBasis {
    fn new(n: usize, sigma: f64) -> Self {
        let mut g: Vec<f64> = (0..=n).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let s = g[0] + 2.0 * g[1..].iter().sum::<f64>();
        g.iter_mut().for_each(|v| *v /= s);
        let xg: Vec<f64> = g.iter().enumerate().map(|(x, v)| x as f64 * v).collect();
        let xxg: Vec<f64> = g.iter().enumerate().map(|(x, v)| (x * x) as f64 * v).collect();

        let ni = n as isize;
        let gat = |i: isize| g[i.unsigned_abs()];
        let mut moments = [0.0f64; 4];
        for y in -ni..=ni {
            for x in -ni..=ni {
                let w = gat(y) * gat(x);
                let (xf, yf) = (x as f64, y as f64);
                moments[0] += w;
                moments[1] += w * xf * xf;
                moments[2] += w * xf.powi(4);
                moments[3] += w * xf * xf * yf * yf;
            }
        }
        // Basis order: 1, x, y, x², y², xy.
        let mut gm = [[0.0f64; 6]; 6];
        gm[0][0] = moments[0];
        gm[1][1] = moments[1];
        gm[2][2] = moments[1];
        gm[3][3] = moments[2];
        gm[4][4] = moments[2];
        gm[5][5] = moments[3];
        for (i, j) in [(0, 3), (0, 4)] {
            gm[i][j] = moments[1];
            gm[j][i] = moments[1];
        }
        gm[3][4] = moments[3];
        gm[4][3] = moments[3];
        let inv = invert6(gm);
        Self { g, xg, xxg, ig11: inv[1][1], ig03: inv[0][3], ig33: inv[3][3], ig55: inv[5][5] }
    }
}

/// Quadratic expansion coefficients `[ry, rx, ryy, rxx, rxy]` per pixel.
fn poly_expansion(img: &Array2<f64>, basis: &PolyBasis) -> Vec<[f64; 5]> {
    let (h, w) = img.dim();
    let n = basis.g.len() - 1;
    let mut out = vec![[0.0; 5]; h * w];
    let mut r0 = vec![0.0; w];
    let mut r1 = vec![0.0; w];
    let mut r2 = vec![0.0; w];
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            r0[x] = img[[y, x]] * basis.g[0];
            r1[x] = 0.0;
            r2[x] = 0.0;
        }
        for k in 1..=n {
            let y0 = y.saturating_sub(k);
            let y1 = (y + k).min(h - 1);
            for x in 0..w {
                let (s0, s1) = (img[[y0, x]], img[[y1, x]]);
                let p = s0 + s1;
                r0[x] += basis.g[k] * p;
                r1[x] += basis.xg[k] * (s1 - s0);
                r2[x] += basis.xxg[k] * p;
            }
        }
        for x in 0..w {
            let (mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
                (r0[x] * basis.g[0], 0.0, r1[x] * basis.g[0], 0.0, r2[x] * basis.g[0], 0.0);
            for k in 1..=n {
                let xl = clamp_x(x as isize - k as isize);
                let xr = clamp_x(x as isize + k as isize);
                let tl = r0[xr] + r0[xl];
                let tr = r0[xr] - r0[xl];
                b1 += tl * basis.g[k];
                b2 += tr * basis.xg[k];
                b4 += tl * basis.xxg[k];
                b3 += (r1[xr] + r1[xl]) * basis.g[k];
                b6 += (r1[xr] - r1[xl]) * basis.xg[k];
                b5 += (r2[xr] + r2[xl]) * basis.g[k];
            }
            out[y * w + x] = [
                b3 * basis.ig11,
                b2 * basis.ig11,
                b1 * basis.ig03 + b5 * basis.ig33,
                b1 * basis.ig03 + b4 * basis.ig33,
                b6 * basis.ig55,
            ];
        }
    }
    out
}

const BORDER: [f64; 5] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

/// Per-pixel normal-equation terms `[g11, g12, g22, h1, h2]` for the
/// current flow estimate.
fn update_matrices(r0: &[[f64; 5]], r1: &[[f64; 5]], flow: &[[f64; 2]], h: usize, w: usize) -> Vec<[f64; 5]> {
    let mut m = vec![[0.0; 5]; h * w];
    let bw = BORDER.len();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let [dx, dy] = flow[i];
            let fx = x as f64 + dx;
            let fy = y as f64 + dy;
            let (x1, y1) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x1, fy - y1);
            let a = &r0[i];
            let (mut r2, mut r3, r4, r5, r6);
            // Targets exactly on the last row/column count as inside, so
            // identical frames give zero residual everywhere.
            if fx >= 0.0 && fy >= 0.0 && fx <= (w - 1) as f64 && fy <= (h - 1) as f64 {
                let (xi, yi) = (x1 as usize, y1 as usize);
                let (xn, yn) = ((xi + 1).min(w - 1), (yi + 1).min(h - 1));
                let (a00, a01, a10, a11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
                let at = |c: usize| {
                    a00 * r1[yi * w + xi][c] + a01 * r1[yi * w + xn][c] + a10 * r1[yn * w + xi][c] + a11 * r1[yn * w + xn][c]
                };
                r2 = at(0);
                r3 = at(1);
                r4 = (a[2] + at(2)) * 0.5;
                r5 = (a[3] + at(3)) * 0.5;
                r6 = (a[4] + at(4)) * 0.25;
            } else {
                r2 = 0.0;
                r3 = 0.0;
                r4 = a[2];
                r5 = a[3];
                r6 = a[4] * 0.5;
            }
            r2 = (a[0] - r2) * 0.5;
            r3 = (a[1] - r3) * 0.5;
            r2 += r4 * dy + r6 * dx;
            r3 += r6 * dy + r5 * dx;
            let (mut r2, mut r3, mut r4, mut r5, mut r6) = (r2, r3, r4, r5, r6);
            if x < bw || y < bw || x >= w.saturating_sub(bw) || y >= h.saturating_sub(bw) {
                let mut s = 1.0;
                if x < bw {
                    s *= BORDER[x];
                }
                if x + bw >= w {
                    s *= BORDER[(w - x - 1).min(bw - 1)];
                }
                if y < bw {
                    s *= BORDER[y];
                }
                if y + bw >= h {
                    s *= BORDER[(h - y - 1).min(bw - 1)];
                }
                r2 *= s;
                r3 *= s;
                r4 *= s;
                r5 *= s;
                r6 *= s;
            }
            m[i] = [r4 * r4 + r6 * r6, (r4 + r5) * r6, r5 * r5 + r6 * r6, r4 * r2 + r6 * r3, r6 * r2 + r5 * r3];
        }
    }
    m
}

/// Separable box average with replicated borders.
fn box_blur(m: &[[f64; 5]], h: usize, w: usize, radius: usize) -> Vec<[f64; 5]> {
    let r = radius as isize;
    let mut tmp = vec![[0.0; 5]; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 5];
            for k in -r..=r {
                let yy = (y as isize + k).clamp(0, h as isize - 1) as usize;
                let v = &m[yy * w + x];
                for c in 0..5 {
                    acc[c] += v[c];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![[0.0; 5]; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 5];
            for k in -r..=r {
                let xx = (x as isize + k).clamp(0, w as isize - 1) as usize;
                let v = &tmp[y * w + xx];
                for c in 0..5 {
                    acc[c] += v[c];
                }
            }
            for c in 0..5 {
                acc[c] *= norm;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn solve_flow(m: &[[f64; 5]], flow: &mut [[f64; 2]]) {
    for (f, &[g11, g12, g22, h1, h2]) in flow.iter_mut().zip(m) {
        let idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
        *f = [(g11 * h2 - g12 * h1) * idet, (g22 * h1 - g12 * h2) * idet];
    }
}

/// Centre-aligned bilinear resampling with clamped borders.
pub(crate) fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        (1.0 - ty) * ((1.0 - tx) * src[[y0, x0]] + tx * src[[y0, x1]]) + ty * ((1.0 - tx) * src[[y1, x0]] + tx * src[[y1, x1]])
    })
}

fn level_image(frame: ArrayView2<f32>, scale: f64, h: usize, w: usize) -> Array2<f64> {
    // Pre-blur as OpenCV does: sigma from the scale, and the kernel-size
    // default sigma (0.8 for 3 taps) when that is zero.
    let mut sigma = (1.0 / scale - 1.0) * 0.5;
    let ksize = (((sigma * 5.0).round() as usize) | 1).max(3);
    if sigma <= 0.0 {
        sigma = 0.3 * ((ksize as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    }
    let blurred = filter_separable(frame, &gaussian_taps(ksize, sigma));
    let full = blurred.mapv(|v| v as f64 * INTENSITY_SCALE);
    resize_bilinear(&full, h, w)
}

fn is_constant(frame: ArrayView2<f32>) -> bool {
    let (lo, hi) = frame.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    !(hi - lo > 1e-6)
}

/// Flow from `frame_a` to `frame_b`.
pub fn estimate_flow(frame_a: ArrayView2<f32>, frame_b: ArrayView2<f32>, params: &FlowParams) -> Result<FlowField, TemporalError> {
    params.validate()?;
    if frame_a.dim() != frame_b.dim() {
        return Err(TemporalError::ShapeMismatch { expected: frame_a.dim(), found: frame_b.dim() });
    }
    let (h, w) = frame_a.dim();
    if h == 0 || w == 0 {
        return Err(TemporalError::ShapeMismatch { expected: (1, 1), found: (h, w) });
    }
    if is_constant(frame_a) || is_constant(frame_b) {
        return Ok(FlowField { degenerate: true, ..FlowField::zeros(h, w) });
    }
    let basis = PolyBasis::new(params.poly_n, params.poly_sigma);
    let mut prev: Option<(Array2<f64>, Array2<f64>)> = None;
    for k in (0..=params.pyramid_levels).rev() {
        let scale = params.pyramid_scale.powi(k as i32);
        let lw = (w as f64 * scale).round() as usize;
        let lh = (h as f64 * scale).round() as usize;
        if k > 0 && (lw < MIN_LEVEL_SIZE || lh < MIN_LEVEL_SIZE) {
            continue;
        }
        let mut flow: Vec<[f64; 2]> = match &prev {
            None => vec![[0.0; 2]; lh * lw],
            Some((fx, fy)) => {
                let up = 1.0 / params.pyramid_scale;
                let rx = resize_bilinear(fx, lh, lw);
                let ry = resize_bilinear(fy, lh, lw);
                rx.iter().zip(ry.iter()).map(|(&a, &b)| [a * up, b * up]).collect()
            }
        };
        let ra = poly_expansion(&level_image(frame_a, scale, lh, lw), &basis);
        let rb = poly_expansion(&level_image(frame_b, scale, lh, lw), &basis);
        let mut m = update_matrices(&ra, &rb, &flow, lh, lw);
        for it in 0..params.iterations {
            let blurred = box_blur(&m, lh, lw, params.window_size / 2);
            solve_flow(&blurred, &mut flow);
            if it + 1 < params.iterations {
                m = update_matrices(&ra, &rb, &flow, lh, lw);
            }
        }
        let fx = Array2::from_shape_vec((lh, lw), flow.iter().map(|f| f[0]).collect()).expect("sized");
        let fy = Array2::from_shape_vec((lh, lw), flow.iter().map(|f| f[1]).collect()).expect("sized");
        prev = Some((fx, fy));
    }
    let (fx, fy) = prev.expect("the finest level always runs");
    let mut displacement = Array3::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            displacement[[y, x, 0]] = fx[[y, x]] as f32;
            displacement[[y, x, 1]] = fy[[y, x]] as f32;
        }
    }
    Ok(FlowField { displacement, degenerate: false })
}
