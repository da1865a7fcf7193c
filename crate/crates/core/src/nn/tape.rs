use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array4, ArrayD, Axis, Ix2, Ix4, IxDyn, Zip};

use super::conv::{conv_backward, conv_forward, ConvGeom};
use super::params::{GradStore, ParamId, ParamStore};
use super::{lit, Float};

type Backward<T> = Box<dyn Fn(&ArrayD<T>) -> Vec<(usize, ArrayD<T>)>>;

struct Node<T> {
    value: Arc<ArrayD<T>>,
    param: Option<ParamId>,
    backward: Option<Backward<T>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Append-only computation tape. Nodes are created in topological order, so
/// the reverse pass is a single sweep from the loss back to the leaves.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// A graph that evaluates values but never records backward closures.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&self, value: ArrayD<T>, backward: Option<Backward<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            param: None,
            backward: if self.record { backward } else { None },
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Arc<ArrayD<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn constant(&self, value: ArrayD<T>) -> Var {
        self.push(value, None)
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: store.shared(id), param: Some(id), backward: None });
        Var(nodes.len() - 1)
    }

    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert!(self.record, "backward on an inference graph");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<ArrayD<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(nodes[loss.0].value.raw_dim(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(bw) = &nodes[i].backward {
                for (parent, pg) in bw(&g) {
                    match &mut grads[parent] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        let params = nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (i, p))).collect();
        Gradients { grads, params }
    }

    fn arc(&self, v: Var) -> Arc<ArrayD<T>> {
        self.value(v)
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.arc(a), self.arc(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = &*va + &*vb;
        self.push(out, Some(Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.clone())])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.arc(a), self.arc(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = &*va - &*vb;
        self.push(out, Some(Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.mapv(|v| -v))])))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let s: T = lit(s);
        let out = self.arc(a).mapv(|v| v * s);
        self.push(out, Some(Box::new(move |g| vec![(a.0, g.mapv(|v| v * s))])))
    }

    pub fn silu(&self, a: Var) -> Var {
        let x = self.arc(a);
        let out = x.mapv(|v| v / (T::one() + (-v).exp()));
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut d = ArrayD::zeros(x.raw_dim());
                Zip::from(&mut d).and(&*x).and(g).for_each(|d, &v, &g| {
                    let s = T::one() / (T::one() + (-v).exp());
                    *d = g * s * (T::one() + v * (T::one() - s));
                });
                vec![(a.0, d)]
            })),
        )
    }

    // ---- layers ------------------------------------------------------------

    /// Square-kernel convolution on `[B, Ci, H, W]` with weight `[Co, Ci, k, k]` and bias `[Co]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let xv = self.arc(x);
        let wv = self.arc(weight);
        let x4 = xv.view().into_dimensionality::<Ix4>().expect("conv input must be 4-D");
        let w4 = wv.view().into_dimensionality::<Ix4>().expect("conv weight must be 4-D");
        let (_, ci, _, _) = x4.dim();
        let (_, wci, k, k2) = w4.dim();
        assert_eq!(ci, wci, "conv channel mismatch");
        assert_eq!(k, k2, "square kernels only");
        let geom = ConvGeom { kernel: k, stride, pad };
        let bv = bias.map(|b| self.arc(b));
        let bias_slice = bv.as_ref().map(|b| b.as_slice().expect("contiguous bias"));
        let (y, cols) = conv_forward(x4, w4, bias_slice, geom);
        let in_shape = x4.dim();
        let cols = if self.record { Some(cols) } else { None };
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().expect("4-D grad");
                let w4 = wv.view().into_dimensionality::<Ix4>().expect("4-D weight");
                let grads = conv_backward(g4, cols.as_ref().expect("recorded"), w4, in_shape, geom);
                let mut out = vec![(x.0, grads.input.into_dyn()), (weight.0, grads.weight.into_dyn())];
                if let Some(b) = bias {
                    out.push((b.0, ArrayD::from_shape_vec(IxDyn(&[grads.bias.len()]), grads.bias).unwrap()));
                }
                out
            })),
        )
    }

    /// `x [B, F] · wᵀ + b` with `w [O, F]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Var {
        let xv = self.arc(x);
        let wv = self.arc(weight);
        let bv = self.arc(bias);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("linear input must be 2-D");
        let w2 = wv.view().into_dimensionality::<Ix2>().expect("linear weight must be 2-D");
        let mut y = x2.dot(&w2.t());
        y += &bv.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let x2 = xv.view().into_dimensionality::<Ix2>().unwrap();
                let w2 = wv.view().into_dimensionality::<Ix2>().unwrap();
                vec![
                    (x.0, g2.dot(&w2).into_dyn()),
                    (weight.0, g2.t().dot(&x2).into_dyn()),
                    (bias.0, g2.sum_axis(Axis(0)).into_dyn()),
                ]
            })),
        )
    }

    /// Broadcast-add a per-sample channel vector `e [B, C]` onto `x [B, C, H, W]`.
    pub fn add_channel_bias(&self, x: Var, e: Var) -> Var {
        let xv = self.arc(x);
        let ev = self.arc(e);
        let (b, c, h, w) = xv.view().into_dimensionality::<Ix4>().expect("4-D").dim();
        let e2 = ev.view().into_dimensionality::<Ix2>().expect("2-D channel bias");
        assert_eq!(e2.dim(), (b, c), "channel bias shape");
        let mut out = xv.as_ref().clone().into_dimensionality::<Ix4>().unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let ebc = e2[[bi, ci]];
                out.slice_mut(ndarray::s![bi, ci, .., ..]).mapv_inplace(|v| v + ebc);
            }
        }
        let _ = (h, w);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let ge = g4.sum_axis(Axis(3)).sum_axis(Axis(2));
                vec![(x.0, g.clone()), (e.0, ge.into_dyn())]
            })),
        )
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        let vals: Vec<_> = parts.iter().map(|&p| self.arc(p)).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat shape mismatch");
        let widths: Vec<usize> = vals.iter().map(|v| v.shape()[1]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut off = 0;
                ids.iter()
                    .zip(&widths)
                    .map(|(&id, &w)| {
                        let s = g.slice_axis(Axis(1), ndarray::Slice::from(off..off + w)).to_owned();
                        off += w;
                        (id, s)
                    })
                    .collect()
            })),
        )
    }

    /// Nearest-neighbour ×2 upsampling of `[B, C, H, W]`.
    pub fn upsample2(&self, x: Var) -> Var {
        let xv = self.arc(x);
        let x4 = xv.view().into_dimensionality::<Ix4>().expect("4-D");
        let (b, c, h, w) = x4.dim();
        let out = Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(bi, ci, y, xx)| x4[[bi, ci, y / 2, xx / 2]]);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut d = Array4::<T>::zeros((b, c, h, w));
                for ((bi, ci, y, xx), &v) in g4.indexed_iter() {
                    d[[bi, ci, y / 2, xx / 2]] += v;
                }
                vec![(x.0, d.into_dyn())]
            })),
        )
    }

    /// 2×2 average pooling of `[B, C, H, W]` (H, W even).
    pub fn avg_pool2(&self, x: Var) -> Var {
        let xv = self.arc(x);
        let x4 = xv.view().into_dimensionality::<Ix4>().expect("4-D");
        let (b, c, h, w) = x4.dim();
        let quarter: T = lit(0.25);
        let out = Array4::from_shape_fn((b, c, h / 2, w / 2), |(bi, ci, y, xx)| {
            (x4[[bi, ci, 2 * y, 2 * xx]]
                + x4[[bi, ci, 2 * y + 1, 2 * xx]]
                + x4[[bi, ci, 2 * y, 2 * xx + 1]]
                + x4[[bi, ci, 2 * y + 1, 2 * xx + 1]])
                * quarter
        });
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let d = Array4::from_shape_fn((b, c, h, w), |(bi, ci, y, xx)| g4[[bi, ci, y / 2, xx / 2]] * quarter);
                vec![(x.0, d.into_dyn())]
            })),
        )
    }

    // ---- vector quantisation ----------------------------------------------

    /// Value of `quantized`, gradient passed unchanged to `z` (straight-through estimator).
    pub fn straight_through(&self, z: Var, quantized: Var) -> Var {
        let q = self.arc(quantized);
        assert_eq!(q.shape(), self.arc(z).shape(), "straight-through shape mismatch");
        self.push(q.as_ref().clone(), Some(Box::new(move |g| vec![(z.0, g.clone())])))
    }

    /// Gather codebook rows `codebook [N, C]` into an NCHW grid using per-cell
    /// indices laid out as `[B, h, w]` (row-major).
    pub fn gather_codes(&self, codebook: Var, indices: Arc<Vec<usize>>, grid: (usize, usize, usize)) -> Var {
        let cb = self.arc(codebook);
        let cb2 = cb.view().into_dimensionality::<Ix2>().expect("2-D codebook");
        let (n, c) = cb2.dim();
        let (b, h, w) = grid;
        assert_eq!(indices.len(), b * h * w);
        let out = Array4::from_shape_fn((b, c, h, w), |(bi, ci, y, x)| cb2[[indices[(bi * h + y) * w + x], ci]]);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut d = Array2::<T>::zeros((n, c));
                for bi in 0..b {
                    for y in 0..h {
                        for x in 0..w {
                            let row = indices[(bi * h + y) * w + x];
                            for ci in 0..c {
                                d[[row, ci]] += g4[[bi, ci, y, x]];
                            }
                        }
                    }
                }
                vec![(codebook.0, d.into_dyn())]
            })),
        )
    }

    /// Block gradient flow: same value, leaf node.
    pub fn detach(&self, x: Var) -> Var {
        let v = self.arc(x);
        self.push(v.as_ref().clone(), None)
    }

    // ---- reductions -------------------------------------------------------

    /// Mean of squared differences, as a 0-d tensor.
    pub fn mse(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.arc(a), self.arc(b));
        assert_eq!(va.shape(), vb.shape(), "mse shape mismatch");
        let n = va.len() as f64;
        let diff = &*va - &*vb;
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / lit::<T>(n);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Some(Box::new(move |g| {
                let s = g.iter().next().copied().unwrap() * lit::<T>(2.0 / n);
                let d = diff.mapv(|v| v * s);
                vec![(a.0, d.clone()), (b.0, -d)]
            })),
        )
    }

    /// Mean absolute difference, as a 0-d tensor (subgradient 0 at ties).
    pub fn l1(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.arc(a), self.arc(b));
        assert_eq!(va.shape(), vb.shape(), "l1 shape mismatch");
        let n = va.len() as f64;
        let diff = &*va - &*vb;
        let loss = diff.iter().map(|d| d.abs()).sum::<T>() / lit::<T>(n);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Some(Box::new(move |g| {
                let s = g.iter().next().copied().unwrap() / lit::<T>(n);
                let d = diff.mapv(|v| if v > T::zero() { s } else if v < T::zero() { -s } else { T::zero() });
                vec![(a.0, d.clone()), (b.0, -d)]
            })),
        )
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<ArrayD<T>>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Float> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Add every parameter gradient into `acc`.
    pub fn accumulate_into(&self, acc: &mut GradStore<T>) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                acc.add(pid, g);
            }
        }
    }
}
