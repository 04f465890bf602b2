//! Minimal reverse-mode differentiation over `H×W×C` tensors.
//!
//! Operations are appended to a [`Tape`] in evaluation order, so a single
//! reverse sweep over the node list is a valid topological traversal.
//! Gradients stop at [`Tape::stop_grad`] nodes and at non-trainable leaves.

use crate::pyramid::{adaptive_pool_raw, bin_range};
use crate::types::{dot, norm};

/// Spatial tensor, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels, "tensor data length");
        Self { height, width, channels, data }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    /// Square kernel, weight layout `[out][ky][kx][in]`.
    Conv { x: Var, w: Var, b: Option<Var>, kernel: usize, stride: usize, pad: usize },
    Relu(Var),
    Pool(Var),
    GlobalAvg(Var),
    Concat(Vec<Var>),
    StopGrad,
    /// `sum_ij plan_ij * cos(x_i, y_j)` with the plan held constant.
    PlanCosine { x: Var, y: Var, plan: Vec<f64> },
    Cosine(Var, Var),
    LinComb { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    /// Trainable leaves receive gradients; the rest are constants.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf { trainable })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Convolution with an optional bias; `w` holds `out·kernel²·in` values.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let in_c = xv.channels;
        let out_c = self.value(w).len() / (kernel * kernel * in_c);
        assert_eq!(self.value(w).len(), out_c * kernel * kernel * in_c, "conv weight shape");
        let zero_bias = vec![0.0; out_c];
        let oh = (xv.height + 2 * pad - kernel) / stride + 1;
        let ow = (xv.width + 2 * pad - kernel) / stride + 1;
        let wv = &self.value(w).data;
        let bv = match b {
            Some(b) => &self.value(b).data,
            None => &zero_bias,
        };
        assert_eq!(bv.len(), out_c, "conv bias shape");
        let mut out = Tensor::zeros(oh, ow, out_c);
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out.data[(oy * ow + ox) * out_c..(oy * ow + ox + 1) * out_c];
                dst.copy_from_slice(bv);
                for ky in 0..kernel {
                    let Some(iy) = (oy * stride + ky).checked_sub(pad).filter(|&iy| iy < xv.height) else {
                        continue;
                    };
                    for kx in 0..kernel {
                        let Some(ix) = (ox * stride + kx).checked_sub(pad).filter(|&ix| ix < xv.width) else {
                            continue;
                        };
                        let src = &xv.data[(iy * xv.width + ix) * in_c..(iy * xv.width + ix + 1) * in_c];
                        for (o, d) in dst.iter_mut().enumerate() {
                            let wrow = &wv[((o * kernel + ky) * kernel + kx) * in_c..][..in_c];
                            *d += dot(wrow, src);
                        }
                    }
                }
            }
        }
        self.push(out, Op::Conv { x, w, b, kernel, stride, pad })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.height, xv.width, xv.channels, xv.data.iter().map(|v| v.max(0.0)).collect());
        self.push(out, Op::Relu(x))
    }

    /// Adaptive average pooling to `gh×gw` (bins as in [`crate::pyramid`]).
    pub fn adaptive_pool(&mut self, x: Var, gh: usize, gw: usize) -> Var {
        let xv = self.value(x);
        let data = adaptive_pool_raw(&xv.data, xv.height, xv.width, xv.channels, gh, gw);
        let out = Tensor::new(gh, gw, xv.channels, data);
        self.push(out, Op::Pool(x))
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = adaptive_pool_raw(&xv.data, xv.height, xv.width, xv.channels, 1, 1);
        let out = Tensor::new(1, 1, xv.channels, data);
        self.push(out, Op::GlobalAvg(x))
    }

    /// Stacks all spatial cells of the inputs into an `N×1×C` node list.
    pub fn concat_nodes(&mut self, xs: &[Var]) -> Var {
        let c = self.value(xs[0]).channels;
        let mut data = Vec::new();
        for &x in xs {
            let xv = self.value(x);
            assert_eq!(xv.channels, c, "concat channel mismatch");
            data.extend_from_slice(&xv.data);
        }
        let n = data.len() / c;
        self.push(Tensor::new(n, 1, c, data), Op::Concat(xs.to_vec()))
    }

    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        let _ = x;
        self.push(v, Op::StopGrad)
    }

    /// Plan-weighted cosine similarity between the node lists of `x` and `y`.
    pub fn plan_cosine(&mut self, x: Var, y: Var, plan: Vec<f64>) -> Var {
        let (xv, yv) = (self.value(x), self.value(y));
        assert_eq!(xv.channels, yv.channels, "plan_cosine channel mismatch");
        assert_eq!(plan.len(), xv.nodes() * yv.nodes(), "plan shape");
        let c = xv.channels;
        let ny = yv.nodes();
        let mut s = 0.0;
        for (i, xi) in xv.data.chunks_exact(c).enumerate() {
            for (j, yj) in yv.data.chunks_exact(c).enumerate() {
                let p = plan[i * ny + j];
                if p != 0.0 {
                    s += p * crate::types::cosine(xi, yj);
                }
            }
        }
        self.push(Tensor::scalar(s), Op::PlanCosine { x, y, plan })
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let s = crate::types::cosine(&self.value(a).data, &self.value(b).data);
        self.push(Tensor::scalar(s), Op::Cosine(a, b))
    }

    /// `bias + sum_k coeff_k * scalar_k`.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)], bias: f64) -> Var {
        let s = terms.iter().fold(bias, |acc, &(v, k)| acc + k * self.scalar(v));
        self.push(Tensor::scalar(s), Op::LinComb { terms: terms.to_vec() })
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { trainable: true })
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.value(root).len()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::StopGrad => {}
                Op::Relu(x) => {
                    let out = &node.value.data;
                    let gx: Vec<f64> = g.iter().zip(out).map(|(g, o)| if *o > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Conv { x, w, b, kernel, stride, pad } => {
                    let b = *b;
                    let (gx, gw, gb) = self.conv_backward(*x, *w, &node.value, &g, *kernel, *stride, *pad);
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *w, &gw);
                    if let Some(b) = b {
                        accumulate(&mut grads, b, &gb);
                    }
                }
                Op::Pool(x) | Op::GlobalAvg(x) => {
                    let xv = self.value(*x);
                    let gx = pool_backward(xv, &node.value, &g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let n = self.value(*x).len();
                        accumulate(&mut grads, *x, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::PlanCosine { x, y, plan } => {
                    let (gx, gy) = plan_cosine_backward(self.value(*x), self.value(*y), plan, g[0]);
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *y, &gy);
                }
                Op::Cosine(a, b) => {
                    let (ga, gb) = cosine_grad(&self.value(*a).data, &self.value(*b).data);
                    let ga: Vec<f64> = ga.iter().map(|v| v * g[0]).collect();
                    let gb: Vec<f64> = gb.iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::LinComb { terms } => {
                    for &(v, k) in terms {
                        accumulate(&mut grads, v, &[k * g[0]]);
                    }
                }
            }
        }

        // Only trainable leaves keep their gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf { trainable: true }) {
                grads[idx] = None;
            }
        }
        Gradients { grads }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        out: &Tensor,
        g: &[f64],
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let wv = &self.value(w).data;
        let in_c = xv.channels;
        let out_c = out.channels;
        let mut gx = vec![0.0; xv.len()];
        let mut gw = vec![0.0; wv.len()];
        let mut gb = vec![0.0; out_c];
        for oy in 0..out.height {
            for ox in 0..out.width {
                let go = &g[(oy * out.width + ox) * out_c..(oy * out.width + ox + 1) * out_c];
                for (acc, v) in gb.iter_mut().zip(go) {
                    *acc += v;
                }
                for ky in 0..kernel {
                    let Some(iy) = (oy * stride + ky).checked_sub(pad).filter(|&iy| iy < xv.height) else {
                        continue;
                    };
                    for kx in 0..kernel {
                        let Some(ix) = (ox * stride + kx).checked_sub(pad).filter(|&ix| ix < xv.width) else {
                            continue;
                        };
                        let base = (iy * xv.width + ix) * in_c;
                        let src = &xv.data[base..base + in_c];
                        for (o, &gov) in go.iter().enumerate() {
                            if gov == 0.0 {
                                continue;
                            }
                            let woff = ((o * kernel + ky) * kernel + kx) * in_c;
                            for ci in 0..in_c {
                                gw[woff + ci] += gov * src[ci];
                                gx[base + ci] += gov * wv[woff + ci];
                            }
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn pool_backward(x: &Tensor, out: &Tensor, g: &[f64]) -> Vec<f64> {
    let c = x.channels;
    let mut gx = vec![0.0; x.len()];
    for oi in 0..out.height {
        let (r0, r1) = bin_range(oi, x.height, out.height);
        for oj in 0..out.width {
            let (c0, c1) = bin_range(oj, x.width, out.width);
            let scale = 1.0 / ((r1 - r0) * (c1 - c0)) as f64;
            let go = &g[(oi * out.width + oj) * c..(oi * out.width + oj + 1) * c];
            for r in r0..r1 {
                for q in c0..c1 {
                    let dst = &mut gx[(r * x.width + q) * c..(r * x.width + q + 1) * c];
                    for (d, v) in dst.iter_mut().zip(go) {
                        *d += v * scale;
                    }
                }
            }
        }
    }
    gx
}

/// Partial derivatives of `cos(a, b)`; zero when either norm vanishes.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let cos = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(ai, bi)| bi / (na * nb) - cos * ai / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(ai, bi)| ai / (na * nb) - cos * bi / (nb * nb)).collect();
    (ga, gb)
}

fn plan_cosine_backward(x: &Tensor, y: &Tensor, plan: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    let c = x.channels;
    let ny = y.nodes();
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    for (i, xi) in x.data.chunks_exact(c).enumerate() {
        for (j, yj) in y.data.chunks_exact(c).enumerate() {
            let p = plan[i * ny + j] * g;
            if p == 0.0 {
                continue;
            }
            let (da, db) = cosine_grad(xi, yj);
            for k in 0..c {
                gx[i * c + k] += p * da[k];
                gy[j * c + k] += p * db[k];
            }
        }
    }
    (gx, gy)
}

/// Gradients of trainable leaves after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if `v` is not a trainable leaf or received no signal.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when absent.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}
