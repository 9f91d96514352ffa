//! A small reverse-mode tape over dense `f64` tensors, carrying exactly the
//! operators the detector and the adversarial heads need: im2col convolution,
//! affine layers, ReLU, dropout, ROI max pooling, gradient reversal, and the
//! scalar losses (weighted binary CE on logits, softmax CE, smooth-L1).

use crate::error::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy `-y ln p - (1 - y) ln(1 - p)` with `p` clamped.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// `(1/n) sum_i w_i * bce(p_i, label)`, zero for empty input.
pub fn weighted_bce_mean(probs: &[f64], label: f64, weights: &[f64]) -> f64 {
    debug_assert_eq!(probs.len(), weights.len());
    if probs.is_empty() {
        return 0.0;
    }
    let sum: f64 = probs
        .iter()
        .zip(weights)
        .map(|(&p, &w)| w * bce(p, label))
        .sum();
    sum / probs.len() as f64
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[inline]
fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, all row-major unless strided.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass slices sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    let mut cols = vec![0.0; g.c_in * kk * ho * wo];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * kk + ky * g.k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = c * g.h * g.w + iy as usize * g.w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * kk + ky * g.k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = c * g.h * g.w + iy as usize * g.w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(Var),
    Grl {
        x: Var,
        lambda: f64,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        n: usize,
        d_in: usize,
        d_out: usize,
    },
    RoiPool {
        x: Var,
        argmax: Vec<usize>,
    },
    WeightedBce {
        x: Var,
        idx: Vec<usize>,
        label: f64,
        weights: Vec<f64>,
    },
    SoftmaxCe {
        x: Var,
        classes: usize,
        rows: Vec<usize>,
        targets: Vec<usize>,
        scale: f64,
    },
    SmoothL1 {
        x: Var,
        idx: Vec<usize>,
        targets: Vec<f64>,
        beta: f64,
        scale: f64,
    },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Parameter leaves record their index in
/// the owning parameter store so gradients can be routed back after
/// [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter index, accumulated over every use.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn get(&self, pid: usize) -> Option<&[f64]> {
        self.grads.get(pid).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn input(&mut self, value: Vec<f64>, shape: Vec<usize>) -> Var {
        self.push(value, shape, Op::Input, false)
    }

    pub fn param(&mut self, pid: usize, value: &[f64], shape: &[usize]) -> Var {
        self.push(value.to_vec(), shape.to_vec(), Op::Param(pid), true)
    }

    /// Constant copy of `x`: no gradient flows through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (value, shape) = (n.value.clone(), n.shape.clone());
        self.input(value, shape)
    }

    /// `x: [c_in, h, w]`, `w: [c_out, c_in * k * k]`, `b: [c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let expect_x = geom.c_in * geom.h * geom.w;
        if self.nodes[x.0].value.len() != expect_x {
            return Err(Error::Shape(format!(
                "conv input has {} values, expected {}",
                self.nodes[x.0].value.len(),
                expect_x
            )));
        }
        let kdim = geom.c_in * geom.k * geom.k;
        if self.nodes[w.0].value.len() != geom.c_out * kdim
            || self.nodes[b.0].value.len() != geom.c_out
        {
            return Err(Error::Shape("conv weight/bias size mismatch".into()));
        }
        let (ho, wo) = geom.out_hw();
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            im2col(&self.nodes[x.0].value, &geom)
        };
        let mut out = vec![0.0; geom.c_out * ho * wo];
        for (o, bias) in self.nodes[b.0].value.iter().enumerate() {
            out[o * ho * wo..(o + 1) * ho * wo].fill(*bias);
        }
        {
            let colsref: &[f64] = if geom.is_pointwise() {
                &self.nodes[x.0].value
            } else {
                &cols
            };
            let wv = &self.nodes[w.0].value;
            gemm(
                geom.c_out,
                kdim,
                ho * wo,
                wv,
                (kdim as isize, 1),
                colsref,
                ((ho * wo) as isize, 1),
                1.0,
                &mut out,
            );
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            out,
            vec![geom.c_out, ho, wo],
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, shape, Op::Relu(x), rg)
    }

    /// Gradient reversal: identity forward, gradient scaled by `-lambda` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Var {
        let value = self.nodes[x.0].value.clone();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, shape, Op::Grl { x, lambda }, rg)
    }

    /// Inverted dropout with a precomputed `{0, 1/(1-p)}` mask.
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, shape, Op::Dropout { x, mask }, rg)
    }

    /// `x: [n, d_in]`, `w: [d_out, d_in]`, `b: [d_out]` -> `[n, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d_out = self.nodes[b.0].value.len();
        let wlen = self.nodes[w.0].value.len();
        if d_out == 0 || !wlen.is_multiple_of(d_out) {
            return Err(Error::Shape("linear weight/bias size mismatch".into()));
        }
        let d_in = wlen / d_out;
        let xlen = self.nodes[x.0].value.len();
        if !xlen.is_multiple_of(d_in) {
            return Err(Error::Shape(format!(
                "linear input of {xlen} values is not a multiple of {d_in}"
            )));
        }
        let n = xlen / d_in;
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(&self.nodes[b.0].value);
        }
        gemm(
            n,
            d_in,
            d_out,
            &self.nodes[x.0].value,
            (d_in as isize, 1),
            &self.nodes[w.0].value,
            (1, d_in as isize),
            1.0,
            &mut out,
        );
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            out,
            vec![n, d_out],
            Op::Linear {
                x,
                w,
                b,
                n,
                d_in,
                d_out,
            },
            rg,
        ))
    }

    /// ROI max pooling of `x: [c, u, v]` over precomputed bins. `bins[r][cell]`
    /// lists the flat spatial indices feeding output cell `cell` of ROI `r`.
    /// Output is `[rois, c * cells]`, channel-major per ROI.
    pub fn roi_pool(&mut self, x: Var, bins: &[Vec<Vec<usize>>]) -> Var {
        let shape = &self.nodes[x.0].shape;
        let (c, plane) = (shape[0], shape[1] * shape[2]);
        let cells = bins.first().map_or(0, |b| b.len());
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(bins.len() * c * cells);
        let mut argmax = Vec::with_capacity(bins.len() * c * cells);
        for roi in bins {
            for ch in 0..c {
                let base = ch * plane;
                for cell in roi {
                    let mut best = cell[0];
                    for &i in &cell[1..] {
                        if xv[base + i] > xv[base + best] {
                            best = i;
                        }
                    }
                    out.push(xv[base + best]);
                    argmax.push(base + best);
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(out, vec![bins.len(), c * cells], Op::RoiPool { x, argmax }, rg)
    }

    /// Mean weighted binary CE of `sigmoid(x[idx])` against a single label.
    /// Weights are constants.
    pub fn weighted_bce(&mut self, x: Var, idx: Vec<usize>, label: f64, weights: Vec<f64>) -> Var {
        assert_eq!(idx.len(), weights.len());
        let probs: Vec<f64> = idx
            .iter()
            .map(|&i| sigmoid(self.nodes[x.0].value[i]))
            .collect();
        let value = weighted_bce_mean(&probs, label, &weights);
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            vec![value],
            vec![1],
            Op::WeightedBce {
                x,
                idx,
                label,
                weights,
            },
            rg,
        )
    }

    /// `scale * sum_r CE(softmax(x[row_r]), target_r)` over the listed rows
    /// of `x: [n, classes]`.
    pub fn softmax_ce(
        &mut self,
        x: Var,
        classes: usize,
        rows: Vec<usize>,
        targets: Vec<usize>,
        scale: f64,
    ) -> Var {
        assert_eq!(rows.len(), targets.len());
        let xv = &self.nodes[x.0].value;
        let mut value = 0.0;
        for (&r, &t) in rows.iter().zip(&targets) {
            let p = softmax(&xv[r * classes..(r + 1) * classes]);
            value -= clamp_prob(p[t]).ln();
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            vec![value * scale],
            vec![1],
            Op::SoftmaxCe {
                x,
                classes,
                rows,
                targets,
                scale,
            },
            rg,
        )
    }

    /// `scale * sum_i smoothL1(x[idx_i] - target_i)`.
    pub fn smooth_l1(&mut self, x: Var, idx: Vec<usize>, targets: Vec<f64>, beta: f64, scale: f64) -> Var {
        assert_eq!(idx.len(), targets.len());
        let xv = &self.nodes[x.0].value;
        let value: f64 = idx
            .iter()
            .zip(&targets)
            .map(|(&i, &t)| smooth_l1(xv[i] - t, beta))
            .sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            vec![value * scale],
            vec![1],
            Op::SmoothL1 {
                x,
                idx,
                targets,
                beta,
                scale,
            },
            rg,
        )
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: Vec<Var>) -> Var {
        let value: f64 = terms.iter().map(|t| self.nodes[t.0].value[0]).sum();
        let rg = self.any_grad(&terms);
        self.push(vec![value], vec![1], Op::Sum(terms), rg)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Back-propagates from scalar `root` and returns gradients for the
    /// `n_params` parameter slots.
    pub fn backward(&self, root: Var, n_params: usize) -> ParamGrads {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut out = ParamGrads {
            grads: vec![None; n_params],
        };
        if !self.nodes[root.0].requires_grad {
            return out;
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => accumulate(&mut out.grads[*pid], &g),
                Op::Relu(x) => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<f64> = g
                            .iter()
                            .zip(&node.value)
                            .map(|(&gi, &y)| if y > 0.0 { gi } else { 0.0 })
                            .collect();
                        accumulate_into(&mut grads, x.0, d);
                    }
                }
                Op::Grl { x, lambda } => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<f64> = g.iter().map(|&gi| -lambda * gi).collect();
                        accumulate_into(&mut grads, x.0, d);
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                        accumulate_into(&mut grads, x.0, d);
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => self.conv_backward(&g, *x, *w, *b, geom, cols, &mut grads),
                Op::Linear {
                    x,
                    w,
                    b,
                    n,
                    d_in,
                    d_out,
                } => {
                    let (n, d_in, d_out) = (*n, *d_in, *d_out);
                    if self.nodes[x.0].requires_grad {
                        let mut dx = vec![0.0; n * d_in];
                        gemm(
                            n,
                            d_out,
                            d_in,
                            &g,
                            (d_out as isize, 1),
                            &self.nodes[w.0].value,
                            (d_in as isize, 1),
                            0.0,
                            &mut dx,
                        );
                        accumulate_into(&mut grads, x.0, dx);
                    }
                    if self.nodes[w.0].requires_grad {
                        let mut dw = vec![0.0; d_out * d_in];
                        gemm(
                            d_out,
                            n,
                            d_in,
                            &g,
                            (1, d_out as isize),
                            &self.nodes[x.0].value,
                            (d_in as isize, 1),
                            0.0,
                            &mut dw,
                        );
                        accumulate_into(&mut grads, w.0, dw);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![0.0; d_out];
                        for row in g.chunks_exact(d_out) {
                            for (a, v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        accumulate_into(&mut grads, b.0, db);
                    }
                }
                Op::RoiPool { x, argmax } => {
                    if self.nodes[x.0].requires_grad {
                        let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                        for (gi, &src) in g.iter().zip(argmax) {
                            dx[src] += gi;
                        }
                        accumulate_into(&mut grads, x.0, dx);
                    }
                }
                Op::WeightedBce {
                    x,
                    idx,
                    label,
                    weights,
                } => {
                    if self.nodes[x.0].requires_grad && !idx.is_empty() {
                        let xv = &self.nodes[x.0].value;
                        let mut dx = vec![0.0; xv.len()];
                        let scale = g[0] / idx.len() as f64;
                        for (&i, &w) in idx.iter().zip(weights) {
                            dx[i] += scale * w * (sigmoid(xv[i]) - label);
                        }
                        accumulate_into(&mut grads, x.0, dx);
                    }
                }
                Op::SoftmaxCe {
                    x,
                    classes,
                    rows,
                    targets,
                    scale,
                } => {
                    if self.nodes[x.0].requires_grad {
                        let xv = &self.nodes[x.0].value;
                        let mut dx = vec![0.0; xv.len()];
                        let k = *classes;
                        for (&r, &t) in rows.iter().zip(targets) {
                            let p = softmax(&xv[r * k..(r + 1) * k]);
                            for (j, pj) in p.iter().enumerate() {
                                let y = if j == t { 1.0 } else { 0.0 };
                                dx[r * k + j] += g[0] * scale * (pj - y);
                            }
                        }
                        accumulate_into(&mut grads, x.0, dx);
                    }
                }
                Op::SmoothL1 {
                    x,
                    idx,
                    targets,
                    beta,
                    scale,
                } => {
                    if self.nodes[x.0].requires_grad {
                        let xv = &self.nodes[x.0].value;
                        let mut dx = vec![0.0; xv.len()];
                        for (&i, &t) in idx.iter().zip(targets) {
                            dx[i] += g[0] * scale * smooth_l1_grad(xv[i] - t, *beta);
                        }
                        accumulate_into(&mut grads, x.0, dx);
                    }
                }
                Op::Sum(terms) => {
                    for t in terms {
                        if self.nodes[t.0].requires_grad {
                            accumulate_into(&mut grads, t.0, g.clone());
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        geom: &ConvGeom,
        cols: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (ho, wo) = geom.out_hw();
        let hw = ho * wo;
        let kdim = geom.c_in * geom.k * geom.k;
        if self.nodes[b.0].requires_grad {
            let db: Vec<f64> = g.chunks_exact(hw).map(|row| row.iter().sum()).collect();
            accumulate_into(grads, b.0, db);
        }
        let colsref: &[f64] = if geom.is_pointwise() {
            &self.nodes[x.0].value
        } else {
            cols
        };
        if self.nodes[w.0].requires_grad {
            let mut dw = vec![0.0; geom.c_out * kdim];
            gemm(
                geom.c_out,
                hw,
                kdim,
                g,
                (hw as isize, 1),
                colsref,
                (1, hw as isize),
                0.0,
                &mut dw,
            );
            accumulate_into(grads, w.0, dw);
        }
        if self.nodes[x.0].requires_grad {
            let mut dcols = vec![0.0; kdim * hw];
            gemm(
                kdim,
                geom.c_out,
                hw,
                &self.nodes[w.0].value,
                (1, kdim as isize),
                g,
                (hw as isize, 1),
                0.0,
                &mut dcols,
            );
            if geom.is_pointwise() {
                accumulate_into(grads, x.0, dcols);
            } else {
                let mut dx = vec![0.0; geom.c_in * geom.h * geom.w];
                col2im(&dcols, geom, &mut dx);
                accumulate_into(grads, x.0, dx);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_into(grads: &mut [Option<Vec<f64>>], i: usize, g: Vec<f64>) {
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
