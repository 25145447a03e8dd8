//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Leaves are
//! created with an explicit `requires_grad` flag, so frozen weights take
//! part in the computation (and pass gradients through to their inputs)
//! without ever receiving a gradient of their own.

mod conv;

use crate::tensor::Tensor;
use conv::{col2im, conv_out_size, conv_transpose_out_size, gemm, im2col, Geometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fused operation whose forward value is computed by the caller.
pub trait CustomOp {
    /// Gradients for each input given the upstream gradient. Entries for
    /// inputs with `needs[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: Geometry,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: Geometry,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    NarrowChannels {
        x: Var,
        start: usize,
    },
    Crop(Var),
    ReflectPad(Var),
    LowerBound {
        x: Var,
        bound: f64,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// 2-D convolution. `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`, `b: [cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let (cout, wcin, k, k2) = self.value(w).dims4();
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert_eq!(k, k2);
        assert_eq!(self.value(b).len(), cout);
        let geom = Geometry {
            channels: cin,
            img_h: h,
            img_w: wd,
            grid_h: conv_out_size(h, k, stride, pad),
            grid_w: conv_out_size(wd, k, stride, pad),
            kernel: k,
            stride,
            pad,
        };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let mut cols = vec![0.0; n * rows * ncols];
        let mut out = vec![0.0; n * cout * ncols];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let in_per = cin * h * wd;
        for i in 0..n {
            let c = &mut cols[i * rows * ncols..(i + 1) * rows * ncols];
            im2col(&xv[i * in_per..(i + 1) * in_per], &geom, c);
            let o = &mut out[i * cout * ncols..(i + 1) * cout * ncols];
            for (oc, plane) in o.chunks_mut(ncols).enumerate() {
                plane.fill(bv[oc]);
            }
            gemm(cout, rows, ncols, wv, false, c, false, 1.0, o);
        }
        let value = Tensor::from_vec(&[n, cout, geom.grid_h, geom.grid_w], out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        // Only the weight gradient needs the unfolded input.
        let cols = if self.rg(w) { cols } else { Vec::new() };
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        )
    }

    /// Transposed 2-D convolution. `x: [n, cin, h, w]`, `w: [cin, cout, k, k]`, `b: [cout]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let (wcin, cout, k, _) = self.value(w).dims4();
        assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
        assert!(out_pad < stride);
        let oh = conv_transpose_out_size(h, k, stride, pad, out_pad);
        let ow = conv_transpose_out_size(wd, k, stride, pad, out_pad);
        let geom = Geometry {
            channels: cout,
            img_h: oh,
            img_w: ow,
            grid_h: h,
            grid_w: wd,
            kernel: k,
            stride,
            pad,
        };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let out_per = cout * oh * ow;
        let mut out = vec![0.0; n * out_per];
        let mut cols = vec![0.0; rows * ncols];
        for i in 0..n {
            let xi = &xv[i * cin * ncols..(i + 1) * cin * ncols];
            gemm(rows, cin, ncols, wv, true, xi, false, 0.0, &mut cols);
            let o = &mut out[i * out_per..(i + 1) * out_per];
            for (oc, plane) in o.chunks_mut(oh * ow).enumerate() {
                plane.fill(bv[oc]);
            }
            col2im(&cols, &geom, o);
        }
        let value = Tensor::from_vec(&[n, cout, oh, ow], out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c);
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for i in 0..n {
            let base = (i * c + start) * plane;
            out.extend_from_slice(&src[base..base + len * plane]);
        }
        let value = Tensor::from_vec(&[n, len, h, w], out);
        let rg = self.rg(x);
        self.push(value, Op::NarrowChannels { x, start }, rg)
    }

    /// Keep the top-left `h x w` window of every plane.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, c, xh, xw) = self.value(x).dims4();
        assert!(h <= xh && w <= xw, "crop {h}x{w} larger than {xh}x{xw}");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for r in 0..h {
                let base = p * xh * xw + r * xw;
                out.extend_from_slice(&src[base..base + w]);
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out);
        let rg = self.rg(x);
        self.push(value, Op::Crop(x), rg)
    }

    /// Extend every plane to `h x w` by mirroring about the last row/column
    /// (edge sample not repeated).
    pub fn reflect_pad(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, c, xh, xw) = self.value(x).dims4();
        assert!(h >= xh && w >= xw);
        assert!(h - xh < xh && w - xw < xw, "reflection pad wider than input");
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * h * w];
        for p in 0..n * c {
            for r in 0..h {
                let sr = reflect_index(r, xh);
                for col in 0..w {
                    out[p * h * w + r * w + col] = src[p * xh * xw + sr * xw + reflect_index(col, xw)];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out);
        let rg = self.rg(x);
        self.push(value, Op::ReflectPad(x), rg)
    }

    /// `max(x, bound)` whose gradient still passes below the bound when it
    /// points upwards, so values stuck at the bound can recover.
    pub fn lower_bound(&mut self, x: Var, bound: f64) -> Var {
        let value = self.value(x).map(|v| v.max(bound));
        let rg = self.rg(x);
        self.push(value, Op::LowerBound { x, bound }, rg)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            self.propagate(node, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (n, cout, _, _) = node.value.dims4();
                let (rows, ncols) = (geom.rows(), geom.cols());
                let gv = grad.data();
                if self.rg(*b) {
                    self.accumulate(grads, *b, bias_grad(gv, n, cout, ncols));
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; cout * rows];
                    for i in 0..n {
                        let go = &gv[i * cout * ncols..(i + 1) * cout * ncols];
                        let c = &cols[i * rows * ncols..(i + 1) * rows * ncols];
                        gemm(cout, ncols, rows, go, false, c, true, 1.0, &mut gw);
                    }
                    self.accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), gw));
                }
                if self.rg(*x) {
                    let wv = self.value(*w).data();
                    let in_per = geom.channels * geom.img_h * geom.img_w;
                    let mut gx = vec![0.0; n * in_per];
                    let mut dcols = vec![0.0; rows * ncols];
                    for i in 0..n {
                        let go = &gv[i * cout * ncols..(i + 1) * cout * ncols];
                        gemm(rows, cout, ncols, wv, true, go, false, 0.0, &mut dcols);
                        col2im(&dcols, geom, &mut gx[i * in_per..(i + 1) * in_per]);
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), gx));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (n, cout, oh, ow) = node.value.dims4();
                let cin = self.value(*x).shape()[1];
                let (rows, ncols) = (geom.rows(), geom.cols());
                let gv = grad.data();
                if self.rg(*b) {
                    self.accumulate(grads, *b, bias_grad(gv, n, cout, oh * ow));
                }
                if !self.rg(*w) && !self.rg(*x) {
                    return;
                }
                let out_per = cout * oh * ow;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dcols = vec![0.0; rows * ncols];
                let mut gw = vec![0.0; if self.rg(*w) { cin * rows } else { 0 }];
                let mut gx = vec![0.0; if self.rg(*x) { n * cin * ncols } else { 0 }];
                for i in 0..n {
                    im2col(&gv[i * out_per..(i + 1) * out_per], geom, &mut dcols);
                    if self.rg(*w) {
                        let xi = &xv[i * cin * ncols..(i + 1) * cin * ncols];
                        gemm(cin, ncols, rows, xi, false, &dcols, true, 1.0, &mut gw);
                    }
                    if self.rg(*x) {
                        let gxi = &mut gx[i * cin * ncols..(i + 1) * cin * ncols];
                        gemm(cin, rows, ncols, wv, false, &dcols, false, 0.0, gxi);
                    }
                }
                if self.rg(*w) {
                    self.accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), gw));
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), gx));
                }
            }
            Op::Relu(x) => {
                let g = grad.zip_map(&node.value, |g, y| if y > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, grad.clone());
                self.accumulate(grads, *b, grad.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, grad.clone());
                self.accumulate(grads, *b, grad.map(|g| -g));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, grad.zip_map(self.value(*b), |g, q| g * q));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, grad.zip_map(self.value(*a), |g, p| g * p));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, grad.map(|g| g * s));
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, grad.zip_map(self.value(*a), |g, p| 2.0 * g * p));
            }
            Op::Sum(a) => {
                let g = grad.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }
            Op::NarrowChannels { x, start } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut g = Tensor::zeros(&[n, c, h, w]);
                let gd = g.data_mut();
                for i in 0..n {
                    let dst = (i * c + start) * plane;
                    let src = i * len * plane;
                    gd[dst..dst + len * plane].copy_from_slice(&grad.data()[src..src + len * plane]);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Crop(x) => {
                let (n, c, xh, xw) = self.value(*x).dims4();
                let (_, _, h, w) = node.value.dims4();
                let mut g = Tensor::zeros(&[n, c, xh, xw]);
                let gd = g.data_mut();
                for p in 0..n * c {
                    for r in 0..h {
                        let dst = p * xh * xw + r * xw;
                        let src = (p * h + r) * w;
                        gd[dst..dst + w].copy_from_slice(&grad.data()[src..src + w]);
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::ReflectPad(x) => {
                let (n, c, xh, xw) = self.value(*x).dims4();
                let (_, _, h, w) = node.value.dims4();
                let mut g = Tensor::zeros(&[n, c, xh, xw]);
                let gd = g.data_mut();
                for p in 0..n * c {
                    for r in 0..h {
                        let sr = reflect_index(r, xh);
                        for col in 0..w {
                            gd[p * xh * xw + sr * xw + reflect_index(col, xw)] +=
                                grad.data()[p * h * w + r * w + col];
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::LowerBound { x, bound } => {
                let bound = *bound;
                let g = grad.zip_map(self.value(*x), |g, v| {
                    if v >= bound || g < 0.0 {
                        g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, g);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let gs = op.backward(&values, &node.value, grad, &needs);
                for (&v, g) in inputs.iter().zip(gs) {
                    if let Some(g) = g {
                        self.accumulate(grads, v, g);
                    }
                }
            }
        }
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

fn bias_grad(g: &[f64], n: usize, c: usize, plane: usize) -> Tensor {
    let mut out = vec![0.0; c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (i * c + ch) * plane;
            *o += g[base..base + plane].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(loss)/d(leaf) for every element of `leaf_index`.
    fn check_grad(
        leaves: &[Tensor],
        leaf_index: usize,
        f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    ) {
        let run = |ls: &[Tensor]| -> (f64, Option<Tensor>) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ls.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let loss = f(&mut g, &vars);
            let grads = g.backward(loss);
            (g.value(loss).item(), grads.get(vars[leaf_index]).cloned())
        };
        let (_, analytic) = run(leaves);
        let analytic = analytic.expect("no gradient");
        let eps = 1e-6;
        for i in 0..leaves[leaf_index].len() {
            let mut plus = leaves.to_vec();
            plus[leaf_index].data_mut()[i] += eps;
            let mut minus = leaves.to_vec();
            minus[leaf_index].data_mut()[i] -= eps;
            let numeric = (run(&plus).0 - run(&minus).0) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![
            rand_tensor(&mut rng, &[2, 2, 7, 6]),
            rand_tensor(&mut rng, &[3, 2, 5, 5]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[2, 3, 4, 3]),
        ];
        let f = |g: &mut Graph, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 2);
            let p = g.mul(y, v[3]);
            g.sum(p)
        };
        for i in 0..3 {
            check_grad(&leaves, i, &f);
        }
    }

    #[test]
    fn conv_transpose2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = vec![
            rand_tensor(&mut rng, &[2, 3, 3, 4]),
            rand_tensor(&mut rng, &[3, 2, 5, 5]),
            rand_tensor(&mut rng, &[2]),
            rand_tensor(&mut rng, &[2, 2, 6, 8]),
        ];
        let f = |g: &mut Graph, v: &[Var]| {
            let y = g.conv_transpose2d(v[0], v[1], v[2], 2, 2, 1);
            let p = g.mul(y, v[3]);
            g.sum(p)
        };
        for i in 0..3 {
            check_grad(&leaves, i, &f);
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for shared weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[1, 2, 8, 8]);
        let w = rand_tensor(&mut rng, &[3, 2, 5, 5]);
        let y = rand_tensor(&mut rng, &[1, 3, 4, 4]);
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(w), g.constant(y.clone()));
        let b3 = g.constant(Tensor::zeros(&[3]));
        let b2 = g.constant(Tensor::zeros(&[2]));
        let cx = g.conv2d(xv, wv, b3, 2, 2);
        let ty = g.conv_transpose2d(yv, wv, b2, 2, 2, 1);
        let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(ty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn elementwise_and_shape_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let leaves = vec![
            rand_tensor(&mut rng, &[1, 4, 5, 5]),
            rand_tensor(&mut rng, &[1, 2, 7, 7]),
        ];
        let f = |g: &mut Graph, v: &[Var]| {
            let a = g.relu(v[0]);
            let b = g.narrow_channels(a, 1, 2);
            let p = g.reflect_pad(b, 7, 7);
            let q = g.sub(p, v[1]);
            let s = g.square(q);
            let c = g.crop(s, 6, 5);
            let m = g.mean(c);
            let t = g.scale(m, 3.0);
            let lb = g.lower_bound(v[0], 0.2);
            let u = g.sum(lb);
            g.add(t, u)
        };
        check_grad(&leaves, 0, &f);
        check_grad(&leaves, 1, &f);
    }

    #[test]
    fn frozen_leaves_pass_gradient_but_receive_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&mut rng, &[1, 1, 4, 4]), true);
        let w = g.leaf(rand_tensor(&mut rng, &[1, 1, 3, 3]), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        let y = g.conv2d(x, w, b, 1, 1);
        let l = g.sum(y);
        let grads = g.backward(l);
        assert!(grads.get(x).is_some());
        assert!(grads.get(w).is_none());
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn lower_bound_lets_upward_gradient_through() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![-1.0, -1.0]), true);
        let lb = g.lower_bound(x, 0.5);
        let w = g.constant(Tensor::from_vec(&[2], vec![-1.0, 1.0]));
        let p = g.mul(lb, w);
        let l = g.sum(p);
        let grads = g.backward(l);
        // d/dx of -x passes (pushes x up), d/dx of +x is blocked.
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 0.0]);
    }
}
