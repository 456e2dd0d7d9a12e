//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass in execution order,
//! which is a topological order by construction. [`Tape::backward`] walks the
//! record in reverse once; afterwards the tape is consumed until
//! [`Tape::reset`].

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        /// im2col buffers per batch element; empty for 1×1 kernels.
        cols: Vec<T>,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    InstanceNorm {
        input: Var,
        /// `1 / sqrt(var + eps)` per (sample, channel) plane.
        inv_std: Vec<f64>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    /// Clears all recorded operations and gradients.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>, name: &'static str) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push(value, requires_grad, Op::Leaf, "leaf")
    }

    /// Same-padded, stride-1 2D cross-correlation.
    ///
    /// `input` is N×Cin×H×W, `weight` Cout×Cin×kh×kw with odd kernel sides,
    /// `bias` has Cout elements.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, cin, h, w) = x.dims4("conv2d")?;
        let (cout, wcin, kh, kw) = wt.dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {wcin} input channels, input has {cin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}×{kw} must have odd sides"),
            ));
        }
        let b = self.value(bias);
        if b.numel() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} elements, expected {cout}", b.numel()),
            ));
        }

        let hw = h * w;
        let k = cin * kh * kw;
        let pointwise = kh == 1 && kw == 1;
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::ZERO; n * k * hw]
        };
        let mut out = vec![T::ZERO; n * cout * hw];
        for bi in 0..n {
            let plane = &x.data()[bi * cin * hw..(bi + 1) * cin * hw];
            let o = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            for (co, row) in o.chunks_exact_mut(hw).enumerate() {
                row.fill(b.data()[co]);
            }
            let src: &[T] = if pointwise {
                plane
            } else {
                let c = &mut cols[bi * k * hw..(bi + 1) * k * hw];
                im2col(plane, cin, h, w, kh, kw, c);
                c
            };
            T::gemm(
                cout, k, hw, T::ONE, wt.data(), k as isize, 1, src, hw as isize, 1, T::ONE, o,
                hw as isize, 1,
            );
        }
        let rg = self.requires_grad(input) || self.requires_grad(weight) || self.requires_grad(bias);
        let value = Tensor::new(vec![n, cout, h, w], out)?;
        self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            },
            "conv2d",
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self
            .value(input)
            .map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Relu(input), "relu")
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2",
                format!("spatial size {h}×{w} must be even"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let xd = x.data();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, rg, Op::MaxPool2 { input, argmax }, "maxpool2")
    }

    /// Bilinear 2× upsampling with half-pixel centers (no corner alignment).
    pub fn upsample_bilinear2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("upsample_bilinear2")?;
        if h == 0 || w == 0 {
            return Err(Error::shape("upsample_bilinear2", "empty spatial size"));
        }
        let ry = bilinear_taps(h);
        let rx = bilinear_taps(w);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let xd = x.data();
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
                let fy = T::from_f64(fy);
                let gy = T::ONE - fy;
                for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                    let fx = T::from_f64(fx);
                    let gx = T::ONE - fx;
                    dst[oy * ow + ox] = gy * (gx * src[y0 * w + x0] + fx * src[y0 * w + x1])
                        + fy * (gx * src[y1 * w + x0] + fx * src[y1 * w + x1]);
                }
            }
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, rg, Op::Upsample2(input), "upsample_bilinear2")
    }

    /// Channel-wise concatenation: `a` fills channels `[0, Ca)`, `b` the rest.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, ca, h, w) = ta.dims4("concat_channels")?;
        let (nb, cb, hb, wb) = tb.dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for bi in 0..n {
            out.extend_from_slice(&ta.data()[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        self.push(value, rg, Op::Concat(a, b), "concat_channels")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, rg, Op::Add(a, b), "add")
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Scale(input, factor), "scale")
    }

    /// Per-sample, per-channel normalization to zero mean and unit
    /// (biased) variance over the spatial plane, without affine parameters.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("instance_norm")?;
        let hw = h * w;
        let mut out = vec![T::ZERO; x.numel()];
        let mut inv_std = Vec::with_capacity(n * c);
        for (plane, dst) in x.data().chunks_exact(hw).zip(out.chunks_exact_mut(hw)) {
            let mean = plane.iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (d, v) in dst.iter_mut().zip(plane) {
                *d = T::from_f64((v.to_f64() - mean) * inv);
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::InstanceNorm { input, inv_std }, "instance_norm")
    }

    /// Mean absolute error. `target` must not require gradients.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::shape(
                "l1_loss",
                format!("{:?} vs {:?}", tp.shape(), tt.shape()),
            ));
        }
        if self.requires_grad(target) {
            return Err(Error::InvalidArgument(
                "l1_loss target must not require gradients".into(),
            ));
        }
        let sum: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&p, &t)| (p - t).abs().to_f64())
            .sum();
        let mean = sum / tp.numel().max(1) as f64;
        let rg = self.requires_grad(pred);
        self.push(Tensor::scalar(T::from_f64(mean)), rg, Op::L1 { pred, target }, "l1_loss")
    }

    /// Reverse pass from a scalar `loss`. Gradients of every node that
    /// requires them are retrievable through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, T::ONE));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    accumulate(&mut grads, &self.nodes, *x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &self.nodes, *a, g.clone());
                    accumulate(&mut grads, &self.nodes, *b, g.clone());
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, &self.nodes, *x, g.map(|v| v * *factor));
                }
                Op::InstanceNorm { input, inv_std } => {
                    let y = &node.value;
                    let hw = y.shape()[2] * y.shape()[3];
                    let mut d = vec![T::ZERO; y.numel()];
                    let planes = y.data().chunks_exact(hw).zip(g.data().chunks_exact(hw));
                    for (((yp, gp), dp), &inv) in planes.zip(d.chunks_exact_mut(hw)).zip(inv_std) {
                        let gm = gp.iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64;
                        let gy = gp
                            .iter()
                            .zip(yp)
                            .map(|(a, b)| a.to_f64() * b.to_f64())
                            .sum::<f64>()
                            / hw as f64;
                        for ((dv, gv), yv) in dp.iter_mut().zip(gp).zip(yp) {
                            *dv = T::from_f64(inv * (gv.to_f64() - gm - yv.to_f64() * gy));
                        }
                    }
                    accumulate(&mut grads, &self.nodes, *input, Tensor::new(y.shape().to_vec(), d)?);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    accumulate(&mut grads, &self.nodes, *a, g.channels(0, ca)?);
                    accumulate(&mut grads, &self.nodes, *b, g.channels(ca, ca + cb)?);
                }
                Op::MaxPool2 { input, argmax } => {
                    let shape = self.value(*input).shape().to_vec();
                    let mut d = Tensor::zeros(&shape);
                    let dd = d.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dd[src as usize] += gv;
                    }
                    accumulate(&mut grads, &self.nodes, *input, d);
                }
                Op::Upsample2(input) => {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, &self.nodes, *input, upsample_backward(&shape, &g));
                }
                Op::L1 { pred, target } => {
                    let (tp, tt) = (self.value(*pred), self.value(*target));
                    let scale = g.data()[0] / T::from_f64(tp.numel() as f64);
                    let d = tp
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&p, &t)| {
                            if p > t {
                                scale
                            } else if p < t {
                                -scale
                            } else {
                                T::ZERO
                            }
                        })
                        .collect();
                    accumulate(&mut grads, &self.nodes, *pred, Tensor::new(tp.shape().to_vec(), d)?);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    cols,
                } => {
                    let (gi, gw, gb) = self.conv2d_backward(*input, *weight, cols, &g)?;
                    if let Some(gi) = gi {
                        accumulate(&mut grads, &self.nodes, *input, gi);
                    }
                    if self.nodes[weight.0].requires_grad {
                        accumulate(&mut grads, &self.nodes, *weight, gw);
                    }
                    if self.nodes[bias.0].requires_grad {
                        accumulate(&mut grads, &self.nodes, *bias, gb);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        self.grads = grads;
        Ok(())
    }

    fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        cols: &[T],
        g: &Tensor<T>,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, cin, h, w) = x.dims4("conv2d")?;
        let (cout, _, kh, kw) = wt.dims4("conv2d")?;
        let hw = h * w;
        let k = cin * kh * kw;
        let pointwise = cols.is_empty();

        let mut gw = Tensor::zeros(wt.shape());
        let mut gb = Tensor::zeros(&[cout]);
        let need_input = self.nodes[input.0].requires_grad;
        let mut gi = need_input.then(|| Tensor::zeros(x.shape()));
        let mut gcols = if need_input && !pointwise {
            vec![T::ZERO; k * hw]
        } else {
            Vec::new()
        };

        for bi in 0..n {
            let go = &g.data()[bi * cout * hw..(bi + 1) * cout * hw];
            for (co, row) in go.chunks_exact(hw).enumerate() {
                let s: f64 = row.iter().map(|v| v.to_f64()).sum();
                gb.data_mut()[co] += T::from_f64(s);
            }
            let src: &[T] = if pointwise {
                &x.data()[bi * cin * hw..(bi + 1) * cin * hw]
            } else {
                &cols[bi * k * hw..(bi + 1) * k * hw]
            };
            // dW += dOut · colsᵀ
            T::gemm(
                cout, hw, k, T::ONE, go, hw as isize, 1, src, 1, hw as isize, T::ONE,
                gw.data_mut(), k as isize, 1,
            );
            if let Some(gi) = gi.as_mut() {
                let dst = &mut gi.data_mut()[bi * cin * hw..(bi + 1) * cin * hw];
                if pointwise {
                    T::gemm(
                        k, cout, hw, T::ONE, wt.data(), 1, k as isize, go, hw as isize, 1,
                        T::ONE, dst, hw as isize, 1,
                    );
                } else {
                    T::gemm(
                        k, cout, hw, T::ONE, wt.data(), 1, k as isize, go, hw as isize, 1,
                        T::ZERO, &mut gcols, hw as isize, 1,
                    );
                    col2im(&gcols, cin, h, w, kh, kw, dst);
                }
            }
        }
        Ok((gi, gw, gb))
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var, g: Tensor<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let row = &mut cols[r * hw..(r + 1) * hw];
                let dx = kx as isize - pw;
                // valid destination columns: 0 <= x + dx < w
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x_lo].fill(T::ZERO);
                    dst[x_hi..].fill(T::ZERO);
                    let s0 = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&srow[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, kh: usize, kw: usize, dx_out: &mut [T]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let row = &cols[r * hw..(r + 1) * hw];
                let dx = kx as isize - pw;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    let s0 = sy as usize * w + (x_lo as isize + dx) as usize;
                    for (d, &s) in plane[s0..s0 + src.len()].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// For each output index of a 2× upsampled axis: `(i0, i1, frac)` so that the
/// output is `(1 - frac) * in[i0] + frac * in[i1]`.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let ry = bilinear_taps(h);
    let rx = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut d = Tensor::zeros(shape);
    let dd = d.data_mut();
    for p in 0..n * c {
        let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dd[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
            let fy = T::from_f64(fy);
            let gy = T::ONE - fy;
            for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let gx = T::ONE - fx;
                let v = src[oy * ow + ox];
                dst[y0 * w + x0] += gy * gx * v;
                dst[y0 * w + x1] += gy * fx * v;
                dst[y1 * w + x0] += fy * gx * v;
                dst[y1 * w + x1] += fy * fx * v;
            }
        }
    }
    d
}
