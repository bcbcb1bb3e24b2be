//! Differentiable primitives recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::{axis_split, Scalar, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn gaussian_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x / T::from_f64(SQRT_2)).erf())
}

#[inline]
fn gaussian_pdf<T: Scalar>(x: T) -> T {
    T::from_f64(INV_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * gaussian_cdf(x)
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<'_, T> {
    /// Leaf that is not a parameter but still receives a node gradient.
    pub fn tracked_input(&mut self, t: Tensor<T>) -> Var {
        let v = self.input(t);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Constant leaf with the given shape and values.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let op = if trans_b { "matmul_t" } else { "matmul" };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim(op, sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::dim(op, sa, sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        if trans_b {
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bv[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc += ar[p] * br[p];
                    }
                    out[i * n + j] = acc;
                }
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = av[i * k + p];
                    let br = &bv[p * n..(p + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * br[j];
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(name, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(sa.to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Multiply by a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        let c = self.constant(c);
        self.mul(x, c)
    }

    /// Add a vector `b: [n]` to every last-axis slice of `x: [..., n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let n = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != n {
            return Err(Error::dim("add_row", sx, sb));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, &bb) in chunk.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean over `axis`; the axis is removed from the shape (rank-1 results stay rank 1).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("mean_axis", &s, &[axis]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let xv = self.value(x).data();
        let inv = T::one() / T::from_f64(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut shape: Vec<usize> = s.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanAxis { x, axis }))
    }

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("softmax", &s, &[axis]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..n {
                    mx = mx.max(xv[idx(a)]);
                }
                let mut total = T::zero();
                for a in 0..n {
                    let e = (xv[idx(a)] - mx).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..n {
                    out[idx(a)] = out[idx(a)] / total;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax { x, axis }))
    }

    /// Exact (erf-based) Gaussian error linear unit.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu_scalar);
        self.push(t, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        self.push(t, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid_scalar);
        self.push(t, Op::Sigmoid(x))
    }

    /// Normalise every last-axis slice to zero mean and unit variance, then
    /// apply the affine `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().unwrap();
        for p in [gamma, beta] {
            let sp = self.shape(p);
            if sp.len() != 1 || sp[0] != n {
                return Err(Error::dim("layer_norm", &s, sp));
            }
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / n;
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(eps);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = gv[j] * h + bv[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(s, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::contract("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let pv = self.value(p).data();
                out.extend_from_slice(&pv[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::dim("slice", &s, &[axis, start, len]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }))
    }

    /// Row `i` of a matrix as a vector `[cols]`.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let cols = self.shape(x)[1..].iter().product::<usize>();
        let r = self.slice(x, 0, i, 1)?;
        self.reshape(r, [cols])
    }

    /// Direct 3D convolution of `x: [C×T×H×W]` with `w: [O×C×kT×kH×kW]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 5 || sx[0] != sw[1] {
            return Err(Error::dim("conv3d", &sx, &sw));
        }
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb.len() != 1 || sb[0] != sw[0] {
                return Err(Error::dim("conv3d bias", &sw, sb));
            }
        }
        let out_dims = conv_out_dims(&sx[1..], &sw[2..], stride, pad)
            .ok_or_else(|| Error::dim("conv3d geometry", &sx, &sw))?;
        let g = ConvGeom::new(&sx, &sw, out_dims, stride, pad);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); g.out_numel()];
        for o in 0..g.o {
            let b0 = bias.map_or(T::zero(), |b| b[o]);
            for ot in 0..g.ot {
                for oh in 0..g.oh {
                    for ow in 0..g.ow {
                        let mut acc = b0;
                        g.for_each_tap(ot, oh, ow, |c, widx_tail, xidx| {
                            acc += wv[(o * g.c + c) * g.ksz + widx_tail] * xv[xidx];
                        });
                        out[((o * g.ot + ot) * g.oh + oh) * g.ow + ow] = acc;
                    }
                }
            }
        }
        let shape = vec![g.o, g.ot, g.oh, g.ow];
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv3d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Softmax cross-entropy `-log softmax(logits)[label]` as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits).data();
        let n = lv.len();
        if label >= n {
            return Err(Error::contract(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        let mx = lv.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = lv.iter().map(|&v| (v - mx).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() + mx - lv[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }
}

/// Output extents `floor((L + 2p - k) / s) + 1` per axis, or `None` if the kernel does not fit.
pub fn conv_out_dims(
    input: &[usize],
    kernel: &[usize],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * pad[a];
        if stride[a] == 0 || kernel[a] == 0 || padded < kernel[a] {
            return None;
        }
        out[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    Some(out)
}

struct ConvGeom {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    o: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    ksz: usize,
    ot: usize,
    oh: usize,
    ow: usize,
    stride: [usize; 3],
    pad: [usize; 3],
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], out: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self {
            c: sx[0],
            t: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kt: sw[2],
            kh: sw[3],
            kw: sw[4],
            ksz: sw[2] * sw[3] * sw[4],
            ot: out[0],
            oh: out[1],
            ow: out[2],
            stride,
            pad,
        }
    }

    fn out_numel(&self) -> usize {
        self.o * self.ot * self.oh * self.ow
    }

    /// Visit every in-bounds kernel tap for one output position as
    /// `(in_channel, kernel_offset, input_index)`.
    #[inline]
    fn for_each_tap(&self, ot: usize, oh: usize, ow: usize, mut f: impl FnMut(usize, usize, usize)) {
        for dt in 0..self.kt {
            let it = (ot * self.stride[0] + dt) as isize - self.pad[0] as isize;
            if it < 0 || it as usize >= self.t {
                continue;
            }
            for dh in 0..self.kh {
                let ih = (oh * self.stride[1] + dh) as isize - self.pad[1] as isize;
                if ih < 0 || ih as usize >= self.h {
                    continue;
                }
                for dw in 0..self.kw {
                    let iw = (ow * self.stride[2] + dw) as isize - self.pad[2] as isize;
                    if iw < 0 || iw as usize >= self.w {
                        continue;
                    }
                    let tail = (dt * self.kh + dh) * self.kw + dw;
                    let spatial = (it as usize * self.h + ih as usize) * self.w + iw as usize;
                    for c in 0..self.c {
                        f(c, tail, c * self.t * self.h * self.w + spatial);
                    }
                }
            }
        }
    }
}

/// Propagate the output gradient `g` of node `out` into its parents.
pub(crate) fn backprop<T: Scalar>(sink: &mut GradSink<'_, '_, T>, out: Var, op: &Op<T>, g: &Tensor<T>) {
    let gd = g.data();
    let gr = sink.graph;
    match op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul { a, b, trans_b } => {
            let sa = gr.value(*a).shape().to_vec();
            let (m, k) = (sa[0], sa[1]);
            let n = g.shape()[1];
            let bv = gr.value(*b).data();
            if let Some(da) = sink.slot(*a) {
                let da = da.data_mut();
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == T::zero() {
                            continue;
                        }
                        for p in 0..k {
                            let bjp = if *trans_b { bv[j * k + p] } else { bv[p * n + j] };
                            da[i * k + p] += gij * bjp;
                        }
                    }
                }
            }
            let av = gr.value(*a).data();
            if let Some(db) = sink.slot(*b) {
                let db = db.data_mut();
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == T::zero() {
                            continue;
                        }
                        for p in 0..k {
                            let idx = if *trans_b { j * k + p } else { p * n + j };
                            db[idx] += av[i * k + p] * gij;
                        }
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (g.shape()[1], g.shape()[0]);
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += gd[j * r + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = sink.slot(*a) {
                da.add_assign(g);
            }
            if let Some(db) = sink.slot(*b) {
                db.add_assign(g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = sink.slot(*a) {
                da.add_assign(g);
            }
            if let Some(db) = sink.slot(*b) {
                for (d, &v) in db.data_mut().iter_mut().zip(gd) {
                    *d -= v;
                }
            }
        }
        Op::Mul(a, b) => {
            let bv = gr.value(*b).data();
            if let Some(da) = sink.slot(*a) {
                for ((d, &gv), &bb) in da.data_mut().iter_mut().zip(gd).zip(bv) {
                    *d += gv * bb;
                }
            }
            let av = gr.value(*a).data();
            if let Some(db) = sink.slot(*b) {
                for ((d, &gv), &aa) in db.data_mut().iter_mut().zip(gd).zip(av) {
                    *d += gv * aa;
                }
            }
        }
        Op::AddRow(x, b) => {
            if let Some(dx) = sink.slot(*x) {
                dx.add_assign(g);
            }
            if let Some(db) = sink.slot(*b) {
                let n = db.numel();
                let db = db.data_mut();
                for chunk in gd.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(dx) = sink.slot(*x) {
                for (d, &v) in dx.data_mut().iter_mut().zip(gd) {
                    *d += *c * v;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = sink.slot(*x) {
                for d in dx.data_mut() {
                    *d += gd[0];
                }
            }
        }
        Op::MeanAxis { x, axis } => {
            let s = gr.value(*x).shape().to_vec();
            let (outer, n, inner) = axis_split(&s, *axis);
            let inv = T::one() / T::from_f64(n as f64);
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            dx[(o * n + a) * inner + i] += gd[o * inner + i] * inv;
                        }
                    }
                }
            }
        }
        Op::Softmax { x, axis } => {
            let y = gr.value(out).data();
            let s = g.shape().to_vec();
            let (outer, n, inner) = axis_split(&s, *axis);
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + i;
                        let dot: T = (0..n).map(|a| gd[idx(a)] * y[idx(a)]).sum();
                        for a in 0..n {
                            dx[idx(a)] += y[idx(a)] * (gd[idx(a)] - dot);
                        }
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xv = gr.value(*x).data();
            if let Some(dx) = sink.slot(*x) {
                for ((d, &gv), &xx) in dx.data_mut().iter_mut().zip(gd).zip(xv) {
                    *d += gv * (gaussian_cdf(xx) + xx * gaussian_pdf(xx));
                }
            }
        }
        Op::Tanh(x) => {
            let y = gr.value(out).data();
            if let Some(dx) = sink.slot(*x) {
                for ((d, &gv), &yy) in dx.data_mut().iter_mut().zip(gd).zip(y) {
                    *d += gv * (T::one() - yy * yy);
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = gr.value(out).data();
            if let Some(dx) = sink.slot(*x) {
                for ((d, &gv), &yy) in dx.data_mut().iter_mut().zip(gd).zip(y) {
                    *d += gv * yy * (T::one() - yy);
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let n = gr.value(*gamma).numel();
            let gam = gr.value(*gamma).data();
            if let Some(db) = sink.slot(*beta) {
                let db = db.data_mut();
                for chunk in gd.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
            }
            if let Some(dg) = sink.slot(*gamma) {
                let dg = dg.data_mut();
                for (chunk, hrow) in gd.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        dg[j] += chunk[j] * hrow[j];
                    }
                }
            }
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                let nf = T::from_f64(n as f64);
                for (r, (chunk, hrow)) in gd.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..n {
                        let dh = chunk[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                    }
                    mean_dh = mean_dh / nf;
                    mean_dh_h = mean_dh_h / nf;
                    for j in 0..n {
                        let dh = chunk[j] * gam[j];
                        dx[r * n + j] += inv_std[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = sink.slot(*x) {
                for (d, &v) in dx.data_mut().iter_mut().zip(gd) {
                    *d += v;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let s = g.shape().to_vec();
            let (outer, total, inner) = axis_split(&s, *axis);
            let mut offset = 0;
            for &p in parts {
                let n = gr.value(p).shape()[*axis];
                if let Some(dp) = sink.slot(p) {
                    let dp = dp.data_mut();
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * n * inner;
                        for q in 0..n * inner {
                            dp[dst + q] += gd[src + q];
                        }
                    }
                }
                offset += n;
            }
        }
        Op::Slice { x, axis, start } => {
            let s = gr.value(*x).shape().to_vec();
            let (outer, n, inner) = axis_split(&s, *axis);
            let len = g.shape()[*axis];
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    for q in 0..len * inner {
                        dx[dst + q] += gd[src + q];
                    }
                }
            }
        }
        Op::Conv3d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let sx = gr.value(*x).shape().to_vec();
            let sw = gr.value(*w).shape().to_vec();
            let os = g.shape();
            let geom = ConvGeom::new(&sx, &sw, [os[1], os[2], os[3]], *stride, *pad);
            if let Some(b) = b {
                if let Some(db) = sink.slot(*b) {
                    let per = geom.ot * geom.oh * geom.ow;
                    for (o, d) in db.data_mut().iter_mut().enumerate() {
                        *d += gd[o * per..(o + 1) * per].iter().copied().sum::<T>();
                    }
                }
            }
            let wv = gr.value(*w).data();
            let xv = gr.value(*x).data();
            let each_out = |f: &mut dyn FnMut(usize, T, usize, usize, usize)| {
                for o in 0..geom.o {
                    for ot in 0..geom.ot {
                        for oh in 0..geom.oh {
                            for ow in 0..geom.ow {
                                let gv = gd[((o * geom.ot + ot) * geom.oh + oh) * geom.ow + ow];
                                if gv == T::zero() {
                                    continue;
                                }
                                geom.for_each_tap(ot, oh, ow, |c, tail, xidx| {
                                    f(o, gv, c, tail, xidx)
                                });
                            }
                        }
                    }
                }
            };
            if let Some(dx) = sink.slot(*x) {
                let dx = dx.data_mut();
                each_out(&mut |o, gv, c, tail, xidx| {
                    dx[xidx] += gv * wv[(o * geom.c + c) * geom.ksz + tail];
                });
            }
            if let Some(dw) = sink.slot(*w) {
                let dw = dw.data_mut();
                each_out(&mut |o, gv, c, tail, xidx| {
                    dw[(o * geom.c + c) * geom.ksz + tail] += gv * xv[xidx];
                });
            }
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            if let Some(dl) = sink.slot(*logits) {
                for (j, d) in dl.data_mut().iter_mut().enumerate() {
                    let target = if j == *label { T::one() } else { T::zero() };
                    *d += gd[0] * (probs[j] - target);
                }
            }
        }
    }
}
