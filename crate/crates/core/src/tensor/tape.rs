use super::{gemm, Real, Tensor, TensorError, View, ViewMut};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Variable,
    Param(usize),
    Conv { x: Var, w: Var, b: Var },
    Relu(Var),
    Leaky(Var, T),
    Add(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Upsample2(Var, Grid),
    Scale(Var, T),
    Sum(Var),
    DotConst(Var, Vec<T>),
    WeightedSq { x: Var, target: Vec<T>, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated once.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    scratch: Vec<T>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            scratch: Vec::new(),
        }
    }
}

fn finite<T: Real>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn spatial(op: &'static str, shape: &[usize]) -> Result<[usize; 4], TensorError> {
    match *shape {
        [c, d, h, w] => Ok([c, d, h, w]),
        _ => Err(shape_err(op, format!("expected [C,D,H,W], got {shape:?}"))),
    }
}

/// Lays out the 27 shifted copies of every input channel for output planes
/// `z0..z1` as rows of a `(C*27) x ((z1-z0)*H*W)` matrix; out-of-bounds taps
/// are zero.
fn im2col<T: Real>(x: &[T], [c, d, h, w]: [usize; 4], z0: usize, z1: usize, col: &mut [T]) {
    let n = d * h * w;
    let ns = (z1 - z0) * h * w;
    col.fill(T::zero());
    for ci in 0..c {
        let src = &x[ci * n..(ci + 1) * n];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut col[(ci * 27 + kz * 9 + ky * 3 + kx) * ns..][..ns];
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for z in z0..z1 {
                        let zz = z + kz;
                        if zz < 1 || zz > d {
                            continue;
                        }
                        for y in 0..h {
                            let yy = y + ky;
                            if yy < 1 || yy > h {
                                continue;
                            }
                            let dst = ((z - z0) * h + y) * w;
                            let s = ((zz - 1) * h + (yy - 1)) * w;
                            row[dst + x_lo..dst + x_hi]
                                .copy_from_slice(&src[s + x_lo + kx - 1..s + x_hi + kx - 1]);
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-adds columns back onto the input grid.
fn col2im<T: Real>(col: &[T], [c, d, h, w]: [usize; 4], z0: usize, z1: usize, out: &mut [T]) {
    let n = d * h * w;
    let ns = (z1 - z0) * h * w;
    for ci in 0..c {
        let dst = &mut out[ci * n..(ci + 1) * n];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &col[(ci * 27 + kz * 9 + ky * 3 + kx) * ns..][..ns];
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for z in z0..z1 {
                        let zz = z + kz;
                        if zz < 1 || zz > d {
                            continue;
                        }
                        for y in 0..h {
                            let yy = y + ky;
                            if yy < 1 || yy > h {
                                continue;
                            }
                            let src = ((z - z0) * h + y) * w;
                            let s = ((zz - 1) * h + (yy - 1)) * w;
                            for (o, v) in dst[s + x_lo + kx - 1..s + x_hi + kx - 1]
                                .iter_mut()
                                .zip(&row[src + x_lo..src + x_hi])
                            {
                                *o += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output planes per im2col slab, sized so a slab stays cache-resident.
fn slab_planes(k: usize, plane: usize) -> usize {
    ((1 << 18) / (k * plane)).max(1)
}

/// Where coarse voxel `j` sits on the doubled axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Grid {
    /// Align-corners-false: at fine coordinate `2j + 0.5`.
    Centers,
    /// At fine voxel `2j`, as k-space truncation samples it.
    Samples,
}

/// Source taps for output index `o` of a ×2 resample of a length-`n` axis:
/// `(i0, i1, weight of i1)`.
fn taps(o: usize, n: usize, grid: Grid) -> (usize, usize, f64) {
    let shift = match grid {
        Grid::Centers => 0.25,
        Grid::Samples => 0.0,
    };
    let src = (o as f64 * 0.5 - shift).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

fn upsample_axis<T: Real>(src: &[T], shape: [usize; 4], axis: usize, grid: Grid) -> (Vec<T>, [usize; 4]) {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape;
    out_shape[axis] = 2 * n;
    let mut out = vec![T::zero(); src.len() * 2];
    for o in 0..2 * n {
        let (i0, i1, t) = taps(o, n, grid);
        let (w0, w1) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
        for a in 0..outer {
            let dst = &mut out[(a * 2 * n + o) * inner..][..inner];
            let s0 = &src[(a * n + i0) * inner..][..inner];
            let s1 = &src[(a * n + i1) * inner..][..inner];
            for ((d, &p), &q) in dst.iter_mut().zip(s0).zip(s1) {
                *d = w0 * p + w1 * q;
            }
        }
    }
    (out, out_shape)
}

/// Adjoint of [`upsample_axis`]; `shape` is the small (input) shape.
fn upsample_axis_t<T: Real>(g: &[T], shape: [usize; 4], axis: usize, grid: Grid) -> Vec<T> {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); g.len() / 2];
    for o in 0..2 * n {
        let (i0, i1, t) = taps(o, n, grid);
        let (w0, w1) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
        for a in 0..outer {
            let src = &g[(a * 2 * n + o) * inner..][..inner];
            let d0 = (a * n + i0) * inner;
            for (k, &v) in src.iter().enumerate() {
                out[d0 + k] += w0 * v;
            }
            let d1 = (a * n + i1) * inner;
            for (k, &v) in src.iter().enumerate() {
                out[d1 + k] += w1 * v;
            }
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        finite("constant", t.data())?;
        Ok(self.push(t, Op::Constant, false))
    }

    /// A leaf whose gradient is reported by [`Grads::var`].
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        finite("variable", t.data())?;
        Ok(self.push(t, Op::Variable, true))
    }

    /// A leaf bound to parameter `id`; its gradient is reported by
    /// [`Grads::param`].
    pub fn param(&mut self, id: usize, t: &Tensor<T>) -> Result<Var, TensorError> {
        finite("param", t.data())?;
        Ok(self.push(t.clone(), Op::Param(id), true))
    }

    /// 3x3x3 cross-correlation, stride 1, zero "same" padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xs = spatial("conv3d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        let [ci, d, h, wd] = xs;
        if ws.len() != 5 || ws[1] != ci || ws[2..] != [3, 3, 3] {
            return Err(shape_err(
                "conv3d",
                format!("weights {ws:?} incompatible with input {xs:?}"),
            ));
        }
        let co = ws[0];
        if self.shape(b) != [co] {
            return Err(shape_err("conv3d", format!("bias {:?} for {co} outputs", self.shape(b))));
        }
        let n = d * h * wd;
        let k = ci * 27;
        let plane = h * wd;
        let step = slab_planes(k, plane);
        let mut out = vec![T::zero(); co * n];
        let mut col = std::mem::take(&mut self.scratch);
        col.resize(k * step * plane, T::zero());
        for z0 in (0..d).step_by(step) {
            let z1 = (z0 + step).min(d);
            let ns = (z1 - z0) * plane;
            let col = &mut col[..k * ns];
            im2col(self.value(x).data(), xs, z0, z1, col);
            gemm(
                co,
                k,
                ns,
                View::new(self.value(w).data(), k, 1),
                View::new(col, ns, 1),
                ViewMut::new(&mut out[z0 * plane..], n, 1),
                false,
            );
        }
        self.scratch = col;
        for (row, &bias) in out.chunks_mut(n).zip(self.value(b).data()) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        finite("conv3d", &out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(vec![co, d, h, wd], out)?, Op::Conv { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<T> = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Relu(x), needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<T> = v
            .data()
            .iter()
            .map(|&a| if a > T::zero() { a } else { a * slope })
            .collect();
        finite("leaky_relu", &data)?;
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Leaky(x, slope), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        finite("add", &data)?;
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let rest = self.shape(*first)[1..].to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != rest[..] {
                return Err(shape_err("concat", format!("{s:?} vs trailing {rest:?}")));
            }
            channels += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![channels];
        shape.extend(rest);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), needs))
    }

    /// Channels `start..start+len` along the leading axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(shape_err("slice", format!("{start}+{len} of {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, start }, needs))
    }

    /// Trilinear ×2 upsampling with align-corners-false sampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        self.upsample2_on(x, Grid::Centers)
    }

    /// Trilinear ×2 refinement that keeps every coarse value at fine index
    /// `2j` and averages neighbours in between, clamping at the far edge.
    /// This is the geometry of a k-space-truncated acquisition.
    pub fn upsample2_samples(&mut self, x: Var) -> Result<Var, TensorError> {
        self.upsample2_on(x, Grid::Samples)
    }

    fn upsample2_on(&mut self, x: Var, grid: Grid) -> Result<Var, TensorError> {
        let mut shape = spatial("upsample2", self.shape(x))?;
        let mut data = self.value(x).data().to_vec();
        for axis in [3, 2, 1] {
            let (d, s) = upsample_axis(&data, shape, axis, grid);
            data = d;
            shape = s;
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Upsample2(x, grid), needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data: Vec<T> = v.data().iter().map(|&a| a * s).collect();
        finite("scale", &data)?;
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Scale(x, s), needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total: T = self.value(x).data().iter().copied().sum();
        finite("sum", &[total])?;
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::Sum(x), needs))
    }

    /// `Σ c_i x_i` for a fixed coefficient vector.
    pub fn dot_const(&mut self, x: Var, c: Vec<T>) -> Result<Var, TensorError> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("dot_const", format!("{} vs {}", c.len(), self.value(x).len())));
        }
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(&c)
            .map(|(&a, &b)| a * b)
            .sum();
        finite("dot_const", &[total])?;
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::DotConst(x, c), needs))
    }

    /// `Σ w_i (x_i − t_i)²`.
    pub fn weighted_sq_error(&mut self, x: Var, target: Vec<T>, weights: Vec<T>) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if target.len() != n || weights.len() != n {
            return Err(shape_err(
                "weighted_sq_error",
                format!("{n} values, {} targets, {} weights", target.len(), weights.len()),
            ));
        }
        finite("weighted_sq_error", &target)?;
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(&target)
            .zip(&weights)
            .map(|((&a, &t), &w)| w * (a - t) * (a - t))
            .sum();
        finite("weighted_sq_error", &[total])?;
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSq { x, target, weights }, needs))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>, TensorError> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Constant | Op::Variable | Op::Param(_) => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Grads { nodes: grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let n = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), TensorError> {
        match &self.nodes[i].op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::Conv { x, w, b } => {
                let xs = spatial("conv3d", self.shape(*x))?;
                let [ci, d, h, wd] = xs;
                let n = d * h * wd;
                let co = self.shape(*w)[0];
                let k = ci * 27;
                if self.needs(*b) {
                    self.accumulate(grads, *b, |gb| {
                        for (acc, row) in gb.iter_mut().zip(g.chunks(n)) {
                            *acc += row.iter().copied().sum::<T>();
                        }
                    });
                }
                let plane = h * wd;
                let step = slab_planes(k, plane);
                let mut col = vec![T::zero(); k * step * plane];
                for z0 in (0..d).step_by(step) {
                    let z1 = (z0 + step).min(d);
                    let ns = (z1 - z0) * plane;
                    let col = &mut col[..k * ns];
                    let g_slab = View::new(&g[z0 * plane..], n, 1);
                    if self.needs(*w) {
                        im2col(self.value(*x).data(), xs, z0, z1, col);
                        self.accumulate(grads, *w, |gw| {
                            gemm(co, ns, k, g_slab, View::new(col, 1, ns), ViewMut::new(gw, k, 1), true)
                        });
                    }
                    if self.needs(*x) {
                        gemm(k, co, ns, View::new(self.value(*w).data(), 1, k), g_slab, ViewMut::new(col, ns, 1), false);
                        self.accumulate(grads, *x, |gx| col2im(col, xs, z0, z1, gx));
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((acc, &gi), &a) in gx.iter_mut().zip(g).zip(xv) {
                        if a > T::zero() {
                            *acc += gi;
                        }
                    }
                });
            }
            Op::Leaky(x, slope) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((acc, &gi), &a) in gx.iter_mut().zip(g).zip(xv) {
                        *acc += if a > T::zero() { gi } else { gi * *slope };
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |gv| {
                        gv.iter_mut().zip(g).for_each(|(acc, &gi)| *acc += gi)
                    });
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, |gp| {
                        gp.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(acc, &gi)| *acc += gi)
                    });
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                let inner: usize = self.shape(*x)[1..].iter().product();
                let off = start * inner;
                self.accumulate(grads, *x, |gx| {
                    gx[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(acc, &gi)| *acc += gi)
                });
            }
            Op::Upsample2(x, grid) => {
                let mut shape = spatial("upsample2", self.shape(*x))?;
                for axis in [1, 2, 3] {
                    shape[axis] *= 2;
                }
                let mut back = g.to_vec();
                for axis in [1, 2, 3] {
                    shape[axis] /= 2;
                    back = upsample_axis_t(&back, shape, axis, *grid);
                }
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(&back).for_each(|(acc, &gi)| *acc += gi)
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(acc, &gi)| *acc += gi * *s)
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|acc| *acc += g[0]));
            }
            Op::DotConst(x, c) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(c).for_each(|(acc, &ci)| *acc += g[0] * ci)
                });
            }
            Op::WeightedSq { x, target, weights } => {
                let xv = self.value(*x).data();
                let two = T::one() + T::one();
                self.accumulate(grads, *x, |gx| {
                    for (((acc, &a), &t), &w) in gx.iter_mut().zip(xv).zip(target).zip(weights) {
                        *acc += g[0] * two * w * (a - t);
                    }
                });
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Grads<T> {
    /// Gradient of a leaf created with [`Tape::variable`], or `None` if the
    /// loss does not depend on it.
    pub fn var(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for parameter `id`, summed over every node bound to it.
    /// `None` if the parameter never reached the loss.
    pub fn param(&self, id: usize) -> Option<Vec<T>> {
        let mut out: Option<Vec<T>> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.nodes[node] {
                match &mut out {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }
}
