use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::kernels::{
    col2im_2d_same, gemm, im2col_2d_same, patches_3d, pixel_shuffle, pixel_unshuffle, unpatch_3d,
};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    id: u32,
}

impl Var {
    pub fn tape_id(self) -> u32 {
        self.tape
    }

    fn idx(self) -> usize {
        self.id as usize
    }
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Relu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Concat(Vec<Var>),
    Gather {
        x: Var,
        index: Arc<[u32]>,
    },
    ScatterSum {
        x: Var,
        index: Arc<[u32]>,
    },
    GatherAdd {
        base: Var,
        terms: Vec<(Var, Arc<[u32]>)>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: [usize; 3],
    },
    Conv2dSame {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Sum(Var),
    Mean(Var),
    MaskedMean {
        x: Var,
        mask: Arc<[bool]>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        target: Arc<[S]>,
        mask: Arc<[bool]>,
        count: usize,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is single-owner: build one per forward pass, call
/// [`Tape::backward`] once, then drop it.
pub struct Tape<S: Scalar = f32> {
    id: u32,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
pub struct Gradients<S: Scalar> {
    tape: u32,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx()).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.idx()).and_then(|g| g.take())
    }
}

fn dims2(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => shape_err(format!("{what}: expected a matrix, got {s:?}")),
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx() >= self.nodes.len() {
            return Err(Error::Autodiff(format!(
                "variable {v:?} does not belong to tape {}",
                self.id
            )));
        }
        Ok(())
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.idx()]
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, id }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(format!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|x| x * s);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(f);
        let rg = self.needs(&[a]);
        Ok(self.push(value, op, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    /// Sigmoid-weighted linear unit `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(S::zero()))
    }

    /// `x [N, in] * w [in, out] + b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (n, fin) = dims2(self.value(x), "linear input")?;
        let (win, fout) = dims2(self.value(w), "linear weight")?;
        if fin != win {
            return shape_err(format!("linear: input width {fin} vs weight rows {win}"));
        }
        let mut out = vec![S::zero(); n * fout];
        if let Some(b) = b {
            self.check(b)?;
            let bias = self.value(b);
            if bias.shape() != [fout] {
                return shape_err(format!("linear: bias {:?} vs width {fout}", bias.shape()));
            }
            for row in out.chunks_exact_mut(fout.max(1)) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            b.is_some(),
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(Tensor::new([n, fout], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Normalizes each row of `x [N, F]`, then applies `gamma [F]`, `beta [F]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (n, f) = dims2(self.value(x), "layer_norm")?;
        if self.value(gamma).shape() != [f] || self.value(beta).shape() != [f] {
            return shape_err("layer_norm: gain/bias must match the feature width");
        }
        let eps = S::of(LAYER_NORM_EPS);
        let fs = S::of(f as f64);
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![S::zero(); n * f];
        let mut inv_std = vec![S::zero(); n];
        let mut out = vec![S::zero(); n * f];
        for r in 0..n {
            let row = &xs[r * f..(r + 1) * f];
            let mean = row.iter().copied().sum::<S>() / fs;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / fs;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..f {
                let h = (row[j] - mean) * is;
                xhat[r * f + j] = h;
                out[r * f + j] = h * g[j] + bt[j];
            }
        }
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new([n, f], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of nothing");
        }
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            self.check(p)?;
            let (r, c) = dims2(self.value(p), "concat")?;
            if *rows.get_or_insert(r) != r {
                return shape_err("concat: row counts differ");
            }
            widths.push(c);
        }
        let rows = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = vec![S::zero(); rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new([rows, total], out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Selects rows: `out[e] = x[index[e]]`.
    pub fn gather(&mut self, x: Var, index: Arc<[u32]>) -> Result<Var> {
        self.check(x)?;
        let (n, f) = dims2(self.value(x), "gather")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * f);
        for &i in index.iter() {
            let i = i as usize;
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
            out.extend_from_slice(&src[i * f..(i + 1) * f]);
        }
        let rg = self.needs(&[x]);
        let value = Tensor::new([index.len(), f], out)?;
        Ok(self.push(value, Op::Gather { x, index }, rg))
    }

    /// Sums rows into buckets: `out[index[e]] += x[e]`, in edge order.
    pub fn scatter_sum(&mut self, x: Var, index: Arc<[u32]>, out_rows: usize) -> Result<Var> {
        self.check(x)?;
        let (e, f) = dims2(self.value(x), "scatter_sum")?;
        if e != index.len() {
            return shape_err(format!("scatter_sum: {e} rows vs {} indices", index.len()));
        }
        let src = self.value(x).data();
        let mut out = vec![S::zero(); out_rows * f];
        for (row, &t) in index.iter().enumerate() {
            let t = t as usize;
            if t >= out_rows {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    size: out_rows,
                });
            }
            let dst = &mut out[t * f..(t + 1) * f];
            for (d, &s) in dst.iter_mut().zip(&src[row * f..(row + 1) * f]) {
                *d = *d + s;
            }
        }
        let rg = self.needs(&[x]);
        let value = Tensor::new([out_rows, f], out)?;
        Ok(self.push(value, Op::ScatterSum { x, index }, rg))
    }

    /// `out[e] = base[e] + sum_k terms[k].0[terms[k].1[e]]`: a fused form of
    /// gathering node rows onto edges and adding them to per-edge rows.
    pub fn gather_add(&mut self, base: Var, terms: &[(Var, Arc<[u32]>)]) -> Result<Var> {
        self.check(base)?;
        let (e, f) = dims2(self.value(base), "gather_add base")?;
        let mut out = self.value(base).data().to_vec();
        for (x, index) in terms {
            self.check(*x)?;
            let (n, fx) = dims2(self.value(*x), "gather_add term")?;
            if fx != f || index.len() != e {
                return shape_err(format!(
                    "gather_add: term {n}x{fx} with {} indices vs base {e}x{f}",
                    index.len()
                ));
            }
            let src = self.value(*x).data();
            for (row, &i) in index.iter().enumerate() {
                let i = i as usize;
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, size: n });
                }
                for (o, &v) in out[row * f..(row + 1) * f].iter_mut().zip(&src[i * f..(i + 1) * f]) {
                    *o = *o + v;
                }
            }
        }
        let mut vars = vec![base];
        vars.extend(terms.iter().map(|t| t.0));
        let rg = self.needs(&vars);
        let value = Tensor::new([e, f], out)?;
        Ok(self.push(
            value,
            Op::GatherAdd {
                base,
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let (r, c) = dims2(self.value(x), "slice_rows")?;
        if start > end || end > r {
            return shape_err(format!("slice_rows: {start}..{end} of {r} rows"));
        }
        let data = self.value(x).data()[start * c..end * c].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new([end - start, c], data)?, Op::SliceRows { x, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (r, c) = dims2(self.value(x), "transpose")?;
        let out = transpose(self.value(x).data(), r, c);
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new([c, r], out)?, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// 3D convolution of `x [T, C, H, W]` with `w [C', C, kT, kH, kW]` where
    /// stride equals the kernel. Output is `[C', T', H', W']`, with the time
    /// axis dropped when `T' = 1`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 3]) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xd: [usize; 4] = match *self.value(x).shape() {
            [t, c, h, ww] => [t, c, h, ww],
            ref s => return shape_err(format!("conv3d input must be [T,C,H,W], got {s:?}")),
        };
        let (cout, kernel) = match *self.value(w).shape() {
            [co, ci, kt, kh, kw] if ci == xd[1] => (co, [kt, kh, kw]),
            ref s => return shape_err(format!("conv3d weight {s:?} vs input channels {}", xd[1])),
        };
        if kernel != stride {
            return shape_err(format!(
                "conv3d requires kernel == stride, got {kernel:?} vs {stride:?}"
            ));
        }
        if kernel.contains(&0)
            || xd[0] % kernel[0] != 0
            || xd[2] % kernel[1] != 0
            || xd[3] % kernel[2] != 0
        {
            return shape_err(format!(
                "conv3d: input {xd:?} not divisible by stride {stride:?}"
            ));
        }
        let (to, ho, wo) = (xd[0] / kernel[0], xd[2] / kernel[1], xd[3] / kernel[2]);
        let n = to * ho * wo;
        let k = xd[1] * kernel.iter().product::<usize>();
        let patches = patches_3d(self.value(x).data(), xd, kernel);
        let mut out = vec![S::zero(); cout * n];
        if let Some(b) = b {
            self.check(b)?;
            let bias = self.value(b);
            if bias.shape() != [cout] {
                return shape_err("conv3d: bias must be [C']");
            }
            for (row, &bv) in out.chunks_exact_mut(n.max(1)).zip(bias.data()) {
                row.fill(bv);
            }
        }
        // [C', K] x [K, N] with the patch matrix stored as [N, K]
        gemm(cout, k, n, self.value(w).data(), false, &patches, true, &mut out, b.is_some());
        let shape = if to == 1 {
            vec![cout, ho, wo]
        } else {
            vec![cout, to, ho, wo]
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv3d { x, w, b, kernel }, rg))
    }

    /// Zero-padded "same" 2D convolution: `x [C, H, W]`, `w [C', C, k, k]`.
    pub fn conv2d_same(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xd: [usize; 3] = match *self.value(x).shape() {
            [c, h, ww] => [c, h, ww],
            ref s => return shape_err(format!("conv2d input must be [C,H,W], got {s:?}")),
        };
        let (cout, k) = match *self.value(w).shape() {
            [co, ci, kh, kw] if ci == xd[0] && kh == kw && kh % 2 == 1 => (co, kh),
            ref s => {
                return shape_err(format!(
                    "conv2d weight {s:?} must be [C',{},k,k] with odd k",
                    xd[0]
                ))
            }
        };
        let n = xd[1] * xd[2];
        let kk = xd[0] * k * k;
        let cols = im2col_2d_same(self.value(x).data(), xd, k);
        let mut out = vec![S::zero(); cout * n];
        if let Some(b) = b {
            self.check(b)?;
            let bias = self.value(b);
            if bias.shape() != [cout] {
                return shape_err("conv2d: bias must be [C']");
            }
            for (row, &bv) in out.chunks_exact_mut(n.max(1)).zip(bias.data()) {
                row.fill(bv);
            }
        }
        gemm(cout, kk, n, self.value(w).data(), false, &cols, true, &mut out, b.is_some());
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(
            Tensor::new([cout, xd[1], xd[2]], out)?,
            Op::Conv2dSame { x, w, b, k },
            rg,
        ))
    }

    /// Sub-pixel rearrangement `[r*r*C, H, W] -> [C, r*H, r*W]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let d: [usize; 3] = match *self.value(x).shape() {
            [c, h, w] => [c, h, w],
            ref s => return shape_err(format!("pixel_shuffle input must be [C,H,W], got {s:?}")),
        };
        if r == 0 || d[0] % (r * r) != 0 {
            return shape_err(format!(
                "pixel_shuffle: {} channels not divisible by r^2 = {}",
                d[0],
                r * r
            ));
        }
        let out = pixel_shuffle(self.value(x).data(), d, r);
        let rg = self.needs(&[x]);
        let shape = [d[0] / (r * r), d[1] * r, d[2] * r];
        Ok(self.push(Tensor::new(shape, out)?, Op::PixelShuffle { x, r }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if v.is_empty() {
            return shape_err("mean of an empty tensor");
        }
        let m = v.sum() / S::of(v.len() as f64);
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Mean over the entries selected by `mask`.
    pub fn masked_mean(&mut self, x: Var, mask: Arc<[bool]>) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if v.len() != mask.len() {
            return shape_err("masked_mean: mask length");
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidArgument("masked_mean: empty mask".into()));
        }
        let s: S = v
            .data()
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .sum();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(s / S::of(count as f64)),
            Op::MaskedMean { x, mask, count },
            rg,
        ))
    }

    /// Mean binary cross-entropy over masked cells, in the stable logit form
    /// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        target: Arc<[S]>,
        mask: Arc<[bool]>,
    ) -> Result<Var> {
        self.check(logits)?;
        let z = self.value(logits);
        if z.len() != target.len() || z.len() != mask.len() {
            return shape_err(format!(
                "bce: {} logits, {} targets, {} mask cells",
                z.len(),
                target.len(),
                mask.len()
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidArgument("bce: mask selects no cells".into()));
        }
        let mut total = S::zero();
        for ((&zi, &yi), &m) in z.data().iter().zip(target.iter()).zip(mask.iter()) {
            if m {
                total = total + zi.max(S::zero()) - zi * yi + (-zi.abs()).exp().ln_1p();
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / S::of(count as f64)),
            Op::BceWithLogits {
                logits,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Autodiff(
                "loss is detached: it depends on no differentiable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx()] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![S::one()])?);
        for id in (0..=loss.idx()).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.node(v).requires_grad {
            return;
        }
        match &mut grads[v.idx()] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e = *e + *x;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Vec<S>) {
        if !self.node(v).requires_grad {
            return;
        }
        let shape = self.value(v).shape().to_vec();
        self.accumulate(grads, v, Tensor::new(shape, g).expect("gradient shape"));
    }

    fn propagate(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[id];
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                    self.accumulate_vec(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let d = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                    self.accumulate_vec(grads, *b, d);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * *s)),
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                self.accumulate_vec(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * (S::one() - y * y))
                    .collect();
                self.accumulate_vec(grads, *a, d);
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| {
                        let s = sigmoid(x);
                        g * s * (S::one() + x * (S::one() - s))
                    })
                    .collect();
                self.accumulate_vec(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate_vec(grads, *a, d);
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = dims2(self.value(*x), "linear")?;
                let fout = self.value(*w).shape()[1];
                if self.requires_grad(*x) {
                    let mut dx = vec![S::zero(); n * fin];
                    gemm(n, fout, fin, gd, false, self.value(*w).data(), true, &mut dx, false);
                    self.accumulate_vec(grads, *x, dx);
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![S::zero(); fin * fout];
                    gemm(fin, n, fout, self.value(*x).data(), true, gd, false, &mut dw, false);
                    self.accumulate_vec(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![S::zero(); fout];
                        for row in gd.chunks_exact(fout.max(1)) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        self.accumulate_vec(grads, *b, db);
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
                let (n, f) = dims2(self.value(*x), "layer_norm")?;
                let gam = self.value(*gamma).data();
                if self.requires_grad(*gamma) || self.requires_grad(*beta) {
                    let mut dg = vec![S::zero(); f];
                    let mut db = vec![S::zero(); f];
                    for r in 0..n {
                        for j in 0..f {
                            let gv = gd[r * f + j];
                            dg[j] = dg[j] + gv * xhat[r * f + j];
                            db[j] = db[j] + gv;
                        }
                    }
                    self.accumulate_vec(grads, *gamma, dg);
                    self.accumulate_vec(grads, *beta, db);
                }
                if self.requires_grad(*x) {
                    let fs = S::of(f as f64);
                    let mut dx = vec![S::zero(); n * f];
                    for r in 0..n {
                        let mut sum_d = S::zero();
                        let mut sum_dx = S::zero();
                        for j in 0..f {
                            let dh = gd[r * f + j] * gam[j];
                            sum_d = sum_d + dh;
                            sum_dx = sum_dx + dh * xhat[r * f + j];
                        }
                        for j in 0..f {
                            let dh = gd[r * f + j] * gam[j];
                            dx[r * f + j] =
                                inv_std[r] / fs * (fs * dh - sum_d - xhat[r * f + j] * sum_dx);
                        }
                    }
                    self.accumulate_vec(grads, *x, dx);
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = dims2(g, "concat grad")?;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        self.accumulate_vec(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::Gather { x, index } => {
                let (n, f) = dims2(self.value(*x), "gather")?;
                let mut dx = vec![S::zero(); n * f];
                for (row, &i) in index.iter().enumerate() {
                    let i = i as usize;
                    for (d, &v) in dx[i * f..(i + 1) * f].iter_mut().zip(&gd[row * f..(row + 1) * f]) {
                        *d = *d + v;
                    }
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::ScatterSum { x, index } => {
                let f = self.value(*x).shape()[1];
                let mut dx = Vec::with_capacity(index.len() * f);
                for &t in index.iter() {
                    let t = t as usize;
                    dx.extend_from_slice(&gd[t * f..(t + 1) * f]);
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::GatherAdd { base, terms } => {
                self.accumulate(grads, *base, g.clone());
                for (x, index) in terms {
                    if !self.requires_grad(*x) {
                        continue;
                    }
                    let (n, f) = dims2(self.value(*x), "gather_add")?;
                    let mut dx = vec![S::zero(); n * f];
                    for (row, &i) in index.iter().enumerate() {
                        let i = i as usize;
                        for (d, &v) in dx[i * f..(i + 1) * f].iter_mut().zip(&gd[row * f..(row + 1) * f]) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate_vec(grads, *x, dx);
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.shape()[1];
                let mut dx = vec![S::zero(); self.value(*x).len()];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Transpose(x) => {
                let (r, c) = dims2(self.value(*x), "transpose")?;
                self.accumulate_vec(grads, *x, transpose(gd, c, r));
            }
            Op::Reshape(x) => self.accumulate_vec(grads, *x, gd.to_vec()),
            Op::Conv3d { x, w, b, kernel } => {
                let xs = self.value(*x).shape();
                let xd = [xs[0], xs[1], xs[2], xs[3]];
                let cout = self.value(*w).shape()[0];
                let k = xd[1] * kernel.iter().product::<usize>();
                let n = gd.len() / cout;
                if self.requires_grad(*w) {
                    let patches = patches_3d(self.value(*x).data(), xd, *kernel);
                    let mut dw = vec![S::zero(); cout * k];
                    gemm(cout, n, k, gd, false, &patches, false, &mut dw, false);
                    self.accumulate_vec(grads, *w, dw);
                }
                if self.requires_grad(*x) {
                    let mut dp = vec![S::zero(); n * k];
                    gemm(n, cout, k, gd, true, self.value(*w).data(), false, &mut dp, false);
                    self.accumulate_vec(grads, *x, unpatch_3d(&dp, xd, *kernel));
                }
                if let Some(b) = b {
                    let db = gd.chunks_exact(n.max(1)).map(|r| r.iter().copied().sum()).collect();
                    self.accumulate_vec(grads, *b, db);
                }
            }
            Op::Conv2dSame { x, w, b, k } => {
                let xs = self.value(*x).shape();
                let xd = [xs[0], xs[1], xs[2]];
                let cout = self.value(*w).shape()[0];
                let kk = xd[0] * k * k;
                let n = xd[1] * xd[2];
                if self.requires_grad(*w) {
                    let cols = im2col_2d_same(self.value(*x).data(), xd, *k);
                    let mut dw = vec![S::zero(); cout * kk];
                    gemm(cout, n, kk, gd, false, &cols, false, &mut dw, false);
                    self.accumulate_vec(grads, *w, dw);
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![S::zero(); n * kk];
                    gemm(n, cout, kk, gd, true, self.value(*w).data(), false, &mut dcols, false);
                    self.accumulate_vec(grads, *x, col2im_2d_same(&dcols, xd, *k));
                }
                if let Some(b) = b {
                    let db = gd.chunks_exact(n.max(1)).map(|r| r.iter().copied().sum()).collect();
                    self.accumulate_vec(grads, *b, db);
                }
            }
            Op::PixelShuffle { x, r } => {
                let s = g.shape();
                let d = pixel_unshuffle(gd, [s[0], s[1], s[2]], *r);
                self.accumulate_vec(grads, *x, d);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate_vec(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate_vec(grads, *x, vec![gd[0] / S::of(n as f64); n]);
            }
            Op::MaskedMean { x, mask, count } => {
                let scale = gd[0] / S::of(*count as f64);
                let d = mask
                    .iter()
                    .map(|&m| if m { scale } else { S::zero() })
                    .collect();
                self.accumulate_vec(grads, *x, d);
            }
            Op::BceWithLogits {
                logits,
                target,
                mask,
                count,
            } => {
                let scale = gd[0] / S::of(*count as f64);
                let z = self.value(*logits).data();
                let d = z
                    .iter()
                    .zip(target.iter())
                    .zip(mask.iter())
                    .map(|((&zi, &yi), &m)| {
                        if m {
                            (sigmoid(zi) - yi) * scale
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                self.accumulate_vec(grads, *logits, d);
            }
        }
        Ok(())
    }
}

fn transpose<S: Scalar>(data: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
