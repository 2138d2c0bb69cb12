//! Gradient tape and the differentiable operator set.

use std::collections::HashMap;

use lfv_core::warp::kernels as warp_kernels;

use crate::error::{NnError, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::correlation;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Correlation {
        a: Var,
        b: Var,
        max_disp: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    MulConst {
        x: Var,
        c: Vec<T>,
    },
    AddConst {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: Vec<usize>,
    },
    SwapAxes01 {
        x: Var,
        d0: usize,
        d1: usize,
        inner: usize,
    },
    Upsample2x {
        x: Var,
    },
    Warp {
        src: Var,
        flow: Var,
    },
    MeanAxis0 {
        x: Var,
    },
    VarAxis0 {
        x: Var,
    },
    L1 {
        a: Var,
        b: Var,
    },
    MaskedL1 {
        a: Var,
        b: Var,
        mask: Vec<T>,
        count: T,
    },
    Smoothness {
        flow: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass.
#[derive(Debug)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(op))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self
                .parents(&op)
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Correlation { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::L1 { a, b }
            | Op::MaskedL1 { a, b, .. } => vec![*a, *b],
            Op::Warp { src, flow } => vec![*src, *flow],
            Op::Concat { parts, .. } => parts.clone(),
            Op::LeakyRelu { x, .. }
            | Op::Tanh { x }
            | Op::Scale { x, .. }
            | Op::MulConst { x, .. }
            | Op::AddConst { x }
            | Op::Clamp { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Reshape { x }
            | Op::SwapAxes01 { x, .. }
            | Op::Upsample2x { x }
            | Op::MeanAxis0 { x }
            | Op::VarAxis0 { x } => vec![*x],
            Op::Smoothness { flow } => vec![*flow],
        }
    }

    /// Value that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    /// Trainable parameter; repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.leaf(store.get(id).clone())?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// Parameter entered as a constant: it is used but not trained.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        self.constant(store.get(id).clone())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- operators ------------------------------------------------------

    fn conv_impl(
        &mut self,
        name: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        if let Some(b) = b {
            if self.shape(b) != [geom.out_ch] {
                return Err(NnError::shape(
                    name,
                    "bias must have one entry per output channel",
                ));
            }
        }
        let out = geom.output();
        if out.contains(&0) {
            return Err(NnError::shape(name, "kernel larger than padded input"));
        }
        let data = conv::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape: Vec<usize> = if self.shape(x).len() == 4 {
            vec![geom.batch, geom.out_ch, out[1], out[2]]
        } else {
            vec![geom.batch, geom.out_ch, out[0], out[1], out[2]]
        };
        self.push(name, Tensor::new(&shape, data)?, Op::Conv { x, w, b, geom })
    }

    /// 2-D cross-correlation: `x [N, C, H, W]`, `w [Cout, C, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(NnError::shape(
                "conv2d",
                format!("input {xs:?}, kernel {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(NnError::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", xs[1], ws[1]),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            input: [1, xs[2], xs[3]],
            kernel: [1, ws[2], ws[3]],
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        };
        self.conv_impl("conv2d", x, w, b, geom)
    }

    /// 3-D cross-correlation: `x [N, C, D, H, W]`, `w [Cout, C, kd, kh, kw]`,
    /// strides and paddings given as `(depth, spatial)`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 5 || ws.len() != 5 {
            return Err(NnError::shape(
                "conv3d",
                format!("input {xs:?}, kernel {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(NnError::shape(
                "conv3d",
                format!("input has {} channels, kernel expects {}", xs[1], ws[1]),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            stride: [stride.0, stride.1, stride.1],
            padding: [padding.0, padding.1, padding.1],
        };
        self.conv_impl("conv3d", x, w, b, geom)
    }

    /// Local correlation over displacements in `[-max_disp, max_disp]²`.
    pub fn correlation(&mut self, a: Var, b: Var, max_disp: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || self.shape(b) != s.as_slice() {
            return Err(NnError::shape(
                "correlation",
                format!("{s:?} vs {:?}", self.shape(b)),
            ));
        }
        let shape = [s[0], s[1], s[2], s[3]];
        let data = correlation::correlation_forward(
            shape,
            self.value(a).data(),
            self.value(b).data(),
            max_disp,
        );
        let out = [
            s[0],
            correlation::displacement_channels(max_disp),
            s[2],
            s[3],
        ];
        self.push(
            "correlation",
            Tensor::new(&out, data)?,
            Op::Correlation { a, b, max_disp },
        )
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&e| f(e)).collect())?;
        self.push(name, out, op)
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            |e| if e >= T::zero() { e } else { slope * e },
            Op::LeakyRelu { x, slope },
        )
    }

    /// Hyperbolic tangent, kept strictly inside `(-1, 1)`.
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let lim = T::one() - T::epsilon();
        self.unary("tanh", x, |e| e.tanh().max(-lim).min(lim), Op::Tanh { x })
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        self.unary("scale", x, |e| e * k, Op::Scale { x, k })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        self.unary("clamp", x, |e| e.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::shape(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(NnError::shape(
                "mul_const",
                format!("{:?} vs {:?}", self.shape(x), c.shape()),
            ));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::new(c.shape(), data)?;
        self.push(
            "mul_const",
            out,
            Op::MulConst {
                x,
                c: c.data().to_vec(),
            },
        )
    }

    /// Elementwise sum with a constant of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(NnError::shape(
                "add_const",
                format!("{:?} vs {:?}", self.shape(x), c.shape()),
            ));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let out = Tensor::new(c.shape(), data)?;
        self.push("add_const", out, Op::AddConst { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape { x })
    }

    /// Concatenates `[N, C_i, ...]` tensors along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NnError::Usage("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() < 2 {
            return Err(NnError::shape("concat", "rank must be at least 2"));
        }
        let rest: usize = first[2..].iter().product();
        let outer = first[0];
        let mut inner = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(NnError::shape("concat", format!("{first:?} vs {s:?}")));
            }
            inner.push(s[1] * rest);
        }
        let total: usize = inner.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for n in 0..outer {
            for (&p, &len) in parts.iter().zip(&inner) {
                data.extend_from_slice(&self.value(p).data()[n * len..(n + 1) * len]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total / rest;
        let out = Tensor::new(&shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
        )
    }

    /// Swaps the first two axes: `[A, B, ...] -> [B, A, ...]`.
    pub fn swap_axes01(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(NnError::shape("swap_axes01", "rank must be at least 2"));
        }
        let (d0, d1) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let from = (i * d1 + j) * inner;
                let to = (j * d0 + i) * inner;
                data[to..to + inner].copy_from_slice(&src[from..from + inner]);
            }
        }
        let mut shape = s.clone();
        shape.swap(0, 1);
        let out = Tensor::new(&shape, data)?;
        self.push("swap_axes01", out, Op::SwapAxes01 { x, d0, d1, inner })
    }

    /// Nearest-neighbour 2× upsampling of the last two axes.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(NnError::shape("upsample2x", "rank must be at least 2"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes: usize = s[..s.len() - 2].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(planes * 4 * h * w);
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..2 * h {
                let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for x in 0..2 * w {
                    data.push(row[x / 2]);
                }
            }
        }
        let mut shape = s.clone();
        let r = shape.len();
        shape[r - 2] *= 2;
        shape[r - 1] *= 2;
        let out = Tensor::new(&shape, data)?;
        self.push("upsample2x", out, Op::Upsample2x { x })
    }

    /// Bilinear backward warp `out(p) = src(p + flow(p))` with edge clamping:
    /// `src [N, C, H, W]`, `flow [N, 2, H, W]` (x then y displacement).
    pub fn warp(&mut self, src: Var, flow: Var) -> Result<Var> {
        let (ss, fs) = (self.shape(src).to_vec(), self.shape(flow));
        if ss.len() != 4 || fs.len() != 4 || fs[0] != ss[0] || fs[1] != 2 || fs[2..] != ss[2..] {
            return Err(NnError::shape("warp", format!("src {ss:?}, flow {fs:?}")));
        }
        let [n, c, h, w] = [ss[0], ss[1], ss[2], ss[3]];
        let hw = h * w;
        let (sv, fv) = (self.value(src).data(), self.value(flow).data());
        let mut data = vec![T::zero(); n * c * hw];
        for b in 0..n {
            let f = &fv[b * 2 * hw..(b + 1) * 2 * hw];
            warp_kernels::warp_forward(
                &sv[b * c * hw..(b + 1) * c * hw],
                c,
                h,
                w,
                &f[..hw],
                &f[hw..],
                &mut data[b * c * hw..(b + 1) * c * hw],
            );
        }
        let out = Tensor::new(&ss, data)?;
        self.push("warp", out, Op::Warp { src, flow })
    }

    /// Mean over axis 0: `[V, ...] -> [1, ...]`.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let v = s[0];
        let inner = self.value(x).numel() / v;
        let src = self.value(x).data();
        let inv = T::one() / T::of(v as f64);
        let mut data = vec![T::zero(); inner];
        for k in 0..v {
            for (d, &e) in data.iter_mut().zip(&src[k * inner..(k + 1) * inner]) {
                *d += e;
            }
        }
        data.iter_mut().for_each(|d| *d *= inv);
        let mut shape = s;
        shape[0] = 1;
        let out = Tensor::new(&shape, data)?;
        self.push("mean_axis0", out, Op::MeanAxis0 { x })
    }

    /// Population variance over axis 0: `[V, ...] -> [1, ...]`.
    pub fn var_axis0(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let v = s[0];
        let inner = self.value(x).numel() / v;
        let src = self.value(x).data();
        let mean = axis0_mean(src, v, inner);
        let inv = T::one() / T::of(v as f64);
        let mut data = vec![T::zero(); inner];
        for k in 0..v {
            for ((d, &e), &m) in data
                .iter_mut()
                .zip(&src[k * inner..(k + 1) * inner])
                .zip(&mean)
            {
                *d += (e - m) * (e - m);
            }
        }
        data.iter_mut().for_each(|d| *d *= inv);
        let mut shape = s;
        shape[0] = 1;
        let out = Tensor::new(&shape, data)?;
        self.push("var_axis0", out, Op::VarAxis0 { x })
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::shape(
                "l1",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let s: T = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(s / T::of(va.numel() as f64));
        self.push("l1", out, Op::L1 { a, b })
    }

    /// `Σ mask·|a - b| / Σ mask` for a constant non-negative mask.
    pub fn masked_l1(&mut self, a: Var, b: Var, mask: &Tensor<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() || va.shape() != mask.shape() {
            return Err(NnError::shape(
                "masked_l1",
                format!(
                    "{:?}, {:?}, mask {:?}",
                    va.shape(),
                    vb.shape(),
                    mask.shape()
                ),
            ));
        }
        let count: T = mask.data().iter().copied().sum();
        if count <= T::zero() {
            return Err(NnError::Usage("masked_l1 with an empty mask".into()));
        }
        let s: T = va
            .data()
            .iter()
            .zip(vb.data())
            .zip(mask.data())
            .map(|((&x, &y), &m)| m * (x - y).abs())
            .sum();
        let out = Tensor::scalar(s / count);
        self.push(
            "masked_l1",
            out,
            Op::MaskedL1 {
                a,
                b,
                mask: mask.data().to_vec(),
                count,
            },
        )
    }

    /// First-order smoothness of `[N, 2, H, W]` flow: the mean absolute
    /// horizontal difference plus the mean absolute vertical difference.
    pub fn smoothness(&mut self, flow: Var) -> Result<Var> {
        let s = self.shape(flow).to_vec();
        if s.len() != 4 || s[1] != 2 {
            return Err(NnError::shape("smoothness", format!("flow {s:?}")));
        }
        let v = self.value(flow).data();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (nx, ny) = smoothness_counts(planes, h, w);
        let mut sx = T::zero();
        let mut sy = T::zero();
        for p in 0..planes {
            let f = &v[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        sx += (f[y * w + x + 1] - f[y * w + x]).abs();
                    }
                    if y + 1 < h {
                        sy += (f[(y + 1) * w + x] - f[y * w + x]).abs();
                    }
                }
            }
        }
        let mut total = T::zero();
        if nx > 0 {
            total += sx / T::of(nx as f64);
        }
        if ny > 0 {
            total += sy / T::of(ny as f64);
        }
        self.push("smoothness", Tensor::scalar(total), Op::Smoothness { flow })
    }

    // ---- reverse pass ---------------------------------------------------

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shape(v), g.clone()).expect("grad matches value shape"))
    }

    /// Gradients of every parameter that entered this tape.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .grads
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| vec![T::zero(); self.value(v).numel()]);
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let numel = |v: Var| self.value(v).numel();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let mut gx = self.wants(*x).then(|| vec![T::zero(); numel(*x)]);
                let mut gw = self.wants(*w).then(|| vec![T::zero(); numel(*w)]);
                let mut gb = b
                    .filter(|b| self.wants(*b))
                    .map(|b| vec![T::zero(); numel(b)]);
                conv::conv_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                self.add_grad(grads, *x, gx);
                self.add_grad(grads, *w, gw);
                if let Some(b) = b {
                    self.add_grad(grads, *b, gb);
                }
            }
            Op::Correlation { a, b, max_disp } => {
                let s = self.shape(*a);
                let shape = [s[0], s[1], s[2], s[3]];
                let mut ga = self.wants(*a).then(|| vec![T::zero(); numel(*a)]);
                let mut gb = self.wants(*b).then(|| vec![T::zero(); numel(*b)]);
                correlation::correlation_backward(
                    shape,
                    self.value(*a).data(),
                    self.value(*b).data(),
                    *max_disp,
                    g,
                    ga.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let slot = accumulate(&mut grads[x.0], xv.len());
                for ((s, &gi), &xi) in slot.iter_mut().zip(g).zip(xv) {
                    *s += if xi >= T::zero() { gi } else { *slope * gi };
                }
            }
            Op::Tanh { x } => {
                let yv = node.value.data();
                let slot = accumulate(&mut grads[x.0], yv.len());
                for ((s, &gi), &yi) in slot.iter_mut().zip(g).zip(yv) {
                    *s += gi * (T::one() - yi * yi);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let slot = accumulate(&mut grads[v.0], g.len());
                        slot.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    let slot = accumulate(&mut grads[a.0], g.len());
                    slot.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
                }
                if self.wants(*b) {
                    let slot = accumulate(&mut grads[b.0], g.len());
                    slot.iter_mut().zip(g).for_each(|(s, &gi)| *s -= gi);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let slot = accumulate(&mut grads[a.0], g.len());
                    for ((s, &gi), &y) in slot.iter_mut().zip(g).zip(vb) {
                        *s += gi * y;
                    }
                }
                if self.wants(*b) {
                    let slot = accumulate(&mut grads[b.0], g.len());
                    for ((s, &gi), &x) in slot.iter_mut().zip(g).zip(va) {
                        *s += gi * x;
                    }
                }
            }
            Op::Scale { x, k } => {
                let slot = accumulate(&mut grads[x.0], g.len());
                slot.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi * *k);
            }
            Op::MulConst { x, c } => {
                let slot = accumulate(&mut grads[x.0], g.len());
                for ((s, &gi), &ci) in slot.iter_mut().zip(g).zip(c) {
                    *s += gi * ci;
                }
            }
            Op::AddConst { x } | Op::Reshape { x } => {
                let slot = accumulate(&mut grads[x.0], g.len());
                slot.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let slot = accumulate(&mut grads[x.0], g.len());
                for ((s, &gi), &xi) in slot.iter_mut().zip(g).zip(xv) {
                    if xi >= *lo && xi <= *hi {
                        *s += gi;
                    }
                }
            }
            Op::Sum { x } => {
                let n = numel(*x);
                let slot = accumulate(&mut grads[x.0], n);
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
            Op::Mean { x } => {
                let n = numel(*x);
                let gi = g[0] / T::of(n as f64);
                let slot = accumulate(&mut grads[x.0], n);
                slot.iter_mut().for_each(|s| *s += gi);
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = inner.iter().sum();
                let mut offset = 0;
                for (&p, &len) in parts.iter().zip(inner) {
                    if self.wants(p) {
                        let slot = accumulate(&mut grads[p.0], outer * len);
                        for n in 0..*outer {
                            let src = &g[n * total + offset..n * total + offset + len];
                            for (s, &gi) in slot[n * len..(n + 1) * len].iter_mut().zip(src) {
                                *s += gi;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::SwapAxes01 { x, d0, d1, inner } => {
                let slot = accumulate(&mut grads[x.0], g.len());
                for a in 0..*d0 {
                    for b in 0..*d1 {
                        let to = (a * d1 + b) * inner;
                        let from = (b * d0 + a) * inner;
                        for k in 0..*inner {
                            slot[to + k] += g[from + k];
                        }
                    }
                }
            }
            Op::Upsample2x { x } => {
                let s = self.shape(*x);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = numel(*x) / (h * w);
                let slot = accumulate(&mut grads[x.0], numel(*x));
                for p in 0..planes {
                    let go = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let gi = &mut slot[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gi[(y / 2) * w + xx / 2] += go[y * 2 * w + xx];
                        }
                    }
                }
            }
            Op::Warp { src, flow } => {
                let s = self.shape(*src);
                let [n, c, h, w] = [s[0], s[1], s[2], s[3]];
                let hw = h * w;
                let mut gs = self.wants(*src).then(|| vec![T::zero(); n * c * hw]);
                let mut gf = self.wants(*flow).then(|| vec![T::zero(); n * 2 * hw]);
                let (sv, fv) = (self.value(*src).data(), self.value(*flow).data());
                for b in 0..n {
                    let f = &fv[b * 2 * hw..(b + 1) * 2 * hw];
                    let gsb = gs.as_mut().map(|v| &mut v[b * c * hw..(b + 1) * c * hw]);
                    let gfb = gf.as_mut().map(|v| {
                        let (gx, gy) = v[b * 2 * hw..(b + 1) * 2 * hw].split_at_mut(hw);
                        (gx, gy)
                    });
                    warp_kernels::warp_backward(
                        &sv[b * c * hw..(b + 1) * c * hw],
                        c,
                        h,
                        w,
                        &f[..hw],
                        &f[hw..],
                        &g[b * c * hw..(b + 1) * c * hw],
                        gsb,
                        gfb,
                    );
                }
                self.add_grad(grads, *src, gs);
                self.add_grad(grads, *flow, gf);
            }
            Op::MeanAxis0 { x } => {
                let v = self.shape(*x)[0];
                let inner = g.len();
                let inv = T::one() / T::of(v as f64);
                let slot = accumulate(&mut grads[x.0], v * inner);
                for k in 0..v {
                    for (s, &gi) in slot[k * inner..(k + 1) * inner].iter_mut().zip(g) {
                        *s += gi * inv;
                    }
                }
            }
            Op::VarAxis0 { x } => {
                let v = self.shape(*x)[0];
                let inner = g.len();
                let src = self.value(*x).data();
                let mean = axis0_mean(src, v, inner);
                let k2 = T::of(2.0) / T::of(v as f64);
                let slot = accumulate(&mut grads[x.0], v * inner);
                for k in 0..v {
                    let rows = k * inner..(k + 1) * inner;
                    for (((s, &gi), &e), &m) in slot[rows.clone()]
                        .iter_mut()
                        .zip(g)
                        .zip(&src[rows])
                        .zip(&mean)
                    {
                        *s += gi * k2 * (e - m);
                    }
                }
            }
            Op::L1 { a, b } => {
                let n = numel(*a);
                let scale = g[0] / T::of(n as f64);
                self.l1_backward(grads, *a, *b, |_| scale);
            }
            Op::MaskedL1 { a, b, mask, count } => {
                let scale = g[0] / *count;
                self.l1_backward(grads, *a, *b, |i| scale * mask[i]);
            }
            Op::Smoothness { flow } => {
                let s = self.shape(*flow);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let (nx, ny) = smoothness_counts(planes, h, w);
                let fv = self.value(*flow).data();
                let slot = accumulate(&mut grads[flow.0], fv.len());
                let kx = if nx > 0 {
                    g[0] / T::of(nx as f64)
                } else {
                    T::zero()
                };
                let ky = if ny > 0 {
                    g[0] / T::of(ny as f64)
                } else {
                    T::zero()
                };
                let sign = |d: T| {
                    if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                for p in 0..planes {
                    let base = p * h * w;
                    for y in 0..h {
                        for x in 0..w {
                            let i = base + y * w + x;
                            if x + 1 < w {
                                let d = sign(fv[i + 1] - fv[i]) * kx;
                                slot[i + 1] += d;
                                slot[i] -= d;
                            }
                            if y + 1 < h {
                                let d = sign(fv[i + w] - fv[i]) * ky;
                                slot[i + w] += d;
                                slot[i] -= d;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn add_grad(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
        let Some(g) = g else { return };
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(s, &x)| *s += x),
            slot @ None => *slot = Some(g),
        }
    }

    fn l1_backward(
        &self,
        grads: &mut [Option<Vec<T>>],
        a: Var,
        b: Var,
        weight: impl Fn(usize) -> T,
    ) {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let sign: Vec<T> = va
            .iter()
            .zip(vb)
            .enumerate()
            .map(|(i, (&x, &y))| {
                let d = x - y;
                let s = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                s * weight(i)
            })
            .collect();
        if self.wants(a) {
            let slot = accumulate(&mut grads[a.0], sign.len());
            slot.iter_mut().zip(&sign).for_each(|(s, &d)| *s += d);
        }
        if self.wants(b) {
            let slot = accumulate(&mut grads[b.0], sign.len());
            slot.iter_mut().zip(&sign).for_each(|(s, &d)| *s -= d);
        }
    }
}

fn axis0_mean<T: Real>(src: &[T], v: usize, inner: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); inner];
    for k in 0..v {
        for (m, &e) in mean.iter_mut().zip(&src[k * inner..(k + 1) * inner]) {
            *m += e;
        }
    }
    let inv = T::one() / T::of(v as f64);
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

fn smoothness_counts(planes: usize, h: usize, w: usize) -> (usize, usize) {
    (
        planes * h * w.saturating_sub(1),
        planes * h.saturating_sub(1) * w,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]))
            .unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let vals = [1.5, -0.25, 3.0, 0.0];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &vals)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &vals);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(NnError::Usage(_))));
    }

    #[test]
    fn non_finite_values_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[1e308])).unwrap();
        assert!(matches!(
            tape.scale(x, 10.0),
            Err(NnError::NonFinite("scale"))
        ));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[2.0, 0.0, -1.0])).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 0.0, -0.2]);
        let z = tape.tanh(x).unwrap();
        assert_eq!(tape.value(z).data()[1], 0.0);
        let big = tape.constant(t(&[2], &[40.0, -40.0])).unwrap();
        let tb = tape.tanh(big).unwrap();
        assert!(tape.value(tb).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn leaky_relu_gradient_at_zero_uses_positive_branch() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[0.0])).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn shared_param_nodes_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", t(&[2], &[1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id).unwrap();
        let b = tape.param(&store, id).unwrap();
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.param_grads(), vec![(id, vec![2.0, 2.0])]);
    }

    #[test]
    fn concat_swap_upsample_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 1, 3, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 4, 3, 3])).unwrap();
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 5, 3, 3]);
        let s = tape.swap_axes01(c).unwrap();
        assert_eq!(tape.shape(s), &[5, 2, 3, 3]);
        let u = tape.upsample2x(s).unwrap();
        assert_eq!(tape.shape(u), &[5, 2, 6, 6]);
    }
}
