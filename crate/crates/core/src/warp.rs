//! Geometric operators: input shifting, bilinear warping with analytic
//! gradients, forward-backward flow consistency, and the temporal warping error.
//!
//! Flows are backward-sampling fields: warping `src` by `flow` produces
//! `out(p) = src(p + flow(p))`. Out-of-range sample positions are clamped to
//! the image border.

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::lightfield::{AngularCoord, LightFieldFrame};

/// Forward-backward consistency tolerance in pixels.
pub const DEFAULT_CONSISTENCY_TOL: f32 = 1.0;

/// A per-pixel displacement field stored as two planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(CoreError::Shape(format!(
                "flow planes must hold {} values",
                height * width
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("flow field"));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let mut dx = Vec::with_capacity(height * width);
        let mut dy = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                dx.push(a);
                dy.push(b);
            }
        }
        Self::new(height, width, dx, dy)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Largest displacement magnitude.
    pub fn max_norm(&self) -> f32 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f32::max)
    }

    /// Mean endpoint error against another flow.
    pub fn mean_endpoint_error(&self, other: &FlowField) -> Result<f64> {
        self.check_dims(other.height, other.width)?;
        let sum: f64 = (0..self.dx.len())
            .map(|i| ((self.dx[i] - other.dx[i]) as f64).hypot((self.dy[i] - other.dy[i]) as f64))
            .sum();
        Ok(sum / self.dx.len() as f64)
    }

    fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height == height && self.width == width {
            Ok(())
        } else {
            Err(CoreError::Shape(format!(
                "flow is {}x{}, expected {height}x{width}",
                self.height, self.width
            )))
        }
    }
}

/// Binary per-pixel validity map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(CoreError::Shape("mask size mismatch".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    /// All-valid except a border of `margin` pixels.
    pub fn interior(height: usize, width: usize, margin: usize) -> Self {
        let data = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                y >= margin && x >= margin && y + margin < height && x + margin < width
            })
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn and(&self, other: &ValidMask) -> Result<ValidMask> {
        if self.height != other.height || self.width != other.width {
            return Err(CoreError::Shape("mask size mismatch".into()));
        }
        Ok(ValidMask {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
            ..self.clone()
        })
    }
}

/// Scalar kernels shared with the differentiable graph operators.
pub mod kernels {
    use num_traits::Float;

    /// Four taps of a bilinear lookup plus the partial derivatives of the
    /// sampled value with respect to the sample position.
    #[derive(Debug, Clone, Copy)]
    pub struct Taps<F> {
        pub idx: [usize; 4],
        pub weight: [F; 4],
        /// Whether the position lies inside the image along x / y; outside,
        /// clamping makes the sample constant in that coordinate.
        pub inside_x: bool,
        pub inside_y: bool,
        pub x0: usize,
        pub x1: usize,
        pub y0: usize,
        pub y1: usize,
        pub fx: F,
        pub fy: F,
    }

    #[inline]
    pub fn taps<F: Float>(height: usize, width: usize, x: F, y: F) -> Taps<F> {
        let zero = F::zero();
        let one = F::one();
        let max_x = F::from(width - 1).unwrap();
        let max_y = F::from(height - 1).unwrap();
        let inside_x = x >= zero && x <= max_x;
        let inside_y = y >= zero && y <= max_y;
        let xc = x.max(zero).min(max_x);
        let yc = y.max(zero).min(max_y);
        let x0 = xc.floor().to_usize().unwrap().min(width - 1);
        let y0 = yc.floor().to_usize().unwrap().min(height - 1);
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let fx = xc - F::from(x0).unwrap();
        let fy = yc - F::from(y0).unwrap();
        Taps {
            idx: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            weight: [
                (one - fy) * (one - fx),
                (one - fy) * fx,
                fy * (one - fx),
                fy * fx,
            ],
            inside_x,
            inside_y,
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
        }
    }

    #[inline]
    pub fn sample<F: Float>(plane: &[F], height: usize, width: usize, x: F, y: F) -> F {
        let t = taps(height, width, x, y);
        t.weight[0] * plane[t.idx[0]]
            + t.weight[1] * plane[t.idx[1]]
            + t.weight[2] * plane[t.idx[2]]
            + t.weight[3] * plane[t.idx[3]]
    }

    /// d(sample)/dx and d(sample)/dy at the given taps.
    #[inline]
    pub fn sample_gradient<F: Float>(plane: &[F], t: &Taps<F>) -> (F, F) {
        let one = F::one();
        let (a, b, c, d) = (
            plane[t.idx[0]],
            plane[t.idx[1]],
            plane[t.idx[2]],
            plane[t.idx[3]],
        );
        let gx = if t.inside_x && t.x1 != t.x0 {
            (one - t.fy) * (b - a) + t.fy * (d - c)
        } else {
            F::zero()
        };
        let gy = if t.inside_y && t.y1 != t.y0 {
            (one - t.fx) * (c - a) + t.fx * (d - b)
        } else {
            F::zero()
        };
        (gx, gy)
    }

    /// Warps `channels` planes of `src` by the flow planes into `out`.
    pub fn warp_forward<F: Float>(
        src: &[F],
        channels: usize,
        height: usize,
        width: usize,
        flow_x: &[F],
        flow_y: &[F],
        out: &mut [F],
    ) {
        let n = height * width;
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let t = taps(
                    height,
                    width,
                    F::from(x).unwrap() + flow_x[p],
                    F::from(y).unwrap() + flow_y[p],
                );
                for c in 0..channels {
                    let plane = &src[c * n..(c + 1) * n];
                    out[c * n + p] = t.weight[0] * plane[t.idx[0]]
                        + t.weight[1] * plane[t.idx[1]]
                        + t.weight[2] * plane[t.idx[2]]
                        + t.weight[3] * plane[t.idx[3]];
                }
            }
        }
    }

    /// Accumulates gradients of a warp into `grad_src` and the flow planes.
    #[allow(clippy::too_many_arguments)]
    pub fn warp_backward<F: Float>(
        src: &[F],
        channels: usize,
        height: usize,
        width: usize,
        flow_x: &[F],
        flow_y: &[F],
        upstream: &[F],
        mut grad_src: Option<&mut [F]>,
        mut grad_flow: Option<(&mut [F], &mut [F])>,
    ) {
        let n = height * width;
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let t = taps(
                    height,
                    width,
                    F::from(x).unwrap() + flow_x[p],
                    F::from(y).unwrap() + flow_y[p],
                );
                let mut gfx = F::zero();
                let mut gfy = F::zero();
                for c in 0..channels {
                    let g = upstream[c * n + p];
                    if g == F::zero() {
                        continue;
                    }
                    if let Some(gs) = grad_src.as_deref_mut() {
                        let gs = &mut gs[c * n..(c + 1) * n];
                        for k in 0..4 {
                            gs[t.idx[k]] = gs[t.idx[k]] + t.weight[k] * g;
                        }
                    }
                    if grad_flow.is_some() {
                        let (dx, dy) = sample_gradient(&src[c * n..(c + 1) * n], &t);
                        gfx = gfx + dx * g;
                        gfy = gfy + dy * g;
                    }
                }
                if let Some((gx, gy)) = grad_flow.as_mut() {
                    gx[p] = gx[p] + gfx;
                    gy[p] = gy[p] + gfy;
                }
            }
        }
    }
}

fn check_flow_matches(img: &Image, flow: &FlowField) -> Result<()> {
    flow.check_dims(img.height(), img.width())
}

/// Translates the center view towards angular position `coord` by
/// `eta` pixels per view: `out(x, y) = center(x - eta*u, y - eta*v)`.
pub fn shift_input(center: &Image, coord: AngularCoord, eta: f32) -> Result<Image> {
    let limit = center.height().min(center.width()) as f32 / 2.0;
    if !eta.is_finite() || (eta * 4.0).abs() >= limit {
        return Err(CoreError::Domain(format!(
            "shift constant {eta} too large for a {}x{} image",
            center.height(),
            center.width()
        )));
    }
    let (du, dv) = (coord.u as f32 * eta, coord.v as f32 * eta);
    let flow = FlowField::constant(center.height(), center.width(), -du, -dv);
    bilinear_warp(center, &flow)
}

/// `out(p) = src(p + flow(p))`, bilinear with edge clamping.
pub fn bilinear_warp(src: &Image, flow: &FlowField) -> Result<Image> {
    check_flow_matches(src, flow)?;
    let mut out = vec![0.0f32; src.len()];
    kernels::warp_forward(
        src.data(),
        src.channels(),
        src.height(),
        src.width(),
        flow.dx(),
        flow.dy(),
        &mut out,
    );
    Image::new(src.height(), src.width(), src.channels(), out)
}

/// Analytic gradients of [`bilinear_warp`] given the upstream gradient.
pub fn bilinear_warp_backward(
    src: &Image,
    flow: &FlowField,
    upstream: &Image,
) -> Result<(Image, FlowField)> {
    check_flow_matches(src, flow)?;
    src.check_same_shape(upstream, "upstream gradient")?;
    let (h, w) = (src.height(), src.width());
    let mut grad_src = vec![0.0f32; src.len()];
    let mut gx = vec![0.0f32; h * w];
    let mut gy = vec![0.0f32; h * w];
    kernels::warp_backward(
        src.data(),
        src.channels(),
        h,
        w,
        flow.dx(),
        flow.dy(),
        upstream.data(),
        Some(&mut grad_src),
        Some((&mut gx, &mut gy)),
    );
    Ok((
        Image::new(h, w, src.channels(), grad_src)?,
        FlowField::new(h, w, gx, gy)?,
    ))
}

/// Marks pixels whose forward flow, followed by the backward flow sampled at
/// the landing point, returns within `tol` pixels of the start.
pub fn valid_mask(flow_fw: &FlowField, flow_bw: &FlowField, tol: f32) -> Result<ValidMask> {
    flow_fw.check_dims(flow_bw.height(), flow_bw.width())?;
    let (h, w) = (flow_fw.height(), flow_fw.width());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow_fw.at(y, x);
            let (sx, sy) = (x as f32 + fx, y as f32 + fy);
            let bx = kernels::sample(flow_bw.dx(), h, w, sx, sy);
            let by = kernels::sample(flow_bw.dy(), h, w, sx, sy);
            data.push((fx + bx).hypot(fy + by) <= tol);
        }
    }
    ValidMask::new(h, w, data)
}

/// Marks pixels whose flow lands inside the frame, where the warp needs no
/// edge clamping.
pub fn in_frame_mask(flow: &FlowField) -> ValidMask {
    let (h, w) = (flow.height(), flow.width());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(y, x);
            let (sx, sy) = (x as f32 + fx, y as f32 + fy);
            data.push(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32);
        }
    }
    ValidMask {
        height: h,
        width: w,
        data,
    }
}

/// Optical-flow warping error between consecutive light-field frames.
///
/// Every non-center view of `lf_t` is warped by the shared flow and compared
/// with the same view of `lf_prev`; the masked L1 distance of each view is
/// divided by the number of valid pixels and the result averaged over the 80
/// non-center views.
pub fn temporal_error(
    lf_t: &LightFieldFrame,
    lf_prev: &LightFieldFrame,
    flow_t_to_prev: &FlowField,
    mask: &ValidMask,
) -> Result<f64> {
    if lf_t.shape() != lf_prev.shape() {
        return Err(CoreError::Shape(format!(
            "frames differ in shape: {:?} vs {:?}",
            lf_t.shape(),
            lf_prev.shape()
        )));
    }
    let (h, w, channels) = lf_t.shape();
    flow_t_to_prev.check_dims(h, w)?;
    if mask.height() != h || mask.width() != w {
        return Err(CoreError::Shape("valid mask does not match frame".into()));
    }
    let valid = mask.count();
    if valid == 0 {
        return Err(CoreError::UndefinedMetric(
            "temporal error needs at least one valid pixel".into(),
        ));
    }
    let n = h * w;
    let mut total = 0.0f64;
    for coord in AngularCoord::all().filter(|c| !c.is_center()) {
        let warped = bilinear_warp(lf_t.view(coord), flow_t_to_prev)?;
        let target = lf_prev.view(coord);
        let mut l1 = 0.0f64;
        for c in 0..channels {
            let (a, b) = (warped.plane(c), target.plane(c));
            for p in 0..n {
                if mask.data[p] {
                    l1 += (a[p] as f64 - b[p] as f64).abs();
                }
            }
        }
        total += l1 / valid as f64;
    }
    Ok(total / (crate::lightfield::NUM_VIEWS - 1) as f64)
}

/// Samples a single-channel plane generically; exposed for callers that
/// hold non-`f32` buffers.
pub fn sample_plane<F: Float>(plane: &[F], height: usize, width: usize, x: F, y: F) -> F {
    kernels::sample(plane, height, width, x, y)
}
