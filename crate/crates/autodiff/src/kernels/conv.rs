//! Direct convolution (cross-correlation) over up to three spatial axes via
//! im2col and GEMM. Two-dimensional convolution is the `depth == 1` case.

use crate::real::{matmul, MatRef, Real};

/// Upper bound on im2col buffer size per chunk, in elements.
const COLS_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Input extent (depth, height, width).
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn output(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = self.input[a] + 2 * self.padding[a];
            out[a] = if padded < self.kernel[a] {
                0
            } else {
                (padded - self.kernel[a]) / self.stride[a] + 1
            };
        }
        out
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn input_len(&self) -> usize {
        self.in_ch * self.input.iter().product::<usize>()
    }

    fn output_len(&self) -> usize {
        self.out_ch * self.output().iter().product::<usize>()
    }

    /// Output depth slices processed per im2col chunk.
    fn depth_chunk(&self) -> usize {
        let [_, oh, ow] = self.output();
        let per_slice = self.patch_len() * oh * ow;
        (COLS_BUDGET / per_slice.max(1)).max(1)
    }
}

/// Fills `cols[K × (z1-z0)*oh*ow]` for output depth slices `z0..z1`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], z0: usize, z1: usize, cols: &mut [T]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [_, oh, ow] = g.output();
    let l = (z1 - z0) * oh * ow;
    let mut row = 0;
    for ci in 0..g.in_ch {
        let xc = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * l..(row + 1) * l];
                    let mut i = 0;
                    for oz in z0..z1 {
                        let iz = (oz * sd + kz) as isize - pd as isize;
                        if iz < 0 || iz >= d as isize {
                            dst[i..i + oh * ow].iter_mut().for_each(|v| *v = T::zero());
                            i += oh * ow;
                            continue;
                        }
                        let plane = &xc[iz as usize * h * w..(iz as usize + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                dst[i..i + ow].iter_mut().for_each(|v| *v = T::zero());
                                i += ow;
                                continue;
                            }
                            let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                dst[i] = if ix < 0 || ix >= w as isize {
                                    T::zero()
                                } else {
                                    line[ix as usize]
                                };
                                i += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatters `cols` back onto `gx` (accumulating); inverse access pattern of [`im2col`].
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], z0: usize, z1: usize, gx: &mut [T]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [_, oh, ow] = g.output();
    let l = (z1 - z0) * oh * ow;
    let mut row = 0;
    for ci in 0..g.in_ch {
        let gc = &mut gx[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * l..(row + 1) * l];
                    let mut i = 0;
                    for oz in z0..z1 {
                        let iz = (oz * sd + kz) as isize - pd as isize;
                        if iz < 0 || iz >= d as isize {
                            i += oh * ow;
                            continue;
                        }
                        let base = iz as usize * h * w;
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                i += ow;
                                continue;
                            }
                            let line = base + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix >= 0 && ix < w as isize {
                                    gc[line + ix as usize] += src[i];
                                }
                                i += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `x: [N, Cin, D, H, W]`, `weight: [Cout, Cin, kd, kh, kw]`, `bias: [Cout]`.
pub fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let [od, oh, ow] = g.output();
    let l = od * oh * ow;
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.batch * g.output_len()];
    let chunk = g.depth_chunk();
    let mut cols = vec![T::zero(); k * chunk.min(od) * oh * ow];
    for n in 0..g.batch {
        let xn = &x[n * g.input_len()..(n + 1) * g.input_len()];
        let on = &mut out[n * g.output_len()..(n + 1) * g.output_len()];
        let mut z0 = 0;
        while z0 < od {
            let z1 = (z0 + chunk).min(od);
            let lc = (z1 - z0) * oh * ow;
            im2col(g, xn, z0, z1, &mut cols[..k * lc]);
            matmul(
                MatRef::new(weight, g.out_ch, k),
                MatRef::new(&cols[..k * lc], k, lc),
                &mut on[z0 * oh * ow..],
                l,
                false,
            );
            z0 = z1;
        }
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                on[co * l..(co + 1) * l].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates gradients of [`conv_forward`] into the provided buffers.
pub fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_x: Option<&mut [T]>,
    mut grad_w: Option<&mut [T]>,
    mut grad_b: Option<&mut [T]>,
) {
    let [od, oh, ow] = g.output();
    let l = od * oh * ow;
    let k = g.patch_len();
    let chunk = g.depth_chunk();
    let cap = k * chunk.min(od) * oh * ow;
    let mut cols = vec![T::zero(); if grad_w.is_some() { cap } else { 0 }];
    let mut gcols = vec![T::zero(); if grad_x.is_some() { cap } else { 0 }];
    for n in 0..g.batch {
        let xn = &x[n * g.input_len()..(n + 1) * g.input_len()];
        let gon = &grad_out[n * g.output_len()..(n + 1) * g.output_len()];
        if let Some(gb) = grad_b.as_deref_mut() {
            for (co, b) in gb.iter_mut().enumerate() {
                *b += gon[co * l..(co + 1) * l].iter().copied().sum::<T>();
            }
        }
        let mut z0 = 0;
        while z0 < od {
            let z1 = (z0 + chunk).min(od);
            let lc = (z1 - z0) * oh * ow;
            let go = MatRef::new(&gon[z0 * oh * ow..], g.out_ch, lc).with_ld(l);
            if let Some(gw) = grad_w.as_deref_mut() {
                im2col(g, xn, z0, z1, &mut cols[..k * lc]);
                // gW[Cout×K] += gOut[Cout×L] · colsᵀ[L×K]
                matmul(go, MatRef::transposed(&cols[..k * lc], lc, k), gw, k, true);
            }
            if let Some(gx) = grad_x.as_deref_mut() {
                // gcols[K×L] = Wᵀ[K×Cout] · gOut[Cout×L]
                matmul(
                    MatRef::transposed(weight, k, g.out_ch),
                    go,
                    &mut gcols[..k * lc],
                    lc,
                    false,
                );
                col2im(
                    g,
                    &gcols[..k * lc],
                    z0,
                    z1,
                    &mut gx[n * g.input_len()..(n + 1) * g.input_len()],
                );
            }
            z0 = z1;
        }
    }
}
