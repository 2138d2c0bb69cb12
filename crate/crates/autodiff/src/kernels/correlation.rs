//! Dense local correlation between two feature maps.
//!
//! `out[n, k, y, x] = (1/C) Σ_c a[n, c, y, x] · b[n, c, y + dy, x + dx]` for
//! every displacement `(dx, dy) ∈ [-d, d]²`, channel index
//! `k = (dy + d)(2d + 1) + (dx + d)`; `b` is zero outside the image.

use crate::real::Real;

pub fn displacement_channels(max_disp: usize) -> usize {
    (2 * max_disp + 1) * (2 * max_disp + 1)
}

/// Displacement of output channel `k`.
pub fn displacement(max_disp: usize, k: usize) -> (isize, isize) {
    let side = 2 * max_disp + 1;
    let d = max_disp as isize;
    ((k % side) as isize - d, (k / side) as isize - d)
}

/// Inputs `[N, C, H, W]`, output `[N, (2d+1)², H, W]`.
pub fn correlation_forward<T: Real>(
    shape: [usize; 4],
    a: &[T],
    b: &[T],
    max_disp: usize,
) -> Vec<T> {
    let [batch, ch, h, w] = shape;
    let kk = displacement_channels(max_disp);
    let hw = h * w;
    let inv_c = T::one() / T::of(ch as f64);
    let mut out = vec![T::zero(); batch * kk * hw];
    for n in 0..batch {
        for k in 0..kk {
            let (dx, dy) = displacement(max_disp, k);
            let o = &mut out[(n * kk + k) * hw..(n * kk + k + 1) * hw];
            for c in 0..ch {
                let ap = &a[(n * ch + c) * hw..(n * ch + c + 1) * hw];
                let bp = &b[(n * ch + c) * hw..(n * ch + c + 1) * hw];
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        o[y * w + x] += ap[y * w + x] * bp[yy as usize * w + xx as usize];
                    }
                }
            }
            o.iter_mut().for_each(|v| *v *= inv_c);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn correlation_backward<T: Real>(
    shape: [usize; 4],
    a: &[T],
    b: &[T],
    max_disp: usize,
    grad_out: &[T],
    mut grad_a: Option<&mut [T]>,
    mut grad_b: Option<&mut [T]>,
) {
    let [batch, ch, h, w] = shape;
    let kk = displacement_channels(max_disp);
    let hw = h * w;
    let inv_c = T::one() / T::of(ch as f64);
    for n in 0..batch {
        for k in 0..kk {
            let (dx, dy) = displacement(max_disp, k);
            let go = &grad_out[(n * kk + k) * hw..(n * kk + k + 1) * hw];
            for c in 0..ch {
                let base = (n * ch + c) * hw;
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let g = go[y * w + x] * inv_c;
                        let p = base + y * w + x;
                        let q = base + yy as usize * w + xx as usize;
                        if let Some(ga) = grad_a.as_deref_mut() {
                            ga[p] += g * b[q];
                        }
                        if let Some(gb) = grad_b.as_deref_mut() {
                            gb[q] += g * a[p];
                        }
                    }
                }
            }
        }
    }
}
