use serde::{Deserialize, Serialize};

/// Surface appearance of a layer, in layer coordinates.
///
/// `Noise` is two octaves of smoothly interpolated value noise evaluated on
/// the integer lattice; between lattice points the texture is bilinear, the
/// same interpolant the warping operators use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Noise {
        seed: u64,
        /// Lattice spacing of the coarse octave in pixels.
        cell: f32,
        /// Values span `0.5 ± contrast/2`.
        contrast: f32,
    },
    Flat {
        value: f32,
    },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_hash(seed: u64, channel: usize, octave: usize, ix: i64, iy: i64) -> f32 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ channel as u64);
    h = splitmix(h ^ octave as u64);
    h = splitmix(h ^ ix as u64);
    h = splitmix(h ^ iy as u64);
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn octave(seed: u64, channel: usize, octave_idx: usize, cell: f32, i: i64, j: i64) -> f32 {
    let gx = i as f32 / cell;
    let gy = j as f32 / cell;
    let (x0, y0) = (gx.floor(), gy.floor());
    let (tx, ty) = (smoothstep(gx - x0), smoothstep(gy - y0));
    let (x0, y0) = (x0 as i64, y0 as i64);
    let h = |dx: i64, dy: i64| lattice_hash(seed, channel, octave_idx, x0 + dx, y0 + dy);
    let top = h(0, 0) + (h(1, 0) - h(0, 0)) * tx;
    let bottom = h(0, 1) + (h(1, 1) - h(0, 1)) * tx;
    top + (bottom - top) * ty
}

impl Texture {
    pub(crate) fn validate(&self) -> Result<(), String> {
        match *self {
            Texture::Noise { cell, contrast, .. } => {
                if !(cell.is_finite() && cell >= 2.0) {
                    return Err(format!("noise cell {cell} must be at least 2 px"));
                }
                if !(0.0..=1.0).contains(&contrast) {
                    return Err(format!("noise contrast {contrast} outside [0, 1]"));
                }
            }
            Texture::Flat { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(format!("flat value {value} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Texture value at an integer lattice point.
    pub fn lattice(&self, channel: usize, i: i64, j: i64) -> f32 {
        match *self {
            Texture::Flat { value } => value,
            Texture::Noise {
                seed,
                cell,
                contrast,
            } => {
                let n = (octave(seed, channel, 0, cell, i, j)
                    + 0.5 * octave(seed, channel, 1, cell / 2.0, i, j))
                    / 1.5;
                0.5 + contrast * (n - 0.5)
            }
        }
    }
}

/// Lattice values of one texture over an integer window, sampled bilinearly.
pub(crate) struct TextureGrid {
    x0: i64,
    y0: i64,
    w: usize,
    h: usize,
    channels: usize,
    data: Vec<f32>,
}

impl TextureGrid {
    /// Covers real sample positions in `[x_lo, x_hi] × [y_lo, y_hi]`.
    pub(crate) fn new(
        texture: &Texture,
        channels: usize,
        x_lo: f32,
        x_hi: f32,
        y_lo: f32,
        y_hi: f32,
    ) -> Self {
        let x0 = x_lo.floor() as i64 - 1;
        let y0 = y_lo.floor() as i64 - 1;
        let w = (x_hi.ceil() as i64 + 2 - x0) as usize;
        let h = (y_hi.ceil() as i64 + 2 - y0) as usize;
        let mut data = Vec::with_capacity(channels * w * h);
        for c in 0..channels {
            for j in 0..h {
                for i in 0..w {
                    data.push(texture.lattice(c, x0 + i as i64, y0 + j as i64));
                }
            }
        }
        Self {
            x0,
            y0,
            w,
            h,
            channels,
            data,
        }
    }

    pub(crate) fn sample(&self, channel: usize, x: f32, y: f32) -> f32 {
        debug_assert!(channel < self.channels);
        let fx = x - self.x0 as f32;
        let fy = y - self.y0 as f32;
        let ix = (fx.floor() as i64).clamp(0, self.w as i64 - 2) as usize;
        let iy = (fy.floor() as i64).clamp(0, self.h as i64 - 2) as usize;
        let (ax, ay) = (fx - ix as f32, fy - iy as f32);
        let plane = &self.data[channel * self.w * self.h..];
        let at = |i: usize, j: usize| plane[j * self.w + i];
        let top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * ax;
        let bottom = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * ax;
        top + (bottom - top) * ay
    }
}
