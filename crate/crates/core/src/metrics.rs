//! Full-reference image quality metrics for images with unit dynamic range.

use crate::error::{CoreError, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / err).log10())
    }
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, w) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *w = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|w| *w /= s);
    g
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows.
///
/// Both images must be single-channel and at least 11 pixels on each side.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    if a.channels() != 1 {
        return Err(CoreError::Shape(
            "ssim expects single-channel images; convert to luminance first".into(),
        ));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);

    // Horizontal pass over the five moment images, then vertical.
    let moments = |x: f64, y: f64| [x, y, x * x, y * y, x * y];
    let mut horiz = vec![[0.0f64; 5]; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut acc = [0.0f64; 5];
            for (k, &wk) in g.iter().enumerate() {
                let m = moments(a.get(0, r, c + k) as f64, b.get(0, r, c + k) as f64);
                for j in 0..5 {
                    acc[j] += wk * m[j];
                }
            }
            horiz[r * ow + c] = acc;
        }
    }

    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for r in 0..oh {
        for c in 0..ow {
            let mut m = [0.0f64; 5];
            for (k, &wk) in g.iter().enumerate() {
                let hm = &horiz[(r + k) * ow + c];
                for j in 0..5 {
                    m[j] += wk * hm[j];
                }
            }
            let (mu_a, mu_b) = (m[0], m[1]);
            let var_a = m[2] - mu_a * mu_a;
            let var_b = m[3] - mu_b * mu_b;
            let cov = m[4] - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Variance of the 4-neighbour Laplacian over the channel-averaged image,
/// excluding a `margin`-pixel border. Higher means sharper.
pub fn sharpness(img: &Image, margin: usize) -> Result<f64> {
    let (h, w, channels) = img.shape();
    let m = margin.max(1);
    if h <= 2 * m || w <= 2 * m {
        return Err(CoreError::Shape("image too small for the margin".into()));
    }
    let gray = |y: usize, x: usize| -> f64 {
        (0..channels).map(|c| img.get(c, y, x) as f64).sum::<f64>() / channels as f64
    };
    let mut values = Vec::with_capacity((h - 2 * m) * (w - 2 * m));
    for y in m..h - m {
        for x in m..w - m {
            values.push(
                gray(y - 1, x) + gray(y + 1, x) + gray(y, x - 1) + gray(y, x + 1)
                    - 4.0 * gray(y, x),
            );
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}
