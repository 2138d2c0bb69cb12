use crate::error::{CoreError, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A planar (channel-major) floating point image with 1 or 3 channels.
///
/// Values are nominally in `[0, 1]`; only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::Shape(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(CoreError::Shape(format!(
                "image extent must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(CoreError::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("image"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image from a per-pixel function `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// One channel plane, row-major.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(CoreError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Copy of the rectangle starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(CoreError::OutOfRange(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Image::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        })
    }

    /// Pads bottom/right edges by replicating the last row/column.
    pub fn pad_replicate(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(CoreError::Shape("padding cannot shrink an image".into()));
        }
        Image::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, y.min(self.height - 1), x.min(self.width - 1))
        })
    }
}

/// Rec.601 luminance of a 3-channel image.
pub fn to_luminance(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(CoreError::Shape(format!(
            "luminance needs a 3-channel image, got {}",
            img.channels()
        )));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| {
            (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(img.height(), img.width(), 1, data)
}

/// Luminance for 3-channel images, a copy for single-channel ones.
pub fn luma(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        _ => to_luminance(img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: f32, g: f32, b: f32) -> Image {
        Image::from_fn(4, 5, 3, |c, _, _| [r, g, b][c]).unwrap()
    }

    #[test]
    fn luminance_of_black_and_white() {
        let black = to_luminance(&rgb(0.0, 0.0, 0.0)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let white = to_luminance(&rgb(1.0, 1.0, 1.0)).unwrap();
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn luminance_of_pure_red_matches_scalar_oracle() {
        let red = to_luminance(&rgb(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(red.channels(), 1);
        for &v in red.data() {
            assert!((v - 0.299).abs() < 1e-7);
        }
    }

    #[test]
    fn luminance_rejects_single_channel() {
        let gray = Image::zeros(2, 2, 1).unwrap();
        assert!(matches!(to_luminance(&gray), Err(CoreError::Shape(_))));
    }

    #[test]
    fn construction_validates() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn crop_and_pad() {
        let img = Image::from_fn(4, 4, 1, |_, y, x| (y * 4 + x) as f32).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        let p = c.pad_replicate(3, 3).unwrap();
        assert_eq!(
            p.data(),
            &[6.0, 7.0, 7.0, 10.0, 11.0, 11.0, 10.0, 11.0, 11.0]
        );
        assert!(img.crop(3, 3, 2, 2).is_err());
    }
}
