use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::warp::{self, FlowField};

/// Views per angular axis.
pub const ANGULAR_RES: usize = 9;
/// Views per frame.
pub const NUM_VIEWS: usize = ANGULAR_RES * ANGULAR_RES;
const HALF: i32 = (ANGULAR_RES / 2) as i32;

/// Angular position of a sub-aperture image; `u` is horizontal, `v` vertical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AngularCoord {
    pub u: i32,
    pub v: i32,
}

impl AngularCoord {
    pub const CENTER: AngularCoord = AngularCoord { u: 0, v: 0 };

    pub fn new(u: i32, v: i32) -> Result<Self> {
        if u.abs() > HALF || v.abs() > HALF {
            return Err(CoreError::OutOfRange(format!(
                "angular coordinate ({u}, {v}) outside [-{HALF}, {HALF}]"
            )));
        }
        Ok(Self { u, v })
    }

    /// Row-major index with `v` as the row.
    pub fn index(self) -> usize {
        ((self.v + HALF) as usize) * ANGULAR_RES + (self.u + HALF) as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_VIEWS, "view index {index} out of range");
        Self {
            u: (index % ANGULAR_RES) as i32 - HALF,
            v: (index / ANGULAR_RES) as i32 - HALF,
        }
    }

    pub fn is_center(self) -> bool {
        self == Self::CENTER
    }

    /// All 81 coordinates in index order.
    pub fn all() -> impl Iterator<Item = AngularCoord> {
        (0..NUM_VIEWS).map(AngularCoord::from_index)
    }
}

/// One 9×9 light field at a time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldFrame {
    views: Vec<Image>,
    timestamp: usize,
}

impl LightFieldFrame {
    /// `views` must be in [`AngularCoord::index`] order.
    pub fn new(views: Vec<Image>, timestamp: usize) -> Result<Self> {
        if views.len() != NUM_VIEWS {
            return Err(CoreError::Shape(format!(
                "light field needs {NUM_VIEWS} views, got {}",
                views.len()
            )));
        }
        let shape = views[0].shape();
        if let Some(bad) = views.iter().position(|v| v.shape() != shape) {
            return Err(CoreError::Shape(format!(
                "view {bad} has shape {:?}, expected {shape:?}",
                views[bad].shape()
            )));
        }
        Ok(Self { views, timestamp })
    }

    pub fn from_fn(timestamp: usize, f: impl FnMut(AngularCoord) -> Image) -> Result<Self> {
        Self::new(AngularCoord::all().map(f).collect(), timestamp)
    }

    pub fn view(&self, coord: AngularCoord) -> &Image {
        &self.views[coord.index()]
    }

    pub fn center(&self) -> &Image {
        self.view(AngularCoord::CENTER)
    }

    pub fn views(&self) -> &[Image] {
        &self.views
    }

    pub fn into_views(self) -> Vec<Image> {
        self.views
    }

    pub fn timestamp(&self) -> usize {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: usize) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// `(height, width, channels)` shared by all views.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.views[0].shape()
    }

    pub fn height(&self) -> usize {
        self.views[0].height()
    }

    pub fn width(&self) -> usize {
        self.views[0].width()
    }

    pub fn channels(&self) -> usize {
        self.views[0].channels()
    }

    pub fn map_views(&self, f: impl FnMut(&Image) -> Result<Image>) -> Result<Self> {
        Self::new(
            self.views.iter().map(f).collect::<Result<Vec<_>>>()?,
            self.timestamp,
        )
    }
}

/// Exact per-frame ground truth emitted by the synthetic renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGroundTruth {
    /// Disparity of the visible surface in the center view (px/view).
    pub disparity: Image,
    /// 1 where the visible layer differs across the angular grid.
    pub occlusion: Image,
    /// Per layer: 1 where that layer is visible in some views but not all.
    pub layer_occlusion: Vec<Image>,
    /// Center-view flow with `frame_t(p + f) = frame_{t-1}(p)`; absent at t = 0.
    pub flow_to_prev: Option<FlowField>,
    /// Center-view flow with `frame_{t-1}(p + f) = frame_t(p)`; absent at t = 0.
    pub flow_from_prev: Option<FlowField>,
}

/// Time-ordered light-field frames with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldVideo {
    frames: Vec<LightFieldFrame>,
    ground_truth: Option<Vec<FrameGroundTruth>>,
    eta: Option<f32>,
}

impl LightFieldVideo {
    pub fn new(frames: Vec<LightFieldFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(CoreError::Shape("video needs at least one frame".into()));
        }
        let shape = frames[0].shape();
        for pair in frames.windows(2) {
            if pair[1].timestamp() <= pair[0].timestamp() {
                return Err(CoreError::Domain(format!(
                    "frame indices must increase strictly ({} then {})",
                    pair[0].timestamp(),
                    pair[1].timestamp()
                )));
            }
        }
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(CoreError::Shape("frames differ in shape".into()));
        }
        Ok(Self {
            frames,
            ground_truth: None,
            eta: None,
        })
    }

    pub fn with_ground_truth(mut self, gt: Vec<FrameGroundTruth>) -> Result<Self> {
        if gt.len() != self.frames.len() {
            return Err(CoreError::Shape(format!(
                "{} ground-truth entries for {} frames",
                gt.len(),
                self.frames.len()
            )));
        }
        let (h, w, _) = self.shape();
        for g in &gt {
            if g.disparity.height() != h || g.disparity.width() != w {
                return Err(CoreError::Shape("ground-truth disparity size".into()));
            }
        }
        self.ground_truth = Some(gt);
        Ok(self)
    }

    pub fn with_eta(mut self, eta: Option<f32>) -> Self {
        self.eta = eta;
        self
    }

    pub fn frames(&self) -> &[LightFieldFrame] {
        &self.frames
    }

    pub fn ground_truth(&self) -> Option<&[FrameGroundTruth]> {
        self.ground_truth.as_deref()
    }

    pub fn eta(&self) -> Option<f32> {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    /// The monocular video formed by the center views.
    pub fn center_views(&self) -> Vec<Image> {
        self.frames.iter().map(|f| f.center().clone()).collect()
    }
}

/// Averages per-view samples in view-index order, accumulating in `f64`.
fn average_views(
    lf: &LightFieldFrame,
    mut sample: impl FnMut(&Image, AngularCoord, usize, usize, usize) -> f32,
) -> Result<Image> {
    let (h, w, channels) = lf.shape();
    let mut acc = vec![0.0f64; h * w * channels];
    for coord in AngularCoord::all() {
        let view = lf.view(coord);
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    acc[(c * h + y) * w + x] += sample(view, coord, c, y, x) as f64;
                }
            }
        }
    }
    let n = NUM_VIEWS as f64;
    Image::new(
        h,
        w,
        channels,
        acc.into_iter().map(|s| (s / n) as f32).collect(),
    )
}

/// Per-pixel mean over the 81 views.
pub fn mean_image(lf: &LightFieldFrame) -> Result<Image> {
    average_views(lf, |view, _, c, y, x| view.get(c, y, x))
}

/// Per-pixel population variance (÷81) over the views, per channel.
pub fn variance_image(lf: &LightFieldFrame) -> Result<Image> {
    let (h, w, channels) = lf.shape();
    let n = h * w * channels;
    let mut mean = vec![0.0f64; n];
    for view in lf.views() {
        for (m, &v) in mean.iter_mut().zip(view.data()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= NUM_VIEWS as f64;
    }
    let mut var = vec![0.0f64; n];
    for view in lf.views() {
        for ((s, &v), m) in var.iter_mut().zip(view.data()).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    Image::new(
        h,
        w,
        channels,
        var.into_iter()
            .map(|s| (s / NUM_VIEWS as f64) as f32)
            .collect(),
    )
}

/// How a variance image is binarized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Threshold at the given quantile (in `[0, 1]`) of the variance values.
    Percentile(f32),
    /// Fixed threshold.
    Absolute(f32),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Percentile(0.9)
    }
}

impl ThresholdPolicy {
    pub fn threshold(&self, values: &[f32]) -> f32 {
        match *self {
            ThresholdPolicy::Absolute(t) => t,
            ThresholdPolicy::Percentile(q) => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f32::total_cmp);
                let q = q.clamp(0.0, 1.0);
                let rank = (q * (sorted.len() - 1) as f32).round() as usize;
                sorted[rank]
            }
        }
    }
}

/// Binary variance masks, one per view in index order: the variance image is
/// shifted to each view position like the center view, then thresholded
/// (strictly greater than the threshold marks 1).
pub fn variance_mask(var: &Image, policy: ThresholdPolicy, eta: f32) -> Result<Vec<Image>> {
    if var.channels() != 1 {
        return Err(CoreError::Shape(
            "variance mask needs a single-channel variance image".into(),
        ));
    }
    if var.data().iter().any(|&v| v < 0.0) {
        return Err(CoreError::Domain("variance must be non-negative".into()));
    }
    let threshold = policy.threshold(var.data());
    AngularCoord::all()
        .map(|coord| {
            let shifted = warp::shift_input(var, coord, eta)?;
            shifted.map(|v| if v > threshold { 1.0 } else { 0.0 })
        })
        .collect()
}

/// Which scanline set an EPI is cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiSlice {
    /// Spatial row `y` across the horizontal angular axis at vertical view `v`.
    Row { y: usize, v: i32 },
    /// Spatial column `x` across the vertical angular axis at horizontal view `u`.
    Column { x: usize, u: i32 },
}

/// Epipolar plane image: one scanline per view along an angular axis, so a
/// row EPI is `9 × width` and a column EPI is `9 × height`.
pub fn extract_epi(lf: &LightFieldFrame, slice: EpiSlice) -> Result<Image> {
    let (h, w, channels) = lf.shape();
    let half = HALF;
    match slice {
        EpiSlice::Row { y, v } => {
            if y >= h {
                return Err(CoreError::OutOfRange(format!("row {y} >= height {h}")));
            }
            AngularCoord::new(0, v)?;
            Image::from_fn(ANGULAR_RES, w, channels, |c, i, x| {
                lf.view(AngularCoord {
                    u: i as i32 - half,
                    v,
                })
                .get(c, y, x)
            })
        }
        EpiSlice::Column { x, u } => {
            if x >= w {
                return Err(CoreError::OutOfRange(format!("column {x} >= width {w}")));
            }
            AngularCoord::new(u, 0)?;
            Image::from_fn(ANGULAR_RES, h, channels, |c, i, y| {
                lf.view(AngularCoord {
                    u,
                    v: i as i32 - half,
                })
                .get(c, y, x)
            })
        }
    }
}

/// Synthetic refocus at disparity `d`: every view is shifted by `d` pixels per
/// view back onto the center view (bilinear, edge clamped) and averaged.
pub fn refocus(lf: &LightFieldFrame, d: f32) -> Result<Image> {
    let (h, w, _) = lf.shape();
    if !d.is_finite() || (d * HALF as f32).abs() >= h.min(w) as f32 {
        return Err(CoreError::Domain(format!(
            "refocus disparity {d} exceeds the image extent"
        )));
    }
    average_views(lf, |view, coord, c, y, x| {
        warp::kernels::sample(
            view.plane(c),
            h,
            w,
            x as f32 + d * coord.u as f32,
            y as f32 + d * coord.v as f32,
        )
    })
}
