//! Light-field video primitives.
//!
//! A light-field frame is a 9×9 grid of sub-aperture images (SAIs) indexed by
//! an angular coordinate `(u, v)` in `[-4, 4]²`, with `(0, 0)` the center view.
//! This crate holds the data model, the non-differentiable light-field
//! utilities (mean/variance images, EPIs, refocusing), the geometric warping
//! operators shared with the network code, PSNR/SSIM, and the on-disk
//! container format.

pub mod error;
pub mod image;
pub mod io;
pub mod lightfield;
pub mod metrics;
pub mod warp;

pub use crate::error::{CoreError, Result};
pub use crate::image::{to_luminance, Image};
pub use crate::lightfield::{
    extract_epi, mean_image, refocus, variance_image, variance_mask, AngularCoord, EpiSlice,
    FrameGroundTruth, LightFieldFrame, LightFieldVideo, ThresholdPolicy, ANGULAR_RES, NUM_VIEWS,
};
pub use crate::metrics::{psnr, sharpness, ssim};
pub use crate::warp::{
    bilinear_warp, bilinear_warp_backward, in_frame_mask, shift_input, temporal_error, valid_mask,
    FlowField, ValidMask,
};
