//! Conversions between images and tensors.

use lfv_autodiff::{Real, Tensor};
use lfv_core::lightfield::{LightFieldFrame, NUM_VIEWS};
use lfv_core::warp::FlowField;
use lfv_core::Image;

use crate::error::Result;

/// `[1, C, H, W]` tensor of an image.
pub fn image_tensor<T: Real>(img: &Image) -> Tensor<T> {
    let (h, w, c) = img.shape();
    Tensor::new(
        &[1, c, h, w],
        img.data().iter().map(|&v| T::of(v as f64)).collect(),
    )
    .expect("image data matches its shape")
}

/// `[81, C, H, W]` tensor of a light-field frame.
pub fn frame_tensor<T: Real>(lf: &LightFieldFrame) -> Tensor<T> {
    let (h, w, c) = lf.shape();
    let data = lf
        .views()
        .iter()
        .flat_map(|v| v.data().iter().map(|&x| T::of(x as f64)))
        .collect();
    Tensor::new(&[NUM_VIEWS, c, h, w], data).expect("frame data matches its shape")
}

/// Stacks per-view images into `[81, C, H, W]`.
pub fn views_tensor<T: Real>(views: &[Image]) -> Tensor<T> {
    let (h, w, c) = views[0].shape();
    let data = views
        .iter()
        .flat_map(|v| v.data().iter().map(|&x| T::of(x as f64)))
        .collect();
    Tensor::new(&[views.len(), c, h, w], data).expect("views share a shape")
}

/// Splits an `[N, C, H, W]` tensor into `N` images.
pub fn tensor_views<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let s = t.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let len = c * h * w;
    (0..n)
        .map(|i| {
            let data = t.data()[i * len..(i + 1) * len]
                .iter()
                .map(|v| v.as_f64() as f32)
                .collect();
            Ok(Image::new(h, w, c, data)?)
        })
        .collect()
}

pub fn tensor_frame<T: Real>(t: &Tensor<T>, timestamp: usize) -> Result<LightFieldFrame> {
    Ok(LightFieldFrame::new(tensor_views(t)?, timestamp)?)
}

/// Splits `[N, 2, H, W]` into `N` flow fields.
pub fn tensor_flows<T: Real>(t: &Tensor<T>) -> Result<Vec<FlowField>> {
    let s = t.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let hw = h * w;
    (0..n)
        .map(|i| {
            let plane = |k: usize| {
                t.data()[(2 * i + k) * hw..(2 * i + k + 1) * hw]
                    .iter()
                    .map(|v| v.as_f64() as f32)
                    .collect()
            };
            Ok(FlowField::new(h, w, plane(0), plane(1))?)
        })
        .collect()
}

/// `[1, 2, H, W]` tensor of one flow field.
pub fn flow_tensor<T: Real>(f: &FlowField) -> Tensor<T> {
    let data = f
        .dx()
        .iter()
        .chain(f.dy())
        .map(|&v| T::of(v as f64))
        .collect();
    Tensor::new(&[1, 2, f.height(), f.width()], data).expect("flow data matches its shape")
}
