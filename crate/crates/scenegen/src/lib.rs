//! Procedural light-field video scenes.
//!
//! A scene is a stack of fronto-parallel textured planes. Plane `k` with
//! disparity `d_k` and velocity `v_k` appears in view `(u, v)` of frame `t`
//! as its texture translated by `d_k·(u, v) + t·v_k`. Planes are composited
//! back to front, so the ground-truth disparity, occlusion and optical flow
//! are all known in closed form.

mod dataset;
mod error;
mod render;
mod spec;
mod texture;

pub use dataset::{
    make_dataset, random_spec, write_scene, Scene, SceneTemplate, Split, SCENE_FILE,
};
pub use error::{Result, SceneError};
pub use render::{gt_appearance_flow, render_frame, render_video, visible_layers};
pub use spec::{Layer, SceneSpec, Silhouette};
pub use texture::Texture;
