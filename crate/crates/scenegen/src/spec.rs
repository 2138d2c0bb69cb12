use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::texture::Texture;

/// Region of a layer's plane that is opaque, in layer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Silhouette {
    Full,
    /// Half-open box `[x0, x1) × [y0, y1)`.
    Rect {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
    },
    Disk {
        cx: f32,
        cy: f32,
        r: f32,
    },
}

impl Silhouette {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Silhouette::Full => true,
            Silhouette::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Silhouette::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Pixels of horizontal shift per unit of angular coordinate.
    pub disparity: f32,
    pub texture: Texture,
    pub silhouette: Silhouette,
    /// Pixels per frame, `[x, y]`.
    pub velocity: [f32; 2],
}

/// Declarative scene; `layers` run from the background (first) to the
/// nearest plane (last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_count: usize,
    /// Nominal shift per view recorded with the rendered video.
    pub eta_scene: f32,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if self.layers.is_empty() {
            return bad("a scene needs at least a background layer".into());
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!(
                "image {}x{} is smaller than 8x8",
                self.height, self.width
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("{} channels; expected 1 or 3", self.channels));
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if !self.eta_scene.is_finite() {
            return bad("eta_scene must be finite".into());
        }
        if self.layers[0].silhouette != Silhouette::Full {
            return bad("the first layer must be a full-plane background".into());
        }
        if self.layers[1..]
            .iter()
            .any(|l| l.silhouette == Silhouette::Full)
        {
            return bad("only the background may be a full plane".into());
        }
        let limit = self.height.min(self.width) as f32 / 4.0;
        for (k, layer) in self.layers.iter().enumerate() {
            if !layer.disparity.is_finite() || layer.disparity.abs() * 4.0 >= limit {
                return bad(format!(
                    "layer {k}: disparity {} needs |d|*4 < {limit}",
                    layer.disparity
                ));
            }
            if !layer.velocity.iter().all(|v| v.is_finite()) {
                return bad(format!("layer {k}: velocity must be finite"));
            }
            layer
                .texture
                .validate()
                .map_err(|m| SceneError::Invalid(format!("layer {k}: {m}")))?;
        }
        if self
            .layers
            .windows(2)
            .any(|w| w[1].disparity <= w[0].disparity)
        {
            return bad("disparities must increase strictly from background to front".into());
        }
        Ok(())
    }

    /// Total translation of layer `k` in view `(u, v)` at frame `t`.
    pub fn offset(&self, k: usize, u: i32, v: i32, t: usize) -> (f32, f32) {
        let l = &self.layers[k];
        (
            l.disparity * u as f32 + t as f32 * l.velocity[0],
            l.disparity * v as f32 + t as f32 * l.velocity[1],
        )
    }
}
