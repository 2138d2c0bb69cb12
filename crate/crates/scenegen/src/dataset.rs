use std::fs;
use std::path::Path;

use lfv_core::io::{write_video, PixelFormat};
use lfv_core::lightfield::LightFieldVideo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::render::render_video;
use crate::spec::{Layer, SceneSpec, Silhouette};
use crate::texture::Texture;

pub const SCENE_FILE: &str = "scene.json";

/// Ranges from which random scenes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneTemplate {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_count: usize,
    pub min_layers: usize,
    pub max_layers: usize,
    pub disparity_range: [f32; 2],
    /// Velocity components are drawn from `[-max_speed, max_speed]`.
    pub max_speed: f32,
    pub eta_scene: f32,
    /// Noise cell of a layer at disparity 1; a layer at disparity `d`
    /// uses `texture_cell · (1 + d) / 2`, so nearer layers look coarser.
    pub texture_cell: f32,
    pub contrast: f32,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 1,
            frame_count: 4,
            min_layers: 2,
            max_layers: 4,
            disparity_range: [0.0, 3.0],
            max_speed: 2.0,
            eta_scene: 1.0,
            texture_cell: 8.0,
            contrast: 0.9,
        }
    }
}

impl SceneTemplate {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.disparity_range;
        let bad = |m: &str| Err(SceneError::Invalid(m.into()));
        if self.min_layers == 0 || self.min_layers > self.max_layers {
            return bad("need 1 <= min_layers <= max_layers");
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("disparity_range must be an ordered finite pair");
        }
        if self.max_layers > 1 && hi - lo < 0.2 * (self.max_layers - 1) as f32 {
            return bad("disparity_range too narrow to separate the layers");
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return bad("max_speed must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub video: LightFieldVideo,
}

fn disparities(rng: &mut ChaCha8Rng, n: usize, [lo, hi]: [f32; 2]) -> Vec<f32> {
    let min_gap = 0.2;
    for _ in 0..100 {
        let mut d: Vec<f32> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
        d.sort_by(f32::total_cmp);
        if d.windows(2).all(|w| w[1] - w[0] >= min_gap) {
            return d;
        }
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f32 / (n - 1).max(1) as f32)
        .collect()
}

fn foreground(rng: &mut ChaCha8Rng, h: f32, w: f32) -> Silhouette {
    let cx = rng.gen_range(0.25..0.75) * w;
    let cy = rng.gen_range(0.25..0.75) * h;
    if rng.gen_bool(0.5) {
        let hw = rng.gen_range(0.1..0.22) * w;
        let hh = rng.gen_range(0.1..0.22) * h;
        Silhouette::Rect {
            x0: cx - hw,
            y0: cy - hh,
            x1: cx + hw,
            y1: cy + hh,
        }
    } else {
        Silhouette::Disk {
            cx,
            cy,
            r: rng.gen_range(0.1..0.22) * w.min(h),
        }
    }
}

/// Draws one scene from `template`; identical seeds give identical specs.
pub fn random_spec(template: &SceneTemplate, seed: u64) -> Result<SceneSpec> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(template.min_layers..=template.max_layers);
    let d = disparities(&mut rng, n, template.disparity_range);
    let speed = template.max_speed;
    let layers = d
        .into_iter()
        .enumerate()
        .map(|(k, disparity)| Layer {
            disparity,
            texture: Texture::Noise {
                seed: rng.gen(),
                cell: (template.texture_cell * (1.0 + disparity) / 2.0).max(2.0),
                contrast: template.contrast,
            },
            silhouette: if k == 0 {
                Silhouette::Full
            } else {
                foreground(&mut rng, template.height as f32, template.width as f32)
            },
            velocity: if speed > 0.0 {
                [rng.gen_range(-speed..=speed), rng.gen_range(-speed..=speed)]
            } else {
                [0.0, 0.0]
            },
        })
        .collect();
    let spec = SceneSpec {
        height: template.height,
        width: template.width,
        channels: template.channels,
        frame_count: template.frame_count,
        eta_scene: template.eta_scene,
        seed,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Scene seeds: training scenes come from `[0, 2^31)`, test scenes from
/// `[2^31, 2^32)`, so the splits never share a scene.
fn scene_seeds(n: usize, seed: u64, split: Split) -> Vec<u64> {
    let base = match split {
        Split::Train => 0u64,
        Split::Test => 1 << 31,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| base + rng.gen_range(0..1u64 << 31))
        .collect()
}

pub fn make_dataset(
    n_scenes: usize,
    template: &SceneTemplate,
    seed: u64,
    split: Split,
) -> Result<Vec<Scene>> {
    if n_scenes == 0 {
        return Err(SceneError::Invalid("n_scenes must be at least 1".into()));
    }
    scene_seeds(n_scenes, seed, split)
        .into_iter()
        .map(|s| {
            let spec = random_spec(template, s)?;
            let video = render_video(&spec)?;
            Ok(Scene { spec, video })
        })
        .collect()
}

/// Writes the container plus `scene.json` into `dir`.
pub fn write_scene(dir: &Path, scene: &Scene, format: PixelFormat) -> Result<()> {
    write_video(dir, &scene.video, format)?;
    let json = serde_json::to_string_pretty(&scene.spec).expect("scene spec serializes");
    fs::write(dir.join(SCENE_FILE), json)?;
    Ok(())
}
