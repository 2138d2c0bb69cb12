use lfv_core::lightfield::{
    AngularCoord, FrameGroundTruth, LightFieldFrame, LightFieldVideo, ANGULAR_RES,
};
use lfv_core::warp::FlowField;
use lfv_core::Image;

use crate::error::Result;
use crate::spec::SceneSpec;
use crate::texture::TextureGrid;

const HALF: i32 = (ANGULAR_RES / 2) as i32;

fn grids(spec: &SceneSpec) -> Vec<TextureGrid> {
    let t_max = spec.frame_count.saturating_sub(1) as f32;
    spec.layers
        .iter()
        .map(|l| {
            let par = l.disparity.abs() * HALF as f32;
            let (vx, vy) = (l.velocity[0] * t_max, l.velocity[1] * t_max);
            TextureGrid::new(
                &l.texture,
                spec.channels,
                -par - vx.max(0.0),
                spec.width as f32 + par - vx.min(0.0),
                -par - vy.max(0.0),
                spec.height as f32 + par - vy.min(0.0),
            )
        })
        .collect()
}

/// Index of the front-most layer covering each pixel of one view.
pub fn visible_layers(spec: &SceneSpec, t: usize, coord: AngularCoord) -> Vec<u8> {
    let offsets: Vec<_> = (0..spec.layers.len())
        .map(|k| spec.offset(k, coord.u, coord.v, t))
        .collect();
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let k = (0..spec.layers.len())
                .rev()
                .find(|&k| {
                    let (ox, oy) = offsets[k];
                    spec.layers[k]
                        .silhouette
                        .contains(x as f32 - ox, y as f32 - oy)
                })
                .unwrap_or(0);
            out.push(k as u8);
        }
    }
    out
}

fn render_view(
    spec: &SceneSpec,
    grids: &[TextureGrid],
    t: usize,
    coord: AngularCoord,
    vis: &[u8],
) -> Result<Image> {
    let (h, w) = (spec.height, spec.width);
    let mut data = vec![0.0f32; spec.channels * h * w];
    let offsets: Vec<_> = (0..spec.layers.len())
        .map(|k| spec.offset(k, coord.u, coord.v, t))
        .collect();
    for c in 0..spec.channels {
        for y in 0..h {
            for x in 0..w {
                let k = vis[y * w + x] as usize;
                let (ox, oy) = offsets[k];
                data[(c * h + y) * w + x] = grids[k].sample(c, x as f32 - ox, y as f32 - oy);
            }
        }
    }
    Ok(Image::new(h, w, spec.channels, data)?)
}

struct Rendered {
    frame: LightFieldFrame,
    visibility: Vec<Vec<u8>>,
}

fn render_with_visibility(spec: &SceneSpec, grids: &[TextureGrid], t: usize) -> Result<Rendered> {
    let mut views = Vec::with_capacity(ANGULAR_RES * ANGULAR_RES);
    let mut visibility = Vec::with_capacity(views.capacity());
    for coord in AngularCoord::all() {
        let vis = visible_layers(spec, t, coord);
        views.push(render_view(spec, grids, t, coord, &vis)?);
        visibility.push(vis);
    }
    Ok(Rendered {
        frame: LightFieldFrame::new(views, t)?,
        visibility,
    })
}

/// Renders frame `t` only, without ground truth.
pub fn render_frame(spec: &SceneSpec, t: usize) -> Result<LightFieldFrame> {
    spec.validate()?;
    Ok(render_with_visibility(spec, &grids(spec), t)?.frame)
}

fn center_flow(spec: &SceneSpec, vis: &[u8], sign: f32) -> Result<FlowField> {
    let (dx, dy) = vis
        .iter()
        .map(|&k| {
            let v = spec.layers[k as usize].velocity;
            (sign * v[0], sign * v[1])
        })
        .unzip();
    Ok(FlowField::new(spec.height, spec.width, dx, dy)?)
}

fn ground_truth(
    spec: &SceneSpec,
    visibility: &[Vec<u8>],
    prev_center: Option<&[u8]>,
) -> Result<FrameGroundTruth> {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let center = &visibility[AngularCoord::CENTER.index()];
    let disparity = Image::new(
        h,
        w,
        1,
        center
            .iter()
            .map(|&k| spec.layers[k as usize].disparity)
            .collect(),
    )?;
    let layers = spec.layers.len();
    let mut seen = vec![0u16; layers * n];
    for vis in visibility {
        for (p, &k) in vis.iter().enumerate() {
            seen[k as usize * n + p] += 1;
        }
    }
    let views = visibility.len() as u16;
    let mut occlusion = vec![0.0f32; n];
    let layer_occlusion = (0..layers)
        .map(|k| {
            let data: Vec<f32> = (0..n)
                .map(|p| {
                    let s = seen[k * n + p];
                    if s > 0 && s < views {
                        occlusion[p] = 1.0;
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            Image::new(h, w, 1, data)
        })
        .collect::<lfv_core::Result<Vec<_>>>()?;
    let (flow_to_prev, flow_from_prev) = match prev_center {
        Some(prev) => (
            Some(center_flow(spec, prev, 1.0)?),
            Some(center_flow(spec, center, -1.0)?),
        ),
        None => (None, None),
    };
    Ok(FrameGroundTruth {
        disparity,
        occlusion: Image::new(h, w, 1, occlusion)?,
        layer_occlusion,
        flow_to_prev,
        flow_from_prev,
    })
}

/// Renders every frame of a scene together with its ground truth.
pub fn render_video(spec: &SceneSpec) -> Result<LightFieldVideo> {
    spec.validate()?;
    let grids = grids(spec);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut gts = Vec::with_capacity(spec.frame_count);
    let mut prev_center: Option<Vec<u8>> = None;
    for t in 0..spec.frame_count {
        let r = render_with_visibility(spec, &grids, t)?;
        gts.push(ground_truth(spec, &r.visibility, prev_center.as_deref())?);
        prev_center = Some(r.visibility[AngularCoord::CENTER.index()].clone());
        frames.push(r.frame);
    }
    Ok(LightFieldVideo::new(frames)?
        .with_ground_truth(gts)?
        .with_eta(Some(spec.eta_scene)))
}

/// Residual flow that, applied after shifting the center view by `eta` per
/// view, lands each pixel of view `coord` on its source in the center view:
/// `(eta - d(p))·(u, v)` with `d(p)` the disparity visible at `p` in that view.
pub fn gt_appearance_flow(
    spec: &SceneSpec,
    t: usize,
    coord: AngularCoord,
    eta: f32,
) -> Result<FlowField> {
    spec.validate()?;
    let vis = visible_layers(spec, t, coord);
    let (dx, dy) = vis
        .iter()
        .map(|&k| {
            let r = eta - spec.layers[k as usize].disparity;
            (r * coord.u as f32, r * coord.v as f32)
        })
        .unzip();
    Ok(FlowField::new(spec.height, spec.width, dx, dy)?)
}
