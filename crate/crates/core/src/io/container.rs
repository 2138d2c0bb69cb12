//! Light-field video container.
//!
//! ```text
//! <dir>/meta.json
//! <dir>/frame_0000/sai_u-4_v-4.png   (or .pfm)
//! <dir>/frame_0000/disparity.pfm     (optional ground truth)
//! ...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::io::pfm;
use crate::lightfield::{
    AngularCoord, FrameGroundTruth, LightFieldFrame, LightFieldVideo, ANGULAR_RES,
};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelFormat {
    /// 8-bit PNG (quantized).
    Png,
    /// 32-bit float PFM (lossless).
    Pfm,
}

impl PixelFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PixelFormat::Png => "png",
            PixelFormat::Pfm => "pfm",
        }
    }
}

/// Per-frame ground-truth file names, relative to the frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFiles {
    pub disparity: String,
    pub occlusion: String,
    /// Pattern with `{k}` replaced by the layer index.
    pub layer_occlusion: String,
    pub layers: usize,
    pub flow_to_prev: String,
    pub flow_from_prev: String,
}

impl Default for GroundTruthFiles {
    fn default() -> Self {
        Self {
            disparity: "disparity.pfm".into(),
            occlusion: "occlusion.pfm".into(),
            layer_occlusion: "occlusion_layer{k}.pfm".into(),
            layers: 0,
            flow_to_prev: "flow_to_prev.pfm".into(),
            flow_from_prev: "flow_from_prev.pfm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub angular: [usize; 2],
    pub frame_count: usize,
    pub frame_indices: Vec<usize>,
    pub value_range: [f32; 2],
    pub format: PixelFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthFiles>,
}

pub fn frame_dir_name(index: usize) -> String {
    format!("frame_{index:04}")
}

pub fn sai_file_name(coord: AngularCoord, format: PixelFormat) -> String {
    format!("sai_u{}_v{}.{}", coord.u, coord.v, format.extension())
}

fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w, channels) = img.shape();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = if channels == 1 {
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([q(img.get(0, y as usize, x as usize))])
        })
        .save(path)
    } else {
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([
                q(img.get(0, y, x)),
                q(img.get(1, y, x)),
                q(img.get(2, y, x)),
            ])
        })
        .save(path)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => CoreError::io(path, io),
        other => CoreError::format(path, other.to_string()),
    })
}

fn read_png(path: &Path, channels: Option<usize>) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CoreError::io(path, io),
        other => CoreError::format(path, other.to_string()),
    })?;
    let channels = channels.unwrap_or(if decoded.color().has_color() { 3 } else { 1 });
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if channels == 1 {
        let g = decoded.to_luma8();
        Image::from_fn(h, w, 1, |_, y, x| {
            g.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
        })
    } else {
        let rgb = decoded.to_rgb8();
        Image::from_fn(h, w, 3, |c, y, x| {
            rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        })
    }
}

/// Writes an image as PNG or PFM depending on the extension of `path`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => pfm::write_pfm(path, img),
        Some("png") => write_png(path, img),
        _ => Err(CoreError::format(path, "expected a .png or .pfm extension")),
    }
}

/// Reads a PNG or PFM image chosen by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => pfm::read_pfm(path),
        Some("png") => read_png(path, None),
        _ => Err(CoreError::format(path, "expected a .png or .pfm extension")),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CoreError::io(path, e))
}

pub fn write_video(dir: &Path, video: &LightFieldVideo, format: PixelFormat) -> Result<()> {
    create_dir(dir)?;
    let (height, width, channels) = video.shape();
    let gt_files = video.ground_truth().map(|gt| GroundTruthFiles {
        layers: gt.first().map_or(0, |g| g.layer_occlusion.len()),
        ..GroundTruthFiles::default()
    });
    let meta = ContainerMeta {
        height,
        width,
        channels,
        angular: [ANGULAR_RES, ANGULAR_RES],
        frame_count: video.len(),
        frame_indices: video.frames().iter().map(|f| f.timestamp()).collect(),
        value_range: [0.0, 1.0],
        format,
        eta: video.eta(),
        ground_truth: gt_files.clone(),
    };
    for (i, frame) in video.frames().iter().enumerate() {
        let fdir = dir.join(frame_dir_name(frame.timestamp()));
        create_dir(&fdir)?;
        for coord in AngularCoord::all() {
            let path = fdir.join(sai_file_name(coord, format));
            match format {
                PixelFormat::Png => write_png(&path, frame.view(coord))?,
                PixelFormat::Pfm => pfm::write_pfm(&path, frame.view(coord))?,
            }
        }
        if let (Some(files), Some(gt)) = (&gt_files, video.ground_truth()) {
            let g = &gt[i];
            pfm::write_pfm(&fdir.join(&files.disparity), &g.disparity)?;
            pfm::write_pfm(&fdir.join(&files.occlusion), &g.occlusion)?;
            for (k, m) in g.layer_occlusion.iter().enumerate() {
                let name = files.layer_occlusion.replace("{k}", &k.to_string());
                pfm::write_pfm(&fdir.join(name), m)?;
            }
            if let Some(f) = &g.flow_to_prev {
                pfm::write_flow(&fdir.join(&files.flow_to_prev), f)?;
            }
            if let Some(f) = &g.flow_from_prev {
                pfm::write_flow(&fdir.join(&files.flow_from_prev), f)?;
            }
        }
    }
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, json).map_err(|e| CoreError::io(&meta_path, e))
}

pub fn read_meta(dir: &Path) -> Result<ContainerMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let meta: ContainerMeta =
        serde_json::from_str(&text).map_err(|e| CoreError::format(&path, e.to_string()))?;
    if meta.angular != [ANGULAR_RES, ANGULAR_RES] {
        return Err(CoreError::format(
            &path,
            "only 9x9 angular grids are supported",
        ));
    }
    if meta.frame_indices.len() != meta.frame_count {
        return Err(CoreError::format(
            &path,
            "frame_indices length != frame_count",
        ));
    }
    Ok(meta)
}

pub fn read_video(dir: &Path) -> Result<LightFieldVideo> {
    let meta = read_meta(dir)?;
    let mut frames = Vec::with_capacity(meta.frame_count);
    let mut gts = Vec::new();
    for &t in &meta.frame_indices {
        let fdir = dir.join(frame_dir_name(t));
        let views = AngularCoord::all()
            .map(|coord| {
                let path = fdir.join(sai_file_name(coord, meta.format));
                let img = match meta.format {
                    PixelFormat::Png => read_png(&path, Some(meta.channels))?,
                    PixelFormat::Pfm => pfm::read_pfm(&path)?,
                };
                if img.shape() != (meta.height, meta.width, meta.channels) {
                    return Err(CoreError::format(
                        &path,
                        "view shape disagrees with meta.json",
                    ));
                }
                Ok(img)
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(LightFieldFrame::new(views, t)?);
        if let Some(files) = &meta.ground_truth {
            let optional_flow = |name: &str| -> Result<_> {
                let path = fdir.join(name);
                if path.exists() {
                    pfm::read_flow(&path).map(Some)
                } else {
                    Ok(None)
                }
            };
            gts.push(FrameGroundTruth {
                disparity: pfm::read_pfm(&fdir.join(&files.disparity))?,
                occlusion: pfm::read_pfm(&fdir.join(&files.occlusion))?,
                layer_occlusion: (0..files.layers)
                    .map(|k| {
                        pfm::read_pfm(
                            &fdir.join(files.layer_occlusion.replace("{k}", &k.to_string())),
                        )
                    })
                    .collect::<Result<_>>()?,
                flow_to_prev: optional_flow(&files.flow_to_prev)?,
                flow_from_prev: optional_flow(&files.flow_from_prev)?,
            });
        }
    }
    let mut video = LightFieldVideo::new(frames)?.with_eta(meta.eta);
    if meta.ground_truth.is_some() {
        video = video.with_ground_truth(gts)?;
    }
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sai_names_carry_signs() {
        let c = AngularCoord::new(-4, 3).unwrap();
        assert_eq!(sai_file_name(c, PixelFormat::Png), "sai_u-4_v3.png");
        assert_eq!(frame_dir_name(7), "frame_0007");
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(3, 4, 3, |c, y, x| ((c + y + x) % 5) as f32 / 4.0).unwrap();
        let path = dir.path().join("a.png");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn missing_container_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_video(&dir.path().join("nope")),
            Err(CoreError::Io { .. })
        ));
    }
}
