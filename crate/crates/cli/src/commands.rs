use std::path::{Path, PathBuf};

use lfv_core::io::{read_video, write_image, write_video, PixelFormat, META_FILE};
use lfv_core::lightfield::{LightFieldFrame, LightFieldVideo};
use lfv_core::{extract_epi, refocus as refocus_frame, EpiSlice};
use lfv_model::{train_with, Network, NetworkConfig, TrainOptions};
use lfv_scenegen::{make_dataset, write_scene, Split};

use crate::error::{CliError, Result};
use crate::eval::evaluate;
use crate::manifest::write_atomic;
use crate::{load_config, Common, GenConfig};

pub const CHECKPOINT_BASE: &str = "model";
pub const LOSS_LOG: &str = "loss.csv";
pub const LIGHTFIELD_DIR: &str = "lightfield";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Container directories directly under `data`, sorted by name.
pub fn scene_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(data).map_err(|e| CliError::Io(format!("{}: {e}", data.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::invalid(format!(
            "{} holds no light-field containers",
            data.display()
        )));
    }
    Ok(dirs)
}

pub fn gen(common: &Common, count: Option<usize>, split: Option<Split>) -> Result<Vec<PathBuf>> {
    let mut cfg: GenConfig = load_config(common.config.as_deref())?;
    if let Some(n) = count {
        cfg.count = n;
    }
    if let Some(s) = split {
        cfg.split = s;
    }
    let scenes = make_dataset(cfg.count, &cfg.template, common.seed, cfg.split)?;
    let mut outputs = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = scene_dir_name(i);
        write_scene(&common.out.join(&name), scene, cfg.format)?;
        outputs.push(PathBuf::from(name));
    }
    Ok(outputs)
}

pub fn load_dataset(data: &Path) -> Result<Vec<LightFieldVideo>> {
    scene_dirs(data)?
        .iter()
        .map(|d| Ok(read_video(d)?))
        .collect()
}

pub fn train(common: &Common, data: &Path, checkpoint_every: usize) -> Result<Vec<PathBuf>> {
    let mut cfg = match &common.config {
        Some(path) => NetworkConfig::from_file(path)?,
        None => NetworkConfig::default(),
    };
    cfg.seed = common.seed;
    let videos = load_dataset(data)?;
    let opts = TrainOptions {
        checkpoint: Some(common.out.join(CHECKPOINT_BASE)),
        checkpoint_every,
        loss_log: Some(common.out.join(LOSS_LOG)),
    };
    let every = (cfg.total_iters / 20).max(1);
    train_with(&videos, &cfg, &opts, |r| {
        if (r.iteration + 1) % every == 0 {
            eprintln!(
                "iter {:>6}  phase {}  total {:.5}",
                r.iteration + 1,
                r.phase,
                r.total
            );
        }
    })?;
    Ok(vec![
        PathBuf::from(format!("{CHECKPOINT_BASE}.bin")),
        PathBuf::from(format!("{CHECKPOINT_BASE}.json")),
        PathBuf::from(LOSS_LOG),
    ])
}

/// Runs a trained network over the center views of `video`.
pub fn synthesize(net: &Network<f32>, video: &LightFieldVideo) -> Result<LightFieldVideo> {
    let outputs = net.synthesize_video(&video.center_views())?;
    let frames = outputs
        .into_iter()
        .zip(video.frames())
        .map(|(o, f)| o.lf_final.with_timestamp(f.timestamp()))
        .collect::<Vec<LightFieldFrame>>();
    Ok(LightFieldVideo::new(frames)?.with_eta(Some(net.config.eta)))
}

pub fn synth(
    common: &Common,
    checkpoint: &Path,
    input: &Path,
    format: PixelFormat,
) -> Result<Vec<PathBuf>> {
    let net = Network::<f32>::load(checkpoint)?;
    let video = read_video(input)?;
    let out = synthesize(&net, &video)?;
    write_video(&common.out.join(LIGHTFIELD_DIR), &out, format)?;
    Ok(vec![PathBuf::from(LIGHTFIELD_DIR)])
}

pub fn eval(
    common: &Common,
    pred: &Path,
    gt: &Path,
    label: Option<String>,
) -> Result<Vec<PathBuf>> {
    let report = evaluate(&read_video(pred)?, &read_video(gt)?)?;
    let label = label.unwrap_or_else(|| {
        pred.file_name()
            .map_or("prediction".into(), |n| n.to_string_lossy().into_owned())
    });
    let summary = report.summary(&label);
    write_atomic(&common.out.join(METRICS_FILE), report.to_csv().as_bytes())?;
    write_atomic(&common.out.join(SUMMARY_FILE), summary.as_bytes())?;
    print!("{summary}");
    Ok(vec![
        PathBuf::from(METRICS_FILE),
        PathBuf::from(SUMMARY_FILE),
    ])
}

pub fn refocus(common: &Common, input: &Path, disparity: f32) -> Result<Vec<PathBuf>> {
    if !disparity.is_finite() {
        return Err(CliError::invalid("disparity must be finite"));
    }
    let video = read_video(input)?;
    let mut outputs = Vec::new();
    for frame in video.frames() {
        let name = PathBuf::from(format!("refocus_frame_{:04}.png", frame.timestamp()));
        write_image(&common.out.join(&name), &refocus_frame(frame, disparity)?)?;
        outputs.push(name);
    }
    Ok(outputs)
}

pub fn epi(common: &Common, input: &Path, row: usize, v: i32) -> Result<Vec<PathBuf>> {
    let video = read_video(input)?;
    let mut outputs = Vec::new();
    for frame in video.frames() {
        let name = PathBuf::from(format!("epi_frame_{:04}.png", frame.timestamp()));
        write_image(
            &common.out.join(&name),
            &extract_epi(frame, EpiSlice::Row { y: row, v })?,
        )?;
        outputs.push(name);
    }
    Ok(outputs)
}
