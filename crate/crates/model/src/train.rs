use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use lfv_autodiff::{Adam, AdamConfig, Tape, Var};
use lfv_core::lightfield::{LightFieldFrame, LightFieldVideo};
use lfv_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::convert::{frame_tensor, image_tensor};
use crate::error::{ModelError, Result};
use crate::losses::{loss_flow, loss_lf, loss_occ, loss_percep, loss_temp};
use crate::network::Network;
use crate::synth::{variance_masks, PassOptions};

/// Loss terms of one iteration; terms that were not evaluated are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    /// 1 during warmup, 2 afterwards.
    pub phase: u8,
    pub global: f64,
    pub local: f64,
    pub occ: Option<f64>,
    pub percep: Option<f64>,
    pub temp: Option<f64>,
    pub flow: Option<f64>,
    pub total: f64,
    /// Consistency-masked terms skipped because their mask was empty.
    pub dropped_terms: usize,
}

pub const CSV_HEADER: &str = "iteration,phase,global,local,occ,percep,temp,flow,total";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        format!(
            "{},{},{:.8},{:.8},{},{},{},{},{:.8}",
            self.iteration,
            self.phase,
            self.global,
            self.local,
            opt(self.occ),
            opt(self.percep),
            opt(self.temp),
            opt(self.flow),
            self.total
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoint base path (`.bin`/`.json` are appended).
    pub checkpoint: Option<PathBuf>,
    /// Save every this many iterations; the final state is always saved.
    pub checkpoint_every: usize,
    /// CSV loss log.
    pub loss_log: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub records: Vec<LossRecord>,
}

/// One training example: a crop of frame `t` and of frame `t - 1`.
struct Sample {
    gt: LightFieldFrame,
    frame_t: Image,
    frame_prev: Image,
}

fn check_dataset(dataset: &[LightFieldVideo], crop: usize) -> Result<usize> {
    let first = dataset
        .first()
        .ok_or_else(|| ModelError::Input("empty training dataset".into()))?;
    let (_, _, channels) = first.shape();
    for (i, v) in dataset.iter().enumerate() {
        let (h, w, c) = v.shape();
        if c != channels {
            return Err(ModelError::Input(format!(
                "video {i} has {c} channels, expected {channels}"
            )));
        }
        if h < crop || w < crop {
            return Err(ModelError::Input(format!(
                "video {i} is {h}x{w}, smaller than the {crop}px crop"
            )));
        }
    }
    Ok(channels)
}

fn draw(rng: &mut ChaCha8Rng, dataset: &[LightFieldVideo], crop: usize) -> Result<Sample> {
    let video = &dataset[rng.gen_range(0..dataset.len())];
    let n = video.len();
    let t = if n > 1 { rng.gen_range(1..n) } else { 0 };
    let (h, w, _) = video.shape();
    let y = rng.gen_range(0..=h - crop);
    let x = rng.gen_range(0..=w - crop);
    let cut = |img: &Image| img.crop(y, x, crop, crop);
    let gt = video.frames()[t].map_views(cut)?;
    Ok(Sample {
        frame_t: gt.center().clone(),
        frame_prev: cut(video.frames()[t.saturating_sub(1)].center())?,
        gt,
    })
}

fn value(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).item() as f64
}

/// Adds `w · term` to the running total when `w > 0`.
fn accumulate(tape: &mut Tape<f32>, total: &mut Option<Var>, term: Var, w: f32) -> Result<()> {
    if w <= 0.0 {
        return Ok(());
    }
    let scaled = tape.scale(term, w)?;
    *total = Some(match *total {
        Some(t) => tape.add(t, scaled)?,
        None => scaled,
    });
    Ok(())
}

fn step(
    net: &Network<f32>,
    sample: &Sample,
    iteration: usize,
    tape: &mut Tape<f32>,
) -> Result<(LossRecord, Option<Var>)> {
    let cfg = &net.config;
    let phase2 = iteration >= cfg.warmup_iters;
    let pass = net.forward(
        tape,
        &sample.frame_t,
        &sample.frame_prev,
        PassOptions {
            refine: phase2,
            masks: None,
        },
    )?;
    let gt = tape.constant(frame_tensor(&sample.gt))?;
    let lf = pass.refined.map_or(pass.l_init, |(l, _)| l);

    let mut total = None;
    let mut dropped = 0;
    let (global, local) = loss_lf(tape, lf, gt)?;
    accumulate(tape, &mut total, global, cfg.w_global)?;
    accumulate(tape, &mut total, local, cfg.w_local)?;
    let flow = loss_flow(tape, pass.luma_t, pass.luma_prev, pass.o_fw, pass.o_bw)?;
    dropped += flow.dropped;
    if let Some(f) = flow.loss {
        accumulate(tape, &mut total, f, cfg.w_flow)?;
    }

    let (mut occ, mut percep, mut temp) = (None, None, None);
    if phase2 {
        let o = loss_occ(tape, lf, gt)?;
        accumulate(tape, &mut total, o, cfg.w_occ)?;
        occ = Some(value(tape, o));
        let p = loss_percep(net, tape, lf, gt)?;
        accumulate(tape, &mut total, p, cfg.w_percep)?;
        percep = Some(value(tape, p));
        if cfg.w_temp > 0.0 {
            let f = &pass.features;
            let (_, l_init_prev) =
                net.synthesize_initial(tape, &sample.frame_prev, f.zeta_prev, f.skips_prev)?;
            let masks = variance_masks(tape.value(l_init_prev), cfg.variance_threshold, cfg.eta)?;
            let input_prev = image_tensor(&sample.frame_prev);
            let (l_prev, _) = net.occlusion_refine(tape, l_init_prev, &masks, &input_prev)?;
            let fw = tape.value(pass.o_fw).clone();
            let bw = tape.value(pass.o_bw).clone();
            let t = loss_temp(tape, lf, l_prev, &fw, &bw)?;
            dropped += t.dropped;
            if let Some(t) = t.loss {
                accumulate(tape, &mut total, t, cfg.w_temp)?;
                temp = Some(value(tape, t));
            }
        }
    }
    let record = LossRecord {
        iteration,
        phase: if phase2 { 2 } else { 1 },
        global: value(tape, global),
        local: value(tape, local),
        occ,
        percep,
        temp,
        flow: flow.loss.map(|f| value(tape, f)),
        total: total.map_or(0.0, |t| value(tape, t)),
        dropped_terms: dropped,
    };
    Ok((record, total))
}

/// Trains a fresh network; see [`train_with`].
pub fn train(
    dataset: &[LightFieldVideo],
    cfg: &NetworkConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    train_with(dataset, cfg, opts, |_| {})
}

/// Two-phase training on random crops of consecutive frame pairs.
///
/// During the first `warmup_iters` iterations only the appearance-flow
/// and optical-flow paths are optimized (global, local and flow losses) and
/// the occlusion net is not evaluated, so its parameters stay at their
/// initial values. Afterwards every loss is active.
pub fn train_with(
    dataset: &[LightFieldVideo],
    cfg: &NetworkConfig,
    opts: &TrainOptions,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let channels = check_dataset(dataset, cfg.crop)?;
    let mut net = Network::<f32>::new(cfg.clone(), channels)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_6e64));
    let mut log = match &opts.loss_log {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.total_iters);
    for it in 0..cfg.total_iters {
        let sample = draw(&mut rng, dataset, cfg.crop)?;
        let mut tape = Tape::new();
        let (record, total) = step(&net, &sample, it, &mut tape)?;
        if let Some(total) = total {
            tape.backward(total)?;
            adam.step(&mut net.store, &tape.param_grads())?;
        }
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", record.csv_row())?;
        }
        on_record(&record);
        records.push(record);
        if let Some(base) = &opts.checkpoint {
            if opts.checkpoint_every > 0 && (it + 1) % opts.checkpoint_every == 0 {
                net.save(base)?;
            }
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(base) = &opts.checkpoint {
        net.save(base)?;
    }
    Ok(TrainOutcome {
        network: net,
        records,
    })
}
