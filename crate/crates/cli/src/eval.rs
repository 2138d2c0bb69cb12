//! Video-level quality and temporal-consistency metrics.

use std::fmt::Write as _;

use lfv_core::image::luma;
use lfv_core::lightfield::{AngularCoord, LightFieldFrame, LightFieldVideo};
use lfv_core::metrics::mse;
use lfv_core::warp::{in_frame_mask, valid_mask, DEFAULT_CONSISTENCY_TOL};
use lfv_core::{psnr, ssim, temporal_error, CoreError, FlowField, ValidMask};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    /// PSNR of all 81 views pooled into one MSE.
    pub psnr: f64,
    /// Mean luminance SSIM over all 81 views.
    pub ssim: f64,
    /// Mean per-view PSNR over the 80 non-center views.
    pub psnr_views: f64,
    /// `None` for the first frame and when no pixel passes the flow mask.
    pub e_temp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_views: f64,
    pub e_temp: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn pooled_psnr(a: &LightFieldFrame, b: &LightFieldFrame) -> Result<f64> {
    let err = mean(
        a.views()
            .iter()
            .zip(b.views())
            .map(|(x, y)| mse(x, y))
            .collect::<lfv_core::Result<Vec<_>>>()?
            .into_iter(),
    );
    Ok(if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / err).log10()
    })
}

fn mean_ssim(a: &LightFieldFrame, b: &LightFieldFrame) -> Result<f64> {
    let mut values = Vec::with_capacity(a.views().len());
    for (x, y) in a.views().iter().zip(b.views()) {
        values.push(ssim(&luma(x)?, &luma(y)?)?);
    }
    Ok(mean(values.into_iter()))
}

fn view_psnr(a: &LightFieldFrame, b: &LightFieldFrame) -> Result<f64> {
    let mut values = Vec::new();
    for c in AngularCoord::all().filter(|c| !c.is_center()) {
        values.push(psnr(a.view(c), b.view(c))?);
    }
    Ok(mean(values.into_iter()))
}

/// Flow from frame `t` to `t − 1` and its validity mask, from the ground
/// truth when available and zero motion otherwise.
fn temporal_flow(gt: &LightFieldVideo, t: usize) -> Result<(FlowField, ValidMask)> {
    let (h, w, _) = gt.shape();
    let truth = gt.ground_truth().map(|g| &g[t]);
    match truth.and_then(|g| g.flow_to_prev.clone()) {
        Some(fw) => {
            let mask = match truth.and_then(|g| g.flow_from_prev.as_ref()) {
                Some(bw) => valid_mask(&fw, bw, DEFAULT_CONSISTENCY_TOL)?,
                None => ValidMask::full(h, w),
            };
            let mask = mask.and(&in_frame_mask(&fw))?;
            Ok((fw, mask))
        }
        None => Ok((FlowField::zeros(h, w), ValidMask::full(h, w))),
    }
}

/// Scores `pred` against `gt`; temporal error uses the flows stored with
/// `gt`, or zero motion when it has none.
pub fn evaluate(pred: &LightFieldVideo, gt: &LightFieldVideo) -> Result<EvalReport> {
    if pred.shape() != gt.shape() || pred.len() != gt.len() {
        return Err(CliError::invalid(format!(
            "prediction is {} frames of {:?}, ground truth {} frames of {:?}",
            pred.len(),
            pred.shape(),
            gt.len(),
            gt.shape()
        )));
    }
    let mut frames = Vec::with_capacity(pred.len());
    for t in 0..pred.len() {
        let (p, g) = (&pred.frames()[t], &gt.frames()[t]);
        let e_temp = if t == 0 {
            None
        } else {
            let (flow, mask) = temporal_flow(gt, t)?;
            match temporal_error(p, &pred.frames()[t - 1], &flow, &mask) {
                Ok(e) => Some(e),
                Err(CoreError::UndefinedMetric(_)) => None,
                Err(e) => return Err(e.into()),
            }
        };
        frames.push(FrameMetrics {
            frame: p.timestamp(),
            psnr: pooled_psnr(p, g)?,
            ssim: mean_ssim(p, g)?,
            psnr_views: view_psnr(p, g)?,
            e_temp,
        });
    }
    let temps: Vec<f64> = frames.iter().filter_map(|f| f.e_temp).collect();
    Ok(EvalReport {
        psnr: mean(frames.iter().map(|f| f.psnr)),
        ssim: mean(frames.iter().map(|f| f.ssim)),
        psnr_views: mean(frames.iter().map(|f| f.psnr_views)),
        e_temp: (!temps.is_empty()).then(|| mean(temps.into_iter())),
        frames,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub const CSV_HEADER: &str = "frame,psnr,ssim,psnr_views,e_temp";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{}",
                f.frame,
                f.psnr,
                f.ssim,
                f.psnr_views,
                opt(f.e_temp)
            );
        }
        let _ = writeln!(
            s,
            "mean,{:.6},{:.6},{:.6},{}",
            self.psnr,
            self.ssim,
            self.psnr_views,
            opt(self.e_temp)
        );
        s
    }

    /// Quality table (PSNR/SSIM) followed by the temporal table.
    pub fn summary(&self, label: &str) -> String {
        let width = label.len().max(6);
        let mut s = String::new();
        let _ = writeln!(s, "Average PSNR (dB) and SSIM over all 81 views");
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>6}  {:>12}",
            "Method", "PSNR", "SSIM", "PSNR (views)"
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:>8.2}  {:>6.3}  {:>12.2}",
            label, self.psnr, self.ssim, self.psnr_views
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "Temporal warping error, center view excluded");
        let _ = writeln!(s, "{:<width$}  {:>10}", "Method", "E_temp");
        let e = self.e_temp.map_or("n/a".to_string(), |e| format!("{e:.5}"));
        let _ = writeln!(s, "{label:<width$}  {e:>10}");
        s
    }
}

/// Parses the `mean` row of a metrics CSV back into `(psnr, ssim, psnr_views, e_temp)`.
pub fn parse_mean_row(csv: &str) -> Option<(f64, f64, f64, Option<f64>)> {
    let line = csv.lines().find(|l| l.starts_with("mean,"))?;
    let f: Vec<&str> = line.split(',').collect();
    let num = |s: &str| s.parse::<f64>().ok();
    Some((num(f[1])?, num(f[2])?, num(f[3])?, num(f.get(4)?)))
}
