//! Training objectives. Each function records its terms on the tape and
//! returns scalar variables.

use lfv_autodiff::{Real, Tape, Tensor, Var};
use lfv_core::warp::{valid_mask, DEFAULT_CONSISTENCY_TOL};

use crate::convert::tensor_flows;
use crate::error::Result;
use crate::network::Network;

/// Weight of the first-order smoothness penalty inside the flow loss.
pub const FLOW_SMOOTHNESS: f64 = 0.1;

/// `(ℓ_global, ℓ_local)`: L1 between the mean images and between the
/// variance images of two `[81, C, H, W]` light fields.
pub fn loss_lf<T: Real>(tape: &mut Tape<T>, lf: Var, gt: Var) -> Result<(Var, Var)> {
    let m = tape.mean_axis0(lf)?;
    let mg = tape.mean_axis0(gt)?;
    let global = tape.l1(m, mg)?;
    let v = tape.var_axis0(lf)?;
    let vg = tape.var_axis0(gt)?;
    let local = tape.l1(v, vg)?;
    Ok((global, local))
}

/// Mean absolute error over every view, pixel and channel.
pub fn loss_occ<T: Real>(tape: &mut Tape<T>, lf: Var, gt: Var) -> Result<Var> {
    Ok(tape.l1(lf, gt)?)
}

/// L1 between frozen feature maps of the two mean images.
pub fn loss_percep<T: Real>(net: &Network<T>, tape: &mut Tape<T>, lf: Var, gt: Var) -> Result<Var> {
    let m = tape.mean_axis0(lf)?;
    let mg = tape.mean_axis0(gt)?;
    let f = net.perceptual_features(tape, m)?;
    let fg = net.perceptual_features(tape, mg)?;
    Ok(tape.l1(f, fg)?)
}

/// A loss assembled from optional terms; terms whose consistency mask is
/// empty are skipped and counted.
#[derive(Debug, Clone, Copy)]
pub struct Masked {
    pub loss: Option<Var>,
    pub dropped: usize,
}

/// Forward-backward consistency mask of `fw` against `bw`, expanded to
/// `channels` planes: `[1, channels, H, W]`.
fn consistency_mask<T: Real>(fw: &Tensor<T>, bw: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let f = tensor_flows(fw)?.remove(0);
    let b = tensor_flows(bw)?.remove(0);
    let mask = valid_mask(&f, &b, DEFAULT_CONSISTENCY_TOL)?;
    let n = mask.count();
    let hw = f.height() * f.width();
    let data = mask.data();
    let t = Tensor::from_fn(&[1, channels, f.height(), f.width()], |i| {
        if data[i % hw] {
            T::one()
        } else {
            T::zero()
        }
    });
    Ok(if n == 0 { Tensor::zeros(t.shape()) } else { t })
}

fn sum_terms<T: Real>(tape: &mut Tape<T>, terms: Vec<Var>) -> Result<Option<Var>> {
    let mut it = terms.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(None);
    };
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(acc))
}

/// Masked L1 of `warp(a, flow)` against `b`, or `None` for an empty mask.
fn warped_term<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    flow: Var,
    mask: &Tensor<T>,
) -> Result<Option<Var>> {
    if mask.data().iter().all(|&m| m == T::zero()) {
        return Ok(None);
    }
    let w = tape.warp(a, flow)?;
    Ok(Some(tape.masked_l1(w, b, mask)?))
}

/// Symmetric temporal consistency of two synthesized light fields: the mean
/// image of `lf_t` warped by `O_{t→t−1}` against the mean image of `lf_prev`,
/// and the converse with `O_{t−1→t}`. The flows enter as constants.
pub fn loss_temp<T: Real>(
    tape: &mut Tape<T>,
    lf_t: Var,
    lf_prev: Var,
    o_fw: &Tensor<T>,
    o_bw: &Tensor<T>,
) -> Result<Masked> {
    let m_t = tape.mean_axis0(lf_t)?;
    let m_p = tape.mean_axis0(lf_prev)?;
    let c = tape.shape(m_t)[1];
    let fw = tape.constant(o_fw.clone())?;
    let bw = tape.constant(o_bw.clone())?;
    let mut terms = Vec::new();
    let mut dropped = 0;
    let mask_fw = consistency_mask(o_fw, o_bw, c)?;
    match warped_term(tape, m_t, m_p, fw, &mask_fw)? {
        Some(t) => terms.push(t),
        None => dropped += 1,
    }
    let mask_bw = consistency_mask(o_bw, o_fw, c)?;
    match warped_term(tape, m_p, m_t, bw, &mask_bw)? {
        Some(t) => terms.push(t),
        None => dropped += 1,
    }
    Ok(Masked {
        loss: sum_terms(tape, terms)?,
        dropped,
    })
}

/// Unsupervised flow objective on the two input frames: consistency-masked
/// photometric L1 in both directions plus a smoothness penalty.
pub fn loss_flow<T: Real>(
    tape: &mut Tape<T>,
    frame_t: Var,
    frame_prev: Var,
    o_fw: Var,
    o_bw: Var,
) -> Result<Masked> {
    let c = tape.shape(frame_t)[1];
    let (fw_val, bw_val) = (tape.value(o_fw).clone(), tape.value(o_bw).clone());
    let mut terms = Vec::new();
    let mut dropped = 0;
    let mask_fw = consistency_mask(&fw_val, &bw_val, c)?;
    match warped_term(tape, frame_t, frame_prev, o_fw, &mask_fw)? {
        Some(t) => terms.push(t),
        None => dropped += 1,
    }
    let mask_bw = consistency_mask(&bw_val, &fw_val, c)?;
    match warped_term(tape, frame_prev, frame_t, o_bw, &mask_bw)? {
        Some(t) => terms.push(t),
        None => dropped += 1,
    }
    let s_fw = tape.smoothness(o_fw)?;
    let s_bw = tape.smoothness(o_bw)?;
    let s = tape.add(s_fw, s_bw)?;
    terms.push(tape.scale(s, T::of(FLOW_SMOOTHNESS))?);
    Ok(Masked {
        loss: sum_terms(tape, terms)?,
        dropped,
    })
}
