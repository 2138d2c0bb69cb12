use lfv_autodiff::{Real, Tape, Tensor, Var};
use lfv_core::image::luma;
use lfv_core::lightfield::{
    variance_image, variance_mask, AngularCoord, LightFieldFrame, ThresholdPolicy, NUM_VIEWS,
};
use lfv_core::warp::{bilinear_warp, shift_input, FlowField};
use lfv_core::Image;

use crate::convert::{image_tensor, tensor_flows, tensor_frame, tensor_views, views_tensor};
use crate::error::{ModelError, Result};
use crate::network::{Features, Network};

/// The input shifted to every view position, in view-index order.
pub fn shifted_views(input: &Image, eta: f32) -> Result<Vec<Image>> {
    AngularCoord::all()
        .map(|c| Ok(shift_input(input, c, eta)?))
        .collect()
}

/// Initial light field from appearance flows: each view is the shifted
/// input warped by its flow; the center view is the input itself.
pub fn synth_initial(input: &Image, flows: &[FlowField], eta: f32) -> Result<LightFieldFrame> {
    if flows.len() != NUM_VIEWS {
        return Err(ModelError::Input(format!(
            "expected {NUM_VIEWS} flows, got {}",
            flows.len()
        )));
    }
    let views = AngularCoord::all()
        .zip(flows)
        .map(|(c, f)| {
            if c.is_center() {
                Ok(input.clone())
            } else {
                Ok(bilinear_warp(&shift_input(input, c, eta)?, f)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LightFieldFrame::new(views, 0)?)
}

/// Per-view binary masks `[81, 1, H, W]` of high angular variance in `l_init`.
pub fn variance_masks<T: Real>(
    l_init: &Tensor<T>,
    policy: ThresholdPolicy,
    eta: f32,
) -> Result<Tensor<T>> {
    let views = tensor_views(l_init)?
        .iter()
        .map(luma)
        .collect::<lfv_core::Result<Vec<_>>>()?;
    let var = variance_image(&LightFieldFrame::new(views, 0)?)?;
    Ok(views_tensor(&variance_mask(&var, policy, eta)?))
}

/// Every intermediate of one synthesized frame.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    /// Warped initial light field `L̂`.
    pub lf_initial: LightFieldFrame,
    /// Refined light field `L`.
    pub lf_final: LightFieldFrame,
    pub appearance_flows: Vec<FlowField>,
    /// Per-view residual of the occlusion net, in `[-1, 1]`.
    pub residual: Vec<Image>,
    pub variance_masks: Vec<Image>,
    /// `O_{t→t−1}`.
    pub flow_fw: FlowField,
    /// `O_{t−1→t}`.
    pub flow_bw: FlowField,
}

/// Variables of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Pass<T: Real> {
    pub input_t: Tensor<T>,
    pub luma_t: Var,
    pub luma_prev: Var,
    pub features: Features,
    pub flows: Var,
    pub l_init: Var,
    pub masks: Option<Tensor<T>>,
    /// `(L, R)` when the occlusion net ran.
    pub refined: Option<(Var, Var)>,
    pub o_fw: Var,
    pub o_bw: Var,
}

/// Options of [`Network::forward`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PassOptions<'a, T> {
    /// Run the occlusion refinement.
    pub refine: bool,
    /// Use these masks instead of thresholding the variance of `L̂`.
    pub masks: Option<&'a Tensor<T>>,
}

impl<T: Real> Network<T> {
    fn check_input(&self, frame_t: &Image, frame_prev: &Image) -> Result<()> {
        if frame_t.shape() != frame_prev.shape() {
            return Err(ModelError::Input(format!(
                "frames differ in shape: {:?} vs {:?}",
                frame_t.shape(),
                frame_prev.shape()
            )));
        }
        if frame_t.channels() != self.channels() {
            return Err(ModelError::Input(format!(
                "network expects {} channels, frame has {}",
                self.channels(),
                frame_t.channels()
            )));
        }
        Ok(())
    }

    /// Records the synthesis of `frame_t` (given `frame_prev`) on `tape`.
    /// Heights and widths must be multiples of 8.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        frame_t: &Image,
        frame_prev: &Image,
        opts: PassOptions<'_, T>,
    ) -> Result<Pass<T>> {
        self.check_input(frame_t, frame_prev)?;
        let luma_t = tape.constant(image_tensor(&luma(frame_t)?))?;
        let luma_prev = tape.constant(image_tensor(&luma(frame_prev)?))?;
        let features = self.feature_extract(tape, luma_t, luma_prev)?;
        let (flows, l_init) =
            self.synthesize_initial(tape, frame_t, features.zeta_t, features.skips_t)?;
        let input_t = image_tensor::<T>(frame_t);
        let (masks, refined) = if opts.refine {
            let masks = match opts.masks {
                Some(m) => m.clone(),
                None => variance_masks(
                    tape.value(l_init),
                    self.config.variance_threshold,
                    self.config.eta,
                )?,
            };
            let refined = self.occlusion_refine(tape, l_init, &masks, &input_t)?;
            (Some(masks), Some(refined))
        } else {
            (None, None)
        };
        let (o_fw, o_bw) = self.optical_flow_decode(tape, &features)?;
        Ok(Pass {
            input_t,
            luma_t,
            luma_prev,
            features,
            flows,
            l_init,
            masks,
            refined,
            o_fw,
            o_bw,
        })
    }

    /// Appearance flows and `L̂` for `frame` from its fused features.
    pub fn synthesize_initial(
        &self,
        tape: &mut Tape<T>,
        frame: &Image,
        zeta: Var,
        skips: crate::network::Skips,
    ) -> Result<(Var, Var)> {
        let flows = self.appearance_flow_decode(tape, zeta, skips)?;
        let shifted = tape.constant(views_tensor(&shifted_views(frame, self.config.eta)?))?;
        let l_init = self.synth_initial(tape, shifted, flows)?;
        Ok((flows, l_init))
    }

    /// Full pipeline for one frame pair at any spatial size.
    pub fn synthesize_frame(&self, frame_t: &Image, frame_prev: &Image) -> Result<SynthesisOutput> {
        self.check_input(frame_t, frame_prev)?;
        let (h, w, _) = frame_t.shape();
        let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
        let pt = frame_t.pad_replicate(ph, pw)?;
        let pp = frame_prev.pad_replicate(ph, pw)?;
        let mut tape = Tape::new();
        let pass = self.forward(
            &mut tape,
            &pt,
            &pp,
            PassOptions {
                refine: true,
                masks: None,
            },
        )?;
        let (l, r) = pass.refined.expect("refinement requested");
        let crop_views = |v: Vec<Image>| -> Result<Vec<Image>> {
            v.iter().map(|i| Ok(i.crop(0, 0, h, w)?)).collect()
        };
        let crop_frame = |f: LightFieldFrame| -> Result<LightFieldFrame> {
            Ok(LightFieldFrame::new(crop_views(f.into_views())?, 0)?)
        };
        let crop_flow = |f: &FlowField| -> Result<FlowField> {
            let mut dx = Vec::with_capacity(h * w);
            let mut dy = Vec::with_capacity(h * w);
            for y in 0..h {
                dx.extend_from_slice(&f.dx()[y * pw..y * pw + w]);
                dy.extend_from_slice(&f.dy()[y * pw..y * pw + w]);
            }
            Ok(FlowField::new(h, w, dx, dy)?)
        };
        let lf_final = crop_frame(tensor_frame(tape.value(l), 0)?)?;
        Ok(SynthesisOutput {
            lf_initial: crop_frame(tensor_frame(tape.value(pass.l_init), 0)?)?,
            lf_final,
            appearance_flows: tensor_flows(tape.value(pass.flows))?
                .iter()
                .map(crop_flow)
                .collect::<Result<_>>()?,
            residual: crop_views(tensor_views(tape.value(r))?)?,
            variance_masks: crop_views(tensor_views(pass.masks.as_ref().expect("masks"))?)?,
            flow_fw: crop_flow(&tensor_flows(tape.value(pass.o_fw))?[0])?,
            flow_bw: crop_flow(&tensor_flows(tape.value(pass.o_bw))?[0])?,
        })
    }

    /// Synthesizes a light field for every center frame; the first frame is
    /// paired with itself.
    pub fn synthesize_video(&self, centers: &[Image]) -> Result<Vec<SynthesisOutput>> {
        (0..centers.len())
            .map(|t| self.synthesize_frame(&centers[t], &centers[t.saturating_sub(1)]))
            .collect()
    }
}
