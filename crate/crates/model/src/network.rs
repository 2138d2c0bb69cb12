use lfv_autodiff::{ConvLayer, ParamId, ParamStore, Real, Tape, Tensor, Var};
use lfv_core::lightfield::{AngularCoord, NUM_VIEWS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Fixed seed of the frozen perceptual feature stack.
pub const PERCEP_SEED: u64 = 0x5eed_f00d;
const PERCEP_CHANNELS: [usize; 3] = [16, 32, 64];

/// Encoder activations reused by the decoders.
#[derive(Debug, Clone, Copy)]
pub struct Skips {
    /// Full resolution, `b` channels.
    pub e1: Var,
    /// Half resolution, `4b` channels.
    pub e3: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub zeta_t: Var,
    pub zeta_prev: Var,
    pub skips_t: Skips,
    pub skips_prev: Skips,
}

#[derive(Debug, Clone, Copy)]
struct Decoder {
    up1: ConvLayer,
    up2: ConvLayer,
    out: ConvLayer,
}

#[derive(Debug, Clone)]
pub struct Network<T: Real> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    encoder: [ConvLayer; 4],
    corr_conv: ConvLayer,
    fusion: [ConvLayer; 2],
    appearance: Decoder,
    optical: Decoder,
    occ_encoder: [ConvLayer; 3],
    occ_decoder: [ConvLayer; 3],
    percep_store: ParamStore<T>,
    percep: [ConvLayer; 3],
}

fn lrelu<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    Ok(tape.leaky_relu(x, T::of(LEAKY_SLOPE))?)
}

impl<T: Real> Network<T> {
    /// Builds a freshly initialized network for an image with `channels` channels.
    pub fn new(config: NetworkConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let o = config.occ_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let r = &mut rng;
        let encoder = [
            ConvLayer::new_2d(s, "enc1", 1, b, 3, 1, 1.0, r)?,
            ConvLayer::new_2d(s, "enc2", b, 2 * b, 3, 2, 1.0, r)?,
            ConvLayer::new_2d(s, "enc3", 2 * b, 4 * b, 3, 1, 1.0, r)?,
            ConvLayer::new_2d(s, "enc4", 4 * b, 4 * b, 3, 2, 1.0, r)?,
        ];
        let corr_conv = ConvLayer::new_2d(s, "corr_conv", 4 * b, 4 * b, 3, 1, 1.0, r)?;
        let corr_ch = if config.correlation_bypass {
            0
        } else {
            (2 * config.max_disp + 1).pow(2)
        };
        let fusion = [
            ConvLayer::new_2d(s, "fuse1", corr_ch + 4 * b, 8 * b, 3, 1, 1.0, r)?,
            ConvLayer::new_2d(s, "fuse2", 8 * b, 8 * b, 3, 1, 1.0, r)?,
        ];
        let mut decoder = |name: &str, input: usize, out: usize| -> Result<Decoder> {
            Ok(Decoder {
                up1: ConvLayer::new_2d(
                    s,
                    &format!("{name}.up1"),
                    input + 4 * b,
                    4 * b,
                    3,
                    1,
                    1.0,
                    r,
                )?,
                up2: ConvLayer::new_2d(s, &format!("{name}.up2"), 4 * b + b, 2 * b, 3, 1, 1.0, r)?,
                // Small initial flows keep early warps close to the plain shift.
                out: ConvLayer::new_2d(s, &format!("{name}.out"), 2 * b, out, 3, 1, 0.1, r)?,
            })
        };
        let appearance = decoder("af", 8 * b, 2 * NUM_VIEWS)?;
        let optical = decoder("of", 16 * b, 2)?;
        let c1 = channels + 1;
        let occ_encoder = [
            ConvLayer::new_3d(s, "occ.enc1", c1, o, 3, (1, 2), 1.0, r)?,
            ConvLayer::new_3d(s, "occ.enc2", o, 2 * o, 3, (1, 2), 1.0, r)?,
            ConvLayer::new_3d(s, "occ.enc3", 2 * o, 4 * o, 3, (1, 2), 1.0, r)?,
        ];
        let occ_decoder = [
            ConvLayer::new_3d(s, "occ.dec1", 4 * o + 2 * o, 2 * o, 3, (1, 1), 1.0, r)?,
            ConvLayer::new_3d(s, "occ.dec2", 2 * o + o, o, 3, (1, 1), 1.0, r)?,
            // Zero init: the refinement starts as the identity.
            ConvLayer::new_3d(s, "occ.out", o + c1, channels, 3, (1, 1), 0.0, r)?,
        ];

        let mut percep_store = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(PERCEP_SEED);
        let [p1, p2, p3] = PERCEP_CHANNELS;
        let ps = &mut percep_store;
        let percep = [
            ConvLayer::new_2d(ps, "p1", channels, p1, 3, 2, 1.0, &mut prng)?,
            ConvLayer::new_2d(ps, "p2", p1, p2, 3, 2, 1.0, &mut prng)?,
            ConvLayer::new_2d(ps, "p3", p2, p3, 3, 2, 1.0, &mut prng)?,
        ];
        Ok(Self {
            config,
            store,
            encoder,
            corr_conv,
            fusion,
            appearance,
            optical,
            occ_encoder,
            occ_decoder,
            percep_store,
            percep,
        })
    }

    /// Image channels the network was built for.
    pub fn channels(&self) -> usize {
        self.store.get(self.occ_decoder[2].bias).numel()
    }

    /// Parameters of the occlusion refinement network.
    pub fn occlusion_params(&self) -> Vec<ParamId> {
        self.occ_encoder
            .iter()
            .chain(&self.occ_decoder)
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    fn conv(&self, tape: &mut Tape<T>, layer: &ConvLayer, x: Var) -> Result<Var> {
        Ok(layer.forward(tape, &self.store, x)?)
    }

    fn conv_act(&self, tape: &mut Tape<T>, layer: &ConvLayer, x: Var) -> Result<Var> {
        let y = self.conv(tape, layer, x)?;
        lrelu(tape, y)
    }

    /// Shared encoder over one luminance frame `[1, 1, H, W]`.
    fn encode(&self, tape: &mut Tape<T>, x: Var) -> Result<(Skips, Var)> {
        let e1 = self.conv_act(tape, &self.encoder[0], x)?;
        let e2 = self.conv_act(tape, &self.encoder[1], e1)?;
        let e3 = self.conv_act(tape, &self.encoder[2], e2)?;
        let e4 = self.conv_act(tape, &self.encoder[3], e3)?;
        Ok((Skips { e1, e3 }, e4))
    }

    fn fuse(&self, tape: &mut Tape<T>, xi_a: Var, xi_b: Var) -> Result<Var> {
        let c = self.conv_act(tape, &self.corr_conv, xi_a)?;
        let input = if self.config.correlation_bypass {
            c
        } else {
            let corr = tape.correlation(xi_a, xi_b, self.config.max_disp)?;
            tape.concat(&[corr, c])?
        };
        let z = self.conv_act(tape, &self.fusion[0], input)?;
        self.conv_act(tape, &self.fusion[1], z)
    }

    /// Features of a frame pair; the previous frame's features correlate in
    /// the opposite order, so identical frames give identical features.
    pub fn feature_extract(
        &self,
        tape: &mut Tape<T>,
        luma_t: Var,
        luma_prev: Var,
    ) -> Result<Features> {
        let (s, h, w) = {
            let s = tape.shape(luma_t);
            (s.to_vec(), s[2], s[3])
        };
        if s.len() != 4 || s[0] != 1 || s[1] != 1 || tape.shape(luma_prev) != s.as_slice() {
            return Err(crate::ModelError::Input(format!(
                "frames must be [1, 1, H, W] and equal in shape, got {s:?} and {:?}",
                tape.shape(luma_prev)
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(crate::ModelError::Input(format!(
                "{h}x{w} is not a multiple of 8"
            )));
        }
        let (skips_t, xi_t) = self.encode(tape, luma_t)?;
        let (skips_prev, xi_prev) = self.encode(tape, luma_prev)?;
        let zeta_t = self.fuse(tape, xi_t, xi_prev)?;
        let zeta_prev = self.fuse(tape, xi_prev, xi_t)?;
        Ok(Features {
            zeta_t,
            zeta_prev,
            skips_t,
            skips_prev,
        })
    }

    fn decode(&self, tape: &mut Tape<T>, dec: &Decoder, z: Var, skips: Skips) -> Result<Var> {
        let u = tape.upsample2x(z)?;
        let x = tape.concat(&[u, skips.e3])?;
        let d1 = self.conv_act(tape, &dec.up1, x)?;
        let u = tape.upsample2x(d1)?;
        let x = tape.concat(&[u, skips.e1])?;
        let d2 = self.conv_act(tape, &dec.up2, x)?;
        self.conv(tape, &dec.out, d2)
    }

    /// Appearance flows `[81, 2, H, W]`, bounded by `flow_cap`, zero for the center view.
    pub fn appearance_flow_decode(
        &self,
        tape: &mut Tape<T>,
        zeta: Var,
        skips: Skips,
    ) -> Result<Var> {
        let raw = self.decode(tape, &self.appearance, zeta, skips)?;
        let bounded = tape.tanh(raw)?;
        let scaled = tape.scale(bounded, T::of(self.config.flow_cap as f64))?;
        let s = tape.shape(scaled).to_vec();
        let hw = s[2] * s[3];
        let center = AngularCoord::CENTER.index();
        let keep = Tensor::from_fn(&s, |i| {
            if i / hw / 2 == center {
                T::zero()
            } else {
                T::one()
            }
        });
        let masked = tape.mul_const(scaled, &keep)?;
        Ok(tape.reshape(masked, &[NUM_VIEWS, 2, s[2], s[3]])?)
    }

    /// `L̂ = warp(shifted input, flows)` for `[81, C, H, W]` shifted inputs.
    pub fn synth_initial(&self, tape: &mut Tape<T>, shifted: Var, flows: Var) -> Result<Var> {
        Ok(tape.warp(shifted, flows)?)
    }

    /// Occlusion refinement of `l_init [81, C, H, W]` given the per-view
    /// variance masks `[81, 1, H, W]` and the input frame `[1, C, H, W]`.
    /// Returns `(L, R)`: the refined frame with the center view pinned to
    /// the input, and the residual in `[-1, 1]`.
    pub fn occlusion_refine(
        &self,
        tape: &mut Tape<T>,
        l_init: Var,
        masks: &Tensor<T>,
        input: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(l_init).to_vec();
        let (c, h, w) = (s[1], s[2], s[3]);
        let m = tape.constant(masks.clone())?;
        let x = tape.concat(&[l_init, m])?;
        let x = tape.swap_axes01(x)?;
        let x = tape.reshape(x, &[1, c + 1, NUM_VIEWS, h, w])?;
        let o1 = self.conv_act(tape, &self.occ_encoder[0], x)?;
        let o2 = self.conv_act(tape, &self.occ_encoder[1], o1)?;
        let o3 = self.conv_act(tape, &self.occ_encoder[2], o2)?;
        let u = tape.upsample2x(o3)?;
        let cat = tape.concat(&[u, o2])?;
        let d1 = self.conv_act(tape, &self.occ_decoder[0], cat)?;
        let u = tape.upsample2x(d1)?;
        let cat = tape.concat(&[u, o1])?;
        let d2 = self.conv_act(tape, &self.occ_decoder[1], cat)?;
        let u = tape.upsample2x(d2)?;
        let cat = tape.concat(&[u, x])?;
        let raw = self.conv(tape, &self.occ_decoder[2], cat)?;
        let r = tape.tanh(raw)?;
        let r = tape.reshape(r, &[c, NUM_VIEWS, h, w])?;
        let residual = tape.swap_axes01(r)?;

        let sum = tape.add(l_init, residual)?;
        let clamped = tape.clamp(sum, T::zero(), T::one())?;
        let plane = c * h * w;
        let center = AngularCoord::CENTER.index();
        let keep = Tensor::from_fn(&s, |i| {
            if i / plane == center {
                T::zero()
            } else {
                T::one()
            }
        });
        let pin = Tensor::from_fn(&s, |i| {
            if i / plane == center {
                input.data()[i % plane]
            } else {
                T::zero()
            }
        });
        let kept = tape.mul_const(clamped, &keep)?;
        let pinned = tape.add_const(kept, &pin)?;
        Ok((pinned, residual))
    }

    /// Flows between the frames on full resolution: `O_{t→t−1}` on the grid of
    /// frame `t−1` and `O_{t−1→t}` on the grid of frame `t`, each `[1, 2, H, W]`.
    pub fn optical_flow_decode(&self, tape: &mut Tape<T>, f: &Features) -> Result<(Var, Var)> {
        let a = tape.concat(&[f.zeta_prev, f.zeta_t])?;
        let fw = self.decode(tape, &self.optical, a, f.skips_prev)?;
        let b = tape.concat(&[f.zeta_t, f.zeta_prev])?;
        let bw = self.decode(tape, &self.optical, b, f.skips_t)?;
        Ok((fw, bw))
    }

    /// Frozen random feature stack applied to `[1, C, H, W]` images.
    pub fn perceptual_features(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut y = x;
        for layer in &self.percep {
            let z = layer.forward_frozen(tape, &self.percep_store, y)?;
            y = lrelu(tape, z)?;
        }
        Ok(y)
    }
}
