use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Convolution with a weight and bias registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    /// `(depth, spatial)` stride; depth is ignored for 2-D layers.
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub three_d: bool,
}

impl ConvLayer {
    /// `k×k` 2-D layer with "same" padding, Kaiming-uniform weights scaled by
    /// `gain` and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new_2d<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * k * k;
        let weight = store.register_kaiming(
            format!("{name}.weight"),
            &[out_ch, in_ch, k, k],
            fan_in,
            gain,
            rng,
        )?;
        let bias = store.register(format!("{name}.bias"), crate::Tensor::zeros(&[out_ch]))?;
        Ok(Self {
            weight,
            bias,
            stride: (1, stride),
            padding: (0, k / 2),
            three_d: false,
        })
    }

    /// `k×k×k` 3-D layer with "same" padding and stride `(depth, spatial)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new_3d<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: (usize, usize),
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * k * k * k;
        let weight = store.register_kaiming(
            format!("{name}.weight"),
            &[out_ch, in_ch, k, k, k],
            fan_in,
            gain,
            rng,
        )?;
        let bias = store.register(format!("{name}.bias"), crate::Tensor::zeros(&[out_ch]))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: (k / 2, k / 2),
            three_d: true,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        self.apply(tape, x, w, b)
    }

    /// Forward pass with weights that receive no gradient.
    pub fn forward_frozen<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.frozen_param(store, self.weight)?;
        let b = tape.frozen_param(store, self.bias)?;
        self.apply(tape, x, w, b)
    }

    fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.three_d {
            tape.conv3d(x, w, Some(b), self.stride, self.padding)
        } else {
            tape.conv2d(x, w, Some(b), self.stride.1, self.padding.1)
        }
    }
}
