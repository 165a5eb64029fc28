use std::str::FromStr;

use super::{Module, SN_INIT_ITERS};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    #[default]
    KaimingUniform,
    /// `U(−√(6/(fan_in+fan_out)), …)`.
    XavierUniform,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            InitScheme::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming-uniform" => Ok(InitScheme::KaimingUniform),
            "xavier-uniform" => Ok(InitScheme::XavierUniform),
            other => Err(Error::config(0, format!("unknown init scheme `{}`", other))),
        }
    }
}

/// Redraws every weight from the scheme's range with a generator seeded by
/// `seed`, zeroes biases, and re-runs power iteration on spectrally
/// normalized layers.
pub fn init_params<M: Module + ?Sized>(net: &mut M, seed: u64, scheme: InitScheme) -> Result<()> {
    let mut rng = Rng::new(seed);
    for layer in net.layers_mut() {
        let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
        let bound = scheme.bound(fan_in, fan_out);
        let w = rng.uniform_tensor(&[fan_out, fan_in], -bound, bound);
        layer.w.set_value(w)?;
        layer.b.set_value(Tensor::zeros(&[fan_out]))?;
        if layer.spectral_state().is_some() {
            layer.enable_spectral_norm(&mut rng, SN_INIT_ITERS)?;
        }
    }
    Ok(())
}
