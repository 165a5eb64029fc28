use std::fmt;
use std::str::FromStr;

use crate::data::DatasetKind;
use crate::divergence::RatioMode;
use crate::error::{Error, Result};

/// Which ω₁ terms the two levels carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradMode {
    /// Opposite ω₁ terms cancelled: the upper level touches ψ′ only and the
    /// latent cycle term trains the generator only.
    #[default]
    Offset,
    /// Both levels update ω₁; the upper level's ω₁ term is the KL of the
    /// posterior on generated samples to the prior.
    NonOffset,
}

/// Upper-level energy objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EnergyLoss {
    /// `mean E(data) − mean E(generated)`.
    #[default]
    Plain,
    /// `mean ReLU(1 + E(data)) + mean ReLU(1 − E(generated))`.
    Hinge,
}

impl FromStr for GradMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset" => Ok(GradMode::Offset),
            "non-offset" => Ok(GradMode::NonOffset),
            _ => Err(Error::config(0, format!("grad_mode must be offset or non-offset, got `{}`", s))),
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMode::Offset => "offset",
            GradMode::NonOffset => "non-offset",
        })
    }
}

impl FromStr for EnergyLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(EnergyLoss::Plain),
            "hinge" => Ok(EnergyLoss::Hinge),
            _ => Err(Error::config(0, format!("energy_loss must be plain or hinge, got `{}`", s))),
        }
    }
}

impl fmt::Display for EnergyLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyLoss::Plain => "plain",
            EnergyLoss::Hinge => "hinge",
        })
    }
}

/// Every knob of the alternating training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub grad_mode: GradMode,
    pub energy_loss: EnergyLoss,
    pub ratio: RatioMode,
    /// Lower-level steps per iteration.
    pub n_ll_steps: usize,
    /// Learning rate of the variational networks (encoder and generator).
    pub lr_var: f64,
    /// Learning rate of the energy network.
    pub lr_energy: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch: usize,
    pub seed: u64,
    pub d_h: usize,
    pub lambda_rec: f64,
    pub max_iters: u64,
    pub eval_every: u64,
    pub dataset: DatasetKind,
    pub dataset_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grad_mode: GradMode::Offset,
            energy_loss: EnergyLoss::Plain,
            ratio: RatioMode::default(),
            n_ll_steps: 1,
            lr_var: 1e-3,
            lr_energy: 5e-4,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch: 128,
            seed: 0,
            d_h: 2,
            lambda_rec: 1.0,
            max_iters: 5_000,
            eval_every: 500,
            dataset: DatasetKind::eight_gaussians(),
            dataset_n: 20_000,
        }
    }
}

impl TrainConfig {
    /// Cross-field checks not tied to a single config line.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(0, msg));
        if self.n_ll_steps < 1 {
            return bad("n_ll_steps must be at least 1".into());
        }
        if !(self.lr_var > 0.0) || !(self.lr_energy > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch < 2 {
            return bad("batch must be at least 2".into());
        }
        if self.batch > self.dataset_n {
            return bad(format!("batch {} exceeds dataset_n {}", self.batch, self.dataset_n));
        }
        if !(self.ratio.r_basic > 0.0) {
            return bad("r_basic must be positive".into());
        }
        Ok(())
    }
}
