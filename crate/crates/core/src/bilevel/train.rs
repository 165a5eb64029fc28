use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::{GradMode, TrainConfig};
use super::model::{ArchSpec, BiDvlModels};
use super::steps::{ll_step_with, ul_step, LlTerms, LossReport};
use crate::data::{Batches, Checkpoint, Rng};
use crate::error::{Error, Result};
use crate::nets::Module;
use crate::tensor::Tensor;

/// Power iterations per training step for spectrally normalized layers.
pub const SN_STEP_ITERS: usize = 1;

/// Receives the metric stream and checkpoints of a [`train`] run.
pub trait TrainObserver {
    fn on_step(&mut self, _iter: u64, _report: &LossReport) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _ckpt: &Checkpoint, _models: &BiDvlModels) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Keeps every report and checkpoint in memory.
#[derive(Debug, Default)]
pub struct Recorder {
    pub reports: Vec<(u64, LossReport)>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainObserver for Recorder {
    fn on_step(&mut self, iter: u64, report: &LossReport) -> Result<()> {
        self.reports.push((iter, *report));
        Ok(())
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint, _models: &BiDvlModels) -> Result<()> {
        self.checkpoints.push(ckpt.clone());
        Ok(())
    }
}

/// Optimizer state of the alternating scheme: one Adam per parameter group.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    models: BiDvlModels,
    energy_opt: AdamState,
    encoder_opt: AdamState,
    generator_opt: AdamState,
    encoder_ul_opt: AdamState,
    noise: Rng,
    iteration: u64,
    terms: LlTerms,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, models: BiDvlModels) -> Result<Self> {
        cfg.validate()?;
        if models.d_h() != cfg.d_h {
            return Err(Error::config(0, format!("models have d_h {} but config says {}", models.d_h(), cfg.d_h)));
        }
        let energy_opt = AdamState::new(&models.eblvm.energy.params());
        let encoder_opt = AdamState::new(&models.eblvm.posterior.params());
        let generator_opt = AdamState::new(&models.generator.params());
        let encoder_ul_opt = encoder_opt.clone();
        let noise = Rng::split(cfg.seed, 0x0015e);
        Ok(Trainer { cfg, models, energy_opt, encoder_opt, generator_opt, encoder_ul_opt, noise, iteration: 0, terms: LlTerms::default() })
    }

    /// Restricts the lower-level objective, for ablations.
    pub fn with_terms(mut self, terms: LlTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn models(&self) -> &BiDvlModels {
        &self.models
    }

    pub fn into_models(self) -> BiDvlModels {
        self.models
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.cfg.adam_betas.0, beta2: self.cfg.adam_betas.1, eps: self.cfg.adam_eps }
    }

    /// One outer iteration: `n_ll_steps` lower-level updates of encoder and
    /// generator, then one upper-level update of the energy (and, in
    /// non-offset mode, of the encoder). The reported lower-level components
    /// are averaged over the inner steps.
    pub fn step(&mut self, data: &Tensor) -> Result<LossReport> {
        let (n, d_h) = (data.rows(), self.models.d_h());
        let var = self.adam(self.cfg.lr_var);
        let mut report = LossReport::default();
        for _ in 0..self.cfg.n_ll_steps {
            let eps = self.noise.normal_tensor(&[n, d_h]);
            let h = self.noise.normal_tensor(&[n, d_h]);
            let r = ll_step_with(&mut self.models, data, &eps, &h, &self.cfg, self.terms)?;
            adam_step(&mut self.encoder_opt, self.models.eblvm.posterior.params_mut(), &var)?;
            adam_step(&mut self.generator_opt, self.models.generator.params_mut(), &var)?;
            self.models.eblvm.posterior.refresh_spectral_norm(SN_STEP_ITERS)?;
            report.weighted_recon += r.weighted_recon;
            report.weighted_klprior += r.weighted_klprior;
            report.energy_chase += r.energy_chase;
            report.latent_cycle += r.latent_cycle;
        }
        let k = self.cfg.n_ll_steps as f64;
        report.weighted_recon /= k;
        report.weighted_klprior /= k;
        report.energy_chase /= k;
        report.latent_cycle /= k;

        let h = self.noise.normal_tensor(&[n, d_h]);
        let (ul, _) = ul_step(&mut self.models, data, &h, &self.cfg)?;
        let energy = self.adam(self.cfg.lr_energy);
        adam_step(&mut self.energy_opt, self.models.eblvm.energy.params_mut(), &energy)?;
        if self.cfg.grad_mode == GradMode::NonOffset {
            adam_step(&mut self.encoder_ul_opt, self.models.eblvm.posterior.params_mut(), &var)?;
            self.models.eblvm.posterior.refresh_spectral_norm(SN_STEP_ITERS)?;
        }
        self.models.eblvm.energy.refresh_spectral_norm(SN_STEP_ITERS)?;
        report.ul_data_energy = ul.ul_data_energy;
        report.ul_model_energy = ul.ul_model_energy;
        self.iteration += 1;
        Ok(report)
    }
}

/// Seed of the minibatch stream of a run.
fn batch_seed(seed: u64) -> u64 {
    Rng::split(seed, 0xba7c).next_u64()
}

/// Runs the alternating scheme for `cfg.max_iters` iterations on `data`,
/// emitting a report every iteration and a checkpoint at the start, every
/// `eval_every` iterations and at the end. On a numeric failure the error
/// is returned; the observer already holds the last good checkpoint.
pub fn train(cfg: &TrainConfig, data: &Tensor, arch: &ArchSpec, observer: &mut dyn TrainObserver) -> Result<BiDvlModels> {
    if data.rank() != 2 || data.rows() == 0 {
        return Err(Error::contract("train", format!("dataset must be a nonempty matrix, got {:?}", data.shape())));
    }
    let models = BiDvlModels::new(data.cols(), cfg.d_h, arch, cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), models)?;
    let mut batches = Batches::new(data, cfg.batch, batch_seed(cfg.seed))?;
    observer.on_checkpoint(&trainer.models.to_checkpoint(0), &trainer.models)?;
    for batch in batches.by_ref().take(cfg.max_iters as usize) {
        let report = trainer.step(&batch)?;
        let it = trainer.iteration();
        observer.on_step(it, &report)?;
        if it % cfg.eval_every == 0 || it == cfg.max_iters {
            observer.on_checkpoint(&trainer.models.to_checkpoint(it), &trainer.models)?;
        }
    }
    Ok(trainer.into_models())
}
