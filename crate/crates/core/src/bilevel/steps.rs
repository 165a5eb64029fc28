use super::config::{EnergyLoss, GradMode, TrainConfig};
use super::model::BiDvlModels;
use crate::divergence::{importance_ratio, kl_to_standard_prior_var, RatioVariant};
use crate::error::{Error, Result};
use crate::nets::{log_prob_diag_gaussian, sample_posterior, Module};
use crate::tensor::{Tape, Tensor, Var};

/// Loss components of one training iteration, as written to the metric log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub weighted_recon: f64,
    pub weighted_klprior: f64,
    pub energy_chase: f64,
    pub latent_cycle: f64,
    pub ul_data_energy: f64,
    pub ul_model_energy: f64,
}

impl LossReport {
    /// Total lower-level loss.
    pub fn ll_total(&self) -> f64 {
        self.weighted_recon + self.weighted_klprior + self.energy_chase + self.latent_cycle
    }

    pub fn csv_row(&self, iter: u64) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            iter,
            self.weighted_recon,
            self.weighted_klprior,
            self.energy_chase,
            self.latent_cycle,
            self.ul_data_energy,
            self.ul_model_energy
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.weighted_recon,
            self.weighted_klprior,
            self.energy_chase,
            self.latent_cycle,
            self.ul_data_energy,
            self.ul_model_energy,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Which lower-level terms to include. Everything is on in training; the
/// switches exist to reduce the step to plain VAE training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LlTerms {
    pub energy_chase: bool,
    pub latent_cycle: bool,
    /// Replace importance weights by 1.
    pub unit_weights: bool,
}

impl Default for LlTerms {
    fn default() -> Self {
        LlTerms { energy_chase: true, latent_cycle: true, unit_weights: false }
    }
}

fn finite(op: &'static str, component: &str, v: Var<'_>) -> Result<f64> {
    let x = v.item()?;
    if !x.is_finite() {
        return Err(Error::numeric(op, format!("{} is {}", component, x)));
    }
    Ok(x)
}

/// One lower-level gradient evaluation. Gradients are added to the encoder
/// and generator parameters; the energy network is never touched.
pub fn ll_step(models: &mut BiDvlModels, data: &Tensor, eps: &Tensor, noise: &Tensor, cfg: &TrainConfig) -> Result<LossReport> {
    ll_step_with(models, data, eps, noise, cfg, LlTerms::default())
}

pub fn ll_step_with(
    models: &mut BiDvlModels,
    data: &Tensor,
    eps: &Tensor,
    noise: &Tensor,
    cfg: &TrainConfig,
    terms: LlTerms,
) -> Result<LossReport> {
    const OP: &str = "ll_step";
    let weights = if terms.unit_weights {
        Tensor::ones(&[data.rows()])
    } else if cfg.ratio.variant == RatioVariant::Constant {
        Tensor::full(&[data.rows()], cfg.ratio.r_basic)
    } else {
        importance_ratio(&models.eblvm.energy.energies(data)?, cfg.ratio)?
    };

    let tape = Tape::new();
    let enc = &models.eblvm.posterior;
    let gen = &models.generator;
    let mut report = LossReport::default();

    let v = tape.constant(data.clone());
    let (mu, lv) = enc.encode(&tape, v)?;
    let h_tilde = sample_posterior(mu, lv, tape.constant(eps.clone()))?;
    let sq = v.sub(gen.generate(&tape, h_tilde)?)?.square()?.sum_axis(1)?;
    let w = tape.constant(weights);
    let recon = w.mul(sq.scale(cfg.lambda_rec)?)?.mean()?;
    let klp = w.mul(kl_to_standard_prior_var(mu, lv)?)?.mean()?;
    report.weighted_recon = finite(OP, "weighted_recon", recon)?;
    report.weighted_klprior = finite(OP, "weighted_klprior", klp)?;
    let mut total = recon.add(klp)?;

    if terms.energy_chase || terms.latent_cycle {
        let h = tape.constant(noise.clone());
        let generated = gen.generate(&tape, h)?;
        if terms.energy_chase {
            let energy_ids = models.energy_ids();
            let chase = tape.frozen(energy_ids, || models.eblvm.energy.energy(&tape, generated))?.mean()?;
            report.energy_chase = finite(OP, "energy_chase", chase)?;
            total = total.add(chase)?;
        }
        if terms.latent_cycle {
            let frozen = match cfg.grad_mode {
                GradMode::Offset => models.encoder_ids(),
                GradMode::NonOffset => Vec::new(),
            };
            let (mu_g, lv_g) = tape.frozen(frozen, || enc.encode(&tape, generated))?;
            let cycle = log_prob_diag_gaussian(h, mu_g, lv_g)?.neg()?.mean()?;
            report.latent_cycle = finite(OP, "latent_cycle", cycle)?;
            total = total.add(cycle)?;
        }
    }

    let grads = tape.backward(total)?;
    for p in models.eblvm.posterior.params_mut() {
        grads.accumulate_into(p)?;
    }
    for p in models.generator.params_mut() {
        grads.accumulate_into(p)?;
    }
    Ok(report)
}

/// Scalar upper-level objective for the energy network.
fn energy_objective<'t>(loss: EnergyLoss, e_data: Var<'t>, e_model: Var<'t>) -> Result<Var<'t>> {
    match loss {
        EnergyLoss::Plain => e_data.mean()?.sub(e_model.mean()?),
        EnergyLoss::Hinge => {
            let d = e_data.add_scalar(1.0)?.relu()?.mean()?;
            let m = e_model.neg()?.add_scalar(1.0)?.relu()?.mean()?;
            d.add(m)
        }
    }
}

/// One upper-level gradient evaluation. Gradients go to the energy network
/// and, in non-offset mode, to the encoder through the KL of its posterior
/// on generated samples to the prior. Returns the report and the scalar
/// objective that was differentiated.
pub fn ul_step(models: &mut BiDvlModels, data: &Tensor, noise: &Tensor, cfg: &TrainConfig) -> Result<(LossReport, f64)> {
    const OP: &str = "ul_step";
    let generated = models.generator.generate_tensor(noise)?;
    let tape = Tape::new();
    let energy = &models.eblvm.energy;
    let e_data = energy.energy(&tape, tape.constant(data.clone()))?;
    let g = tape.constant(generated);
    let e_model = energy.energy(&tape, g)?;
    let mut report = LossReport::default();
    report.ul_data_energy = finite(OP, "ul_data_energy", e_data.mean()?)?;
    report.ul_model_energy = finite(OP, "ul_model_energy", e_model.mean()?)?;
    let mut objective = energy_objective(cfg.energy_loss, e_data, e_model)?;
    if cfg.grad_mode == GradMode::NonOffset {
        let (mu, lv) = models.eblvm.posterior.encode(&tape, g)?;
        let kl = kl_to_standard_prior_var(mu, lv)?.mean()?;
        finite(OP, "posterior prior KL", kl)?;
        objective = objective.add(kl)?;
    }
    let value = finite(OP, "objective", objective)?;
    let grads = tape.backward(objective)?;
    for p in models.eblvm.energy.params_mut() {
        grads.accumulate_into(p)?;
    }
    if cfg.grad_mode == GradMode::NonOffset {
        for p in models.eblvm.posterior.params_mut() {
            grads.accumulate_into(p)?;
        }
    }
    Ok((report, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::ArchSpec;
    use crate::data::Rng;
    use crate::nets::{Activation, LinearLayer};
    use crate::tensor::{compare_gradients, finite_diff, Param};

    fn toy(seed: u64, mode: GradMode, loss: EnergyLoss) -> (BiDvlModels, TrainConfig) {
        let arch = ArchSpec { hidden: vec![2], activation: Activation::Tanh, ..ArchSpec::default() };
        let m = BiDvlModels::new(1, 1, &arch, seed).unwrap();
        let cfg = TrainConfig { grad_mode: mode, energy_loss: loss, lambda_rec: 3.0, ..TrainConfig::default() };
        (m, cfg)
    }

    fn batch(seed: u64, n: usize, d_v: usize, d_h: usize) -> (Tensor, Tensor, Tensor) {
        let mut rng = Rng::new(seed);
        (rng.uniform_tensor(&[n, d_v], -0.9, 0.9), rng.normal_tensor(&[n, d_h]), rng.normal_tensor(&[n, d_h]))
    }

    fn grads_of(params: Vec<&Param>) -> Vec<Tensor> {
        params.iter().map(|p| p.grad().clone()).collect()
    }

    /// Checks accumulated gradients of `which` against central differences of `f`.
    fn fd_check(
        models: &BiDvlModels,
        which: fn(&mut BiDvlModels) -> Vec<&mut Param>,
        f: &dyn Fn(&mut BiDvlModels) -> f64,
    ) {
        let mut probe = models.clone();
        let n = which(&mut probe).len();
        for i in 0..n {
            let analytic = which(&mut models.clone())[i].grad().clone();
            let x0 = which(&mut probe)[i].value().clone();
            let numeric = finite_diff(
                |x| {
                    let mut m = models.clone();
                    which(&mut m)[i].set_value(x.clone())?;
                    m.zero_grad();
                    Ok(f(&mut m))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            let check = compare_gradients(&analytic, &numeric, 1e-5, 1e-8).unwrap();
            assert!(check.passed, "param {}: {:?}\nanalytic {:?}\nnumeric {:?}", i, check, analytic, numeric);
        }
    }

    fn enc(m: &mut BiDvlModels) -> Vec<&mut Param> {
        m.eblvm.posterior.params_mut()
    }

    fn gen(m: &mut BiDvlModels) -> Vec<&mut Param> {
        m.generator.params_mut()
    }

    fn energy(m: &mut BiDvlModels) -> Vec<&mut Param> {
        m.eblvm.energy.params_mut()
    }

    #[test]
    fn ll_gradients_match_finite_differences() {
        for mode in [GradMode::Offset, GradMode::NonOffset] {
            let (mut m, cfg) = toy(5, mode, EnergyLoss::Plain);
            let (x, eps, noise) = batch(6, 5, 1, 1);
            ll_step(&mut m, &x, &eps, &noise, &cfg).unwrap();
            let total = |mm: &mut BiDvlModels| ll_step(mm, &x, &eps, &noise, &cfg).unwrap().ll_total();
            fd_check(&m, gen, &total);
            let encoder_part = |mm: &mut BiDvlModels| {
                let r = ll_step(mm, &x, &eps, &noise, &cfg).unwrap();
                match mode {
                    GradMode::Offset => r.weighted_recon + r.weighted_klprior,
                    GradMode::NonOffset => r.ll_total(),
                }
            };
            fd_check(&m, enc, &encoder_part);
            assert!(m.eblvm.energy.params().iter().all(|p| p.grad().max_abs() == 0.0));
        }
    }

    #[test]
    fn ul_gradients_match_finite_differences() {
        for mode in [GradMode::Offset, GradMode::NonOffset] {
            for loss in [EnergyLoss::Plain, EnergyLoss::Hinge] {
                let (mut m, cfg) = toy(8, mode, loss);
                let (x, _, noise) = batch(9, 6, 1, 1);
                ul_step(&mut m, &x, &noise, &cfg).unwrap();
                let obj = |mm: &mut BiDvlModels| ul_step(mm, &x, &noise, &cfg).unwrap().1;
                fd_check(&m, energy, &obj);
                if mode == GradMode::NonOffset {
                    fd_check(&m, enc, &obj);
                } else {
                    assert!(m.eblvm.posterior.params().iter().all(|p| p.grad().max_abs() == 0.0));
                }
                assert!(m.generator.params().iter().all(|p| p.grad().max_abs() == 0.0));
            }
        }
    }

    #[test]
    fn ll_reduces_to_vae_loss() {
        let (mut m, mut cfg) = toy(1, GradMode::Offset, EnergyLoss::Plain);
        cfg.lambda_rec = 1.0;
        let (x, eps, noise) = batch(2, 7, 1, 1);
        let terms = LlTerms { energy_chase: false, latent_cycle: false, unit_weights: true };
        let r = ll_step_with(&mut m, &x, &eps, &noise, &cfg, terms).unwrap();
        let (mu, lv) = m.eblvm.posterior.encode_tensors(&x).unwrap();
        let mut reference = 0.0;
        for i in 0..x.rows() {
            let (mu, lv) = (mu.data()[i], lv.data()[i]);
            let h = mu + (0.5 * lv).exp() * eps.data()[i];
            let xr = m.generator.generate_tensor(&Tensor::from_rows(&[[h]]).unwrap()).unwrap().data()[0];
            reference += (x.data()[i] - xr).powi(2) + 0.5 * (lv.exp() + mu * mu - 1.0 - lv);
        }
        reference /= x.rows() as f64;
        assert!((r.ll_total() - reference).abs() <= 1e-12, "{} vs {}", r.ll_total(), reference);
        assert_eq!(r.energy_chase, 0.0);
        assert_eq!(r.latent_cycle, 0.0);
    }

    #[test]
    fn perfect_vae_has_zero_vae_terms() {
        // Identity generator on latents equal to data, encoder that ignores its
        // input and returns the prior: recon and KL both vanish when h̃ = v.
        let arch = ArchSpec { hidden: vec![], activation: Activation::Identity, spectral_norm: false, ..ArchSpec::default() };
        let mut m = BiDvlModels::new(1, 1, &arch, 0).unwrap();
        m.eblvm.posterior.head_mu = LinearLayer::zeros(1, 1);
        m.eblvm.posterior.head_rawlv = LinearLayer::from_weights(Tensor::zeros(&[1, 1]), Tensor::vector(vec![-1e3]).unwrap()).unwrap();
        // atanh keeps tanh(G(h)) = h for the data values below.
        m.generator.mlp.layers[0] = LinearLayer::from_weights(Tensor::from_rows(&[[1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let eps = Tensor::from_rows(&[[0.5f64.atanh()], [(-0.25f64).atanh()]]).unwrap();
        let x = Tensor::from_rows(&[[0.5], [-0.25]]).unwrap();
        let cfg = TrainConfig::default();
        let r = ll_step(&mut m, &x, &eps, &eps, &cfg).unwrap();
        assert!(r.weighted_recon.abs() < 1e-15, "{}", r.weighted_recon);
        assert!(r.weighted_klprior.abs() < 1e-8, "{}", r.weighted_klprior);
    }

    #[test]
    fn constant_energy_gives_no_chase_gradient() {
        let (mut m, cfg) = toy(3, GradMode::Offset, EnergyLoss::Plain);
        for l in m.eblvm.energy.mlp.layers.iter_mut() {
            let (i, o) = (l.fan_in(), l.fan_out());
            *l = LinearLayer::zeros(i, o);
        }
        let (x, eps, noise) = batch(4, 5, 1, 1);
        let with = ll_step(&mut m.clone(), &x, &eps, &noise, &cfg).unwrap();
        let mut a = m.clone();
        ll_step(&mut a, &x, &eps, &noise, &cfg).unwrap();
        let mut b = m.clone();
        let terms = LlTerms { energy_chase: false, ..LlTerms::default() };
        ll_step_with(&mut b, &x, &eps, &noise, &cfg, terms).unwrap();
        assert_eq!(with.energy_chase, 0.0);
        assert_eq!(grads_of(a.generator.params()), grads_of(b.generator.params()));
    }

    #[test]
    fn latent_cycle_at_identity() {
        // d_h = d_v = 1, G ≈ identity near zero, encoder mean = identity, logvar = 0.
        let arch = ArchSpec { hidden: vec![], activation: Activation::Identity, spectral_norm: false, ..ArchSpec::default() };
        let mut m = BiDvlModels::new(1, 1, &arch, 0).unwrap();
        m.generator.mlp.layers[0] = LinearLayer::from_weights(Tensor::from_rows(&[[1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap();
        m.eblvm.posterior.head_mu = LinearLayer::from_weights(Tensor::from_rows(&[[1.0]]).unwrap(), Tensor::zeros(&[1])).unwrap();
        m.eblvm.posterior.head_rawlv = LinearLayer::from_weights(Tensor::zeros(&[1, 1]), Tensor::vector(vec![-1e3]).unwrap()).unwrap();
        // With h = 0 the generator output is exactly 0 and the posterior mean is h.
        let noise = Tensor::zeros(&[3, 1]);
        let x = Tensor::zeros(&[3, 1]);
        let r = ll_step(&mut m, &x, &noise, &noise, &TrainConfig::default()).unwrap();
        let expected = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((r.latent_cycle - expected).abs() < 1e-8, "{}", r.latent_cycle);
    }

    #[test]
    fn plain_ul_cancels_on_identical_batches_and_bias() {
        let (mut m, cfg) = toy(12, GradMode::Offset, EnergyLoss::Plain);
        let (_, _, noise) = batch(13, 6, 1, 1);
        let x = m.generator.generate_tensor(&noise).unwrap();
        ul_step(&mut m, &x, &noise, &cfg).unwrap();
        assert!(m.eblvm.energy.params().iter().all(|p| p.grad().max_abs() == 0.0));

        let (x, _, noise) = batch(14, 6, 1, 1);
        let mut m = toy(12, GradMode::Offset, EnergyLoss::Plain).0;
        ul_step(&mut m, &x, &noise, &cfg).unwrap();
        assert_eq!(m.eblvm.energy.mlp.layers.last().unwrap().b.grad().data(), &[0.0]);
    }

    #[test]
    fn offset_and_non_offset_share_energy_gradient() {
        let (x, _, noise) = batch(21, 6, 1, 1);
        let (mut a, ca) = toy(20, GradMode::Offset, EnergyLoss::Plain);
        let (mut b, cb) = toy(20, GradMode::NonOffset, EnergyLoss::Plain);
        ul_step(&mut a, &x, &noise, &ca).unwrap();
        ul_step(&mut b, &x, &noise, &cb).unwrap();
        assert_eq!(grads_of(a.eblvm.energy.params()), grads_of(b.eblvm.energy.params()));
    }

    #[test]
    fn hinge_clipped_regions_carry_no_gradient() {
        // Energy = last-layer bias only, so every sample sits at the same energy.
        let (mut m, mut cfg) = toy(30, GradMode::Offset, EnergyLoss::Hinge);
        cfg.energy_loss = EnergyLoss::Hinge;
        m.eblvm.energy.gain = 1.0;
        for l in m.eblvm.energy.mlp.layers.iter_mut() {
            let (i, o) = (l.fan_in(), l.fan_out());
            *l = LinearLayer::zeros(i, o);
        }
        let (x, _, noise) = batch(31, 4, 1, 1);
        let set_bias = |m: &mut BiDvlModels, e: f64| {
            m.eblvm.energy.mlp.layers.last_mut().unwrap().b.set_value(Tensor::vector(vec![e]).unwrap()).unwrap();
        };
        // E = −3: data term clipped, model term ReLU(1 − E) = 4 pushes energy up.
        let mut low = m.clone();
        set_bias(&mut low, -3.0);
        let (_, obj) = ul_step(&mut low, &x, &noise, &cfg).unwrap();
        assert_eq!(obj, 4.0);
        assert_eq!(low.eblvm.energy.mlp.layers.last().unwrap().b.grad().data(), &[-1.0]);
        // E = 3: model term clipped, data term active.
        let mut high = m.clone();
        set_bias(&mut high, 3.0);
        let (_, obj) = ul_step(&mut high, &x, &noise, &cfg).unwrap();
        assert_eq!(obj, 4.0);
        assert_eq!(high.eblvm.energy.mlp.layers.last().unwrap().b.grad().data(), &[1.0]);
    }
}
