//! Finite-difference verification of every network gradient and of the two
//! training-step gradients, on small smooth models.

use std::fmt::Write as _;

use crate::bilevel::{ll_step, ul_step, ArchSpec, BiDvlModels, EnergyLoss, GradMode, TrainConfig};
use crate::data::Rng;
use crate::error::Result;
use crate::nets::{log_prob_diag_gaussian, Activation, Module};
use crate::tensor::{compare_gradients, finite_diff, GradCheck, Param, Tape, Tensor, Var};

pub const REL_TOL: f64 = 1e-5;
/// Coordinates whose gradients agree to this absolute level pass outright.
pub const ABS_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GradCheckRow {
    pub seed: u64,
    pub target: &'static str,
    pub params: usize,
    pub check: GradCheck,
}

pub fn report_csv(rows: &[GradCheckRow]) -> String {
    let mut s = String::from("seed,target,params,max_abs_err,max_rel_err,passed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:e},{:e},{}", r.seed, r.target, r.params, r.check.max_abs_err, r.check.max_rel_err, r.check.passed);
    }
    s
}

type Select = fn(&mut BiDvlModels) -> Vec<&mut Param>;

fn energy_params(m: &mut BiDvlModels) -> Vec<&mut Param> {
    m.eblvm.energy.params_mut()
}

fn encoder_params(m: &mut BiDvlModels) -> Vec<&mut Param> {
    m.eblvm.posterior.params_mut()
}

fn generator_params(m: &mut BiDvlModels) -> Vec<&mut Param> {
    m.generator.params_mut()
}

/// Compares the gradient `grad` leaves in the selected parameters with
/// central differences of `loss`, which must not depend on `.grad`.
fn check_group(
    models: &BiDvlModels,
    select: Select,
    grad: &dyn Fn(&mut BiDvlModels) -> Result<()>,
    loss: &dyn Fn(&mut BiDvlModels) -> Result<f64>,
    h: f64,
) -> Result<(usize, GradCheck)> {
    let mut analytic = models.clone();
    analytic.zero_grad();
    grad(&mut analytic)?;
    let n = select(&mut analytic).len();
    let mut worst = GradCheck { max_abs_err: 0.0, max_rel_err: 0.0, passed: true };
    let mut count = 0;
    for i in 0..n {
        let a = select(&mut analytic)[i].grad().clone();
        let x0 = select(&mut models.clone())[i].value().clone();
        count += x0.len();
        let num = finite_diff(
            |x| {
                let mut m = models.clone();
                select(&mut m)[i].set_value(x.clone())?;
                loss(&mut m)
            },
            &x0,
            h,
        )?;
        let c = compare_gradients(&a, &num, REL_TOL, ABS_TOL)?;
        worst.max_abs_err = worst.max_abs_err.max(c.max_abs_err);
        worst.max_rel_err = worst.max_rel_err.max(c.max_rel_err);
        worst.passed &= c.passed;
    }
    Ok((count, worst))
}

fn backprop_into(m: &mut BiDvlModels, loss: impl for<'t> Fn(&'t Tape, &BiDvlModels) -> Result<Var<'t>>) -> Result<()> {
    let tape = Tape::new();
    let l = loss(&tape, m)?;
    let g = tape.backward(l)?;
    for p in m.eblvm.energy.params_mut() {
        g.accumulate_into(p)?;
    }
    for p in m.eblvm.posterior.params_mut() {
        g.accumulate_into(p)?;
    }
    for p in m.generator.params_mut() {
        g.accumulate_into(p)?;
    }
    Ok(())
}

/// Pins a closure to the tape-generic signature.
fn tape_loss<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &BiDvlModels) -> Result<Var<'t>>,
{
    f
}

fn value_of(m: &BiDvlModels, loss: impl for<'t> Fn(&'t Tape, &BiDvlModels) -> Result<Var<'t>>) -> Result<f64> {
    let tape = Tape::new();
    loss(&tape, m)?.item()
}

/// All checks for one seed: a weighted energy sum, the posterior
/// log-density of random latents, a generator regression loss, and the
/// lower- and upper-level objectives in both gradient modes.
pub fn gradcheck_seed(seed: u64, h: f64) -> Result<Vec<GradCheckRow>> {
    let arch = ArchSpec { hidden: vec![5, 4], activation: Activation::Tanh, ..ArchSpec::default() };
    let models = BiDvlModels::new(2, 2, &arch, seed)?;
    let mut rng = Rng::split(seed, 0x6c);
    let x = rng.uniform_tensor(&[6, 2], -0.9, 0.9);
    let lat = rng.normal_tensor(&[6, 2]);
    let coef = rng.normal_tensor(&[6]);
    let target = rng.uniform_tensor(&[6, 2], -0.5, 0.5);
    let mut rows = Vec::new();
    let mut push = |target: &'static str, (params, check): (usize, GradCheck)| {
        rows.push(GradCheckRow { seed, target, params, check });
    };

    let energy_loss = tape_loss(|t, m| {
        let e = m.eblvm.energy.energy(t, t.constant(x.clone()))?;
        e.mul(t.constant(coef.clone()))?.mean()
    });
    push("energy", check_group(&models, energy_params, &|m| backprop_into(m, &energy_loss), &|m| value_of(m, &energy_loss), h)?);

    let encoder_loss = tape_loss(|t, m| {
        let (mu, lv) = m.eblvm.posterior.encode(t, t.constant(x.clone()))?;
        log_prob_diag_gaussian(t.constant(lat.clone()), mu, lv)?.neg()?.mean()
    });
    push("encoder", check_group(&models, encoder_params, &|m| backprop_into(m, &encoder_loss), &|m| value_of(m, &encoder_loss), h)?);

    let generator_loss = tape_loss(|t, m| {
        let g = m.generator.generate(t, t.constant(lat.clone()))?;
        g.sub(t.constant(target.clone()))?.square()?.mean()
    });
    push("generator", check_group(&models, generator_params, &|m| backprop_into(m, &generator_loss), &|m| value_of(m, &generator_loss), h)?);

    let eps = rng.normal_tensor(&[6, 2]);
    let noise = rng.normal_tensor(&[6, 2]);
    for mode in [GradMode::Offset, GradMode::NonOffset] {
        let cfg = TrainConfig { grad_mode: mode, energy_loss: EnergyLoss::Plain, lambda_rec: 2.0, ..TrainConfig::default() };
        let ll = |m: &mut BiDvlModels| ll_step(m, &x, &eps, &noise, &cfg).map(|_| ());
        let ll_total = |m: &mut BiDvlModels| Ok(ll_step(m, &x, &eps, &noise, &cfg)?.ll_total());
        let ll_vae = |m: &mut BiDvlModels| {
            let r = ll_step(m, &x, &eps, &noise, &cfg)?;
            Ok(r.weighted_recon + r.weighted_klprior)
        };
        let ul = |m: &mut BiDvlModels| ul_step(m, &x, &noise, &cfg).map(|_| ());
        let ul_obj = |m: &mut BiDvlModels| Ok(ul_step(m, &x, &noise, &cfg)?.1);
        let (gen_name, enc_name, ul_name) = match mode {
            GradMode::Offset => ("ll_step/generator/offset", "ll_step/encoder/offset", "ul_step/energy/offset"),
            GradMode::NonOffset => ("ll_step/generator/non-offset", "ll_step/encoder/non-offset", "ul_step/energy/non-offset"),
        };
        push(gen_name, check_group(&models, generator_params, &ll, &ll_total, h)?);
        // In offset mode the latent cycle term is blocked from the encoder.
        let enc_loss: &dyn Fn(&mut BiDvlModels) -> Result<f64> = match mode {
            GradMode::Offset => &ll_vae,
            GradMode::NonOffset => &ll_total,
        };
        push(enc_name, check_group(&models, encoder_params, &ll, enc_loss, h)?);
        push(ul_name, check_group(&models, energy_params, &ul, &ul_obj, h)?);
        if mode == GradMode::NonOffset {
            push("ul_step/encoder/non-offset", check_group(&models, encoder_params, &ul, &ul_obj, h)?);
        }
    }
    Ok(rows)
}

pub fn gradcheck_suite(n_seeds: usize, h: f64) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for s in 0..n_seeds as u64 {
        rows.extend(gradcheck_seed(s, h)?);
    }
    Ok(rows)
}

/// Direct check of a loss built from a tape against its numeric gradient in one input.
pub fn check_input_gradient(x: &Tensor, f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>, h: f64) -> Result<GradCheck> {
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&tape, leaf)?;
    let g = tape.backward(out)?;
    let analytic = g.wrt(leaf).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let numeric = finite_diff(
        |xv| {
            let t = Tape::new();
            f(&t, t.constant(xv.clone()))?.item()
        },
        x,
        h,
    )?;
    compare_gradients(&analytic, &numeric, REL_TOL, ABS_TOL)
}
