//! Line-oriented `key = value` training configuration.
//!
//! `#` starts a comment. Unknown or repeated keys are rejected; missing keys
//! keep their [`TrainConfig::default`] values.

use std::str::FromStr;

use crate::bilevel::{EnergyLoss, GradMode, TrainConfig};
use crate::data::DatasetKind;
use crate::divergence::RatioVariant;
use crate::error::{Error, Result};

/// Header of the per-step metric log.
pub const METRICS_HEADER: &str =
    "iter,weighted_recon,weighted_klprior,energy_chase,latent_cycle,ul_data_energy,ul_model_energy";

pub const KEYS: [&str; 18] = [
    "grad_mode",
    "energy_loss",
    "ratio_mode",
    "r_basic",
    "n_ll_steps",
    "lr_var",
    "lr_energy",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch",
    "seed",
    "d_h",
    "lambda_rec",
    "max_iters",
    "eval_every",
    "dataset",
    "dataset_n",
];

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_pair(line, line_no)?;
        if seen.contains(&key) {
            return Err(Error::config(line_no, format!("duplicate key `{}`", key)));
        }
        set_key(&mut cfg, key, value, line_no)?;
        seen.push(key);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `key=value` override on top of an already parsed config.
pub fn apply_override(cfg: &mut TrainConfig, pair: &str) -> Result<()> {
    let (key, value) = split_pair(pair.trim(), 0)?;
    set_key(cfg, key, value, 0)?;
    cfg.validate()
}

fn split_pair(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::config(line_no, format!("expected `key = value`, got `{}`", line)))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(Error::config(line_no, format!("expected `key = value`, got `{}`", line)));
    }
    Ok((k, v))
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(line, format!("cannot parse `{}` for `{}`", value, key)))
}

fn positive(key: &str, value: &str, line: usize) -> Result<f64> {
    let x: f64 = parse(key, value, line)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::config(line, format!("`{}` must be a positive number, got {}", key, value)));
    }
    Ok(x)
}

fn at_least(key: &str, value: &str, line: usize, min: u64) -> Result<u64> {
    let x: u64 = parse(key, value, line)?;
    if x < min {
        return Err(Error::config(line, format!("`{}` must be at least {}, got {}", key, min, x)));
    }
    Ok(x)
}

fn unit_interval(key: &str, value: &str, line: usize) -> Result<f64> {
    let x: f64 = parse(key, value, line)?;
    if !(0.0..1.0).contains(&x) {
        return Err(Error::config(line, format!("`{}` must lie in [0, 1), got {}", key, value)));
    }
    Ok(x)
}

fn relabel(e: Error, line: usize) -> Error {
    match e {
        Error::Config { msg, .. } => Error::Config { line, msg },
        other => other,
    }
}

fn set_key(cfg: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<()> {
    match key {
        "grad_mode" => cfg.grad_mode = GradMode::from_str(value).map_err(|e| relabel(e, line))?,
        "energy_loss" => cfg.energy_loss = EnergyLoss::from_str(value).map_err(|e| relabel(e, line))?,
        "ratio_mode" => cfg.ratio.variant = RatioVariant::from_str(value).map_err(|e| relabel(e, line))?,
        "r_basic" => cfg.ratio.r_basic = positive(key, value, line)?,
        "n_ll_steps" => cfg.n_ll_steps = at_least(key, value, line, 1)? as usize,
        "lr_var" => cfg.lr_var = positive(key, value, line)?,
        "lr_energy" => cfg.lr_energy = positive(key, value, line)?,
        "adam_beta1" => cfg.adam_betas.0 = unit_interval(key, value, line)?,
        "adam_beta2" => cfg.adam_betas.1 = unit_interval(key, value, line)?,
        "adam_eps" => cfg.adam_eps = positive(key, value, line)?,
        "batch" => cfg.batch = at_least(key, value, line, 2)? as usize,
        "seed" => cfg.seed = parse(key, value, line)?,
        "d_h" => cfg.d_h = at_least(key, value, line, 1)? as usize,
        "lambda_rec" => cfg.lambda_rec = positive(key, value, line)?,
        "max_iters" => cfg.max_iters = parse(key, value, line)?,
        "eval_every" => cfg.eval_every = at_least(key, value, line, 1)?,
        "dataset" => cfg.dataset = DatasetKind::from_name(value).map_err(|e| relabel(e, line))?,
        "dataset_n" => cfg.dataset_n = at_least(key, value, line, 1)? as usize,
        _ => return Err(Error::config(line, format!("unknown key `{}`", key))),
    }
    Ok(())
}

/// Renders a config in the same format [`parse_config`] reads.
pub fn render_config(cfg: &TrainConfig) -> String {
    format!(
        "grad_mode = {}\nenergy_loss = {}\nratio_mode = {}\nr_basic = {}\nn_ll_steps = {}\n\
         lr_var = {}\nlr_energy = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\n\
         batch = {}\nseed = {}\nd_h = {}\nlambda_rec = {}\nmax_iters = {}\neval_every = {}\n\
         dataset = {}\ndataset_n = {}\n",
        cfg.grad_mode,
        cfg.energy_loss,
        cfg.ratio.variant,
        cfg.ratio.r_basic,
        cfg.n_ll_steps,
        cfg.lr_var,
        cfg.lr_energy,
        cfg.adam_betas.0,
        cfg.adam_betas.1,
        cfg.adam_eps,
        cfg.batch,
        cfg.seed,
        cfg.d_h,
        cfg.lambda_rec,
        cfg.max_iters,
        cfg.eval_every,
        cfg.dataset.name(),
        cfg.dataset_n,
    )
}
