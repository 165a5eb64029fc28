//! Reconstruction error, energy-based OOD detection, sample quality and
//! mode coverage, plus energy-landscape export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bilevel::{BiDvlModels, TrainConfig};
use crate::data::{eight_gaussian_centers, make_dataset, uniform_box, Checkpoint, DatasetKind, DatasetSpec, Rng};
use crate::divergence::{mmd2_rbf, KernelSpec};
use crate::error::{Error, Result};
use crate::nets::{Activation, EnergyNet};
use crate::tensor::Tensor;

pub fn rmse(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::shape("rmse", format!("{:?} vs {:?}", x.shape(), xhat.shape())));
    }
    if x.is_empty() {
        return Err(Error::contract("rmse", "empty input"));
    }
    let sq: f64 = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

/// Posterior-mean reconstructions `G(μ(x))` and their RMSE.
pub fn recon_pass(models: &BiDvlModels, test: &Tensor) -> Result<(Tensor, f64)> {
    let xhat = models.reconstruct(test)?;
    let err = rmse(test, &xhat)?;
    Ok((xhat, err))
}

/// Probability that a random in-distribution score beats a random
/// out-of-distribution one, ties counting one half.
pub fn auroc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::contract("auroc", "both score sets must be nonempty"));
    }
    if scores_in.iter().chain(scores_out).any(|s| s.is_nan()) {
        return Err(Error::numeric("auroc", "NaN score"));
    }
    let mut out = scores_out.to_vec();
    out.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in scores_in {
        let below = out.partition_point(|&o| o < s);
        let upto = out.partition_point(|&o| o <= s);
        wins += below as f64 + 0.5 * (upto - below) as f64;
    }
    Ok(wins / (scores_in.len() as f64 * out.len() as f64))
}

/// AUROC of `−E(v)` for the in-distribution set against each named OOD set.
pub fn ood_report(energy: &EnergyNet, in_set: &Tensor, ood_sets: &[(String, Tensor)]) -> Result<BTreeMap<String, f64>> {
    let neg = |t: &Tensor| -> Result<Vec<f64>> { Ok(energy.energies(t)?.data().iter().map(|e| -e).collect()) };
    let s_in = neg(in_set)?;
    let mut out = BTreeMap::new();
    for (name, set) in ood_sets {
        out.insert(name.clone(), auroc(&s_in, &neg(set)?)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoverage {
    pub covered: usize,
    /// Fraction of all samples assigned to each center.
    pub per_mode_mass: Vec<f64>,
}

/// Fraction of mass a mode needs to count as covered.
pub const MODE_MASS_THRESHOLD: f64 = 0.02;

/// Assigns each sample to its nearest center when within `radius`; a mode
/// is covered once it holds at least 2% of the samples.
pub fn mode_coverage(samples: &Tensor, centers: &[Vec<f64>], radius: f64) -> Result<ModeCoverage> {
    if centers.is_empty() {
        return Err(Error::contract("mode_coverage", "no centers"));
    }
    if samples.rank() != 2 || centers.iter().any(|c| c.len() != samples.cols()) {
        return Err(Error::shape("mode_coverage", "centers and samples disagree in dimension"));
    }
    let mut counts = vec![0usize; centers.len()];
    for i in 0..samples.rows() {
        let x = samples.row(i);
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("centers is nonempty");
        if d2.sqrt() <= radius && radius > 0.0 {
            counts[best] += 1;
        }
    }
    let n = samples.rows().max(1) as f64;
    let per_mode_mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let covered = per_mode_mass.iter().filter(|&&m| m >= MODE_MASS_THRESHOLD).count();
    Ok(ModeCoverage { covered, per_mode_mass })
}

/// Energies on a regular grid over a 2-D box. Row 0 is the top edge
/// (largest second coordinate); columns run left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrid {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    pub values: Tensor,
}

pub fn energy_grid(energy: &EnergyNet, lo: f64, hi: f64, resolution: usize) -> Result<EnergyGrid> {
    if energy.d_v() != 2 {
        return Err(Error::Unsupported(format!("energy grids need 2-D data, model has d_v = {}", energy.d_v())));
    }
    if resolution < 2 || !(hi > lo) {
        return Err(Error::contract("energy_grid", "need resolution ≥ 2 and hi > lo"));
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(2 * resolution * resolution);
    for i in 0..resolution {
        let y = hi - i as f64 * step;
        for j in 0..resolution {
            pts.push(lo + j as f64 * step);
            pts.push(y);
        }
    }
    let values = energy.energies(&Tensor::matrix(resolution * resolution, 2, pts)?)?;
    Ok(EnergyGrid { lo, hi, resolution, values: values.reshape(vec![resolution, resolution])? })
}

impl EnergyGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.resolution {
            let row: Vec<String> = self.values.row(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Binary 8-bit PGM, min-max normalized; a flat field maps to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let d = self.values.data();
        let (min, max) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = max - min;
        let mut out = format!("P5\n{} {}\n255\n", self.resolution, self.resolution).into_bytes();
        out.extend(d.iter().map(|&v| if range > 0.0 { ((v - min) / range * 255.0).round() as u8 } else { 0 }));
        out
    }
}

/// Everything needed to score a model against a dataset.
#[derive(Clone, Debug)]
pub struct EvalProtocol {
    pub held_out: Tensor,
    pub ood_sets: Vec<(String, Tensor)>,
    /// Mode centers and assignment radius, when the dataset has known modes.
    pub modes: Option<(Vec<Vec<f64>>, f64)>,
    pub n_samples: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
}

impl EvalProtocol {
    /// Uniform-box OOD set, and for eight-Gaussians the mode centers with a
    /// 3σ radius.
    pub fn for_dataset(kind: &DatasetKind, held_out: Tensor, n_samples: usize, seed: u64) -> Self {
        let d = held_out.cols();
        let ood_sets = vec![("uniform".to_string(), uniform_box(held_out.rows(), d, seed))];
        let modes = match kind {
            DatasetKind::EightGaussians { radius, std } => {
                Some((eight_gaussian_centers(*radius).iter().map(|c| c.to_vec()).collect(), 3.0 * std))
            }
            _ => None,
        };
        EvalProtocol { held_out, ood_sets, modes, n_samples, kernel: KernelSpec::default(), seed }
    }

    /// `n` held-out points drawn from a stream disjoint from the training
    /// draw of `cfg`, scored against `n` model samples.
    pub fn for_config(cfg: &TrainConfig, n: usize) -> Result<Self> {
        Ok(Self::for_dataset(&cfg.dataset, held_out_set(cfg, n)?, n, cfg.seed))
    }
}

/// Stream of the held-out split.
const HELD_OUT_STREAM: u64 = 0x4e1d;

/// The training draw of `cfg`: `dataset_n` points seeded by the run seed.
pub fn training_set(cfg: &TrainConfig) -> Result<Tensor> {
    make_dataset(&DatasetSpec { kind: cfg.dataset.clone(), n: cfg.dataset_n, seed: cfg.seed })
}

/// Fresh samples of the configured dataset that the training run never sees.
pub fn held_out_set(cfg: &TrainConfig, n: usize) -> Result<Tensor> {
    let seed = Rng::split(cfg.seed, HELD_OUT_STREAM).next_u64();
    make_dataset(&DatasetSpec { kind: cfg.dataset.clone(), n, seed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mmd2: f64,
    pub rmse: f64,
    pub auroc_per_ood_set: BTreeMap<String, f64>,
    pub modes_covered: usize,
    pub per_mode_mass: Vec<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "mmd2,{}", self.mmd2);
        let _ = writeln!(s, "rmse,{}", self.rmse);
        for (k, v) in &self.auroc_per_ood_set {
            let _ = writeln!(s, "auroc_{},{}", k, v);
        }
        let _ = writeln!(s, "modes_covered,{}", self.modes_covered);
        for (i, m) in self.per_mode_mass.iter().enumerate() {
            let _ = writeln!(s, "mode_mass_{},{}", i, m);
        }
        s
    }
}

pub fn evaluate(models: &BiDvlModels, protocol: &EvalProtocol) -> Result<EvalReport> {
    let samples = models.sample(&mut Rng::split(protocol.seed, 0x5a), protocol.n_samples)?;
    let mmd2 = mmd2_rbf(&samples, &protocol.held_out, &protocol.kernel)?;
    let (_, rmse) = recon_pass(models, &protocol.held_out)?;
    let auroc_per_ood_set = ood_report(&models.eblvm.energy, &protocol.held_out, &protocol.ood_sets)?;
    let (modes_covered, per_mode_mass) = match &protocol.modes {
        Some((centers, radius)) => {
            let c = mode_coverage(&samples, centers, *radius)?;
            (c.covered, c.per_mode_mass)
        }
        None => (0, Vec::new()),
    };
    Ok(EvalReport { mmd2, rmse, auroc_per_ood_set, modes_covered, per_mode_mass })
}

/// Best OOD AUROC over a checkpoint sequence for one named OOD set, with the
/// iteration it occurred at.
pub fn best_ood_checkpoint(
    checkpoints: &[Checkpoint],
    activation: Activation,
    protocol: &EvalProtocol,
    set: &str,
) -> Result<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for ckpt in checkpoints {
        let m = BiDvlModels::from_checkpoint(ckpt, activation)?;
        let r = ood_report(&m.eblvm.energy, &protocol.held_out, &protocol.ood_sets)?;
        let a = *r.get(set).ok_or_else(|| Error::contract("best_ood_checkpoint", format!("no OOD set `{}`", set)))?;
        if best.map_or(true, |(_, b)| a > b) {
            best = Some((ckpt.iteration, a));
        }
    }
    best.ok_or_else(|| Error::contract("best_ood_checkpoint", "no checkpoints"))
}
