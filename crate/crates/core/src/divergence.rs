//! Divergences between Gaussians, discrete distributions and sample sets,
//! plus the importance weights used by the lower level.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RatioVariant {
    #[default]
    Constant,
    ExpNormalized,
    Sigmoid,
}

impl FromStr for RatioVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(RatioVariant::Constant),
            "exp-normalized" => Ok(RatioVariant::ExpNormalized),
            "sigmoid" => Ok(RatioVariant::Sigmoid),
            _ => Err(Error::config(
                0,
                format!("ratio_mode must be constant, exp-normalized or sigmoid, got `{}`", s),
            )),
        }
    }
}

impl fmt::Display for RatioVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatioVariant::Constant => "constant",
            RatioVariant::ExpNormalized => "exp-normalized",
            RatioVariant::Sigmoid => "sigmoid",
        })
    }
}

/// How per-sample importance weights are derived from energies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioMode {
    pub variant: RatioVariant,
    /// Basic scale r′ shared by every variant.
    pub r_basic: f64,
}

pub const DEFAULT_R_BASIC: f64 = 0.05;

impl Default for RatioMode {
    fn default() -> Self {
        RatioMode { variant: RatioVariant::Constant, r_basic: DEFAULT_R_BASIC }
    }
}

/// Importance weights for a batch of energies. The result is a plain tensor,
/// so it never carries gradient.
pub fn importance_ratio(energies: &Tensor, mode: RatioMode) -> Result<Tensor> {
    let e = energies.data();
    if e.is_empty() {
        return Err(Error::contract("importance_ratio", "empty batch"));
    }
    if let Some(bad) = e.iter().find(|x| !x.is_finite()) {
        return Err(Error::numeric("importance_ratio", format!("non-finite energy {}", bad)));
    }
    let n = e.len() as f64;
    let r = mode.r_basic;
    let w: Vec<f64> = match mode.variant {
        RatioVariant::Constant => vec![r; e.len()],
        RatioVariant::ExpNormalized => {
            let shift = e.iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|x| (-x - shift).exp()).collect();
            let mean = ex.iter().sum::<f64>() / n;
            ex.iter().map(|x| r * x / mean).collect()
        }
        RatioVariant::Sigmoid => {
            let mean = e.iter().sum::<f64>() / n;
            e.iter().map(|x| r * sigmoid(mean - x)).collect()
        }
    };
    Tensor::new(energies.shape().to_vec(), w)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

fn check_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Row-wise `KL(N(mu1, e^lv1) ‖ N(mu2, e^lv2))` for diagonal Gaussians.
pub fn kl_diag_gaussians(mu1: &Tensor, lv1: &Tensor, mu2: &Tensor, lv2: &Tensor) -> Result<Tensor> {
    for t in [lv1, mu2, lv2] {
        check_pair("kl_diag_gaussians", mu1, t)?;
    }
    let (rows, d) = (mu1.rows(), mu1.cols());
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut acc = 0.0;
        for j in 0..d {
            let k = i * d + j;
            let (m1, l1, m2, l2) = (mu1.data()[k], lv1.data()[k], mu2.data()[k], lv2.data()[k]);
            acc += 0.5 * (l2 - l1 + (l1.exp() + (m1 - m2).powi(2)) / l2.exp() - 1.0);
        }
        out.push(acc);
    }
    Tensor::new(vec![rows], out)
}

/// Row-wise KL of a diagonal Gaussian to `N(0, I)`.
pub fn kl_to_standard_prior(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let zeros = Tensor::zeros(mu.shape());
    kl_diag_gaussians(mu, logvar, &zeros, &zeros)
}

/// Differentiable [`kl_to_standard_prior`]: `½ Σ (e^lv + μ² − 1 − lv)`, shape `[batch]`.
pub fn kl_to_standard_prior_var<'t>(mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    if mu.shape() != logvar.shape() || mu.shape().len() != 2 {
        return Err(Error::shape("kl_to_standard_prior", format!("{:?} vs {:?}", mu.shape(), logvar.shape())));
    }
    let per_dim = logvar.exp()?.add(mu.square()?)?.sub(logvar)?.add_scalar(-1.0)?;
    per_dim.sum_axis(1)?.scale(0.5)
}

/// Bandwidths of an RBF kernel mixture `Σ_b exp(−‖x−y‖² / (2b²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { bandwidths: vec![0.1, 0.5, 1.0, 2.0, 8.0] }
    }
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::contract("kernel", format!("bandwidths must be nonempty and positive: {:?}", bandwidths)));
        }
        Ok(KernelSpec { bandwidths })
    }

    /// Single bandwidth equal to the median pairwise distance of the pooled samples.
    pub fn median_heuristic(x: &Tensor, y: &Tensor) -> Result<Self> {
        let pooled: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).chain((0..y.rows()).map(|i| y.row(i))).collect();
        let mut d = Vec::new();
        for i in 0..pooled.len() {
            for j in i + 1..pooled.len() {
                d.push(sq_dist(pooled[i], pooled[j]).sqrt());
            }
        }
        if d.is_empty() {
            return Err(Error::contract("median_heuristic", "need at least two samples"));
        }
        d.sort_by(f64::total_cmp);
        let median = d[d.len() / 2];
        KernelSpec::new(vec![if median > 0.0 { median } else { 1.0 }])
    }

    fn eval_sq(&self, sq: f64) -> f64 {
        self.bandwidths.iter().map(|b| (-sq / (2.0 * b * b)).exp()).sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_offdiag(x: &Tensor, k: &KernelSpec) -> f64 {
    let n = x.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += k.eval_sq(sq_dist(x.row(i), x.row(j)));
        }
    }
    2.0 * acc / (n * (n - 1)) as f64
}

/// Unbiased squared MMD between two sample sets (rows are samples).
pub fn mmd2_rbf(x: &Tensor, y: &Tensor, kernel: &KernelSpec) -> Result<f64> {
    if x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols() {
        return Err(Error::shape("mmd2_rbf", format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::contract("mmd2_rbf", "each sample set needs at least two rows"));
    }
    let mut cross = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            cross += kernel.eval_sq(sq_dist(x.row(i), y.row(j)));
        }
    }
    cross /= (x.rows() * y.rows()) as f64;
    Ok(mean_offdiag(x, kernel) + mean_offdiag(y, kernel) - 2.0 * cross)
}

/// Stein kernel `u_q(x, y)` for the RBF base kernel with bandwidth `bw`,
/// given the scores `sx = ∇log q(x)` and `sy = ∇log q(y)`.
pub fn stein_kernel(x: &[f64], sx: &[f64], y: &[f64], sy: &[f64], bw: f64) -> f64 {
    let h2 = bw * bw;
    let sq = sq_dist(x, y);
    let k = (-sq / (2.0 * h2)).exp();
    let d = x.len() as f64;
    let mut ss = 0.0;
    let mut sx_dk = 0.0;
    let mut sy_dk = 0.0;
    for i in 0..x.len() {
        let diff = x[i] - y[i];
        ss += sx[i] * sy[i];
        // ∇_y k = (x − y)/h² · k and ∇_x k = −(x − y)/h² · k
        sx_dk += sx[i] * diff;
        sy_dk -= sy[i] * diff;
    }
    k * (ss + (sx_dk + sy_dk) / h2 + d / h2 - sq / (h2 * h2))
}

/// Kernelized Stein discrepancy of samples `x` (rows) against a density
/// known only through its score, as a U-statistic over distinct pairs.
pub fn ksd_rbf(x: &Tensor, score: impl Fn(&[f64]) -> Vec<f64>, bandwidth: f64) -> Result<f64> {
    if x.rank() != 2 {
        return Err(Error::shape("ksd_rbf", format!("expected samples × dim, got {:?}", x.shape())));
    }
    if x.rows() < 2 {
        return Err(Error::contract("ksd_rbf", "need at least two samples"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::contract("ksd_rbf", "bandwidth must be positive"));
    }
    let scores: Vec<Vec<f64>> = (0..x.rows()).map(|i| score(x.row(i))).collect();
    for s in &scores {
        if s.len() != x.cols() {
            return Err(Error::shape("ksd_rbf", format!("score width {} for dim {}", s.len(), x.cols())));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("ksd_rbf", "non-finite score"));
        }
    }
    let n = x.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += stein_kernel(x.row(i), &scores[i], x.row(j), &scores[j], bandwidth);
        }
    }
    Ok(2.0 * acc / (n * (n - 1)) as f64)
}

fn check_distribution(op: &'static str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::contract(op, "probabilities must be finite and nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::contract(op, format!("probabilities sum to {}", total)));
    }
    Ok(())
}

fn check_discrete_pair(op: &'static str, p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::shape(op, format!("support sizes {} and {}", p.len(), q.len())));
    }
    check_distribution(op, p)?;
    check_distribution(op, q)
}

/// Total variation distance `½ Σ |pᵢ − qᵢ|`.
pub fn tv_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_discrete_pair("tv_discrete", p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ pᵢ ln(pᵢ/qᵢ)` with `0 ln 0 = 0`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_discrete_pair("kl_discrete", p, q)?;
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::domain("kl_discrete", format!("q is zero at {} where p = {}", i, a)));
        }
        acc += a * (a / b).ln();
    }
    Ok(acc)
}

pub fn symmetric_kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(kl_discrete(p, q)? + kl_discrete(q, p)?)
}
