//! Exact enumeration over small discrete energy-based latent variable models.
//!
//! Every table is `V × H` with rows indexed by the visible state; the
//! conditional tables `p(h|v)` and `q(h|v)` have rows summing to one.

use std::fmt::Write as _;

use crate::data::Rng;
use crate::divergence::{kl_discrete, tv_discrete};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_STATES: usize = 16;

/// Joint energy table `E[v][h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteEblvm {
    energy: Tensor,
}

impl DiscreteEblvm {
    pub fn new(energy: Tensor) -> Result<Self> {
        if energy.rank() != 2 || energy.is_empty() {
            return Err(Error::shape("discrete_eblvm", format!("expected V × H table, got {:?}", energy.shape())));
        }
        if energy.rows() > MAX_STATES || energy.cols() > MAX_STATES {
            return Err(Error::contract("discrete_eblvm", format!("table {:?} exceeds 16 × 16", energy.shape())));
        }
        Ok(DiscreteEblvm { energy })
    }

    /// Entries uniform in `[lo, hi]`.
    pub fn random(rng: &mut Rng, v: usize, h: usize, lo: f64, hi: f64) -> Result<Self> {
        DiscreteEblvm::new(rng.uniform_tensor(&[v, h], lo, hi))
    }

    pub fn energy(&self) -> &Tensor {
        &self.energy
    }

    pub fn v(&self) -> usize {
        self.energy.rows()
    }

    pub fn h(&self) -> usize {
        self.energy.cols()
    }

    /// The same model with `c` added to every energy.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        DiscreteEblvm::new(self.energy.map(|e| e + c)?)
    }
}

/// Empirical data distribution over visible states.
#[derive(Clone, Debug, PartialEq)]
pub struct DataDist {
    q: Vec<f64>,
}

impl DataDist {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        check_simplex("data_dist", &q)?;
        Ok(DataDist { q })
    }

    pub fn random(rng: &mut Rng, v: usize) -> Self {
        DataDist { q: random_simplex(rng, v) }
    }

    pub fn probs(&self) -> &[f64] {
        &self.q
    }
}

/// Variational posterior `q(h|v)` and variational joint `p(v,h)` tables.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteVariational {
    pub q_post: Tensor,
    pub p_joint: Tensor,
}

impl DiscreteVariational {
    pub fn new(q_post: Tensor, p_joint: Tensor) -> Result<Self> {
        if q_post.shape() != p_joint.shape() || q_post.rank() != 2 {
            return Err(Error::shape("discrete_variational", format!("{:?} vs {:?}", q_post.shape(), p_joint.shape())));
        }
        for v in 0..q_post.rows() {
            check_simplex("discrete_variational", q_post.row(v))?;
        }
        check_simplex("discrete_variational", p_joint.data())?;
        Ok(DiscreteVariational { q_post, p_joint })
    }

    /// Strictly positive random tables.
    pub fn random(rng: &mut Rng, v: usize, h: usize) -> Self {
        let mut post = Vec::with_capacity(v * h);
        for _ in 0..v {
            post.extend(random_simplex(rng, h));
        }
        DiscreteVariational {
            q_post: Tensor::from_parts(vec![v, h], post),
            p_joint: Tensor::from_parts(vec![v, h], random_simplex(rng, v * h)),
        }
    }
}

fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (1.5 * rng.normal()).exp()).collect();
    normalize(&w)
}

/// Divides by the sum and moves the rounding residue into the largest cell,
/// so the result sums to one as closely as floating point allows.
fn normalize(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let resid = 1.0 - p.iter().sum::<f64>();
    if let Some(i) = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])) {
        p[i] += resid;
    }
    p
}

fn check_simplex(op: &'static str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::contract(op, "probabilities must be finite and nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::contract(op, format!("probabilities sum to {}", total)));
    }
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact normalized quantities of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    /// `log p(v,h) = −E(v,h) − log Z`.
    pub log_joint: Tensor,
    pub p_joint: Tensor,
    pub p_v: Vec<f64>,
    pub p_h_given_v: Tensor,
}

pub fn exact_marginals(m: &DiscreteEblvm) -> Marginals {
    let (nv, nh) = (m.v(), m.h());
    let e = m.energy.data();
    let log_z = log_sum_exp(e.iter().map(|x| -x));
    let log_joint: Vec<f64> = e.iter().map(|x| -x - log_z).collect();
    let p_joint: Vec<f64> = log_joint.iter().map(|l| l.exp()).collect();
    let mut p_v = Vec::with_capacity(nv);
    let mut post = Vec::with_capacity(nv * nh);
    for v in 0..nv {
        let row = &e[v * nh..(v + 1) * nh];
        let log_zv = log_sum_exp(row.iter().map(|x| -x));
        p_v.push((log_zv - log_z).exp());
        post.extend(row.iter().map(|x| (-x - log_zv).exp()));
    }
    Marginals {
        log_z,
        log_joint: Tensor::from_parts(vec![nv, nh], log_joint),
        p_joint: Tensor::from_parts(vec![nv, nh], p_joint),
        p_v,
        p_h_given_v: Tensor::from_parts(vec![nv, nh], post),
    }
}

fn check_data(m: &DiscreteEblvm, data: &DataDist) -> Result<()> {
    if data.q.len() != m.v() {
        return Err(Error::shape("oracle", format!("data over {} states, model has {}", data.q.len(), m.v())));
    }
    Ok(())
}

fn check_var(m: &DiscreteEblvm, var: &DiscreteVariational) -> Result<()> {
    if var.q_post.shape() != m.energy.shape() || var.p_joint.shape() != m.energy.shape() {
        return Err(Error::shape("oracle", "variational tables do not match the model"));
    }
    Ok(())
}

fn table(m: &DiscreteEblvm, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let (nv, nh) = (m.v(), m.h());
    let mut d = Vec::with_capacity(nv * nh);
    for v in 0..nv {
        for h in 0..nh {
            d.push(f(v, h));
        }
    }
    Tensor::from_parts(vec![nv, nh], d)
}

/// `∂J/∂E[v][h] = q(v) p(h|v) − p(v,h)` for `J = KL(q ‖ p(v))`.
pub fn exact_nll_grad(m: &DiscreteEblvm, data: &DataDist) -> Result<Tensor> {
    check_data(m, data)?;
    let mg = exact_marginals(m);
    let nh = m.h();
    Ok(table(m, |v, h| data.q[v] * mg.p_h_given_v.data()[v * nh + h] - mg.p_joint.data()[v * nh + h]))
}

/// The three-way split of the likelihood gradient: `a` uses only the
/// variational tables, `b` and `c` are the posterior and joint residuals.
pub fn split_terms(m: &DiscreteEblvm, var: &DiscreteVariational, data: &DataDist) -> Result<(Tensor, Tensor, Tensor)> {
    check_data(m, data)?;
    check_var(m, var)?;
    let mg = exact_marginals(m);
    let nh = m.h();
    let at = |t: &Tensor, v: usize, h: usize| t.data()[v * nh + h];
    let a = table(m, |v, h| data.q[v] * at(&var.q_post, v, h) - at(&var.p_joint, v, h));
    let b = table(m, |v, h| data.q[v] * (at(&mg.p_h_given_v, v, h) - at(&var.q_post, v, h)));
    let c = table(m, |v, h| at(&var.p_joint, v, h) - at(&mg.p_joint, v, h));
    Ok((a, b, c))
}

/// The lower-level optimum: both variational tables equal the model's own.
pub fn solve_ll_exact(m: &DiscreteEblvm) -> DiscreteVariational {
    let mg = exact_marginals(m);
    DiscreteVariational { q_post: mg.p_h_given_v, p_joint: mg.p_joint }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JObjectives {
    /// `KL(q(v) ‖ p(v))`.
    pub j: f64,
    /// `KL(q(v) q(h|v) ‖ p(v,h)) − KL(p_var(v,h) ‖ p(v,h))`.
    pub j_ul: f64,
    /// `KL(q(v) q(h|v) ‖ q(v) p(h|v))`.
    pub kl_post: f64,
    /// `KL(p_var(v,h) ‖ p(v,h))`.
    pub kl_joint: f64,
}

/// `Σ a (log a − log b)` with the log of `b` supplied directly.
fn kl_with_log(op: &'static str, a: &[f64], log_a: &[f64], log_b: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..a.len() {
        if a[i] == 0.0 {
            continue;
        }
        if log_b[i] == f64::NEG_INFINITY {
            return Err(Error::domain(op, format!("second argument vanishes at cell {} where the first is {}", i, a[i])));
        }
        acc += a[i] * (log_a[i] - log_b[i]);
    }
    Ok(acc)
}

pub fn j_objectives(m: &DiscreteEblvm, var: &DiscreteVariational, data: &DataDist) -> Result<JObjectives> {
    check_data(m, data)?;
    check_var(m, var)?;
    let mg = exact_marginals(m);
    let nh = m.h();
    let log_pv: Vec<f64> = mg.p_v.iter().map(|p| p.ln()).collect();
    let log_q: Vec<f64> = data.q.iter().map(|p| p.ln()).collect();
    let j = kl_with_log("j_objectives", &data.q, &log_q, &log_pv)?;

    let mut qq = Vec::with_capacity(m.v() * nh);
    let mut log_qq = Vec::with_capacity(m.v() * nh);
    let mut log_q_ptrue = Vec::with_capacity(m.v() * nh);
    for v in 0..m.v() {
        for h in 0..nh {
            let k = v * nh + h;
            qq.push(data.q[v] * var.q_post.data()[k]);
            log_qq.push(log_q[v] + var.q_post.data()[k].ln());
            log_q_ptrue.push(log_q[v] + mg.p_h_given_v.data()[k].ln());
        }
    }
    let kl_data_joint = kl_with_log("j_objectives", &qq, &log_qq, mg.log_joint.data())?;
    let log_pj: Vec<f64> = var.p_joint.data().iter().map(|p| p.ln()).collect();
    let kl_joint = kl_with_log("j_objectives", var.p_joint.data(), &log_pj, mg.log_joint.data())?;
    let kl_post = kl_with_log("j_objectives", &qq, &log_qq, &log_q_ptrue)?;
    Ok(JObjectives { j, j_ul: kl_data_joint - kl_joint, kl_post, kl_joint })
}

/// Max-abs gap between the variational gradient term at the exact
/// lower-level solution and the true likelihood gradient.
pub fn optimum_grad_gap(m: &DiscreteEblvm, data: &DataDist) -> Result<f64> {
    let var = solve_ll_exact(m);
    let (a, _, _) = split_terms(m, &var, data)?;
    let g = exact_nll_grad(m, data)?;
    Ok(max_abs_diff(&a, &g))
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One line of the verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

pub fn report_csv(checks: &[OracleCheck]) -> String {
    let mut s = String::from("check,cases,max_deviation,tolerance,passed\n");
    for c in checks {
        let _ = writeln!(s, "{},{},{:e},{:e},{}", c.name, c.cases, c.max_deviation, c.tolerance, c.passed());
    }
    s
}

fn random_model(rng: &mut Rng) -> Result<(DiscreteEblvm, DataDist)> {
    let v = 2 + rng.below(5) as usize;
    let h = 2 + rng.below(5) as usize;
    let m = DiscreteEblvm::random(rng, v, h, -2.0, 2.0)?;
    let data = DataDist::random(rng, v);
    Ok((m, data))
}

/// Runs every identity on `n_seeds` random models derived from `seed`.
pub fn verification_suite(n_seeds: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut dev = [0.0f64; 7];
    for s in 0..n_seeds as u64 {
        let mut rng = Rng::split(seed, s);
        let (m, data) = random_model(&mut rng)?;
        let star = solve_ll_exact(&m);
        let at_star = j_objectives(&m, &star, &data)?;
        dev[0] = dev[0].max((at_star.j_ul - at_star.j).abs());
        dev[1] = dev[1].max(optimum_grad_gap(&m, &data)?);

        let var = DiscreteVariational::random(&mut rng, m.v(), m.h());
        let (a, b, c) = split_terms(&m, &var, &data)?;
        let g = exact_nll_grad(&m, &data)?;
        let sum = Tensor::from_parts(
            g.shape().to_vec(),
            a.data().iter().zip(b.data()).zip(c.data()).map(|((x, y), z)| x + y + z).collect(),
        );
        dev[2] = dev[2].max(max_abs_diff(&sum, &g));

        let jo = j_objectives(&m, &var, &data)?;
        dev[3] = dev[3].max(((jo.j_ul - jo.j) - (jo.kl_post - jo.kl_joint)).abs());
        dev[4] = dev[4].max((jo.j_ul - jo.j).abs() - (jo.kl_post + jo.kl_joint));

        let p = var.p_joint.data();
        let q = exact_marginals(&m).p_joint;
        let tv = tv_discrete(p, q.data())?;
        dev[5] = dev[5].max(2.0 * tv * tv - kl_discrete(p, q.data())?);

        let shifted = exact_marginals(&m.shifted(rng.uniform_range(-5.0, 5.0))?);
        dev[6] = dev[6].max(max_abs_diff(&shifted.p_joint, &q));
    }
    let check = |name, max_deviation, tolerance| OracleCheck { name, cases: n_seeds, max_deviation, tolerance };
    Ok(vec![
        check("optimum_objective", dev[0], 1e-10),
        check("optimum_gradient", dev[1], 1e-10),
        check("split_identity", dev[2], 1e-12),
        check("gap_identity", dev[3], 1e-12),
        check("gap_bound", dev[4], 1e-12),
        check("pinsker", dev[5], 1e-12),
        check("energy_shift", dev[6], 1e-12),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::symmetric_kl_discrete;
    use crate::tensor::finite_diff;
    use proptest::prelude::*;
    use crate::data::Rng;

    fn model(rows: &[&[f64]]) -> DiscreteEblvm {
        DiscreteEblvm::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn uniform_model() {
        let m = model(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let mg = exact_marginals(&m);
        assert!((mg.log_z - 4f64.ln()).abs() < 1e-15);
        assert!(mg.p_joint.data().iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!(mg.p_h_given_v.data().iter().all(|p| (p - 0.5).abs() < 1e-15));
        let g = exact_nll_grad(&m, &DataDist::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.25, 0.25, -0.25, -0.25]);
        assert_eq!(optimum_grad_gap(&m, &DataDist::new(vec![0.5, 0.5]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn hand_enumerated_model() {
        let m = model(&[&[0.0, 2f64.ln()], &[0.0, 0.0]]);
        let mg = exact_marginals(&m);
        assert!((mg.log_z.exp() - 3.5).abs() < 1e-14);
        assert!((mg.p_joint.data()[1] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let m = DiscreteEblvm::random(&mut Rng::new(2), 3, 4, -2.0, 2.0).unwrap();
        let a = exact_marginals(&m);
        let b = exact_marginals(&m.shifted(7.5).unwrap());
        assert!(max_abs_diff(&a.p_joint, &b.p_joint) < 1e-15);
        assert!((b.log_z - (a.log_z - 7.5)).abs() < 1e-13);
    }

    #[test]
    fn data_equal_to_model_is_stationary() {
        let m = DiscreteEblvm::random(&mut Rng::new(5), 4, 3, -2.0, 2.0).unwrap();
        let data = DataDist::new(normalize(&exact_marginals(&m).p_v)).unwrap();
        let g = exact_nll_grad(&m, &data).unwrap();
        assert!(g.max_abs() < 1e-15);
        assert!(g.sum().abs() < 1e-15);
    }

    #[test]
    fn residuals_vanish_at_the_optimum_only() {
        let mut rng = Rng::new(8);
        let m = DiscreteEblvm::random(&mut rng, 3, 3, -2.0, 2.0).unwrap();
        let data = DataDist::random(&mut rng, 3);
        let star = solve_ll_exact(&m);
        let (_, b, c) = split_terms(&m, &star, &data).unwrap();
        assert_eq!(b.max_abs(), 0.0);
        assert_eq!(c.max_abs(), 0.0);

        let wrong = DiscreteVariational { q_post: DiscreteVariational::random(&mut rng, 3, 3).q_post, p_joint: star.p_joint.clone() };
        let (_, b, c) = split_terms(&m, &wrong, &data).unwrap();
        assert_eq!(c.max_abs(), 0.0);
        assert!(b.max_abs() > 0.0);

        let mg = exact_marginals(&m);
        for v in 0..3 {
            let p = mg.p_h_given_v.row(v);
            assert_eq!(kl_discrete(p, star.q_post.row(v)).unwrap(), 0.0);
            assert_eq!(symmetric_kl_discrete(p, star.q_post.row(v)).unwrap(), 0.0);
            assert_eq!(tv_discrete(p, star.q_post.row(v)).unwrap(), 0.0);
        }
        assert_eq!(kl_discrete(mg.p_joint.data(), star.p_joint.data()).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_posterior_breaks_gradient_match() {
        let mut rng = Rng::new(9);
        let m = DiscreteEblvm::random(&mut rng, 3, 3, -2.0, 2.0).unwrap();
        let data = DataDist::random(&mut rng, 3);
        let mut var = solve_ll_exact(&m);
        let row: Vec<f64> = var.q_post.row(0).to_vec();
        let bumped = normalize(&[row[0] + 1e-3, row[1], row[2]]);
        let mut post = var.q_post.data().to_vec();
        post[..3].copy_from_slice(&bumped);
        var.q_post = Tensor::matrix(3, 3, post).unwrap();
        let (a, _, _) = split_terms(&m, &var, &data).unwrap();
        assert!(max_abs_diff(&a, &exact_nll_grad(&m, &data).unwrap()) > 0.0);
    }

    /// Independent route: differentiate the objectives numerically in `E`.
    #[test]
    fn gradients_match_finite_differences_of_objectives() {
        let mut rng = Rng::new(13);
        for _ in 0..5 {
            let m = DiscreteEblvm::random(&mut rng, 3, 4, -2.0, 2.0).unwrap();
            let data = DataDist::random(&mut rng, 3);
            let j = |e: &Tensor| Ok(j_objectives(&DiscreteEblvm::new(e.clone())?, &solve_ll_exact(&m), &data)?.j);
            let fd = finite_diff(j, m.energy(), 1e-5).unwrap();
            assert!(max_abs_diff(&fd, &exact_nll_grad(&m, &data).unwrap()) < 1e-8);

            // J_UL with the variational tables held at the optimum of the unperturbed model.
            let star = solve_ll_exact(&m);
            let jul = |e: &Tensor| Ok(j_objectives(&DiscreteEblvm::new(e.clone())?, &star, &data)?.j_ul);
            let fd = finite_diff(jul, m.energy(), 1e-5).unwrap();
            let (a, _, _) = split_terms(&m, &star, &data).unwrap();
            assert!(max_abs_diff(&fd, &a) < 1e-8);
        }
    }

    #[test]
    fn support_violation_is_domain_error() {
        let m = model(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let var = solve_ll_exact(&m);
        let underflow = DiscreteEblvm::new(Tensor::from_rows(&[[0.0, 1e4], [0.0, 0.0]]).unwrap()).unwrap();
        let err = j_objectives(&underflow, &var, &DataDist::new(vec![0.5, 0.5]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }), "{:?}", err);
    }

    #[test]
    fn oversized_table_rejected() {
        assert!(matches!(DiscreteEblvm::new(Tensor::zeros(&[17, 2])), Err(Error::Contract { .. })));
    }

    #[test]
    fn suite_passes() {
        let checks = verification_suite(20, 1).unwrap();
        assert!(checks.iter().all(OracleCheck::passed), "{}", report_csv(&checks));
    }

    proptest! {
        #[test]
        fn split_identity_and_gap_chain(seed in 0u64..10_000) {
            let mut rng = Rng::new(seed);
            let (m, data) = random_model(&mut rng).unwrap();
            let var = DiscreteVariational::random(&mut rng, m.v(), m.h());
            let (a, b, c) = split_terms(&m, &var, &data).unwrap();
            let g = exact_nll_grad(&m, &data).unwrap();
            for i in 0..g.len() {
                prop_assert!((a.data()[i] + b.data()[i] + c.data()[i] - g.data()[i]).abs() <= 1e-12);
            }
            prop_assert!(g.sum().abs() < 1e-12);
            let jo = j_objectives(&m, &var, &data).unwrap();
            prop_assert!(((jo.j_ul - jo.j) - (jo.kl_post - jo.kl_joint)).abs() <= 1e-12);
            prop_assert!((jo.j_ul - jo.j).abs() <= jo.kl_post + jo.kl_joint + 1e-12);
        }
    }
}
