//! The three networks of the model: a marginal energy, a diagonal Gaussian
//! encoder and a deterministic generator, all plain MLPs.

mod init;
mod linear;

use std::f64::consts::PI;

pub use init::{init_params, InitScheme};
pub use linear::{LinearLayer, SpectralState};

use crate::data::{Checkpoint, Rng};
use crate::error::{Error, Result};
use crate::tensor::{Param, Tape, Tensor, Unary, Var};

/// Bounds applied to the raw log-variance head before `−softplus`.
pub const RAW_LOGVAR_CLAMP: f64 = 20.0;
/// Generator pre-activations are clamped here so `tanh` stays strictly inside (−1, 1).
pub const GENERATOR_PREACT_CLAMP: f64 = 15.0;
/// Power iterations run when spectral normalization is switched on.
pub const SN_INIT_ITERS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.unary(Unary::Relu),
            Activation::Tanh => x.unary(Unary::Tanh),
            Activation::Softplus => x.unary(Unary::Softplus),
            Activation::Identity => Ok(x),
        }
    }
}

/// Anything built from linear layers. Parameter names, initialization and
/// checkpoint blobs all derive from the layer list.
pub trait Module {
    fn layers(&self) -> Vec<&LinearLayer>;
    fn layers_mut(&mut self) -> Vec<&mut LinearLayer>;

    fn params(&self) -> Vec<&Param> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value().len()).sum()
    }

    /// One power iteration per spectrally normalized layer.
    fn refresh_spectral_norm(&mut self, n_iters: usize) -> Result<()> {
        for l in self.layers_mut() {
            if l.spectral_state().is_some() {
                l.spectral_normalize(n_iters)?;
            }
        }
        Ok(())
    }

    fn export(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, l) in self.layers().into_iter().enumerate() {
            out.push((format!("{}.{}.w", prefix, i), l.w.value().clone()));
            out.push((format!("{}.{}.b", prefix, i), l.b.value().clone()));
            if let Some(s) = l.spectral_state() {
                let u = Tensor::from_parts(vec![s.u.len()], s.u.clone());
                let v = Tensor::from_parts(vec![s.v.len()], s.v.clone());
                out.push((format!("{}.{}.sn_u", prefix, i), u));
                out.push((format!("{}.{}.sn_v", prefix, i), v));
                out.push((format!("{}.{}.sn_sigma", prefix, i), Tensor::scalar(s.sigma)));
            }
        }
    }

    fn import(&mut self, prefix: &str, ckpt: &Checkpoint) -> Result<()> {
        for (i, l) in self.layers_mut().into_iter().enumerate() {
            let fetch = |what: &str| {
                let name = format!("{}.{}.{}", prefix, i, what);
                ckpt.get(&name).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks `{}`", name)))
            };
            l.w.set_value(fetch("w")?)?;
            l.b.set_value(fetch("b")?)?;
            let sn = match (fetch("sn_u"), fetch("sn_v"), fetch("sn_sigma")) {
                (Ok(u), Ok(v), Ok(sigma)) => {
                    let sigma = sigma.item()?;
                    Some(SpectralState { u: u.into_data(), v: v.into_data(), sigma, degenerate: !(sigma > 0.0) })
                }
                _ => None,
            };
            l.set_spectral_state(sn);
        }
        Ok(())
    }
}

/// Stack of linear layers with an activation between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
    /// Whether the activation also follows the last layer.
    pub activate_last: bool,
}

impl Mlp {
    /// Zero-initialized; call [`init_params`] to randomize.
    pub fn new(widths: &[usize], activation: Activation, activate_last: bool) -> Self {
        let layers = widths.windows(2).map(|w| LinearLayer::zeros(w[0], w[1])).collect();
        Mlp { layers, activation, activate_last }
    }

    pub fn in_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in())
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out())
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last || self.activate_last {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }

    pub fn enable_spectral_norm(&mut self, rng: &mut Rng) -> Result<()> {
        for l in &mut self.layers {
            l.enable_spectral_norm(rng, SN_INIT_ITERS)?;
        }
        Ok(())
    }
}

impl Module for Mlp {
    fn layers(&self) -> Vec<&LinearLayer> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.layers.iter_mut().collect()
    }
}

fn check_width(op: &'static str, x: &Var<'_>, width: usize) -> Result<()> {
    let s = x.shape();
    if s.len() != 2 || s[1] != width {
        return Err(Error::shape(op, format!("input {:?}, network expects width {}", s, width)));
    }
    Ok(())
}

/// Scalar marginal energy `E(v)`; no output nonlinearity.
#[derive(Clone, Debug)]
pub struct EnergyNet {
    pub mlp: Mlp,
    /// Fixed output multiplier; with spectral normalization the energy is
    /// `gain`-Lipschitz.
    pub gain: f64,
}

impl EnergyNet {
    pub fn new(d_v: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![d_v];
        widths.extend_from_slice(hidden);
        widths.push(1);
        EnergyNet { mlp: Mlp::new(&widths, activation, false), gain: 1.0 }
    }

    pub fn d_v(&self) -> usize {
        self.mlp.in_width()
    }

    /// Per-row energies, shape `[batch]`.
    pub fn energy<'t>(&self, tape: &'t Tape, v: Var<'t>) -> Result<Var<'t>> {
        check_width("energy", &v, self.d_v())?;
        let batch = v.shape()[0];
        let out = self.mlp.forward(tape, v)?.reshape(vec![batch])?;
        if self.gain == 1.0 {
            Ok(out)
        } else {
            out.scale(self.gain)
        }
    }

    /// Convenience forward pass outside any training graph.
    pub fn energies(&self, v: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(v.clone());
        Ok((*self.energy(&tape, x)?.value()).clone())
    }
}

impl Module for EnergyNet {
    fn layers(&self) -> Vec<&LinearLayer> {
        self.mlp.layers()
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.mlp.layers_mut()
    }
}

/// Diagonal Gaussian `q(h|v) = N(μ(v), diag(exp(logvar(v))))` with
/// `logvar = −softplus(clamp(raw, ±20))`, so the variance never exceeds one.
#[derive(Clone, Debug)]
pub struct GaussianEncoder {
    pub trunk: Mlp,
    pub head_mu: LinearLayer,
    pub head_rawlv: LinearLayer,
}

impl GaussianEncoder {
    pub fn new(d_v: usize, hidden: &[usize], d_h: usize, activation: Activation) -> Self {
        let mut widths = vec![d_v];
        widths.extend_from_slice(hidden);
        let top = *widths.last().unwrap();
        GaussianEncoder {
            trunk: Mlp::new(&widths, activation, true),
            head_mu: LinearLayer::zeros(top, d_h),
            head_rawlv: LinearLayer::zeros(top, d_h),
        }
    }

    pub fn d_v(&self) -> usize {
        if self.trunk.layers.is_empty() {
            self.head_mu.fan_in()
        } else {
            self.trunk.in_width()
        }
    }

    pub fn d_h(&self) -> usize {
        self.head_mu.fan_out()
    }

    pub fn encode<'t>(&self, tape: &'t Tape, v: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        check_width("encode", &v, self.d_v())?;
        let h = self.trunk.forward(tape, v)?;
        let mu = self.head_mu.forward(tape, h)?;
        let raw = self.head_rawlv.forward(tape, h)?;
        let logvar = raw.clamp(-RAW_LOGVAR_CLAMP, RAW_LOGVAR_CLAMP)?.softplus()?.neg()?;
        Ok((mu, logvar))
    }

    pub fn enable_spectral_norm(&mut self, rng: &mut Rng) -> Result<()> {
        for l in self.layers_mut() {
            l.enable_spectral_norm(rng, SN_INIT_ITERS)?;
        }
        Ok(())
    }

    /// Posterior mean and log-variance as plain tensors.
    pub fn encode_tensors(&self, v: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let x = tape.constant(v.clone());
        let (mu, lv) = self.encode(&tape, x)?;
        Ok(((*mu.value()).clone(), (*lv.value()).clone()))
    }
}

impl Module for GaussianEncoder {
    fn layers(&self) -> Vec<&LinearLayer> {
        let mut l = self.trunk.layers();
        l.push(&self.head_mu);
        l.push(&self.head_rawlv);
        l
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut l: Vec<&mut LinearLayer> = self.trunk.layers.iter_mut().collect();
        l.push(&mut self.head_mu);
        l.push(&mut self.head_rawlv);
        l
    }
}

/// Deterministic map from latents to the visible box, `tanh` on the output.
#[derive(Clone, Debug)]
pub struct Generator {
    pub mlp: Mlp,
}

impl Generator {
    pub fn new(d_h: usize, hidden: &[usize], d_v: usize, activation: Activation) -> Self {
        let mut widths = vec![d_h];
        widths.extend_from_slice(hidden);
        widths.push(d_v);
        Generator { mlp: Mlp::new(&widths, activation, false) }
    }

    pub fn d_h(&self) -> usize {
        self.mlp.in_width()
    }

    pub fn d_v(&self) -> usize {
        self.mlp.out_width()
    }

    pub fn generate<'t>(&self, tape: &'t Tape, h: Var<'t>) -> Result<Var<'t>> {
        check_width("generate", &h, self.d_h())?;
        self.mlp
            .forward(tape, h)?
            .clamp(-GENERATOR_PREACT_CLAMP, GENERATOR_PREACT_CLAMP)?
            .tanh()
    }

    pub fn generate_tensor(&self, h: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(h.clone());
        Ok((*self.generate(&tape, x)?.value()).clone())
    }
}

impl Module for Generator {
    fn layers(&self) -> Vec<&LinearLayer> {
        self.mlp.layers()
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.mlp.layers_mut()
    }
}

/// Fixed standard normal prior over latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prior {
    pub dim: usize,
}

impl Prior {
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Tensor {
        rng.normal_tensor(&[n, self.dim])
    }
}

fn same_shape(op: &'static str, vars: &[&Var<'_>]) -> Result<Vec<usize>> {
    let s = vars[0].shape();
    for v in &vars[1..] {
        if v.shape() != s {
            return Err(Error::shape(op, format!("{:?} vs {:?}", s, v.shape())));
        }
    }
    Ok(s)
}

/// Reparameterized draw `h = μ + exp(logvar / 2) ⊙ ε`.
pub fn sample_posterior<'t>(mu: Var<'t>, logvar: Var<'t>, eps: Var<'t>) -> Result<Var<'t>> {
    same_shape("sample_posterior", &[&mu, &logvar, &eps])?;
    mu.add(logvar.scale(0.5)?.exp()?.mul(eps)?)
}

/// Row-wise `log N(h; μ, diag(exp(logvar)))`, shape `[batch]`.
pub fn log_prob_diag_gaussian<'t>(h: Var<'t>, mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    let shape = same_shape("log_prob_diag_gaussian", &[&h, &mu, &logvar])?;
    if shape.len() != 2 {
        return Err(Error::shape("log_prob_diag_gaussian", format!("expected batch × dim, got {:?}", shape)));
    }
    let sq = h.sub(mu)?.square()?;
    let inv_var = logvar.neg()?.exp()?;
    let quad = sq.mul(inv_var)?.scale(0.5)?;
    let per_dim = quad.add(logvar.scale(0.5)?)?.add_scalar(0.5 * (2.0 * PI).ln())?;
    per_dim.sum_axis(1)?.neg()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn single_linear_energy() {
        let mut e = EnergyNet::new(2, &[], Activation::Identity);
        e.mlp.layers[0] = LinearLayer::from_weights(t(&[&[1.0, 1.0]]), Tensor::zeros(&[1])).unwrap();
        let out = e.energies(&t(&[&[2.0, 3.0]])).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn zero_final_layer_gives_zero_energy_and_batch_shape() {
        let mut e = EnergyNet::new(2, &[8], Activation::Relu);
        init_params(&mut e, 3, InitScheme::KaimingUniform).unwrap();
        let last = e.mlp.layers.len() - 1;
        e.mlp.layers[last] = LinearLayer::zeros(8, 1);
        let out = e.energies(&Tensor::full(&[4, 2], 0.3)).unwrap();
        assert_eq!(out.shape(), &[4]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_logvar_at_zero_and_clamp_floor() {
        let mut enc = GaussianEncoder::new(2, &[], 3, Activation::Relu);
        let (_, lv) = enc.encode_tensors(&Tensor::full(&[2, 2], 0.5)).unwrap();
        for &x in lv.data() {
            assert!((x + std::f64::consts::LN_2).abs() < 1e-15);
        }
        // Bias of −50 clamps to −20: logvar = −softplus(−20) ≈ −2.06e-9.
        enc.head_rawlv.b.set_value(Tensor::full(&[3], -50.0)).unwrap();
        let (_, lv) = enc.encode_tensors(&Tensor::full(&[1, 2], 0.5)).unwrap();
        for &x in lv.data() {
            assert!((x + 2.0611536e-9).abs() < 1e-15, "{}", x);
        }
    }

    #[test]
    fn encode_width_mismatch() {
        let enc = GaussianEncoder::new(2, &[4], 2, Activation::Relu);
        assert!(matches!(enc.encode_tensors(&Tensor::zeros(&[1, 3])), Err(Error::Shape { .. })));
    }

    #[test]
    fn generator_zero_weights_and_range() {
        let g = Generator::new(2, &[4], 2, Activation::Relu);
        let out = g.generate_tensor(&Tensor::full(&[3, 2], 1.0)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));

        let mut g = Generator::new(2, &[], 2, Activation::Relu);
        g.mlp.layers[0] = LinearLayer::from_weights(Tensor::full(&[2, 2], 100.0), Tensor::zeros(&[2])).unwrap();
        let out = g.generate_tensor(&Tensor::full(&[1, 2], 50.0)).unwrap();
        assert!(out.data().iter().all(|&x| x.abs() < 1.0));
    }

    #[test]
    fn reparameterization_cases() {
        let tape = Tape::new();
        let c = |x: Tensor| tape.constant(x);
        let mu = c(Tensor::full(&[1, 1], 1.0));
        let lv = c(Tensor::full(&[1, 1], 2.0 * 0.5f64.ln()));
        let eps = c(Tensor::full(&[1, 1], 2.0));
        let h = sample_posterior(mu, lv, eps).unwrap();
        assert!((h.item().unwrap() - 2.0).abs() < 1e-15);

        let zeros = c(Tensor::zeros(&[2, 2]));
        let e = c(Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap());
        let h = sample_posterior(zeros, zeros, e).unwrap();
        assert_eq!(h.value().data(), e.value().data());

        let mu = c(Tensor::from_rows(&[[0.7, -0.2]]).unwrap());
        let lvv = c(Tensor::from_rows(&[[-0.3, 0.1]]).unwrap());
        let h = sample_posterior(mu, lvv, c(Tensor::zeros(&[1, 2]))).unwrap();
        assert_eq!(h.value().data(), mu.value().data());
    }

    #[test]
    fn gaussian_log_density_closed_forms() {
        let tape = Tape::new();
        let c = |x: Tensor| tape.constant(x);
        let one = log_prob_diag_gaussian(c(Tensor::zeros(&[1, 1])), c(Tensor::zeros(&[1, 1])), c(Tensor::zeros(&[1, 1])))
            .unwrap()
            .item()
            .unwrap();
        assert!((one + 0.9189385332046727).abs() < 1e-15);
        let two = log_prob_diag_gaussian(c(Tensor::zeros(&[1, 2])), c(Tensor::zeros(&[1, 2])), c(Tensor::zeros(&[1, 2])))
            .unwrap()
            .item()
            .unwrap();
        assert!((two + 1.8378770664093453).abs() < 1e-15);

        // One standard deviation away costs exactly half a nat.
        let lv = 0.7;
        let sd = (lv / 2.0f64).exp();
        let at_mean = log_prob_diag_gaussian(c(Tensor::full(&[1, 1], 0.2)), c(Tensor::full(&[1, 1], 0.2)), c(Tensor::full(&[1, 1], lv)))
            .unwrap()
            .item()
            .unwrap();
        let off = log_prob_diag_gaussian(c(Tensor::full(&[1, 1], 0.2 + sd)), c(Tensor::full(&[1, 1], 0.2)), c(Tensor::full(&[1, 1], lv)))
            .unwrap()
            .item()
            .unwrap();
        assert!((at_mean - off - 0.5).abs() < 1e-12);
    }
}
