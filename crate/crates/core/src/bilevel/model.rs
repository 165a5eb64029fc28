use crate::data::{Checkpoint, Rng};
use crate::error::{Error, Result};
use crate::nets::{
    init_params, log_prob_diag_gaussian, Activation, EnergyNet, GaussianEncoder, Generator, InitScheme, Module, Prior,
};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Network shapes shared by all three MLPs.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
    /// Spectral normalization on every energy layer.
    pub spectral_norm: bool,
    /// Spectral normalization on every encoder layer, heads included.
    pub encoder_spectral_norm: bool,
    /// Output multiplier of the energy network.
    pub energy_gain: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec { hidden: vec![128, 128], activation: Activation::Relu, init: InitScheme::KaimingUniform, spectral_norm: true, encoder_spectral_norm: false, energy_gain: 10.0 }
    }
}

/// Marginal energy plus the structural posterior it is paired with; the
/// joint energy is `E(v) − log q(h|v)`.
#[derive(Clone, Debug)]
pub struct DecoupledEblvm {
    pub energy: EnergyNet,
    pub posterior: GaussianEncoder,
}

/// Per-row joint energy `E(v) − log q(h|v)`.
pub fn joint_energy<'t>(m: &DecoupledEblvm, tape: &'t Tape, v: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
    let e = m.energy.energy(tape, v)?;
    let (mu, lv) = m.posterior.encode(tape, v)?;
    e.sub(log_prob_diag_gaussian(h, mu, lv)?)
}

/// Everything trained together: the decoupled model and the generator.
#[derive(Clone, Debug)]
pub struct BiDvlModels {
    pub eblvm: DecoupledEblvm,
    pub generator: Generator,
    pub prior: Prior,
}

const ENERGY: &str = "energy";
const ENCODER: &str = "encoder";
const GENERATOR: &str = "generator";
const ENERGY_GAIN: &str = "energy.gain";

impl BiDvlModels {
    /// Randomly initialized networks; each one draws from its own stream of `seed`.
    pub fn new(d_v: usize, d_h: usize, arch: &ArchSpec, seed: u64) -> Result<Self> {
        if d_v == 0 || d_h == 0 {
            return Err(Error::contract("models", "dimensions must be positive"));
        }
        if !(arch.energy_gain.is_finite() && arch.energy_gain > 0.0) {
            return Err(Error::contract("models", format!("energy gain must be positive, got {}", arch.energy_gain)));
        }
        let mut energy = EnergyNet::new(d_v, &arch.hidden, arch.activation);
        energy.gain = arch.energy_gain;
        let mut posterior = GaussianEncoder::new(d_v, &arch.hidden, d_h, arch.activation);
        let mut generator = Generator::new(d_h, &arch.hidden, d_v, arch.activation);
        if arch.spectral_norm {
            energy.mlp.enable_spectral_norm(&mut Rng::split(seed, 0x5e))?;
        }
        if arch.encoder_spectral_norm {
            posterior.enable_spectral_norm(&mut Rng::split(seed, 0x5f))?;
        }
        init_params(&mut energy, Rng::split(seed, 1).next_u64(), arch.init)?;
        init_params(&mut posterior, Rng::split(seed, 2).next_u64(), arch.init)?;
        init_params(&mut generator, Rng::split(seed, 3).next_u64(), arch.init)?;
        Ok(BiDvlModels { eblvm: DecoupledEblvm { energy, posterior }, generator, prior: Prior { dim: d_h } })
    }

    pub fn d_v(&self) -> usize {
        self.eblvm.energy.d_v()
    }

    pub fn d_h(&self) -> usize {
        self.prior.dim
    }

    pub fn energy_ids(&self) -> Vec<ParamId> {
        self.eblvm.energy.params().iter().map(|p| p.id()).collect()
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        self.eblvm.posterior.params().iter().map(|p| p.id()).collect()
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.generator.params().iter().map(|p| p.id()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.eblvm.energy.zero_grad();
        self.eblvm.posterior.zero_grad();
        self.generator.zero_grad();
    }

    /// `n` generator samples from prior draws.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        self.generator.generate_tensor(&self.prior.sample(rng, n))
    }

    /// `G(μ(x))`, the posterior-mean reconstruction.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.eblvm.posterior.encode_tensors(x)?;
        self.generator.generate_tensor(&mu)
    }

    pub fn to_checkpoint(&self, iteration: u64) -> Checkpoint {
        let mut blobs = Vec::new();
        self.eblvm.energy.export(ENERGY, &mut blobs);
        blobs.push((ENERGY_GAIN.to_string(), Tensor::scalar(self.eblvm.energy.gain)));
        self.eblvm.posterior.export(ENCODER, &mut blobs);
        self.generator.export(GENERATOR, &mut blobs);
        Checkpoint { iteration, blobs }
    }

    /// Overwrites parameters from a checkpoint written by a model of the same shape.
    pub fn load(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.eblvm.energy.import(ENERGY, ckpt)?;
        self.eblvm.energy.gain = match ckpt.get(ENERGY_GAIN) {
            Some(g) => g.item()?,
            None => 1.0,
        };
        self.eblvm.posterior.import(ENCODER, ckpt)?;
        self.generator.import(GENERATOR, ckpt)
    }

    /// Rebuilds models whose layer widths are read off the checkpoint's weight shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint, activation: Activation) -> Result<Self> {
        let energy = layer_shapes(ckpt, ENERGY)?;
        let encoder = layer_shapes(ckpt, ENCODER)?;
        let generator = layer_shapes(ckpt, GENERATOR)?;
        if encoder.len() < 2 {
            return Err(Error::Format("encoder needs two head layers".into()));
        }
        let d_v = energy[0][1];
        let d_h = generator[0][1];
        let hidden = |shapes: &[[usize; 2]]| shapes[..shapes.len() - 1].iter().map(|s| s[0]).collect::<Vec<_>>();
        let enc_hidden: Vec<usize> = encoder[..encoder.len() - 2].iter().map(|s| s[0]).collect();
        let mut m = BiDvlModels {
            eblvm: DecoupledEblvm {
                energy: EnergyNet::new(d_v, &hidden(&energy), activation),
                posterior: GaussianEncoder::new(d_v, &enc_hidden, d_h, activation),
            },
            generator: Generator::new(d_h, &hidden(&generator), d_v, activation),
            prior: Prior { dim: d_h },
        };
        m.load(ckpt)?;
        Ok(m)
    }
}

fn layer_shapes(ckpt: &Checkpoint, prefix: &str) -> Result<Vec<[usize; 2]>> {
    let mut out = Vec::new();
    while let Some(w) = ckpt.get(&format!("{}.{}.w", prefix, out.len())) {
        if w.rank() != 2 {
            return Err(Error::Format(format!("{}.{}.w is not a matrix", prefix, out.len())));
        }
        out.push([w.shape()[0], w.shape()[1]]);
    }
    if out.is_empty() {
        return Err(Error::Format(format!("checkpoint has no `{}` layers", prefix)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::LinearLayer;

    #[test]
    fn joint_energy_at_posterior_mean() {
        let mut m = BiDvlModels::new(1, 1, &ArchSpec { hidden: vec![], ..ArchSpec::default() }, 0).unwrap();
        m.eblvm.energy.mlp.layers[0] = LinearLayer::zeros(1, 1);
        // rawlv head at the clamp floor gives logvar ≈ 0.
        m.eblvm.posterior.head_rawlv = LinearLayer::from_weights(Tensor::zeros(&[1, 1]), Tensor::vector(vec![-40.0]).unwrap()).unwrap();
        let tape = Tape::new();
        let v = tape.constant(Tensor::from_rows(&[[0.3]]).unwrap());
        let (mu, _) = m.eblvm.posterior.encode(&tape, v).unwrap();
        let h = tape.constant((*mu.value()).clone());
        let je = joint_energy(&m.eblvm, &tape, v, h).unwrap().item().unwrap();
        assert!((je - 0.9189385332046727).abs() < 1e-8, "{}", je);
    }

    #[test]
    fn energy_shift_moves_joint_energy() {
        let m = BiDvlModels::new(2, 2, &ArchSpec { hidden: vec![8], ..ArchSpec::default() }, 4).unwrap();
        let mut shifted = m.clone();
        let last = shifted.eblvm.energy.mlp.layers.last_mut().unwrap();
        let b = last.b.value().map(|x| x + 1.25 / m.eblvm.energy.gain).unwrap();
        last.b.set_value(b).unwrap();
        let mut rng = Rng::new(1);
        let v = rng.uniform_tensor(&[5, 2], -1.0, 1.0);
        let h = rng.normal_tensor(&[5, 2]);
        let eval = |m: &BiDvlModels| {
            let tape = Tape::new();
            let out = joint_energy(&m.eblvm, &tape, tape.constant(v.clone()), tape.constant(h.clone())).unwrap();
            (*out.value()).clone()
        };
        for (a, b) in eval(&m).data().iter().zip(eval(&shifted).data()) {
            assert!((b - a - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_rebuild() {
        let m = BiDvlModels::new(2, 3, &ArchSpec { hidden: vec![7, 5], ..ArchSpec::default() }, 11).unwrap();
        let ckpt = m.to_checkpoint(42);
        let back = BiDvlModels::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), Activation::Relu).unwrap();
        assert_eq!(back.to_checkpoint(42), ckpt);
        let x = Tensor::from_rows(&[[0.1, -0.4]]).unwrap();
        assert_eq!(back.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
        assert_eq!(back.eblvm.energy.energies(&x).unwrap(), m.eblvm.energy.energies(&x).unwrap());
    }
}
