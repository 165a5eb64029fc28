use crate::data::Rng;
use crate::error::{Error, Result};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Power-iteration vectors and the current top-singular-value estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
    /// Set when the last estimate was zero; forward then uses `W` unscaled.
    pub degenerate: bool,
}

/// Affine map `y = x · Wᵀ + b` with `W: out × in`, optionally spectrally
/// normalized so that the forward pass uses `W / σ̂`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: Param,
    pub b: Param,
    sn: Option<SpectralState>,
}

impl LinearLayer {
    /// Zero weights and biases.
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LinearLayer {
            w: Param::new(Tensor::zeros(&[fan_out, fan_in])),
            b: Param::new(Tensor::zeros(&[fan_out])),
            sn: None,
        }
    }

    pub fn from_weights(w: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2 || b.shape() != [w.shape()[0]] {
            return Err(Error::shape("linear", format!("weight {:?} with bias {:?}", w.shape(), b.shape())));
        }
        Ok(LinearLayer { w: Param::new(w), b: Param::new(b), sn: None })
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[0]
    }

    /// Turns on spectral normalization from a random unit right vector and
    /// runs `n_iters` power iterations.
    pub fn enable_spectral_norm(&mut self, rng: &mut Rng, n_iters: usize) -> Result<f64> {
        let v = rng.unit_vector(self.fan_in());
        self.sn = Some(SpectralState { u: vec![0.0; self.fan_out()], v, sigma: 1.0, degenerate: false });
        self.spectral_normalize(n_iters)
    }

    pub fn spectral_state(&self) -> Option<&SpectralState> {
        self.sn.as_ref()
    }

    pub(crate) fn set_spectral_state(&mut self, state: Option<SpectralState>) {
        self.sn = state;
    }

    /// Runs `n_iters` rounds of `u ← Wv/‖Wv‖, v ← Wᵀu/‖Wᵀu‖` and stores
    /// `σ̂ = uᵀWv`. Returns `σ̂`; zero means the matrix is degenerate.
    pub fn spectral_normalize(&mut self, n_iters: usize) -> Result<f64> {
        if n_iters == 0 {
            return Err(Error::contract("spectral_normalize", "need at least one iteration"));
        }
        let (out, inp) = (self.fan_out(), self.fan_in());
        let w = self.w.value().data();
        let state = self
            .sn
            .as_mut()
            .ok_or_else(|| Error::contract("spectral_normalize", "spectral normalization is not enabled"))?;
        let mut wv = vec![0.0; out];
        for _ in 0..n_iters {
            for (i, slot) in wv.iter_mut().enumerate() {
                *slot = dot(&w[i * inp..(i + 1) * inp], &state.v);
            }
            let norm = l2(&wv);
            if norm < 1e-300 {
                state.sigma = 0.0;
                state.degenerate = true;
                return Ok(0.0);
            }
            for (u, x) in state.u.iter_mut().zip(&wv) {
                *u = x / norm;
            }
            let mut wtu = vec![0.0; inp];
            for i in 0..out {
                let ui = state.u[i];
                for (acc, wij) in wtu.iter_mut().zip(&w[i * inp..(i + 1) * inp]) {
                    *acc += ui * wij;
                }
            }
            let norm = l2(&wtu);
            if norm < 1e-300 {
                state.sigma = 0.0;
                state.degenerate = true;
                return Ok(0.0);
            }
            for (v, x) in state.v.iter_mut().zip(&wtu) {
                *v = x / norm;
            }
        }
        for (i, slot) in wv.iter_mut().enumerate() {
            *slot = dot(&w[i * inp..(i + 1) * inp], &state.v);
        }
        state.sigma = dot(&state.u, &wv);
        state.degenerate = !(state.sigma > 0.0);
        Ok(state.sigma)
    }

    /// The weight matrix the forward pass actually uses.
    pub fn effective_weight(&self) -> Tensor {
        let scale = self.weight_scale();
        if scale == 1.0 {
            return self.w.value().clone();
        }
        self.w.value().map(|x| x * scale).expect("scaling a finite weight by a finite factor")
    }

    fn weight_scale(&self) -> f64 {
        match &self.sn {
            Some(s) if !s.degenerate => 1.0 / s.sigma,
            _ => 1.0,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.fan_in() {
            return Err(Error::shape(
                "linear",
                format!("input {:?} does not match layer width {}", shape, self.fan_in()),
            ));
        }
        let mut w = tape.param(&self.w);
        let scale = self.weight_scale();
        if scale != 1.0 {
            w = w.scale(scale)?;
        }
        x.matmul_t(w)?.add_row(tape.param(&self.b))
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
