//! Synthetic 2-D distributions and image ingestion, all scaled into `[-1, 1]`.

use std::f64::consts::PI;
use std::path::PathBuf;

use super::idx::load_idx_images;
use super::rng::Rng;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    /// Equal-weight isotropic Gaussians on a circle.
    EightGaussians { radius: f64, std: f64 },
    /// Two concentric noisy circles.
    TwoRings { inner: f64, outer: f64, noise: f64 },
    /// Uniform mass on alternating cells of a 4×4 board.
    Checkerboard,
    TwoMoons { noise: f64 },
    SwissRoll { noise: f64 },
    IdxImages { path: PathBuf },
}

impl DatasetKind {
    pub fn eight_gaussians() -> Self {
        DatasetKind::EightGaussians { radius: 0.8, std: 0.05 }
    }

    /// Parses a kind name with default shape parameters. `idx_images` takes
    /// its file as `idx_images:PATH`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "eight_gaussians" => DatasetKind::eight_gaussians(),
            "two_rings" => DatasetKind::TwoRings { inner: 0.4, outer: 0.8, noise: 0.03 },
            "checkerboard" => DatasetKind::Checkerboard,
            "two_moons" => DatasetKind::TwoMoons { noise: 0.05 },
            "swiss_roll" => DatasetKind::SwissRoll { noise: 0.02 },
            other => match other.strip_prefix("idx_images:") {
                Some(path) if !path.is_empty() => DatasetKind::IdxImages { path: PathBuf::from(path) },
                _ => return Err(Error::config(0, format!("unknown dataset kind `{}`", other))),
            },
        })
    }

    pub fn name(&self) -> String {
        match self {
            DatasetKind::EightGaussians { .. } => "eight_gaussians".into(),
            DatasetKind::TwoRings { .. } => "two_rings".into(),
            DatasetKind::Checkerboard => "checkerboard".into(),
            DatasetKind::TwoMoons { .. } => "two_moons".into(),
            DatasetKind::SwissRoll { .. } => "swiss_roll".into(),
            DatasetKind::IdxImages { path } => format!("idx_images:{}", path.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
}

/// Mode centers of the eight-Gaussians mixture, at angles `2πk/8`.
pub fn eight_gaussian_centers(radius: f64) -> Vec<[f64; 2]> {
    (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Tensor> {
    if spec.n == 0 {
        return Err(Error::config(0, "dataset size must be at least 1"));
    }
    if let DatasetKind::IdxImages { path } = &spec.kind {
        let all = load_idx_images(path)?;
        let n = spec.n.min(all.rows());
        return all.select_rows(&(0..n).collect::<Vec<_>>());
    }
    let mut rng = Rng::split(spec.seed, 0xda7a);
    let mut data = Vec::with_capacity(spec.n * 2);
    for _ in 0..spec.n {
        let [x, y] = draw_point(&spec.kind, &mut rng);
        data.push(x.clamp(-1.0, 1.0));
        data.push(y.clamp(-1.0, 1.0));
    }
    Tensor::matrix(spec.n, 2, data)
}

fn draw_point(kind: &DatasetKind, rng: &mut Rng) -> [f64; 2] {
    match kind {
        DatasetKind::EightGaussians { radius, std } => {
            let k = rng.below(8) as f64;
            let a = 2.0 * PI * k / 8.0;
            [radius * a.cos() + std * rng.normal(), radius * a.sin() + std * rng.normal()]
        }
        DatasetKind::TwoRings { inner, outer, noise } => {
            let r = if rng.below(2) == 0 { *inner } else { *outer };
            let a = rng.uniform_range(0.0, 2.0 * PI);
            [r * a.cos() + noise * rng.normal(), r * a.sin() + noise * rng.normal()]
        }
        DatasetKind::Checkerboard => {
            // Pick one of the 8 dark cells of a 4×4 board over [-1, 1]², then a uniform point in it.
            let cell = rng.below(8);
            let row = cell / 2;
            let col = 2 * (cell % 2) + (row % 2);
            let x = -1.0 + 0.5 * col as f64 + 0.5 * rng.uniform();
            let y = -1.0 + 0.5 * row as f64 + 0.5 * rng.uniform();
            [x, y]
        }
        DatasetKind::TwoMoons { noise } => {
            let t = rng.uniform_range(0.0, PI);
            let (x, y) = if rng.below(2) == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            // Raw moons span x ∈ [-1, 2], y ∈ [-0.5, 1]; recenter and shrink.
            [0.6 * (x - 0.5) + noise * rng.normal(), 0.6 * (y - 0.25) + noise * rng.normal()]
        }
        DatasetKind::SwissRoll { noise } => {
            let t = 1.5 * PI * (1.0 + 2.0 * rng.uniform());
            let s = 0.9 / (4.5 * PI);
            [s * t * t.cos() + noise * rng.normal(), s * t * t.sin() + noise * rng.normal()]
        }
        DatasetKind::IdxImages { .. } => unreachable!("handled by make_dataset"),
    }
}

/// Uniform noise on `[-1, 1]^dim`, the baseline out-of-distribution set.
pub fn uniform_box(n: usize, dim: usize, seed: u64) -> Tensor {
    Rng::split(seed, 0x0b0c).uniform_tensor(&[n, dim], -1.0, 1.0)
}

/// Epoch-wise shuffled minibatches; the final partial batch is dropped.
#[derive(Debug)]
pub struct Batches<'a> {
    samples: &'a Tensor,
    batch: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Batches<'a> {
    pub fn new(samples: &'a Tensor, batch: usize, seed: u64) -> Result<Self> {
        let n = samples.rows();
        if batch == 0 || batch > n {
            return Err(Error::config(0, format!("batch {} must be in 1..={}", batch, n)));
        }
        let mut it = Batches { samples, batch, rng: Rng::split(seed, 0xba7c), order: (0..n).collect(), cursor: n };
        it.reshuffle();
        Ok(it)
    }

    pub fn per_epoch(&self) -> usize {
        self.samples.rows() / self.batch
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.samples.rows()).collect();
        self.rng.shuffle(&mut self.order);
        self.cursor = 0;
    }
}

impl Iterator for Batches<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        if self.cursor + self.batch > self.order.len() {
            self.reshuffle();
        }
        let idx = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        Some(self.samples.select_rows(idx).expect("indices come from the sample range"))
    }
}

/// Splits rows into `(train, held_out)` with `held_out` rows at the end.
pub fn split_rows(samples: &Tensor, held_out: usize) -> Result<(Tensor, Tensor)> {
    let n = samples.rows();
    if held_out >= n {
        return Err(Error::config(0, format!("cannot hold out {} of {} rows", held_out, n)));
    }
    let train = samples.select_rows(&(0..n - held_out).collect::<Vec<_>>())?;
    let test = samples.select_rows(&(n - held_out..n).collect::<Vec<_>>())?;
    Ok((train, test))
}
