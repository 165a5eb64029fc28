//! Seeded pseudo-random numbers.
//!
//! The generator is PCG32 (XSH-RR output over a 64-bit LCG with multiplier
//! `6364136223846793005`); the increment is `2·stream + 1`. Floats are built
//! from the top 53 bits of two 32-bit draws and Gaussians use the Box–Muller
//! transform, so a stream is fully reproducible from `(seed, stream)` on any
//! platform.

use rand_core::Rng as _;
use rand_pcg::Pcg32;

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    pcg: Pcg32,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::split(seed, 0)
    }

    /// Independent stream `stream_id` derived from `seed`.
    pub fn split(seed: u64, stream_id: u64) -> Self {
        Rng { pcg: Pcg32::new(seed, stream_id), spare_normal: None }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.pcg.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.pcg.next_u32() as u64;
        let lo = self.pcg.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` by rejection, without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 − u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_range(lo, hi)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A unit-norm vector of length `n` with a random direction.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::split(42, 1);
        let mut a = Rng::new(42);
        let same = (0..32).filter(|_| a.next_u32() == c.next_u32()).count();
        assert!(same < 4);
    }

    #[test]
    fn uniform_chi_squared() {
        // 10⁶ draws into 100 bins; chi² with 99 dof has p = 0.001 at ≈ 148.2.
        let mut rng = Rng::new(7);
        let bins = 100;
        let n = 1_000_000;
        let mut counts = vec![0u64; bins];
        for _ in 0..n {
            counts[(rng.uniform() * bins as f64) as usize] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 148.2, "chi2 = {}", chi2);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt() * 1.5);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(1);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
