//! Sample and distribution distances: MMD, kernel Stein discrepancy,
//! Gaussian KL, and the discrete TV/KL pair behind Pinsker's inequality.
//!
//! ```text
//! cargo run --release --example divergences
//! ```

use bidvl::data::Rng;
use bidvl::divergence::{
    kl_diag_gaussians, kl_discrete, ksd_rbf, mmd2_rbf, tv_discrete, KernelSpec,
};
use bidvl::Tensor;

fn main() -> bidvl::Result<()> {
    let mut rng = Rng::new(3);
    let x = rng.normal_tensor(&[500, 2]);
    let same = rng.normal_tensor(&[500, 2]);
    let shifted = rng.normal_tensor(&[500, 2]).map(|v| v + 0.5)?;
    let kernel = KernelSpec::new(vec![0.1, 0.5, 1.0, 2.0, 8.0])?;
    println!("MMD² same law     {:.5}", mmd2_rbf(&x, &same, &kernel)?);
    println!("MMD² shifted law  {:.5}", mmd2_rbf(&x, &shifted, &kernel)?);

    let std_score = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<_>>();
    println!("KSD vs N(0,I), matched  {:.5}", ksd_rbf(&x, std_score, 1.0)?);
    println!("KSD vs N(0,I), shifted  {:.5}", ksd_rbf(&shifted, std_score, 1.0)?);

    let mu1 = Tensor::matrix(1, 2, vec![0.0, 1.0])?;
    let lv1 = Tensor::matrix(1, 2, vec![0.0, -1.0])?;
    let zeros = Tensor::zeros(&[1, 2]);
    println!("KL(N(μ,σ²) ‖ N(0,I)) = {:.5}", kl_diag_gaussians(&mu1, &lv1, &zeros, &zeros)?.item()?);

    let p = [0.5, 0.3, 0.2];
    let q = [0.2, 0.3, 0.5];
    let tv = tv_discrete(&p, &q)?;
    let kl = kl_discrete(&p, &q)?;
    println!("TV = {:.4}, sqrt(KL/2) = {:.4}", tv, (kl / 2.0).sqrt());
    Ok(())
}
