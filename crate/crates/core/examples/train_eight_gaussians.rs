//! Trains on the eight-Gaussians mixture and scores the result.
//!
//! ```text
//! cargo run --release --example train_eight_gaussians -- [key=value ...]
//! ```
//!
//! Arguments are config overrides, e.g. `max_iters=2000 grad_mode=non-offset`.

use std::time::Instant;

use bidvl::bilevel::{train, ArchSpec, Recorder, TrainConfig};
use bidvl::data::apply_override;
use bidvl::eval::{best_ood_checkpoint, evaluate, training_set, EvalProtocol};
use bidvl::nets::Activation;

fn main() -> bidvl::Result<()> {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        apply_override(&mut cfg, &arg)?;
    }
    let train_set = training_set(&cfg)?;

    let start = Instant::now();
    let mut rec = Recorder::default();
    let models = train(&cfg, &train_set, &ArchSpec::default(), &mut rec)?;
    println!("trained {} iterations in {:.1}s", cfg.max_iters, start.elapsed().as_secs_f64());
    for (it, r) in rec.reports.iter().step_by((cfg.max_iters as usize / 10).max(1)) {
        println!("{}", r.csv_row(*it));
    }

    let protocol = EvalProtocol::for_config(&cfg, 4096)?;
    let report = evaluate(&models, &protocol)?;
    print!("{}", report.to_csv());
    let (it, best) = best_ood_checkpoint(&rec.checkpoints, Activation::Relu, &protocol, "uniform")?;
    println!("best uniform-noise AUROC {:.4} at iteration {}", best, it);
    Ok(())
}
