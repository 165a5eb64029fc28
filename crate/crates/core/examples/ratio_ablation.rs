//! Short runs over the importance-ratio settings and both gradient modes,
//! reporting the final losses and sample MMD of each.
//!
//! ```text
//! cargo run --release --example ratio_ablation -- [iters]
//! ```

use bidvl::bilevel::{train, ArchSpec, GradMode, Recorder, TrainConfig};
use bidvl::divergence::{RatioMode, RatioVariant};
use bidvl::eval::{evaluate, training_set, EvalProtocol};

fn main() -> bidvl::Result<()> {
    let iters: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    println!("grad_mode,ratio,r_basic,ll_total,ul_energy_gap,mmd2");
    for grad_mode in [GradMode::Offset, GradMode::NonOffset] {
        for variant in [RatioVariant::Constant, RatioVariant::ExpNormalized, RatioVariant::Sigmoid] {
            for r_basic in [0.01, 0.05, 0.2] {
                let cfg = TrainConfig {
                    max_iters: iters,
                    eval_every: iters,
                    dataset_n: 4096,
                    grad_mode,
                    ratio: RatioMode { variant, r_basic },
                    ..TrainConfig::default()
                };
                let mut rec = Recorder::default();
                let models = train(&cfg, &training_set(&cfg)?, &ArchSpec::default(), &mut rec)?;
                let report = evaluate(&models, &EvalProtocol::for_config(&cfg, 1024)?)?;
                let (_, last) = rec.reports.last().expect("at least one iteration");
                println!("{},{},{},{:.4},{:.4},{:.4}", grad_mode, variant, r_basic, last.ll_total(), last.ul_data_energy - last.ul_model_energy, report.mmd2);
            }
        }
    }
    Ok(())
}
