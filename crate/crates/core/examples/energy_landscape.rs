//! Trains briefly on a 2-D dataset and writes the learned energy on a grid
//! as CSV and as a PGM image.
//!
//! ```text
//! cargo run --release --example energy_landscape -- [OUT_DIR] [key=value ...]
//! ```

use std::path::PathBuf;

use bidvl::bilevel::{train, ArchSpec, Recorder, TrainConfig};
use bidvl::data::apply_override;
use bidvl::eval::{energy_grid, training_set};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut out = PathBuf::from("energy-landscape");
    let mut cfg = TrainConfig { max_iters: 1500, eval_every: 500, ..TrainConfig::default() };
    for arg in std::env::args().skip(1) {
        if arg.contains('=') {
            apply_override(&mut cfg, &arg)?;
        } else {
            out = PathBuf::from(arg);
        }
    }
    let models = train(&cfg, &training_set(&cfg)?, &ArchSpec::default(), &mut Recorder::default())?;
    let grid = energy_grid(&models.eblvm.energy, -1.0, 1.0, 96)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("energy.csv"), grid.to_csv())?;
    std::fs::write(out.join("energy.pgm"), grid.to_pgm())?;
    let d = grid.values.data();
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("energy range [{:.3}, {:.3}] written to {}", lo, hi, out.display());
    Ok(())
}
