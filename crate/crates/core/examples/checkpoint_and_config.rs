//! Config text round trip, overrides, and a checkpoint saved to disk and
//! restored into a model that samples identically.
//!
//! ```text
//! cargo run --release --example checkpoint_and_config
//! ```

use bidvl::bilevel::{ArchSpec, BiDvlModels, TrainConfig};
use bidvl::data::{apply_override, load_checkpoint, parse_config, render_config, save_checkpoint, Rng};
use bidvl::nets::Activation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = parse_config("# a small run\nmax_iters = 200\nratio_mode = sigmoid\n")?;
    apply_override(&mut cfg, "lr_energy=2e-4")?;
    let text = render_config(&cfg);
    print!("{}", text);
    assert_eq!(parse_config(&text)?, cfg);

    let unknown = parse_config("max_iter = 10\n").unwrap_err();
    println!("rejected: {}", unknown);

    let models = BiDvlModels::new(2, 2, &ArchSpec::default(), TrainConfig::default().seed)?;
    let dir = std::env::temp_dir().join("bidvl-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("init.bdvl");
    save_checkpoint(&path, &models.to_checkpoint(0))?;
    let restored = BiDvlModels::from_checkpoint(&load_checkpoint(&path)?, Activation::Relu)?;
    let a = models.sample(&mut Rng::new(1), 4)?;
    let b = restored.sample(&mut Rng::new(1), 4)?;
    println!("{} bytes, samples identical after reload: {}", std::fs::metadata(&path)?.len(), a == b);
    Ok(())
}
