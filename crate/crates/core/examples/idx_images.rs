//! Reads IDX image files into [-1, 1] rows. With no argument, a small
//! synthetic file is written and read back.
//!
//! ```text
//! cargo run --release --example idx_images -- [train-images-idx3-ubyte]
//! ```

use bidvl::data::{encode_idx_images, load_idx_images};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let pixels: Vec<u8> = (0..3 * 4 * 4).map(|i| (i * 17 % 256) as u8).collect();
            let p = std::env::temp_dir().join("bidvl-example.idx3-ubyte");
            std::fs::write(&p, encode_idx_images(3, 4, 4, &pixels))?;
            p
        }
    };
    let images = load_idx_images(&path)?;
    println!("{}: {} images of {} pixels", path.display(), images.rows(), images.cols());
    let d = images.data();
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("pixel range [{:.4}, {:.4}], mean {:.4}", lo, hi, images.mean()?);
    Ok(())
}
