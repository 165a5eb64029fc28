//! Compares tape gradients with central differences, first for a hand-built
//! expression and then for every loss the trainer backpropagates.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use bidvl::gradcheck::{check_input_gradient, gradcheck_suite, report_csv};
use bidvl::Tensor;

fn main() -> bidvl::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.0, 0.5, -1.4])?;
    let check = check_input_gradient(
        &x,
        |_, v| v.tanh()?.square()?.add(v.softplus()?)?.mean(),
        1e-5,
    )?;
    println!("mean(tanh² + softplus): max abs err {:e}, passed {}", check.max_abs_err, check.passed);

    let rows = gradcheck_suite(2, 1e-4)?;
    print!("{}", report_csv(&rows));
    let failed = rows.iter().filter(|r| !r.check.passed).count();
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    Ok(())
}
