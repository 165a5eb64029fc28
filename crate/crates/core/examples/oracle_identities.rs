//! Checks the bi-level identities on small discrete models where every
//! quantity has a closed form.
//!
//! ```text
//! cargo run --release --example oracle_identities
//! ```

use bidvl::data::Rng;
use bidvl::oracle::{
    exact_marginals, j_objectives, report_csv, solve_ll_exact, optimum_grad_gap, verification_suite, DataDist,
    DiscreteEblvm, DiscreteVariational,
};

fn main() -> bidvl::Result<()> {
    let mut rng = Rng::new(7);
    let model = DiscreteEblvm::random(&mut rng, 4, 3, -2.0, 2.0)?;
    let data = DataDist::random(&mut rng, 4);
    let mg = exact_marginals(&model);
    println!("log Z = {:.6}", mg.log_z);
    println!("p(v)  = {:?}", mg.p_v.iter().map(|p| format!("{:.4}", p)).collect::<Vec<_>>());

    let star = solve_ll_exact(&model);
    let at_star = j_objectives(&model, &star, &data)?;
    println!("at the lower-level optimum: J = {:.6}, J_UL = {:.6}", at_star.j, at_star.j_ul);
    println!("gradient gap to exact NLL gradient: {:e}", optimum_grad_gap(&model, &data)?);

    let off = DiscreteVariational::random(&mut rng, model.v(), model.h());
    let away = j_objectives(&model, &off, &data)?;
    println!(
        "at a random variational pair: J_UL − J = {:.6}, KL_post − KL_joint = {:.6}",
        away.j_ul - away.j,
        away.kl_post - away.kl_joint
    );

    print!("{}", report_csv(&verification_suite(50, 0)?));
    Ok(())
}
