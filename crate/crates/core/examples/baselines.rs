//! Fitness of the reference proxies on the bundled CNN.

use mpq_proxy::baselines::run_baselines;
use mpq_proxy::fitness::{FitnessConfig, FitnessContext};
use mpq_proxy::fixtures;

fn main() -> mpq_proxy::Result<()> {
    let ctx = FitnessContext::new(
        fixtures::cnn(),
        fixtures::calib16(),
        fixtures::eval64(),
        FitnessConfig::default(),
    )?;
    println!("measured 2-bit layer errors {:?}", ctx.layer_errors);
    for row in run_baselines(&ctx, 0)? {
        let o = &row.outcome;
        println!(
            "{:<7} rho {:+.3}  acc {:?}  phi {:.4}  bits {:?}",
            row.name,
            o.rho_sens,
            o.acc_quant,
            o.phi,
            o.assignment.as_ref().map(|a| &a.weight_bits)
        );
    }
    Ok(())
}
