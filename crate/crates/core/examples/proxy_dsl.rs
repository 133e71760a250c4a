//! Parsing, canonical printing and evaluation of proxy expressions.

use mpq_proxy::dsl::{compute_layer_stats, evaluate, parse, TAP_SOURCE};
use mpq_proxy::fixtures;

fn main() -> mpq_proxy::Result<()> {
    let stats = compute_layer_stats(&fixtures::cnn(), &fixtures::calib16())?;
    for src in [
        TAP_SOURCE,
        "w_std * sqrt(n_params)",
        "log(a_max_abs) / (depth + 1)",
        "w_l2 / 0",
    ] {
        let expr = parse(src)?;
        let eval = evaluate(&expr, &stats);
        println!("{}", expr.to_canonical());
        println!("  scores {:?}  guarded layers {:?}", eval.scores, eval.warned_layers());
    }
    match parse("w_l2 * (a_std") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
