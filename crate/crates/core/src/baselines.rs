//! Reference proxies evaluated through the same fitness pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{builtin_ompq, builtin_tap, parse, TAP_SOURCE};
use crate::error::Result;
use crate::fitness::{FitnessContext, ScoreOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    /// DSL source, when the baseline is expressible in the DSL.
    pub expr: Option<String>,
    pub scores: Vec<f64>,
    pub outcome: ScoreOutcome,
}

pub const BASELINE_NAMES: [&str; 5] = ["tap", "ompq", "w_l2", "depth", "random"];

/// Uniform `[0, 1)` scores from a seeded stream.
pub fn random_scores(layers: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..layers).map(|_| rng.random::<f64>()).collect()
}

fn row(ctx: &FitnessContext, name: &str, expr: Option<&str>, scores: Vec<f64>) -> Result<BaselineRow> {
    let outcome = ctx.evaluate_scores(&scores)?;
    Ok(BaselineRow {
        name: name.into(),
        expr: expr.map(|e| parse(e).map(|x| x.to_canonical())).transpose()?,
        scores,
        outcome,
    })
}

/// TAP, OMPQ, `w_l2`, `depth` and seeded random scores, in that order.
pub fn run_baselines(ctx: &FitnessContext, seed: u64) -> Result<Vec<BaselineRow>> {
    let dsl = |src: &str| -> Result<Vec<f64>> { Ok(ctx.score(&parse(src)?).scores) };
    Ok(vec![
        row(ctx, "tap", Some(TAP_SOURCE), builtin_tap(&ctx.stats))?,
        row(ctx, "ompq", None, builtin_ompq(&ctx.model, &ctx.calib)?)?,
        row(ctx, "w_l2", Some("w_l2"), dsl("w_l2")?)?,
        row(ctx, "depth", Some("depth"), dsl("depth")?)?,
        row(ctx, "random", None, random_scores(ctx.inventory.len(), seed))?,
    ])
}
