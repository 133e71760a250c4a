//! Scoring from an externally produced per-layer statistics file, the same
//! input `mpq-proxy score --stats` accepts.

use mpq_proxy::dsl::{compute_layer_stats, evaluate, load_stats, parse, StatsFile};
use mpq_proxy::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let file = StatsFile {
        model: Some("fixture-mlp".into()),
        layers: compute_layer_stats(&fixtures::mlp(), &fixtures::calib16())?,
    };
    let path = std::env::temp_dir().join("mpq-proxy-stats.json");
    std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;

    let loaded = load_stats(&path)?;
    let scores = evaluate(&parse("w_l2 * a_entropy")?, &loaded.layers).scores;
    println!("{} layers from {}", loaded.layers.len(), path.display());
    println!("scores {scores:?}");
    Ok(())
}
