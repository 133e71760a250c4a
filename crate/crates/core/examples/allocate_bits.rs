//! Greedy bit allocation from proxy scores at several compression targets.

use mpq_proxy::allocator::{allocate, max_compression, AllocationRequest};
use mpq_proxy::dsl::{builtin_tap, compute_layer_stats};
use mpq_proxy::fixtures;
use mpq_proxy::quantsim::{compression_ratio, BitMenus};

fn main() -> mpq_proxy::Result<()> {
    let model = fixtures::cnn();
    let inventory = model.layer_inventory();
    let scores = builtin_tap(&compute_layer_stats(&model, &fixtures::calib16())?);
    println!(
        "max compression {:.4}",
        max_compression(&inventory, &BitMenus::default())?
    );
    for zeta in [0.7, 0.8, 0.9, 0.95] {
        match allocate(&AllocationRequest::new(scores.clone(), zeta), &inventory) {
            Ok(a) => println!(
                "zeta {zeta}: bits {:?} (compression {:.4})",
                a.weight_bits,
                compression_ratio(&inventory, &a.weight_bits)
            ),
            Err(e) => println!("zeta {zeta}: {e}"),
        }
    }
    Ok(())
}
