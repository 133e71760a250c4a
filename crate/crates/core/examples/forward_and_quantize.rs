//! Full-precision and fake-quantized accuracy of the bundled CNN, plus the
//! per-layer sensitivity probe.

use mpq_proxy::fixtures;
use mpq_proxy::quantsim::{calibrate_activation_ranges, cost, layer_quant_errors, quantized_accuracy, BitAssignment};

fn main() -> mpq_proxy::Result<()> {
    let model = fixtures::cnn();
    let calib = fixtures::calib16();
    let eval = fixtures::eval64();
    let ranges = calibrate_activation_ranges(&model, &calib)?;
    let inventory = model.layer_inventory();

    println!("fp32 accuracy: {:.4}", model.accuracy(&eval)?);
    for bits in [2, 4, 8] {
        let a = BitAssignment::uniform(inventory.len(), bits, 8);
        let report = cost(&inventory, &a)?;
        println!(
            "w{bits}a8  accuracy {:.4}  compression {:.3}  BOPs {}",
            quantized_accuracy(&model, &a, &ranges, &eval)?,
            report.compression_ratio,
            report.bops
        );
    }
    for (depth, err) in layer_quant_errors(&model, 2, &calib)?.iter().enumerate() {
        println!("layer {} 2-bit logit MSE {err:.2}", depth + 1);
    }
    Ok(())
}
