//! Regenerates the committed fixture assets under `fixtures/`.
//!
//! Nothing here is trained. Hidden layers use seeded Gaussian weights and the
//! output layer is a nearest-centroid readout over hidden features of class
//! prototypes, so the fixtures classify well above chance while being fully
//! reproducible from the seed.
//!
//! ```bash
//! cargo run -p mpq-proxy --example generate_fixtures [-- <out-dir>]
//! ```

use std::path::PathBuf;

use mpq_proxy::smallnet::{Dataset, Layer, Model, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 20_240_601;
const CLASSES: usize = 10;
const SIDE: usize = 8;
const NOISE: f64 = 1.0;
const CENTROID_DRAWS: usize = 32;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| round6(normal.sample(rng))).collect()
}

// Six decimals keep the committed JSON readable; values stay exact after that.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn noisy(rng: &mut ChaCha8Rng, proto: &[f64]) -> Vec<f64> {
    let noise = Normal::new(0.0, NOISE).expect("valid std");
    proto.iter().map(|p| round6(p + noise.sample(rng))).collect()
}

fn dense(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Layer {
    Layer::Dense {
        in_features: inp,
        out_features: out,
        weights: gaussian(rng, inp * out, (2.0 / inp as f64).sqrt()),
        bias: Some(gaussian(rng, out, 0.05)),
    }
}

fn conv(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Layer {
    Layer::Conv2d {
        in_channels: inp,
        out_channels: out,
        kernel: 3,
        stride: 1,
        padding: 1,
        weights: gaussian(rng, out * inp * 9, (2.0 / (inp * 9) as f64).sqrt()),
        bias: Some(gaussian(rng, out, 0.05)),
    }
}

/// Appends a nearest-centroid readout: `score_c = μ_c·h − ½‖μ_c‖²`.
fn with_readout(name: &str, mut layers: Vec<Layer>, protos: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Model {
    let body = Model::new(name, [1, SIDE, SIDE], layers.clone()).expect("valid body");
    let width = body.num_classes();
    let mut weights = Vec::with_capacity(CLASSES * width);
    let mut bias = Vec::with_capacity(CLASSES);
    for proto in protos {
        let draws: Vec<Vec<f64>> = (0..CENTROID_DRAWS).map(|_| noisy(rng, proto)).collect();
        let hidden = body.forward(&draws, false).expect("forward").logits;
        let mut centroid = vec![0.0; width];
        for h in &hidden {
            for (c, v) in centroid.iter_mut().zip(h) {
                *c += v / CENTROID_DRAWS as f64;
            }
        }
        let centroid: Vec<f64> = centroid.into_iter().map(round6).collect();
        bias.push(round6(-0.5 * centroid.iter().map(|v| v * v).sum::<f64>()));
        weights.extend(centroid);
    }
    layers.push(Layer::Dense {
        in_features: width,
        out_features: CLASSES,
        weights,
        bias: Some(bias),
    });
    Model::new(name, [1, SIDE, SIDE], layers).expect("valid model")
}

fn dataset(rng: &mut ChaCha8Rng, protos: &[Vec<f64>], n: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let label = i % CLASSES;
            Sample {
                input: noisy(rng, &protos[label]),
                label,
            }
        })
        .collect();
    Dataset::new(CLASSES, samples).expect("valid dataset")
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    std::fs::create_dir_all(&out).expect("create output dir");

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let protos: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| {
            let shift = rng.random_range(-0.5..0.5);
            gaussian(&mut rng, SIDE * SIDE, 1.0)
                .into_iter()
                .map(|v| round6(v + shift))
                .collect()
        })
        .collect();

    let mlp_body = vec![Layer::Flatten {}, dense(&mut rng, 64, 32), Layer::Relu {}];
    let mlp = with_readout("fixture_mlp", mlp_body, &protos, &mut rng);

    let cnn_body = vec![
        conv(&mut rng, 1, 4),
        Layer::Relu {},
        conv(&mut rng, 4, 8),
        Layer::Relu {},
        Layer::Maxpool2d { kernel: 2, stride: 2 },
        Layer::Flatten {},
        dense(&mut rng, 128, 64),
        Layer::Relu {},
        dense(&mut rng, 64, 32),
        Layer::Relu {},
    ];
    let cnn = with_readout("fixture_cnn", cnn_body, &protos, &mut rng);

    let calib = dataset(&mut rng, &protos, 16);
    let eval = dataset(&mut rng, &protos, 64);

    for (file, text) in [
        ("fixture_mlp.json", mlp.to_json()),
        ("fixture_cnn.json", cnn.to_json()),
        ("calib16.json", calib.to_json()),
        ("eval64.json", eval.to_json()),
    ] {
        std::fs::write(out.join(file), text + "\n").expect("write fixture");
    }
    for m in [&mlp, &cnn] {
        println!(
            "{}: calib acc {:.4}, eval acc {:.4}",
            m.name(),
            m.accuracy(&calib).unwrap(),
            m.accuracy(&eval).unwrap()
        );
    }
    println!("wrote fixtures to {}", out.display());
}
