//! Bundled desk-scale fixtures, generated by `examples/generate_fixtures.rs`.
//!
//! | name          | contents                                       |
//! |---------------|------------------------------------------------|
//! | `fixture-cnn` | 2 conv + 3 dense layers, 8×8 input, 10 classes |
//! | `fixture-mlp` | 2 dense layers, 8×8 input, 10 classes          |
//! | `calib16`     | 16 calibration samples                         |
//! | `eval64`      | 64 evaluation samples                          |
//!
//! `fixture` is an alias for `fixture-cnn` and `fixture16` for `calib16`.

use crate::error::Result;
use crate::smallnet::{parse_dataset, parse_model, Dataset, Model};

pub const FIXTURE_CNN: &str = include_str!("../fixtures/fixture_cnn.json");
pub const FIXTURE_MLP: &str = include_str!("../fixtures/fixture_mlp.json");
pub const CALIB16: &str = include_str!("../fixtures/calib16.json");
pub const EVAL64: &str = include_str!("../fixtures/eval64.json");

pub fn model_source(name: &str) -> Option<&'static str> {
    match name {
        "fixture" | "fixture-cnn" => Some(FIXTURE_CNN),
        "fixture-mlp" => Some(FIXTURE_MLP),
        _ => None,
    }
}

pub fn dataset_source(name: &str) -> Option<&'static str> {
    match name {
        "fixture16" | "calib16" => Some(CALIB16),
        "eval64" => Some(EVAL64),
        _ => None,
    }
}

pub fn cnn() -> Model {
    parse_model("fixture-cnn", FIXTURE_CNN).expect("bundled fixture is valid")
}

pub fn mlp() -> Model {
    parse_model("fixture-mlp", FIXTURE_MLP).expect("bundled fixture is valid")
}

pub fn calib16() -> Dataset {
    parse_dataset("calib16", CALIB16).expect("bundled fixture is valid")
}

pub fn eval64() -> Dataset {
    parse_dataset("eval64", EVAL64).expect("bundled fixture is valid")
}

/// Loads `name_or_path` as a bundled fixture name or, failing that, a file.
pub fn resolve_model(name_or_path: &str) -> Result<Model> {
    match model_source(name_or_path) {
        Some(src) if !std::path::Path::new(name_or_path).exists() => parse_model(name_or_path, src),
        _ => crate::smallnet::load_model(name_or_path),
    }
}

pub fn resolve_dataset(name_or_path: &str) -> Result<Dataset> {
    match dataset_source(name_or_path) {
        Some(src) if !std::path::Path::new(name_or_path).exists() => parse_dataset(name_or_path, src),
        _ => crate::smallnet::load_dataset(name_or_path),
    }
}
