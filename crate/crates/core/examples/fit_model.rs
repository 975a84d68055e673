//! Simulates ordered outcomes with a known random-parameter structure and
//! recovers it by simulated maximum likelihood.
//!
//! cargo run --release --example fit_model

use petsafe::oracle::simulate_ordered_data;
use petsafe::rplogit::{fit, ModelData, ModelSpec, ParameterVector};

fn main() {
    let spec = ModelSpec::from_json(
        r#"{"response": "level", "fixed": ["x1", "x2"], "random": ["x3"],
            "draws": 200, "seed": 5, "group_key": "group"}"#,
    )
    .unwrap();
    let truth = ParameterVector {
        constant: 0.4,
        beta: vec![1.0, -0.7, 0.5],
        sigma: vec![0.6],
        thresholds: vec![0.0, 1.2, 2.5, 3.6],
    };
    let table = simulate_ordered_data(&truth, &spec, 600, 5, 17).unwrap();
    let data = ModelData::from_table(&table, &spec).unwrap();
    let result = fit(&data, &spec).unwrap();
    println!("{}", result.report_text());
    println!("truth: constant {} beta {:?} sigma {:?} thresholds {:?}", truth.constant, truth.beta, truth.sigma, truth.thresholds);
}
