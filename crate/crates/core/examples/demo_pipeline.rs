//! Simulates a signalised intersection, writes a project directory and runs
//! every pipeline stage on it through the command line entry point.
//!
//! cargo run --release --example demo_pipeline -- [DIR]

use petsafe::cli::execute;
use petsafe::synthetic::{write_demo_project, SceneOptions};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo_project".into());
    let config = write_demo_project(dir.as_ref(), &SceneOptions::default()).expect("write demo project");
    let config = config.to_string_lossy().into_owned();
    for stage in ["detect", "heatmap", "dataset", "fit", "report"] {
        println!("\n$ petsafe --config {config} {stage}");
        let code = execute(["petsafe", "--config", &config, stage]);
        if code != 0 {
            eprintln!("{stage} exited with {code}");
            std::process::exit(code);
        }
    }
}
