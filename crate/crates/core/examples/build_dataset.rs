//! Joins detected conflicts with signal state into the five interval-type
//! datasets the severity model is fitted on.
//!
//! cargo run --release --example build_dataset

use petsafe::conflicts::detect_conflicts;
use petsafe::features::{assemble_observations, write_observations, DatasetBundle};
use petsafe::synthetic::{simulate_intersection, SceneOptions};
use petsafe::trajectory::resample_all;

fn main() {
    let scene = simulate_intersection(&SceneOptions {
        duration: 240.0,
        ..SceneOptions::default()
    })
    .unwrap();
    let tracks = resample_all(&scene.tracks, 3.0).unwrap();
    let det = detect_conflicts(&tracks, 5.0).unwrap();
    let assembly = assemble_observations(&det.records, &scene.plan, &tracks, &scene.features).unwrap();
    println!("{} conflict records, rejected: {:?}", det.records.len(), assembly.rejected);
    for state in DatasetBundle::ORDER {
        let rows = assembly.bundle.get(state);
        let mut levels = [0usize; 5];
        for r in rows {
            levels[r.pet_level as usize - 1] += 1;
        }
        println!("{:<14} {:>6} rows, levels 1..5 {:?}", state.label(), rows.len(), levels);
    }
    let mut head = Vec::new();
    write_observations(&mut head, &assembly.bundle.yellow[..3.min(assembly.bundle.yellow.len())]).unwrap();
    print!("{}", String::from_utf8(head).unwrap());
}
