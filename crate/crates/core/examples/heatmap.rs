//! Bounding-box versus centre-point detection on a simulated intersection,
//! with a coarse text heatmap of where the tightest encounters happen.
//!
//! cargo run --release --example heatmap

use petsafe::conflicts::{
    build_heatmap, center_point_conflicts, detect_conflicts, min_pets, threshold_counts, SUMMARY_THRESHOLDS,
};
use petsafe::geometry::Point2;
use petsafe::synthetic::{simulate_intersection, SceneOptions};
use petsafe::trajectory::resample_all;

fn main() {
    let scene = simulate_intersection(&SceneOptions {
        duration: 300.0,
        ..SceneOptions::default()
    })
    .unwrap();
    let tracks = resample_all(&scene.tracks, 3.0).unwrap();
    let bbox = min_pets(&detect_conflicts(&tracks, 5.0).unwrap().records);
    let centre = min_pets(&center_point_conflicts(&tracks, 5.0, 0.5).unwrap().records);
    let counts = |m: &[petsafe::conflicts::MinPetRecord]| {
        let v: Vec<f64> = m.iter().map(|r| r.min_pet).collect();
        threshold_counts(&v, &SUMMARY_THRESHOLDS).unwrap()
    };
    println!("minPET below {SUMMARY_THRESHOLDS:?} s");
    println!("  bounding box: {:?}", counts(&bbox));
    println!("  centre point: {:?}", counts(&centre));

    // 20 ft cells over the central 200 ft square, minPET under 3 s.
    let grid = build_heatmap(&bbox, Point2::new(-100.0, -100.0), 20.0, 10, 10, 3.0).unwrap();
    for row in (0..10).rev() {
        let line: Vec<String> = (0..10).map(|c| format!("{:>4}", grid.get(c, row))).collect();
        println!("{}", line.join(""));
    }
    println!("outside the grid: {}", grid.overflow);
}
