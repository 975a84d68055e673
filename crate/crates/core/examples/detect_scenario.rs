//! Runs conflict detection on one scripted scenario and checks it against
//! the brute-force oracle.
//!
//! cargo run --example detect_scenario -- [fixtures/scenarios/04_platoon.json]

use petsafe::conflicts::{detect_conflicts, min_pets};
use petsafe::oracle::{brute_force_pets, generate_scenario, ScenarioScript};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/scenarios/04_platoon.json").into());
    let script = ScenarioScript::from_path(path.as_ref()).unwrap();
    let tracks = generate_scenario(&script, script.rate).unwrap();
    let det = detect_conflicts(&tracks, script.pet_max).unwrap();
    println!("{}: {} vehicles, {} PET records", script.id, tracks.len(), det.records.len());
    for r in det.records.iter().take(8) {
        println!(
            "  leader {} lagger {} left {:.3} entered {:.3} pet {:.3}",
            r.leader_id, r.lagger_id, r.t_leave, r.t_enter, r.pet
        );
    }
    for m in min_pets(&det.records) {
        println!("  min PET {} -> {}: {:.3} s", m.leader_id, m.lagger_id, m.min_pet);
    }
    let oracle = brute_force_pets(&tracks, script.pet_max).unwrap();
    println!("matches oracle: {}", oracle == det);
}
