//! Parses a signal plan and asks what each phase shows at a few instants.
//!
//! cargo run --example signal_lookup

use petsafe::signals::{parse_signal_plan_str, snapshot_at};

const PLAN: &str = r#"{
  "phases": [
    {"phase": 2, "intervals": [
      {"state": "green", "start": 0, "end": 30},
      {"state": "yellow", "start": 30, "end": 34},
      {"state": "red_clearance", "start": 34, "end": 35},
      {"state": "all_red", "start": 35, "end": 36},
      {"state": "red", "start": 36, "end": 70}
    ]},
    {"phase": 4, "intervals": [
      {"state": "red", "start": 0, "end": 36},
      {"state": "green", "start": 36, "end": 62},
      {"state": "yellow", "start": 62, "end": 66},
      {"state": "red_clearance", "start": 66, "end": 67},
      {"state": "all_red", "start": 67, "end": 68},
      {"state": "red", "start": 68, "end": 70}
    ]}
  ]
}"#;

fn main() {
    let plan = parse_signal_plan_str(PLAN).unwrap();
    for t in [10.0, 31.5, 34.2, 35.5, 50.0] {
        let snap = snapshot_at(&plan, t).unwrap();
        for phase in [2, 4] {
            let s = snap.status(phase).unwrap();
            println!(
                "t={t:>5}: phase {phase} {:<13} {:.1} s left; countdowns {:?}",
                s.state.label(),
                s.remaining,
                snap.countdowns(phase).unwrap().with_sentinels()
            );
        }
    }
}
