//! Oriented vehicle boxes and the separating-axis overlap test.
//!
//! cargo run --example geometry_overlap

use petsafe::geometry::{boxes_distance, boxes_intersect, OrientedBox, Point2};

fn main() {
    // A 15 x 6 ft car heading east and one heading north-east nearby.
    let east = OrientedBox::from_pose(Point2::new(0.0, 0.0), 15.0, 6.0, 90.0).unwrap();
    for (x, heading) in [(8.0, 45.0), (12.0, 45.0), (20.0, 0.0)] {
        let other = OrientedBox::from_pose(Point2::new(x, 4.0), 15.0, 6.0, heading).unwrap();
        println!(
            "other at x={x:>4}, heading {heading:>4}: overlap={} gap={:.3} ft",
            boxes_intersect(&east, &other),
            boxes_distance(&east, &other)
        );
    }
    println!("corners of the east-bound car: {:?}", east.corners());
}
