//! Brute-force reference implementations used by tests and acceptance runs.
//!
//! Nothing in the main pipeline depends on this module. Everything here is
//! single-threaded, exhaustive, and refuses inputs above a desk-scale size
//! guard.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conflicts::{ConflictRecord, Detection};
use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, OrientedBox, Point2};
use crate::rplogit::{ModelSpec, ObservationTable, ParameterVector};
use crate::trajectory::{TrackSample, VehicleTrack};

pub const MAX_ORACLE_VEHICLES: usize = 20;
pub const MAX_ORACLE_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Degrees clockwise from north.
    pub heading: f64,
    /// mph
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedVehicle {
    pub id: i64,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub lane: i64,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedConflict {
    pub leader: i64,
    pub lagger: i64,
    pub min_pet: f64,
    pub tol: f64,
}

/// A hand-authored scenario with its expected outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_pet_max")]
    pub pet_max: f64,
    pub vehicles: Vec<ScriptedVehicle>,
    /// Ordered pairs that must conflict, with their min PET.
    #[serde(default)]
    pub expected: Vec<ExpectedConflict>,
    /// When true, pairs not listed in `expected` must not conflict.
    #[serde(default = "default_true")]
    pub exhaustive: bool,
}

fn default_rate() -> f64 {
    3.0
}

fn default_pet_max() -> f64 {
    5.0
}

fn default_true() -> bool {
    true
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: ScenarioScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !(self.pet_max > 0.0) {
            return Err(Error::invalid(format!("{}: rate and pet_max must be positive", self.id)));
        }
        for v in &self.vehicles {
            if v.waypoints.is_empty() {
                return Err(Error::invalid(format!("{}: vehicle {} has no waypoints", self.id, v.id)));
            }
            if v.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::invalid(format!(
                    "{}: vehicle {} waypoints are not strictly increasing in time",
                    self.id, v.id
                )));
            }
        }
        for e in &self.expected {
            if !(e.min_pet > 0.0 && e.min_pet <= self.pet_max) || !(e.tol >= 0.0) {
                return Err(Error::invalid(format!(
                    "{}: expected pet {} for ({}, {}) outside (0, pet_max]",
                    self.id, e.min_pet, e.leader, e.lagger
                )));
            }
        }
        Ok(())
    }
}

/// Loads every `*.json` scenario in a directory, sorted by file name.
pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioScript>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioScript::from_path(p)).collect()
}

fn lerp_heading(a: f64, b: f64, f: f64) -> f64 {
    let d = (b - a + 540.0).rem_euclid(360.0) - 180.0;
    (a + f * d).rem_euclid(360.0)
}

/// Samples each scripted vehicle on the `k / rate` grid between its first and
/// last waypoint, interpolating linearly between waypoints.
pub fn generate_scenario(script: &ScenarioScript, rate: f64) -> Result<Vec<VehicleTrack>> {
    script.validate()?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    let mut tracks = Vec::with_capacity(script.vehicles.len());
    for v in &script.vehicles {
        let w = &v.waypoints;
        let k0 = (w[0].t * rate - 1e-9).ceil() as i64;
        let k1 = (w[w.len() - 1].t * rate + 1e-9).floor() as i64;
        let mut samples = Vec::new();
        let mut seg = 0;
        for k in k0..=k1 {
            let t = k as f64 / rate;
            while seg + 2 < w.len() && t > w[seg + 1].t {
                seg += 1;
            }
            let (a, b) = if w.len() == 1 { (&w[0], &w[0]) } else { (&w[seg], &w[seg + 1]) };
            let f = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
            let center = Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
            let heading = lerp_heading(a.heading, b.heading, f);
            samples.push(TrackSample {
                time: t,
                center,
                bbox: OrientedBox::from_pose(center, v.length, v.width, heading)?,
                speed: a.speed + f * (b.speed - a.speed),
                heading,
                lane_id: v.lane,
            });
        }
        if samples.is_empty() {
            return Err(Error::invalid(format!(
                "{}: vehicle {} has no grid instant between its waypoints",
                script.id, v.id
            )));
        }
        tracks.push(VehicleTrack::new(v.id, Some(rate), samples)?);
    }
    tracks.sort_by_key(|t| t.vehicle_id);
    Ok(tracks)
}

/// Exhaustive PET reference: every ordered pair, every lagger sample, every
/// earlier leader sample. No spatial pruning and no step indexing.
pub fn brute_force_pets(tracks: &[VehicleTrack], pet_max: f64) -> Result<Detection> {
    if tracks.len() > MAX_ORACLE_VEHICLES {
        return Err(Error::SizeGuard(format!(
            "{} vehicles exceeds the oracle limit of {MAX_ORACLE_VEHICLES}",
            tracks.len()
        )));
    }
    if let Some(t) = tracks.iter().find(|t| t.samples.len() > MAX_ORACLE_STEPS) {
        return Err(Error::SizeGuard(format!(
            "track {} has {} samples, over the oracle limit of {MAX_ORACLE_STEPS}",
            t.vehicle_id,
            t.samples.len()
        )));
    }
    let Some(rate) = tracks.first().map(|t| t.rate) else {
        return Ok(Detection::default());
    };
    let rate = rate.ok_or_else(|| Error::invalid("oracle needs tracks with a known rate"))?;
    let half_step = 0.5 / rate;
    let mut out = Detection::default();
    for leader in tracks {
        for lagger in tracks {
            if leader.vehicle_id == lagger.vehicle_id {
                continue;
            }
            for s2 in &lagger.samples {
                let co = leader
                    .samples
                    .iter()
                    .any(|s| (s.time - s2.time).abs() < half_step && boxes_intersect(&s.bbox, &s2.bbox));
                if co {
                    out.overlap_events += 1;
                    continue;
                }
                let mut best: Option<(f64, &TrackSample)> = None;
                for s1 in &leader.samples {
                    let steps = ((s2.time - s1.time) * rate).round();
                    if steps < 1.0 {
                        continue;
                    }
                    let pet = steps / rate;
                    if pet > pet_max + 1e-9 || !boxes_intersect(&s1.bbox, &s2.bbox) {
                        continue;
                    }
                    if best.is_none_or(|(p, _)| pet < p) {
                        best = Some((pet, s1));
                    }
                }
                if let Some((pet, s1)) = best {
                    out.records.push(ConflictRecord {
                        leader_id: leader.vehicle_id,
                        lagger_id: lagger.vehicle_id,
                        t_leave: s1.time,
                        t_enter: s2.time,
                        pet,
                        zone_center: s1.bbox.centroid(),
                        lagger_lane: s2.lane_id,
                        lagger_speed: s2.speed,
                        lagger_heading: s2.heading,
                    });
                }
            }
        }
    }
    out.records.sort_by(|a, b| {
        (a.leader_id, a.lagger_id)
            .cmp(&(b.leader_id, b.lagger_id))
            .then(a.t_enter.total_cmp(&b.t_enter))
    });
    Ok(out)
}

/// A box as centre, unit axes and half extents, rebuilt from its corners.
#[derive(Debug, Clone, Copy)]
struct FrameBox {
    center: Point2,
    u: Point2,
    v: Point2,
    half_u: f64,
    half_v: f64,
}

impl FrameBox {
    fn new(b: &OrientedBox) -> Self {
        let c = b.corners();
        let center = Point2::new(
            (c[0].x + c[1].x + c[2].x + c[3].x) / 4.0,
            (c[0].y + c[1].y + c[2].y + c[3].y) / 4.0,
        );
        let (e1, e2) = (c[1] - c[0], c[3] - c[0]);
        let (l1, l2) = (e1.norm(), e2.norm());
        Self {
            center,
            u: Point2::new(e1.x / l1, e1.y / l1),
            v: Point2::new(e2.x / l2, e2.y / l2),
            half_u: l1 / 2.0,
            half_v: l2 / 2.0,
        }
    }

    /// Non-positive inside, positive outside; equals minus the depth inside.
    fn signed_gap(&self, p: Point2) -> f64 {
        let d = p - self.center;
        (d.dot(self.u).abs() - self.half_u).max(d.dot(self.v).abs() - self.half_v)
    }

    fn contains(&self, p: Point2) -> bool {
        self.signed_gap(p) <= 0.0
    }
}

/// True when some corner of either box lies within `band` of the other's
/// boundary, i.e. the pair is touching or nearly so and its classification
/// depends on rounding.
pub fn in_tangency_band(a: &OrientedBox, b: &OrientedBox, band: f64) -> bool {
    let (fa, fb) = (FrameBox::new(a), FrameBox::new(b));
    a.corners().iter().any(|&p| fb.signed_gap(p).abs() <= band)
        || b.corners().iter().any(|&p| fa.signed_gap(p).abs() <= band)
}

/// Containment-sampling reference for box overlap.
///
/// The eight corners are tested first, then `samples` uniform random points
/// over the overlap of the two axis-aligned bounds. A point inside both boxes
/// proves overlap. Shallow overlaps always put a corner of one box inside the
/// other, so the corner test covers the slivers random points would miss.
pub fn monte_carlo_intersects(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> bool {
    let (fa, fb) = (FrameBox::new(a), FrameBox::new(b));
    if a.corners().iter().any(|&p| fb.contains(p)) || b.corners().iter().any(|&p| fa.contains(p)) {
        return true;
    }
    let bounds = |bx: &OrientedBox| {
        let c = bx.corners();
        let xs = c.iter().map(|p| p.x);
        let ys = c.iter().map(|p| p.y);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.clone().fold(f64::INFINITY, f64::min),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (ax0, ax1, ay0, ay1) = bounds(a);
    let (bx0, bx1, by0, by1) = bounds(b);
    let (x0, x1, y0, y1) = (ax0.max(bx0), ax1.min(bx1), ay0.max(by0), ay1.min(by1));
    if x0 > x1 || y0 > y1 {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).any(|_| {
        let p = Point2::new(x0 + (x1 - x0) * rng.random::<f64>(), y0 + (y1 - y0) * rng.random::<f64>());
        fa.contains(p) && fb.contains(p)
    })
}

/// Forward simulation of the ordered model. Covariates are uniform on
/// (-1, 1); each group draws `omega ~ N(0, I)` once; the response is the
/// level of `eta + logistic noise` among the thresholds.
///
/// The table uses the model's column names, so it loads straight back
/// through [`crate::rplogit::ModelData::from_table`].
pub fn simulate_ordered_data(
    truth: &ParameterVector,
    spec: &ModelSpec,
    n_groups: usize,
    obs_per_group: usize,
    seed: u64,
) -> Result<ObservationTable> {
    let names = spec.covariates();
    truth.validate(names.len(), spec.random.len())?;
    if n_groups == 0 || obs_per_group == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first_random = spec.fixed.len();
    let mut headers = vec![spec.group_key().to_string(), spec.response.clone()];
    headers.extend(names.iter().map(|s| s.to_string()));
    let mut rows = Vec::with_capacity(n_groups * obs_per_group);
    for g in 0..n_groups {
        let omega: Vec<f64> = (0..spec.random.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut beta = truth.beta.clone();
        for (j, w) in omega.iter().enumerate() {
            beta[first_random + j] += truth.sigma[j] * w;
        }
        for _ in 0..obs_per_group {
            let x: Vec<f64> = (0..names.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta = truth.constant + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let latent = eta + (u / (1.0 - u)).ln();
            let level = 1 + truth.thresholds.iter().filter(|k| latent > **k).count();
            let mut row = vec![format!("g{g}"), level.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    Ok(ObservationTable { headers, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflicts::detect_conflicts;
    use crate::geometry::point_in_box;
    use crate::rplogit::{ModelData, RandomCovariate};

    #[test]
    fn monte_carlo_overlap_basics() {
        let a = OrientedBox::from_pose(Point2::new(0.0, 0.0), 15.0, 6.0, 90.0).unwrap();
        let near = OrientedBox::from_pose(Point2::new(10.0, 4.0), 15.0, 6.0, 45.0).unwrap();
        let far = OrientedBox::from_pose(Point2::new(30.0, 0.0), 15.0, 6.0, 0.0).unwrap();
        // A cross: no corner of either is inside the other.
        let cross = OrientedBox::from_pose(Point2::new(0.0, 0.0), 15.0, 6.0, 0.0).unwrap();
        assert!(monte_carlo_intersects(&a, &near, 1000, 1));
        assert!(!monte_carlo_intersects(&a, &far, 1000, 1));
        assert!(monte_carlo_intersects(&a, &cross, 1000, 1));
        let touching = OrientedBox::from_pose(Point2::new(15.0, 0.0), 15.0, 6.0, 90.0).unwrap();
        assert!(in_tangency_band(&a, &touching, 1e-6));
        assert!(!in_tangency_band(&a, &far, 1e-6));
    }

    fn straight(id: i64, t0: f64, x0: f64, t1: f64, x1: f64, heading: f64) -> ScriptedVehicle {
        ScriptedVehicle {
            id,
            length: 15.0,
            width: 6.0,
            lane: 1,
            waypoints: vec![
                Waypoint {
                    t: t0,
                    x: x0,
                    y: 0.0,
                    heading,
                    speed: 20.0,
                },
                Waypoint {
                    t: t1,
                    x: x1,
                    y: 0.0,
                    heading,
                    speed: 20.0,
                },
            ],
        }
    }

    fn script(vehicles: Vec<ScriptedVehicle>) -> ScenarioScript {
        ScenarioScript {
            id: "t".into(),
            description: String::new(),
            rate: 3.0,
            pet_max: 5.0,
            vehicles,
            expected: vec![],
            exhaustive: true,
        }
    }

    #[test]
    fn follower_on_same_path() {
        // both at 30 ft/s; the follower is 1.5 s behind
        let s = script(vec![
            straight(1, 0.0, 0.0, 10.0, 300.0, 90.0),
            straight(2, 1.5, 0.0, 11.5, 300.0, 90.0),
        ]);
        let tracks = generate_scenario(&s, 3.0).unwrap();
        let oracle = brute_force_pets(&tracks, 5.0).unwrap();
        assert_eq!(detect_conflicts(&tracks, 5.0).unwrap(), oracle);
        let min = oracle.records.iter().map(|r| r.pet).fold(f64::INFINITY, f64::min);
        // box semantics: the follower's front reaches the leader's rear 15 ft
        // (0.5 s) sooner than the centre gap suggests
        assert!((min - 1.0).abs() <= 1.0 / 3.0 + 1e-9, "{min}");
        assert!(oracle.records.iter().all(|r| r.leader_id == 1));
    }

    #[test]
    fn generated_samples_are_valid() {
        let mut v = straight(1, 0.1, 0.0, 4.9, 50.0, 10.0);
        v.waypoints.push(Waypoint {
            t: 7.0,
            x: 60.0,
            y: 30.0,
            heading: 350.0,
            speed: 10.0,
        });
        let tracks = generate_scenario(&script(vec![v]), 3.0).unwrap();
        let s = &tracks[0].samples;
        assert!((s[0].time - 1.0 / 3.0).abs() < 1e-12);
        assert!((s[s.len() - 1].time - 7.0).abs() < 1e-12);
        assert!(s.windows(2).all(|w| w[1].time > w[0].time));
        assert!(s.iter().all(|x| point_in_box(x.center, &x.bbox)));
        // heading wraps the short way through north
        assert!(s.iter().all(|x| x.heading <= 10.0 + 1e-9 || x.heading >= 350.0 - 1e-9));
    }

    #[test]
    fn script_errors() {
        let mut v = straight(1, 0.0, 0.0, 1.0, 10.0, 90.0);
        v.waypoints[1].t = 0.0;
        assert!(generate_scenario(&script(vec![v]), 3.0).is_err());
        let text = r#"{"id": "x", "vehicles": [], "expected": [{"leader": 1, "lagger": 2, "min_pet": 6.0, "tol": 0.3}]}"#;
        assert!(ScenarioScript::from_json(text).is_err());
    }

    #[test]
    fn trivial_inputs_and_size_guard() {
        assert!(brute_force_pets(&[], 5.0).unwrap().records.is_empty());
        let one = generate_scenario(&script(vec![straight(1, 0.0, 0.0, 5.0, 50.0, 90.0)]), 3.0).unwrap();
        assert!(brute_force_pets(&one, 5.0).unwrap().records.is_empty());
        let many: Vec<_> = (0..21).map(|i| straight(i, 0.0, 0.0, 1.0, 1.0, 90.0)).collect();
        let tracks = generate_scenario(&script(many), 3.0).unwrap();
        assert!(matches!(brute_force_pets(&tracks, 5.0), Err(Error::SizeGuard(_))));
        let long = generate_scenario(&script(vec![straight(1, 0.0, 0.0, 400.0, 10.0, 90.0)]), 3.0).unwrap();
        assert!(matches!(brute_force_pets(&long, 5.0), Err(Error::SizeGuard(_))));
    }

    fn five_level() -> ParameterVector {
        ParameterVector {
            constant: 0.0,
            beta: vec![0.0],
            sigma: vec![],
            thresholds: vec![0.0, 1.0, 2.0, 3.0],
        }
    }

    #[test]
    fn simulated_level_frequencies() {
        let spec = ModelSpec::fixed_only("y", &["a"]);
        let n = 10_000;
        let table = simulate_ordered_data(&five_level(), &spec, n, 1, 4).unwrap();
        let data = ModelData::from_table(&table, &spec).unwrap();
        let p = [0.5, 0.231_058_6, 0.149_738_5, 0.071_777_0, 0.047_425_9];
        for (c, pj) in data.level_counts().iter().zip(p) {
            let freq = *c as f64 / n as f64;
            let sd = (pj * (1.0 - pj) / n as f64).sqrt();
            assert!((freq - pj).abs() < 3.0 * sd, "{freq} vs {pj}");
        }
    }

    #[test]
    fn extreme_constant_gives_top_level() {
        let spec = ModelSpec::fixed_only("y", &["a"]);
        let mut t = five_level();
        t.constant = 20.0;
        let table = simulate_ordered_data(&t, &spec, 200, 1, 1).unwrap();
        assert!(table.rows.iter().all(|r| r[1] == "5"));
    }

    #[test]
    fn simulation_is_seeded_and_grouped() {
        let mut spec = ModelSpec::fixed_only("y", &["a"]);
        spec.random = vec![RandomCovariate::normal("b")];
        let truth = ParameterVector {
            constant: 0.0,
            beta: vec![0.5, 1.0],
            sigma: vec![0.5],
            thresholds: vec![0.0, 1.0],
        };
        let a = simulate_ordered_data(&truth, &spec, 10, 4, 9).unwrap();
        assert_eq!(a, simulate_ordered_data(&truth, &spec, 10, 4, 9).unwrap());
        assert_ne!(a, simulate_ordered_data(&truth, &spec, 10, 4, 10).unwrap());
        let d = ModelData::from_table(&a, &spec).unwrap();
        assert_eq!(d.groups.len(), 10);
        assert!(d.groups.iter().all(|g| g.len() == 4));
    }
}
