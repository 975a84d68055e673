//! A small signalised four-leg intersection simulator.
//!
//! Produces trajectories, a matching signal plan and feature settings, so the
//! whole pipeline can run end to end without recorded data. Vehicles follow
//! their leader with a fixed time gap, stop for yellow and red when they
//! comfortably can, and otherwise carry on through. One protected left turn
//! crosses the eastbound through lane.
//!
//! Everything is seeded and single-threaded, so a given seed always gives the
//! same files.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, LaneMovement};
use crate::geometry::{OrientedBox, Point2};
use crate::signals::{PhaseActivity, PhaseInterval, PhaseState, SignalPlan};
use crate::trajectory::{write_tracks, SchemaConfig, TrackSample, VehicleTrack};

/// Simulation and output rate, Hz.
pub const SIM_RATE: f64 = 10.0;
const DT: f64 = 1.0 / SIM_RATE;
const FT_PER_S_PER_MPH: f64 = 5280.0 / 3600.0;
const APPROACH: f64 = 600.0;
/// Distance from the start of every path to its stop line.
const STOP_LINE: f64 = 560.0;
const HALF_BOX: f64 = 40.0;
const ACCEL: f64 = 8.0;
const COMFORT_DECEL: f64 = 10.0;
const MAX_DECEL: f64 = 25.0;
const JAM_GAP: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneOptions {
    pub seed: u64,
    /// Seconds of arrivals; the run continues until the last vehicle leaves.
    pub duration: f64,
    /// Vehicles per hour on each through lane.
    pub through_flow: f64,
    /// Vehicles per hour on the left-turn lane.
    pub left_flow: f64,
    /// Speed limit, mph. Desired speeds scatter around it.
    pub speed_limit: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            duration: 600.0,
            through_flow: 700.0,
            left_flow: 250.0,
            speed_limit: 35.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub tracks: Vec<VehicleTrack>,
    pub plan: SignalPlan,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line { a: Point2, b: Point2 },
    /// Counter-clockwise arc starting at `theta0` radians.
    Arc { center: Point2, radius: f64, theta0: f64, sweep: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { a, b } => a.distance(b),
            Segment::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    /// Position and direction vector at arc length `s` along the segment.
    fn at(&self, s: f64) -> (Point2, Point2) {
        match *self {
            Segment::Line { a, b } => {
                let len = a.distance(b);
                let d = Point2::new((b.x - a.x) / len, (b.y - a.y) / len);
                (Point2::new(a.x + d.x * s, a.y + d.y * s), d)
            }
            Segment::Arc {
                center,
                radius,
                theta0,
                ..
            } => {
                let th = theta0 + s / radius;
                (
                    Point2::new(center.x + radius * th.cos(), center.y + radius * th.sin()),
                    Point2::new(-th.sin(), th.cos()),
                )
            }
        }
    }
}

struct Lane {
    id: i64,
    phase: u8,
    movement: LaneMovement,
    flow: f64,
    path: Vec<Segment>,
}

impl Lane {
    fn length(&self) -> f64 {
        self.path.iter().map(Segment::length).sum()
    }

    /// Centre and heading (degrees clockwise from north) at arc length `s`.
    fn pose(&self, mut s: f64) -> (Point2, f64) {
        let last = self.path.len() - 1;
        for (i, seg) in self.path.iter().enumerate() {
            let len = seg.length();
            if s <= len || i == last {
                let (p, d) = seg.at(s.min(len));
                return (p, d.x.atan2(d.y).to_degrees().rem_euclid(360.0));
            }
            s -= len;
        }
        unreachable!("path has at least one segment")
    }
}

fn line(ax: f64, ay: f64, bx: f64, by: f64) -> Segment {
    Segment::Line {
        a: Point2::new(ax, ay),
        b: Point2::new(bx, by),
    }
}

fn lanes(opts: &SceneOptions) -> Vec<Lane> {
    let through = |id, phase, path| Lane {
        id,
        phase,
        movement: LaneMovement::Through,
        flow: opts.through_flow,
        path: vec![path],
    };
    let radius = 30.0;
    let left_y = 6.0;
    let turn_x = 10.0;
    vec![
        through(1, 2, line(-APPROACH, -6.0, APPROACH, -6.0)),
        through(2, 6, line(APPROACH, 18.0, -APPROACH, 18.0)),
        through(3, 4, line(6.0, -APPROACH, 6.0, APPROACH)),
        through(4, 8, line(-6.0, APPROACH, -6.0, -APPROACH)),
        Lane {
            id: 5,
            phase: 1,
            movement: LaneMovement::LeftTurn,
            flow: opts.left_flow,
            path: vec![
                line(APPROACH, left_y, turn_x, left_y),
                Segment::Arc {
                    center: Point2::new(turn_x, left_y - radius),
                    radius,
                    theta0: FRAC_PI_2,
                    sweep: FRAC_PI_2,
                },
                line(turn_x - radius, left_y - radius, turn_x - radius, -APPROACH),
            ],
        },
    ]
}

/// One cycle: `(phases, green, yellow, red clearance, all red)` per stage.
const STAGES: [(&[u8], f64, f64, f64, f64); 3] = [
    (&[1], 10.0, 3.0, 1.0, 1.0),
    (&[2, 6], 30.0, 4.0, 1.0, 1.0),
    (&[4, 8], 30.0, 4.0, 1.0, 1.0),
];

/// Fixed-time plan covering `[0, horizon)` or a little more.
pub fn fixed_time_plan(horizon: f64) -> Result<SignalPlan> {
    let mut phases: BTreeMap<u8, Vec<PhaseInterval>> = BTreeMap::new();
    let push = |phases: &mut BTreeMap<u8, Vec<PhaseInterval>>, p: u8, state, start: f64, end: f64| {
        let list = phases.entry(p).or_default();
        match list.last_mut() {
            Some(last) if last.state == state => last.end = end,
            _ => list.push(PhaseInterval { state, start, end }),
        }
    };
    let mut t = 0.0;
    while t < horizon {
        for (i, &(own, g, y, rc, ar)) in STAGES.iter().enumerate() {
            let steps = [
                (PhaseState::Green, g),
                (PhaseState::Yellow, y),
                (PhaseState::RedClearance, rc),
                (PhaseState::AllRed, ar),
            ];
            let mut u = t;
            for (state, len) in steps {
                for &p in own {
                    push(&mut phases, p, state, u, u + len);
                }
                u += len;
            }
            for (j, other) in STAGES.iter().enumerate() {
                if j != i {
                    for &p in other.0 {
                        push(&mut phases, p, PhaseState::Red, t, u);
                    }
                }
            }
            t = u;
        }
    }
    SignalPlan::new(Some(SIM_RATE), phases)
}

struct Vehicle {
    id: i64,
    length: f64,
    width: f64,
    /// ft/s
    desired: f64,
    time_gap: f64,
    s: f64,
    v: f64,
    samples: Vec<TrackSample>,
}

impl Vehicle {
    fn record(&mut self, lane: &Lane, t: f64) -> Result<()> {
        let (center, heading) = lane.pose(self.s);
        self.samples.push(TrackSample {
            time: t,
            center,
            bbox: OrientedBox::from_pose(center, self.length, self.width, heading)?,
            speed: self.v / FT_PER_S_PER_MPH,
            heading,
            lane_id: lane.id,
        });
        Ok(())
    }
}

fn state_at(plan: &SignalPlan, phase: u8, t: f64) -> PhaseState {
    plan.intervals(phase)
        .and_then(|ivs| ivs.iter().find(|iv| iv.start <= t && t < iv.end))
        .map_or(PhaseState::Red, |iv| iv.state)
}

/// Runs the simulation.
pub fn simulate_intersection(opts: &SceneOptions) -> Result<Scene> {
    if !(opts.duration > 0.0 && opts.speed_limit > 0.0 && opts.through_flow >= 0.0 && opts.left_flow >= 0.0) {
        return Err(Error::Config(format!("scene options out of range: {opts:?}")));
    }
    let lanes = lanes(opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Arrival times per lane, drawn up front so lanes do not share a stream.
    let mut arrivals: Vec<Vec<f64>> = Vec::new();
    for lane in &lanes {
        let mut times = Vec::new();
        if lane.flow > 0.0 {
            let exp = Exp::new(lane.flow / 3600.0).map_err(|e| Error::Config(e.to_string()))?;
            let mut t = 0.0;
            loop {
                t += exp.sample(&mut rng);
                if t >= opts.duration {
                    break;
                }
                times.push(t);
            }
        }
        arrivals.push(times);
    }
    let plan = fixed_time_plan(opts.duration + 400.0)?;
    let (_, plan_end) = plan.horizon();

    let mut next_id = 1;
    let mut pending: Vec<std::collections::VecDeque<f64>> = arrivals.into_iter().map(Into::into).collect();
    let mut active: Vec<Vec<Vehicle>> = lanes.iter().map(|_| Vec::new()).collect();
    let mut done = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t = k as f64 / SIM_RATE;
        if t >= plan_end - 1.0 {
            return Err(Error::invalid("simulation did not clear before the end of the signal plan"));
        }
        for (li, lane) in lanes.iter().enumerate() {
            let state = state_at(&plan, lane.phase, t);
            let length = lane.length();
            let vehicles = &mut active[li];
            // Move front to back using positions from the previous step.
            let mut ahead: Option<(f64, f64, f64)> = None;
            for veh in vehicles.iter_mut() {
                let front = veh.s + veh.length / 2.0;
                let mut target = veh.desired;
                if let Some((s_lead, len_lead, v_lead)) = ahead {
                    let gap = s_lead - len_lead / 2.0 - front;
                    target = target.min(((gap - JAM_GAP) / veh.time_gap).max(0.0) + 0.2 * v_lead.min(veh.v));
                    if gap < JAM_GAP {
                        target = 0.0;
                    }
                }
                if state != PhaseState::Green && front < STOP_LINE {
                    let to_line = STOP_LINE - front;
                    let needed = veh.v * veh.v / (2.0 * to_line.max(1e-6));
                    if needed <= COMFORT_DECEL || veh.v < 1.0 {
                        target = target.min((2.0 * COMFORT_DECEL * (to_line - 1.0).max(0.0)).sqrt());
                    }
                }
                let prev = (veh.s, veh.length, veh.v);
                veh.v = target.clamp((veh.v - MAX_DECEL * DT).max(0.0), veh.v + ACCEL * DT);
                veh.s += veh.v * DT;
                ahead = Some(prev);
            }
            // Vehicles that ran off the end of the path are finished.
            while vehicles.first().is_some_and(|v| v.s > length) {
                let v = vehicles.remove(0);
                done.push(VehicleTrack::new(v.id, Some(SIM_RATE), v.samples)?);
            }
            // Admit at most one arrival per step, when there is room.
            if pending[li].front().is_some_and(|&a| a <= t) {
                let room = vehicles.last().is_none_or(|v| v.s - v.length / 2.0 > 50.0);
                if room {
                    pending[li].pop_front();
                    let truck = rng.random_bool(0.05);
                    let (length, width) = if truck { (40.0, 8.5) } else { (15.0, 6.0) };
                    let desired = (opts.speed_limit + rng.random_range(-6.0..8.0)) * FT_PER_S_PER_MPH;
                    let entry = vehicles.last().map_or(desired, |v| v.v.min(desired));
                    vehicles.push(Vehicle {
                        id: next_id,
                        length,
                        width,
                        desired,
                        time_gap: rng.random_range(0.9..2.2),
                        s: length / 2.0,
                        v: entry,
                        samples: Vec::new(),
                    });
                    next_id += 1;
                }
            }
            for veh in vehicles.iter_mut() {
                veh.record(lane, t)?;
            }
        }
        let idle = pending.iter().all(|p| p.is_empty()) && active.iter().all(Vec::is_empty);
        if idle {
            break;
        }
        k += 1;
    }
    done.sort_by_key(|t| t.vehicle_id);

    let features = FeatureConfig {
        speed_limit: opts.speed_limit,
        distance_cap: crate::features::DEFAULT_DISTANCE_CAP,
        intersection_polygon: vec![
            Point2::new(-HALF_BOX, -HALF_BOX),
            Point2::new(HALF_BOX, -HALF_BOX),
            Point2::new(HALF_BOX, HALF_BOX),
            Point2::new(-HALF_BOX, HALF_BOX),
        ],
        lane_movement: lanes.iter().map(|l| (l.id, l.movement)).collect(),
        phase_of_lane: lanes.iter().map(|l| (l.id, l.phase)).collect(),
        activity: PhaseActivity::default(),
    };
    Ok(Scene {
        tracks: done,
        plan,
        features,
    })
}

/// Model used by the demo project: two fixed covariates and one normally
/// distributed random parameter grouped by vehicle pair.
pub fn demo_model() -> serde_json::Value {
    json!({
        "response": "pet_level",
        "fixed": ["intersection", "speeding_prop"],
        "random": ["speed"],
        "constant": true,
        "draws": 50,
        "seed": 11,
        "group_key": "pair_id"
    })
}

/// Writes `trajectories.csv`, `signal_plan.json`, `model.json` and
/// `run.json` into `dir` and returns the path of `run.json`.
pub fn write_demo_project(dir: &Path, opts: &SceneOptions) -> Result<PathBuf> {
    let scene = simulate_intersection(opts)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    let mut csv = Vec::new();
    write_tracks(&mut csv, &scene.tracks, SIM_RATE)?;
    write("trajectories.csv", &csv)?;
    write("signal_plan.json", scene.plan.to_json()?.as_bytes())?;
    write("model.json", serde_json::to_string_pretty(&demo_model())?.as_bytes())?;
    let schema = SchemaConfig {
        frame_rate: SIM_RATE,
        ..SchemaConfig::canonical()
    };
    let run = json!({
        "trajectories": "trajectories.csv",
        "signal_plan": "signal_plan.json",
        "output_dir": "out",
        "schema": schema,
        "rate": 3.0,
        "pet_max": 5.0,
        "method": "bbox",
        "epsilon": 0.5,
        "features": scene.features,
        "model": "model.json",
        "seed": opts.seed,
        "heatmap": {"cell_size": 10.0, "threshold": 5.0}
    });
    let path = dir.join("run.json");
    write("run.json", serde_json::to_string_pretty(&run)?.as_bytes())?;
    Ok(path)
}
