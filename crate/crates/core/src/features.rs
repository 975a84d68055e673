//! Model-ready observation rows.
//!
//! Each conflict record is joined with the signal state of its governing
//! phase at the lagger's arrival, trajectory context and traffic volume, then
//! routed to the dataset of whichever interval type that phase is in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conflicts::ConflictRecord;
use crate::error::{Error, Result};
use crate::geometry::{boxes_distance, point_in_polygon, Point2};
use crate::signals::{active_phase_indicators, snapshot_at, Countdowns, PhaseActivity, PhaseState, SignalPlan};
use crate::trajectory::{TrackSample, VehicleTrack};

/// Width of a volume bin in seconds.
pub const VOLUME_BIN_SECONDS: f64 = 300.0;
pub const DEFAULT_DISTANCE_CAP: f64 = 15.0;
/// PETs below this are under the recording floor and get no level.
pub const PET_FLOOR: f64 = 0.3;

/// Ordinal severity level 1..=5, or `None` outside [0.3, 5].
pub fn pet_level(pet: f64) -> Result<Option<u8>> {
    if !(pet > 0.0) || !pet.is_finite() {
        return Err(Error::invalid(format!("PET must be positive, got {pet}")));
    }
    if !(PET_FLOOR..=5.0).contains(&pet) {
        return Ok(None);
    }
    Ok(Some((pet.floor() as u8 + 1).min(5)))
}

pub fn speeding_proportion(speed: f64, limit: f64) -> Result<f64> {
    if !(limit > 0.0) {
        return Err(Error::invalid(format!("speed limit must be positive, got {limit}")));
    }
    Ok((speed - limit) / limit)
}

fn volume_bin(t: f64) -> i64 {
    (t / VOLUME_BIN_SECONDS).floor() as i64
}

/// Distinct vehicles per fixed five-minute bin anchored at t = 0.
#[derive(Debug, Clone, Default)]
pub struct VolumeBins {
    counts: BTreeMap<i64, usize>,
}

impl VolumeBins {
    pub fn new(tracks: &[VehicleTrack]) -> Self {
        let mut counts = BTreeMap::new();
        for t in tracks {
            let bins: BTreeSet<i64> = t.samples.iter().map(|s| volume_bin(s.time)).collect();
            for b in bins {
                *counts.entry(b).or_default() += 1;
            }
        }
        Self { counts }
    }

    pub fn at(&self, t: f64) -> usize {
        self.counts.get(&volume_bin(t)).copied().unwrap_or(0)
    }
}

pub fn volume_5min(tracks: &[VehicleTrack], t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be non-negative, got {t}")));
    }
    Ok(VolumeBins::new(tracks).at(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneMovement {
    LeftTurn,
    Through,
}

/// Choices the join needs that the inputs do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// mph
    pub speed_limit: f64,
    #[serde(default = "default_cap")]
    pub distance_cap: f64,
    /// Vertices of the intersection area, feet.
    pub intersection_polygon: Vec<Point2>,
    pub lane_movement: BTreeMap<i64, LaneMovement>,
    pub phase_of_lane: BTreeMap<i64, u8>,
    #[serde(default)]
    pub activity: PhaseActivity,
}

fn default_cap() -> f64 {
    DEFAULT_DISTANCE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub leader_id: i64,
    pub lagger_id: i64,
    pub t_enter: f64,
    pub pet: f64,
    pub pet_level: u8,
    pub distance: f64,
    pub countdowns: Countdowns,
    pub phases: [u8; 8],
    pub speed: f64,
    pub heading: f64,
    pub lane: i64,
    pub volume: usize,
    pub intersection: u8,
    pub speeding_prop: f64,
    /// 0 left-turn lane, 1 through lane, 2 inside the intersection.
    pub movement: u8,
}

impl ObservationRow {
    /// Panel key for model fitting: the ordered vehicle pair.
    pub fn pair_id(&self) -> String {
        format!("{}-{}", self.leader_id, self.lagger_id)
    }
}

/// Column names of exported observation tables.
pub const OBSERVATION_COLUMNS: [&str; 27] = [
    "pair_id",
    "leader_id",
    "lagger_id",
    "t_enter",
    "pet",
    "pet_level",
    "distance",
    "red_clearance",
    "all_red",
    "red",
    "yellow",
    "green",
    "phase_1",
    "phase_2",
    "phase_3",
    "phase_4",
    "phase_5",
    "phase_6",
    "phase_7",
    "phase_8",
    "speed",
    "heading",
    "lane",
    "volume",
    "intersection",
    "speeding_prop",
    "movement",
];

fn sentinel(v: Option<f64>) -> String {
    v.unwrap_or(crate::signals::INACTIVE_SENTINEL).to_string()
}

pub fn write_observations<W: Write>(sink: W, rows: &[ObservationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(OBSERVATION_COLUMNS)?;
    for r in rows {
        let c = &r.countdowns;
        let mut rec = vec![
            r.pair_id(),
            r.leader_id.to_string(),
            r.lagger_id.to_string(),
            r.t_enter.to_string(),
            r.pet.to_string(),
            r.pet_level.to_string(),
            r.distance.to_string(),
            sentinel(c.red_clearance),
            sentinel(c.all_red),
            sentinel(c.red),
            sentinel(c.yellow),
            sentinel(c.green),
        ];
        rec.extend(r.phases.iter().map(u8::to_string));
        rec.extend([
            r.speed.to_string(),
            r.heading.to_string(),
            r.lane.to_string(),
            r.volume.to_string(),
            r.intersection.to_string(),
            r.speeding_prop.to_string(),
            r.movement.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<observation sink>", e))?;
    Ok(())
}

/// One dataset per interval type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub yellow: Vec<ObservationRow>,
    pub all_red: Vec<ObservationRow>,
    pub red_clearance: Vec<ObservationRow>,
    pub red: Vec<ObservationRow>,
    pub green: Vec<ObservationRow>,
}

impl DatasetBundle {
    /// Bundle order used for files and reports.
    pub const ORDER: [PhaseState; 5] = [
        PhaseState::Yellow,
        PhaseState::AllRed,
        PhaseState::RedClearance,
        PhaseState::Red,
        PhaseState::Green,
    ];

    pub fn get(&self, state: PhaseState) -> &[ObservationRow] {
        match state {
            PhaseState::Yellow => &self.yellow,
            PhaseState::AllRed => &self.all_red,
            PhaseState::RedClearance => &self.red_clearance,
            PhaseState::Red => &self.red,
            PhaseState::Green => &self.green,
        }
    }

    fn get_mut(&mut self, state: PhaseState) -> &mut Vec<ObservationRow> {
        match state {
            PhaseState::Yellow => &mut self.yellow,
            PhaseState::AllRed => &mut self.all_red,
            PhaseState::RedClearance => &mut self.red_clearance,
            PhaseState::Red => &mut self.red,
            PhaseState::Green => &mut self.green,
        }
    }

    pub fn len(&self) -> usize {
        Self::ORDER.iter().map(|&s| self.get(s).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowRejection {
    PetOutOfRange,
    LaneNotMapped,
    OutsideSignalHorizon,
    PhaseNotInPlan,
    TrackMissing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub bundle: DatasetBundle,
    pub rejected: BTreeMap<RowRejection, usize>,
}

const SAMPLE_TOL: f64 = 1e-6;

fn sample_at<'a>(tracks: &HashMap<i64, &'a VehicleTrack>, id: i64, t: f64) -> Option<&'a TrackSample> {
    tracks.get(&id).and_then(|tr| tr.sample_near(t, SAMPLE_TOL))
}

fn assemble_one(
    rec: &ConflictRecord,
    plan: &SignalPlan,
    by_id: &HashMap<i64, &VehicleTrack>,
    volumes: &VolumeBins,
    cfg: &FeatureConfig,
) -> std::result::Result<(PhaseState, ObservationRow), RowRejection> {
    let level = pet_level(rec.pet)
        .ok()
        .flatten()
        .ok_or(RowRejection::PetOutOfRange)?;
    let phase = *cfg.phase_of_lane.get(&rec.lagger_lane).ok_or(RowRejection::LaneNotMapped)?;
    let lane_move = *cfg.lane_movement.get(&rec.lagger_lane).ok_or(RowRejection::LaneNotMapped)?;
    let snap = snapshot_at(plan, rec.t_enter).map_err(|_| RowRejection::OutsideSignalHorizon)?;
    let status = snap.status(phase).ok_or(RowRejection::PhaseNotInPlan)?;

    let lagger = sample_at(by_id, rec.lagger_id, rec.t_enter).ok_or(RowRejection::TrackMissing)?;
    let leader_then = sample_at(by_id, rec.leader_id, rec.t_leave).ok_or(RowRejection::TrackMissing)?;
    let distance = match sample_at(by_id, rec.leader_id, rec.t_enter) {
        Some(leader_now) => boxes_distance(&leader_now.bbox, &lagger.bbox).min(cfg.distance_cap),
        None => cfg.distance_cap,
    };
    let speeding_prop = speeding_proportion(leader_then.speed, cfg.speed_limit).map_err(|_| RowRejection::PetOutOfRange)?;
    let inside = point_in_polygon(rec.zone_center, &cfg.intersection_polygon);
    let movement = if inside {
        2
    } else {
        match lane_move {
            LaneMovement::LeftTurn => 0,
            LaneMovement::Through => 1,
        }
    };

    Ok((
        status.state,
        ObservationRow {
            leader_id: rec.leader_id,
            lagger_id: rec.lagger_id,
            t_enter: rec.t_enter,
            pet: rec.pet,
            pet_level: level,
            distance,
            countdowns: Countdowns::from(status),
            phases: active_phase_indicators(&snap, &cfg.activity),
            speed: rec.lagger_speed,
            heading: rec.lagger_heading,
            lane: rec.lagger_lane,
            volume: volumes.at(rec.t_enter),
            intersection: inside as u8,
            speeding_prop,
            movement,
        },
    ))
}

/// Joins conflicts with signal state and trajectory context.
pub fn assemble_observations(
    records: &[ConflictRecord],
    plan: &SignalPlan,
    tracks: &[VehicleTrack],
    cfg: &FeatureConfig,
) -> Result<Assembly> {
    if !(cfg.speed_limit > 0.0) {
        return Err(Error::Config(format!("speed limit must be positive, got {}", cfg.speed_limit)));
    }
    if !(cfg.distance_cap > 0.0) {
        return Err(Error::Config(format!("distance cap must be positive, got {}", cfg.distance_cap)));
    }
    let by_id: HashMap<i64, &VehicleTrack> = tracks.iter().map(|t| (t.vehicle_id, t)).collect();
    let volumes = VolumeBins::new(tracks);

    let results: Vec<_> = records
        .par_iter()
        .map(|r| assemble_one(r, plan, &by_id, &volumes, cfg))
        .collect();

    let mut out = Assembly::default();
    for res in results {
        match res {
            Ok((state, row)) => out.bundle.get_mut(state).push(row),
            Err(why) => *out.rejected.entry(why).or_default() += 1,
        }
    }
    for state in DatasetBundle::ORDER {
        out.bundle.get_mut(state).sort_by(|a, b| {
            a.t_enter
                .total_cmp(&b.t_enter)
                .then((a.leader_id, a.lagger_id).cmp(&(b.leader_id, b.lagger_id)))
        });
    }
    Ok(out)
}
