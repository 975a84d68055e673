//! Post encroachment time between vehicle pairs.
//!
//! For an ordered pair (leader, lagger) and each lagger timestep `T2`, the
//! conflict zone is the leader's footprint at the latest earlier timestep `T1`
//! that still intersects the lagger's current footprint. The record's PET is
//! `T2 - T1`, computed from integer grid steps. Timesteps where both vehicles intersect at `T2` itself are
//! co-occupancy (contact) and are counted as overlap events instead.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, point_in_box, OrientedBox, Point2};
use crate::trajectory::{TrackSample, VehicleTrack};

/// Default PET recording ceiling in seconds.
pub const DEFAULT_PET_MAX: f64 = 5.0;
/// Default analysis rate in Hz.
pub const DEFAULT_RATE: f64 = 3.0;
/// Default half-side of the centre-point square, feet.
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Cumulative thresholds used for summaries, seconds.
pub const SUMMARY_THRESHOLDS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

// Slack on floating comparisons of times that sit on a k / rate grid.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub leader_id: i64,
    pub lagger_id: i64,
    /// Leader's last occupancy of the zone (T1).
    pub t_leave: f64,
    /// Lagger's arrival (T2).
    pub t_enter: f64,
    pub pet: f64,
    pub zone_center: Point2,
    pub lagger_lane: i64,
    pub lagger_speed: f64,
    pub lagger_heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinPetRecord {
    pub leader_id: i64,
    pub lagger_id: i64,
    pub min_pet: f64,
    pub zone_center: Point2,
    pub time: f64,
}

/// Records plus the number of co-occupancy timesteps that were excluded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub records: Vec<ConflictRecord>,
    pub overlap_events: usize,
}

impl Detection {
    fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            (a.leader_id, a.lagger_id)
                .cmp(&(b.leader_id, b.lagger_id))
                .then(a.t_enter.total_cmp(&b.t_enter))
        });
    }
}

/// Footprint representation used when comparing vehicles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Footprint {
    BoundingBox,
    /// Axis-aligned square of half-side `epsilon` at the vehicle centre.
    CenterSquare { epsilon: f64 },
}

/// Samples of one track keyed by integer grid step.
struct StepIndex<'a> {
    track: &'a VehicleTrack,
    first: i64,
    slots: Vec<Option<usize>>,
}

impl<'a> StepIndex<'a> {
    fn new(track: &'a VehicleTrack, rate: f64) -> Result<Self> {
        let steps: Vec<i64> = track
            .samples
            .iter()
            .map(|s| {
                let k = (s.time * rate).round();
                if (s.time * rate - k).abs() > 1e-6 {
                    Err(Error::invalid(format!(
                        "track {} has a sample at t={} off the {rate} Hz grid",
                        track.vehicle_id, s.time
                    )))
                } else {
                    Ok(k as i64)
                }
            })
            .collect::<Result<_>>()?;
        let first = steps[0];
        let last = steps[steps.len() - 1];
        let mut slots = vec![None; (last - first + 1) as usize];
        for (i, k) in steps.iter().enumerate() {
            slots[(k - first) as usize] = Some(i);
        }
        Ok(Self { track, first, slots })
    }

    fn at(&self, k: i64) -> Option<&'a TrackSample> {
        let off = k - self.first;
        if off < 0 {
            return None;
        }
        self.slots
            .get(off as usize)
            .copied()
            .flatten()
            .map(|i| &self.track.samples[i])
    }

    fn steps(&self) -> impl Iterator<Item = (i64, &'a TrackSample)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(move |(off, s)| s.map(|i| (self.first + off as i64, &self.track.samples[i])))
    }
}

fn common_rate(a: &VehicleTrack, b: &VehicleTrack) -> Result<f64> {
    match (a.rate, b.rate) {
        (Some(ra), Some(rb)) if (ra - rb).abs() <= 1e-12 * ra.abs().max(1.0) => Ok(ra),
        (ra, rb) => Err(Error::invalid(format!(
            "tracks {} and {} have mismatched sampling rates ({ra:?} vs {rb:?})",
            a.vehicle_id, b.vehicle_id
        ))),
    }
}

fn check_pet_max(pet_max: f64) -> Result<()> {
    if pet_max > 0.0 && pet_max.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("pet_max must be positive, got {pet_max}")))
    }
}

fn pair_sequence(leader: &StepIndex, lagger: &StepIndex, rate: f64, pet_max: f64) -> Detection {
    let window = (pet_max * rate + TIME_EPS).floor() as i64;
    let mut out = Detection::default();
    for (k2, here) in lagger.steps() {
        if let Some(lead_now) = leader.at(k2) {
            if boxes_intersect(&lead_now.bbox, &here.bbox) {
                out.overlap_events += 1;
                continue;
            }
        }
        let here_aabb = here.bbox.aabb();
        let lo = (k2 - window).max(leader.first);
        for k1 in (lo..k2).rev() {
            let Some(then) = leader.at(k1) else { continue };
            if !then.bbox.aabb().overlaps(&here_aabb) || !boxes_intersect(&then.bbox, &here.bbox) {
                continue;
            }
            // Snapped to the grid so that e.g. three steps at 3 Hz is exactly 1.0.
            let pet = (k2 - k1) as f64 / rate;
            if pet <= pet_max + TIME_EPS {
                out.records.push(ConflictRecord {
                    leader_id: leader.track.vehicle_id,
                    lagger_id: lagger.track.vehicle_id,
                    t_leave: then.time,
                    t_enter: here.time,
                    pet,
                    zone_center: then.bbox.centroid(),
                    lagger_lane: here.lane_id,
                    lagger_speed: here.speed,
                    lagger_heading: here.heading,
                });
            }
            break;
        }
    }
    out
}

/// PET sequence for one ordered pair; both tracks must share a sampling rate.
pub fn compute_pet_sequence(leader: &VehicleTrack, lagger: &VehicleTrack, pet_max: f64) -> Result<Detection> {
    check_pet_max(pet_max)?;
    let rate = common_rate(leader, lagger)?;
    let li = StepIndex::new(leader, rate)?;
    let gi = StepIndex::new(lagger, rate)?;
    let mut d = pair_sequence(&li, &gi, rate, pet_max);
    d.sort();
    Ok(d)
}

/// How candidate pairs are chosen before the exact PET computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BroadPhase {
    /// Every unordered pair.
    AllPairs,
    /// Uniform spatial hash over sample footprints; pairs must share a cell
    /// within the PET lookback window. `cell_size` of `None` picks the largest
    /// footprint extent in the data.
    SpatialHash { cell_size: Option<f64> },
}

fn candidate_pairs(indexes: &[StepIndex], window: i64, cell_size: Option<f64>) -> BTreeSet<(usize, usize)> {
    let cell = cell_size.unwrap_or_else(|| {
        indexes
            .iter()
            .flat_map(|ix| ix.track.samples.iter())
            .map(|s| {
                let a = s.bbox.aabb();
                (a.max.x - a.min.x).max(a.max.y - a.min.y)
            })
            .fold(1.0, f64::max)
    });
    let mut grid: HashMap<(i64, i64), Vec<(i64, usize)>> = HashMap::new();
    for (ti, ix) in indexes.iter().enumerate() {
        for (k, s) in ix.steps() {
            let a = s.bbox.aabb();
            let (x0, x1) = ((a.min.x / cell).floor() as i64, (a.max.x / cell).floor() as i64);
            let (y0, y1) = ((a.min.y / cell).floor() as i64, (a.max.y / cell).floor() as i64);
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    grid.entry((cx, cy)).or_default().push((k, ti));
                }
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for entries in grid.values_mut() {
        entries.sort_unstable();
        for (i, &(k, a)) in entries.iter().enumerate() {
            for &(k2, b) in &entries[i + 1..] {
                if k2 - k > window {
                    break;
                }
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs
}

/// All ordered-pair PET records, sorted by (leader, lagger, t_enter).
pub fn detect_conflicts(tracks: &[VehicleTrack], pet_max: f64) -> Result<Detection> {
    detect_conflicts_with(tracks, pet_max, BroadPhase::SpatialHash { cell_size: None })
}

pub fn detect_conflicts_with(tracks: &[VehicleTrack], pet_max: f64, broad: BroadPhase) -> Result<Detection> {
    check_pet_max(pet_max)?;
    let Some(first) = tracks.first() else {
        return Ok(Detection::default());
    };
    let mut rate = f64::NAN;
    for t in tracks {
        rate = common_rate(first, t)?;
    }
    let indexes: Vec<StepIndex> = tracks.iter().map(|t| StepIndex::new(t, rate)).collect::<Result<_>>()?;
    let window = (pet_max * rate + TIME_EPS).floor() as i64;

    let pairs: Vec<(usize, usize)> = match broad {
        BroadPhase::AllPairs => (0..tracks.len())
            .flat_map(|a| (a + 1..tracks.len()).map(move |b| (a, b)))
            .collect(),
        BroadPhase::SpatialHash { cell_size } => candidate_pairs(&indexes, window, cell_size).into_iter().collect(),
    };

    let parts: Vec<Detection> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut d = pair_sequence(&indexes[a], &indexes[b], rate, pet_max);
            let back = pair_sequence(&indexes[b], &indexes[a], rate, pet_max);
            d.records.extend(back.records);
            d.overlap_events += back.overlap_events;
            d
        })
        .collect();
    let mut out = Detection::default();
    for p in parts {
        out.records.extend(p.records);
        out.overlap_events += p.overlap_events;
    }
    out.sort();
    Ok(out)
}

/// Replaces each footprint with an axis-aligned square of half-side `epsilon`.
///
/// Fails when `epsilon` exceeds half the narrowest footprint or when any
/// square would poke outside its own footprint.
pub fn center_square_tracks(tracks: &[VehicleTrack], epsilon: f64) -> Result<Vec<VehicleTrack>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let min_width = tracks
        .iter()
        .flat_map(|t| t.samples.iter())
        .map(|s| s.bbox.min_edge())
        .fold(f64::INFINITY, f64::min);
    if epsilon > min_width / 2.0 {
        return Err(Error::invalid(format!(
            "epsilon {epsilon} ft exceeds half the minimum vehicle width ({min_width} ft)"
        )));
    }
    tracks
        .iter()
        .map(|t| {
            let samples = t
                .samples
                .iter()
                .map(|s| {
                    let sq = OrientedBox::square(s.center, epsilon)?;
                    if !sq.corners().iter().all(|&c| point_in_box(c, &s.bbox)) {
                        return Err(Error::invalid(format!(
                            "epsilon {epsilon} ft square is not contained in vehicle {} at t={}",
                            t.vehicle_id, s.time
                        )));
                    }
                    Ok(TrackSample { bbox: sq, ..s.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            VehicleTrack::new(t.vehicle_id, t.rate, samples)
        })
        .collect()
}

/// The same PET computation with centre-point squares as footprints.
pub fn center_point_conflicts(tracks: &[VehicleTrack], pet_max: f64, epsilon: f64) -> Result<Detection> {
    let squares = center_square_tracks(tracks, epsilon)?;
    detect_conflicts(&squares, pet_max)
}

pub fn detect_with_footprint(tracks: &[VehicleTrack], pet_max: f64, footprint: Footprint) -> Result<Detection> {
    match footprint {
        Footprint::BoundingBox => detect_conflicts(tracks, pet_max),
        Footprint::CenterSquare { epsilon } => center_point_conflicts(tracks, pet_max, epsilon),
    }
}

/// One record per ordered pair carrying its smallest PET; ties go to the earliest arrival.
pub fn min_pets(records: &[ConflictRecord]) -> Vec<MinPetRecord> {
    let mut best: BTreeMap<(i64, i64), &ConflictRecord> = BTreeMap::new();
    for r in records {
        best.entry((r.leader_id, r.lagger_id))
            .and_modify(|b| {
                if r.pet < b.pet || (r.pet == b.pet && r.t_enter < b.t_enter) {
                    *b = r;
                }
            })
            .or_insert(r);
    }
    best.into_values()
        .map(|r| MinPetRecord {
            leader_id: r.leader_id,
            lagger_id: r.lagger_id,
            min_pet: r.pet,
            zone_center: r.zone_center,
            time: r.t_enter,
        })
        .collect()
}

/// Cumulative counts of values strictly below each threshold.
pub fn threshold_counts(pets: &[f64], thresholds: &[f64]) -> Result<Vec<usize>> {
    if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("thresholds must be strictly increasing"));
    }
    let mut sorted = pets.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&p| p < t))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub origin: Point2,
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
    /// Row-major, `nrows * ncols`; row 0 is the southernmost.
    pub counts: Vec<u64>,
    /// Binned records that fell outside the grid.
    pub overflow: u64,
}

impl HeatmapGrid {
    pub fn new(origin: Point2, cell_size: f64, ncols: usize, nrows: usize) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        Ok(Self {
            origin,
            cell_size,
            ncols,
            nrows,
            counts: vec![0; ncols * nrows],
            overflow: 0,
        })
    }

    pub fn add(&mut self, p: Point2) {
        let cx = ((p.x - self.origin.x) / self.cell_size).floor();
        let cy = ((p.y - self.origin.y) / self.cell_size).floor();
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < self.ncols && (cy as usize) < self.nrows {
            self.counts[cy as usize * self.ncols + cx as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn get(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.ncols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Plain-text grid: a `key value` header followed by one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "origin_x {}", self.origin.x)?;
        writeln!(w, "origin_y {}", self.origin.y)?;
        writeln!(w, "cell_size {}", self.cell_size)?;
        writeln!(w, "ncols {}", self.ncols)?;
        writeln!(w, "nrows {}", self.nrows)?;
        writeln!(w, "overflow {}", self.overflow)?;
        for row in self.counts.chunks(self.ncols.max(1)) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<f64> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("heatmap missing `{key}`")))?;
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad heatmap header line `{line}`")))?;
            if k != key {
                return Err(Error::Parse(format!("expected `{key}`, found `{k}`")));
            }
            v.trim().parse().map_err(|_| Error::Parse(format!("bad value for `{key}`")))
        };
        let ox = header("origin_x")?;
        let oy = header("origin_y")?;
        let cell = header("cell_size")?;
        let ncols = header("ncols")? as usize;
        let nrows = header("nrows")? as usize;
        let overflow = header("overflow")? as u64;
        let mut grid = HeatmapGrid::new(Point2::new(ox, oy), cell, ncols, nrows)?;
        grid.overflow = overflow;
        let counts: Vec<u64> = lines
            .flat_map(str::split_whitespace)
            .map(|v| v.parse().map_err(|_| Error::Parse(format!("bad heatmap count `{v}`"))))
            .collect::<Result<_>>()?;
        if counts.len() != ncols * nrows {
            return Err(Error::Parse("heatmap count does not match its dimensions".into()));
        }
        grid.counts = counts;
        Ok(grid)
    }
}

/// Bins the zone centres of minPETs below `pet_threshold`.
pub fn build_heatmap(
    min_pets: &[MinPetRecord],
    origin: Point2,
    cell_size: f64,
    ncols: usize,
    nrows: usize,
    pet_threshold: f64,
) -> Result<HeatmapGrid> {
    let mut grid = HeatmapGrid::new(origin, cell_size, ncols, nrows)?;
    for m in min_pets.iter().filter(|m| m.min_pet < pet_threshold) {
        grid.add(m.zone_center);
    }
    Ok(grid)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConflictRow {
    leader_id: i64,
    lagger_id: i64,
    t_leave: f64,
    t_enter: f64,
    pet: f64,
    zone_x: f64,
    zone_y: f64,
    lagger_lane: i64,
    lagger_speed: f64,
    lagger_heading: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MinPetRow {
    leader_id: i64,
    lagger_id: i64,
    min_pet: f64,
    zone_x: f64,
    zone_y: f64,
    time: f64,
}

pub fn write_conflicts<W: Write>(sink: W, records: &[ConflictRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if records.is_empty() {
        w.write_record([
            "leader_id", "lagger_id", "t_leave", "t_enter", "pet", "zone_x", "zone_y", "lagger_lane",
            "lagger_speed", "lagger_heading",
        ])?;
    }
    for r in records {
        w.serialize(ConflictRow {
            leader_id: r.leader_id,
            lagger_id: r.lagger_id,
            t_leave: r.t_leave,
            t_enter: r.t_enter,
            pet: r.pet,
            zone_x: r.zone_center.x,
            zone_y: r.zone_center.y,
            lagger_lane: r.lagger_lane,
            lagger_speed: r.lagger_speed,
            lagger_heading: r.lagger_heading,
        })?;
    }
    w.flush().map_err(|e| Error::io("<conflict sink>", e))?;
    Ok(())
}

pub fn read_conflicts<R: Read>(source: R) -> Result<Vec<ConflictRecord>> {
    let mut r = csv::Reader::from_reader(source);
    r.deserialize::<ConflictRow>()
        .map(|row| {
            let row = row?;
            Ok(ConflictRecord {
                leader_id: row.leader_id,
                lagger_id: row.lagger_id,
                t_leave: row.t_leave,
                t_enter: row.t_enter,
                pet: row.pet,
                zone_center: Point2::new(row.zone_x, row.zone_y),
                lagger_lane: row.lagger_lane,
                lagger_speed: row.lagger_speed,
                lagger_heading: row.lagger_heading,
            })
        })
        .collect()
}

pub fn write_min_pets<W: Write>(sink: W, min_pets: &[MinPetRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if min_pets.is_empty() {
        w.write_record(["leader_id", "lagger_id", "min_pet", "zone_x", "zone_y", "time"])?;
    }
    for m in min_pets {
        w.serialize(MinPetRow {
            leader_id: m.leader_id,
            lagger_id: m.lagger_id,
            min_pet: m.min_pet,
            zone_x: m.zone_center.x,
            zone_y: m.zone_center.y,
            time: m.time,
        })?;
    }
    w.flush().map_err(|e| Error::io("<minpet sink>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Track on the 3 Hz grid from (step, centre x, centre y, heading) tuples, 15x6 ft.
    fn track(id: i64, steps: &[(i64, f64, f64, f64)]) -> VehicleTrack {
        let samples = steps
            .iter()
            .map(|&(k, x, y, h)| {
                let c = Point2::new(x, y);
                TrackSample {
                    time: k as f64 / 3.0,
                    center: c,
                    bbox: OrientedBox::from_pose(c, 15.0, 6.0, h).unwrap(),
                    speed: 20.0,
                    heading: h,
                    lane_id: 1,
                }
            })
            .collect();
        VehicleTrack::new(id, Some(3.0), samples).unwrap()
    }

    #[test]
    fn departure_then_arrival() {
        // Leader parked over the zone through t = 10.0 (step 30), then far away.
        let mut lead: Vec<_> = (24..=30).map(|k| (k, 0.0, 0.0, 90.0)).collect();
        lead.extend((31..=40).map(|k| (k, 500.0 + k as f64, 0.0, 90.0)));
        // Lagger overlaps the zone at t = 11.0 and 11.333 only.
        let mut lag: Vec<_> = (28..33).map(|k| (k, -200.0, 0.0, 90.0)).collect();
        lag.extend([(33, -10.0, 0.0, 90.0), (34, -5.0, 0.0, 90.0)]);
        lag.extend((35..38).map(|k| (k, 300.0, 80.0, 90.0)));
        let d = compute_pet_sequence(&track(1, &lead), &track(2, &lag), 5.0).unwrap();
        let pets: Vec<f64> = d.records.iter().map(|r| r.pet).collect();
        assert_eq!(pets.len(), 2);
        assert!((pets[0] - 1.0).abs() < 1e-9);
        assert!((pets[1] - 4.0 / 3.0).abs() < 1e-9);
        assert_eq!(d.records[0].t_leave, 10.0);
        assert_eq!(d.records[0].zone_center, Point2::new(0.0, 0.0));
    }

    #[test]
    fn late_arrival_beyond_pet_max_is_ignored() {
        let lead = track(1, &[(30, 0.0, 0.0, 90.0), (31, 600.0, 0.0, 90.0)]);
        let lag = track(2, &[(47, -500.0, 0.0, 90.0), (48, 0.0, 0.0, 90.0)]);
        assert!(compute_pet_sequence(&lead, &lag, 5.0).unwrap().records.is_empty());
    }

    #[test]
    fn co_occupancy_is_an_overlap_event() {
        let lead = track(1, &[(0, 0.0, 0.0, 90.0), (1, 0.0, 0.0, 90.0)]);
        let lag = track(2, &[(1, 2.0, 0.0, 90.0)]);
        let d = compute_pet_sequence(&lead, &lag, 5.0).unwrap();
        assert!(d.records.is_empty());
        assert_eq!(d.overlap_events, 1);
    }

    #[test]
    fn mismatched_rates_rejected() {
        let a = track(1, &[(0, 0.0, 0.0, 0.0)]);
        let mut b = track(2, &[(0, 0.0, 0.0, 0.0)]);
        b.rate = Some(30.0);
        assert!(compute_pet_sequence(&a, &b, 5.0).is_err());
        b.rate = None;
        assert!(detect_conflicts(&[a, b], 5.0).is_err());
    }

    #[test]
    fn never_nearby_tracks_do_not_conflict() {
        let a = track(1, &(0..30).map(|k| (k, k as f64 * 10.0, 0.0, 90.0)).collect::<Vec<_>>());
        let b = track(2, &(0..30).map(|k| (k, k as f64 * 10.0, 400.0, 90.0)).collect::<Vec<_>>());
        assert!(detect_conflicts(&[a, b], 5.0).unwrap().records.is_empty());
    }

    #[test]
    fn platoon_pairs() {
        // Three eastbound vehicles, 30 ft/s, 1.5 s headways.
        let mk = |id: i64, delay: i64| {
            let s: Vec<_> = (0..60).map(|k| (k + delay, -200.0 + k as f64 * 10.0, 0.0, 90.0)).collect();
            track(id, &s)
        };
        let d = detect_conflicts(&[mk(1, 0), mk(2, 5), mk(3, 10)], 5.0).unwrap();
        let pairs: BTreeSet<(i64, i64)> = d.records.iter().map(|r| (r.leader_id, r.lagger_id)).collect();
        assert_eq!(pairs, BTreeSet::from([(1, 2), (1, 3), (2, 3)]));
        assert_eq!(d.overlap_events, 0);
    }

    #[test]
    fn broad_phase_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let tracks: Vec<VehicleTrack> = (0..12)
                .map(|id| {
                    let start = rng.random_range(0..40);
                    let (x0, y0) = (rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0));
                    let h: f64 = rng.random_range(0.0..360.0);
                    let v = rng.random_range(0.0..15.0);
                    let steps: Vec<_> = (0..rng.random_range(1..50))
                        .map(|i| {
                            let d = v * i as f64;
                            (start + i, x0 + d * h.to_radians().sin(), y0 + d * h.to_radians().cos(), h)
                        })
                        .collect();
                    track(id, &steps)
                })
                .collect();
            let fast = detect_conflicts(&tracks, 5.0).unwrap();
            let slow = detect_conflicts_with(&tracks, 5.0, BroadPhase::AllPairs).unwrap();
            assert_eq!(fast, slow);
            let tiny = detect_conflicts_with(&tracks, 5.0, BroadPhase::SpatialHash { cell_size: Some(2.0) }).unwrap();
            assert_eq!(tiny, slow);
        }
    }

    #[test]
    fn min_pet_takes_minimum_and_earliest_tie() {
        let mk = |pet: f64, t: f64| ConflictRecord {
            leader_id: 1,
            lagger_id: 2,
            t_leave: t - pet,
            t_enter: t,
            pet,
            zone_center: Point2::new(t, 0.0),
            lagger_lane: 1,
            lagger_speed: 0.0,
            lagger_heading: 0.0,
        };
        let m = min_pets(&[mk(1.333, 5.0), mk(1.0, 4.0)]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].min_pet, 1.0);
        let m = min_pets(&[mk(2.0, 9.0), mk(2.0, 7.0)]);
        assert_eq!(m[0].time, 7.0);
        let single = min_pets(&[mk(0.7, 3.0)]);
        assert_eq!((single[0].min_pet, single[0].time), (0.7, 3.0));
    }

    #[test]
    fn threshold_counting() {
        assert_eq!(threshold_counts(&[0.5, 1.5, 2.5], &[1.0, 2.0, 3.0]).unwrap(), vec![1, 2, 3]);
        assert_eq!(threshold_counts(&[], &[1.0, 2.0]).unwrap(), vec![0, 0]);
        assert!(threshold_counts(&[1.0], &[2.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pets: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..6.0)).collect();
        let got = threshold_counts(&pets, &SUMMARY_THRESHOLDS).unwrap();
        for (t, n) in SUMMARY_THRESHOLDS.iter().zip(got) {
            assert_eq!(n, pets.iter().filter(|&&p| p < *t).count());
        }
    }

    fn min_at(x: f64, y: f64, pet: f64) -> MinPetRecord {
        MinPetRecord {
            leader_id: 0,
            lagger_id: 1,
            min_pet: pet,
            zone_center: Point2::new(x, y),
            time: 0.0,
        }
    }

    #[test]
    fn heatmap_binning() {
        let g = build_heatmap(&[min_at(0.0, 0.0, 1.0)], Point2::default(), 5.0, 4, 3, 5.0).unwrap();
        assert_eq!(g.get(0, 0), 1);
        let g = build_heatmap(&[min_at(1.0, 1.0, 1.0), min_at(4.0, 2.0, 2.0)], Point2::default(), 5.0, 4, 3, 5.0)
            .unwrap();
        assert_eq!(g.get(0, 0), 2);
        assert!(build_heatmap(&[], Point2::default(), 0.0, 1, 1, 5.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<_> = (0..100)
            .map(|_| min_at(rng.random_range(-10.0..60.0), rng.random_range(-10.0..40.0), 1.0))
            .collect();
        let g = build_heatmap(&recs, Point2::default(), 5.0, 10, 6, 5.0).unwrap();
        let inside = recs
            .iter()
            .filter(|m| (0.0..50.0).contains(&m.zone_center.x) && (0.0..30.0).contains(&m.zone_center.y))
            .count() as u64;
        assert_eq!(g.counts.iter().sum::<u64>(), inside);
        assert_eq!(g.counts.iter().sum::<u64>(), 100 - g.overflow);

        let mut text = Vec::new();
        g.write_text(&mut text).unwrap();
        assert_eq!(HeatmapGrid::read_text(std::str::from_utf8(&text).unwrap()).unwrap(), g);
    }

    #[test]
    fn center_square_validation() {
        let t = track(1, &[(0, 0.0, 0.0, 33.0)]);
        assert!(center_square_tracks(std::slice::from_ref(&t), 0.5).is_ok());
        assert!(center_square_tracks(std::slice::from_ref(&t), 3.5).is_err());
        // Half the width, but the square's corners leave a rotated box.
        assert!(center_square_tracks(std::slice::from_ref(&t), 3.0).is_err());
        assert!(center_square_tracks(&[t], 0.0).is_err());
    }

    #[test]
    fn conflicts_csv_round_trip() {
        let lead = track(1, &(0..10).map(|k| (k, k as f64 * 10.0, 0.0, 90.0)).collect::<Vec<_>>());
        let lag = track(2, &(5..15).map(|k| (k, (k - 5) as f64 * 10.0, 0.0, 90.0)).collect::<Vec<_>>());
        let d = detect_conflicts(&[lead, lag], 5.0).unwrap();
        assert!(!d.records.is_empty());
        let mut buf = Vec::new();
        write_conflicts(&mut buf, &d.records).unwrap();
        assert_eq!(read_conflicts(buf.as_slice()).unwrap(), d.records);
        let mut empty = Vec::new();
        write_conflicts(&mut empty, &[]).unwrap();
        assert!(read_conflicts(empty.as_slice()).unwrap().is_empty());
    }
}
