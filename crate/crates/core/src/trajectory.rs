//! Trajectory ingestion and resampling.
//!
//! Input is a comma-separated table with one row per vehicle per frame. Column
//! roles are mapped through [`SchemaConfig`]; footprints come either from four
//! corner coordinate pairs or from a centre, heading and vehicle dimensions.
//! Frame numbers become seconds relative to the first frame in the file.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    /// Seconds from the start of the recording.
    pub time: f64,
    pub center: Point2,
    pub bbox: OrientedBox,
    /// mph
    pub speed: f64,
    /// Degrees clockwise from north in [0, 360).
    pub heading: f64,
    pub lane_id: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub vehicle_id: i64,
    /// Sampling rate in Hz the timestamps sit on, when known.
    pub rate: Option<f64>,
    pub samples: Vec<TrackSample>,
}

impl VehicleTrack {
    /// Builds a track after checking it is non-empty with strictly increasing times.
    pub fn new(vehicle_id: i64, rate: Option<f64>, samples: Vec<TrackSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid(format!("track {vehicle_id} has no samples")));
        }
        if samples.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::invalid(format!(
                "track {vehicle_id} sample times are not strictly increasing"
            )));
        }
        Ok(Self {
            vehicle_id,
            rate,
            samples,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    /// Sample whose timestamp is within `tol` seconds of `t`, if any.
    pub fn sample_near(&self, t: f64, tol: f64) -> Option<&TrackSample> {
        let idx = self.samples.partition_point(|s| s.time < t);
        [idx.checked_sub(1), Some(idx)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.samples.get(i))
            .filter(|s| (s.time - t).abs() <= tol)
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
    }
}

/// Why a row was rejected during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedField,
    NonFinite,
    NegativeSpeed,
    InvalidBox,
    DuplicateFrame,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub vehicles_loaded: usize,
    pub samples_loaded: usize,
    pub rows_rejected: usize,
    pub rejected_by_reason: BTreeMap<RejectReason, usize>,
}

impl IngestReport {
    fn reject(&mut self, reason: RejectReason) {
        self.rows_rejected += 1;
        *self.rejected_by_reason.entry(reason).or_default() += 1;
    }
}

/// How a footprint is recovered from a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FootprintColumns {
    /// Four `(x, y)` column pairs.
    Corners { corners: [(String, String); 4] },
    /// Centre columns plus dimensions, from columns or configured defaults.
    Pose {
        center_x: String,
        center_y: String,
        length: Option<String>,
        width: Option<String>,
        default_length: Option<f64>,
        default_width: Option<f64>,
    },
}

/// Maps column names to roles and sets unit conversions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub frame: String,
    pub vehicle_id: String,
    pub footprint: FootprintColumns,
    pub speed: String,
    pub heading: String,
    pub lane: String,
    pub frame_rate: f64,
    /// Feet per input length unit.
    pub length_scale: f64,
    /// mph per input speed unit.
    pub speed_scale: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

fn corner_columns(fmt: impl Fn(usize, char) -> String) -> [(String, String); 4] {
    [1, 2, 3, 4].map(|i| (fmt(i, 'x'), fmt(i, 'y')))
}

impl SchemaConfig {
    /// The crate's own trajectory table layout.
    pub fn canonical() -> Self {
        Self {
            frame: "frame".into(),
            vehicle_id: "vehicle_id".into(),
            footprint: FootprintColumns::Corners {
                corners: corner_columns(|i, a| format!("corner{i}_{a}")),
            },
            speed: "speed_mph".into(),
            heading: "heading_deg".into(),
            lane: "lane_id".into(),
            frame_rate: 30.0,
            length_scale: 1.0,
            speed_scale: 1.0,
        }
    }

    /// CitySim-style column names (`frameNum`, `carId`, `boundingBox1Xft`, ...).
    pub fn citysim() -> Self {
        Self {
            frame: "frameNum".into(),
            vehicle_id: "carId".into(),
            footprint: FootprintColumns::Corners {
                corners: corner_columns(|i, a| format!("boundingBox{i}{}ft", a.to_ascii_uppercase())),
            },
            speed: "speed".into(),
            heading: "heading".into(),
            lane: "laneId".into(),
            frame_rate: 30.0,
            length_scale: 1.0,
            speed_scale: 1.0,
        }
    }
}

struct ColumnIndex {
    frame: usize,
    vehicle_id: usize,
    footprint: FootprintIndex,
    speed: usize,
    heading: usize,
    lane: usize,
}

enum FootprintIndex {
    Corners([(usize, usize); 4]),
    Pose {
        cx: usize,
        cy: usize,
        length: DimSource,
        width: DimSource,
    },
}

enum DimSource {
    Column(usize),
    Fixed(f64),
}

fn find(headers: &HashMap<&str, usize>, name: &str) -> Result<usize> {
    headers
        .get(name)
        .copied()
        .ok_or_else(|| Error::Schema(format!("missing mandatory column `{name}`")))
}

impl ColumnIndex {
    fn resolve(schema: &SchemaConfig, headers: &csv::StringRecord) -> Result<Self> {
        let map: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let footprint = match &schema.footprint {
            FootprintColumns::Corners { corners } => {
                let mut idx = [(0, 0); 4];
                for (slot, (x, y)) in idx.iter_mut().zip(corners) {
                    *slot = (find(&map, x)?, find(&map, y)?);
                }
                FootprintIndex::Corners(idx)
            }
            FootprintColumns::Pose {
                center_x,
                center_y,
                length,
                width,
                default_length,
                default_width,
            } => {
                let dim = |col: &Option<String>, fallback: Option<f64>, what: &str| -> Result<DimSource> {
                    match (col, fallback) {
                        (Some(c), _) => Ok(DimSource::Column(find(&map, c)?)),
                        (None, Some(v)) if v > 0.0 => Ok(DimSource::Fixed(v)),
                        _ => Err(Error::Schema(format!(
                            "vehicle {what} needs a column or a positive configured default"
                        ))),
                    }
                };
                FootprintIndex::Pose {
                    cx: find(&map, center_x)?,
                    cy: find(&map, center_y)?,
                    length: dim(length, *default_length, "length")?,
                    width: dim(width, *default_width, "width")?,
                }
            }
        };
        Ok(Self {
            frame: find(&map, &schema.frame)?,
            vehicle_id: find(&map, &schema.vehicle_id)?,
            footprint,
            speed: find(&map, &schema.speed)?,
            heading: find(&map, &schema.heading)?,
            lane: find(&map, &schema.lane)?,
        })
    }
}

struct RawRow {
    frame: i64,
    vehicle_id: i64,
    center: Point2,
    bbox: OrientedBox,
    speed: f64,
    heading: f64,
    lane_id: i64,
}

fn field(rec: &csv::StringRecord, i: usize) -> std::result::Result<f64, RejectReason> {
    let v: f64 = rec
        .get(i)
        .map(str::trim)
        .ok_or(RejectReason::MalformedField)?
        .parse()
        .map_err(|_| RejectReason::MalformedField)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RejectReason::NonFinite)
    }
}

fn integer_field(rec: &csv::StringRecord, i: usize) -> std::result::Result<i64, RejectReason> {
    let v = field(rec, i)?;
    if v.fract() != 0.0 || v.abs() > 9.0e15 {
        return Err(RejectReason::MalformedField);
    }
    Ok(v as i64)
}

fn parse_row(
    rec: &csv::StringRecord,
    idx: &ColumnIndex,
    schema: &SchemaConfig,
) -> std::result::Result<RawRow, RejectReason> {
    let frame = integer_field(rec, idx.frame)?;
    let vehicle_id = integer_field(rec, idx.vehicle_id)?;
    let speed = field(rec, idx.speed)? * schema.speed_scale;
    let heading = field(rec, idx.heading)?.rem_euclid(360.0);
    let lane_id = integer_field(rec, idx.lane)?;
    let s = schema.length_scale;
    let (center, bbox) = match &idx.footprint {
        FootprintIndex::Corners(cols) => {
            let mut corners = [Point2::default(); 4];
            for (c, &(xi, yi)) in corners.iter_mut().zip(cols) {
                *c = Point2::new(field(rec, xi)? * s, field(rec, yi)? * s);
            }
            let bbox = OrientedBox::new(corners).map_err(|_| RejectReason::InvalidBox)?;
            (bbox.centroid(), bbox)
        }
        FootprintIndex::Pose {
            cx,
            cy,
            length,
            width,
        } => {
            let center = Point2::new(field(rec, *cx)? * s, field(rec, *cy)? * s);
            let dim = |d: &DimSource| match d {
                DimSource::Column(i) => field(rec, *i).map(|v| v * s),
                DimSource::Fixed(v) => Ok(*v),
            };
            let bbox = OrientedBox::from_pose(center, dim(length)?, dim(width)?, heading)
                .map_err(|_| RejectReason::InvalidBox)?;
            (center, bbox)
        }
    };
    if speed < 0.0 {
        return Err(RejectReason::NegativeSpeed);
    }
    Ok(RawRow {
        frame,
        vehicle_id,
        center,
        bbox,
        speed,
        heading,
        lane_id,
    })
}

/// Reads a trajectory table. Malformed rows are counted in the report, not fatal.
pub fn load_tracks<R: Read>(source: R, schema: &SchemaConfig) -> Result<(Vec<VehicleTrack>, IngestReport)> {
    if !(schema.frame_rate > 0.0) {
        return Err(Error::Config(format!("frame rate must be positive, got {}", schema.frame_rate)));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let idx = ColumnIndex::resolve(schema, &headers)?;

    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        match parse_row(&rec, &idx, schema) {
            Ok(r) => rows.push(r),
            Err(reason) => report.reject(reason),
        }
    }

    let Some(first_frame) = rows.iter().map(|r| r.frame).min() else {
        return Ok((Vec::new(), report));
    };
    let mut by_vehicle: BTreeMap<i64, Vec<RawRow>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }

    let mut tracks = Vec::with_capacity(by_vehicle.len());
    for (vehicle_id, mut rows) in by_vehicle {
        rows.sort_by_key(|r| r.frame);
        let mut samples: Vec<TrackSample> = Vec::with_capacity(rows.len());
        let mut last_frame = None;
        for r in rows {
            if last_frame == Some(r.frame) {
                report.reject(RejectReason::DuplicateFrame);
                continue;
            }
            last_frame = Some(r.frame);
            samples.push(TrackSample {
                time: (r.frame - first_frame) as f64 / schema.frame_rate,
                center: r.center,
                bbox: r.bbox,
                speed: r.speed,
                heading: r.heading,
                lane_id: r.lane_id,
            });
        }
        report.samples_loaded += samples.len();
        tracks.push(VehicleTrack::new(vehicle_id, Some(schema.frame_rate), samples)?);
    }
    report.vehicles_loaded = tracks.len();
    Ok((tracks, report))
}

pub fn load_tracks_from_path(path: &Path, schema: &SchemaConfig) -> Result<(Vec<VehicleTrack>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_tracks(std::io::BufReader::new(file), schema)
}

/// Writes tracks in the canonical schema, frames derived from `frame_rate`.
pub fn write_tracks<W: Write>(sink: W, tracks: &[VehicleTrack], frame_rate: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["frame".to_string(), "vehicle_id".to_string()];
    for i in 1..=4 {
        header.push(format!("corner{i}_x"));
        header.push(format!("corner{i}_y"));
    }
    header.extend(["speed_mph", "heading_deg", "lane_id"].map(String::from));
    w.write_record(&header)?;
    for track in tracks {
        for s in &track.samples {
            let mut rec = vec![
                format!("{}", (s.time * frame_rate).round() as i64),
                track.vehicle_id.to_string(),
            ];
            for c in s.bbox.corners() {
                rec.push(c.x.to_string());
                rec.push(c.y.to_string());
            }
            rec.push(s.speed.to_string());
            rec.push(s.heading.to_string());
            rec.push(s.lane_id.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<trajectory sink>", e))?;
    Ok(())
}

/// Resamples onto the grid `t = k / rate` anchored at the recording origin.
///
/// Each grid instant inside the track's observed interval takes the nearest
/// original sample within half an original frame interval (from the track's
/// known rate, else its smallest sample spacing); instants with no
/// such sample are skipped. Positions are carried over, never interpolated.
pub fn resample_track(track: &VehicleTrack, rate: f64) -> Result<VehicleTrack> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::invalid(format!("resampling rate must be positive, got {rate}")));
    }
    let native = match track.rate {
        Some(r) => 1.0 / r,
        None => track
            .samples
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .fold(f64::INFINITY, f64::min),
    };
    let native = if native.is_finite() { native } else { 0.0 };
    let tol = native / 2.0 + 1e-9;

    let k_start = (track.start_time() * rate - 1e-9).ceil() as i64;
    let k_end = (track.end_time() * rate + 1e-9).floor() as i64;
    let mut samples = Vec::new();
    for k in k_start..=k_end {
        let t = k as f64 / rate;
        if let Some(s) = track.sample_near(t, tol) {
            samples.push(TrackSample { time: t, ..s.clone() });
        }
    }
    if samples.is_empty() {
        // Track shorter than one grid step: keep nothing on the grid.
        return Err(Error::invalid(format!(
            "track {} has no sample near any grid instant at {rate} Hz",
            track.vehicle_id
        )));
    }
    VehicleTrack::new(track.vehicle_id, Some(rate), samples)
}

/// Resamples every track, dropping those that never touch the analysis grid.
pub fn resample_all(tracks: &[VehicleTrack], rate: f64) -> Result<Vec<VehicleTrack>> {
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("resampling rate must be positive, got {rate}")));
    }
    Ok(tracks.iter().filter_map(|t| resample_track(t, rate).ok()).collect())
}
