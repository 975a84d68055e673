//! Command line pipeline: detect, heatmap, dataset, fit, report.
//!
//! Stages talk through files in the output directory. Each stage writes a
//! `<stage>_summary.json` that records the config digest, the digests of the
//! inputs it read and of every file it wrote; `report` re-checks those digests
//! and gathers everything into `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::conflicts::{
    build_heatmap, detect_with_footprint, min_pets, read_conflicts, threshold_counts, write_conflicts,
    write_min_pets, Detection, Footprint, MinPetRecord, DEFAULT_EPSILON, DEFAULT_PET_MAX, DEFAULT_RATE,
    SUMMARY_THRESHOLDS,
};
use crate::error::{Error, Result};
use crate::features::{assemble_observations, write_observations, DatasetBundle, FeatureConfig};
use crate::geometry::Point2;
use crate::rplogit::{fit, FitResult, ModelData, ModelSpec, ObservationTable};
use crate::signals::{parse_signal_plan, SignalPlan};
use crate::trajectory::{load_tracks, resample_all, IngestReport, SchemaConfig, VehicleTrack};

#[derive(Debug, Parser)]
#[command(name = "petsafe", version, about = "PET conflict detection and severity modelling")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find conflicts and write the threshold summary.
    Detect,
    /// Bin minPET locations for the box and centre-point methods.
    Heatmap,
    /// Join conflicts with signal state into the five model datasets.
    Dataset {
        #[arg(long)]
        conflicts: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Fit the model to each dataset.
    Fit {
        /// Fit one bundle only (yellow, all_red, red_clearance, red, green).
        #[arg(long)]
        bundle: Option<String>,
    },
    /// Write the run manifest.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Bbox,
    Center,
}

/// Either a named preset (`canonical`, `citysim`) or a full column mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    Preset(String),
    Custom(Box<SchemaConfig>),
}

impl Default for SchemaChoice {
    fn default() -> Self {
        SchemaChoice::Preset("canonical".into())
    }
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<SchemaConfig> {
        match self {
            SchemaChoice::Preset(p) if p == "canonical" => Ok(SchemaConfig::canonical()),
            SchemaChoice::Preset(p) if p == "citysim" => Ok(SchemaConfig::citysim()),
            SchemaChoice::Preset(p) => Err(Error::Config(format!(
                "unknown schema preset `{p}` (expected canonical or citysim)"
            ))),
            SchemaChoice::Custom(s) => Ok((**s).clone()),
        }
    }
}

/// A model given inline or as a path to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    #[serde(default = "default_cell")]
    pub cell_size: f64,
    /// Only minPETs below this are binned.
    #[serde(default = "default_pet_max")]
    pub threshold: f64,
    /// Grid extent; defaults to the bounding box of the zone centres.
    #[serde(default)]
    pub origin: Option<Point2>,
    #[serde(default)]
    pub ncols: Option<usize>,
    #[serde(default)]
    pub nrows: Option<usize>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            cell_size: default_cell(),
            threshold: default_pet_max(),
            origin: None,
            ncols: None,
            nrows: None,
        }
    }
}

fn default_cell() -> f64 {
    5.0
}
fn default_rate() -> f64 {
    DEFAULT_RATE
}
fn default_pet_max() -> f64 {
    DEFAULT_PET_MAX
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Everything a run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trajectories: PathBuf,
    #[serde(default)]
    pub schema: SchemaChoice,
    #[serde(default)]
    pub signal_plan: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_pet_max")]
    pub pet_max: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("rate", self.rate)?;
        positive("pet_max", self.pet_max)?;
        positive("epsilon", self.epsilon)?;
        positive("heatmap.cell_size", self.heatmap.cell_size)?;
        positive("heatmap.threshold", self.heatmap.threshold)?;
        self.schema.resolve()?;
        Ok(())
    }

    /// Digest of the settings that shape results; the output directory is
    /// left out so the same analysis written elsewhere has the same digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loaded configuration plus where it came from.
pub struct Context {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn load(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config FILE is required".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = RunConfig::from_json(&text)?;
        if let Some(seed) = cli.seed {
            config.seed = Some(seed);
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = match &cli.out {
            Some(o) => o.clone(),
            None => base_dir.join(&config.output_dir),
        };
        Ok(Self {
            config,
            base_dir,
            out_dir,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn tracks(&self, override_path: Option<&Path>) -> Result<(Vec<VehicleTrack>, IngestReport, String)> {
        let path = override_path.map_or_else(|| self.resolve(&self.config.trajectories), Path::to_path_buf);
        let bytes = read_bytes(&path)?;
        let schema = self.config.schema.resolve()?;
        let (tracks, report) = load_tracks(bytes.as_slice(), &schema)?;
        Ok((resample_all(&tracks, self.config.rate)?, report, sha256_hex(&bytes)))
    }

    fn plan(&self, override_path: Option<&Path>) -> Result<(SignalPlan, String)> {
        let path = match override_path {
            Some(p) => p.to_path_buf(),
            None => self.resolve(
                self.config
                    .signal_plan
                    .as_ref()
                    .ok_or_else(|| Error::Config("signal_plan is not configured".into()))?,
            ),
        };
        let bytes = read_bytes(&path)?;
        Ok((parse_signal_plan(bytes.as_slice())?, sha256_hex(&bytes)))
    }

    fn model(&self) -> Result<ModelSpec> {
        let mut spec = match &self.config.model {
            None => return Err(Error::Config("model is not configured".into())),
            Some(ModelSource::Inline(m)) => m.clone(),
            Some(ModelSource::Path(p)) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read model file {}: {e}", path.display())))?;
                ModelSpec::from_json(&text)?
            }
        };
        spec.validate()?;
        if let Some(seed) = self.config.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }
}

/// What a stage read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub config_digest: String,
    /// Input name to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to sha256.
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

struct StageWriter<'a> {
    ctx: &'a Context,
    summary: StageSummary,
}

impl<'a> StageWriter<'a> {
    fn new(ctx: &'a Context, stage: &str) -> Result<Self> {
        std::fs::create_dir_all(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;
        Ok(Self {
            ctx,
            summary: StageSummary {
                stage: stage.to_string(),
                config_digest: ctx.config.digest(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                details: Value::Null,
            },
        })
    }

    fn input(&mut self, name: &str, digest: String) {
        self.summary.inputs.insert(name.to_string(), digest);
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.ctx.out(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.summary.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(mut self, details: Value) -> Result<StageSummary> {
        self.summary.details = details;
        let name = format!("{}_summary.json", self.summary.stage);
        let path = self.ctx.out(&name);
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.summary)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn counts_for(det: &Detection, mins: &[MinPetRecord]) -> Result<(Vec<usize>, Vec<usize>)> {
    let pets: Vec<f64> = det.records.iter().map(|r| r.pet).collect();
    let min: Vec<f64> = mins.iter().map(|m| m.min_pet).collect();
    Ok((
        threshold_counts(&pets, &SUMMARY_THRESHOLDS)?,
        threshold_counts(&min, &SUMMARY_THRESHOLDS)?,
    ))
}

/// Threshold table: PET conflicts and minPETs below each whole-second cutoff.
pub fn threshold_table(records: &[usize], min_pets: &[usize]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>14} {:>12}", "PET below", "PET conflicts", "minPETs");
    for ((t, r), m) in SUMMARY_THRESHOLDS.iter().zip(records).zip(min_pets) {
        let _ = writeln!(s, "{:<12} {:>14} {:>12}", format!("{t} s"), r, m);
    }
    s
}

fn footprint(cfg: &RunConfig, method: Method) -> Footprint {
    match method {
        Method::Bbox => Footprint::BoundingBox,
        Method::Center => Footprint::CenterSquare { epsilon: cfg.epsilon },
    }
}

pub fn cmd_detect(ctx: &Context) -> Result<StageSummary> {
    let cfg = &ctx.config;
    let (tracks, ingest, traj_digest) = ctx.tracks(None)?;
    let det = detect_with_footprint(&tracks, cfg.pet_max, footprint(cfg, cfg.method))?;
    let mins = min_pets(&det.records);
    let (rec_counts, min_counts) = counts_for(&det, &mins)?;

    let mut w = StageWriter::new(ctx, "detect")?;
    w.input("trajectories", traj_digest);
    w.write("conflicts.csv", &csv_bytes(|b| write_conflicts(b, &det.records))?)?;
    w.write("min_pet.csv", &csv_bytes(|b| write_min_pets(b, &mins))?)?;
    let table = threshold_table(&rec_counts, &min_counts);
    print!("{table}");
    log::info!(
        "{} vehicles, {} conflict records, {} overlap events",
        tracks.len(),
        det.records.len(),
        det.overlap_events
    );
    w.finish(json!({
        "method": cfg.method,
        "rate": cfg.rate,
        "pet_max": cfg.pet_max,
        "ingest": ingest,
        "vehicles": tracks.len(),
        "samples": tracks.iter().map(|t| t.samples.len()).sum::<usize>(),
        "records": det.records.len(),
        "pairs": mins.len(),
        "overlap_events": det.overlap_events,
        "thresholds": SUMMARY_THRESHOLDS,
        "record_counts": rec_counts,
        "min_pet_counts": min_counts,
    }))
}

fn grid_extent(cfg: &HeatmapConfig, mins: &[&MinPetRecord]) -> (Point2, usize, usize) {
    let cell = cfg.cell_size;
    let (lo, hi) = mins.iter().fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), m| {
            (
                Point2::new(lo.x.min(m.zone_center.x), lo.y.min(m.zone_center.y)),
                Point2::new(hi.x.max(m.zone_center.x), hi.y.max(m.zone_center.y)),
            )
        },
    );
    let origin = cfg.origin.unwrap_or(if lo.x.is_finite() {
        Point2::new((lo.x / cell).floor() * cell, (lo.y / cell).floor() * cell)
    } else {
        Point2::new(0.0, 0.0)
    });
    let span = |a: f64, b: f64| if b.is_finite() { ((b - a) / cell).floor() as usize + 1 } else { 1 };
    (
        origin,
        cfg.ncols.unwrap_or_else(|| span(origin.x, hi.x)),
        cfg.nrows.unwrap_or_else(|| span(origin.y, hi.y)),
    )
}

pub fn cmd_heatmap(ctx: &Context) -> Result<StageSummary> {
    let cfg = &ctx.config;
    let (tracks, _, traj_digest) = ctx.tracks(None)?;
    let bbox = detect_with_footprint(&tracks, cfg.pet_max, footprint(cfg, Method::Bbox))?;
    let centre = detect_with_footprint(&tracks, cfg.pet_max, footprint(cfg, Method::Center))?;
    let (bbox_mins, centre_mins) = (min_pets(&bbox.records), min_pets(&centre.records));
    let all: Vec<&MinPetRecord> = bbox_mins.iter().chain(&centre_mins).collect();
    let (origin, ncols, nrows) = grid_extent(&cfg.heatmap, &all);

    let mut w = StageWriter::new(ctx, "heatmap")?;
    w.input("trajectories", traj_digest);
    let mut per_method = BTreeMap::new();
    let mut counts = Vec::new();
    for (name, det, mins) in [("bbox", &bbox, &bbox_mins), ("center", &centre, &centre_mins)] {
        let grid = build_heatmap(mins, origin, cfg.heatmap.cell_size, ncols, nrows, cfg.heatmap.threshold)?;
        let mut text = Vec::new();
        grid.write_text(&mut text).map_err(|e| Error::io(ctx.out("heatmap"), e))?;
        w.write(&format!("heatmap_{name}.txt"), &text)?;
        let (r, m) = counts_for(det, mins)?;
        per_method.insert(
            name,
            json!({"record_counts": r, "min_pet_counts": m, "binned": grid.total(), "overflow": grid.overflow}),
        );
        counts.push((r, m));
    }
    let dominates = counts[0].0.iter().zip(&counts[1].0).all(|(b, c)| b >= c)
        && counts[0].1.iter().zip(&counts[1].1).all(|(b, c)| b >= c);
    if !dominates {
        log::warn!("centre-point counts exceed bounding-box counts at some threshold");
    }
    println!("method   {:>30} {:>30}", "PET conflicts by threshold", "minPETs by threshold");
    for (name, (r, m)) in ["bbox", "center"].iter().zip(&counts) {
        println!("{name:<8} {:>30} {:>30}", format!("{r:?}"), format!("{m:?}"));
    }
    w.finish(json!({
        "cell_size": cfg.heatmap.cell_size,
        "threshold": cfg.heatmap.threshold,
        "origin": origin,
        "ncols": ncols,
        "nrows": nrows,
        "epsilon": cfg.epsilon,
        "thresholds": SUMMARY_THRESHOLDS,
        "methods": per_method,
        "bbox_dominates": dominates,
    }))
}

pub fn cmd_dataset(
    ctx: &Context,
    conflicts: Option<&Path>,
    plan: Option<&Path>,
    trajectories: Option<&Path>,
) -> Result<StageSummary> {
    let features = ctx
        .config
        .features
        .as_ref()
        .ok_or_else(|| Error::Config("features section is not configured".into()))?;
    let conflicts_path = conflicts.map_or_else(|| ctx.out("conflicts.csv"), Path::to_path_buf);
    let conflict_bytes = read_bytes(&conflicts_path)?;
    let records = read_conflicts(conflict_bytes.as_slice())?;
    let (plan, plan_digest) = ctx.plan(plan)?;
    let (tracks, _, traj_digest) = ctx.tracks(trajectories)?;
    let assembly = assemble_observations(&records, &plan, &tracks, features)?;

    let mut w = StageWriter::new(ctx, "dataset")?;
    w.input("trajectories", traj_digest);
    w.input("signal_plan", plan_digest);
    w.input("conflicts", sha256_hex(&conflict_bytes));
    let mut rows = BTreeMap::new();
    for state in DatasetBundle::ORDER {
        let data = assembly.bundle.get(state);
        w.write(
            &format!("dataset_{}.csv", state.label()),
            &csv_bytes(|b| write_observations(b, data))?,
        )?;
        rows.insert(state.label(), data.len());
    }
    log::info!("{} rows assembled, {:?} rejected", assembly.bundle.len(), assembly.rejected);
    w.finish(json!({
        "rows": rows,
        "rejected": assembly.rejected,
        "features": features,
    }))
}

fn bundle_names(only: Option<&str>) -> Result<Vec<&'static str>> {
    let all: Vec<&'static str> = DatasetBundle::ORDER.iter().map(|s| s.label()).collect();
    match only {
        None => Ok(all),
        Some(b) => all
            .iter()
            .find(|n| **n == b)
            .map(|n| vec![*n])
            .ok_or_else(|| Error::Config(format!("unknown bundle `{b}`; expected one of {all:?}"))),
    }
}

pub fn cmd_fit(ctx: &Context, only: Option<&str>) -> Result<StageSummary> {
    let spec = ctx.model()?;
    let mut w = StageWriter::new(ctx, "fit")?;
    w.input("model", sha256_hex(serde_json::to_string(&spec)?.as_bytes()));
    let mut status = BTreeMap::new();
    for name in bundle_names(only)? {
        let path = ctx.out(&format!("dataset_{name}.csv"));
        let bytes = read_bytes(&path)?;
        w.input(&format!("dataset_{name}"), sha256_hex(&bytes));
        let table = ObservationTable::read(bytes.as_slice())?;
        let outcome = ModelData::from_table(&table, &spec).and_then(|d| fit(&d, &spec));
        match outcome {
            Ok(r) => {
                let mut text = r.to_json()?;
                text.push('\n');
                w.write(&format!("fit_{name}.json"), text.as_bytes())?;
                let report = r.report_text();
                println!("== {name} ==\n{report}");
                w.write(&format!("fit_{name}.txt"), report.as_bytes())?;
                status.insert(
                    name,
                    json!({
                        "status": "fitted",
                        "n_observations": r.n_observations,
                        "log_likelihood": r.log_likelihood,
                        "converged": r.convergence.converged,
                    }),
                );
            }
            // A bundle with nothing to estimate is a result, not a failure.
            Err(e @ (Error::InvalidInput(_) | Error::Range(_))) => {
                log::warn!("{name}: not fitted: {e}");
                status.insert(name, json!({"status": "skipped", "reason": e.to_string()}));
            }
            Err(e) => return Err(e),
        }
    }
    w.finish(json!({"model": spec, "bundles": status}))
}

pub const STAGES: [&str; 4] = ["detect", "heatmap", "dataset", "fit"];
pub const MANIFEST_FORMAT: &str = "petsafe-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestMismatch {
    pub file: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub generated_at: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, Option<StageSummary>>,
    pub fits: BTreeMap<String, Option<FitResult>>,
    pub missing: Vec<String>,
    pub digest_mismatches: Vec<DigestMismatch>,
    pub stale_stages: Vec<String>,
    pub complete: bool,
}

pub fn build_manifest(ctx: &Context) -> Result<Manifest> {
    let cfg = &ctx.config;
    let digest = cfg.digest();
    let mut inputs = BTreeMap::new();
    let mut missing = Vec::new();
    let traj = ctx.resolve(&cfg.trajectories);
    match file_digest(&traj) {
        Ok(d) => {
            inputs.insert("trajectories".to_string(), d);
        }
        Err(_) => missing.push(traj.display().to_string()),
    }
    if let Some(p) = &cfg.signal_plan {
        let p = ctx.resolve(p);
        match file_digest(&p) {
            Ok(d) => {
                inputs.insert("signal_plan".to_string(), d);
            }
            Err(_) => missing.push(p.display().to_string()),
        }
    }

    let mut stages = BTreeMap::new();
    let mut mismatches = Vec::new();
    let mut stale = Vec::new();
    for stage in STAGES {
        let name = format!("{stage}_summary.json");
        let summary: Option<StageSummary> = match std::fs::read_to_string(ctx.out(&name)) {
            Ok(text) => Some(serde_json::from_str(&text)?),
            Err(_) => {
                missing.push(name);
                None
            }
        };
        if let Some(s) = &summary {
            if s.config_digest != digest {
                stale.push(stage.to_string());
            }
            for (k, v) in &s.inputs {
                if let Some(now) = inputs.get(k) {
                    if now != v {
                        stale.push(format!("{stage}:{k}"));
                    }
                }
            }
            for (file, expected) in &s.outputs {
                match file_digest(&ctx.out(file)) {
                    Ok(actual) if &actual == expected => {}
                    Ok(actual) => mismatches.push(DigestMismatch {
                        file: file.clone(),
                        expected: expected.clone(),
                        actual,
                    }),
                    Err(_) => missing.push(file.clone()),
                }
            }
        }
        stages.insert(stage.to_string(), summary);
    }

    // Only fits the last fit stage vouches for; older files are ignored.
    let fitted: Vec<String> = stages
        .get("fit")
        .and_then(Option::as_ref)
        .map(|s| s.outputs.keys().cloned().collect())
        .unwrap_or_default();
    let mut fits = BTreeMap::new();
    for name in bundle_names(None)? {
        let file = format!("fit_{name}.json");
        let fit = match std::fs::read_to_string(ctx.out(&file)) {
            Ok(text) if fitted.contains(&file) => Some(FitResult::from_json(&text)?),
            _ => None,
        };
        fits.insert(name.to_string(), fit);
    }

    let complete = missing.is_empty() && mismatches.is_empty() && stale.is_empty();
    Ok(Manifest {
        format: MANIFEST_FORMAT.to_string(),
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config_digest: digest,
        config: cfg.clone(),
        inputs,
        stages,
        fits,
        missing,
        digest_mismatches: mismatches,
        stale_stages: stale,
        complete,
    })
}

pub fn cmd_report(ctx: &Context) -> Result<Manifest> {
    let manifest = build_manifest(ctx)?;
    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;
    let path = ctx.out("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    if !manifest.complete {
        return Err(Error::invalid(format!(
            "manifest incomplete: missing {:?}, digest mismatches {:?}, stale {:?}",
            manifest.missing,
            manifest.digest_mismatches.iter().map(|m| &m.file).collect::<Vec<_>>(),
            manifest.stale_stages
        )));
    }
    println!("manifest written to {}", path.display());
    Ok(manifest)
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::load(cli)?;
    match &cli.command {
        Command::Detect => cmd_detect(&ctx).map(drop),
        Command::Heatmap => cmd_heatmap(&ctx).map(drop),
        Command::Dataset {
            conflicts,
            plan,
            trajectories,
        } => cmd_dataset(&ctx, conflicts.as_deref(), plan.as_deref(), trajectories.as_deref()).map(drop),
        Command::Fit { bundle } => cmd_fit(&ctx, bundle.as_deref()).map(drop),
        Command::Report => cmd_report(&ctx).map(drop),
    }
}

/// Parses arguments, runs the command in a pool of the requested size and
/// returns the process exit status.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 4;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
