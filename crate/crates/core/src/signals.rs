//! Signal plans and per-instant countdown queries.
//!
//! A plan is a per-phase timeline of half-open intervals `[start, end)`.
//! Inside the library an inactive interval type is `None`; the `-1`
//! sentinel only appears when values are exported.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exported value for an interval type that is not active.
pub const INACTIVE_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseState {
    Green,
    Yellow,
    RedClearance,
    AllRed,
    Red,
}

impl PhaseState {
    pub const ALL: [PhaseState; 5] = [
        PhaseState::Green,
        PhaseState::Yellow,
        PhaseState::RedClearance,
        PhaseState::AllRed,
        PhaseState::Red,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PhaseState::Green => "green",
            PhaseState::Yellow => "yellow",
            PhaseState::RedClearance => "red_clearance",
            PhaseState::AllRed => "all_red",
            PhaseState::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub state: PhaseState,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PhaseTimeline {
    phase: u8,
    intervals: Vec<PhaseInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_rate_reference: Option<f64>,
    phases: Vec<PhaseTimeline>,
}

/// Validated, immutable signal plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPlan {
    frame_rate_reference: Option<f64>,
    phases: BTreeMap<u8, Vec<PhaseInterval>>,
}

impl SignalPlan {
    /// Checks phase numbers, interval ordering and contiguity.
    pub fn new(frame_rate_reference: Option<f64>, phases: BTreeMap<u8, Vec<PhaseInterval>>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Schema("signal plan has no phases".into()));
        }
        for (&phase, intervals) in &phases {
            if !(1..=8).contains(&phase) {
                return Err(Error::Schema(format!("phase {phase} is outside 1..8")));
            }
            if intervals.is_empty() {
                return Err(Error::Schema(format!("phase {phase} has no intervals")));
            }
            for iv in intervals {
                if !(iv.start.is_finite() && iv.end.is_finite() && iv.start < iv.end) {
                    return Err(Error::Schema(format!(
                        "phase {phase}: interval {} [{}, {}) is empty or not finite",
                        iv.state.label(),
                        iv.start,
                        iv.end
                    )));
                }
            }
            for w in intervals.windows(2) {
                let (prev, next) = (w[0], w[1]);
                if next.start < prev.end {
                    return Err(Error::Schema(format!(
                        "phase {phase}: interval {} [{}, {}) overlaps {} [{}, {})",
                        next.state.label(),
                        next.start,
                        next.end,
                        prev.state.label(),
                        prev.start,
                        prev.end
                    )));
                }
                if next.start > prev.end {
                    return Err(Error::Schema(format!(
                        "phase {phase}: gap between {} ending at {} and {} starting at {}",
                        prev.state.label(),
                        prev.end,
                        next.state.label(),
                        next.start
                    )));
                }
            }
        }
        let plan = Self {
            frame_rate_reference,
            phases,
        };
        let (lo, hi) = plan.horizon();
        if !(lo < hi) {
            return Err(Error::Schema(format!(
                "phase timelines share no common horizon ({lo} .. {hi})"
            )));
        }
        Ok(plan)
    }

    pub fn phases_present(&self) -> BTreeSet<u8> {
        self.phases.keys().copied().collect()
    }

    pub fn intervals(&self, phase: u8) -> Option<&[PhaseInterval]> {
        self.phases.get(&phase).map(Vec::as_slice)
    }

    pub fn frame_rate_reference(&self) -> Option<f64> {
        self.frame_rate_reference
    }

    /// Half-open span `[start, end)` in which every present phase has a state.
    pub fn horizon(&self) -> (f64, f64) {
        let start = self.phases.values().map(|v| v[0].start).fold(f64::NEG_INFINITY, f64::max);
        let end = self.phases.values().map(|v| v[v.len() - 1].end).fold(f64::INFINITY, f64::min);
        (start, end)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PlanDocument {
            frame_rate_reference: self.frame_rate_reference,
            phases: self
                .phases
                .iter()
                .map(|(&phase, intervals)| PhaseTimeline {
                    phase,
                    intervals: intervals.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Reads the JSON plan document and validates it.
pub fn parse_signal_plan<R: Read>(source: R) -> Result<SignalPlan> {
    let doc: PlanDocument = serde_json::from_reader(source).map_err(|e| {
        if e.is_io() {
            Error::io("<signal plan>", e.into())
        } else {
            Error::Parse(format!("signal plan: {e}"))
        }
    })?;
    let mut phases = BTreeMap::new();
    for tl in doc.phases {
        if phases.insert(tl.phase, tl.intervals).is_some() {
            return Err(Error::Schema(format!("phase {} listed more than once", tl.phase)));
        }
    }
    SignalPlan::new(doc.frame_rate_reference, phases)
}

pub fn parse_signal_plan_str(text: &str) -> Result<SignalPlan> {
    parse_signal_plan(text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatus {
    pub state: PhaseState,
    /// Seconds left in the active interval.
    pub remaining: f64,
}

/// Countdown per interval type; `None` when that type is not active.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Countdowns {
    pub green: Option<f64>,
    pub yellow: Option<f64>,
    pub red_clearance: Option<f64>,
    pub all_red: Option<f64>,
    pub red: Option<f64>,
}

impl Countdowns {
    pub fn get(&self, state: PhaseState) -> Option<f64> {
        match state {
            PhaseState::Green => self.green,
            PhaseState::Yellow => self.yellow,
            PhaseState::RedClearance => self.red_clearance,
            PhaseState::AllRed => self.all_red,
            PhaseState::Red => self.red,
        }
    }

    fn slot(&mut self, state: PhaseState) -> &mut Option<f64> {
        match state {
            PhaseState::Green => &mut self.green,
            PhaseState::Yellow => &mut self.yellow,
            PhaseState::RedClearance => &mut self.red_clearance,
            PhaseState::AllRed => &mut self.all_red,
            PhaseState::Red => &mut self.red,
        }
    }

    /// Values in [`PhaseState::ALL`] order with inactive types as `-1`.
    pub fn with_sentinels(&self) -> [f64; 5] {
        PhaseState::ALL.map(|s| self.get(s).unwrap_or(INACTIVE_SENTINEL))
    }
}

impl From<PhaseStatus> for Countdowns {
    fn from(status: PhaseStatus) -> Self {
        let mut c = Countdowns::default();
        *c.slot(status.state) = Some(status.remaining);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSnapshot {
    pub time: f64,
    pub phases: BTreeMap<u8, PhaseStatus>,
}

impl SignalSnapshot {
    pub fn status(&self, phase: u8) -> Option<PhaseStatus> {
        self.phases.get(&phase).copied()
    }

    pub fn countdowns(&self, phase: u8) -> Option<Countdowns> {
        self.status(phase).map(Countdowns::from)
    }
}

/// State and time remaining of every phase at `t`.
pub fn snapshot_at(plan: &SignalPlan, t: f64) -> Result<SignalSnapshot> {
    let (lo, hi) = plan.horizon();
    if !(t >= lo && t < hi) {
        return Err(Error::Range(format!("time {t} outside the plan horizon [{lo}, {hi})")));
    }
    let phases = plan
        .phases
        .iter()
        .map(|(&phase, intervals)| {
            let i = intervals.partition_point(|iv| iv.end <= t);
            let iv = intervals[i];
            debug_assert!(iv.start <= t && t < iv.end);
            (
                phase,
                PhaseStatus {
                    state: iv.state,
                    remaining: iv.end - t,
                },
            )
        })
        .collect();
    Ok(SignalSnapshot { time: t, phases })
}

/// Which states count as a phase being "active" for indicator flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseActivity {
    pub active_states: BTreeSet<PhaseState>,
}

impl Default for PhaseActivity {
    /// Serving or clearing traffic: everything except red.
    fn default() -> Self {
        Self {
            active_states: [
                PhaseState::Green,
                PhaseState::Yellow,
                PhaseState::RedClearance,
                PhaseState::AllRed,
            ]
            .into_iter()
            .collect(),
        }
    }
}

/// Eight 0/1 flags, index 0 for phase 1. Phases absent from the plan are 0.
pub fn active_phase_indicators(snapshot: &SignalSnapshot, activity: &PhaseActivity) -> [u8; 8] {
    let mut flags = [0u8; 8];
    for (&phase, status) in &snapshot.phases {
        if (1..=8).contains(&phase) && activity.active_states.contains(&status.state) {
            flags[phase as usize - 1] = 1;
        }
    }
    flags
}
