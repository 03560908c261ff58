//! Sleep/wake onset detection: cosinor-guided single change-point refinement.
//!
//! The cosinor curve is dichotomized into rough diurnal/nocturnal states. Each
//! rough boundary is then refined by a single change-point search over the
//! stretch between the previous refined change point and the next rough
//! boundary. A second pass repeats the search with the pass-one change points as
//! anchors. The Calinski-Harabasz index of the refined states against the rough
//! cosinor states flags detections that failed to sharpen the partition.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::cosinor::{dichotomize, fit_cosinor, CosinorFit, CosinorParams};
use crate::error::{Error, Result};
use crate::gamma::{find_single_cp, MIN_MLE_SAMPLES};
use crate::ingest::EpochSeries;
use chrono::NaiveDateTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Label {
    #[serde(rename = "SOT")]
    Sot,
    #[serde(rename = "WOT")]
    Wot,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Sot => "SOT",
            Label::Wot => "WOT",
        }
    }

    /// State entered at this transition: 1 = wake, 0 = sleep.
    pub fn state_after(&self) -> u8 {
        match self {
            Label::Sot => 0,
            Label::Wot => 1,
        }
    }

    pub fn other(&self) -> Label {
        match self {
            Label::Sot => Label::Wot,
            Label::Wot => Label::Sot,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "SOT" | "sot" => Ok(Label::Sot),
            "WOT" | "wot" => Ok(Label::Wot),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// Where an event's index came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    CosinorBoundary,
    /// Change-point search in the given refinement pass (1-based).
    CpPass(u32),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::CosinorBoundary => f.write_str("cosinor-boundary"),
            Provenance::CpPass(p) => write!(f, "cp-pass{p}"),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangePointEvent {
    pub index: usize,
    #[serde(serialize_with = "crate::report::serialize_minute")]
    pub wall_time: NaiveDateTime,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionConfig {
    pub dichotomize_q: f64,
    pub lambda: f64,
    pub edge_guard_minutes: usize,
    pub refinement_passes: u32,
    pub ch_delta_threshold: f64,
    pub positivity_offset: f64,
    pub min_margin: usize,
    pub cosinor_init: CosinorParams,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            dichotomize_q: crate::cosinor::DEFAULT_DICHOTOMIZE_Q,
            lambda: crate::gamma::DEFAULT_LAMBDA,
            edge_guard_minutes: 240,
            refinement_passes: 2,
            ch_delta_threshold: 100.0,
            positivity_offset: 0.1,
            min_margin: 1,
            cosinor_init: CosinorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub events: Vec<ChangePointEvent>,
    pub ch_cosinor: f64,
    pub ch_refined: f64,
    pub error_flag: bool,
    pub cosinor: CosinorFit,
    pub rough_boundaries: Vec<usize>,
    /// Change-point indices after each refinement pass.
    pub pass_indices: Vec<Vec<usize>>,
    pub notes: Vec<String>,
    pub config: DetectionConfig,
}

impl DetectionResult {
    pub fn states(&self, n: usize) -> Vec<u8> {
        states_from_events(n, &self.events)
    }
}

/// A transition to refine: its index and which state it enters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub label: Label,
    pub provenance: Provenance,
}

/// One refinement pass over `y`, seeded by `anchors` (ordered, alternating).
///
/// The first transition is searched only when the stretch before the second
/// anchor exceeds `edge_guard_minutes`; the last only when the tail after the
/// last anchor does. Otherwise the anchor is kept as is.
pub fn refine_pass(
    y: &[f64],
    anchors: &[Anchor],
    cfg: &DetectionConfig,
    pass: u32,
    notes: &mut Vec<String>,
) -> Result<Vec<Anchor>> {
    let m = anchors.len();
    if m < 2 {
        return Err(Error::TooFewBoundaries(m));
    }
    let n = y.len();
    let guard = cfg.edge_guard_minutes;
    let min_len = (2 * cfg.min_margin.max(1) + 2).max(MIN_MLE_SAMPLES);
    let mut out: Vec<Anchor> = Vec::with_capacity(m);

    let search = |start: usize, end: usize, anchor: &Anchor, prev: Option<usize>, notes: &mut Vec<String>| -> Anchor {
        let fallback = |why: String, notes: &mut Vec<String>| {
            let index = match prev {
                Some(p) if anchor.index <= p => p + 1,
                _ => anchor.index,
            };
            notes.push(format!("pass {pass}: kept index {index} for {} ({why})", anchor.label));
            Anchor { index, ..*anchor }
        };
        if end <= start || end - start < min_len {
            return fallback(format!("segment [{start}, {end}) too short"), notes);
        }
        match find_single_cp(&y[start..end], cfg.lambda, cfg.min_margin) {
            Ok(r) => Anchor {
                index: start + r.k_hat,
                label: anchor.label,
                provenance: Provenance::CpPass(pass),
            },
            Err(e) => fallback(format!("search failed: {e}"), notes),
        }
    };

    // first transition: search [0, B2) when that prefix is long enough
    let first = if anchors[1].index > guard {
        search(0, anchors[1].index, &anchors[0], None, notes)
    } else {
        anchors[0]
    };
    out.push(first);

    // interior: [previous refined CP, next anchor)
    for i in 1..m - 1 {
        let prev = out[i - 1].index;
        let cp = search(prev, anchors[i + 1].index, &anchors[i], Some(prev), notes);
        out.push(cp);
    }

    // last transition: searched from the previous refined CP to the end when the
    // tail after the last anchor is long enough
    let last = &anchors[m - 1];
    let prev = out[m - 2].index;
    let cp = if n.saturating_sub(last.index) > guard {
        search(prev, n, last, Some(prev), notes)
    } else if last.index > prev {
        *last
    } else {
        Anchor { index: prev + 1, ..*last }
    };
    out.push(cp);

    Ok(out)
}

/// Runs the full detection on a screened 60-second series.
pub fn detect(s: &EpochSeries, cfg: &DetectionConfig) -> Result<DetectionResult> {
    if s.epoch_seconds() != 60 {
        return Err(Error::InvalidArgument(format!(
            "detection needs 60-second epochs, got {}",
            s.epoch_seconds()
        )));
    }
    let y: Vec<f64> = s.counts().iter().map(|c| c + cfg.positivity_offset).collect();
    let n = y.len();

    let fit = fit_cosinor(&y, cfg.cosinor_init)?;
    let rough = dichotomize(&fit, cfg.dichotomize_q)?;
    if rough.boundaries.len() < 2 {
        return Err(Error::TooFewBoundaries(rough.boundaries.len()));
    }

    let mut anchors: Vec<Anchor> = rough
        .boundaries
        .iter()
        .map(|&b| Anchor {
            index: b,
            label: if rough.is_wake_edge(b) { Label::Wot } else { Label::Sot },
            provenance: Provenance::CosinorBoundary,
        })
        .collect();

    let mut notes = Vec::new();
    let mut pass_indices = Vec::new();
    for pass in 1..=cfg.refinement_passes {
        anchors = refine_pass(&y, &anchors, cfg, pass, &mut notes)?;
        pass_indices.push(anchors.iter().map(|a| a.index).collect());
    }

    let events: Vec<ChangePointEvent> = anchors
        .iter()
        .map(|a| ChangePointEvent {
            index: a.index,
            wall_time: s.time_at(a.index),
            label: a.label,
            provenance: a.provenance,
        })
        .collect();

    let refined_states = states_from_events(n, &events);
    let ch_cosinor = ch_index(&y, &rough.binary)?;
    let ch_refined = ch_index(&y, &refined_states)?;
    let error_flag = flag_errors(ch_refined, ch_cosinor, cfg.ch_delta_threshold);

    Ok(DetectionResult {
        events,
        ch_cosinor,
        ch_refined,
        error_flag,
        cosinor: fit,
        rough_boundaries: rough.boundaries,
        pass_indices,
        notes,
        config: cfg.clone(),
    })
}

/// Binary wake(1)/sleep(0) sequence implied by an ordered list of transitions.
///
/// Before the first event the state is the opposite of what that event enters.
/// Each event sets the state from its index onward.
pub fn states_from_events(n: usize, events: &[ChangePointEvent]) -> Vec<u8> {
    let mut states = vec![0u8; n];
    let Some(first) = events.first() else {
        return vec![1; n];
    };
    let mut state = first.label.other().state_after();
    let mut next = events.iter().peekable();
    for (i, s) in states.iter_mut().enumerate() {
        while let Some(e) = next.next_if(|e| e.index <= i) {
            state = e.label.state_after();
        }
        *s = state;
    }
    states
}

/// Calinski-Harabasz index for a two-cluster partition.
///
/// Returns `+∞` when both clusters have zero within-cluster spread but distinct
/// means, and 0 for constant input.
pub fn ch_index(counts: &[f64], states: &[u8]) -> Result<f64> {
    if counts.len() != states.len() {
        return Err(Error::InvalidArgument(format!(
            "{} counts but {} states",
            counts.len(),
            states.len()
        )));
    }
    let mut n_k = [0usize; 2];
    let mut sum_k = [0.0f64; 2];
    for (&c, &s) in counts.iter().zip(states) {
        let k = usize::from(s != 0);
        n_k[k] += 1;
        sum_k[k] += c;
    }
    if n_k[0] == 0 || n_k[1] == 0 {
        return Err(Error::InvalidArgument("both states must be present".into()));
    }
    let n = counts.len() as f64;
    let mean_k = [sum_k[0] / n_k[0] as f64, sum_k[1] / n_k[1] as f64];
    let grand = (sum_k[0] + sum_k[1]) / n;
    let ssb: f64 = (0..2)
        .map(|k| n_k[k] as f64 * (mean_k[k] - grand).powi(2))
        .sum();
    let ssw: f64 = counts
        .iter()
        .zip(states)
        .map(|(&c, &s)| (c - mean_k[usize::from(s != 0)]).powi(2))
        .sum();
    if ssw == 0.0 {
        return Ok(if ssb == 0.0 { 0.0 } else { f64::INFINITY });
    }
    let k = 2.0;
    Ok(ssb / ssw * (n - k) / (k - 1.0))
}

/// True when the refined partition fails to beat the cosinor partition by `threshold`.
pub fn flag_errors(ch_refined: f64, ch_cosinor: f64, threshold: f64) -> bool {
    let gain = ch_refined - ch_cosinor;
    if gain.is_nan() {
        // both infinite: nothing left to improve
        return false;
    }
    gain < threshold
}
