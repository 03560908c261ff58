//! Per-subject pipeline: parse, aggregate, screen, crop, detect.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::detector::{detect, DetectionResult};
use crate::error::Result;
use crate::ingest::{aggregate, parse_series, screen_with, EpochSeries, ScreenReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectStatus {
    Ok,
    ScreenedOut,
    ErrorFlagged,
    Failed,
}

#[derive(Debug, Clone)]
pub struct SubjectRun {
    pub subject_id: String,
    pub screen: ScreenReport,
    /// The cropped 60-second series that detection ran on.
    pub analysed: Option<EpochSeries>,
    pub result: Option<DetectionResult>,
}

impl SubjectRun {
    pub fn status(&self) -> SubjectStatus {
        match &self.result {
            None => SubjectStatus::ScreenedOut,
            Some(r) if r.error_flag => SubjectStatus::ErrorFlagged,
            Some(_) => SubjectStatus::Ok,
        }
    }
}

/// Subject id used for output names: the file stem.
pub fn subject_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".to_string())
}

/// Screens and detects on an already parsed series.
///
/// 30-second input is summed to 60 seconds first; screening and the zero-run
/// rule then apply to the aggregated series.
pub fn run_series(subject_id: &str, series: EpochSeries, cfg: &RunConfig) -> Result<SubjectRun> {
    let series = if series.epoch_seconds() == 30 { aggregate(&series)? } else { series };
    let report = screen_with(&series, cfg.min_wear_minutes, cfg.max_zero_run_minutes);
    let mut run = SubjectRun {
        subject_id: subject_id.to_string(),
        screen: report.clone(),
        analysed: None,
        result: None,
    };
    if !report.passed {
        return Ok(run);
    }
    let wear = report.longest_wear.expect("a passing screen has a wear period");
    let cropped = series.crop_to(&wear)?;
    run.result = Some(detect(&cropped, &cfg.detection)?);
    run.analysed = Some(cropped);
    Ok(run)
}

pub fn run_text(subject_id: &str, text: &str, cfg: &RunConfig) -> Result<SubjectRun> {
    let series = parse_series(text, &cfg.format)?;
    run_series(subject_id, series, cfg)
}

pub fn run_file(path: &Path, cfg: &RunConfig) -> Result<SubjectRun> {
    let text = std::fs::read_to_string(path)?;
    run_text(&subject_id(path), &text, cfg)
}
