//! Output artifacts: events and pairs CSV, diagnostics JSON, SVG plots.

use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Serialize, Serializer};

use crate::cosinor::CosinorParams;
use crate::detector::{ChangePointEvent, DetectionConfig, DetectionResult, Label};
use crate::error::{Error, Result};
use crate::ingest::{parse_timestamp, EpochSeries, ScreenReport, WearPeriod};
use crate::validate::{AgreementReport, TimedEvent, ValidationPair};

pub fn format_minute(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M").to_string()
}

pub fn serialize_minute<S: Serializer>(t: &NaiveDateTime, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_minute(*t))
}

/// Writes `subject_id,wall_time,label,index,provenance`.
pub fn write_events_csv<W: Write>(subject_id: &str, events: &[ChangePointEvent], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject_id", "wall_time", "label", "index", "provenance"])?;
    for e in events {
        out.write_record([
            subject_id.to_string(),
            format_minute(e.wall_time),
            e.label.to_string(),
            e.index.to_string(),
            e.provenance.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Events file as written by [`write_events_csv`]; returns the subject id of the first row.
pub fn read_events_csv(text: &str) -> Result<(Option<String>, Vec<TimedEvent>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (time_i, label_i) = (col("wall_time")?, col("label")?);
    let subject_i = col("subject_id").ok();
    let mut subject = None;
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("");
        let time = parse_timestamp(get(time_i)).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad wall_time `{}`", get(time_i)),
        })?;
        let label: Label = get(label_i).parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad label `{}`", get(label_i)),
        })?;
        if subject.is_none() {
            subject = subject_i.map(|i| get(i).to_string());
        }
        events.push(TimedEvent { time, label });
    }
    Ok((subject, events))
}

/// Marker times from a ground-truth file (`is_marker = 1` rows).
pub fn read_truth_markers(text: &str) -> Result<Vec<NaiveDateTime>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (time_i, flag_i) = (col("wall_time")?, col("is_marker")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.get(flag_i).unwrap_or("0") == "1" {
            let raw = record.get(time_i).unwrap_or("");
            out.push(parse_timestamp(raw).ok_or_else(|| Error::Parse {
                line,
                message: format!("bad wall_time `{raw}`"),
            })?);
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_pairs_csv<W: Write>(pairs: &[ValidationPair], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in pairs {
        out.serialize(p)?;
    }
    if pairs.is_empty() {
        out.write_record(["subject_id", "day_index", "label", "estimated_min", "marker_min", "diff"])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CosinorDiagnostics {
    pub params: CosinorParams,
    /// Acrophase as minutes after midnight.
    pub acrophase_clock_minutes: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Per-subject diagnostics JSON. Contains no timings so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub subject_id: String,
    pub screen: ScreenReport,
    pub wear_period: Option<WearPeriod>,
    #[serde(serialize_with = "serialize_opt_minute")]
    pub analysis_start: Option<NaiveDateTime>,
    pub cosinor: Option<CosinorDiagnostics>,
    #[serde(serialize_with = "serialize_ch")]
    pub ch_cosinor: Option<f64>,
    #[serde(serialize_with = "serialize_ch")]
    pub ch_refined: Option<f64>,
    pub error_flag: Option<bool>,
    pub n_events: usize,
    pub rough_boundaries: Vec<usize>,
    pub notes: Vec<String>,
    pub config: DetectionConfig,
}

fn serialize_opt_minute<S: Serializer>(t: &Option<NaiveDateTime>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match t {
        Some(t) => serialize_minute(t, s),
        None => s.serialize_none(),
    }
}

// JSON has no infinity; the perfect-separation sentinel is written as the string "inf"
fn serialize_ch<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

impl Diagnostics {
    pub fn new(
        subject_id: &str,
        screen: &ScreenReport,
        analysed: Option<&EpochSeries>,
        result: Option<&DetectionResult>,
        config: &DetectionConfig,
    ) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            screen: screen.clone(),
            wear_period: screen.longest_wear.filter(|_| screen.passed),
            analysis_start: analysed.map(|s| s.start_time()),
            cosinor: result.zip(analysed).map(|(r, s)| CosinorDiagnostics {
                params: r.cosinor.params,
                acrophase_clock_minutes: r.cosinor.params.acrophase_clock_minutes(s.start_time()),
                rss: r.cosinor.rss,
                converged: r.cosinor.converged,
                iterations: r.cosinor.iterations,
            }),
            ch_cosinor: result.map(|r| r.ch_cosinor),
            ch_refined: result.map(|r| r.ch_refined),
            error_flag: result.map(|r| r.error_flag),
            n_events: result.map_or(0, |r| r.events.len()),
            rough_boundaries: result.map(|r| r.rough_boundaries.clone()).unwrap_or_default(),
            notes: result.map(|r| r.notes.clone()).unwrap_or_default(),
            config: config.clone(),
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Agreement JSON: overall and per-label Bland-Altman plus optional variance tables.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementSummary {
    pub n_events: usize,
    pub n_markers: usize,
    pub n_pairs: usize,
    pub window_minutes: i64,
    pub agreement: Option<AgreementReport>,
    pub variance_sot: Option<crate::validate::VarianceSummary>,
    pub variance_wot: Option<crate::validate::VarianceSummary>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Counts trace with shaded sleep spans and event ticks.
pub fn overlay_svg(title: &str, counts: &[f64], states: &[u8], events: &[ChangePointEvent]) -> String {
    const W: f64 = 1200.0;
    const H: f64 = 300.0;
    const PAD: f64 = 30.0;
    let n = counts.len().max(1);
    let max = counts.iter().copied().fold(0.0f64, f64::max).max(1e-9);
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / max;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="18" font-size="13" font-family="sans-serif">{}</text>"#, esc(title));

    let mut i = 0;
    while i < states.len() {
        if states[i] == 0 {
            let start = i;
            while i < states.len() && states[i] == 0 {
                i += 1;
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="#c9d6f0"/>"##,
                x(start),
                x(i) - x(start),
                H - 2.0 * PAD
            );
        } else {
            i += 1;
        }
    }

    // downsample to at most ~2 points per pixel column
    let step = (n / 2400).max(1);
    let mut path = String::new();
    for (k, chunk) in counts.chunks(step).enumerate() {
        let v = chunk.iter().copied().fold(0.0f64, f64::max);
        let _ = write!(path, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, x(k * step), y(v));
    }
    let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#333" stroke-width="0.5"/>"##, path.trim_end());

    for e in events {
        let color = if e.label == Label::Sot { "#1f4fbf" } else { "#d9822b" };
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.2}" y1="{PAD}" x2="{0:.2}" y2="{1:.2}" stroke="{color}" stroke-width="1"/>"#,
            x(e.index),
            H - PAD
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    svg.push_str("</svg>\n");
    svg
}

/// Bland-Altman scatter (mean of methods vs difference) with bias and LOA lines.
pub fn bland_altman_svg(pairs: &[ValidationPair], report: &AgreementReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 50.0;
    let means: Vec<f64> = pairs.iter().map(|p| (p.estimated_min + p.marker_min) / 2.0).collect();
    let (mut x0, mut x1) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    if !(x1 > x0) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let stats = &report.overall;
    let ymax = pairs
        .iter()
        .map(|p| p.diff.abs())
        .fold(stats.loa_high.abs().max(stats.loa_low.abs()), f64::max)
        .max(1.0)
        * 1.1;
    let x = |v: f64| PAD + (W - 2.0 * PAD) * (v - x0) / (x1 - x0);
    let y = |d: f64| H / 2.0 - (H / 2.0 - PAD) * d / ymax;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="25" font-size="14" font-family="sans-serif">Bland-Altman: bias {:.2} min, LOA [{:.2}, {:.2}], n = {}</text>"#,
        stats.bias, stats.loa_low, stats.loa_high, stats.n
    );
    for (value, dash, label) in [
        (stats.bias, "", "bias"),
        (stats.loa_low, r#" stroke-dasharray="6,4""#, "LOA"),
        (stats.loa_high, r#" stroke-dasharray="6,4""#, "LOA"),
    ] {
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="red"{dash}/><text x="{2}" y="{3:.2}" font-size="11" font-family="sans-serif">{label} {value:.1}</text>"#,
            y(value),
            W - PAD,
            W - PAD + 2.0,
            y(value) + 4.0
        );
    }
    for (p, m) in pairs.iter().zip(&means) {
        let color = if p.label == Label::Sot { "#1f4fbf" } else { "#d9822b" };
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(*m), y(p.diff));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">mean of methods (min since midnight)</text>"#,
        W / 2.0 - 100.0,
        H - 15.0
    );
    svg.push_str("</svg>\n");
    svg
}
