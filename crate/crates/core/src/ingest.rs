//! Reading actigraphy files, wear-period screening and 30 s → 60 s aggregation.

use std::io::Write;

use chrono::{Duration, NaiveDateTime};
use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum total duration and minimum longest wear period, in minutes (four days).
pub const MIN_WEAR_MINUTES: u64 = 5760;
/// Zero runs strictly longer than this many minutes end a wear period.
pub const MAX_ZERO_RUN_MINUTES: u64 = 120;

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Default start time used when the input carries no timestamp column.
pub fn default_start_time() -> NaiveDateTime {
    NaiveDateTime::parse_from_str("1970-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap()
}

/// A uniformly sampled sequence of activity counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSeries {
    start_time: NaiveDateTime,
    epoch_seconds: u32,
    counts: Vec<f64>,
    markers: Vec<usize>,
}

impl EpochSeries {
    pub fn new(
        start_time: NaiveDateTime,
        epoch_seconds: u32,
        counts: Vec<f64>,
        mut markers: Vec<usize>,
    ) -> Result<Self> {
        if epoch_seconds != 30 && epoch_seconds != 60 {
            return Err(Error::InvalidSeries(format!(
                "epoch length must be 30 or 60 seconds, got {epoch_seconds}"
            )));
        }
        if counts.is_empty() {
            return Err(Error::InvalidSeries("no epochs".into()));
        }
        if let Some(i) = counts.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidSeries(format!(
                "count at epoch {i} is negative or not finite ({})",
                counts[i]
            )));
        }
        markers.sort_unstable();
        markers.dedup();
        if let Some(&m) = markers.last() {
            if m >= counts.len() {
                return Err(Error::InvalidSeries(format!(
                    "marker index {m} outside series of length {}",
                    counts.len()
                )));
            }
        }
        Ok(Self {
            start_time,
            epoch_seconds,
            counts,
            markers,
        })
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    pub fn epoch_seconds(&self) -> u32 {
        self.epoch_seconds
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn markers(&self) -> &[usize] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total_minutes(&self) -> u64 {
        self.counts.len() as u64 * self.epoch_seconds as u64 / 60
    }

    pub fn time_at(&self, index: usize) -> NaiveDateTime {
        self.start_time + Duration::seconds(index as i64 * self.epoch_seconds as i64)
    }

    pub fn marker_times(&self) -> Vec<NaiveDateTime> {
        self.markers.iter().map(|&i| self.time_at(i)).collect()
    }

    /// Sub-series over `[start, end]` (inclusive), with shifted start time and markers.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= self.counts.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}] out of range for length {}",
                self.counts.len()
            )));
        }
        let markers = self
            .markers
            .iter()
            .filter(|&&m| m >= start && m <= end)
            .map(|&m| m - start)
            .collect();
        Self::new(
            self.time_at(start),
            self.epoch_seconds,
            self.counts[start..=end].to_vec(),
            markers,
        )
    }

    pub fn crop_to(&self, period: &WearPeriod) -> Result<Self> {
        self.slice(period.start_index, period.end_index)
    }

    /// Writes the series in the default input layout (`timestamp,count,marker`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["timestamp", "count", "marker"])?;
        let mut markers = self.markers.iter().peekable();
        for (i, c) in self.counts.iter().enumerate() {
            let flagged = markers.next_if(|&&m| m == i).is_some();
            out.write_record([
                format_timestamp(self.time_at(i)),
                c.to_string(),
                if flagged { "1" } else { "0" }.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Column mapping for delimited input files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFormat {
    pub delimiter: u8,
    pub timestamp_column: String,
    pub count_column: String,
    pub marker_column: String,
    /// Used when the file has no timestamp column; otherwise inferred from the stride.
    pub epoch_seconds: u32,
    /// Used when the file has no timestamp column.
    #[serde(serialize_with = "serialize_time")]
    pub start_time: NaiveDateTime,
}

fn serialize_time<S: serde::Serializer>(t: &NaiveDateTime, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(*t))
}

impl Default for InputFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            timestamp_column: "timestamp".into(),
            count_column: "count".into(),
            marker_column: "marker".into(),
            epoch_seconds: 60,
            start_time: default_start_time(),
        }
    }
}

/// Parses delimited text with a header row into an [`EpochSeries`].
///
/// The count column is required. Timestamp and marker columns are optional; when
/// timestamps are present they must advance by a constant 30 or 60 seconds.
pub fn parse_series(text: &str, format: &InputFormat) -> Result<EpochSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let count_idx = col(&format.count_column)
        .ok_or_else(|| Error::MissingColumn(format.count_column.clone()))?;
    let ts_idx = col(&format.timestamp_column);
    let marker_idx = col(&format.marker_column);

    let mut counts = Vec::new();
    let mut markers = Vec::new();
    let mut times: Vec<NaiveDateTime> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| bad(format!("missing field {}", i + 1)))
        };

        let raw = field(count_idx)?;
        let count: f64 = raw
            .parse()
            .map_err(|_| bad(format!("count `{raw}` is not a number")))?;
        if !count.is_finite() || count < 0.0 {
            return Err(bad(format!("count `{raw}` is negative or not finite")));
        }

        if let Some(i) = ts_idx {
            let raw = field(i)?;
            let t = parse_timestamp(raw).ok_or_else(|| bad(format!("bad timestamp `{raw}`")))?;
            times.push(t);
        }
        if let Some(i) = marker_idx {
            let raw = field(i)?;
            let flag: f64 = if raw.is_empty() {
                0.0
            } else {
                raw.parse()
                    .map_err(|_| bad(format!("marker `{raw}` is not a number")))?
            };
            if flag != 0.0 {
                markers.push(counts.len());
            }
        }
        counts.push(count);
    }

    if counts.is_empty() {
        return Err(Error::InvalidSeries("file has no data rows".into()));
    }

    let (start_time, epoch_seconds) = if times.is_empty() {
        (format.start_time, format.epoch_seconds)
    } else {
        let epoch = if times.len() > 1 {
            (times[1] - times[0]).num_seconds()
        } else {
            format.epoch_seconds as i64
        };
        if epoch != 30 && epoch != 60 {
            return Err(Error::Parse {
                line: 3,
                message: format!("timestamp stride of {epoch} s is not 30 or 60"),
            });
        }
        for (i, w) in times.windows(2).enumerate() {
            if (w[1] - w[0]).num_seconds() != epoch {
                return Err(Error::Parse {
                    line: i + 3,
                    message: format!(
                        "non-uniform timestamp stride: expected {epoch} s, got {} s",
                        (w[1] - w[0]).num_seconds()
                    ),
                });
            }
        }
        (times[0], epoch as u32)
    };

    EpochSeries::new(start_time, epoch_seconds, counts, markers)
}

/// Inclusive index range of continuous wear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WearPeriod {
    pub start_index: usize,
    pub end_index: usize,
    pub length_minutes: u64,
}

impl WearPeriod {
    fn new(start_index: usize, end_index: usize, epoch_seconds: u32) -> Self {
        Self {
            start_index,
            end_index,
            length_minutes: (end_index - start_index + 1) as u64 * epoch_seconds as u64 / 60,
        }
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Splits the series at every zero run strictly longer than `max_zero_run_minutes`.
///
/// Long zero runs belong to no period. Pieces consisting only of zeros are dropped,
/// which only happens when the whole series is zero.
pub fn find_wear_periods(s: &EpochSeries, max_zero_run_minutes: u64) -> Vec<WearPeriod> {
    let max_run = (max_zero_run_minutes * 60 / s.epoch_seconds() as u64) as usize;
    let counts = s.counts();
    let n = counts.len();
    let mut periods = Vec::new();
    let mut piece_start = 0usize;
    let mut i = 0usize;
    while i < n {
        if counts[i] != 0.0 {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && counts[i] == 0.0 {
            i += 1;
        }
        if i - run_start > max_run {
            if run_start > piece_start {
                periods.push(WearPeriod::new(piece_start, run_start - 1, s.epoch_seconds()));
            }
            piece_start = i;
        }
    }
    if piece_start < n && counts[piece_start..].iter().any(|&c| c != 0.0) {
        periods.push(WearPeriod::new(piece_start, n - 1, s.epoch_seconds()));
    }
    periods
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenRejection {
    TooShortTotal,
    NoLongWearPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenReport {
    pub passed: bool,
    pub total_minutes: u64,
    pub longest_wear: Option<WearPeriod>,
    pub reason: Option<ScreenRejection>,
}

/// Screens with the default thresholds (5760 minutes, 120-minute zero runs).
pub fn screen(s: &EpochSeries) -> ScreenReport {
    screen_with(s, MIN_WEAR_MINUTES, MAX_ZERO_RUN_MINUTES)
}

pub fn screen_with(s: &EpochSeries, min_minutes: u64, max_zero_run_minutes: u64) -> ScreenReport {
    let total_minutes = s.total_minutes();
    // earliest period wins ties
    let longest_wear = find_wear_periods(s, max_zero_run_minutes)
        .into_iter()
        .fold(None::<WearPeriod>, |best, p| match best {
            Some(b) if b.length_minutes >= p.length_minutes => Some(b),
            _ => Some(p),
        });
    let reason = if total_minutes < min_minutes {
        Some(ScreenRejection::TooShortTotal)
    } else if longest_wear.map_or(true, |p| p.length_minutes < min_minutes) {
        Some(ScreenRejection::NoLongWearPeriod)
    } else {
        None
    };
    ScreenReport {
        passed: reason.is_none(),
        total_minutes,
        longest_wear,
        reason,
    }
}

/// Sums consecutive pairs of 30-second epochs into 60-second epochs.
pub fn aggregate(s: &EpochSeries) -> Result<EpochSeries> {
    if s.epoch_seconds() != 30 {
        return Err(Error::AlreadyAggregated(s.epoch_seconds()));
    }
    if s.len() % 2 == 1 {
        log::warn!("odd number of 30-second epochs ({}); dropping the last one", s.len());
    }
    if s.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: s.len() });
    }
    let counts: Vec<f64> = s.counts().chunks_exact(2).map(|p| p[0] + p[1]).collect();
    let n = counts.len();
    let markers = s
        .markers()
        .iter()
        .map(|&j| j / 2)
        .filter(|&j| j < n)
        .collect();
    EpochSeries::new(s.start_time(), 60, counts, markers)
}
