//! Synthetic actigraphy with a known sleep schedule.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)`. Draw order is fixed: schedule jitter for every night
//! (onset then wake), then one Gamma draw per epoch, then for every true event a
//! uniform miss draw followed by a normal marker-noise draw.

use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::Serialize;

use crate::detector::Label;
use crate::error::{Error, Result};
use crate::gamma::GammaParams;
use crate::ingest::EpochSeries;
use crate::report::format_minute;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub days: u32,
    #[serde(serialize_with = "crate::report::serialize_minute")]
    pub start: NaiveDateTime,
    /// Minutes after midnight.
    pub sleep_onset_clock: f64,
    pub wake_onset_clock: f64,
    pub sleep_onset_jitter_sd: f64,
    pub wake_onset_jitter_sd: f64,
    pub wake_params: GammaParams,
    pub sleep_params: GammaParams,
    pub marker_noise_sd: f64,
    pub marker_miss_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            days: 7,
            start: NaiveDate::from_ymd_opt(2024, 1, 1)
                .unwrap()
                .and_hms_opt(12, 0, 0)
                .unwrap(),
            sleep_onset_clock: 23.0 * 60.0,
            wake_onset_clock: 7.0 * 60.0,
            sleep_onset_jitter_sd: 20.0,
            wake_onset_jitter_sd: 20.0,
            wake_params: GammaParams { shape: 0.8, scale: 500.0 },
            sleep_params: GammaParams { shape: 0.8, scale: 25.0 },
            marker_noise_sd: 0.0,
            marker_miss_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Sets the sleep scale so that `wake scale / sleep scale = ratio`.
    pub fn with_scale_ratio(mut self, ratio: f64) -> Self {
        self.sleep_params.scale = self.wake_params.scale / ratio;
        self
    }

    pub fn with_jitter(mut self, sd: f64) -> Self {
        self.sleep_onset_jitter_sd = sd;
        self.wake_onset_jitter_sd = sd;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.days == 0 {
            return bad("days must be positive");
        }
        GammaParams::new(self.wake_params.shape, self.wake_params.scale)?;
        GammaParams::new(self.sleep_params.shape, self.sleep_params.scale)?;
        if self.wake_params.scale < self.sleep_params.scale {
            return bad("wake scale must be at least the sleep scale");
        }
        if !(0.0..=1.0).contains(&self.marker_miss_prob) {
            return bad("marker miss probability must be in [0, 1]");
        }
        for sd in [self.sleep_onset_jitter_sd, self.wake_onset_jitter_sd, self.marker_noise_sd] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return bad("standard deviations must be non-negative");
            }
        }
        for c in [self.sleep_onset_clock, self.wake_onset_clock] {
            if !(0.0..1440.0).contains(&c) {
                return bad("clock times must be in [0, 1440)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TruthEvent {
    pub index: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub true_events: Vec<TruthEvent>,
    pub markers: Vec<TruthEvent>,
}

impl GroundTruth {
    /// Writes `index,wall_time,label,is_marker`, true events first, then markers.
    pub fn write_csv<W: Write>(&self, series: &EpochSeries, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "wall_time", "label", "is_marker"])?;
        for (events, flag) in [(&self.true_events, "0"), (&self.markers, "1")] {
            for e in events.iter() {
                out.write_record([
                    e.index.to_string(),
                    format_minute(series.time_at(e.index)),
                    e.label.to_string(),
                    flag.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn minutes(d: f64) -> Duration {
    Duration::milliseconds((d * 60_000.0).round() as i64)
}

/// Generates one subject's 60-second series and its ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(EpochSeries, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = spec.days as usize * 1440;
    let end = spec.start + Duration::minutes(n as i64);

    let sleep_len = (spec.wake_onset_clock - spec.sleep_onset_clock).rem_euclid(1440.0);
    let sot_jitter = Normal::new(0.0, spec.sleep_onset_jitter_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let wot_jitter = Normal::new(0.0, spec.wake_onset_jitter_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    // one night per calendar date, starting the day before the series
    let mut nights: Vec<(NaiveDateTime, NaiveDateTime)> = Vec::new();
    let mut date = spec.start.date() - Duration::days(1);
    while date <= end.date() {
        let midnight = date.and_hms_opt(0, 0, 0).unwrap();
        let sot = midnight + minutes(spec.sleep_onset_clock + sot_jitter.sample(&mut rng));
        let wot = midnight + minutes(spec.sleep_onset_clock + sleep_len + wot_jitter.sample(&mut rng));
        nights.push((sot, wot));
        date += Duration::days(1);
    }
    for (i, &(sot, wot)) in nights.iter().enumerate() {
        if wot <= sot {
            return Err(Error::InfeasibleSchedule(format!("night {i} wakes before it sleeps")));
        }
        if let Some(&(next, _)) = nights.get(i + 1) {
            if next <= wot {
                return Err(Error::InfeasibleSchedule(format!("night {} overlaps night {i}", i + 1)));
            }
        }
    }

    let to_index = |t: NaiveDateTime| -> i64 { ((t - spec.start).num_milliseconds() as f64 / 60_000.0).round() as i64 };
    let mut true_events = Vec::new();
    let mut asleep = vec![false; n];
    for &(sot, wot) in &nights {
        let (a, b) = (to_index(sot), to_index(wot));
        for i in a.max(0)..b.min(n as i64) {
            asleep[i as usize] = true;
        }
        for (idx, label) in [(a, Label::Sot), (b, Label::Wot)] {
            if idx > 0 && idx < n as i64 {
                true_events.push(TruthEvent { index: idx as usize, label });
            }
        }
    }

    let wake = Gamma::new(spec.wake_params.shape, spec.wake_params.scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sleep = Gamma::new(spec.sleep_params.shape, spec.sleep_params.scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let counts: Vec<f64> = asleep
        .iter()
        .map(|&s| {
            let v = if s { sleep.sample(&mut rng) } else { wake.sample(&mut rng) };
            (v * 100.0).round() / 100.0
        })
        .collect();

    let noise = Normal::new(0.0, spec.marker_noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut markers = Vec::new();
    for e in &true_events {
        let missed = rng.random::<f64>() < spec.marker_miss_prob;
        let shift = noise.sample(&mut rng);
        if missed {
            continue;
        }
        let idx = (e.index as f64 + shift).round().clamp(0.0, (n - 1) as f64) as usize;
        markers.push(TruthEvent { index: idx, label: e.label });
    }
    markers.sort_by_key(|m| m.index);

    let series = EpochSeries::new(spec.start, 60, counts, markers.iter().map(|m| m.index).collect())?;
    Ok((series, GroundTruth { true_events, markers }))
}

/// Writes `<dir>/<stem>.csv` and `<dir>/truth/<stem>.csv`.
///
/// Truth files live in a subdirectory so a `<dir>/*.csv` glob only sees actigraphy.
pub fn write_subject(dir: &std::path::Path, stem: &str, series: &EpochSeries, truth: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir.join("truth"))?;
    let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    series.write_csv(std::io::BufWriter::new(f))?;
    let f = std::fs::File::create(dir.join("truth").join(format!("{stem}.csv")))?;
    truth.write_csv(series, std::io::BufWriter::new(f))?;
    Ok(())
}
