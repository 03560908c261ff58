//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so typos
//! do not silently fall back to defaults.

use serde::Serialize;

use crate::detector::DetectionConfig;
use crate::error::{Error, Result};
use crate::ingest::{parse_timestamp, InputFormat, MAX_ZERO_RUN_MINUTES, MIN_WEAR_MINUTES};
use crate::validate::DEFAULT_WINDOW_MINUTES;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub detection: DetectionConfig,
    pub format: InputFormat,
    pub min_wear_minutes: u64,
    pub max_zero_run_minutes: u64,
    pub match_window_minutes: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            format: InputFormat::default(),
            min_wear_minutes: MIN_WEAR_MINUTES,
            max_zero_run_minutes: MAX_ZERO_RUN_MINUTES,
            match_window_minutes: DEFAULT_WINDOW_MINUTES,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dichotomize_q",
    "lambda",
    "edge_guard_minutes",
    "refinement_passes",
    "ch_delta_threshold",
    "positivity_offset",
    "min_margin",
    "cosinor_init_mes",
    "cosinor_init_amp",
    "cosinor_init_phi",
    "delimiter",
    "timestamp_column",
    "count_column",
    "marker_column",
    "epoch_seconds",
    "start_time",
    "min_wear_minutes",
    "max_zero_run_minutes",
    "match_window_minutes",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|message| Error::Config { line: i + 1, message })?;
        }
        cfg.check().map_err(|message| Error::Config { line: 0, message })?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (line 0 in errors means "command line").
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                line: 0,
                message: format!("override `{o}` is not key=value"),
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|message| Error::Config { line: 0, message })?;
        }
        self.check().map_err(|message| Error::Config { line: 0, message })
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let d = &mut self.detection;
        let f = &mut self.format;
        match key {
            "dichotomize_q" => d.dichotomize_q = num(key, value)?,
            "lambda" => d.lambda = num(key, value)?,
            "edge_guard_minutes" => d.edge_guard_minutes = num(key, value)?,
            "refinement_passes" => d.refinement_passes = num(key, value)?,
            "ch_delta_threshold" => d.ch_delta_threshold = num(key, value)?,
            "positivity_offset" => d.positivity_offset = num(key, value)?,
            "min_margin" => d.min_margin = num(key, value)?,
            "cosinor_init_mes" => d.cosinor_init.mes = num(key, value)?,
            "cosinor_init_amp" => d.cosinor_init.amp = num(key, value)?,
            "cosinor_init_phi" => d.cosinor_init.phi = num(key, value)?,
            "delimiter" => {
                f.delimiter = match value {
                    "tab" | "\\t" => b'\t',
                    v if v.len() == 1 => v.as_bytes()[0],
                    v => return Err(format!("delimiter must be one byte or `tab`, got `{v}`")),
                }
            }
            "timestamp_column" => f.timestamp_column = value.to_string(),
            "count_column" => f.count_column = value.to_string(),
            "marker_column" => f.marker_column = value.to_string(),
            "epoch_seconds" => f.epoch_seconds = num(key, value)?,
            "start_time" => {
                f.start_time = parse_timestamp(value).ok_or_else(|| format!("bad start_time `{value}`"))?
            }
            "min_wear_minutes" => self.min_wear_minutes = num(key, value)?,
            "max_zero_run_minutes" => self.max_zero_run_minutes = num(key, value)?,
            "match_window_minutes" => self.match_window_minutes = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn check(&self) -> std::result::Result<(), String> {
        let d = &self.detection;
        if !(d.dichotomize_q > 0.0 && d.dichotomize_q < 1.0) {
            return Err("dichotomize_q must lie in (0, 1)".into());
        }
        if !(d.lambda >= 0.0) || !d.lambda.is_finite() {
            return Err("lambda must be a finite non-negative number".into());
        }
        if d.refinement_passes == 0 {
            return Err("refinement_passes must be at least 1".into());
        }
        if !(d.positivity_offset > 0.0) {
            return Err("positivity_offset must be positive".into());
        }
        if d.min_margin == 0 {
            return Err("min_margin must be at least 1".into());
        }
        if self.format.epoch_seconds != 30 && self.format.epoch_seconds != 60 {
            return Err("epoch_seconds must be 30 or 60".into());
        }
        if self.match_window_minutes < 0 {
            return Err("match_window_minutes must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for k in KEYS {
            let v = match *k {
                "delimiter" => ";",
                "start_time" => "2024-01-01T00:00",
                "epoch_seconds" => "30",
                "dichotomize_q" => "0.2",
                k if k.ends_with("_column") => "x",
                _ => "3",
            };
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert_eq!(cfg.format.delimiter, b';');
        assert_eq!(cfg.detection.cosinor_init.phi, 3.0);
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let mut cfg = RunConfig::parse("lambda = 10  # lower penalty\ndelimiter=tab\n").unwrap();
        assert_eq!(cfg.detection.lambda, 10.0);
        assert_eq!(cfg.format.delimiter, b'\t');
        cfg.apply_overrides(&["lambda=25"]).unwrap();
        assert_eq!(cfg.detection.lambda, 25.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match RunConfig::parse("lambda=1\nlamda=2\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("lamda"));
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("just text").is_err());
        assert!(RunConfig::parse("dichotomize_q = 1.5").is_err());
        assert!(RunConfig::parse("epoch_seconds = 15").is_err());
    }
}
