//! Command-line front end. `run` returns the process exit code.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success (batch: every subject reached a terminal status) |
//! | 1  | input or config could not be read or parsed |
//! | 2  | subject screened out |
//! | 3  | detection finished but was error-flagged (artifacts written) |
//! | 4  | detection failed |
//! | 5  | validation produced zero matched pairs |
//! | 6  | batch glob matched no files |
//! | 64 | usage error |
//! | 74 | could not write outputs |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Error;
use crate::ingest::parse_series;
use crate::pipeline::{run_file, subject_id, SubjectRun, SubjectStatus};
use crate::report::{
    bland_altman_svg, overlay_svg, read_events_csv, read_truth_markers, write_events_csv, write_json,
    write_pairs_csv, AgreementSummary, Diagnostics,
};
use crate::synth::{generate, write_subject, SynthSpec};
use crate::validate::{bland_altman, observations_from_pairs, pair_events, variance_summary, ValidationPair};
use crate::detector::Label;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SCREENED_OUT: i32 = 2;
pub const EXIT_ERROR_FLAGGED: i32 = 3;
pub const EXIT_DETECTION_FAILED: i32 = 4;
pub const EXIT_ZERO_PAIRS: i32 = 5;
pub const EXIT_NO_INPUTS: i32 = 6;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_OUTPUT: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "circacp", version, about = "Sleep/wake transition detection for actigraphy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda=25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect sleep/wake transitions in one actigraphy file.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run detection over every file matching a glob.
    Batch {
        #[arg(long)]
        glob: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        no_plots: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Pair detected events with reference markers and report agreement.
    Validate {
        /// Events CSV. Repeat together with --markers for several subjects.
        #[arg(long, required = true)]
        events: Vec<PathBuf>,
        /// Ground-truth CSV (`is_marker` column) or actigraphy CSV with a marker column.
        #[arg(long, required = true)]
        markers: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Output name prefix; defaults to the subject id of the first events file.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        no_plots: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write synthetic subjects with known transitions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        subjects: usize,
        #[arg(long, default_value_t = 7)]
        days: u32,
        #[arg(long, default_value_t = 20.0)]
        jitter_sd: f64,
        #[arg(long, default_value_t = 20.0)]
        scale_ratio: f64,
        #[arg(long, default_value_t = 0.0)]
        marker_noise_sd: f64,
        #[arg(long, default_value_t = 0.0)]
        marker_miss_prob: f64,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match cli.command {
        Command::Detect { input, out, no_plots, config } => cmd_detect(&input, &out, !no_plots, &config),
        Command::Batch { glob, out, parallelism, no_plots, config } => {
            cmd_batch(&glob, &out, parallelism, !no_plots, &config)
        }
        Command::Validate { events, markers, out, subject, no_plots, config } => {
            cmd_validate(&events, &markers, &out, subject.as_deref(), !no_plots, &config)
        }
        Command::Synth { out, seed, subjects, days, jitter_sd, scale_ratio, marker_noise_sd, marker_miss_prob } => {
            let spec = SynthSpec { days, marker_noise_sd, marker_miss_prob, ..SynthSpec::default() }
                .with_jitter(jitter_sd)
                .with_scale_ratio(scale_ratio);
            cmd_synth(&out, &spec, seed, subjects)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()
}

/// Writes every per-subject artifact. Only I/O can fail here.
pub fn write_subject_outputs(out: &Path, run: &SubjectRun, cfg: &RunConfig, plots: bool) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let id = &run.subject_id;
    write_json(&run.screen, create(&out.join(format!("{id}_screen.json")))?)?;
    let diag = Diagnostics::new(id, &run.screen, run.analysed.as_ref(), run.result.as_ref(), &cfg.detection);
    write_json(&diag, create(&out.join(format!("{id}_diagnostics.json")))?)?;
    if let (Some(result), Some(series)) = (&run.result, &run.analysed) {
        write_events_csv(id, &result.events, create(&out.join(format!("{id}_events.csv")))?)?;
        if plots {
            let svg = overlay_svg(id, series.counts(), &result.states(series.len()), &result.events);
            write_text(&out.join(format!("{id}_overlay.svg")), &svg)?;
        }
    }
    Ok(())
}

fn input_error_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::MissingColumn(_)
        | Error::InvalidSeries(_)
        | Error::Config { .. }
        | Error::Io(_)
        | Error::Csv(_) => EXIT_INPUT,
        _ => EXIT_DETECTION_FAILED,
    }
}

fn cmd_detect(input: &Path, out: &Path, plots: bool, args: &ConfigArgs) -> i32 {
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return EXIT_INPUT;
        }
    };
    let run = match run_file(input, &cfg) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{}: {e}", input.display());
            return input_error_code(&e);
        }
    };
    if let Err(e) = write_subject_outputs(out, &run, &cfg, plots) {
        log::error!("writing outputs: {e}");
        return EXIT_OUTPUT;
    }
    match run.status() {
        SubjectStatus::Ok => EXIT_OK,
        SubjectStatus::ScreenedOut => {
            log::warn!("{}: screened out ({:?})", input.display(), run.screen.reason);
            EXIT_SCREENED_OUT
        }
        SubjectStatus::ErrorFlagged => {
            log::warn!("{}: detection error-flagged", input.display());
            EXIT_ERROR_FLAGGED
        }
        SubjectStatus::Failed => EXIT_DETECTION_FAILED,
    }
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub input: String,
    pub subject_id: String,
    pub status: SubjectStatus,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub glob: String,
    pub parallelism: usize,
    pub config: RunConfig,
    pub subjects: Vec<ManifestEntry>,
    pub wall_seconds: f64,
}

fn process_one(path: &Path, out: &Path, cfg: &RunConfig, plots: bool) -> ManifestEntry {
    let t0 = Instant::now();
    let outcome = run_file(path, cfg).and_then(|run| {
        write_subject_outputs(out, &run, cfg, plots)?;
        Ok(run.status())
    });
    let (status, error) = match outcome {
        Ok(s) => (s, None),
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            (SubjectStatus::Failed, Some(e.to_string()))
        }
    };
    ManifestEntry {
        input: path.display().to_string(),
        subject_id: subject_id(path),
        status,
        error,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn cmd_batch(pattern: &str, out: &Path, parallelism: usize, plots: bool, args: &ConfigArgs) -> i32 {
    let t0 = Instant::now();
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return EXIT_INPUT;
        }
    };
    let paths: Vec<PathBuf> = match glob::glob(pattern) {
        Ok(g) => g.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect(),
        Err(e) => {
            log::error!("bad glob `{pattern}`: {e}");
            return EXIT_USAGE;
        }
    };
    if paths.is_empty() {
        log::error!("glob `{pattern}` matched no files");
        return EXIT_NO_INPUTS;
    }
    if let Err(e) = std::fs::create_dir_all(out) {
        log::error!("{}: {e}", out.display());
        return EXIT_OUTPUT;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            log::error!("thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    // collect preserves input order, so the manifest does not depend on scheduling
    let subjects: Vec<ManifestEntry> =
        pool.install(|| paths.par_iter().map(|p| process_one(p, out, &cfg, plots)).collect());

    let failed = subjects.iter().filter(|s| s.status == SubjectStatus::Failed).count();
    let manifest = RunManifest {
        glob: pattern.to_string(),
        parallelism: parallelism.max(1),
        config: cfg,
        subjects,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    let written = create(&out.join("manifest.json"))
        .map_err(Error::from)
        .and_then(|w| write_json(&manifest, w));
    if let Err(e) = written {
        log::error!("writing manifest: {e}");
        return EXIT_OUTPUT;
    }
    if failed > 0 {
        log::warn!("{failed} of {} subjects failed; see manifest.json", manifest.subjects.len());
    }
    EXIT_OK
}

/// Markers from a ground-truth file, or from the marker column of an actigraphy file.
fn read_markers(path: &Path, cfg: &RunConfig) -> Result<Vec<chrono::NaiveDateTime>, Error> {
    let text = std::fs::read_to_string(path)?;
    let has_flag = text
        .lines()
        .next()
        .is_some_and(|h| h.split(cfg.format.delimiter as char).any(|c| c.trim() == "is_marker"));
    if has_flag {
        read_truth_markers(&text)
    } else {
        Ok(parse_series(&text, &cfg.format)?.marker_times())
    }
}

fn cmd_validate(
    events: &[PathBuf],
    markers: &[PathBuf],
    out: &Path,
    subject: Option<&str>,
    plots: bool,
    args: &ConfigArgs,
) -> i32 {
    if events.len() != markers.len() {
        log::error!("--events and --markers must be given the same number of times");
        return EXIT_USAGE;
    }
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return EXIT_INPUT;
        }
    };
    let mut pairs: Vec<ValidationPair> = Vec::new();
    let (mut n_events, mut n_markers) = (0, 0);
    let mut first_id = None;
    for (ev_path, mk_path) in events.iter().zip(markers) {
        let loaded = std::fs::read_to_string(ev_path)
            .map_err(Error::from)
            .and_then(|t| read_events_csv(&t))
            .and_then(|(id, ev)| Ok((id, ev, read_markers(mk_path, &cfg)?)));
        let (id, ev, mk) = match loaded {
            Ok(x) => x,
            Err(e) => {
                log::error!("{} / {}: {e}", ev_path.display(), mk_path.display());
                return EXIT_INPUT;
            }
        };
        let id = id.unwrap_or_else(|| subject_id(ev_path));
        first_id.get_or_insert_with(|| id.clone());
        n_events += ev.len();
        n_markers += mk.len();
        pairs.extend(pair_events(&id, &ev, &mk, cfg.match_window_minutes));
    }
    let name = subject.map(str::to_string).or(first_id).unwrap_or_else(|| "validation".into());

    let variance = |label| variance_summary(&observations_from_pairs(&pairs, label)).ok();
    let summary = AgreementSummary {
        n_events,
        n_markers,
        n_pairs: pairs.len(),
        window_minutes: cfg.match_window_minutes,
        agreement: bland_altman(&pairs).ok(),
        variance_sot: variance(Label::Sot),
        variance_wot: variance(Label::Wot),
    };

    let written = (|| -> Result<(), Error> {
        std::fs::create_dir_all(out)?;
        write_pairs_csv(&pairs, create(&out.join(format!("{name}_pairs.csv")))?)?;
        write_json(&summary, create(&out.join(format!("{name}_agreement.json")))?)?;
        if let (true, Some(rep)) = (plots, &summary.agreement) {
            write_text(&out.join(format!("{name}_bland_altman.svg")), &bland_altman_svg(&pairs, rep))?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        log::error!("writing outputs: {e}");
        return EXIT_OUTPUT;
    }
    if pairs.is_empty() {
        log::error!("no event matched a marker within {} minutes", cfg.match_window_minutes);
        return EXIT_ZERO_PAIRS;
    }
    if summary.agreement.is_none() {
        log::warn!("only one matched pair; agreement statistics need at least two");
    }
    EXIT_OK
}

fn cmd_synth(out: &Path, base: &SynthSpec, seed: u64, subjects: usize) -> i32 {
    if let Err(e) = std::fs::create_dir_all(out) {
        log::error!("{}: {e}", out.display());
        return EXIT_OUTPUT;
    }
    for i in 0..subjects {
        let spec = base.clone().with_seed(seed.wrapping_add(i as u64));
        let (series, truth) = match generate(&spec) {
            Ok(x) => x,
            Err(e) => {
                log::error!("{e}");
                return EXIT_USAGE;
            }
        };
        if let Err(e) = write_subject(out, &format!("subj_{i:03}"), &series, &truth) {
            log::error!("writing subject {i}: {e}");
            return EXIT_OUTPUT;
        }
    }
    EXIT_OK
}
