//! Sleep/wake transition detection for actigraphy.
//!
//! A cosinor fit gives rough day/night boundaries; each boundary is then refined
//! by a single change-point search under a Gamma likelihood with a modified
//! information criterion. A Calinski-Harabasz comparison flags runs where the
//! refinement made things worse.

pub mod cli;
pub mod config;
pub mod cosinor;
pub mod detector;
pub mod error;
pub mod gamma;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod validate;

pub use config::RunConfig;
pub use cosinor::{dichotomize, fit_cosinor, CosinorFit, CosinorParams, CycleBoundaries};
pub use detector::{ch_index, detect, ChangePointEvent, DetectionConfig, DetectionResult, Label, Provenance};
pub use error::{Error, Result};
pub use gamma::{find_single_cp, gamma_mle, mic, CpSearchResult, GammaParams};
pub use ingest::{aggregate, parse_series, screen, EpochSeries, InputFormat, ScreenReport, WearPeriod};
pub use synth::{generate, GroundTruth, SynthSpec};
pub use validate::{bland_altman, match_markers, pair_events, AgreementReport, ValidationPair};
