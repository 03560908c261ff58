//! Python bindings for `circacp`.
//!
//! Results come back as plain dicts and lists so they serialise and compare easily
//! from Python. Library errors surface as `ValueError`, I/O errors as `OSError`.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use circacp::cosinor::{self, CosinorParams};
use circacp::detector::{self, DetectionConfig, DetectionResult};
use circacp::report::format_minute;
use circacp::{gamma, ingest, pipeline, synth, validate, RunConfig};

fn to_py(e: circacp::Error) -> PyErr {
    match e {
        circacp::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_time(s: &str) -> PyResult<chrono::NaiveDateTime> {
    ingest::parse_timestamp(s).ok_or_else(|| PyValueError::new_err(format!("bad timestamp `{s}`")))
}

/// A uniformly sampled activity-count series.
#[pyclass(name = "EpochSeries", module = "pycircacp", frozen)]
pub struct PySeries {
    inner: ingest::EpochSeries,
}

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (counts, epoch_seconds=60, start_time="1970-01-01T00:00", markers=Vec::new()))]
    fn new(counts: Vec<f64>, epoch_seconds: u32, start_time: &str, markers: Vec<usize>) -> PyResult<Self> {
        let inner = ingest::EpochSeries::new(parse_time(start_time)?, epoch_seconds, counts, markers).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Parses delimited text using a flat `key = value` config (empty for defaults).
    #[staticmethod]
    #[pyo3(signature = (text, config=""))]
    fn from_csv(text: &str, config: &str) -> PyResult<Self> {
        let cfg = RunConfig::parse(config).map_err(to_py)?;
        let inner = ingest::parse_series(text, &cfg.format).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn counts(&self) -> Vec<f64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn markers(&self) -> Vec<usize> {
        self.inner.markers().to_vec()
    }

    #[getter]
    fn epoch_seconds(&self) -> u32 {
        self.inner.epoch_seconds()
    }

    #[getter]
    fn start_time(&self) -> String {
        format_minute(self.inner.start_time())
    }

    fn time_at(&self, index: usize) -> String {
        format_minute(self.inner.time_at(index))
    }

    fn aggregate(&self) -> PyResult<Self> {
        Ok(Self { inner: ingest::aggregate(&self.inner).map_err(to_py)? })
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EpochSeries(len={}, epoch_seconds={}, start_time='{}')",
            self.inner.len(),
            self.inner.epoch_seconds(),
            format_minute(self.inner.start_time())
        )
    }
}

fn cosinor_dict<'py>(py: Python<'py>, fit: &cosinor::CosinorFit) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mes", fit.params.mes)?;
    d.set_item("amp", fit.params.amp)?;
    d.set_item("phi", fit.params.phi)?;
    d.set_item("rss", fit.rss)?;
    d.set_item("converged", fit.converged)?;
    d.set_item("iterations", fit.iterations)?;
    Ok(d)
}

/// Least-squares cosinor fit; returns mes, amp, phi, rss, converged, iterations and fitted.
#[pyfunction]
#[pyo3(signature = (counts, init=None))]
fn fit_cosinor<'py>(py: Python<'py>, counts: Vec<f64>, init: Option<(f64, f64, f64)>) -> PyResult<Bound<'py, PyDict>> {
    let init = init.map_or_else(CosinorParams::default, |(m, a, p)| CosinorParams::new(m, a, p));
    let fit = cosinor::fit_cosinor(&counts, init).map_err(to_py)?;
    let d = cosinor_dict(py, &fit)?;
    d.set_item("fitted", fit.fitted.clone())?;
    Ok(d)
}

/// Binary day/night split of a fitted curve; returns binary, boundaries, wake_edges, threshold.
#[pyfunction]
#[pyo3(signature = (curve, q=cosinor::DEFAULT_DICHOTOMIZE_Q))]
fn dichotomize<'py>(py: Python<'py>, curve: Vec<f64>, q: f64) -> PyResult<Bound<'py, PyDict>> {
    let b = cosinor::dichotomize_curve(&curve, q).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("binary", b.binary)?;
    d.set_item("boundaries", b.boundaries)?;
    d.set_item("wake_edges", b.wake_edges)?;
    d.set_item("threshold", b.threshold)?;
    Ok(d)
}

/// Gamma maximum likelihood estimate as `(shape, scale)`.
#[pyfunction]
fn gamma_mle(x: Vec<f64>) -> PyResult<(f64, f64)> {
    let p = gamma::gamma_mle(&x).map_err(to_py)?;
    Ok((p.shape, p.scale))
}

#[pyfunction]
#[pyo3(signature = (x, k, shape, lam=gamma::DEFAULT_LAMBDA))]
fn mic(x: Vec<f64>, k: usize, shape: f64, lam: f64) -> PyResult<f64> {
    gamma::mic(&x, k, shape, lam).map_err(to_py)
}

/// Single change-point search; `mic_curve[i]` is the MIC at split `k_min + i`.
#[pyfunction]
#[pyo3(signature = (x, lam=gamma::DEFAULT_LAMBDA, min_margin=1))]
fn find_single_cp<'py>(py: Python<'py>, x: Vec<f64>, lam: f64, min_margin: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = gamma::find_single_cp(&x, lam, min_margin).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("k_hat", r.k_hat)?;
    d.set_item("k_min", r.k_min)?;
    d.set_item("mic_min", r.mic_min)?;
    d.set_item("mic_curve", r.mic_curve)?;
    d.set_item("shape", r.shape)?;
    d.set_item("theta1", r.theta1)?;
    d.set_item("theta2", r.theta2)?;
    Ok(d)
}

#[pyfunction]
fn ch_index(counts: Vec<f64>, states: Vec<u8>) -> PyResult<f64> {
    detector::ch_index(&counts, &states).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ch_refined, ch_cosinor, threshold=100.0))]
fn flag_errors(ch_refined: f64, ch_cosinor: f64, threshold: f64) -> bool {
    detector::flag_errors(ch_refined, ch_cosinor, threshold)
}

#[pyfunction]
#[pyo3(signature = (series, min_wear_minutes=ingest::MIN_WEAR_MINUTES, max_zero_run_minutes=ingest::MAX_ZERO_RUN_MINUTES))]
fn screen<'py>(
    py: Python<'py>,
    series: &PySeries,
    min_wear_minutes: u64,
    max_zero_run_minutes: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = ingest::screen_with(&series.inner, min_wear_minutes, max_zero_run_minutes);
    let d = PyDict::new(py);
    d.set_item("passed", r.passed)?;
    d.set_item("total_minutes", r.total_minutes)?;
    d.set_item("longest_wear", r.longest_wear.map(|w| (w.start_index, w.end_index)))?;
    d.set_item(
        "reason",
        r.reason.map(|x| serde_json::to_value(x).ok().and_then(|v| v.as_str().map(str::to_string))),
    )?;
    Ok(d)
}

fn detection_dict<'py>(py: Python<'py>, s: &ingest::EpochSeries, r: &DetectionResult) -> PyResult<Bound<'py, PyDict>> {
    let events: Vec<Bound<'py, PyDict>> = r
        .events
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("index", e.index)?;
            d.set_item("wall_time", format_minute(e.wall_time))?;
            d.set_item("label", e.label.as_str())?;
            d.set_item("provenance", e.provenance.to_string())?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    let d = PyDict::new(py);
    d.set_item("events", events)?;
    d.set_item("ch_cosinor", r.ch_cosinor)?;
    d.set_item("ch_refined", r.ch_refined)?;
    d.set_item("error_flag", r.error_flag)?;
    d.set_item("cosinor", cosinor_dict(py, &r.cosinor)?)?;
    d.set_item("rough_boundaries", r.rough_boundaries.clone())?;
    d.set_item("pass_indices", r.pass_indices.clone())?;
    d.set_item("notes", r.notes.clone())?;
    d.set_item("states", r.states(s.len()))?;
    d.set_item("start_time", format_minute(s.start_time()))?;
    Ok(d)
}

/// Detection on a screened 60-second series. `config` uses the config-file syntax.
#[pyfunction]
#[pyo3(signature = (series, config=""))]
fn detect<'py>(py: Python<'py>, series: &PySeries, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg: DetectionConfig = RunConfig::parse(config).map_err(to_py)?.detection;
    let r = py.detach(|| detector::detect(&series.inner, &cfg)).map_err(to_py)?;
    detection_dict(py, &series.inner, &r)
}

/// Full pipeline (aggregate, screen, crop, detect). Returns None when screened out.
#[pyfunction]
#[pyo3(signature = (series, config=""))]
fn run_pipeline<'py>(py: Python<'py>, series: &PySeries, config: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
    let cfg = RunConfig::parse(config).map_err(to_py)?;
    let run = py
        .detach(|| pipeline::run_series("subject", series.inner.clone(), &cfg))
        .map_err(to_py)?;
    match (&run.analysed, &run.result) {
        (Some(s), Some(r)) => detection_dict(py, s, r).map(Some),
        _ => Ok(None),
    }
}

/// Synthetic subject: returns `(series, true_events, markers)`, events as `(index, label)`.
#[pyfunction]
#[pyo3(signature = (seed=0, days=7, jitter_sd=20.0, scale_ratio=20.0, marker_noise_sd=0.0, marker_miss_prob=0.0))]
fn synthesize(
    seed: u64,
    days: u32,
    jitter_sd: f64,
    scale_ratio: f64,
    marker_noise_sd: f64,
    marker_miss_prob: f64,
) -> PyResult<(PySeries, Vec<(usize, String)>, Vec<(usize, String)>)> {
    let spec = synth::SynthSpec { days, marker_noise_sd, marker_miss_prob, ..Default::default() }
        .with_seed(seed)
        .with_jitter(jitter_sd)
        .with_scale_ratio(scale_ratio);
    let (series, truth) = synth::generate(&spec).map_err(to_py)?;
    let conv = |v: &[synth::TruthEvent]| v.iter().map(|e| (e.index, e.label.to_string())).collect();
    Ok((PySeries { inner: series }, conv(&truth.true_events), conv(&truth.markers)))
}

fn stats_dict<'py>(py: Python<'py>, s: &validate::AgreementStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", s.n)?;
    d.set_item("bias", s.bias)?;
    d.set_item("sd", s.sd)?;
    d.set_item("loa_low", s.loa_low)?;
    d.set_item("loa_high", s.loa_high)?;
    Ok(d)
}

/// Bias, SD and 95% limits of agreement of a list of differences.
#[pyfunction]
fn bland_altman<'py>(py: Python<'py>, diffs: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    stats_dict(py, &validate::bland_altman_diffs(&diffs).map_err(to_py)?)
}

/// Pairs events `(wall_time, label)` with marker times; returns one dict per pair.
#[pyfunction]
#[pyo3(signature = (events, markers, window_minutes=validate::DEFAULT_WINDOW_MINUTES, subject_id="subject"))]
fn pair_events<'py>(
    py: Python<'py>,
    events: Vec<(String, String)>,
    markers: Vec<String>,
    window_minutes: i64,
    subject_id: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let events: Vec<validate::TimedEvent> = events
        .iter()
        .map(|(t, l)| {
            let label = l.parse().map_err(|_| PyValueError::new_err(format!("bad label `{l}`")))?;
            Ok(validate::TimedEvent { time: parse_time(t)?, label })
        })
        .collect::<PyResult<_>>()?;
    let markers: Vec<_> = markers.iter().map(|m| parse_time(m)).collect::<PyResult<_>>()?;
    validate::pair_events(subject_id, &events, &markers, window_minutes)
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("subject_id", &p.subject_id)?;
            d.set_item("day_index", p.day_index)?;
            d.set_item("label", p.label.as_str())?;
            d.set_item("estimated_min", p.estimated_min)?;
            d.set_item("marker_min", p.marker_min)?;
            d.set_item("diff", p.diff)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pycircacp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_function(wrap_pyfunction!(fit_cosinor, m)?)?;
    m.add_function(wrap_pyfunction!(dichotomize, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_mle, m)?)?;
    m.add_function(wrap_pyfunction!(mic, m)?)?;
    m.add_function(wrap_pyfunction!(find_single_cp, m)?)?;
    m.add_function(wrap_pyfunction!(ch_index, m)?)?;
    m.add_function(wrap_pyfunction!(flag_errors, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(bland_altman, m)?)?;
    m.add_function(wrap_pyfunction!(pair_events, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
