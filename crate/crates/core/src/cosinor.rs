//! Single-harmonic cosinor fit with a fixed 1440-minute period.
//!
//! The model is `mes + amp * cos(2π (t - phi) / T)` with `t` the 0-based sample
//! index inside the analysed wear period. Parameters are fitted by
//! Levenberg-Marquardt on the sum of squared residuals.

use std::f64::consts::PI;

use chrono::{NaiveDateTime, Timelike};
use serde::Serialize;

use crate::error::{Error, Result};

pub const PERIOD_MINUTES: f64 = 1440.0;
/// Shortest series accepted by [`fit_cosinor`]: two full periods.
pub const MIN_FIT_SAMPLES: usize = 2880;
pub const DEFAULT_DICHOTOMIZE_Q: f64 = 0.18;

const MAX_ITERATIONS: usize = 200;
const RSS_REL_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-7;
const NON_IDENTIFIABLE_REL: f64 = 1e-9;

const OMEGA: f64 = 2.0 * PI / PERIOD_MINUTES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CosinorParams {
    pub mes: f64,
    pub amp: f64,
    /// Acrophase in minutes from the first sample.
    pub phi: f64,
}

impl Default for CosinorParams {
    fn default() -> Self {
        Self {
            mes: 500.0,
            amp: 550.0,
            phi: 227.0,
        }
    }
}

impl CosinorParams {
    pub fn new(mes: f64, amp: f64, phi: f64) -> Self {
        Self { mes, amp, phi }
    }

    /// Folds a negative amplitude into the phase and wraps phi into `[0, T)`.
    pub fn canonical(self) -> Self {
        let (amp, phi) = if self.amp < 0.0 {
            (-self.amp, self.phi + PERIOD_MINUTES / 2.0)
        } else {
            (self.amp, self.phi)
        };
        let mut phi = phi.rem_euclid(PERIOD_MINUTES);
        if phi >= PERIOD_MINUTES {
            phi = 0.0;
        }
        Self {
            mes: self.mes,
            amp,
            phi,
        }
    }

    /// Acrophase as minutes after midnight, for a series starting at `start`.
    pub fn acrophase_clock_minutes(&self, start: NaiveDateTime) -> f64 {
        let offset = start.hour() as f64 * 60.0 + start.minute() as f64 + start.second() as f64 / 60.0;
        (offset + self.phi).rem_euclid(PERIOD_MINUTES)
    }
}

pub fn eval_cosinor(p: &CosinorParams, t: f64) -> f64 {
    p.mes + p.amp * (OMEGA * (t - p.phi)).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosinorFit {
    pub params: CosinorParams,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn rss_of(y: &[f64], p: &CosinorParams) -> f64 {
    y.iter()
        .enumerate()
        .map(|(t, &v)| {
            let r = v - eval_cosinor(p, t as f64);
            r * r
        })
        .sum()
}

/// Normal equations `JᵀJ` and `Jᵀr` at `p`.
fn normal_equations(y: &[f64], p: &CosinorParams) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut a = [[0.0; 3]; 3];
    let mut g = [0.0; 3];
    for (t, &v) in y.iter().enumerate() {
        let arg = OMEGA * (t as f64 - p.phi);
        let (s, c) = arg.sin_cos();
        let r = v - (p.mes + p.amp * c);
        let j = [1.0, c, p.amp * OMEGA * s];
        for row in 0..3 {
            g[row] += j[row] * r;
            for col in row..3 {
                a[row][col] += j[row] * j[col];
            }
        }
    }
    for row in 0..3 {
        for col in 0..row {
            a[row][col] = a[col][row];
        }
    }
    (a, g)
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits the cosinor model to `counts` (one sample per minute) starting from `init`.
///
/// A fit that hits the iteration cap is still returned, with `converged = false`.
pub fn fit_cosinor(counts: &[f64], init: CosinorParams) -> Result<CosinorFit> {
    if counts.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooShort {
            needed: MIN_FIT_SAMPLES,
            got: counts.len(),
        });
    }
    let lo = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    if hi - lo <= NON_IDENTIFIABLE_REL * mean.abs() {
        return Err(Error::NonIdentifiable);
    }
    let scale = counts.iter().map(|v| v * v).sum::<f64>();

    let mut p = init.canonical();
    let mut rss = rss_of(counts, &p);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, g) = normal_equations(counts, &p);
        let diag_max = (0..3).map(|i| a[i][i]).fold(0.0f64, f64::max).max(1e-300);
        loop {
            let mut damped = a;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += mu * a[i][i].max(1e-12 * diag_max);
            }
            let step = solve3(damped, g);
            let accepted = step.and_then(|d| {
                let cand = CosinorParams::new(p.mes + d[0], p.amp + d[1], p.phi + d[2]);
                let cand_rss = rss_of(counts, &cand);
                (cand_rss <= rss).then_some((d, cand, cand_rss))
            });
            match accepted {
                Some((d, cand, cand_rss)) => {
                    let step_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let rel = (rss - cand_rss) / rss.max(1e-300);
                    p = cand;
                    let at_floor = cand_rss <= f64::EPSILON * scale;
                    rss = cand_rss;
                    mu = (mu / 3.0).max(1e-15);
                    if step_norm < STEP_TOL && (rel < RSS_REL_TOL || at_floor) {
                        converged = true;
                    }
                    break;
                }
                None => {
                    let tiny = step
                        .map(|d| d.iter().all(|v| v.abs() < STEP_TOL))
                        .unwrap_or(false);
                    if tiny {
                        converged = true;
                        break;
                    }
                    mu *= 4.0;
                    if mu > 1e20 {
                        break;
                    }
                }
            }
        }
        if converged || mu > 1e20 {
            break;
        }
    }

    let params = p.canonical();
    if 2.0 * params.amp <= NON_IDENTIFIABLE_REL * params.mes.abs() || params.amp == 0.0 {
        return Err(Error::NonIdentifiable);
    }
    let fitted: Vec<f64> = (0..counts.len())
        .map(|t| eval_cosinor(&params, t as f64))
        .collect();
    Ok(CosinorFit {
        params,
        fitted,
        rss,
        converged,
        iterations,
    })
}

/// The dichotomized cosinor curve and its transition edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleBoundaries {
    /// 1 = diurnal, 0 = nocturnal.
    pub binary: Vec<u8>,
    /// Indices of the first sample of each new state.
    pub boundaries: Vec<usize>,
    /// Subset of `boundaries` where the state goes 0 → 1.
    pub wake_edges: Vec<usize>,
    pub threshold: f64,
}

impl CycleBoundaries {
    pub fn is_wake_edge(&self, index: usize) -> bool {
        self.wake_edges.binary_search(&index).is_ok()
    }
}

pub fn dichotomize(fit: &CosinorFit, q: f64) -> Result<CycleBoundaries> {
    dichotomize_curve(&fit.fitted, q)
}

/// Thresholds a curve at `min + q * range`; samples strictly above are diurnal.
pub fn dichotomize_curve(curve: &[f64], q: f64) -> Result<CycleBoundaries> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("dichotomize quantile {q} not in [0, 1)")));
    }
    if curve.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: curve.len() });
    }
    let min = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let max = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::FlatCurve);
    }
    let threshold = min + q * (max - min);
    let binary: Vec<u8> = curve.iter().map(|&v| u8::from(v > threshold)).collect();
    let mut boundaries = Vec::new();
    let mut wake_edges = Vec::new();
    for (i, w) in binary.windows(2).enumerate() {
        if w[1] != w[0] {
            boundaries.push(i + 1);
            if w[1] == 1 {
                wake_edges.push(i + 1);
            }
        }
    }
    Ok(CycleBoundaries {
        binary,
        boundaries,
        wake_edges,
        threshold,
    })
}
