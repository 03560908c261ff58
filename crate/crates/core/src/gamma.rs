//! Gamma maximum likelihood and single change-point search.
//!
//! Samples are modelled as `Gamma(shape, scale)` with a shape shared by the
//! whole segment. A change point is a shift in scale; its location minimises a
//! modified information criterion (MIC): twice the negative profile
//! log-likelihood of the two-scale model, plus `2 ln n`, plus a penalty
//! `λ (2k/n - 1)² ln n` that discourages splits near either end.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 50.0;
pub const MIN_MLE_SAMPLES: usize = 20;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_REL_TOL: f64 = 1e-14;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    let series = LANCZOS_COEF[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS_COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Digamma ψ(x) for `x > 0`: upward recurrence to x ≥ 10, then the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 * inv - tail
}

/// Trigamma ψ'(x) for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv
        + inv2 / 2.0
        + inv * inv2
            * (1.0 / 6.0
                - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
    acc + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma parameters must be positive and finite (shape {shape}, scale {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }
}

fn check_positive(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "gamma samples must be positive and finite; x[{i}] = {}",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// Maximum likelihood estimate of shape and scale.
///
/// Solves `ln ξ - ψ(ξ) = ln(mean x) - mean(ln x)` by Newton's method from
/// Minka's closed-form starting point; the scale follows as `mean / ξ`.
pub fn gamma_mle(x: &[f64]) -> Result<GammaParams> {
    if x.len() < MIN_MLE_SAMPLES {
        return Err(Error::TooShort {
            needed: MIN_MLE_SAMPLES,
            got: x.len(),
        });
    }
    check_positive(x)?;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mean_log = x.iter().map(|v| v.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if x.iter().all(|&v| v == x[0]) || !(s > 1e-12) {
        return Err(Error::Degenerate(
            "all samples (nearly) identical; gamma shape is unbounded".into(),
        ));
    }

    let mut shape = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..NEWTON_MAX_ITER {
        let f = shape.ln() - digamma(shape) - s;
        let df = 1.0 / shape - trigamma(shape);
        let mut next = shape - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = shape / 2.0;
        }
        let done = (next - shape).abs() <= NEWTON_REL_TOL * shape;
        shape = next;
        if done {
            break;
        }
    }
    GammaParams::new(shape, mean / shape)
}

/// Log-likelihood of `x` under `Gamma(p.shape, p.scale)`.
pub fn gamma_loglik(x: &[f64], p: &GammaParams) -> f64 {
    let lg = ln_gamma(p.shape);
    let ln_scale = p.scale.ln();
    x.iter()
        .map(|&v| (p.shape - 1.0) * v.ln() - v / p.scale - p.shape * ln_scale - lg)
        .sum()
}

fn penalty(k: usize, n: usize, lambda: f64) -> f64 {
    let r = 2.0 * k as f64 / n as f64 - 1.0;
    lambda * r * r * (n as f64).ln()
}

/// Terms of the MIC that do not depend on the split position.
fn mic_constant(n: usize, shape: f64, sum_log: f64) -> f64 {
    let nf = n as f64;
    2.0 * nf * shape - 2.0 * (shape - 1.0) * sum_log + 2.0 * nf * ln_gamma(shape) + 2.0 * nf.ln()
}

fn split_term(len: usize, sum: f64, shape: f64) -> f64 {
    let w = len as f64 * shape;
    2.0 * w * (sum / w).ln()
}

/// Full MIC value for splitting `x` after its first `k` samples.
pub fn mic(x: &[f64], k: usize, shape: f64, lambda: f64) -> Result<f64> {
    let n = x.len();
    if k < 1 || k >= n {
        return Err(Error::InvalidArgument(format!("split {k} outside [1, {}]", n.saturating_sub(1))));
    }
    check_positive(x)?;
    let s1: f64 = x[..k].iter().sum();
    let s2: f64 = x[k..].iter().sum();
    let sum_log: f64 = x.iter().map(|v| v.ln()).sum();
    Ok(split_term(k, s1, shape)
        + split_term(n - k, s2, shape)
        + mic_constant(n, shape, sum_log)
        + penalty(k, n, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpSearchResult {
    /// Split position: the first segment is `x[..k_hat]`, so `k_hat` is also the
    /// 0-based index of the first sample after the change.
    pub k_hat: usize,
    /// Smallest admissible split; `mic_curve[i]` is the MIC at `k_min + i`.
    pub k_min: usize,
    #[serde(skip)]
    pub mic_curve: Vec<f64>,
    pub mic_min: f64,
    pub shape: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl CpSearchResult {
    pub fn mic_at(&self, k: usize) -> Option<f64> {
        k.checked_sub(self.k_min).and_then(|i| self.mic_curve.get(i).copied())
    }
}

/// Locates the single most likely scale change in `x`.
///
/// The shape is estimated once on all of `x` and shared by both sides. Every
/// split with at least `min_margin` samples on each side is scored in one pass
/// over prefix and suffix sums; ties go to the earlier split.
pub fn find_single_cp(x: &[f64], lambda: f64, min_margin: usize) -> Result<CpSearchResult> {
    let min_margin = min_margin.max(1);
    let n = x.len();
    if n < 2 * min_margin + 2 {
        return Err(Error::TooShort {
            needed: 2 * min_margin + 2,
            got: n,
        });
    }
    let shape = gamma_mle(x)?.shape;

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + x[i];
    }
    let sum_log: f64 = x.iter().map(|v| v.ln()).sum();
    let constant = mic_constant(n, shape, sum_log);

    let k_min = min_margin;
    let k_max = n - min_margin;
    let mut curve = Vec::with_capacity(k_max - k_min + 1);
    let mut best = (k_min, f64::INFINITY);
    for k in k_min..=k_max {
        let v = split_term(k, prefix[k], shape)
            + split_term(n - k, suffix[k], shape)
            + constant
            + penalty(k, n, lambda);
        if v < best.1 {
            best = (k, v);
        }
        curve.push(v);
    }
    let (k_hat, mic_min) = best;
    if !mic_min.is_finite() {
        return Err(Error::Degenerate("MIC curve has no finite value".into()));
    }
    Ok(CpSearchResult {
        k_hat,
        k_min,
        mic_curve: curve,
        mic_min,
        shape,
        theta1: prefix[k_hat] / (k_hat as f64 * shape),
        theta2: suffix[k_hat] / ((n - k_hat) as f64 * shape),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Gamma};

    fn draws(shape: f64, scale: f64, n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
        let g = Gamma::new(shape, scale).unwrap();
        (0..n).map(|_| g.sample(rng)).collect()
    }

    /// Independent evaluation of the two-scale likelihood at split k, from scratch.
    fn brute_mic(x: &[f64], k: usize, shape: f64, lambda: f64) -> f64 {
        use statrs::function::gamma::ln_gamma as lg;
        let n = x.len();
        let t1 = x[..k].iter().sum::<f64>() / (k as f64 * shape);
        let t2 = x[k..].iter().sum::<f64>() / ((n - k) as f64 * shape);
        let ll = |v: f64, t: f64| (shape - 1.0) * v.ln() - v / t - shape * t.ln() - lg(shape);
        let l1: f64 = x[..k].iter().map(|&v| ll(v, t1)).sum::<f64>()
            + x[k..].iter().map(|&v| ll(v, t2)).sum::<f64>();
        let r = 2.0 * k as f64 / n as f64 - 1.0;
        -2.0 * l1 + 2.0 * (n as f64).ln() + lambda * r * r * (n as f64).ln()
    }

    #[test]
    fn special_functions_match_statrs() {
        for &x in &[1e-3, 0.1, 0.5, 0.8, 1.0, 1.5, 2.0, 3.7, 9.99, 10.0, 25.0, 1e3, 1e6] {
            assert_relative_eq!(ln_gamma(x), statrs::function::gamma::ln_gamma(x), epsilon = 1e-12, max_relative = 1e-12);
            assert_relative_eq!(digamma(x), statrs::function::gamma::digamma(x), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn special_function_identities() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        // ψ(1) = -γ
        assert_relative_eq!(digamma(1.0), -0.577_215_664_901_532_9, epsilon = 1e-14);
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-13);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-12);
        // derivative check on digamma
        for &x in &[0.3, 1.7, 12.0, 80.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(trigamma(x), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn mle_recovers_parameters() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = draws(2.0, 3.0, 10_000, &mut rng);
        let p = gamma_mle(&x).unwrap();
        assert!((p.shape - 2.0).abs() < 0.1, "{p:?}");
        assert!((p.scale - 3.0).abs() < 0.15, "{p:?}");
    }

    #[test]
    fn mle_first_moment_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = draws(0.7, 40.0, 500, &mut rng);
        let p = gamma_mle(&x).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert_relative_eq!(p.shape * p.scale, mean, max_relative = 1e-10);
    }

    #[test]
    fn mle_solves_score_equation() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = draws(0.8, 25.0, 2000, &mut rng);
        let p = gamma_mle(&x).unwrap();
        let n = x.len() as f64;
        let s = (x.iter().sum::<f64>() / n).ln() - x.iter().map(|v| v.ln()).sum::<f64>() / n;
        assert!((p.shape.ln() - digamma(p.shape) - s).abs() < 1e-12);
    }

    #[test]
    fn mle_rejects_constant_and_short() {
        assert!(matches!(gamma_mle(&[3.0; 50]), Err(Error::Degenerate(_))));
        assert!(matches!(gamma_mle(&[1.0; 5]), Err(Error::TooShort { .. })));
        let mut x = vec![1.0; 30];
        x[3] = 0.0;
        assert!(matches!(gamma_mle(&x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mle_is_optimal_on_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = draws(1.3, 7.0, 800, &mut rng);
        let best = gamma_mle(&x).unwrap();
        let top = gamma_loglik(&x, &best);
        for i in 1..20 {
            for j in 1..20 {
                let p = GammaParams::new(best.shape * (0.5 + 0.05 * i as f64), best.scale * (0.5 + 0.05 * j as f64)).unwrap();
                assert!(gamma_loglik(&x, &p) <= top + 1e-9);
            }
        }
    }

    #[test]
    fn loglik_closed_forms() {
        let exp1 = GammaParams::new(1.0, 1.0).unwrap();
        assert_relative_eq!(gamma_loglik(&[1.0], &exp1), -1.0, epsilon = 1e-14);
        assert_relative_eq!(gamma_loglik(&[1.0, 1.0], &exp1), -2.0, epsilon = 1e-14);
        let g2 = GammaParams::new(2.0, 1.0).unwrap();
        assert_relative_eq!(gamma_loglik(&[2.0], &g2), 2f64.ln() - 2.0, epsilon = 1e-14);
    }

    #[test]
    fn mic_hand_value() {
        let v = mic(&[1.0, 1.0], 1, 1.0, 0.0).unwrap();
        assert_relative_eq!(v, 4.0 + 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mic_penalty_isolation_and_reversal() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = draws(1.5, 4.0, 60, &mut rng);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let n = x.len();
        for k in 1..n {
            let with = mic(&x, k, 1.5, 50.0).unwrap();
            let without = mic(&x, k, 1.5, 0.0).unwrap();
            let r = 2.0 * k as f64 / n as f64 - 1.0;
            assert_relative_eq!(with - without, 50.0 * r * r * (n as f64).ln(), epsilon = 1e-9);
            assert_relative_eq!(with, mic(&rev, n - k, 1.5, 50.0).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn mic_matches_likelihood_from_scratch() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut x = draws(0.9, 2.0, 80, &mut rng);
        x.extend(draws(0.9, 30.0, 70, &mut rng));
        for k in [1, 10, 79, 80, 81, 149] {
            assert_relative_eq!(mic(&x, k, 0.9, 50.0).unwrap(), brute_mic(&x, k, 0.9, 50.0), max_relative = 1e-10);
        }
    }

    #[test]
    fn finds_planted_change() {
        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        let mut x = draws(2.0, 1.0, 100, &mut rng);
        x.extend(draws(2.0, 20.0, 100, &mut rng));
        let r = find_single_cp(&x, DEFAULT_LAMBDA, 1).unwrap();
        assert!((r.k_hat as i64 - 100).abs() <= 3, "k_hat = {}", r.k_hat);
        assert_eq!(r.mic_curve.len(), 199);
        // the penalty-free likelihood-ratio scan agrees on the location
        let lr = (1..200)
            .min_by(|&a, &b| brute_mic(&x, a, r.shape, 0.0).total_cmp(&brute_mic(&x, b, r.shape, 0.0)))
            .unwrap();
        assert!((lr as i64 - 100).abs() <= 3, "likelihood-ratio argmin {lr}");
    }

    #[test]
    fn side_means_match_scale_estimates() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut x = draws(0.8, 5.0, 150, &mut rng);
        x.extend(draws(0.8, 90.0, 90, &mut rng));
        let r = find_single_cp(&x, DEFAULT_LAMBDA, 1).unwrap();
        let m1 = x[..r.k_hat].iter().sum::<f64>() / r.k_hat as f64;
        let m2 = x[r.k_hat..].iter().sum::<f64>() / (x.len() - r.k_hat) as f64;
        assert_relative_eq!(m1, r.shape * r.theta1, max_relative = 1e-10);
        assert_relative_eq!(m2, r.shape * r.theta2, max_relative = 1e-10);
    }

    #[test]
    fn huge_penalty_centres_split() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in [40usize, 101, 250] {
            let x = draws(1.0, 1.0, n, &mut rng);
            let r = find_single_cp(&x, 1e6, 1).unwrap();
            assert!((2 * r.k_hat).abs_diff(n) <= 2, "n={n} k={}", r.k_hat);
        }
    }

    #[test]
    fn margin_limits_range() {
        let x: Vec<f64> = (1..=50).map(|v| v as f64).collect();
        let r = find_single_cp(&x, 0.0, 5).unwrap();
        assert_eq!(r.k_min, 5);
        assert_eq!(r.mic_curve.len(), 50 - 10 + 1);
        assert!(r.k_hat >= 5 && r.k_hat <= 45);
        assert!(matches!(find_single_cp(&x[..11], 0.0, 5), Err(Error::TooShort { .. })));
    }

    #[test]
    fn no_change_sequences_give_small_gain() {
        // without a true change the split gain over the one-scale fit stays within
        // a few likelihood units and the location is not reproducible across seeds
        let mut ks = Vec::new();
        let mut ks_free = Vec::new();
        for seed in 0..50 {
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
            let x = draws(2.0, 5.0, 200, &mut rng);
            let r = find_single_cp(&x, DEFAULT_LAMBDA, 1).unwrap();
            let h0 = GammaParams::new(r.shape, x.iter().sum::<f64>() / (200.0 * r.shape)).unwrap();
            let baseline = -2.0 * gamma_loglik(&x, &h0);
            let gap = r.mic_min - baseline;
            assert!(gap.abs() < 2.0 * 200f64.ln() + 15.0, "seed {seed}: gap {gap}");
            ks.push(r.k_hat as f64);
            ks_free.push(find_single_cp(&x, 0.0, 1).unwrap().k_hat as f64);
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|k| (k - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let mut distinct = ks.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        // the default penalty pulls a spurious split towards the middle; it still moves
        assert!(distinct.len() >= 5, "k_hat values {ks:?}");
        assert!(sd(&ks) > 1.0, "k_hat sd {}", sd(&ks));
        // penalty-free, the spurious split wanders over much of the series
        assert!(sd(&ks_free) > 20.0, "penalty-free k_hat sd {}", sd(&ks_free));
    }

    proptest::proptest! {
        #[test]
        fn fast_path_matches_brute_force(seed in 0u64..10_000, n in 20usize..400, split in 0.1f64..0.9) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let cut = ((n as f64) * split) as usize;
            let mut x = draws(0.8, 3.0, cut, &mut rng);
            x.extend(draws(0.8, 40.0, n - cut, &mut rng));
            let x: Vec<f64> = x.into_iter().map(|v| v + 0.1).collect();
            let r = find_single_cp(&x, DEFAULT_LAMBDA, 1).unwrap();
            for k in 1..n {
                let fast = r.mic_at(k).unwrap();
                let slow = brute_mic(&x, k, r.shape, DEFAULT_LAMBDA);
                proptest::prop_assert!((fast - slow).abs() <= 1e-8 * slow.abs().max(1.0), "k={} {} vs {}", k, fast, slow);
            }
        }

        #[test]
        fn scale_equivariance(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut x = draws(1.0, 2.0, 120, &mut rng);
            x.extend(draws(1.0, 25.0, 100, &mut rng));
            let a = find_single_cp(&x, DEFAULT_LAMBDA, 1).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let b = find_single_cp(&scaled, DEFAULT_LAMBDA, 1).unwrap();
            proptest::prop_assert_eq!(a.k_hat, b.k_hat);
            proptest::prop_assert!((b.theta1 / a.theta1 - c).abs() <= 1e-8 * c);
        }
    }
}
