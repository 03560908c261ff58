//! Matching detected onsets to self-reported event markers, and agreement statistics.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDateTime, Timelike};
use serde::Serialize;

use crate::detector::{ChangePointEvent, Label};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_MINUTES: i64 = 180;
/// SOT clock times before this many minutes after midnight count as "after midnight".
pub const SOT_NOON_CUTOFF_MINUTES: f64 = 720.0;
pub const LOA_MULTIPLIER: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedEvent {
    pub time: NaiveDateTime,
    pub label: Label,
}

impl From<&ChangePointEvent> for TimedEvent {
    fn from(e: &ChangePointEvent) -> Self {
        Self {
            time: e.wall_time,
            label: e.label,
        }
    }
}

/// Indices of one matched (event, marker) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub event: usize,
    pub marker: usize,
}

fn minutes_between(a: NaiveDateTime, b: NaiveDateTime) -> f64 {
    (a - b).num_seconds() as f64 / 60.0
}

/// Pairs events with markers lying within `window_minutes` of them.
///
/// Among its candidates an SOT takes the latest marker and a WOT the earliest.
/// A marker goes to at most one event: when two events want the same marker the
/// nearer one wins (earlier event on ties) and the other retries with the
/// markers still free. Events without candidates stay unpaired.
pub fn match_markers(events: &[TimedEvent], markers: &[NaiveDateTime], window_minutes: i64) -> Vec<Match> {
    let window = window_minutes as f64;
    let mut taken = vec![false; markers.len()];
    let mut open: Vec<usize> = (0..events.len()).collect();
    let mut matches = Vec::new();

    while !open.is_empty() {
        // marker -> (distance, event)
        let mut claims: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut still_open = Vec::new();
        for &e in &open {
            let ev = events[e];
            let candidates = markers
                .iter()
                .enumerate()
                .filter(|&(j, &m)| !taken[j] && minutes_between(m, ev.time).abs() <= window);
            let pick = match ev.label {
                Label::Sot => candidates.max_by_key(|&(j, &m)| (m, j)),
                Label::Wot => candidates.min_by_key(|&(j, &m)| (m, j)),
            };
            let Some((j, &m)) = pick else { continue };
            let dist = minutes_between(m, ev.time).abs();
            still_open.push(e);
            match claims.get(&j) {
                Some(&(d, other)) if d < dist || (d == dist && other < e) => {}
                _ => {
                    claims.insert(j, (dist, e));
                }
            }
        }
        if claims.is_empty() {
            break;
        }
        let winners: BTreeSet<usize> = claims.values().map(|&(_, e)| e).collect();
        for (&j, &(_, e)) in &claims {
            taken[j] = true;
            matches.push(Match { event: e, marker: j });
        }
        open = still_open.into_iter().filter(|e| !winners.contains(e)).collect();
    }
    matches.sort_by_key(|m| m.event);
    matches
}

/// Minutes since the most recent midnight; SOTs before noon get 1440 added.
pub fn to_minutes_since_midnight(ts: NaiveDateTime, label: Label) -> f64 {
    let m = ts.hour() as f64 * 60.0 + ts.minute() as f64 + ts.second() as f64 / 60.0;
    if label == Label::Sot && m < SOT_NOON_CUTOFF_MINUTES {
        m + 1440.0
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationPair {
    pub subject_id: String,
    pub day_index: i64,
    pub label: Label,
    pub estimated_min: f64,
    pub marker_min: f64,
    pub diff: f64,
}

/// Matches and converts to minutes-since-midnight pairs.
///
/// The marker's minute value is moved by whole days when needed so that `diff`
/// equals the signed clock distance between event and marker, even when the two
/// fall on opposite sides of the noon cutoff.
pub fn pair_events(
    subject_id: &str,
    events: &[TimedEvent],
    markers: &[NaiveDateTime],
    window_minutes: i64,
) -> Vec<ValidationPair> {
    let matches = match_markers(events, markers, window_minutes);
    let day_of = |e: &TimedEvent| {
        let d = e.time.date();
        if e.label == Label::Sot && to_minutes_since_midnight(e.time, e.label) >= 1440.0 {
            d.pred_opt().unwrap_or(d)
        } else {
            d
        }
    };
    let Some(first_day) = matches.iter().map(|m| day_of(&events[m.event])).min() else {
        return Vec::new();
    };
    matches
        .iter()
        .map(|m| {
            let ev = &events[m.event];
            let estimated_min = to_minutes_since_midnight(ev.time, ev.label);
            let mut marker_min = to_minutes_since_midnight(markers[m.marker], ev.label);
            let raw = minutes_between(ev.time, markers[m.marker]);
            marker_min += ((estimated_min - marker_min - raw) / 1440.0).round() * 1440.0;
            ValidationPair {
                subject_id: subject_id.to_string(),
                day_index: (day_of(ev) - first_day).num_days(),
                label: ev.label,
                estimated_min,
                marker_min,
                diff: estimated_min - marker_min,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementStats {
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bias, sample SD (n - 1) and 95% limits of agreement of a set of differences.
pub fn bland_altman_diffs(diffs: &[f64]) -> Result<AgreementStats> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 pairs, got {n}")));
    }
    let bias = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Ok(AgreementStats {
        n,
        bias,
        sd,
        loa_low: bias - LOA_MULTIPLIER * sd,
        loa_high: bias + LOA_MULTIPLIER * sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub overall: AgreementStats,
    /// Present when that label has at least two pairs.
    pub sot: Option<AgreementStats>,
    pub wot: Option<AgreementStats>,
}

pub fn bland_altman(pairs: &[ValidationPair]) -> Result<AgreementReport> {
    let diffs: Vec<f64> = pairs.iter().map(|p| p.diff).collect();
    let by = |l: Label| {
        let d: Vec<f64> = pairs.iter().filter(|p| p.label == l).map(|p| p.diff).collect();
        bland_altman_diffs(&d).ok()
    };
    Ok(AgreementReport {
        overall: bland_altman_diffs(&diffs)?,
        sot: by(Label::Sot),
        wot: by(Label::Wot),
    })
}

/// One measurement for the variance decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subject: String,
    pub day: i64,
    pub method: String,
    pub value: f64,
}

/// Two observations per pair (method "algorithm" and "marker") for one label.
pub fn observations_from_pairs(pairs: &[ValidationPair], label: Label) -> Vec<Observation> {
    pairs
        .iter()
        .filter(|p| p.label == label)
        .flat_map(|p| {
            [("algorithm", p.estimated_min), ("marker", p.marker_min)].map(|(method, value)| Observation {
                subject: p.subject_id.clone(),
                day: p.day_index,
                method: method.to_string(),
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponent {
    pub source: &'static str,
    pub sum_of_squares: f64,
    pub share_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceSummary {
    pub n: usize,
    pub total_sum_of_squares: f64,
    /// No variation at all; every share is reported as zero.
    pub zero_variance: bool,
    pub components: Vec<VarianceComponent>,
}

/// Sequential sums-of-squares decomposition: method, then subject, then day
/// within subject, with the remainder as residual.
///
/// Each stage removes group means from the previous stage's residuals, so the
/// stage sums of squares add up exactly to the total.
pub fn variance_summary(obs: &[Observation]) -> Result<VarianceSummary> {
    let mut days: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    for o in obs {
        days.entry(o.subject.as_str()).or_default().insert(o.day);
    }
    if days.len() < 2 || days.values().any(|d| d.len() < 2) {
        return Err(Error::InvalidArgument(
            "variance summary needs at least 2 subjects with at least 2 days each".into(),
        ));
    }

    let n = obs.len();
    let grand = obs.iter().map(|o| o.value).sum::<f64>() / n as f64;
    let mut resid: Vec<f64> = obs.iter().map(|o| o.value - grand).collect();
    let total: f64 = resid.iter().map(|r| r * r).sum();

    let mut stage = |key: &dyn Fn(&Observation) -> String| -> f64 {
        let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (o, r) in obs.iter().zip(&resid) {
            let g = groups.entry(key(o)).or_insert((0.0, 0));
            g.0 += r;
            g.1 += 1;
        }
        let mut ss = 0.0;
        for (o, r) in obs.iter().zip(resid.iter_mut()) {
            let (sum, count) = groups[&key(o)];
            let effect = sum / count as f64;
            ss += effect * effect;
            *r -= effect;
        }
        ss
    };
    let method = stage(&|o| o.method.clone());
    let subject = stage(&|o| o.subject.clone());
    let day = stage(&|o| format!("{}\u{1f}{}", o.subject, o.day));
    let residual: f64 = resid.iter().map(|r| r * r).sum();

    let zero_variance = !(total > 1e-12 * grand.abs().max(1.0).powi(2) * n as f64);
    let share = |ss: f64| if zero_variance { 0.0 } else { 100.0 * ss / total };
    let components = [
        ("method", method),
        ("subject", subject),
        ("day_within_subject", day),
        ("residual", residual),
    ]
    .into_iter()
    .map(|(source, ss)| VarianceComponent {
        source,
        sum_of_squares: ss,
        share_percent: share(ss),
    })
    .collect();
    Ok(VarianceSummary {
        n,
        total_sum_of_squares: total,
        zero_variance,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_timestamp;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn t(minute: i64) -> NaiveDateTime {
        parse_timestamp("2024-01-01T00:00").unwrap() + chrono::Duration::minutes(minute)
    }

    fn ev(minute: i64, label: Label) -> TimedEvent {
        TimedEvent { time: t(minute), label }
    }

    #[test]
    fn sot_takes_latest_marker() {
        let m = match_markers(&[ev(1000, Label::Sot)], &[t(900), t(980)], 180);
        assert_eq!(m, vec![Match { event: 0, marker: 1 }]);
    }

    #[test]
    fn wot_takes_earliest_marker() {
        let m = match_markers(&[ev(2000, Label::Wot)], &[t(1990), t(2100)], 180);
        assert_eq!(m, vec![Match { event: 0, marker: 0 }]);
    }

    #[test]
    fn outside_window_unpaired() {
        assert!(match_markers(&[ev(1000, Label::Sot)], &[t(1200)], 180).is_empty());
        assert_eq!(match_markers(&[ev(1000, Label::Sot)], &[t(1180)], 180).len(), 1);
    }

    #[test]
    fn contested_marker_goes_to_nearer_event() {
        // both events want the marker at 200; the WOT is nearer, so the SOT
        // falls back to the marker at 50
        let events = [ev(100, Label::Sot), ev(280, Label::Wot)];
        let markers = [t(50), t(200)];
        let m = match_markers(&events, &markers, 180);
        assert_eq!(m, vec![Match { event: 0, marker: 0 }, Match { event: 1, marker: 1 }]);
    }

    #[test]
    fn minutes_since_midnight() {
        let at = |s: &str| parse_timestamp(s).unwrap();
        assert_eq!(to_minutes_since_midnight(at("2024-01-02T00:30"), Label::Sot), 1470.0);
        assert_eq!(to_minutes_since_midnight(at("2024-01-01T23:23"), Label::Sot), 1403.0);
        assert_eq!(to_minutes_since_midnight(at("2024-01-02T06:45"), Label::Wot), 405.0);
    }

    #[test]
    fn pairs_across_midnight() {
        let events = [ev(1430, Label::Sot), ev(1440 + 420, Label::Wot)];
        let markers = [t(1445), t(1440 + 410)];
        let pairs = pair_events("s1", &events, &markers, 180);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].estimated_min, 1430.0);
        assert_eq!(pairs[0].marker_min, 1445.0);
        assert_eq!(pairs[0].diff, -15.0);
        assert_eq!(pairs[1].diff, 10.0);
        assert_eq!((pairs[0].day_index, pairs[1].day_index), (0, 1));
    }

    #[test]
    fn pair_straddling_noon_cutoff_keeps_clock_distance() {
        let pairs = pair_events("s", &[ev(710, Label::Sot)], &[t(730)], 180);
        assert_eq!(pairs[0].diff, -20.0);
    }

    #[test]
    fn bland_altman_hand_values() {
        let s = bland_altman_diffs(&[-2.0, 0.0, 2.0]).unwrap();
        assert_relative_eq!(s.bias, 0.0);
        assert_relative_eq!(s.sd, 2.0);
        assert_relative_eq!(s.loa_low, -3.92);
        assert_relative_eq!(s.loa_high, 3.92);
        let c = bland_altman_diffs(&[4.5; 6]).unwrap();
        assert_eq!((c.bias, c.sd, c.loa_low, c.loa_high), (4.5, 0.0, 4.5, 4.5));
        assert!(bland_altman_diffs(&[1.0]).is_err());
    }

    fn obs(subject: &str, day: i64, method: &str, value: f64) -> Observation {
        Observation { subject: subject.into(), day, method: method.into(), value }
    }

    #[test]
    fn constant_method_offset_is_all_method() {
        let mut v = Vec::new();
        for s in ["a", "b", "c"] {
            for d in 0..3 {
                v.push(obs(s, d, "algorithm", 1400.0));
                v.push(obs(s, d, "marker", 1390.0));
            }
        }
        let r = variance_summary(&v).unwrap();
        assert_relative_eq!(r.components[0].share_percent, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn identical_values_are_zero_variance() {
        let v: Vec<_> = ["a", "b"]
            .iter()
            .flat_map(|s| (0..2).map(move |d| obs(s, d, "marker", 5.0)))
            .collect();
        let r = variance_summary(&v).unwrap();
        assert!(r.zero_variance);
        assert!(r.components.iter().all(|c| c.share_percent == 0.0));
    }

    #[test]
    fn insufficient_grouping() {
        let v = vec![obs("a", 0, "m", 1.0), obs("a", 1, "m", 2.0)];
        assert!(variance_summary(&v).is_err());
        let v = vec![obs("a", 0, "m", 1.0), obs("a", 1, "m", 2.0), obs("b", 0, "m", 3.0)];
        assert!(variance_summary(&v).is_err());
    }

    #[test]
    fn planted_subject_offsets_dominate() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        let subj = Normal::new(0.0, 60.0).unwrap();
        let noise = Normal::new(0.0, 10.0).unwrap();
        let mut v = Vec::new();
        for s in 0..12 {
            let offset = subj.sample(&mut rng);
            for d in 0..6 {
                for m in ["algorithm", "marker"] {
                    v.push(obs(&format!("s{s}"), d, m, 1380.0 + offset + noise.sample(&mut rng)));
                }
            }
        }
        let r = variance_summary(&v).unwrap();
        assert!(r.components[1].share_percent > 50.0, "{r:?}");
    }

    proptest! {
        #[test]
        fn bland_altman_order_invariant(mut d in prop::collection::vec(-300.0f64..300.0, 2..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = bland_altman_diffs(&d).unwrap();
            d.shuffle(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed));
            let b = bland_altman_diffs(&d).unwrap();
            prop_assert!((a.bias - b.bias).abs() < 1e-9);
            prop_assert!((a.sd - b.sd).abs() < 1e-9);
            prop_assert!(((a.loa_high - a.loa_low) - 2.0 * 1.96 * a.sd).abs() < 1e-9);
        }

        #[test]
        fn matching_is_one_to_one_within_window(
            ev_min in prop::collection::btree_set(0i64..5000, 1..20),
            mk_min in prop::collection::btree_set(0i64..5000, 0..25),
        ) {
            let events: Vec<TimedEvent> = ev_min.iter().enumerate()
                .map(|(i, &m)| ev(m, if i % 2 == 0 { Label::Sot } else { Label::Wot }))
                .collect();
            let markers: Vec<NaiveDateTime> = mk_min.iter().map(|&m| t(m)).collect();
            let m = match_markers(&events, &markers, 180);
            prop_assert!(m.len() <= events.len().min(markers.len()));
            let used: BTreeSet<usize> = m.iter().map(|x| x.marker).collect();
            prop_assert_eq!(used.len(), m.len());
            let evs: BTreeSet<usize> = m.iter().map(|x| x.event).collect();
            prop_assert_eq!(evs.len(), m.len());
            for x in &m {
                prop_assert!(minutes_between(markers[x.marker], events[x.event].time).abs() <= 180.0);
            }
        }

        #[test]
        fn minutes_left_inverse(minute in 0i64..1440, day in 0i64..30) {
            let ts = t(day * 1440 + minute);
            prop_assert_eq!(to_minutes_since_midnight(ts, Label::Wot), minute as f64);
            if minute >= 720 {
                prop_assert_eq!(to_minutes_since_midnight(ts, Label::Sot), minute as f64);
            }
        }

        #[test]
        fn variance_shares_sum_to_hundred(vals in prop::collection::vec(0.0f64..2000.0, 16)) {
            let mut v = Vec::new();
            let mut it = vals.into_iter();
            for s in ["a", "b"] {
                for d in 0..4 {
                    for m in ["algorithm", "marker"] {
                        v.push(obs(s, d, m, it.next().unwrap()));
                    }
                }
            }
            let r = variance_summary(&v).unwrap();
            if !r.zero_variance {
                let total: f64 = r.components.iter().map(|c| c.share_percent).sum();
                prop_assert!((total - 100.0).abs() < 0.01);
                prop_assert!(r.components.iter().all(|c| c.share_percent >= -1e-9));
            }
        }
    }
}
