use circacp::detector::{detect, flag_errors, DetectionConfig, Label, Provenance};
use circacp::synth::{generate, GroundTruth, SynthSpec};
use proptest::prelude::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] }
}

/// |nearest CP - truth| for every true event.
fn errors(cps: &[usize], truth: &GroundTruth) -> Vec<f64> {
    truth
        .true_events
        .iter()
        .map(|t| cps.iter().map(|&c| (c as f64 - t.index as f64).abs()).fold(f64::INFINITY, f64::min))
        .collect()
}

#[test]
fn recovers_synthetic_schedule() {
    let cfg = DetectionConfig::default();
    for seed in 0..10 {
        let (s, truth) = generate(&SynthSpec::default().with_seed(seed)).unwrap();
        let r = detect(&s, &cfg).unwrap();
        let sots = r.events.iter().filter(|e| e.label == Label::Sot).count();
        let wots = r.events.len() - sots;
        assert!((6..=8).contains(&sots) && (6..=8).contains(&wots), "seed {seed}: {sots} SOT, {wots} WOT");
        let idx: Vec<usize> = r.events.iter().map(|e| e.index).collect();
        assert!(median(errors(&idx, &truth)) <= 10.0, "seed {seed}");
        assert!(r.events.iter().all(|e| e.provenance == Provenance::CpPass(2)));
    }
}

#[test]
fn second_pass_does_not_worsen() {
    let cfg = DetectionConfig::default();
    let (mut pass1, mut pass2) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let (s, truth) = generate(&SynthSpec::default().with_seed(200 + seed)).unwrap();
        let r = detect(&s, &cfg).unwrap();
        assert_eq!(r.pass_indices.len(), 2);
        pass1.extend(errors(&r.pass_indices[0], &truth));
        pass2.extend(errors(&r.pass_indices[1], &truth));
    }
    assert!(median(pass2.clone()) <= median(pass1.clone()), "{} > {}", median(pass2), median(pass1));
}

#[test]
fn refined_partition_beats_cosinor() {
    let cfg = DetectionConfig::default();
    let mut better = 0;
    let total = 40;
    for seed in 0..total {
        let spec = SynthSpec::default().with_seed(seed).with_jitter(10.0 + seed as f64);
        let (s, _) = generate(&spec).unwrap();
        let r = detect(&s, &cfg).unwrap();
        if r.ch_refined >= r.ch_cosinor {
            better += 1;
        }
    }
    assert!(better as f64 >= 0.95 * total as f64, "{better}/{total}");
}

#[test]
fn pass_one_stays_inside_its_segment() {
    let cfg = DetectionConfig::default();
    for seed in 0..10 {
        let (s, _) = generate(&SynthSpec::default().with_seed(seed)).unwrap();
        let r = detect(&s, &cfg).unwrap();
        let (cp, b) = (&r.pass_indices[0], &r.rough_boundaries);
        assert_eq!(cp.len(), b.len());
        for i in 1..cp.len() {
            assert!(cp[i] > cp[i - 1], "seed {seed}: CP{i} not after CP{}", i - 1);
            if i + 1 < b.len() {
                assert!(cp[i] < b[i + 1], "seed {seed}: CP{i} beyond B{}", i + 1);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_invariants(seed in 0u64..1_000_000, days in 4u32..9, jitter in 0.0f64..40.0, ratio in 5.0f64..40.0) {
        let spec = SynthSpec { days, ..SynthSpec::default() }
            .with_seed(seed)
            .with_jitter(jitter)
            .with_scale_ratio(ratio);
        let (s, _) = generate(&spec).unwrap();
        let cfg = DetectionConfig::default();
        let r = detect(&s, &cfg).unwrap();
        prop_assert!(r.events.windows(2).all(|w| w[0].index < w[1].index));
        prop_assert!(r.events.windows(2).all(|w| w[0].label != w[1].label));
        prop_assert!(r.events.iter().all(|e| e.wall_time == s.time_at(e.index)));
        let states = r.states(s.len());
        prop_assert_eq!(states.len(), s.len());
        prop_assert!(states.iter().all(|&v| v <= 1));
        prop_assert_eq!(r.error_flag, flag_errors(r.ch_refined, r.ch_cosinor, cfg.ch_delta_threshold));
        // identical input gives an identical result
        prop_assert_eq!(&detect(&s, &cfg).unwrap(), &r);
    }
}
