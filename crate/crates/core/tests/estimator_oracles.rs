mod common;

use common::dataset;
use pmm_core::sim::{Effect, ScenarioKind};
use pmm_core::{adjust_baseline, estimate, EstimateOptions, LongitudinalDataset, Method};

fn opts() -> EstimateOptions {
    EstimateOptions::default()
}

/// Two arms, two visits, deterministic but irregular values.
fn two_visit_rows(arm: usize, n: usize, offset: f64) -> Vec<(usize, f64, Vec<Option<f64>>, Option<Vec<bool>>)> {
    (0..n)
        .map(|j| {
            let x = ((j * 7) % 11) as f64 / 3.0 - 1.5;
            let y1 = offset + 0.6 * x + ((j * 5) % 7) as f64 / 4.0;
            let y2 = 2.0 * offset + 0.4 * x + 0.5 * y1 + ((j * 3) % 5) as f64 / 3.0;
            (arm, x, vec![Some(y1), Some(y2)], Some(vec![true, true]))
        })
        .collect()
}

fn complete_two_arm() -> LongitudinalDataset {
    let mut rows = two_visit_rows(0, 30, 1.0);
    rows.extend(two_visit_rows(1, 30, 1.5));
    dataset(2, rows)
}

#[test]
fn every_estimator_reduces_to_mar_without_missing_data() {
    let ds = complete_two_arm();
    let mar = estimate(&ds, Method::Mar, &opts()).unwrap();
    for method in [Method::R2b, Method::J2r, Method::Pw] {
        let r = estimate(&ds, method, &opts()).unwrap();
        for i in 0..2 {
            assert!((r.means[i] - mar.means[i]).abs() < 1e-12, "{method}");
            assert!((r.mean_se(i) - mar.mean_se(i)).abs() < 1e-12, "{method}");
        }
        assert_eq!(r.q, [0.0, 0.0]);
    }
}

#[test]
fn mar_on_complete_data_is_the_sample_mean() {
    let ds = complete_two_arm();
    let r = estimate(&ds, Method::Mar, &opts()).unwrap();
    for arm in 0..2 {
        let s = ds.arm_subjects(arm);
        let mean = s.iter().map(|s| s.outcome(1).unwrap()).sum::<f64>() / s.len() as f64;
        assert!((r.means[arm] - mean).abs() < 1e-10);
    }
}

#[test]
fn jump_to_reference_leaves_the_reference_arm_at_mar() {
    let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 31);
    let mar = estimate(&ds, Method::Mar, &opts()).unwrap();
    let j2r = estimate(&ds, Method::J2r, &opts()).unwrap();
    assert_eq!(j2r.means[0], mar.means[0]);
    assert_eq!(j2r.joint_cov[(0, 0)], mar.joint_cov[(0, 0)]);
}

#[test]
fn jump_to_reference_without_pattern_b_adds_independent_variances() {
    let mut rows = two_visit_rows(0, 30, 1.0);
    for r in rows.iter_mut().step_by(4) {
        r.2[1] = None;
        r.3 = Some(vec![true, false]);
    }
    rows.extend(two_visit_rows(1, 30, 1.5));
    let ds = dataset(2, rows);
    let mar = estimate(&ds, Method::Mar, &opts()).unwrap();
    let j2r = estimate(&ds, Method::J2r, &opts()).unwrap();
    assert_eq!(j2r.q[1], 0.0);
    assert!((j2r.means[1] - mar.means[1]).abs() < 1e-12);
    let c = j2r.contrast(1).unwrap();
    let expected = mar.joint_cov[(0, 0)] + mar.joint_cov[(1, 1)];
    assert!((c.se * c.se - expected).abs() < 1e-12);
}

#[test]
fn return_to_baseline_mixes_mar_and_baseline_means() {
    let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 32);
    let mar = estimate(&ds, Method::Mar, &opts()).unwrap();
    let r2b = estimate(&ds, Method::R2b, &opts()).unwrap();
    for arm in 0..2 {
        let s = ds.arm_subjects(arm);
        let n = s.len() as f64;
        let pi = s.iter().filter(|s| !s.observed_final() && !s.pattern_a_final()).count() as f64 / n;
        let base = s.iter().map(|s| s.covariates()[0]).sum::<f64>() / n;
        let expected = (1.0 - pi) * mar.means[arm] + pi * base;
        assert!((r2b.means[arm] - expected).abs() < 1e-12);
    }
}

#[test]
fn placebo_washout_with_flat_placebo_regression() {
    // Placebo: complete, endpoint regression on x has slope 0 and intercept 3.
    let mut rows = Vec::new();
    for (j, (x, y)) in
        [(-1.0, 2.0), (1.0, 2.0), (-1.0, 4.0), (1.0, 4.0), (-2.0, 3.0), (2.0, 3.0)].into_iter().enumerate()
    {
        rows.push((0, x, vec![Some(0.5 * y + 0.1 * j as f64), Some(y)], Some(vec![true, true])));
    }
    let treated = two_visit_rows(1, 24, 1.5);
    let mut completers = Vec::new();
    for (j, mut r) in treated.into_iter().enumerate() {
        if j % 3 == 0 {
            r.2[1] = None;
            r.3 = Some(vec![true, false]);
        } else {
            completers.push(r.2[1].unwrap());
        }
        rows.push(r);
    }
    let ds = dataset(2, rows);
    let pw = estimate(&ds, Method::Pw, &opts()).unwrap();
    let pi = 8.0 / 24.0;
    let completer_mean = completers.iter().sum::<f64>() / completers.len() as f64;
    let expected = (1.0 - pi) * completer_mean + pi * 3.0;
    assert!((pw.means[1] - expected).abs() < 1e-10, "{} vs {expected}", pw.means[1]);
}

#[test]
fn retrieved_dropout_forms_agree_on_complete_pattern_a() {
    for seed in 0..5 {
        let ds = common::study_dataset(ScenarioKind::Rd, Effect::Differential, 40 + seed);
        assert!(ds.subjects().iter().all(|s| !s.pattern_a_final() || (0..4).all(|k| s.observed(k))));
        let rd = estimate(&ds, Method::Rd, &opts()).unwrap();
        let pure = estimate(&ds, Method::RdPure, &opts()).unwrap();
        for i in 0..2 {
            assert!((rd.means[i] - pure.means[i]).abs() < 1e-8, "{} vs {}", rd.means[i], pure.means[i]);
        }
    }
}

#[test]
fn identical_arms_give_a_null_contrast() {
    let mut rows = two_visit_rows(0, 30, 1.0);
    let copy: Vec<_> = rows
        .iter()
        .cloned()
        .map(|mut r| {
            r.0 = 1;
            r
        })
        .collect();
    rows.extend(copy);
    let ds = dataset(2, rows);
    for method in [Method::Mar, Method::R2b, Method::J2r] {
        let c = estimate(&ds, method, &opts()).unwrap().contrast(1).unwrap();
        assert!(c.estimate.abs() < 1e-12);
        assert!((c.p_value - 1.0).abs() < 1e-9);
    }
}

#[test]
fn adjustment_without_covariate_correlation_changes_nothing() {
    let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 33);
    let mut r = estimate(&ds, Method::J2r, &opts()).unwrap();
    let ny = 2 * r.arms();
    let total = r.joint_cov.nrows();
    for a in 0..ny {
        for b in ny..total {
            r.joint_cov[(a, b)] = 0.0;
            r.joint_cov[(b, a)] = 0.0;
        }
    }
    let adj = adjust_baseline(&r, None).unwrap();
    assert_eq!(adj.means, r.means);
    for a in 0..ny {
        for b in 0..ny {
            assert!((adj.joint_cov[(a, b)] - r.joint_cov[(a, b)]).abs() < 1e-15);
        }
    }
}

#[test]
fn adjustment_is_inert_when_arms_are_balanced() {
    let mut rows = two_visit_rows(0, 30, 1.0);
    rows.extend(two_visit_rows(1, 30, 1.5));
    let ds = dataset(2, rows);
    let r = estimate(&ds, Method::Mar, &opts()).unwrap();
    assert!((r.nu[0][0] - r.nu[1][0]).abs() < 1e-12);
    let adj = adjust_baseline(&r, None).unwrap();
    for i in 0..2 {
        assert!((adj.means[i] - r.means[i]).abs() < 1e-12);
    }
}

#[test]
fn adjustment_reduces_contrast_variance_on_average() {
    let (mut raw, mut adj) = (0.0, 0.0);
    let reps = 2000;
    for seed in 0..reps {
        let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 10_000 + seed);
        let r = estimate(&ds, Method::R2b, &opts()).unwrap();
        raw += r.contrast(1).unwrap().se.powi(2);
        adj += adjust_baseline(&r, None).unwrap().contrast(1).unwrap().se.powi(2);
    }
    assert!(adj <= raw, "adjusted {} vs unadjusted {}", adj / reps as f64, raw / reps as f64);
}
