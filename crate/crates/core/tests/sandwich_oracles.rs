mod common;

use pmm_core::sandwich::{assemble_stack, proportion_blocks, ArmBlocks, BlockKind};
use pmm_core::sim::{Effect, ScenarioKind};
use pmm_core::{estimate, rng, EstimateOptions, LongitudinalDataset, Method, Subject, VisitSchedule};
use rand::Rng;

#[test]
fn proportion_se_matches_the_binomial_formula() {
    let n = 10_000;
    let mut r = rng::stream(5, &[]);
    let subjects: Vec<Subject> = (0..n)
        .map(|j| {
            let missing = r.random::<f64>() < 0.25;
            Subject::new(format!("s{j}"), 0, vec![], vec![(!missing).then_some(1.0)]).with_pattern(vec![!missing])
        })
        .collect();
    let refs: Vec<&Subject> = subjects.iter().collect();
    let stack = assemble_stack(&[ArmBlocks { arm: 0, n, blocks: proportion_blocks(&refs) }]).unwrap();
    let at = stack.offset(0, BlockKind::Pi).unwrap();
    let se = stack.covariance[(at, at)].sqrt();
    let binomial = (0.25_f64 * 0.75 / n as f64).sqrt();
    assert!(common::rel_diff(se, binomial) < 0.05, "{se} vs {binomial}");
    // With the estimated proportion the identity is exact.
    let p = stack.theta[at];
    assert!((se - (p * (1.0 - p) / n as f64).sqrt()).abs() < 1e-12);
}

#[test]
fn complete_data_proportions_have_zero_variance() {
    let subjects: Vec<Subject> = (0..20)
        .map(|j| Subject::new(format!("s{j}"), 0, vec![], vec![Some(j as f64)]).with_pattern(vec![true]))
        .collect();
    let refs: Vec<&Subject> = subjects.iter().collect();
    let stack = assemble_stack(&[ArmBlocks { arm: 0, n: 20, blocks: proportion_blocks(&refs) }]).unwrap();
    let at = stack.offset(0, BlockKind::Pi).unwrap();
    assert_eq!(stack.theta[at], 0.0);
    assert_eq!(stack.covariance[(at, at)], 0.0);
}

fn stat_mar(ds: &LongitudinalDataset) -> Option<Vec<f64>> {
    let r = estimate(ds, Method::Mar, &EstimateOptions::default()).ok()?;
    Some(vec![r.means[0], r.means[1], r.q[0], r.q[1]])
}

#[test]
fn joint_mean_and_proportion_covariance_matches_bootstrap() {
    let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 101);
    let r = estimate(&ds, Method::Mar, &EstimateOptions::default()).unwrap();
    let boot = common::Bootstrap::run(&ds, 2000, 7, stat_mar);
    assert_eq!(boot.failures, 0);
    let idx = [0, 1, r.q_index(0), r.q_index(1)];
    for (b, &i) in idx.iter().enumerate() {
        let sandwich = r.joint_cov[(i, i)].sqrt();
        assert!(common::rel_diff(sandwich, boot.sd(b)) < 0.10, "component {b}: {sandwich} vs {}", boot.sd(b));
    }
    // Within-arm correlation of the mean with its missing share.
    for arm in 0..2 {
        let (m, q) = (idx[arm], idx[2 + arm]);
        let sandwich = r.joint_cov[(m, q)] / (r.joint_cov[(m, m)] * r.joint_cov[(q, q)]).sqrt();
        let b = boot.cov(arm, 2 + arm) / (boot.sd(arm) * boot.sd(2 + arm));
        assert!((sandwich - b).abs() < 0.1, "arm {arm}: {sandwich} vs {b}");
    }
}

#[test]
fn return_to_baseline_variance_matches_bootstrap() {
    let ds = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 202);
    let r = estimate(&ds, Method::R2b, &EstimateOptions::default()).unwrap();
    let boot = common::bootstrap_estimator(&ds, Method::R2b, 2000, 9);
    assert_eq!(boot.failures, 0);
    for (i, se) in common::ses_and_contrast_ses(&r).into_iter().enumerate() {
        assert!(common::rel_diff(se, boot.sd(i)) < 0.10, "component {i}: {se} vs {}", boot.sd(i));
    }
}

#[test]
fn stack_covariance_is_symmetric_psd_and_arm_diagonal() {
    let pmm = common::study_dataset(ScenarioKind::Pmm, Effect::Differential, 8);
    let rd = common::study_dataset(ScenarioKind::Rd, Effect::Differential, 8);
    for method in [Method::Mar, Method::R2b, Method::J2r, Method::Pw, Method::Rd, Method::RdPure] {
        let ds = if matches!(method, Method::Rd | Method::RdPure) { &rd } else { &pmm };
        let r = estimate(ds, method, &EstimateOptions::default()).unwrap();
        let stack = r.stack.as_ref().unwrap();
        let v = &stack.covariance;
        assert!((v - v.transpose()).amax() < 1e-10);
        let ev = v.clone().symmetric_eigen().eigenvalues.min();
        assert!(ev >= -1e-8 * v.trace(), "{method}: {ev}");
        for a in &stack.index {
            for b in stack.index.iter().filter(|b| b.arm != a.arm) {
                for i in a.offset..a.offset + a.len {
                    for j in b.offset..b.offset + b.len {
                        assert_eq!(v[(i, j)], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn mean_block_variance_is_the_n_divisor_variance_over_n() {
    let ys = [1.0, 4.0, 2.5, 7.0, -1.0, 3.0];
    let subjects: Vec<Subject> = ys
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            Subject::new(format!("s{j}"), 0, vec![y], vec![Some([3.0, 1.0, 4.0, 1.0, 5.0, 9.0][j])])
                .with_pattern(vec![true])
        })
        .collect();
    let ds = LongitudinalDataset::new(
        VisitSchedule::numbered(1).unwrap(),
        vec!["P".into()],
        vec!["x".into()],
        None,
        subjects,
    )
    .unwrap();
    let r = estimate(&ds, Method::Mar, &EstimateOptions::default()).unwrap();
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let closed = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n * n);
    let stack = r.stack.unwrap();
    let at = stack.offset(0, BlockKind::Nu).unwrap();
    assert!((stack.covariance[(at, at)] - closed).abs() < 1e-12);
}
