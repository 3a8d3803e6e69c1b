#![allow(dead_code)]

use nalgebra::DMatrix;
use pmm_core::sim::{generate_dataset, Effect, ScenarioKind, SimulationScenario};
use pmm_core::{
    estimate, parallel, rng, EstimandResult, EstimateOptions, Execution, LongitudinalDataset, Method, Subject,
    VisitSchedule,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn study_dataset(kind: ScenarioKind, effect: Effect, seed: u64) -> LongitudinalDataset {
    generate_dataset(&SimulationScenario::standard(kind, effect), seed).unwrap()
}

/// One-covariate dataset built from `(arm, x, outcomes, pattern)` rows.
pub fn dataset(arms: usize, rows: Vec<(usize, f64, Vec<Option<f64>>, Option<Vec<bool>>)>) -> LongitudinalDataset {
    let k = rows[0].2.len();
    let subjects = rows
        .into_iter()
        .enumerate()
        .map(|(j, (arm, x, y, a))| {
            let s = Subject::new(format!("s{j:04}"), arm, vec![x], y);
            match a {
                Some(a) => s.with_pattern(a),
                None => s,
            }
        })
        .collect();
    LongitudinalDataset::new(
        VisitSchedule::numbered(k).unwrap(),
        (0..arms).map(|i| format!("arm{i}")).collect(),
        vec!["y0".into()],
        Some(0),
        subjects,
    )
    .unwrap()
}

/// Clone of `s` under a fresh id, keeping its pattern indicators.
pub fn renamed(s: &Subject, id: String) -> Subject {
    let t = Subject::new(id, s.arm(), s.covariates().to_vec(), s.outcomes().to_vec());
    let t = match s.adherence() {
        Some(a) => t.with_adherence(a.to_vec()),
        None => t,
    };
    match s.pattern() {
        Some(a) => t.with_pattern(a.to_vec()),
        None => t,
    }
}

/// Resample subjects with replacement within each arm.
pub fn resample<R: Rng>(ds: &LongitudinalDataset, rng: &mut R) -> LongitudinalDataset {
    let mut out = Vec::with_capacity(ds.len());
    for arm in 0..ds.arm_count() {
        let members = ds.arm_subjects(arm);
        for _ in 0..members.len() {
            let s = members[rng.random_range(0..members.len())];
            out.push(renamed(s, format!("b{}", out.len())));
        }
    }
    ds.with_subjects(out).unwrap()
}

/// Nonparametric bootstrap of an arbitrary statistic. Resamples on which the
/// statistic fails are skipped and counted.
pub struct Bootstrap {
    pub draws: Vec<Vec<f64>>,
    pub failures: usize,
}

impl Bootstrap {
    pub fn run<F>(ds: &LongitudinalDataset, resamples: usize, seed: u64, stat: F) -> Self
    where
        F: Fn(&LongitudinalDataset) -> Option<Vec<f64>> + Sync,
    {
        let raw = parallel::map_indexed(resamples, Execution::default(), |b| {
            let mut rng = rng::stream(seed, &[b as u64]);
            stat(&resample(ds, &mut rng))
        });
        let failures = raw.iter().filter(|r| r.is_none()).count();
        Self { draws: raw.into_iter().flatten().collect(), failures }
    }

    pub fn sd(&self, i: usize) -> f64 {
        let n = self.draws.len() as f64;
        let m = self.draws.iter().map(|d| d[i]).sum::<f64>() / n;
        (self.draws.iter().map(|d| (d[i] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let n = self.draws.len() as f64;
        let mi = self.draws.iter().map(|d| d[i]).sum::<f64>() / n;
        let mj = self.draws.iter().map(|d| d[j]).sum::<f64>() / n;
        self.draws.iter().map(|d| (d[i] - mi) * (d[j] - mj)).sum::<f64>() / (n - 1.0)
    }
}

/// Per-arm means followed by every contrast.
pub fn means_and_contrasts(r: &EstimandResult) -> Vec<f64> {
    let mut v = r.means.clone();
    v.extend(r.contrasts().iter().map(|c| c.estimate));
    v
}

pub fn ses_and_contrast_ses(r: &EstimandResult) -> Vec<f64> {
    let mut v: Vec<f64> = (0..r.arms()).map(|i| r.mean_se(i)).collect();
    v.extend(r.contrasts().iter().map(|c| c.se));
    v
}

pub fn bootstrap_estimator(ds: &LongitudinalDataset, method: Method, resamples: usize, seed: u64) -> Bootstrap {
    let opts = EstimateOptions::default();
    Bootstrap::run(ds, resamples, seed, |b| estimate(b, method, &opts).ok().map(|r| means_and_contrasts(&r)))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Random problem: `n` subjects, `k` visits, one covariate, arbitrary
/// (possibly non-monotone) missingness.
pub fn random_subjects(seed: u64) -> Vec<Subject> {
    let mut r = rng::stream(seed, &[]);
    let k = r.random_range(2..=5);
    let n = r.random_range(30..=120);
    let miss = r.random_range(0.0..0.3);
    let monotone = r.random::<bool>();
    let mix: Vec<f64> = (0..k * k).map(|_| r.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|j| {
            let x: f64 = r.sample(StandardNormal);
            let z: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
            let mut gone = false;
            let y = (0..k)
                .map(|v| {
                    let e: f64 = (0..k).map(|c| mix[v * k + c] * z[c]).sum::<f64>() + 0.3 * z[v];
                    let missing = r.random::<f64>() < miss;
                    gone = if monotone { gone || missing } else { missing };
                    (!gone).then_some(1.0 + v as f64 + 0.5 * x + e)
                })
                .collect();
            Subject::new(format!("s{j}"), 0, vec![x], y)
        })
        .collect()
}

/// Per-visit OLS on `(1, x)` with the n-divisor residual covariance.
pub fn per_visit_ols(subjects: &[Subject], k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = subjects.len();
    let z = DMatrix::from_fn(n, 2, |j, c| if c == 0 { 1.0 } else { subjects[j].covariates()[0] });
    let y = DMatrix::from_fn(n, k, |j, v| subjects[j].outcome(v).unwrap());
    let zz = (z.transpose() * &z).try_inverse().unwrap();
    let b = &zz * z.transpose() * &y;
    let e = &y - &z * &b;
    let sigma = e.transpose() * e / n as f64;
    let mut beta = Vec::new();
    for v in 0..k {
        beta.extend([b[(0, v)], b[(1, v)]]);
    }
    (beta, sigma)
}
