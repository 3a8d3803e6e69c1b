//! Monte Carlo harness: scenario generator, retrieved-dropout count
//! enforcement, truth oracle and the replicate loop that produces bias, SD,
//! SE and coverage tables.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{derive_indicators, LongitudinalDataset, PatternRule, Subject, VisitSchedule};
use crate::estimators::{estimate, EstimateOptions, Method};
use crate::mi::{run_mi, ImputationConfig};
use crate::parallel::{map_indexed, Execution};
use crate::{normal, rng, PmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Monotone dropout driven by the previous outcome; `A = R`.
    Pmm,
    /// Adherence generated first, retrieved dropouts among non-adherers.
    Rd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    Null,
    Differential,
}

impl Effect {
    pub fn label(&self) -> &'static str {
        match self {
            Effect::Null => "null",
            Effect::Differential => "differential",
        }
    }
}

/// Generative parameters for two arms, placebo first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub kind: ScenarioKind,
    pub effect: Effect,
    pub n_per_arm: usize,
    /// Mean vectors including the baseline, one per arm.
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    /// `(intercept, slope)` of the logistic for staying observed (PMM) or
    /// staying adherent (RD), one per arm.
    pub logit: Vec<[f64; 2]>,
    pub rd_target: usize,
    /// Endpoint multiplier for non-adherers in the RD kind.
    pub deterioration: f64,
    /// Switch dropout and non-adherence off entirely.
    pub missingness: bool,
}

const MU0: [f64; 5] = [0.0, 1.0, 1.8, 2.5, 3.0];
const MU1: [f64; 5] = [0.0, 1.3, 2.3, 3.2, 4.0];
const SIGMA: [f64; 5] = [2.0, 1.8, 2.0, 2.1, 2.2];
const RHO: [[f64; 5]; 5] = [
    [1.0, 0.6, 0.3, 0.2, 0.1],
    [0.6, 1.0, 0.7, 0.5, 0.2],
    [0.3, 0.7, 1.0, 0.6, 0.4],
    [0.2, 0.5, 0.6, 1.0, 0.5],
    [0.1, 0.2, 0.4, 0.5, 1.0],
];

impl SimulationScenario {
    /// The published two-arm settings with 100 subjects per arm.
    pub fn standard(kind: ScenarioKind, effect: Effect) -> Self {
        let mu = match effect {
            Effect::Null => vec![MU0.to_vec(), MU0.to_vec()],
            Effect::Differential => vec![MU0.to_vec(), MU1.to_vec()],
        };
        let logit = match (kind, effect) {
            (ScenarioKind::Pmm, Effect::Null) => vec![[3.0, -0.2], [3.0, -0.2]],
            (ScenarioKind::Pmm, Effect::Differential) => vec![[3.2, -0.2], [2.8, -0.2]],
            (ScenarioKind::Rd, Effect::Null) => vec![[4.0, -0.2], [4.0, -0.2]],
            (ScenarioKind::Rd, Effect::Differential) => vec![[4.0, -0.2], [3.6, -0.2]],
        };
        Self {
            kind,
            effect,
            n_per_arm: 100,
            mu,
            sigma: SIGMA.to_vec(),
            rho: RHO.iter().map(|r| r.to_vec()).collect(),
            logit,
            rd_target: 5,
            deterioration: 0.5,
            missingness: true,
        }
    }

    /// Post-baseline visits.
    pub fn visits(&self) -> usize {
        self.sigma.len().saturating_sub(1)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.sigma.len();
        DMatrix::from_fn(d, d, |a, b| self.sigma[a] * self.rho[a][b] * self.sigma[b])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.sigma.len();
        let bad = |m: &str| Err(PmmError::InvalidArgument(format!("scenario: {m}")));
        if d < 2 {
            return bad("need a baseline and at least one visit");
        }
        if self.mu.len() != 2 || self.logit.len() != 2 {
            return bad("exactly two arms are supported");
        }
        if self.mu.iter().any(|m| m.len() != d) || self.rho.len() != d || self.rho.iter().any(|r| r.len() != d) {
            return bad("inconsistent lengths");
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return bad("standard deviations must be positive");
        }
        for a in 0..d {
            for b in 0..d {
                if self.rho[a][b] != self.rho[b][a] {
                    return bad("correlation matrix is not symmetric");
                }
            }
        }
        if self.covariance().cholesky().is_none() {
            return bad("correlation matrix is not positive definite");
        }
        if self.n_per_arm < 2 {
            return bad("need at least two subjects per arm");
        }
        Ok(())
    }

    fn arms_identical(&self) -> bool {
        self.mu[0] == self.mu[1] && self.logit[0] == self.logit[1]
    }
}

/// Full-data record of one simulated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSubject {
    /// Outcomes at baseline and every visit, before any deterioration.
    pub y: Vec<f64>,
    pub adherent: Vec<bool>,
    pub observed: Vec<bool>,
}

/// Simulated subjects per arm with their complete outcomes, so that
/// indicators can be rewritten before missing cells are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub arms: Vec<Vec<CohortSubject>>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn simulate_subject<R: Rng + ?Sized>(
    sc: &SimulationScenario,
    arm: usize,
    chol: &DMatrix<f64>,
    rng: &mut R,
) -> CohortSubject {
    let d = sc.sigma.len();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = chol * z;
    let y: Vec<f64> = (0..d).map(|a| sc.mu[arm][a] + e[a]).collect();
    let k = d - 1;
    let [g1, g2] = sc.logit[arm];
    let mut adherent = vec![true; k];
    let mut observed = vec![true; k];
    if sc.missingness {
        match sc.kind {
            ScenarioKind::Pmm => {
                let mut stay = true;
                for v in 0..k {
                    if stay {
                        stay = rng.random::<f64>() < logistic(g1 + g2 * y[v]);
                    }
                    observed[v] = stay;
                    adherent[v] = stay;
                }
            }
            ScenarioKind::Rd => {
                let (mut adh, mut obs) = (true, true);
                for v in 0..k {
                    if adh {
                        adh = rng.random::<f64>() < logistic(g1 + g2 * y[v]);
                    }
                    if !adh && obs {
                        obs = rng.random::<f64>() < 0.5;
                    }
                    adherent[v] = adh;
                    observed[v] = obs;
                }
            }
        }
    }
    CohortSubject { y, adherent, observed }
}

fn cohort_with_keys(sc: &SimulationScenario, n_per_arm: usize, seed: u64, shared: bool) -> Result<Cohort> {
    sc.validate()?;
    let chol = sc.covariance().cholesky().expect("validated").l();
    let arms = (0..2)
        .map(|arm| {
            let key = if shared { 0 } else { arm as u64 };
            (0..n_per_arm).map(|j| simulate_subject(sc, arm, &chol, &mut rng::stream(seed, &[key, j as u64]))).collect()
        })
        .collect();
    Ok(Cohort { arms })
}

/// Draw `n_per_arm` subjects per arm. Each subject has its own random
/// stream keyed by `(seed, arm, subject)`.
pub fn generate_cohort(sc: &SimulationScenario, n_per_arm: usize, seed: u64) -> Result<Cohort> {
    cohort_with_keys(sc, n_per_arm, seed, false)
}

/// Endpoint percentages for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub missing_pct: f64,
    pub adherent_pct: f64,
}

pub fn cohort_summary(cohort: &Cohort) -> Vec<ArmSummary> {
    cohort
        .arms
        .iter()
        .map(|subjects| {
            let n = subjects.len() as f64;
            let missing = subjects.iter().filter(|s| !*s.observed.last().unwrap()).count() as f64;
            let adherent = subjects.iter().filter(|s| *s.adherent.last().unwrap()).count() as f64;
            ArmSummary { missing_pct: 100.0 * missing / n, adherent_pct: 100.0 * adherent / n }
        })
        .collect()
}

/// What [`enforce_rd_count`] did to one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RdEnforcement {
    pub arm: usize,
    /// Retrieved dropouts before enforcement.
    pub initial: usize,
    /// Non-adherent subjects with a missing endpoint before enforcement.
    pub initial_missing: usize,
    /// Retrieved dropouts whose endpoint was masked.
    pub masked: usize,
    /// Non-adherent missing subjects made fully observed.
    pub promoted: usize,
    /// Adherers switched to non-adherent at the endpoint.
    pub demoted: usize,
}

/// Force exactly `target` endpoint retrieved dropouts per arm: mask the
/// surplus, otherwise unmask non-adherent missing subjects, and if those run
/// out switch randomly chosen adherers to non-adherent.
///
/// Works on the full-data cohort because unmasking needs the outcomes.
pub fn enforce_rd_count<R: Rng + ?Sized>(
    cohort: &mut Cohort,
    target: usize,
    rng: &mut R,
) -> Result<Vec<RdEnforcement>> {
    let mut report = Vec::with_capacity(cohort.arms.len());
    for (arm, subjects) in cohort.arms.iter_mut().enumerate() {
        if subjects.len() < target {
            return Err(PmmError::InfeasibleTarget { arm, arm_size: subjects.len(), target });
        }
        let last = subjects[0].observed.len() - 1;
        let rds: Vec<usize> =
            (0..subjects.len()).filter(|&j| !subjects[j].adherent[last] && subjects[j].observed[last]).collect();
        let missing: Vec<usize> =
            (0..subjects.len()).filter(|&j| !subjects[j].adherent[last] && !subjects[j].observed[last]).collect();
        let (a, b) = (rds.len(), missing.len());
        let mut e = RdEnforcement { arm, initial: a, initial_missing: b, masked: 0, promoted: 0, demoted: 0 };
        if a > target {
            let keep = sample(rng, a, target);
            let mut kept = vec![false; a];
            for i in keep.iter() {
                kept[i] = true;
            }
            for (i, &j) in rds.iter().enumerate() {
                if !kept[i] {
                    subjects[j].observed[last] = false;
                    e.masked += 1;
                }
            }
        } else if a < target {
            let chosen: Vec<usize> = if a + b >= target {
                sample(rng, b, target - a).iter().map(|i| missing[i]).collect()
            } else {
                missing.clone()
            };
            for &j in &chosen {
                subjects[j].observed.iter_mut().for_each(|o| *o = true);
                e.promoted += 1;
            }
            if a + b < target {
                let adherers: Vec<usize> = (0..subjects.len()).filter(|&j| subjects[j].adherent[last]).collect();
                let need = target - a - b;
                if adherers.len() < need {
                    return Err(PmmError::InfeasibleTarget { arm, arm_size: subjects.len(), target });
                }
                for i in sample(rng, adherers.len(), need).iter() {
                    let j = adherers[i];
                    subjects[j].adherent[last] = false;
                    subjects[j].observed[last] = true;
                    e.demoted += 1;
                }
            }
        }
        report.push(e);
    }
    Ok(report)
}

/// Endpoint retrieved dropouts per arm.
pub fn rd_counts(cohort: &Cohort) -> Vec<usize> {
    cohort
        .arms
        .iter()
        .map(|s| s.iter().filter(|c| !*c.adherent.last().unwrap() && *c.observed.last().unwrap()).count())
        .collect()
}

/// Mask the cohort into a dataset with baseline covariate `y0`, arms `P`
/// and `E`, and indicators already attached.
pub fn dataset_from_cohort(sc: &SimulationScenario, cohort: &Cohort) -> Result<LongitudinalDataset> {
    let k = sc.visits();
    let mut subjects = Vec::new();
    for (arm, members) in cohort.arms.iter().enumerate() {
        let prefix = if arm == 0 { "P" } else { "E" };
        for (j, c) in members.iter().enumerate() {
            let outcomes = (0..k)
                .map(|v| {
                    c.observed[v].then(|| {
                        let y = c.y[v + 1];
                        if sc.kind == ScenarioKind::Rd && v == k - 1 && !c.adherent[v] {
                            y * sc.deterioration
                        } else {
                            y
                        }
                    })
                })
                .collect();
            subjects.push(
                Subject::new(format!("{prefix}{:04}", j + 1), arm, vec![c.y[0]], outcomes)
                    .with_adherence(c.adherent.iter().map(|&a| Some(a)).collect())
                    .with_pattern(c.adherent.clone()),
            );
        }
    }
    LongitudinalDataset::new(
        VisitSchedule::numbered(k)?,
        vec!["P".into(), "E".into()],
        vec!["y0".into()],
        Some(0),
        subjects,
    )
}

/// One simulated trial. The RD kind enforces the retrieved-dropout target
/// before masking.
pub fn generate_dataset(sc: &SimulationScenario, seed: u64) -> Result<LongitudinalDataset> {
    let mut cohort = generate_cohort(sc, sc.n_per_arm, seed)?;
    if sc.kind == ScenarioKind::Rd && sc.missingness {
        enforce_rd_count(&mut cohort, sc.rd_target, &mut rng::stream(seed, &[u64::MAX]))?;
    }
    dataset_from_cohort(sc, &cohort)
}

/// Monte Carlo truth with standard errors over batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    pub method: Method,
    pub arms: Vec<f64>,
    pub arms_mc_se: Vec<f64>,
    pub diff: f64,
    pub diff_mc_se: f64,
}

const ORACLE_BATCHES: usize = 20;

fn mean_of<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// OLS of `y` on `(1, x)`.
fn simple_regression(pairs: &[(f64, f64)]) -> (f64, f64) {
    let mx = mean_of(pairs.iter().map(|p| p.0));
    let my = mean_of(pairs.iter().map(|p| p.1));
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Estimand values of both arms evaluated on full data.
fn cohort_truth(sc: &SimulationScenario, cohort: &Cohort, method: Method) -> [f64; 2] {
    let k = sc.visits();
    let last = k - 1;
    let endpoint = |c: &CohortSubject| {
        if sc.kind == ScenarioKind::Rd && !c.adherent[last] {
            c.y[k] * sc.deterioration
        } else {
            c.y[k]
        }
    };
    let pattern_b = |c: &CohortSubject| !c.adherent[last] && !c.observed[last];
    let arm = |i: usize| &cohort.arms[i];
    let mar = |i: usize| mean_of(arm(i).iter().map(|c| c.y[k]));
    let pi = |i: usize| mean_of(arm(i).iter().map(|c| f64::from(u8::from(pattern_b(c)))));
    let y0 = |i: usize| mean_of(arm(i).iter().map(|c| c.y[0]));
    let value = |i: usize| -> f64 {
        match method {
            Method::Mar => mar(i),
            Method::R2b => (1.0 - pi(i)) * mar(i) + pi(i) * y0(i),
            Method::J2r => (1.0 - pi(i)) * mar(i) + pi(i) * mar(0),
            Method::Pw if i == 0 => mar(0),
            Method::Pw => {
                let pairs: Vec<(f64, f64)> = arm(0).iter().map(|c| (c.y[0], c.y[k])).collect();
                let (b0, b1) = simple_regression(&pairs);
                let nonadh_x = mean_of(arm(i).iter().filter(|c| !c.adherent[last]).map(|c| c.y[0]));
                let adh_y = mean_of(arm(i).iter().filter(|c| c.adherent[last]).map(|c| c.y[k]));
                (1.0 - pi(i)) * adh_y + pi(i) * (b0 + b1 * nonadh_x)
            }
            Method::Rd | Method::RdPure => {
                let phi = mean_of(arm(i).iter().map(|c| f64::from(u8::from(c.adherent[last]))));
                let adh_y = mean_of(arm(i).iter().filter(|c| c.adherent[last]).map(endpoint));
                let pairs: Vec<(f64, f64)> =
                    arm(i).iter().filter(|c| !c.adherent[last]).map(|c| (c.y[0], endpoint(c))).collect();
                let (b0, b1) = simple_regression(&pairs);
                let nonadh_x = mean_of(pairs.iter().map(|p| p.0));
                phi * adh_y + (1.0 - phi) * (b0 + b1 * nonadh_x)
            }
        }
    };
    [value(0), value(1)]
}

/// Evaluate the estimand formulas on a giant cohort (at least one million
/// subjects per arm) split into batches for a Monte Carlo standard error.
/// Arms with identical parameters share their draws, so symmetric
/// estimands have an exactly zero difference.
pub fn true_value(sc: &SimulationScenario, method: Method, n_oracle: usize, seed: u64) -> Result<TrueValue> {
    true_value_with(sc, method, n_oracle, seed, Execution::default())
}

/// [`true_value`] with an explicit execution mode. The result does not
/// depend on it.
pub fn true_value_with(
    sc: &SimulationScenario,
    method: Method,
    n_oracle: usize,
    seed: u64,
    exec: Execution,
) -> Result<TrueValue> {
    if n_oracle < 1_000_000 {
        return Err(PmmError::InvalidArgument(format!("oracle size {n_oracle} is below the minimum of 1000000")));
    }
    let per_batch = n_oracle / ORACLE_BATCHES;
    let shared = sc.arms_identical();
    let batches: Vec<[f64; 2]> = map_indexed(ORACLE_BATCHES, exec, |b| {
        cohort_with_keys(sc, per_batch, rng::derive_seed(seed, &[b as u64]), shared)
            .map(|c| cohort_truth(sc, &c, method))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let summarize = |vals: Vec<f64>| {
        let m = mean_of(vals.iter().copied());
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        (m, (var / vals.len() as f64).sqrt())
    };
    let a0 = summarize(batches.iter().map(|b| b[0]).collect());
    let a1 = summarize(batches.iter().map(|b| b[1]).collect());
    let d = summarize(batches.iter().map(|b| b[1] - b[0]).collect());
    Ok(TrueValue { method, arms: vec![a0.0, a1.0], arms_mc_se: vec![a0.1, a1.1], diff: d.0, diff_mc_se: d.1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Direct,
    Mi,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Direct => "direct",
            Estimator::Mi => "MI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    pub direct: bool,
    /// Imputations per replicate; `None` skips the MI comparator.
    pub mi_imputations: Option<usize>,
    pub oracle_size: usize,
    pub exec: Execution,
}

impl StudyConfig {
    pub fn new(methods: Vec<Method>, reps: usize, seed: u64) -> Self {
        Self {
            methods,
            reps,
            seed,
            direct: true,
            mi_imputations: None,
            oracle_size: 1_000_000,
            exec: Execution::default(),
        }
    }
}

/// Summary of one (method, estimator, group) cell over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub estimator: Estimator,
    /// Arm label, or `E-P` for the difference.
    pub group: String,
    pub truth: f64,
    pub truth_mc_se: f64,
    pub bias: f64,
    pub bias_mc_se: f64,
    pub sd: f64,
    pub sd_mc_se: f64,
    pub se: f64,
    pub se_mc_se: f64,
    pub cp: f64,
    pub cp_mc_se: f64,
    pub reps_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub scenario: SimulationScenario,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

impl StudyMetrics {
    pub fn row(&self, method: Method, estimator: Estimator, group: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.estimator == estimator && r.group == group)
    }

    /// Table-shaped CSV: Setting, Method, Group, True, Bias, SD, SE, CP.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["Setting", "Method", "Group", "True", "Bias", "SD", "SE", "CP"])?;
        for r in &self.rows {
            w.write_record([
                self.scenario.effect.label().to_string(),
                format!("{} {}", r.method.name(), r.estimator.label()),
                r.group.clone(),
                format!("{:.3}", r.truth),
                format!("{:.3}", r.bias),
                format!("{:.3}", r.sd),
                format!("{:.3}", r.se),
                format!("{:.3}", r.cp),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(estimate, se, lower, upper)` for P, E and E-P.
type Triple = [(f64, f64, f64, f64); 3];

fn direct_replicate(ds: &LongitudinalDataset, method: Method) -> Result<Triple> {
    let r = estimate(ds, method, &EstimateOptions::default())?;
    let z = normal::quantile(0.975);
    let arm = |i: usize| {
        let (e, s) = (r.means[i], r.mean_se(i));
        (e, s, e - z * s, e + z * s)
    };
    let c = r.contrast(1)?;
    Ok([arm(0), arm(1), (c.estimate, c.se, c.ci_lower, c.ci_upper)])
}

fn mi_replicate(ds: &LongitudinalDataset, method: Method, m: usize, seed: u64) -> Result<Triple> {
    let mut cfg = ImputationConfig::new(method, m, seed);
    cfg.exec = Execution::Sequential;
    let r = run_mi(ds, &cfg)?;
    let t = |p: &crate::mi::PooledResult| (p.estimate, p.se, p.ci_lower, p.ci_upper);
    Ok([t(&r.arms[0]), t(&r.arms[1]), t(&r.contrasts[0])])
}

fn summarize_cell(
    method: Method,
    estimator: Estimator,
    group: String,
    truth: f64,
    truth_mc_se: f64,
    draws: &[(f64, f64, f64, f64)],
    failures: usize,
) -> MetricRow {
    let n = draws.len() as f64;
    let mean = mean_of(draws.iter().map(|d| d.0));
    let var = draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let se = mean_of(draws.iter().map(|d| d.1));
    let se_var = draws.iter().map(|d| (d.1 - se).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let cp = mean_of(draws.iter().map(|d| f64::from(u8::from(d.2 <= truth && truth <= d.3))));
    MetricRow {
        method,
        estimator,
        group,
        truth,
        truth_mc_se,
        bias: mean - truth,
        bias_mc_se: sd / n.sqrt(),
        sd,
        sd_mc_se: sd / (2.0 * (n - 1.0)).max(1.0).sqrt(),
        se,
        se_mc_se: (se_var / n).sqrt(),
        cp,
        cp_mc_se: (cp * (1.0 - cp) / n).sqrt(),
        reps_used: draws.len(),
        failures,
    }
}

/// Replicate loop. Replicate `r` uses seed `derive_seed(seed, [r])`, so
/// results do not depend on the execution mode. Failed replicates are
/// excluded and counted; one percent or more aborts the study.
pub fn run_study(sc: &SimulationScenario, cfg: &StudyConfig) -> Result<StudyMetrics> {
    sc.validate()?;
    if cfg.reps < 100 {
        return Err(PmmError::InvalidArgument(format!("{} replicates requested; at least 100 are required", cfg.reps)));
    }
    if cfg.methods.is_empty() {
        return Err(PmmError::InvalidArgument("no methods requested".into()));
    }
    let mut estimators = Vec::new();
    if cfg.direct {
        estimators.push(Estimator::Direct);
    }
    if let Some(m) = cfg.mi_imputations {
        if m < 2 {
            return Err(PmmError::InvalidArgument("at least two imputations are required".into()));
        }
        estimators.push(Estimator::Mi);
    }
    let cells: Vec<(usize, Method, Estimator)> =
        cfg.methods.iter().enumerate().flat_map(|(mi, &m)| estimators.iter().map(move |&e| (mi, m, e))).collect();

    let results: Vec<Vec<std::result::Result<Triple, String>>> = map_indexed(cfg.reps, cfg.exec, |r| {
        let seed = rng::derive_seed(cfg.seed, &[r as u64]);
        let ds = match generate_dataset(sc, seed) {
            Ok(ds) => ds,
            Err(e) => return vec![Err(e.to_string()); cells.len()],
        };
        cells
            .iter()
            .map(|&(mi, method, est)| {
                let out = match est {
                    Estimator::Direct => direct_replicate(&ds, method),
                    Estimator::Mi => {
                        mi_replicate(&ds, method, cfg.mi_imputations.unwrap(), rng::derive_seed(seed, &[1 + mi as u64]))
                    }
                };
                out.map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut truths = std::collections::HashMap::new();
    for (c, &(_, method, est)) in cells.iter().enumerate() {
        let mut draws: Vec<Triple> = Vec::with_capacity(cfg.reps);
        let mut failures = 0;
        let mut first_error = None;
        for rep in &results {
            match &rep[c] {
                Ok(t) => draws.push(*t),
                Err(e) => {
                    failures += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
            }
        }
        if failures * 100 >= cfg.reps {
            return Err(PmmError::StudyAborted {
                failures,
                reps: cfg.reps,
                first_error: format!("{} {}: {}", method.name(), est.label(), first_error.unwrap_or_default()),
            });
        }
        if !truths.contains_key(&method) {
            truths.insert(
                method,
                true_value_with(sc, method, cfg.oracle_size, rng::derive_seed(cfg.seed, &[u64::MAX]), cfg.exec)?,
            );
        }
        let tv = &truths[&method];
        let groups = [
            ("P".to_string(), tv.arms[0], tv.arms_mc_se[0]),
            ("E".to_string(), tv.arms[1], tv.arms_mc_se[1]),
            ("E-P".to_string(), tv.diff, tv.diff_mc_se),
        ];
        for (g, (label, truth, tse)) in groups.into_iter().enumerate() {
            let col: Vec<(f64, f64, f64, f64)> = draws.iter().map(|t| t[g]).collect();
            rows.push(summarize_cell(method, est, label, truth, tse, &col, failures));
        }
    }
    Ok(StudyMetrics { scenario: sc.clone(), reps: cfg.reps, seed: cfg.seed, rows })
}

/// Seed of the shipped synthetic diabetes-trial dataset.
pub const AWARD_SEED: u64 = 20_150_126;

/// Arm labels, sizes and endpoint cell counts
/// `(adherent observed, adherent missing, retrieved, non-adherent missing)`.
pub const AWARD_ARMS: [(&str, [usize; 4]); 3] =
    [("placebo", [122, 2, 5, 12]), ("dula_0.75", [255, 1, 9, 15]), ("dula_1.5", [254, 0, 9, 16])];

/// Calibration targets per arm: RD mean change and its standard error.
pub const AWARD_TARGETS: [(f64, f64); 3] = [(-0.66, 0.08), (-1.30, 0.06), (-1.53, 0.05)];

/// Synthetic two-visit HbA1c trial matching the published discontinuation
/// and missing-data counts, calibrated so that retrieved-dropout estimation
/// reproduces the published arm means and standard errors.
pub fn award_lookalike(seed: u64) -> Result<LongitudinalDataset> {
    let adherent_mean = [-0.55, -1.35, -1.6];
    let nonadherent_shift = [0.3, 0.6, 0.6];
    let mut subjects = Vec::new();
    for (arm, (_, counts)) in AWARD_ARMS.iter().enumerate() {
        let mut j = 0u64;
        for (cell, &count) in counts.iter().enumerate() {
            let adherent_final = cell < 2;
            let observed_final = cell == 0 || cell == 2;
            for _ in 0..count {
                let mut r = rng::stream(seed, &[arm as u64, j]);
                j += 1;
                let bl = ((7.6 + 0.9 * r.sample::<f64, _>(StandardNormal)) * 10.0).round() / 10.0;
                let z1: f64 = r.sample(StandardNormal);
                let z2: f64 = r.sample(StandardNormal);
                let e13 = 0.8 * z1;
                let e26 = 0.9 * (0.6 * z1 + 0.8 * z2);
                let slope = -0.3 * (bl - 7.6);
                let early_stop = !adherent_final && r.random::<f64>() < 0.4;
                let shift = if adherent_final { 0.0 } else { nonadherent_shift[arm] };
                let y13 = 0.8 * adherent_mean[arm] + slope + e13 + if early_stop { shift } else { 0.0 };
                let y26 = adherent_mean[arm] + slope + e26 + shift;
                let observed_13 = observed_final || r.random::<f64>() < 0.5;
                let adherence = vec![Some(!early_stop), Some(adherent_final)];
                subjects.push(
                    Subject::new(
                        format!("{}-{:03}", ["PBO", "D075", "D150"][arm], j),
                        arm,
                        vec![bl],
                        vec![observed_13.then_some(y13), observed_final.then_some(y26)],
                    )
                    .with_adherence(adherence),
                );
            }
        }
    }
    let raw = LongitudinalDataset::new(
        VisitSchedule::new(vec!["13".into(), "26".into()])?,
        AWARD_ARMS.iter().map(|a| a.0.to_string()).collect(),
        vec!["hba1c_bl".into()],
        None,
        subjects,
    )?;
    let rule = PatternRule::AdherenceDerived { missing_is_pattern_b: true };
    let transform = |ds: &LongitudinalDataset, f: &dyn Fn(usize, f64) -> f64| -> Result<LongitudinalDataset> {
        let subjects = ds
            .subjects()
            .iter()
            .map(|s| s.with_outcomes(s.outcomes().iter().map(|y| y.map(|v| f(s.arm(), v))).collect()))
            .collect();
        ds.with_subjects(subjects)
    };
    let fit =
        |ds: &LongitudinalDataset| estimate(&derive_indicators(ds, rule)?, Method::Rd, &EstimateOptions::default());
    let first = fit(&raw)?;
    let scale: Vec<f64> = (0..3).map(|i| AWARD_TARGETS[i].1 / first.mean_se(i)).collect();
    let scaled = transform(&raw, &|i, y| scale[i] * y)?;
    let second = fit(&scaled)?;
    let shift: Vec<f64> = (0..3).map(|i| AWARD_TARGETS[i].0 - second.means[i]).collect();
    let calibrated = transform(&scaled, &|i, y| y + shift[i])?;
    derive_indicators(&calibrated, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cohort(adherent: &[bool], observed: &[bool]) -> Cohort {
        Cohort {
            arms: vec![adherent
                .iter()
                .zip(observed)
                .map(|(&a, &o)| CohortSubject { y: vec![0.0, 1.0], adherent: vec![a], observed: vec![o] })
                .collect()],
        }
    }

    #[test]
    fn surplus_retrieved_dropouts_are_masked() {
        let mut c = tiny_cohort(&[false; 8].iter().chain(&[true; 4]).copied().collect::<Vec<_>>(), &[true; 12]);
        let e = enforce_rd_count(&mut c, 5, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(rd_counts(&c), vec![5]);
        assert_eq!(e[0].masked, 3);
    }

    #[test]
    fn missing_non_adherers_are_promoted() {
        let adh = [false, false, false, false, false, false, false, true, true];
        let obs = [true, true, true, false, false, false, false, true, true];
        let mut c = tiny_cohort(&adh, &obs);
        let e = enforce_rd_count(&mut c, 5, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(rd_counts(&c), vec![5]);
        assert_eq!(e[0].promoted, 2);
        assert_eq!(e[0].demoted, 0);
    }

    #[test]
    fn adherers_are_demoted_when_short() {
        let adh = [false, false, false, true, true, true, true];
        let obs = [true, true, false, true, true, true, true];
        let mut c = tiny_cohort(&adh, &obs);
        let e = enforce_rd_count(&mut c, 5, &mut rng::stream(3, &[])).unwrap();
        assert_eq!(rd_counts(&c), vec![5]);
        assert_eq!((e[0].promoted, e[0].demoted), (1, 2));
    }

    #[test]
    fn small_arm_is_infeasible() {
        let mut c = tiny_cohort(&[true; 3], &[true; 3]);
        assert!(matches!(
            enforce_rd_count(&mut c, 5, &mut rng::stream(4, &[])),
            Err(PmmError::InfeasibleTarget { arm_size: 3, .. })
        ));
    }

    #[test]
    fn saturated_logistic_gives_no_missingness() {
        let mut sc = SimulationScenario::standard(ScenarioKind::Pmm, Effect::Null);
        sc.logit = vec![[50.0, 0.0], [50.0, 0.0]];
        let c = generate_cohort(&sc, 2000, 9).unwrap();
        assert!(cohort_summary(&c).iter().all(|a| a.missing_pct == 0.0));
    }

    #[test]
    fn generated_patterns_are_monotone() {
        for kind in [ScenarioKind::Pmm, ScenarioKind::Rd] {
            let sc = SimulationScenario::standard(kind, Effect::Differential);
            let ds = generate_dataset(&sc, 11).unwrap();
            for s in ds.subjects() {
                assert!(s.is_monotone());
                let a = s.pattern().unwrap();
                assert!(a.windows(2).all(|w| w[0] || !w[1]));
            }
        }
    }

    #[test]
    fn enforcement_holds_on_generated_data() {
        let sc = SimulationScenario::standard(ScenarioKind::Rd, Effect::Differential);
        for seed in 0..20 {
            let ds = generate_dataset(&sc, seed).unwrap();
            for arm in 0..2 {
                let rds = ds.arm_subjects(arm).iter().filter(|s| !s.pattern_a_final() && s.observed_final()).count();
                assert_eq!(rds, 5);
            }
        }
    }
}
