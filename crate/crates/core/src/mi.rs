//! Multiple-imputation comparator: monotone sequential-regression MAR
//! imputation with posterior draws, pattern shifts, ANCOVA on the completed
//! data, and Rubin pooling.
//!
//! A completed dataset is a `[subject][visit]` matrix in dataset order.
//! Observed cells are copied unchanged. Cells that the analysis never reads
//! (intermediate visits of subjects imputed from a cross-sectional model) are
//! left as NaN.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{LongitudinalDataset, Subject};
use crate::estimators::Method;
use crate::linalg::ols;
use crate::mmrm::{fit_endpoint_regression, CrossSectionalFit, DesignSpec};
use crate::parallel::{map_indexed, Execution};
use crate::{normal, rng, PmmError, Result};

pub type Completed = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub imputations: usize,
    pub seed: u64,
    pub method: Method,
    /// Covariates in the imputation and analysis models; `None` uses all.
    pub design: Option<DesignSpec>,
    pub alpha: f64,
    pub exec: Execution,
}

impl ImputationConfig {
    pub fn new(method: Method, imputations: usize, seed: u64) -> Self {
        Self { imputations, seed, method, design: None, alpha: 0.05, exec: Execution::default() }
    }
}

#[derive(Debug, Clone)]
struct StepFit {
    beta: DVector<f64>,
    /// Lower Cholesky factor of `(Z'Z)^{-1}`.
    chol: DMatrix<f64>,
    rss: f64,
    df: f64,
}

impl StepFit {
    fn from_ols(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let p = z.ncols();
        if z.nrows() <= p {
            return Err(PmmError::InsufficientData(format!(
                "{} observations for {p} imputation-model coefficients",
                z.nrows()
            )));
        }
        let f = ols(z, y).ok_or_else(|| PmmError::RankDeficient("imputation model design is singular".into()))?;
        let chol = f
            .zz_inv
            .clone()
            .cholesky()
            .ok_or_else(|| PmmError::RankDeficient("imputation model design is singular".into()))?
            .l();
        Ok(Self { beta: f.beta, chol, rss: f.rss, df: (f.n - p) as f64 })
    }

    fn from_cross_sectional(f: &CrossSectionalFit) -> Result<Self> {
        let p = f.beta.len();
        let zz_inv = DMatrix::from_row_slice(p, p, &f.zz_inv);
        let chol =
            zz_inv.cholesky().ok_or_else(|| PmmError::RankDeficient("regression design is singular".into()))?.l();
        let df = (f.n_used - p) as f64;
        Ok(Self { beta: DVector::from_vec(f.beta.clone()), chol, rss: f.residual_variance * df, df })
    }

    /// `sigma^2* = RSS / chi^2_df`, `beta* ~ N(beta, sigma^2* (Z'Z)^{-1})`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> StepDraw {
        let chi: f64 = ChiSquared::new(self.df).expect("positive df").sample(rng);
        let sigma = (self.rss.max(0.0) / chi).sqrt();
        let xi = DVector::from_fn(self.beta.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = &self.beta + (&self.chol * xi) * sigma;
        StepDraw { beta: beta.iter().copied().collect(), sigma }
    }
}

#[derive(Debug, Clone)]
struct StepDraw {
    beta: Vec<f64>,
    sigma: f64,
}

impl StepDraw {
    fn sample<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> f64 {
        let mean: f64 = self.beta.iter().zip(z).map(|(b, v)| b * v).sum();
        mean + self.sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Sequential regressions `Y_k ~ (1, x, Y_1..Y_{k-1})` fit on observed cases.
#[derive(Debug, Clone)]
pub struct SequentialModel {
    steps: Vec<Option<StepFit>>,
}

fn predictors(design: &DesignSpec, s: &Subject, prev: &[f64]) -> Vec<f64> {
    let mut z = design.z(s);
    z.extend_from_slice(prev);
    z
}

impl SequentialModel {
    /// Fit the steps needed to impute `subjects`, or every step when
    /// `all_steps` is set.
    pub fn fit(subjects: &[&Subject], design: &DesignSpec, all_steps: bool) -> Result<Self> {
        let k = subjects.first().map(|s| s.visits()).unwrap_or(0);
        if let Some(s) = subjects.iter().find(|s| !s.is_monotone()) {
            return Err(PmmError::NotMonotone { subject: s.id().into() });
        }
        let mut steps = Vec::with_capacity(k);
        for v in 0..k {
            let needed = all_steps || subjects.iter().any(|s| !s.observed(v));
            if !needed {
                steps.push(None);
                continue;
            }
            let rows: Vec<&&Subject> = subjects.iter().filter(|s| s.observed(v)).collect();
            let p = design.p() + v;
            let z = DMatrix::from_fn(rows.len(), p, |i, a| {
                let s = rows[i];
                if a < design.p() {
                    design.z(s)[a]
                } else {
                    s.outcome(a - design.p()).unwrap()
                }
            });
            let y = DVector::from_fn(rows.len(), |i, _| rows[i].outcome(v).unwrap());
            steps.push(Some(StepFit::from_ols(&z, &y)?));
        }
        Ok(Self { steps })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Option<StepDraw>> {
        self.steps.iter().map(|s| s.as_ref().map(|f| f.draw(rng))).collect()
    }
}

/// Fill the missing visits of `s` in `row` from the drawn chain.
fn impute_chain<R: Rng + ?Sized>(
    design: &DesignSpec,
    draws: &[Option<StepDraw>],
    s: &Subject,
    row: &mut [f64],
    observed_prefix: bool,
    rng: &mut R,
) {
    for v in 0..row.len() {
        if observed_prefix && s.observed(v) {
            row[v] = s.outcome(v).unwrap();
            continue;
        }
        let z = predictors(design, s, &row[..v]);
        row[v] = draws[v].as_ref().expect("imputation step fitted").sample(&z, rng);
    }
}

fn initial(ds: &LongitudinalDataset) -> Completed {
    ds.subjects().iter().map(|s| s.outcomes().iter().map(|y| y.unwrap_or(f64::NAN)).collect()).collect()
}

/// `m` completed copies of one arm under MAR.
pub fn impute_mar_monotone<R: Rng + ?Sized>(
    subjects: &[&Subject],
    design: &DesignSpec,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Completed>> {
    let model = SequentialModel::fit(subjects, design, false)?;
    Ok((0..m)
        .map(|_| {
            let draws = model.draw(rng);
            subjects
                .iter()
                .map(|s| {
                    let mut row: Vec<f64> = s.outcomes().iter().map(|y| y.unwrap_or(f64::NAN)).collect();
                    if !s.outcomes().iter().all(Option::is_some) {
                        impute_chain(design, &draws, s, &mut row, true, rng);
                    }
                    row
                })
                .collect()
        })
        .collect())
}

/// Per-arm, per-visit means of a completed dataset.
pub fn completed_means(ds: &LongitudinalDataset, completed: &Completed) -> Vec<Vec<f64>> {
    let k = ds.visits();
    let sizes = ds.arm_sizes();
    let mut out = vec![vec![0.0; k]; ds.arm_count()];
    for (s, row) in ds.subjects().iter().zip(completed) {
        for v in 0..k {
            out[s.arm()][v] += row[v] / sizes[s.arm()] as f64;
        }
    }
    out
}

/// Shift Pattern B missing cells: return-to-baseline moves them by
/// `-mu_ik + baseline_mean`, jump-to-reference by `-mu_ik + mu_0k`, with
/// `mu` the completed-data means of this imputation.
pub fn apply_pattern_shift(
    ds: &LongitudinalDataset,
    method: Method,
    completed: &Completed,
    baseline_mean: f64,
) -> Result<Completed> {
    if !matches!(method, Method::R2b | Method::J2r | Method::Mar) {
        return Err(PmmError::InvalidArgument(format!("no pattern shift is defined for {method}")));
    }
    let mut out = completed.clone();
    if method == Method::Mar {
        return Ok(out);
    }
    let mu = completed_means(ds, completed);
    for (s, row) in ds.subjects().iter().zip(out.iter_mut()) {
        for (v, cell) in row.iter_mut().enumerate() {
            if s.observed(v) || s.pattern_a(v) {
                continue;
            }
            let target = match method {
                Method::R2b => baseline_mean,
                _ => mu[0][v],
            };
            *cell += target - mu[s.arm()][v];
        }
    }
    Ok(out)
}

fn pooled_baseline_mean(ds: &LongitudinalDataset) -> f64 {
    match ds.baseline_outcome() {
        Some(b) => ds.subjects().iter().map(|s| s.covariates()[b]).sum::<f64>() / ds.len() as f64,
        None => 0.0,
    }
}

/// Everything fit once per dataset before drawing imputations.
struct Imputer<'a> {
    ds: &'a LongitudinalDataset,
    design: DesignSpec,
    method: Method,
    /// Whole-arm MAR models (MAR, R2B, J2R; the placebo arm for PW).
    arm_models: Vec<Option<SequentialModel>>,
    /// Pattern A subset models (PW experimental arms, RD).
    pattern_a_models: Vec<Option<SequentialModel>>,
    /// Retrieved-dropout regressions (RD).
    rd_fits: Vec<Option<StepFit>>,
    baseline_mean: f64,
}

impl<'a> Imputer<'a> {
    fn new(ds: &'a LongitudinalDataset, method: Method, design: DesignSpec) -> Result<Self> {
        if !ds.has_indicators() {
            return Err(PmmError::IndicatorsMissing);
        }
        let arms = ds.arm_count();
        let mut arm_models = vec![None; arms];
        let mut pattern_a_models = vec![None; arms];
        let mut rd_fits = vec![None; arms];
        for i in 0..arms {
            let subjects = ds.arm_subjects(i);
            let pattern_a: Vec<&Subject> = subjects.iter().copied().filter(|s| s.pattern_a_final()).collect();
            let needs_b = subjects.iter().any(|s| !s.pattern_a_final() && !s.observed_final());
            match method {
                Method::Mar | Method::R2b | Method::J2r => {
                    arm_models[i] = Some(SequentialModel::fit(&subjects, &design, false)?);
                }
                Method::Pw if i == 0 => {
                    if subjects.iter().filter(|s| s.observed_final()).count() < design.p() + 1 {
                        return Err(PmmError::InsufficientData(
                            "the reference arm needs observed endpoints for placebo washout".into(),
                        ));
                    }
                    arm_models[i] = Some(SequentialModel::fit(&subjects, &design, true)?);
                }
                Method::Pw => {
                    if let Some(s) = subjects.iter().find(|s| !s.pattern_a_final() && s.observed_final()) {
                        return Err(PmmError::PatternViolation {
                            subject: s.id().into(),
                            reason: "placebo washout requires every Pattern B endpoint to be missing".into(),
                        });
                    }
                    pattern_a_models[i] = Some(SequentialModel::fit(&pattern_a, &design, false)?);
                }
                Method::Rd => {
                    pattern_a_models[i] = Some(SequentialModel::fit(&pattern_a, &design, false)?);
                    if needs_b {
                        let f = fit_endpoint_regression(&subjects, &design)?;
                        rd_fits[i] = Some(StepFit::from_cross_sectional(&f)?);
                    }
                }
                Method::RdPure => {
                    return Err(PmmError::InvalidArgument(
                        "multiple imputation is not defined for rd-pure; use rd".into(),
                    ))
                }
            }
        }
        Ok(Self { ds, design, method, arm_models, pattern_a_models, rd_fits, baseline_mean: pooled_baseline_mean(ds) })
    }

    fn impute<R: Rng + ?Sized>(&self, rng: &mut R) -> Completed {
        let ds = self.ds;
        let k = ds.visits();
        let mut out = initial(ds);
        let arm_draws: Vec<Option<Vec<Option<StepDraw>>>> =
            self.arm_models.iter().map(|m| m.as_ref().map(|m| m.draw(rng))).collect();
        let a_draws: Vec<Option<Vec<Option<StepDraw>>>> =
            self.pattern_a_models.iter().map(|m| m.as_ref().map(|m| m.draw(rng))).collect();
        let rd_draws: Vec<Option<StepDraw>> = self.rd_fits.iter().map(|f| f.as_ref().map(|f| f.draw(rng))).collect();
        for (s, row) in ds.subjects().iter().zip(out.iter_mut()) {
            let i = s.arm();
            let complete = s.outcomes().iter().all(Option::is_some);
            match self.method {
                Method::Mar | Method::R2b | Method::J2r => {
                    if !complete {
                        impute_chain(&self.design, arm_draws[i].as_ref().unwrap(), s, row, true, rng);
                    }
                }
                Method::Pw if i == 0 => {
                    if !complete {
                        impute_chain(&self.design, arm_draws[0].as_ref().unwrap(), s, row, true, rng);
                    }
                }
                Method::Pw => {
                    if s.pattern_a_final() {
                        if !complete {
                            impute_chain(&self.design, a_draws[i].as_ref().unwrap(), s, row, true, rng);
                        }
                    } else if !s.observed_final() {
                        // The endpoint follows the reference chain from baseline,
                        // ignoring on-treatment visits. Observed cells stay as they are.
                        let mut chain = vec![0.0; k];
                        impute_chain(&self.design, arm_draws[0].as_ref().unwrap(), s, &mut chain, false, rng);
                        row[k - 1] = chain[k - 1];
                    }
                }
                Method::Rd => {
                    if s.pattern_a_final() {
                        if !complete {
                            impute_chain(&self.design, a_draws[i].as_ref().unwrap(), s, row, true, rng);
                        }
                    } else if !s.observed_final() {
                        let z = self.design.z(s);
                        row[k - 1] = rd_draws[i].as_ref().unwrap().sample(&z, rng);
                    }
                }
                Method::RdPure => unreachable!("rejected in Imputer::new"),
            }
        }
        match self.method {
            Method::R2b | Method::J2r => {
                apply_pattern_shift(ds, self.method, &out, self.baseline_mean).expect("shiftable method")
            }
            _ => out,
        }
    }
}

fn design_for(ds: &LongitudinalDataset, design: &Option<DesignSpec>) -> DesignSpec {
    design.clone().unwrap_or_else(|| DesignSpec::all(ds.covariate_names().len()))
}

/// `m` completed datasets under placebo washout.
pub fn impute_pw(ds: &LongitudinalDataset, design: Option<DesignSpec>, m: usize, seed: u64) -> Result<Vec<Completed>> {
    let imp = Imputer::new(ds, Method::Pw, design_for(ds, &design))?;
    Ok((0..m).map(|r| imp.impute(&mut rng::stream(seed, &[r as u64]))).collect())
}

/// `m` completed datasets under retrieved-dropout imputation.
pub fn impute_rd(ds: &LongitudinalDataset, design: Option<DesignSpec>, m: usize, seed: u64) -> Result<Vec<Completed>> {
    let imp = Imputer::new(ds, Method::Rd, design_for(ds, &design))?;
    Ok((0..m).map(|r| imp.impute(&mut rng::stream(seed, &[r as u64]))).collect())
}

/// `m` completed datasets for any supported method.
pub fn impute(
    ds: &LongitudinalDataset,
    method: Method,
    design: Option<DesignSpec>,
    m: usize,
    seed: u64,
) -> Result<Vec<Completed>> {
    let imp = Imputer::new(ds, method, design_for(ds, &design))?;
    Ok((0..m).map(|r| imp.impute(&mut rng::stream(seed, &[r as u64]))).collect())
}

/// Estimates and variances from one completed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    /// Per arm: completed mean change at the final visit and `sigma^2 / n_i`.
    pub arms: Vec<(f64, f64)>,
    /// Per non-reference arm: treatment coefficient and its variance.
    pub contrasts: Vec<(f64, f64)>,
    pub df: f64,
}

/// ANCOVA of the final-visit change on treatment indicators and covariates.
pub fn ancova(ds: &LongitudinalDataset, completed: &Completed, design: &DesignSpec) -> Result<Analysis> {
    let arms = ds.arm_count();
    let n = ds.len();
    let k = ds.visits() - 1;
    let p = arms + design.m();
    if n <= p {
        return Err(PmmError::InsufficientData("too few subjects for the analysis model".into()));
    }
    let mut z = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (j, (s, row)) in ds.subjects().iter().zip(completed).enumerate() {
        z[(j, 0)] = 1.0;
        if s.arm() > 0 {
            z[(j, s.arm())] = 1.0;
        }
        for (a, x) in design.x(s).into_iter().enumerate() {
            z[(j, arms + a)] = x;
        }
        let base = ds.baseline_outcome().map(|b| s.covariates()[b]).unwrap_or(0.0);
        y[j] = row[k] - base;
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(PmmError::InsufficientData("completed endpoint is not finite".into()));
    }
    let f = ols(&z, &y).ok_or_else(|| PmmError::RankDeficient("analysis design is singular".into()))?;
    let df = (n - p) as f64;
    let s2 = f.rss / df;
    let sizes = ds.arm_sizes();
    let mut sums = vec![0.0; arms];
    for (j, s) in ds.subjects().iter().enumerate() {
        sums[s.arm()] += y[j];
    }
    Ok(Analysis {
        arms: (0..arms).map(|i| (sums[i] / sizes[i] as f64, s2 / sizes[i] as f64)).collect(),
        contrasts: (1..arms).map(|i| (f.beta[i], s2 * f.zz_inv[(i, i)])).collect(),
        df,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub se: f64,
    /// Barnard-Rubin degrees of freedom; infinite when `B = 0` and no
    /// complete-data df is given.
    pub df: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub imputations: usize,
}

/// Rubin's rules with the Barnard-Rubin small-sample degrees of freedom.
pub fn rubin_pool(pairs: &[(f64, f64)], complete_df: Option<f64>, alpha: f64) -> Result<PooledResult> {
    let m = pairs.len();
    if m < 2 {
        return Err(PmmError::InvalidArgument("Rubin pooling needs at least two imputations".into()));
    }
    let mf = m as f64;
    let estimate = pairs.iter().map(|p| p.0).sum::<f64>() / mf;
    let within = pairs.iter().map(|p| p.1).sum::<f64>() / mf;
    let between = pairs.iter().map(|p| (p.0 - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let total = within + (1.0 + 1.0 / mf) * between;
    let lambda = if total > 0.0 { (1.0 + 1.0 / mf) * between / total } else { 0.0 };
    let df_old = if lambda > 0.0 { (mf - 1.0) / (lambda * lambda) } else { f64::INFINITY };
    let df = match complete_df {
        Some(nc) if nc > 0.0 => {
            let df_obs = (nc + 1.0) / (nc + 3.0) * nc * (1.0 - lambda);
            if df_old.is_infinite() {
                df_obs
            } else {
                1.0 / (1.0 / df_old + 1.0 / df_obs)
            }
        }
        _ => df_old,
    };
    let se = total.max(0.0).sqrt();
    let (q, p_value) = if df.is_finite() {
        let t = StudentsT::new(0.0, 1.0, df).map_err(|e| PmmError::InvalidArgument(e.to_string()))?;
        let q = t.inverse_cdf(1.0 - alpha / 2.0);
        let p = if se > 0.0 { 2.0 * (1.0 - t.cdf((estimate / se).abs())) } else { f64::from(estimate == 0.0) };
        (q, p)
    } else {
        let q = normal::quantile(1.0 - alpha / 2.0);
        let p = if se > 0.0 { normal::two_sided_p(estimate / se) } else { f64::from(estimate == 0.0) };
        (q, p)
    };
    Ok(PooledResult {
        estimate,
        within,
        between,
        total,
        se,
        df,
        ci_lower: estimate - q * se,
        ci_upper: estimate + q * se,
        p_value,
        imputations: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub method: Method,
    pub arm_labels: Vec<String>,
    pub per_imputation: Vec<Analysis>,
    pub arms: Vec<PooledResult>,
    pub contrasts: Vec<PooledResult>,
}

/// Impute, analyse and pool.
pub fn run_mi(ds: &LongitudinalDataset, cfg: &ImputationConfig) -> Result<MiResult> {
    if cfg.imputations < 2 {
        return Err(PmmError::InvalidArgument("at least two imputations are required".into()));
    }
    let design = design_for(ds, &cfg.design);
    let imp = Imputer::new(ds, cfg.method, design.clone())?;
    let per_imputation = map_indexed(cfg.imputations, cfg.exec, |r| {
        let completed = imp.impute(&mut rng::stream(cfg.seed, &[r as u64]));
        ancova(ds, &completed, &design)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let df = Some(per_imputation[0].df);
    let arms = (0..ds.arm_count())
        .map(|i| {
            let pairs: Vec<(f64, f64)> = per_imputation.iter().map(|a| a.arms[i]).collect();
            rubin_pool(&pairs, df, cfg.alpha)
        })
        .collect::<Result<_>>()?;
    let contrasts = (0..ds.arm_count() - 1)
        .map(|i| {
            let pairs: Vec<(f64, f64)> = per_imputation.iter().map(|a| a.contrasts[i]).collect();
            rubin_pool(&pairs, df, cfg.alpha)
        })
        .collect::<Result<_>>()?;
    Ok(MiResult { method: cfg.method, arm_labels: ds.arm_labels().to_vec(), per_imputation, arms, contrasts })
}
