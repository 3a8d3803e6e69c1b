//! Direct pattern-mixture estimators of the final-visit arm means, their
//! contrasts against the reference arm, and baseline-covariate adjustment.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, Subject};
use crate::linalg::{condition_number, symmetrized};
use crate::mmrm::{fit_endpoint_regression, fit_mmrm, ArmFit, CrossSectionalFit, DesignSpec, EmConfig, FitSubset};
use crate::sandwich::{
    assemble_stack, beta_block, covariate_mean_block, delta_method, mean_block, proportion_blocks, retrieved_block,
    ArmBlocks, Block, BlockKind, CovariateFilter, DualFunctional, Scalar, ScalarMap, ThetaStack,
};
use crate::{normal, PmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mar,
    R2b,
    J2r,
    Pw,
    Rd,
    RdPure,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Mar, Method::R2b, Method::J2r, Method::Pw, Method::Rd, Method::RdPure];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mar => "mar",
            Method::R2b => "r2b",
            Method::J2r => "j2r",
            Method::Pw => "pw",
            Method::Rd => "rd",
            Method::RdPure => "rd-pure",
        }
    }

    /// Estimators that report every visit, not just the last.
    pub fn has_visit_means(&self) -> bool {
        matches!(self, Method::Mar | Method::R2b | Method::J2r)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PmmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mar" => Ok(Method::Mar),
            "r2b" | "rtb" => Ok(Method::R2b),
            "j2r" => Ok(Method::J2r),
            "pw" => Ok(Method::Pw),
            "rd" => Ok(Method::Rd),
            "rd-pure" | "rdpure" | "rd_pure" => Ok(Method::RdPure),
            other => Err(PmmError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Which imputed subjects a sensitivity shift applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaScope {
    /// Every subject with a missing endpoint: multiplier `pi + tau`.
    #[default]
    AllImputed,
    /// Pattern B only: multiplier `pi`.
    PatternBOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Covariates in the regressions; `None` uses all dataset covariates.
    pub design: Option<DesignSpec>,
    pub em: EmConfig,
    /// Anchor return-to-baseline at the pooled baseline mean instead of the
    /// arm's own.
    pub pooled_baseline: bool,
    pub delta_scope: DeltaScope,
    /// Fail on EM non-convergence instead of using the last iterate.
    pub require_converged: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            design: None,
            em: EmConfig::default(),
            pooled_baseline: false,
            delta_scope: DeltaScope::AllImputed,
            require_converged: true,
        }
    }
}

/// Treatment contrast `mu_i - mu_0` with normal-theory inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub arm: usize,
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

/// A fit kept for audit output.
#[derive(Debug, Clone, Serialize)]
pub struct FitRecord {
    pub arm: usize,
    pub kind: BlockKind,
    pub fit: ArmFit,
}

#[derive(Debug, Clone)]
pub struct EstimandResult {
    pub method: Method,
    pub arm_labels: Vec<String>,
    pub visit_labels: Vec<String>,
    pub covariate_names: Vec<String>,
    pub arm_sizes: Vec<usize>,
    /// Final-visit arm means.
    pub means: Vec<f64>,
    /// Sensitivity multiplier per arm (`pi + tau` or `pi`).
    pub q: Vec<f64>,
    /// Covariate means per arm.
    pub nu: Vec<Vec<f64>>,
    /// Covariance of `(means, q, nu)` in that order, `nu` arm-major.
    pub joint_cov: DMatrix<f64>,
    /// Per-visit means `[arm][visit]` for MAR, R2B and J2R.
    pub visit_means: Option<Vec<Vec<f64>>>,
    /// Covariance of the flattened per-visit means.
    pub visit_cov: Option<DMatrix<f64>>,
    pub pooled_x_mean: Vec<f64>,
    /// Sample covariance of the covariates, divisor `n - 1`.
    pub x_sample_cov: DMatrix<f64>,
    pub baseline_adjusted: bool,
    pub fits: Vec<FitRecord>,
    pub stack: Option<ThetaStack>,
}

impl EstimandResult {
    pub fn arms(&self) -> usize {
        self.means.len()
    }

    pub fn m(&self) -> usize {
        self.pooled_x_mean.len()
    }

    pub fn n(&self) -> usize {
        self.arm_sizes.iter().sum()
    }

    pub fn mean_se(&self, i: usize) -> f64 {
        self.joint_cov[(i, i)].max(0.0).sqrt()
    }

    /// Index of `q_i` in `joint_cov`.
    pub fn q_index(&self, i: usize) -> usize {
        self.arms() + i
    }

    pub fn contrast(&self, i: usize) -> Result<Contrast> {
        contrast(self, i)
    }

    pub fn contrasts(&self) -> Vec<Contrast> {
        (1..self.arms()).map(|i| contrast(self, i).expect("valid arm")).collect()
    }
}

fn normal_inference(estimate: f64, se: f64) -> (f64, f64, f64) {
    let z = normal::quantile(0.975);
    let p = if se > 0.0 {
        normal::two_sided_p(estimate / se)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    (estimate - z * se, estimate + z * se, p)
}

/// `mu_i - mu_0` with SE from the joint covariance.
pub fn contrast(result: &EstimandResult, i: usize) -> Result<Contrast> {
    if i == 0 || i >= result.arms() {
        return Err(PmmError::InvalidArgument(format!("contrast arm {i} must be in 1..{}", result.arms())));
    }
    let c = &result.joint_cov;
    let estimate = result.means[i] - result.means[0];
    let var = c[(i, i)] + c[(0, 0)] - 2.0 * c[(i, 0)];
    let se = var.max(0.0).sqrt();
    let (ci_lower, ci_upper, p_value) = normal_inference(estimate, se);
    Ok(Contrast {
        arm: i,
        label: format!("{} - {}", result.arm_labels[i], result.arm_labels[0]),
        estimate,
        se,
        ci_lower,
        ci_upper,
        p_value,
    })
}

#[derive(Debug, Clone, Default)]
struct ArmOffsets {
    beta: Option<usize>,
    beta_a: Option<usize>,
    beta_rd: Option<usize>,
    pi: usize,
    tau: usize,
    phi: usize,
    nu: usize,
    nu_a: Option<usize>,
    nu_b: Option<usize>,
    nu_miss: Option<usize>,
    baseline: Option<usize>,
    completer: Option<usize>,
}

struct EstimandMap {
    method: Method,
    k: usize,
    p: usize,
    arms: Vec<ArmOffsets>,
    /// Weights of the pooled baseline anchor, when pooled.
    pooled_weights: Option<Vec<f64>>,
    scope: DeltaScope,
}

impl EstimandMap {
    fn outputs(&self) -> usize {
        let n = self.arms.len();
        let visits = if self.method.has_visit_means() { n * self.k } else { 0 };
        2 * n + n * (self.p - 1) + visits
    }

    /// `beta_v0 + nu' beta_v1` with both read from `theta`.
    fn lin<S: Scalar>(&self, t: &[S], beta: usize, v: usize, nu: usize) -> S {
        let off = beta + v * self.p;
        let mut acc = t[off].clone();
        for a in 1..self.p {
            acc = acc + t[off + a].clone() * t[nu + a - 1].clone();
        }
        acc
    }

    fn anchor<S: Scalar>(&self, t: &[S], i: usize) -> S {
        match (&self.pooled_weights, self.arms[i].baseline) {
            (Some(w), Some(_)) => {
                let mut acc = S::constant(0.0);
                for (l, wl) in w.iter().enumerate() {
                    acc = acc + S::constant(*wl) * t[self.arms[l].baseline.unwrap()].clone();
                }
                acc
            }
            (None, Some(b)) => t[b].clone(),
            (_, None) => S::constant(0.0),
        }
    }

    fn mean_at<S: Scalar>(&self, t: &[S], i: usize, v: usize) -> S {
        let o = &self.arms[i];
        let one = S::constant(1.0);
        let pi = t[o.pi + v].clone();
        match self.method {
            Method::Mar => self.lin(t, o.beta.unwrap(), v, o.nu),
            Method::R2b => {
                let mar = self.lin(t, o.beta.unwrap(), v, o.nu);
                (one - pi.clone()) * mar + pi * self.anchor(t, i)
            }
            Method::J2r => {
                if i == 0 {
                    return self.lin(t, o.beta.unwrap(), v, o.nu);
                }
                let mar = self.lin(t, o.beta.unwrap(), v, o.nu);
                let r = &self.arms[0];
                let reference = self.lin(t, r.beta.unwrap(), v, r.nu);
                (one - pi.clone()) * mar + pi * reference
            }
            Method::Pw => {
                if i == 0 {
                    return self.lin(t, o.beta.unwrap(), v, o.nu);
                }
                let a = self.lin(t, o.beta_a.unwrap(), v, o.nu_a.unwrap());
                let washout = self.lin(t, self.arms[0].beta.unwrap(), v, o.nu_b.unwrap());
                (one - pi.clone()) * a + pi * washout
            }
            Method::Rd => {
                let phi = t[o.phi].clone();
                let a = self.lin(t, o.beta_a.unwrap(), v, o.nu_a.unwrap());
                let b = self.lin(t, o.beta_rd.unwrap(), 0, o.nu_b.unwrap());
                phi.clone() * a + (one - phi) * b
            }
            Method::RdPure => {
                let c = t[o.completer.unwrap()].clone();
                let b = self.lin(t, o.beta_rd.unwrap(), 0, o.nu_miss.unwrap());
                (one - pi.clone()) * c + pi * b
            }
        }
    }
}

impl ScalarMap for EstimandMap {
    fn apply<S: Scalar>(&self, t: &[S]) -> Vec<S> {
        let n = self.arms.len();
        let last = self.k - 1;
        let mut out = Vec::with_capacity(self.outputs());
        for i in 0..n {
            out.push(self.mean_at(t, i, last));
        }
        for o in &self.arms {
            let pi = t[o.pi + last].clone();
            out.push(match self.scope {
                DeltaScope::AllImputed => pi + t[o.tau + last].clone(),
                DeltaScope::PatternBOnly => pi,
            });
        }
        for o in &self.arms {
            for a in 0..self.p - 1 {
                out.push(t[o.nu + a].clone());
            }
        }
        if self.method.has_visit_means() {
            for i in 0..n {
                for v in 0..self.k {
                    out.push(self.mean_at(t, i, v));
                }
            }
        }
        out
    }
}

fn check_a3_endpoint(ds: &LongitudinalDataset) -> Result<()> {
    if let Some(s) = ds.subjects().iter().find(|s| !s.pattern_a_final() && s.observed_final()) {
        return Err(PmmError::PatternViolation {
            subject: s.id().into(),
            reason: "placebo washout requires every Pattern B endpoint to be missing".into(),
        });
    }
    Ok(())
}

fn fit(subjects: &[&Subject], design: &DesignSpec, subset: FitSubset, opts: &EstimateOptions) -> Result<ArmFit> {
    let f = fit_mmrm(subjects, design, subset, &opts.em)?;
    if opts.require_converged {
        f.require_converged()
    } else {
        Ok(f)
    }
}

fn conditional_block(
    subjects: &[&Subject],
    design: &DesignSpec,
    filter: CovariateFilter,
    needed: bool,
) -> Result<Block> {
    match covariate_mean_block(subjects, design, filter) {
        Ok(b) => Ok(b),
        Err(e) if needed => Err(e),
        Err(_) => Ok(Block::degenerate(filter.kind(), design.m(), subjects.len())),
    }
}

/// Blocks and fits of one arm for `method`.
fn arm_blocks(
    ds: &LongitudinalDataset,
    arm: usize,
    method: Method,
    design: &DesignSpec,
    opts: &EstimateOptions,
    fits: &mut Vec<FitRecord>,
) -> Result<ArmBlocks> {
    let subjects = ds.arm_subjects(arm);
    let n = subjects.len();
    let mut blocks = proportion_blocks(&subjects);
    blocks.push(covariate_mean_block(&subjects, design, CovariateFilter::All)?);

    let pattern_b = subjects.iter().filter(|s| !s.pattern_a_final()).count();
    let missing = subjects.iter().filter(|s| !s.observed_final()).count();
    let mut push_fit = |kind: BlockKind, subset: FitSubset, blocks: &mut Vec<Block>| -> Result<()> {
        let f = fit(&subjects, design, subset, opts)?;
        blocks.push(beta_block(kind, &f, &subjects)?);
        fits.push(FitRecord { arm, kind, fit: f });
        Ok(())
    };
    let retrieved = |needed: bool| -> Result<(Block, Option<CrossSectionalFit>)> {
        if !needed {
            return Ok((Block::degenerate(BlockKind::BetaRetrieved, design.p(), n), None));
        }
        let f = fit_endpoint_regression(&subjects, design)?;
        Ok((retrieved_block(&f, &subjects), Some(f)))
    };

    match method {
        Method::Mar | Method::J2r => push_fit(BlockKind::Beta, FitSubset::AllObserved, &mut blocks)?,
        Method::R2b => {
            push_fit(BlockKind::Beta, FitSubset::AllObserved, &mut blocks)?;
            if let Some(b) = ds.baseline_outcome() {
                let vals: Vec<Option<Vec<f64>>> = subjects.iter().map(|s| Some(vec![s.covariates()[b]])).collect();
                blocks.push(mean_block(BlockKind::BaselineMean, &vals, 1).expect("arm is non-empty"));
            }
        }
        Method::Pw => {
            if arm == 0 {
                push_fit(BlockKind::Beta, FitSubset::AllObserved, &mut blocks)?;
            } else {
                push_fit(BlockKind::BetaPatternA, FitSubset::PatternA, &mut blocks)?;
                blocks.push(conditional_block(&subjects, design, CovariateFilter::PatternA, true)?);
                blocks.push(conditional_block(&subjects, design, CovariateFilter::PatternB, pattern_b > 0)?);
            }
        }
        Method::Rd => {
            push_fit(BlockKind::BetaPatternA, FitSubset::PatternA, &mut blocks)?;
            blocks.push(conditional_block(&subjects, design, CovariateFilter::PatternA, true)?);
            blocks.push(conditional_block(&subjects, design, CovariateFilter::PatternB, pattern_b > 0)?);
            let (b, _) = retrieved(pattern_b > 0)?;
            blocks.push(b);
        }
        Method::RdPure => {
            let tau = subjects.iter().filter(|s| s.pattern_a_final() && !s.observed_final()).count();
            if tau > 0 {
                return Err(PmmError::PreconditionViolated(format!(
                    "arm {arm} has {tau} Pattern A subjects with a missing endpoint; use the rd method"
                )));
            }
            let k = ds.visits() - 1;
            let vals: Vec<Option<Vec<f64>>> = subjects.iter().map(|s| s.outcome(k).map(|y| vec![y])).collect();
            let completer = mean_block(BlockKind::CompleterMean, &vals, 1)
                .ok_or_else(|| PmmError::EmptyCell { arm, block: BlockKind::CompleterMean.name().into() })?;
            blocks.push(completer);
            blocks.push(conditional_block(&subjects, design, CovariateFilter::Missing, missing > 0)?);
            let (b, _) = retrieved(missing > 0)?;
            blocks.push(b);
        }
    }
    Ok(ArmBlocks { arm, n, blocks })
}

fn offsets(stack: &ThetaStack, arm: usize) -> Result<ArmOffsets> {
    let get = |k| stack.block(arm, k).map(|b| b.offset);
    Ok(ArmOffsets {
        beta: get(BlockKind::Beta),
        beta_a: get(BlockKind::BetaPatternA),
        beta_rd: get(BlockKind::BetaRetrieved),
        pi: stack.offset(arm, BlockKind::Pi)?,
        tau: stack.offset(arm, BlockKind::Tau)?,
        phi: stack.offset(arm, BlockKind::Phi)?,
        nu: stack.offset(arm, BlockKind::Nu)?,
        nu_a: get(BlockKind::NuPatternA),
        nu_b: get(BlockKind::NuPatternB),
        nu_miss: get(BlockKind::NuMissing),
        baseline: get(BlockKind::BaselineMean),
        completer: get(BlockKind::CompleterMean),
    })
}

fn covariate_summary(ds: &LongitudinalDataset, design: &DesignSpec) -> (Vec<f64>, DMatrix<f64>) {
    let m = design.m();
    let n = ds.len();
    let xs: Vec<Vec<f64>> = ds.subjects().iter().map(|s| design.x(s)).collect();
    let mut mean = vec![0.0; m];
    for x in &xs {
        for a in 0..m {
            mean[a] += x[a] / n as f64;
        }
    }
    let mut s = DMatrix::zeros(m, m);
    if n > 1 {
        for x in &xs {
            for a in 0..m {
                for b in 0..m {
                    s[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n - 1) as f64;
                }
            }
        }
    }
    (mean, s)
}

/// Direct estimate of the final-visit arm means under `method`.
pub fn estimate(ds: &LongitudinalDataset, method: Method, opts: &EstimateOptions) -> Result<EstimandResult> {
    if !ds.has_indicators() {
        return Err(PmmError::IndicatorsMissing);
    }
    if method == Method::Pw {
        check_a3_endpoint(ds)?;
    }
    let design = opts.design.clone().unwrap_or_else(|| DesignSpec::all(ds.covariate_names().len()));
    if let Some(&c) = design.covariates.iter().find(|&&c| c >= ds.covariate_names().len()) {
        return Err(PmmError::InvalidArgument(format!("covariate index {c} out of range")));
    }
    let arms = ds.arm_count();
    let k = ds.visits();
    let m = design.m();

    let mut fits = Vec::new();
    let mut blocks = Vec::with_capacity(arms);
    for i in 0..arms {
        blocks.push(arm_blocks(ds, i, method, &design, opts, &mut fits)?);
    }
    let stack = assemble_stack(&blocks)?;
    let offs: Vec<ArmOffsets> = (0..arms).map(|i| offsets(&stack, i)).collect::<Result<_>>()?;
    let sizes = ds.arm_sizes();
    let pooled_weights = (opts.pooled_baseline && ds.baseline_outcome().is_some()).then(|| {
        let n = ds.len() as f64;
        sizes.iter().map(|&s| s as f64 / n).collect()
    });
    let map = EstimandMap { method, k, p: design.p(), arms: offs, pooled_weights, scope: opts.delta_scope };
    let len = map.outputs();
    let f = DualFunctional::new(len, map);
    let (values, cov) = delta_method(&f, &stack)?;

    let core = 2 * arms + arms * m;
    let means = values.as_slice()[..arms].to_vec();
    let q = values.as_slice()[arms..2 * arms].to_vec();
    let nu = (0..arms).map(|i| values.as_slice()[2 * arms + i * m..2 * arms + (i + 1) * m].to_vec()).collect();
    let (visit_means, visit_cov) = if method.has_visit_means() {
        let vm = (0..arms).map(|i| values.as_slice()[core + i * k..core + (i + 1) * k].to_vec()).collect();
        let vc = cov.view((core, core), (arms * k, arms * k)).into_owned();
        (Some(vm), Some(vc))
    } else {
        (None, None)
    };
    let (pooled_x_mean, x_sample_cov) = covariate_summary(ds, &design);
    Ok(EstimandResult {
        method,
        arm_labels: ds.arm_labels().to_vec(),
        visit_labels: ds.schedule().labels().to_vec(),
        covariate_names: design.covariates.iter().map(|&c| ds.covariate_names()[c].clone()).collect(),
        arm_sizes: sizes,
        means,
        q,
        nu,
        joint_cov: cov.view((0, 0), (core, core)).into_owned(),
        visit_means,
        visit_cov,
        pooled_x_mean,
        x_sample_cov,
        baseline_adjusted: false,
        fits,
        stack: Some(stack),
    })
}

pub fn estimate_mar(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::Mar, opts)
}

pub fn estimate_r2b(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::R2b, opts)
}

pub fn estimate_j2r(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::J2r, opts)
}

pub fn estimate_pw(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::Pw, opts)
}

pub fn estimate_rd(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::Rd, opts)
}

pub fn estimate_rd_pure(ds: &LongitudinalDataset, opts: &EstimateOptions) -> Result<EstimandResult> {
    estimate(ds, Method::RdPure, opts)
}

/// Re-standardize the arm means and multipliers to the covariate mean
/// `xbar` (default: pooled sample mean) by Gaussian conditioning on the
/// estimated covariate means, with the unconditional variance.
pub fn adjust_baseline(result: &EstimandResult, xbar: Option<&[f64]>) -> Result<EstimandResult> {
    let arms = result.arms();
    let m = result.m();
    if m == 0 {
        let mut out = result.clone();
        out.baseline_adjusted = true;
        return Ok(out);
    }
    let xbar = xbar.unwrap_or(&result.pooled_x_mean);
    if xbar.len() != m {
        return Err(PmmError::InvalidArgument(format!("expected {m} covariate means, got {}", xbar.len())));
    }
    let ny = 2 * arms;
    let nx = arms * m;
    let c = &result.joint_cov;
    let syy = c.view((0, 0), (ny, ny)).into_owned();
    let syx = c.view((0, ny), (ny, nx)).into_owned();
    let sxx = c.view((ny, ny), (nx, nx)).into_owned();
    let condition = condition_number(&sxx);
    if !(condition <= 1e12) {
        return Err(PmmError::IllConditioned { condition });
    }
    let sxx_inv = sxx.clone().try_inverse().ok_or(PmmError::IllConditioned { condition })?;
    let gain = &syx * &sxx_inv;
    let nu_hat = DVector::from_iterator(nx, result.nu.iter().flatten().copied());
    let target = DVector::from_iterator(nx, (0..arms).flat_map(|_| xbar.iter().copied()));
    let y = DVector::from_iterator(ny, result.means.iter().chain(&result.q).copied());
    let y_adj = &y + &gain * (&target - &nu_hat);

    // A' S A / n with A the horizontal stack of identities.
    let mut xcov = DMatrix::zeros(nx, nx);
    let n = result.n() as f64;
    for i in 0..arms {
        for l in 0..arms {
            xcov.view_mut((i * m, l * m), (m, m)).copy_from(&(&result.x_sample_cov / n));
        }
    }
    let v_yy = symmetrized(&syy - &gain * syx.transpose() + &gain * &xcov * gain.transpose());
    let v_yx = &gain * &xcov;
    let mut joint = DMatrix::zeros(ny + nx, ny + nx);
    joint.view_mut((0, 0), (ny, ny)).copy_from(&v_yy);
    joint.view_mut((0, ny), (ny, nx)).copy_from(&v_yx);
    joint.view_mut((ny, 0), (nx, ny)).copy_from(&v_yx.transpose());
    joint.view_mut((ny, ny), (nx, nx)).copy_from(&xcov);

    let mut out = result.clone();
    out.means = y_adj.as_slice()[..arms].to_vec();
    out.q = y_adj.as_slice()[arms..].to_vec();
    out.nu = (0..arms).map(|_| xbar.to_vec()).collect();
    out.joint_cov = joint;
    out.visit_means = None;
    out.visit_cov = None;
    out.baseline_adjusted = true;
    Ok(out)
}
