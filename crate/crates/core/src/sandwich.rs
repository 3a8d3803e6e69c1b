//! Stacked unbiased estimating equations, sandwich covariance, and the delta
//! method.
//!
//! Every parameter block of an arm carries its per-subject estimating-function
//! rows `psi_j` (one row per subject of the arm, in arm order) and the summed
//! Jacobian `A = sum_j d psi_j / d theta'`. Within an arm the Jacobian is
//! block diagonal: `Sigma` is plugged in, and mean-type blocks do not depend on
//! the coefficient blocks. The sandwich is therefore computed from the
//! influence rows `psi_j' A^{-T}` of each block, which keeps the cross-block
//! covariance that enters through the meat `B = sum_j psi_j psi_j'`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Subject;
use crate::mmrm::{beta_score_rows, endpoint_score_rows, ArmFit, CrossSectionalFit, DesignSpec};
use crate::{PmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// MMRM coefficients on all observed data.
    Beta,
    /// MMRM coefficients on Pattern A subjects.
    BetaPatternA,
    /// Endpoint regression among retrieved dropouts.
    BetaRetrieved,
    /// `pi_k`: Pattern B and missing, every visit.
    Pi,
    /// `tau_k`: Pattern A and missing, every visit.
    Tau,
    /// `phi_K`: Pattern A at the final visit.
    Phi,
    /// Covariate means over the arm.
    Nu,
    /// Covariate means over `A_K = 0`.
    NuPatternB,
    /// Covariate means over `A_K = 1`.
    NuPatternA,
    /// Covariate means over `R_K = 0`.
    NuMissing,
    /// Mean of the baseline outcome over the arm.
    BaselineMean,
    /// Mean of the observed endpoint over completers.
    CompleterMean,
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Beta => "beta",
            BlockKind::BetaPatternA => "beta_pattern_a",
            BlockKind::BetaRetrieved => "beta_retrieved",
            BlockKind::Pi => "pi",
            BlockKind::Tau => "tau",
            BlockKind::Phi => "phi",
            BlockKind::Nu => "nu",
            BlockKind::NuPatternB => "nu_pattern_b",
            BlockKind::NuPatternA => "nu_pattern_a",
            BlockKind::NuMissing => "nu_missing",
            BlockKind::BaselineMean => "baseline_mean",
            BlockKind::CompleterMean => "completer_mean",
        }
    }
}

/// One parameter block of one arm.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockKind,
    pub estimate: Vec<f64>,
    /// `n_arm x len`.
    pub psi: DMatrix<f64>,
    /// `len x len`, summed over subjects.
    pub jacobian: DMatrix<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.estimate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimate.is_empty()
    }

    /// Block with zero estimate and zero contributions, used when the
    /// estimator multiplies it by a zero proportion.
    pub fn degenerate(kind: BlockKind, len: usize, n: usize) -> Self {
        Self { kind, estimate: vec![0.0; len], psi: DMatrix::zeros(n, len), jacobian: -DMatrix::identity(len, len) }
    }
}

/// Mean-type block: `psi_j = I(filter_j) (v_j - theta)`.
///
/// `values[j]` is `None` for subjects outside the filter. Returns `None`
/// when no subject passes the filter.
pub fn mean_block(kind: BlockKind, values: &[Option<Vec<f64>>], len: usize) -> Option<Block> {
    let n = values.len();
    let included = values.iter().filter(|v| v.is_some()).count();
    if included == 0 {
        return None;
    }
    let mut est = vec![0.0; len];
    for v in values.iter().flatten() {
        for (e, x) in est.iter_mut().zip(v) {
            *e += x;
        }
    }
    for e in &mut est {
        *e /= included as f64;
    }
    let mut psi = DMatrix::zeros(n, len);
    for (j, v) in values.iter().enumerate() {
        if let Some(v) = v {
            for a in 0..len {
                psi[(j, a)] = v[a] - est[a];
            }
        }
    }
    Some(Block { kind, estimate: est, psi, jacobian: -DMatrix::identity(len, len) * included as f64 })
}

/// Indicator proportions at every visit.
pub fn proportion_blocks(subjects: &[&Subject]) -> Vec<Block> {
    let k = subjects.first().map(|s| s.visits()).unwrap_or(0);
    let ind = |f: &dyn Fn(&Subject, usize) -> bool| -> Vec<Option<Vec<f64>>> {
        subjects.iter().map(|s| Some((0..k).map(|v| f(s, v) as u8 as f64).collect())).collect()
    };
    let pi = ind(&|s, v| !s.pattern_a(v) && !s.observed(v));
    let tau = ind(&|s, v| s.pattern_a(v) && !s.observed(v));
    let phi: Vec<Option<Vec<f64>>> = subjects.iter().map(|s| Some(vec![s.pattern_a_final() as u8 as f64])).collect();
    [(BlockKind::Pi, pi, k), (BlockKind::Tau, tau, k), (BlockKind::Phi, phi, 1)]
        .into_iter()
        .map(|(kind, v, len)| mean_block(kind, &v, len).expect("arm is non-empty"))
        .collect()
}

/// Subjects whose covariates enter a conditional covariate-mean block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateFilter {
    All,
    PatternA,
    PatternB,
    Missing,
}

impl CovariateFilter {
    pub fn kind(&self) -> BlockKind {
        match self {
            CovariateFilter::All => BlockKind::Nu,
            CovariateFilter::PatternA => BlockKind::NuPatternA,
            CovariateFilter::PatternB => BlockKind::NuPatternB,
            CovariateFilter::Missing => BlockKind::NuMissing,
        }
    }

    pub fn includes(&self, s: &Subject) -> bool {
        match self {
            CovariateFilter::All => true,
            CovariateFilter::PatternA => s.pattern_a_final(),
            CovariateFilter::PatternB => !s.pattern_a_final(),
            CovariateFilter::Missing => !s.observed_final(),
        }
    }
}

/// Covariate means over the subjects passing `filter`.
pub fn covariate_mean_block(subjects: &[&Subject], design: &DesignSpec, filter: CovariateFilter) -> Result<Block> {
    let values: Vec<Option<Vec<f64>>> = subjects.iter().map(|s| filter.includes(s).then(|| design.x(s))).collect();
    mean_block(filter.kind(), &values, design.m()).ok_or_else(|| PmmError::EmptyCell {
        arm: subjects.first().map(|s| s.arm()).unwrap_or(0),
        block: filter.kind().name().into(),
    })
}

/// All proportion and covariate-mean blocks of an arm.
pub fn proportion_contributions(subjects: &[&Subject], design: &DesignSpec) -> Result<Vec<Block>> {
    let mut out = proportion_blocks(subjects);
    for f in [CovariateFilter::All, CovariateFilter::PatternB, CovariateFilter::Missing] {
        out.push(covariate_mean_block(subjects, design, f)?);
    }
    Ok(out)
}

/// Coefficient block of an MMRM fit.
pub fn beta_block(kind: BlockKind, fit: &ArmFit, subjects: &[&Subject]) -> Result<Block> {
    let (psi, jacobian) = beta_score_rows(fit, subjects)?;
    Ok(Block { kind, estimate: fit.beta.clone(), psi, jacobian })
}

/// Retrieved-dropout endpoint regression block.
pub fn retrieved_block(fit: &CrossSectionalFit, subjects: &[&Subject]) -> Block {
    let (psi, jacobian) = endpoint_score_rows(fit, subjects, |s| !s.pattern_a_final());
    Block { kind: BlockKind::BetaRetrieved, estimate: fit.beta.clone(), psi, jacobian }
}

/// Blocks of one arm, all computed on the same subjects in the same order.
#[derive(Debug, Clone)]
pub struct ArmBlocks {
    pub arm: usize,
    pub n: usize,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockInfo {
    pub arm: usize,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

/// Stacked estimate with its sandwich covariance.
#[derive(Debug, Clone)]
pub struct ThetaStack {
    pub theta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub index: Vec<BlockInfo>,
}

impl ThetaStack {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn block(&self, arm: usize, kind: BlockKind) -> Option<&BlockInfo> {
        self.index.iter().find(|b| b.arm == arm && b.kind == kind)
    }

    pub fn offset(&self, arm: usize, kind: BlockKind) -> Result<usize> {
        self.block(arm, kind)
            .map(|b| b.offset)
            .ok_or_else(|| PmmError::InvalidArgument(format!("block {} of arm {arm} is not in the stack", kind.name())))
    }

    pub fn slice(&self, arm: usize, kind: BlockKind) -> Option<&[f64]> {
        self.block(arm, kind).map(|b| &self.theta.as_slice()[b.offset..b.offset + b.len])
    }
}

/// Sandwich covariance `A^{-1} B A^{-T}` per arm, block diagonal across arms.
pub fn assemble_stack(arms: &[ArmBlocks]) -> Result<ThetaStack> {
    let total: usize = arms.iter().flat_map(|a| a.blocks.iter().map(|b| b.len())).sum();
    let mut theta = DVector::zeros(total);
    let mut cov = DMatrix::zeros(total, total);
    let mut index = Vec::new();
    let mut offset = 0;
    for arm in arms {
        let arm_len: usize = arm.blocks.iter().map(|b| b.len()).sum();
        let mut infl = DMatrix::zeros(arm.n, arm_len);
        let mut col = 0;
        for b in &arm.blocks {
            let len = b.len();
            if b.psi.nrows() != arm.n || b.psi.ncols() != len {
                return Err(PmmError::InvalidArgument(format!(
                    "block {} of arm {} has inconsistent dimensions",
                    b.kind.name(),
                    arm.arm
                )));
            }
            index.push(BlockInfo { arm: arm.arm, kind: b.kind, offset: offset + col, len });
            for (i, v) in b.estimate.iter().enumerate() {
                theta[offset + col + i] = *v;
            }
            if len > 0 {
                let a_inv = b.jacobian.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite()));
                let a_inv =
                    a_inv.ok_or_else(|| PmmError::SingularBread { arm: arm.arm, block: b.kind.name().into() })?;
                let rows = &b.psi * a_inv.transpose();
                infl.columns_mut(col, len).copy_from(&rows);
            }
            col += len;
        }
        let v = infl.transpose() * &infl;
        cov.view_mut((offset, offset), (arm_len, arm_len)).copy_from(&v);
        offset += arm_len;
    }
    Ok(ThetaStack { theta, covariance: crate::linalg::symmetrized(cov), index })
}

/// Arithmetic needed to write an estimand once for both values and gradients.
pub trait Scalar: Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
}

/// Forward-mode dual number with a dense gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec<f64>,
}

impl Dual {
    /// Seed variable `i` of `n`.
    pub fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        Self { v, g }
    }

    fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        match (a.is_empty(), b.is_empty()) {
            (true, true) => Vec::new(),
            (true, false) => b.iter().map(|&y| f(0.0, y)).collect(),
            (false, true) => a.iter().map(|&x| f(x, 0.0)).collect(),
            _ => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, g: Dual::zip(&self.g, &o.g, |a, b| a + b) }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, g: Dual::zip(&self.g, &o.g, |a, b| a - b) }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        let (u, w) = (self.v, o.v);
        Dual { v: u * w, g: Dual::zip(&self.g, &o.g, |a, b| a * w + u * b) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, g: self.g.iter().map(|x| -x).collect() }
    }
}

impl Scalar for Dual {
    fn constant(c: f64) -> Self {
        Dual { v: c, g: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.v
    }
}

/// A smooth map `theta -> R^q`.
pub trait Functional {
    fn output_len(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Vec<f64>;
    /// `q x dim(theta)` Jacobian; central differences unless overridden.
    fn gradient(&self, theta: &[f64]) -> DMatrix<f64> {
        finite_difference_gradient(self, theta)
    }
    /// Whether `gradient` is analytic (and so worth checking).
    fn analytic(&self) -> bool {
        false
    }
}

/// Central differences with step `1e-6 (1 + |theta_i|)`.
pub fn finite_difference_gradient<F: Functional + ?Sized>(f: &F, theta: &[f64]) -> DMatrix<f64> {
    let q = f.output_len();
    let mut g = DMatrix::zeros(q, theta.len());
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[i].abs());
        t[i] = theta[i] + h;
        let up = f.evaluate(&t);
        t[i] = theta[i] - h;
        let dn = f.evaluate(&t);
        t[i] = theta[i];
        for r in 0..q {
            g[(r, i)] = (up[r] - dn[r]) / (2.0 * h);
        }
    }
    g
}

/// Functional written generically over [`Scalar`]; gradients are exact.
pub struct DualFunctional<F> {
    len: usize,
    f: F,
}

/// Closure `theta -> outputs` usable with both `f64` and [`Dual`].
pub trait ScalarMap {
    fn apply<S: Scalar>(&self, theta: &[S]) -> Vec<S>;
}

impl<F: ScalarMap> DualFunctional<F> {
    pub fn new(len: usize, f: F) -> Self {
        Self { len, f }
    }
}

impl<F: ScalarMap> Functional for DualFunctional<F> {
    fn output_len(&self) -> usize {
        self.len
    }

    fn evaluate(&self, theta: &[f64]) -> Vec<f64> {
        self.f.apply(theta)
    }

    fn gradient(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        let vars: Vec<Dual> = theta.iter().enumerate().map(|(i, &v)| Dual::variable(v, i, n)).collect();
        let out = self.f.apply(&vars);
        let mut g = DMatrix::zeros(out.len(), n);
        for (r, d) in out.iter().enumerate() {
            for (c, v) in d.g.iter().enumerate() {
                g[(r, c)] = *v;
            }
        }
        g
    }

    fn analytic(&self) -> bool {
        true
    }
}

/// Largest relative disagreement between an analytic gradient and central
/// differences, scaled by `max(|g|, 1)`.
pub fn gradient_check<F: Functional + ?Sized>(f: &F, theta: &[f64]) -> f64 {
    let a = f.gradient(theta);
    let n = finite_difference_gradient(f, theta);
    a.iter().zip(n.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

/// Values and covariance `G V G'` of `f` at the stacked estimate.
pub fn delta_method<F: Functional + ?Sized>(f: &F, stack: &ThetaStack) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let theta = stack.theta.as_slice();
    let values = DVector::from_vec(f.evaluate(theta));
    let g = f.gradient(theta);
    if cfg!(debug_assertions) && f.analytic() {
        let err = gradient_check(f, theta);
        if err > 1e-3 {
            return Err(PmmError::GradientCheckFailed { max_rel_err: err });
        }
    }
    let cov = &g * &stack.covariance * g.transpose();
    Ok((values, crate::linalg::symmetrized(cov)))
}
