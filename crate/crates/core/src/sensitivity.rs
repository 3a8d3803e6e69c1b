//! Delta-adjusted sensitivity analysis and tipping-point boundaries.
//!
//! Shifting every imputed endpoint of arm `i` by `delta_i` moves its mean by
//! `delta_i q_i`, where `q_i` is the share of imputed subjects. Because the
//! `q_i` are estimated jointly with the means, the variance of the adjusted
//! contrast is a quadratic in `(delta_0, delta_i)`, and the significance
//! boundary can be solved in closed form.

use serde::{Deserialize, Serialize};

use crate::estimators::EstimandResult;
use crate::parallel::{map_indexed, Execution};
use crate::{normal, PmmError, Result};

/// Penalty per arm, in outcome units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAdjustment {
    pub delta: Vec<f64>,
}

impl DeltaAdjustment {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(PmmError::InvalidArgument("delta values must be finite".into()));
        }
        Ok(Self { delta })
    }

    /// Shift only arm `arm`, reference fixed at zero.
    pub fn one_way(arms: usize, arm: usize, delta: f64) -> Result<Self> {
        let mut d = vec![0.0; arms];
        d[arm] = delta;
        Self::new(d)
    }
}

/// Adjusted contrast of one arm against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedContrast {
    pub arm: usize,
    pub delta0: f64,
    pub delta: f64,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

/// `Var(diff)(d0, di) = a0 d0^2 + ai di^2 + b0 d0 + bi di + c + cross d0 di`.
///
/// `cross = -2 Cov(q_0, q_i)`, zero whenever the arms are estimated
/// independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceQuadratic {
    pub arm: usize,
    pub a0: f64,
    pub ai: f64,
    pub b0: f64,
    pub bi: f64,
    pub c: f64,
    pub cross: f64,
}

impl VarianceQuadratic {
    pub fn eval(&self, d0: f64, di: f64) -> f64 {
        self.a0 * d0 * d0 + self.ai * di * di + self.b0 * d0 + self.bi * di + self.c + self.cross * d0 * di
    }
}

fn check_arm(result: &EstimandResult, arm: usize) -> Result<()> {
    if arm == 0 || arm >= result.arms() {
        return Err(PmmError::InvalidArgument(format!("arm {arm} must be in 1..{}", result.arms())));
    }
    Ok(())
}

/// Adjusted contrast of `arm` for penalties `(d0, di)`, by the delta method
/// over `(mu_0, mu_i, q_0, q_i)`.
pub fn delta_adjust_arm(result: &EstimandResult, arm: usize, d0: f64, di: f64) -> Result<AdjustedContrast> {
    check_arm(result, arm)?;
    let idx = [0, arm, result.q_index(0), result.q_index(arm)];
    let g = [-1.0, 1.0, -d0, di];
    let c = &result.joint_cov;
    // Start from the unadjusted contrast variance so zero penalties reproduce it exactly.
    let mut var = c[(arm, arm)] + c[(0, 0)] - 2.0 * c[(arm, 0)];
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            if a < 2 && b < 2 {
                continue;
            }
            var += g[a] * c[(ia, ib)] * g[b];
        }
    }
    let estimate = (result.means[arm] - result.means[0]) + di * result.q[arm] - d0 * result.q[0];
    let se = var.max(0.0).sqrt();
    let p_value = if se > 0.0 {
        normal::two_sided_p(estimate / se)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(AdjustedContrast { arm, delta0: d0, delta: di, estimate, se, p_value })
}

/// Adjusted contrasts of every non-reference arm.
pub fn delta_adjust(result: &EstimandResult, d: &DeltaAdjustment) -> Result<Vec<AdjustedContrast>> {
    if d.delta.len() != result.arms() {
        return Err(PmmError::InvalidArgument(format!(
            "expected {} delta values, got {}",
            result.arms(),
            d.delta.len()
        )));
    }
    (1..result.arms()).map(|i| delta_adjust_arm(result, i, d.delta[0], d.delta[i])).collect()
}

pub fn variance_quadratic(result: &EstimandResult, arm: usize) -> Result<VarianceQuadratic> {
    check_arm(result, arm)?;
    let c = &result.joint_cov;
    let (m0, mi, q0, qi) = (0, arm, result.q_index(0), result.q_index(arm));
    let cov_d = |q: usize| c[(mi, q)] - c[(m0, q)];
    Ok(VarianceQuadratic {
        arm,
        a0: c[(q0, q0)],
        ai: c[(qi, qi)],
        b0: -2.0 * cov_d(q0),
        bi: 2.0 * cov_d(qi),
        c: c[(mi, mi)] + c[(m0, m0)] - 2.0 * c[(mi, m0)],
        cross: -2.0 * c[(q0, qi)],
    })
}

/// One column of the two-way boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub delta0: f64,
    /// Valid roots in `delta_i`, ascending; zero, one or two.
    pub roots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingBoundary {
    pub arm: usize,
    pub alpha: f64,
    /// Sign of the unadjusted contrast; the boundary is where
    /// `s * estimate = z * se`.
    pub direction: f64,
    pub quadratic: VarianceQuadratic,
    /// Roots at `delta_0 = 0`.
    pub one_way: Vec<f64>,
    pub points: Vec<BoundaryPoint>,
}

impl TippingBoundary {
    /// Signed residual `s * estimate - z * se` at `(d0, di)`.
    pub fn residual(&self, result: &EstimandResult, d0: f64, di: f64) -> f64 {
        let z = normal::quantile(1.0 - self.alpha / 2.0);
        let est = (result.means[self.arm] - result.means[0]) + di * result.q[self.arm] - d0 * result.q[0];
        self.direction * est - z * self.quadratic.eval(d0, di).max(0.0).sqrt()
    }
}

fn solve_column(result: &EstimandResult, vq: &VarianceQuadratic, arm: usize, z: f64, s: f64, d0: f64) -> Vec<f64> {
    let e0 = (result.means[arm] - result.means[0]) - d0 * result.q[0];
    let qi = result.q[arm];
    // (e0 + qi x)^2 = z^2 (ai x^2 + (bi + cross d0) x + v0)
    let v0 = vq.a0 * d0 * d0 + vq.b0 * d0 + vq.c;
    let bx = vq.bi + vq.cross * d0;
    let z2 = z * z;
    let qa = qi * qi - z2 * vq.ai;
    let qb = 2.0 * e0 * qi - z2 * bx;
    let qc = e0 * e0 - z2 * v0;
    let mut cand = Vec::new();
    let scale = qa.abs().max(qb.abs()).max(qc.abs()).max(f64::MIN_POSITIVE);
    if qa.abs() <= 1e-14 * scale {
        if qb != 0.0 {
            cand.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable pair.
            let sgn = if qb >= 0.0 { 1.0 } else { -1.0 };
            let t = -0.5 * (qb + sgn * sq);
            if t != 0.0 {
                cand.push(qc / t);
                cand.push(t / qa);
            } else {
                cand.push(0.0);
            }
        }
    }
    let resid = |x: f64| {
        let v = (v0 + bx * x + vq.ai * x * x).max(0.0);
        s * (e0 + qi * x) - z * v.sqrt()
    };
    let dresid = |x: f64| {
        let v = (v0 + bx * x + vq.ai * x * x).max(f64::MIN_POSITIVE);
        s * qi - z * (bx + 2.0 * vq.ai * x) / (2.0 * v.sqrt())
    };
    let mut roots: Vec<f64> = Vec::new();
    for mut x in cand {
        if !x.is_finite() {
            continue;
        }
        for _ in 0..8 {
            let r = resid(x);
            let d = dresid(x);
            if r.abs() < 1e-13 || d == 0.0 || !d.is_finite() {
                break;
            }
            let nx = x - r / d;
            if !nx.is_finite() {
                break;
            }
            x = nx;
        }
        if resid(x).abs() < 1e-8 && !roots.iter().any(|r| (r - x).abs() <= 1e-9 * (1.0 + x.abs())) {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Closed-form significance boundary in `delta_i` for each `delta_0` in the
/// grid. Roots of the squared equation that do not solve the signed
/// equation are discarded.
pub fn tipping_boundary(
    result: &EstimandResult,
    arm: usize,
    alpha: f64,
    delta0_grid: &[f64],
) -> Result<TippingBoundary> {
    check_arm(result, arm)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PmmError::InvalidArgument(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let vq = variance_quadratic(result, arm)?;
    let qi = result.q[arm];
    if qi == 0.0 && vq.ai == 0.0 && vq.bi == 0.0 && vq.cross == 0.0 {
        return Err(PmmError::NoBoundary(format!(
            "arm {arm} has no imputed endpoints, so its penalty cannot change the result"
        )));
    }
    let z = normal::quantile(1.0 - alpha / 2.0);
    let est = result.means[arm] - result.means[0];
    let s = if est > 0.0 { 1.0 } else { -1.0 };
    let one_way = solve_column(result, &vq, arm, z, s, 0.0);
    let points = delta0_grid
        .iter()
        .map(|&d0| BoundaryPoint { delta0: d0, roots: solve_column(result, &vq, arm, z, s, d0) })
        .collect();
    Ok(TippingBoundary { arm, alpha, direction: s, quadratic: vq, one_way, points })
}

/// Two-sided p-values over a rectangle of penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueGrid {
    pub arm: usize,
    pub delta0: Vec<f64>,
    pub delta1: Vec<f64>,
    /// `p[a][b]` at `(delta0[a], delta1[b])`.
    pub p: Vec<Vec<f64>>,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

pub fn pvalue_grid(
    result: &EstimandResult,
    arm: usize,
    delta0: &[f64],
    delta1: &[f64],
    exec: Execution,
) -> Result<PValueGrid> {
    check_arm(result, arm)?;
    if delta0.iter().chain(delta1).any(|d| !d.is_finite()) {
        return Err(PmmError::InvalidArgument("grid values must be finite".into()));
    }
    let p = map_indexed(delta0.len(), exec, |a| {
        delta1
            .iter()
            .map(|&d1| delta_adjust_arm(result, arm, delta0[a], d1).map(|c| c.p_value))
            .collect::<Result<Vec<f64>>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PValueGrid { arm, delta0: delta0.to_vec(), delta1: delta1.to_vec(), p })
}
