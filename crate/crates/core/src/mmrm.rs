//! Per-arm multivariate normal regression with a saturated visit-by-covariate
//! mean and an unstructured covariance, fit by EM under ignorable missingness.
//!
//! The mean of subject `j` at visit `k` is `beta_k0 + x_j' beta_k1`. The
//! coefficient vector is stored visit-major: `beta[k * p + a]` with `p = m + 1`
//! and `a = 0` the intercept. The design matrix of a subject is therefore the
//! block-diagonal `I_K (x) z_j'` with `z_j = (1, x_j')'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Subject;
use crate::linalg::{floor_eigenvalues, min_eigenvalue, ols, spd_inverse, symmetrized};
use crate::{PmmError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which baseline covariates enter the per-visit regressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Indices into the subject covariate vector.
    pub covariates: Vec<usize>,
}

impl DesignSpec {
    pub fn new(covariates: Vec<usize>) -> Self {
        Self { covariates }
    }

    /// Use the first `m` covariates.
    pub fn all(m: usize) -> Self {
        Self::new((0..m).collect())
    }

    /// Intercepts only.
    pub fn intercept_only() -> Self {
        Self::new(Vec::new())
    }

    /// Number of covariates `m`.
    pub fn m(&self) -> usize {
        self.covariates.len()
    }

    /// Coefficients per visit, `m + 1`.
    pub fn p(&self) -> usize {
        self.covariates.len() + 1
    }

    /// The selected covariate values `x_j`.
    pub fn x(&self, s: &Subject) -> Vec<f64> {
        self.covariates.iter().map(|&c| s.covariates()[c]).collect()
    }

    /// `z_j = (1, x_j')'`.
    pub fn z(&self, s: &Subject) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.p());
        z.push(1.0);
        z.extend(self.covariates.iter().map(|&c| s.covariates()[c]));
        z
    }
}

/// Subjects entering a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitSubset {
    AllObserved,
    /// Subjects in Pattern A at the final visit.
    PatternA,
}

impl FitSubset {
    pub fn includes(&self, s: &Subject) -> bool {
        match self {
            FitSubset::AllObserved => true,
            FitSubset::PatternA => s.pattern_a_final(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when the log-likelihood changes by less than this.
    pub tol: f64,
    /// Multiply the final covariance by `n / (n - p)`.
    pub reml_scale: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8, reml_scale: false }
    }
}

/// Fitted per-arm model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFit {
    pub visits: usize,
    pub design: DesignSpec,
    /// Visit-major coefficients, length `K * p`.
    pub beta: Vec<f64>,
    /// Row-major `K x K` covariance.
    pub sigma: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub subset: FitSubset,
    /// Subjects with at least one observed visit in the subset.
    pub n_used: usize,
    /// Observed-data log-likelihood at each EM iterate.
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

impl ArmFit {
    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.visits, self.visits, &self.sigma)
    }

    /// `(beta_k0, beta_k1')` for visit `k` (0-based).
    pub fn coefficients(&self, k: usize) -> &[f64] {
        let p = self.p();
        &self.beta[k * p..(k + 1) * p]
    }

    /// `beta_k0 + nu' beta_k1` for visit `k` (0-based).
    pub fn marginal_mean(&self, k: usize, nu: &[f64]) -> f64 {
        marginal_mean(self, k, nu)
    }

    /// Turn a non-converged fit into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            let n = self.loglik_trace.len();
            let last_change =
                if n >= 2 { (self.loglik_trace[n - 1] - self.loglik_trace[n - 2]).abs() } else { f64::NAN };
            Err(PmmError::NotConverged { iterations: self.iterations, last_change })
        }
    }
}

/// `beta_k0 + nu' beta_k1` for visit `k` (0-based).
pub fn marginal_mean(fit: &ArmFit, k: usize, nu: &[f64]) -> f64 {
    let c = fit.coefficients(k);
    c[0] + c[1..].iter().zip(nu).map(|(b, x)| b * x).sum::<f64>()
}

struct Group {
    obs: Vec<usize>,
    mis: Vec<usize>,
    rows: Vec<usize>,
}

struct Prepared {
    k: usize,
    p: usize,
    /// Row-major `n x p`.
    z: Vec<f64>,
    /// Row-major `n x k`, zero where missing.
    y: Vec<f64>,
    groups: Vec<Group>,
}

impl Prepared {
    fn n(&self) -> usize {
        self.z.len() / self.p
    }

    fn z_row(&self, j: usize) -> &[f64] {
        &self.z[j * self.p..(j + 1) * self.p]
    }

    fn y_row(&self, j: usize) -> &[f64] {
        &self.y[j * self.k..(j + 1) * self.k]
    }
}

fn prepare(subjects: &[&Subject], design: &DesignSpec, subset: FitSubset) -> Result<Prepared> {
    let k = subjects.first().map(|s| s.visits()).unwrap_or(0);
    if k == 0 {
        return Err(PmmError::RankDeficient("no subjects to fit".into()));
    }
    if k > 63 {
        return Err(PmmError::InvalidArgument("at most 63 visits are supported".into()));
    }
    let p = design.p();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut by_mask: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    let mut n = 0;
    for s in subjects {
        if !subset.includes(s) || !s.any_observed() {
            continue;
        }
        z.extend(design.z(s));
        y.extend(s.outcomes().iter().map(|v| v.unwrap_or(0.0)));
        by_mask.entry(s.observed_mask()).or_default().push(n);
        n += 1;
    }
    let mut counts = vec![0usize; k];
    let groups = by_mask
        .into_iter()
        .map(|(mask, rows)| {
            let obs: Vec<usize> = (0..k).filter(|&v| mask & (1 << v) != 0).collect();
            let mis: Vec<usize> = (0..k).filter(|&v| mask & (1 << v) == 0).collect();
            for &v in &obs {
                counts[v] += rows.len();
            }
            Group { obs, mis, rows }
        })
        .collect();
    if let Some(v) = counts.iter().position(|&c| c == 0) {
        return Err(PmmError::RankDeficient(format!("visit {} has no observations", v + 1)));
    }
    Ok(Prepared { k, p, z, y, groups })
}

struct PatternCache {
    /// `Sigma_OO^{-1}`.
    obs_inv: DMatrix<f64>,
    /// `Sigma_MO Sigma_OO^{-1}`.
    w: DMatrix<f64>,
    /// `Sigma_MM - Sigma_MO Sigma_OO^{-1} Sigma_OM`.
    cmis: DMatrix<f64>,
    logdet: f64,
}

fn pattern_cache(sigma: &DMatrix<f64>, g: &Group) -> Result<PatternCache> {
    let oo = sigma.select_rows(&g.obs).select_columns(&g.obs);
    let chol =
        oo.clone().cholesky().ok_or_else(|| PmmError::SingularCovariance { min_eigenvalue: min_eigenvalue(&oo) })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let obs_inv = chol.inverse();
    let (w, cmis) = if g.mis.is_empty() {
        (DMatrix::zeros(0, g.obs.len()), DMatrix::zeros(0, 0))
    } else {
        let mo = sigma.select_rows(&g.mis).select_columns(&g.obs);
        let mm = sigma.select_rows(&g.mis).select_columns(&g.mis);
        let w = &mo * &obs_inv;
        let cmis = symmetrized(mm - &w * mo.transpose());
        (w, cmis)
    };
    Ok(PatternCache { obs_inv, w, cmis, logdet })
}

/// Coefficients as a `p x K` matrix `B` with mean `B' z`.
fn beta_matrix(beta: &[f64], p: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, k, |a, v| beta[v * p + a])
}

fn mean_row(b: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    for (v, o) in out.iter_mut().enumerate() {
        *o = z.iter().enumerate().map(|(a, za)| za * b[(a, v)]).sum();
    }
}

/// Observed-data log-likelihood; fills `yhat` with conditional expectations.
fn e_step(d: &Prepared, b: &DMatrix<f64>, caches: &[PatternCache], yhat: &mut [f64]) -> f64 {
    let k = d.k;
    let mut ll = 0.0;
    let mut mu = vec![0.0; k];
    for (g, c) in d.groups.iter().zip(caches) {
        let no = g.obs.len();
        let mut r = vec![0.0; no];
        for &j in &g.rows {
            mean_row(b, d.z_row(j), &mut mu);
            let yj = d.y_row(j);
            for (i, &v) in g.obs.iter().enumerate() {
                r[i] = yj[v] - mu[v];
            }
            let mut quad = 0.0;
            for a in 0..no {
                let mut s = 0.0;
                for bb in 0..no {
                    s += c.obs_inv[(a, bb)] * r[bb];
                }
                quad += r[a] * s;
            }
            ll -= 0.5 * (no as f64 * LN_2PI + c.logdet + quad);
            let out = &mut yhat[j * k..(j + 1) * k];
            out.copy_from_slice(yj);
            for (i, &v) in g.mis.iter().enumerate() {
                let mut s = mu[v];
                for (a, ra) in r.iter().enumerate() {
                    s += c.w[(i, a)] * ra;
                }
                out[v] = s;
            }
        }
    }
    ll
}

fn initial_values(d: &Prepared) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (k, p, n) = (d.k, d.p, d.n());
    let mut b = DMatrix::zeros(p, k);
    let mut resid: Vec<Vec<Option<f64>>> = vec![vec![None; k]; n];
    for v in 0..k {
        let rows: Vec<usize> =
            d.groups.iter().filter(|g| g.obs.contains(&v)).flat_map(|g| g.rows.iter().copied()).collect();
        let z = DMatrix::from_fn(rows.len(), p, |i, a| d.z_row(rows[i])[a]);
        let y = DVector::from_fn(rows.len(), |i, _| d.y_row(rows[i])[v]);
        let coef = match ols(&z, &y) {
            Some(f) => f.beta,
            None => {
                let mut c = DVector::zeros(p);
                c[0] = y.mean();
                c
            }
        };
        for a in 0..p {
            b[(a, v)] = coef[a];
        }
        for (i, &j) in rows.iter().enumerate() {
            let fitted: f64 = (0..p).map(|a| z[(i, a)] * coef[a]).sum();
            resid[j][v] = Some(y[i] - fitted);
        }
    }
    let mut s = DMatrix::zeros(k, k);
    for v in 0..k {
        for w in 0..=v {
            let (mut acc, mut cnt) = (0.0, 0usize);
            for r in &resid {
                if let (Some(a), Some(c)) = (r[v], r[w]) {
                    acc += a * c;
                    cnt += 1;
                }
            }
            let val = if cnt > 0 { acc / cnt as f64 } else { 0.0 };
            s[(v, w)] = val;
            s[(w, v)] = val;
        }
    }
    Ok((b, floor_eigenvalues(&s, 1e-6)))
}

/// Returns the matrix and whether the ridge was needed.
fn regularize(sigma: DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let ev = min_eigenvalue(&sigma);
    if ev >= 1e-10 {
        return Ok((sigma, false));
    }
    let k = sigma.nrows();
    let ridge = 1e-8 * sigma.trace() / k as f64;
    let s = sigma + DMatrix::identity(k, k) * ridge;
    let ev = min_eigenvalue(&s);
    if ev < 1e-10 || !ev.is_finite() {
        return Err(PmmError::SingularCovariance { min_eigenvalue: ev });
    }
    Ok((s, true))
}

/// GLS coefficients for fixed `sigma`.
fn gls(d: &Prepared, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (k, p) = (d.k, d.p);
    let dim = k * p;
    let mut info = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for g in &d.groups {
        let c = pattern_cache(sigma, g)?;
        let mut zz = DMatrix::<f64>::zeros(p, p);
        let mut zy = DMatrix::<f64>::zeros(p, k);
        for &j in &g.rows {
            let z = d.z_row(j);
            let y = d.y_row(j);
            for a in 0..p {
                for bb in 0..p {
                    zz[(a, bb)] += z[a] * z[bb];
                }
                for &v in &g.obs {
                    zy[(a, v)] += z[a] * y[v];
                }
            }
        }
        for (io, &v) in g.obs.iter().enumerate() {
            for (jo, &w) in g.obs.iter().enumerate() {
                let s = c.obs_inv[(io, jo)];
                for a in 0..p {
                    rhs[v * p + a] += s * zy[(a, w)];
                    for bb in 0..p {
                        info[(v * p + a, w * p + bb)] += s * zz[(a, bb)];
                    }
                }
            }
        }
    }
    let chol = info.cholesky().ok_or_else(|| PmmError::RankDeficient("GLS information matrix is singular".into()))?;
    Ok(chol.solve(&rhs))
}

/// Maximum likelihood fit of one arm.
///
/// Returns `Ok` with `converged = false` when `max_iter` is reached; call
/// [`ArmFit::require_converged`] to treat that as an error.
pub fn fit_mmrm(subjects: &[&Subject], design: &DesignSpec, subset: FitSubset, cfg: &EmConfig) -> Result<ArmFit> {
    let d = prepare(subjects, design, subset)?;
    let (k, p, n) = (d.k, d.p, d.n());
    let zmat = DMatrix::from_row_slice(n, p, &d.z);
    let zz_inv = spd_inverse(&(zmat.transpose() * &zmat))
        .ok_or_else(|| PmmError::RankDeficient("covariate design is singular".into()))?;
    let proj = &zz_inv * zmat.transpose();

    let (mut b, mut sigma) = initial_values(&d)?;
    let mut yhat = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // The ridge is allowed once. The step that applies it is not an EM step,
    // so monotonicity is not checked across it.
    let mut ridged = false;
    let mut just_ridged = false;
    loop {
        let caches: Vec<PatternCache> = d.groups.iter().map(|g| pattern_cache(&sigma, g)).collect::<Result<_>>()?;
        let ll = e_step(&d, &b, &caches, &mut yhat);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            debug_assert!(
                just_ridged || ll >= prev - 1e-10 * prev.abs().max(1.0),
                "EM log-likelihood decreased from {prev} to {ll}"
            );
            if (ll - prev).abs() < cfg.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;

        let ymat = DMatrix::from_row_slice(n, k, &yhat);
        b = &proj * &ymat;
        let e = &ymat - &zmat * &b;
        let mut s = e.transpose() * &e;
        for (g, c) in d.groups.iter().zip(&caches) {
            if g.mis.is_empty() {
                continue;
            }
            let cnt = g.rows.len() as f64;
            for (i, &v) in g.mis.iter().enumerate() {
                for (j, &w) in g.mis.iter().enumerate() {
                    s[(v, w)] += cnt * c.cmis[(i, j)];
                }
            }
        }
        let raw = symmetrized(s / n as f64);
        let (next, ridge) = regularize(raw.clone())?;
        if ridge && ridged {
            // The likelihood is heading to a singular boundary.
            return Err(PmmError::SingularCovariance { min_eigenvalue: min_eigenvalue(&raw) });
        }
        ridged |= ridge;
        just_ridged = ridge;
        sigma = next;
    }

    let beta_gls = gls(&d, &sigma)?;
    let beta: Vec<f64> = beta_gls.iter().copied().collect();
    let caches: Vec<PatternCache> = d.groups.iter().map(|g| pattern_cache(&sigma, g)).collect::<Result<_>>()?;
    let loglik = e_step(&d, &beta_matrix(&beta, p, k), &caches, &mut yhat);
    if cfg.reml_scale {
        if n <= p {
            return Err(PmmError::RankDeficient("too few subjects for the REML multiplier".into()));
        }
        sigma *= n as f64 / (n - p) as f64;
    }
    Ok(ArmFit {
        visits: k,
        design: design.clone(),
        beta,
        sigma: sigma.transpose().as_slice().to_vec(),
        loglik,
        iterations,
        converged,
        subset,
        n_used: n,
        loglik_trace: trace,
    })
}

/// Stacked estimating-function rows for the coefficient block.
///
/// `psi` has one row per entry of `subjects` (zero for subjects outside the
/// fit subset or without observations); `jacobian` is the summed derivative
/// `-sum_j X_j' Sigma_O^{-1} X_j`.
pub(crate) fn beta_score_rows(fit: &ArmFit, subjects: &[&Subject]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (k, p) = (fit.visits, fit.p());
    let dim = k * p;
    let sigma = fit.sigma_matrix();
    let mut psi = DMatrix::zeros(subjects.len(), dim);
    let mut jac = DMatrix::zeros(dim, dim);
    let mut cache: std::collections::HashMap<u64, DMatrix<f64>> = Default::default();
    let mut mu = vec![0.0; k];
    let b = beta_matrix(&fit.beta, p, k);
    for (row, s) in subjects.iter().enumerate() {
        if !fit.subset.includes(s) || !s.any_observed() {
            continue;
        }
        let mask = s.observed_mask();
        let obs: Vec<usize> = (0..k).filter(|&v| mask & (1 << v) != 0).collect();
        if !cache.contains_key(&mask) {
            let oo = sigma.select_rows(&obs).select_columns(&obs);
            let inv = spd_inverse(&oo).ok_or(PmmError::SingularCovariance { min_eigenvalue: min_eigenvalue(&oo) })?;
            cache.insert(mask, inv);
        }
        let inv = &cache[&mask];
        let z = fit.design.z(s);
        mean_row(&b, &z, &mut mu);
        let r: Vec<f64> = obs.iter().map(|&v| s.outcome(v).unwrap() - mu[v]).collect();
        for (io, &v) in obs.iter().enumerate() {
            let w: f64 = (0..obs.len()).map(|jo| inv[(io, jo)] * r[jo]).sum();
            for a in 0..p {
                psi[(row, v * p + a)] = z[a] * w;
            }
            for (jo, &u) in obs.iter().enumerate() {
                let sv = inv[(io, jo)];
                for a in 0..p {
                    for bb in 0..p {
                        jac[(v * p + a, u * p + bb)] -= sv * z[a] * z[bb];
                    }
                }
            }
        }
    }
    Ok((psi, jac))
}

/// Per-subject estimating-function contributions for the coefficient block.
#[derive(Debug, Clone)]
pub struct BetaContributions {
    /// `psi_j = X_j' Sigma_O^{-1} (y_O - X_j beta)`, one per subject.
    pub psi: Vec<DVector<f64>>,
    /// `d psi_j / d beta' = -X_j' Sigma_O^{-1} X_j`.
    pub jacobians: Vec<DMatrix<f64>>,
}

/// Per-subject score contributions and their Jacobians, with `Sigma` held
/// at its estimate.
pub fn uee_contributions(fit: &ArmFit, subjects: &[&Subject]) -> Result<BetaContributions> {
    let mut psi = Vec::with_capacity(subjects.len());
    let mut jacobians = Vec::with_capacity(subjects.len());
    for s in subjects {
        let (ps, jac) = beta_score_rows(fit, std::slice::from_ref(s))?;
        psi.push(ps.row(0).transpose());
        jacobians.push(jac);
    }
    Ok(BetaContributions { psi, jacobians })
}

/// Ordinary least squares of the final-visit outcome on `(1, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionalFit {
    pub design: DesignSpec,
    /// `(beta_0, beta_1')`.
    pub beta: Vec<f64>,
    /// `RSS / (n - p)`.
    pub residual_variance: f64,
    pub n_used: usize,
    /// Row-major `(Z'Z)^{-1}`.
    pub zz_inv: Vec<f64>,
}

impl CrossSectionalFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.beta[0] + self.beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Regression of `Y_K` on `(1, x)` among retrieved dropouts
/// (`A_K = 0`, `R_K = 1`) of one arm.
pub fn fit_endpoint_regression(subjects: &[&Subject], design: &DesignSpec) -> Result<CrossSectionalFit> {
    let arm = subjects.first().map(|s| s.arm()).unwrap_or(0);
    let required = design.p() + 1;
    let count = subjects.iter().filter(|s| !s.pattern_a_final() && s.observed_final()).count();
    if count < required {
        return Err(PmmError::InsufficientRetrievedDropouts { arm, count, required });
    }
    fit_endpoint_ols(subjects, design, |s| !s.pattern_a_final()).map_err(|_| PmmError::InsufficientRetrievedDropouts {
        arm,
        count,
        required,
    })
}

/// Regression of the observed `Y_K` on `(1, x)` over subjects satisfying
/// `filter`.
pub fn fit_endpoint_ols(
    subjects: &[&Subject],
    design: &DesignSpec,
    filter: impl Fn(&Subject) -> bool,
) -> Result<CrossSectionalFit> {
    let rows: Vec<&&Subject> = subjects.iter().filter(|s| filter(s) && s.observed_final()).collect();
    let p = design.p();
    if rows.len() <= p {
        return Err(PmmError::InsufficientData(format!("{} observations for {p} coefficients", rows.len())));
    }
    let k = rows[0].visits() - 1;
    let z = DMatrix::from_fn(rows.len(), p, |i, a| design.z(rows[i])[a]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i].outcome(k).unwrap());
    let f = ols(&z, &y).ok_or_else(|| PmmError::RankDeficient("endpoint regression design is singular".into()))?;
    Ok(CrossSectionalFit {
        design: design.clone(),
        beta: f.beta.iter().copied().collect(),
        residual_variance: f.rss / (f.n - p) as f64,
        n_used: f.n,
        zz_inv: f.zz_inv.transpose().as_slice().to_vec(),
    })
}

/// Estimating-function rows `I(filter) z_j (y_jK - z_j' beta)` and the summed
/// Jacobian `-sum I(filter) z_j z_j'`.
pub(crate) fn endpoint_score_rows(
    fit: &CrossSectionalFit,
    subjects: &[&Subject],
    filter: impl Fn(&Subject) -> bool,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = fit.design.p();
    let mut psi = DMatrix::zeros(subjects.len(), p);
    let mut jac = DMatrix::zeros(p, p);
    for (row, s) in subjects.iter().enumerate() {
        if !filter(s) || !s.observed_final() {
            continue;
        }
        let z = fit.design.z(s);
        let r = s.outcome(s.visits() - 1).unwrap() - fit.predict(&z[1..]);
        for a in 0..p {
            psi[(row, a)] = z[a] * r;
            for b in 0..p {
                jac[(a, b)] -= z[a] * z[b];
            }
        }
    }
    (psi, jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(i: usize, x: f64, y: Vec<Option<f64>>) -> Subject {
        Subject::new(format!("s{i}"), 0, vec![x], y)
    }

    #[test]
    fn single_subject_is_singular() {
        let s = Subject::new("a", 0, vec![], vec![Some(5.0)]);
        let err =
            fit_mmrm(&[&s], &DesignSpec::intercept_only(), FitSubset::AllObserved, &EmConfig::default()).unwrap_err();
        assert!(matches!(err, PmmError::SingularCovariance { .. }));
    }

    #[test]
    fn empty_visit_is_rank_deficient() {
        let ss: Vec<Subject> = (0..5).map(|i| subj(i, i as f64, vec![Some(1.0 + i as f64), None])).collect();
        let refs: Vec<&Subject> = ss.iter().collect();
        let err = fit_mmrm(&refs, &DesignSpec::all(1), FitSubset::AllObserved, &EmConfig::default()).unwrap_err();
        assert!(matches!(err, PmmError::RankDeficient(_)));
    }

    #[test]
    fn marginal_mean_arithmetic() {
        let fit = ArmFit {
            visits: 1,
            design: DesignSpec::all(1),
            beta: vec![2.0, 0.5],
            sigma: vec![1.0],
            loglik: 0.0,
            iterations: 0,
            converged: true,
            subset: FitSubset::AllObserved,
            n_used: 1,
            loglik_trace: vec![],
        };
        assert_eq!(marginal_mean(&fit, 0, &[4.0]), 4.0);
        assert_eq!(marginal_mean(&fit, 0, &[0.0]), 2.0);
    }

    #[test]
    fn endpoint_regression_exact_line() {
        let ss: Vec<Subject> = [(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| subj(i, x, vec![Some(y)]).with_pattern(vec![false]))
            .collect();
        let refs: Vec<&Subject> = ss.iter().collect();
        let f = fit_endpoint_regression(&refs, &DesignSpec::all(1)).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-12 && (f.beta[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.n_used, 3);
    }

    #[test]
    fn endpoint_regression_needs_enough_dropouts() {
        let ss = [subj(0, 0.0, vec![Some(1.0)]).with_pattern(vec![false])];
        let refs: Vec<&Subject> = ss.iter().collect();
        let err = fit_endpoint_regression(&refs, &DesignSpec::all(1)).unwrap_err();
        assert!(matches!(err, PmmError::InsufficientRetrievedDropouts { count: 1, required: 3, .. }));
    }

    #[test]
    fn all_missing_subject_contributes_nothing() {
        let mut ss: Vec<Subject> = (0..6)
            .map(|i| subj(i, i as f64, vec![Some(i as f64 * 0.7 + (i % 3) as f64), Some(i as f64 - (i % 2) as f64)]))
            .collect();
        ss.push(subj(9, 1.0, vec![None, None]));
        let refs: Vec<&Subject> = ss.iter().collect();
        let fit = fit_mmrm(&refs, &DesignSpec::all(1), FitSubset::AllObserved, &EmConfig::default()).unwrap();
        assert_eq!(fit.n_used, 6);
        let c = uee_contributions(&fit, &refs).unwrap();
        assert!(c.psi[6].iter().all(|v| *v == 0.0));
        assert!(c.jacobians[6].iter().all(|v| *v == 0.0));
    }
}
