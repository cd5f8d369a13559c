//! Randomization tests when `p` may exceed `n`.
//!
//! The ridge estimate is debiased with a lasso plug-in:
//! `a'beta_ridge - a0 + lambda a'P^-1 beta_lasso`, `P = X'X + lambda I`,
//! which under the null equals `a'P^-1 X'eps` up to the lasso error. Its
//! randomization distribution is obtained by transforming lasso residuals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    map_group, pvalue_two_sided, summarize, GroupDraws, ModeUsed, TestConfig, TestOutcome,
};
use crate::error::{Error, Result};
use crate::linmodel::{Dataset, LinearHypothesis};
use crate::primitives::PrimitiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_ridge: f64,
    pub lambda_lasso: f64,
    pub lasso_tol: f64,
    pub lasso_max_sweeps: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda_ridge: 1.0,
            lambda_lasso: 0.5,
            lasso_tol: 1e-7,
            lasso_max_sweeps: 100_000,
        }
    }
}

impl PenaltyConfig {
    pub fn new(lambda_ridge: f64, lambda_lasso: f64) -> Self {
        Self {
            lambda_ridge,
            lambda_lasso,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ridge > 0.0 && self.lambda_ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge penalty must be positive, got {}",
                self.lambda_ridge
            )));
        }
        if !(self.lambda_lasso > 0.0 && self.lambda_lasso.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lasso penalty must be positive, got {}",
                self.lambda_lasso
            )));
        }
        if self.lasso_tol.is_nan() || self.lasso_tol <= 0.0 || self.lasso_max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "lasso tolerance and sweep budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which linear system a ridge solve goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RidgeRoute {
    /// `(X'X + lambda I) b = X'y`, a `p x p` system.
    Primal,
    /// `b = X'(XX' + lambda I)^-1 y`, an `n x n` system.
    Dual,
}

/// Factorized `P = X'X + lambda I`.
pub struct RidgeOperator {
    x: DMatrix<f64>,
    lambda: f64,
    route: RidgeRoute,
    chol: Cholesky<f64, Dyn>,
}

impl RidgeOperator {
    /// Picks the primal route when `p <= n` and the dual one otherwise.
    pub fn new(x: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let route = if x.ncols() <= x.nrows() {
            RidgeRoute::Primal
        } else {
            RidgeRoute::Dual
        };
        Self::with_route(x, lambda, route)
    }

    pub fn with_route(x: &DMatrix<f64>, lambda: f64, route: RidgeRoute) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge penalty must be positive, got {lambda}"
            )));
        }
        let m = match route {
            RidgeRoute::Primal => x.tr_mul(x) + DMatrix::identity(x.ncols(), x.ncols()) * lambda,
            RidgeRoute::Dual => {
                x * x.transpose() + DMatrix::identity(x.nrows(), x.nrows()) * lambda
            }
        };
        let chol = Cholesky::new(m).ok_or(Error::SingularDesign {
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            x: x.clone(),
            lambda,
            route,
            chol,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn route(&self) -> RidgeRoute {
        self.route
    }

    /// `P^-1 b` for a length-`p` vector.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self.route {
            RidgeRoute::Primal => self.chol.solve(b),
            RidgeRoute::Dual => {
                // Woodbury: P^-1 = (I - X'(XX' + lambda I)^-1 X) / lambda.
                let xb = &self.x * b;
                (b - self.x.tr_mul(&self.chol.solve(&xb))) / self.lambda
            }
        }
    }

    /// `P^-1 X'`, a `p x n` matrix.
    pub fn solve_xt(&self) -> DMatrix<f64> {
        match self.route {
            RidgeRoute::Primal => self.chol.solve(&self.x.transpose()),
            RidgeRoute::Dual => self.chol.solve(&self.x).transpose(),
        }
    }

    /// `P^-1 X'y`.
    pub fn ridge(&self, y: &DVector<f64>) -> DVector<f64> {
        match self.route {
            RidgeRoute::Primal => self.chol.solve(&self.x.tr_mul(y)),
            RidgeRoute::Dual => self.x.tr_mul(&self.chol.solve(y)),
        }
    }
}

/// `(X'X + lambda I)^-1 X'y`.
pub fn fit_ridge(d: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    Ok(RidgeOperator::new(d.x(), lambda)?.ridge(d.y()))
}

pub fn fit_ridge_with(d: &Dataset, lambda: f64, route: RidgeRoute) -> Result<DVector<f64>> {
    Ok(RidgeOperator::with_route(d.x(), lambda, route)?.ridge(d.y()))
}

/// Precomputed quantities for coordinate descent on one design.
struct LassoProblem {
    /// `X'X / n`.
    q: DMatrix<f64>,
    /// `X'y / n`.
    c: DVector<f64>,
}

impl LassoProblem {
    fn new(d: &Dataset) -> Self {
        let n = d.n() as f64;
        Self {
            q: d.x().tr_mul(d.x()) / n,
            c: d.x().tr_mul(d.y()) / n,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.c.amax()
    }

    /// Largest violation of the optimality conditions, given the gradient
    /// `g = X'(y - X beta) / n`.
    fn kkt_gap(beta: &DVector<f64>, g: &DVector<f64>, lambda: f64) -> f64 {
        beta.iter()
            .zip(g.iter())
            .map(|(&b, &gj)| {
                if b == 0.0 {
                    (gj.abs() - lambda).max(0.0)
                } else {
                    (gj - lambda * b.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Cyclic coordinate descent from `beta`, updating it in place.
    fn solve(
        &self,
        beta: &mut DVector<f64>,
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<usize> {
        let p = beta.len();
        let mut g = &self.c - &self.q * &*beta;
        for sweep in 1..=max_sweeps {
            for j in 0..p {
                let qjj = self.q[(j, j)];
                if qjj <= 0.0 {
                    continue;
                }
                let z = g[j] + qjj * beta[j];
                let new = soft_threshold(z, lambda) / qjj;
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    g.axpy(-delta, &self.q.column(j), 1.0);
                }
            }
            if Self::kkt_gap(beta, &g, lambda) <= tol {
                return Ok(sweep);
            }
        }
        Err(Error::NoConvergence {
            sweeps: max_sweeps,
            kkt_gap: Self::kkt_gap(beta, &g, lambda),
        })
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Lasso solutions along a decreasing sequence of penalties, each started
/// from the previous one.
pub fn lasso_path(d: &Dataset, lambdas: &[f64], cfg: &PenaltyConfig) -> Result<Vec<DVector<f64>>> {
    if lambdas.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::InvalidConfig(
            "lasso penalties must be nonnegative".into(),
        ));
    }
    let problem = LassoProblem::new(d);
    let mut beta = DVector::zeros(d.p());
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        problem.solve(&mut beta, l, cfg.lasso_tol, cfg.lasso_max_sweeps)?;
        out.push(beta.clone());
    }
    Ok(out)
}

/// Number of warm-start steps between `lambda_max` and the target.
const PATH_STEPS: usize = 12;

/// Minimizer of `|y - X beta|^2 / (2n) + lambda |beta|_1`.
pub fn fit_lasso(d: &Dataset, lambda: f64, cfg: &PenaltyConfig) -> Result<DVector<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lasso penalty must be nonnegative, got {lambda}"
        )));
    }
    let problem = LassoProblem::new(d);
    let lmax = problem.lambda_max();
    let mut beta = DVector::zeros(d.p());
    if lambda >= lmax {
        return Ok(beta);
    }
    // Geometric path from lambda_max down to the target (or to a small
    // fraction of lambda_max when the target is zero).
    let floor = if lambda > 0.0 { lambda } else { lmax * 1e-4 };
    let ratio = (floor / lmax).powf(1.0 / PATH_STEPS as f64);
    let mut l = lmax;
    for _ in 0..PATH_STEPS {
        l *= ratio;
        if l <= lambda {
            break;
        }
        problem.solve(
            &mut beta,
            l,
            cfg.lasso_tol.max(1e-6 * lmax),
            cfg.lasso_max_sweeps,
        )?;
    }
    problem.solve(&mut beta, lambda, cfg.lasso_tol, cfg.lasso_max_sweeps)?;
    Ok(beta)
}

/// Largest KKT violation of `beta` for penalty `lambda` on `d`.
pub fn lasso_kkt_gap(d: &Dataset, beta: &DVector<f64>, lambda: f64) -> f64 {
    let g = d.x().tr_mul(&(d.y() - d.x() * beta)) / d.n() as f64;
    LassoProblem::kkt_gap(beta, &g, lambda)
}

/// Pieces shared by all coefficient tests on one dataset.
struct HighDimFit {
    op: RidgeOperator,
    beta_ridge: DVector<f64>,
    beta_lasso: DVector<f64>,
    residuals: DVector<f64>,
}

impl HighDimFit {
    fn new(d: &Dataset, pen: &PenaltyConfig) -> Result<Self> {
        pen.validate()?;
        let beta_lasso = fit_lasso(d, pen.lambda_lasso, pen)?;
        let residuals = d.y() - d.x() * &beta_lasso;
        let op = RidgeOperator::new(d.x(), pen.lambda_ridge)?;
        let beta_ridge = op.ridge(d.y());
        Ok(Self {
            op,
            beta_ridge,
            beta_lasso,
            residuals,
        })
    }

    /// `a'beta_ridge + lambda a'P^-1 beta_lasso`.
    fn debiased(&self, a: &DVector<f64>) -> f64 {
        a.dot(&self.beta_ridge) + self.op.lambda() * a.dot(&self.op.solve(&self.beta_lasso))
    }
}

/// Test of `a'beta = a0` using the debiased ridge statistic and lasso
/// residuals.
pub fn run_highdim_test(
    d: &Dataset,
    h: &LinearHypothesis,
    pen: &PenaltyConfig,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    let warnings = cfg.validate()?;
    if h.a().len() != d.p() {
        return Err(Error::DimensionMismatch {
            what: "contrast vector",
            expected: d.p(),
            found: h.a().len(),
        });
    }
    let fit = HighDimFit::new(d, pen)?;
    let sqrt_n = (d.n() as f64).sqrt();
    let t_obs = sqrt_n * (fit.debiased(h.a()) - h.a0());
    let weight = d.x() * fit.op.solve(h.a()) * sqrt_n;
    let (w, u) = (weight.as_slice(), fit.residuals.as_slice());
    let draws = map_group(kind, d.n(), cfg, |g| {
        g.perm
            .iter()
            .zip(&g.sign)
            .zip(w)
            .map(|((&p, &s), &wi)| wi * f64::from(s) * u[p])
            .sum::<f64>()
    })?;
    Ok(summarize(t_obs, draws, cfg, warnings))
}

/// Per-coefficient tests of `beta_j = 0` with Bonferroni control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyTestReport {
    /// Two-sided p-values, `min(1, 2 min(P>=, P<=))`.
    pub per_coef_pvals: Vec<f64>,
    /// `per_coef_pvals[j] <= alpha_family / p`.
    pub rejected: Vec<bool>,
    pub alpha_family: f64,
    pub statistics: Vec<f64>,
    pub mode_used: ModeUsed,
}

impl FamilyTestReport {
    pub fn threshold(&self) -> f64 {
        self.alpha_family / self.per_coef_pvals.len() as f64
    }
}

/// Tests every `beta_j = 0` at family level `cfg.alpha`. All coefficients
/// share the same group elements, so each p-value equals the one
/// [`run_highdim_test`] would give with the same configuration.
pub fn family_test(
    d: &Dataset,
    pen: &PenaltyConfig,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
) -> Result<FamilyTestReport> {
    cfg.validate()?;
    let fit = HighDimFit::new(d, pen)?;
    let sqrt_n = (d.n() as f64).sqrt();
    let p = d.p();
    let shrunk_lasso = fit.op.solve(&fit.beta_lasso) * fit.op.lambda();
    let statistics: Vec<f64> = (0..p)
        .map(|j| sqrt_n * (fit.beta_ridge[j] + shrunk_lasso[j]))
        .collect();
    let w = fit.op.solve_xt() * sqrt_n;
    let u = fit.residuals.as_slice();
    let GroupDraws {
        values, mode_used, ..
    } = map_group(kind, d.n(), cfg, |g| {
        let gu = DVector::from_iterator(
            u.len(),
            g.perm
                .iter()
                .zip(&g.sign)
                .map(|(&p, &s)| f64::from(s) * u[p]),
        );
        &w * gu
    })?;
    let per_coef_pvals: Vec<f64> = (0..p)
        .map(|j| {
            let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
            (2.0 * pvalue_two_sided(statistics[j], &col)).min(1.0)
        })
        .collect();
    let threshold = cfg.alpha / p as f64;
    let rejected = per_coef_pvals.iter().map(|&pv| pv <= threshold).collect();
    Ok(FamilyTestReport {
        per_coef_pvals,
        rejected,
        alpha_family: cfg.alpha,
        statistics,
        mode_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyKind {
    Ridge,
    Lasso,
}

/// K-fold cross-validated choice among `candidates` by mean squared
/// prediction error. A convenience default, not part of the test itself.
pub fn cross_validate_penalty(
    d: &Dataset,
    which: PenaltyKind,
    candidates: &[f64],
    folds: usize,
    seed: u64,
    pen: &PenaltyConfig,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("penalty candidates"));
    }
    let n = d.n();
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!(
            "need 2 <= folds <= n, got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            f[i] = k % folds;
        }
        f
    };
    let subset = |rows: &[usize]| -> Result<Dataset> {
        let x = DMatrix::from_fn(rows.len(), d.p(), |r, c| d.x()[(rows[r], c)]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.y()[i]));
        Dataset::new(y, x)
    };
    let mut best = (f64::INFINITY, candidates[0]);
    for &lambda in candidates {
        let mut sse = 0.0;
        for k in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let dt = subset(&train)?;
            let beta = match which {
                PenaltyKind::Ridge => fit_ridge(&dt, lambda)?,
                PenaltyKind::Lasso => fit_lasso(&dt, lambda, pen)?,
            };
            let dv = subset(&test)?;
            sse += (dv.y() - dv.x() * beta).norm_squared();
        }
        if sse < best.0 {
            best = (sse, lambda);
        }
    }
    Ok(best.1)
}
