//! Least-squares fits, restricted fits under a single linear constraint, and
//! the contrast statistic functional.
//!
//! Everything here is a pure function of its inputs. A [`Design`] caches the
//! QR factorization of `X` for reuse across fits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest accepted condition number of `X'X`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Response, design matrix and optional structure labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    cluster: Option<Vec<usize>>,
    row_cluster: Option<Vec<usize>>,
    col_cluster: Option<Vec<usize>>,
    time: Option<Vec<i64>>,
}

impl Dataset {
    /// Builds a dataset from a response and a design matrix. No intercept
    /// column is added.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyInput("response vector"));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "design rows",
                expected: y.len(),
                found: x.nrows(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::EmptyInput("design matrix has no columns"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "data contain non-finite values".into(),
            ));
        }
        Ok(Self {
            y,
            x,
            cluster: None,
            row_cluster: None,
            col_cluster: None,
            time: None,
        })
    }

    /// Convenience constructor from row-major covariate rows.
    pub fn from_rows(y: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidConfig("ragged covariate rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(DVector::from_column_slice(y), x)
    }

    /// Attaches one-way cluster labels. Labels must be contiguous `0..J`
    /// with every label used.
    pub fn with_clusters(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_len("cluster labels", labels.len())?;
        check_contiguous(&labels)?;
        self.cluster = Some(labels);
        Ok(self)
    }

    /// Attaches row and column cluster labels for two-way structures.
    pub fn with_two_way(mut self, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        self.check_len("row cluster labels", rows.len())?;
        self.check_len("column cluster labels", cols.len())?;
        self.row_cluster = Some(rows);
        self.col_cluster = Some(cols);
        Ok(self)
    }

    /// Attaches a strictly increasing time index.
    pub fn with_time(mut self, time: Vec<i64>) -> Result<Self> {
        self.check_len("time index", time.len())?;
        if time.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidLabels(
                "time index must be strictly increasing".into(),
            ));
        }
        self.time = Some(time);
        Ok(self)
    }

    fn check_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.n(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn cluster(&self) -> Option<&[usize]> {
        self.cluster.as_deref()
    }

    pub fn row_cluster(&self) -> Option<&[usize]> {
        self.row_cluster.as_deref()
    }

    pub fn col_cluster(&self) -> Option<&[usize]> {
        self.col_cluster.as_deref()
    }

    pub fn time(&self) -> Option<&[i64]> {
        self.time.as_deref()
    }

    /// Same covariates and labels with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        self.check_len("response", y.len())?;
        Ok(Self { y, ..self.clone() })
    }

    /// `max(1, max|X|, max|y|)`, the unit used to normalize tolerances.
    pub fn scale(&self) -> f64 {
        let xm = self.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let ym = self.y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        1.0_f64.max(xm).max(ym)
    }
}

fn check_contiguous(labels: &[usize]) -> Result<()> {
    let j = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; j];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidLabels(format!(
            "cluster labels must be contiguous from 0; label {missing} is unused"
        )));
    }
    Ok(())
}

/// The null hypothesis `a'beta = a0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearHypothesis {
    a: DVector<f64>,
    a0: f64,
}

impl LinearHypothesis {
    pub fn new(a: DVector<f64>, a0: f64) -> Result<Self> {
        if a.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidHypothesis(
                "contrast vector is all zeros".into(),
            ));
        }
        if a.iter().any(|v| !v.is_finite()) || !a0.is_finite() {
            return Err(Error::InvalidHypothesis(
                "contrast has non-finite entries".into(),
            ));
        }
        Ok(Self { a, a0 })
    }

    /// `beta_j = a0` in a model with `p` coefficients.
    pub fn coefficient(p: usize, j: usize, a0: f64) -> Result<Self> {
        if j >= p {
            return Err(Error::InvalidHypothesis(format!(
                "coefficient index {j} out of range for p = {p}"
            )));
        }
        let mut a = DVector::zeros(p);
        a[j] = 1.0;
        Self::new(a, a0)
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    /// Same contrast, different null value.
    pub fn with_a0(&self, a0: f64) -> Self {
        Self {
            a: self.a.clone(),
            a0,
        }
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.a.len() != p {
            return Err(Error::DimensionMismatch {
                what: "contrast vector",
                expected: p,
                found: self.a.len(),
            });
        }
        Ok(())
    }
}

/// Unconstrained least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub residuals: DVector<f64>,
    pub gram_inverse: DMatrix<f64>,
}

/// Least-squares fit under `a'beta = a0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFit {
    pub beta_restricted: DVector<f64>,
    pub restricted_residuals: DVector<f64>,
}

/// The linear functional `t_n(u) = v'u` with `v = sqrt(n) X (X'X)^-1 a`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatFunctional {
    pub weight: DVector<f64>,
}

impl StatFunctional {
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        self.weight.dot(u)
    }
}

/// QR factorization of a full-rank design, reusable across responses.
#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    condition: f64,
}

impl Design {
    /// Factorizes `x`; fails when `n <= p` or when `X'X` has condition
    /// number above [`MAX_GRAM_CONDITION`].
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n <= p {
            return Err(Error::InvalidConfig(format!(
                "least squares needs n > p (n = {n}, p = {p})"
            )));
        }
        let qr = x.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let sv = r.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 {
            (smax / smin).powi(2)
        } else {
            f64::INFINITY
        };
        if !(condition.is_finite() && condition <= MAX_GRAM_CONDITION) {
            return Err(Error::SingularDesign { condition });
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or(Error::SingularDesign { condition })?;
        let gram_inverse = &r_inv * r_inv.transpose();
        Ok(Self {
            x: x.clone(),
            q,
            r,
            gram_inverse,
            condition,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn fit(&self, y: &DVector<f64>) -> Result<FitResult> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "response",
                expected: self.n(),
                found: y.len(),
            });
        }
        let qty = self.q.tr_mul(y);
        let beta_hat = self
            .r
            .solve_upper_triangular(&qty)
            .ok_or(Error::SingularDesign {
                condition: self.condition,
            })?;
        let residuals = y - &self.x * &beta_hat;
        Ok(FitResult {
            beta_hat,
            residuals,
            gram_inverse: self.gram_inverse.clone(),
        })
    }

    /// Restricted fit from an already computed unconstrained fit.
    pub fn constrain(
        &self,
        y: &DVector<f64>,
        fit: &FitResult,
        h: &LinearHypothesis,
    ) -> Result<ConstrainedFit> {
        h.check_dim(self.p())?;
        let ga = &self.gram_inverse * h.a();
        let denom = h.a().dot(&ga);
        let floor = f64::EPSILON * self.gram_inverse.norm() * h.a().norm_squared();
        if denom.is_nan() || denom <= floor {
            return Err(Error::DegenerateConstraint { value: denom });
        }
        let gap = h.a().dot(&fit.beta_hat) - h.a0();
        let beta_restricted = &fit.beta_hat - ga * (gap / denom);
        let restricted_residuals = y - &self.x * &beta_restricted;
        Ok(ConstrainedFit {
            beta_restricted,
            restricted_residuals,
        })
    }

    pub fn functional(&self, h: &LinearHypothesis) -> Result<StatFunctional> {
        h.check_dim(self.p())?;
        let scale = (self.n() as f64).sqrt();
        let weight = &self.x * (&self.gram_inverse * h.a()) * scale;
        Ok(StatFunctional { weight })
    }
}

/// Ordinary least squares.
pub fn fit_ols(d: &Dataset) -> Result<FitResult> {
    Design::new(d.x())?.fit(d.y())
}

/// Least squares under one linear equality constraint, via the projection
/// `beta0 = beta_hat - G a (a'beta_hat - a0) / (a'G a)` with `G = (X'X)^-1`.
pub fn fit_constrained_ols(d: &Dataset, h: &LinearHypothesis) -> Result<ConstrainedFit> {
    let design = Design::new(d.x())?;
    let fit = design.fit(d.y())?;
    design.constrain(d.y(), &fit, h)
}

/// `T_n = sqrt(n) (a'beta_hat - a0)`.
pub fn test_statistic(f: &FitResult, h: &LinearHypothesis) -> f64 {
    let n = f.residuals.len() as f64;
    n.sqrt() * (h.a().dot(&f.beta_hat) - h.a0())
}

pub fn make_stat_functional(d: &Dataset, h: &LinearHypothesis) -> Result<StatFunctional> {
    Design::new(d.x())?.functional(h)
}

/// Homoskedastic two-sided z-test of `a'beta = a0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldOutcome {
    pub estimate: f64,
    pub standard_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// The classical OLS Wald test, kept as a baseline for simulations.
pub fn classical_wald_test(d: &Dataset, h: &LinearHypothesis, alpha: f64) -> Result<WaldOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let design = Design::new(d.x())?;
    let fit = design.fit(d.y())?;
    h.check_dim(design.p())?;
    let dof = (design.n() - design.p()) as f64;
    let sigma2 = fit.residuals.norm_squared() / dof;
    let var = sigma2 * h.a().dot(&(design.gram_inverse() * h.a()));
    let estimate = h.a().dot(&fit.beta_hat);
    let standard_error = var.sqrt();
    let z = (estimate - h.a0()) / standard_error;
    let normal = Normal::standard();
    let p_value = if z.is_finite() {
        2.0 * normal.cdf(-z.abs())
    } else if z.is_nan() {
        1.0
    } else {
        0.0
    };
    let critical = normal.inverse_cdf(1.0 - alpha / 2.0);
    Ok(WaldOutcome {
        estimate,
        standard_error,
        z,
        p_value,
        reject: z.abs() > critical,
    })
}
