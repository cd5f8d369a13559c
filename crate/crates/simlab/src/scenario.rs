//! Data-generating processes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use resrand::linmodel::{Dataset, LinearHypothesis};
use resrand::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateDist {
    Normal,
    LogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorDist {
    Normal,
    /// Student t with 3 degrees of freedom.
    T3,
    /// `0.5 N(-1, 0.25^2) + 0.5 N(1, 0.25^2)`.
    Mixture,
    Cauchy,
}

/// Covariate processes for the autocorrelated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeCovariate {
    /// iid `N(0, 1)`.
    I,
    /// iid `LN(0, 1)`.
    II,
    /// `x_t = rho x_{t-1} + N(0, 1)`.
    III,
    /// `x_t = rho x_{t-1} + LN(0, 1)`.
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Signal {
    Uniform { lo: f64, hi: f64 },
    Constant(f64),
}

/// Which pairs a two-way scenario observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLayout {
    /// Unordered pairs `c < r` of one node set; node effects enter both roles.
    LowerTriangle,
    /// Every (row, column) pair of two distinct `m`-sets.
    FullGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScenarioSpec {
    /// `y = b0 + b1 x + e` with `x = x_c + x_ic`, `e = e_c + e_ic`.
    OneWayCluster {
        j: usize,
        cluster_size: usize,
        x_dist: CovariateDist,
        random_effect: bool,
        heteroskedastic: bool,
        beta: f64,
    },
    /// `y = b1 d + e` with `sd(e) = 1` for treated and `sigma0` for controls;
    /// the first `n1` units are treated.
    BehrensFisher {
        n: usize,
        n1: usize,
        sigma0: f64,
        err: ErrorDist,
        beta1: f64,
    },
    /// `y = 1 + b1 |x_r - x_c| + e_r + e_c + u`.
    Dyadic {
        m: usize,
        x_dist: CovariateDist,
        eps_dist: ErrorDist,
        layout: PairLayout,
        beta1: f64,
    },
    /// `y_t = b0 + b1 x_t + e_t`, `e_t = rho e_{t-1} + u_t`, `b0 = b1 = 0`.
    AR1 {
        n: usize,
        rho: f64,
        x_model: TimeCovariate,
        u_dist: ErrorDist,
    },
    /// `y = X beta + e`, rows of `X` from `N(0, S)` with `S_ij = 0.9^|i-j|`;
    /// the first `s0` coefficients are active.
    HighDim {
        n: usize,
        p: usize,
        s0: usize,
        signal: Signal,
        err: ErrorDist,
    },
}

/// Generated data plus what only the harness may see.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: DVector<f64>,
    pub errors: DVector<f64>,
}

const TOEPLITZ_RHO: f64 = 0.9;
const AR_BURN_IN: usize = 100;

fn draw_error<R: Rng + ?Sized>(dist: ErrorDist, rng: &mut R) -> f64 {
    match dist {
        ErrorDist::Normal => StandardNormal.sample(rng),
        ErrorDist::T3 => StudentT::new(3.0).expect("valid dof").sample(rng),
        ErrorDist::Mixture => {
            let centre = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Normal::new(centre, 0.25).expect("valid sd").sample(rng)
        }
        ErrorDist::Cauchy => {
            let u: f64 = rng.random();
            (std::f64::consts::PI * (u - 0.5)).tan()
        }
    }
}

fn draw_covariate<R: Rng + ?Sized>(dist: CovariateDist, rng: &mut R) -> f64 {
    match dist {
        CovariateDist::Normal => StandardNormal.sample(rng),
        CovariateDist::LogNormal => LogNormal::new(0.0, 1.0).expect("valid sd").sample(rng),
    }
}

impl ScenarioSpec {
    /// Checks counts and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            Self::OneWayCluster {
                j, cluster_size, ..
            } => {
                if j == 0 || cluster_size == 0 || j * cluster_size < 3 {
                    return bad(format!(
                        "one-way scenario needs positive counts (J = {j}, size = {cluster_size})"
                    ));
                }
            }
            Self::BehrensFisher { n, n1, sigma0, .. } => {
                if n1 == 0 || n1 >= n {
                    return bad(format!("need 0 < n1 < n (n = {n}, n1 = {n1})"));
                }
                if sigma0.is_nan() || sigma0 <= 0.0 {
                    return bad(format!("sigma0 must be positive, got {sigma0}"));
                }
            }
            Self::Dyadic { m, layout, .. } => {
                let min = if layout == PairLayout::LowerTriangle {
                    4
                } else {
                    2
                };
                if m < min {
                    return bad(format!("dyadic scenario needs m >= {min}, got {m}"));
                }
            }
            Self::AR1 { n, rho, .. } => {
                if n < 3 {
                    return bad(format!("time series needs n >= 3, got {n}"));
                }
                if !(-1.0..=1.0).contains(&rho) {
                    return bad(format!("rho must lie in [-1, 1], got {rho}"));
                }
            }
            Self::HighDim { n, p, s0, .. } => {
                if n == 0 || p == 0 || s0 > p {
                    return bad(format!(
                        "need n, p > 0 and s0 <= p (n = {n}, p = {p}, s0 = {s0})"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Short stable name.
    pub fn family(&self) -> &'static str {
        match self {
            Self::OneWayCluster { .. } => "one-way-cluster",
            Self::BehrensFisher { .. } => "behrens-fisher",
            Self::Dyadic { .. } => "dyadic",
            Self::AR1 { .. } => "ar1",
            Self::HighDim { .. } => "high-dim",
        }
    }

    /// The null hypothesis the scenario is built around: `beta_1 = 0`, or
    /// `beta_1 = 1` for dyadic data.
    pub fn default_hypothesis(&self) -> Result<LinearHypothesis> {
        match self {
            Self::Dyadic { .. } => LinearHypothesis::coefficient(2, 1, 1.0),
            Self::HighDim { p, .. } => LinearHypothesis::coefficient(*p, 0, 0.0),
            _ => LinearHypothesis::coefficient(2, 1, 0.0),
        }
    }

    /// Draws one dataset.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Generated> {
        self.validate()?;
        match *self {
            Self::OneWayCluster {
                j,
                cluster_size,
                x_dist,
                random_effect,
                heteroskedastic,
                beta,
            } => {
                let n = j * cluster_size;
                let beta0 = if heteroskedastic { 1.0 } else { 0.0 };
                let mut x = Vec::with_capacity(n);
                let mut e = Vec::with_capacity(n);
                let mut labels = Vec::with_capacity(n);
                for c in 0..j {
                    let xc = match x_dist {
                        CovariateDist::Normal => StandardNormal.sample(rng),
                        CovariateDist::LogNormal => {
                            0.5 * draw_covariate(CovariateDist::LogNormal, rng)
                        }
                    };
                    let ec: f64 = if random_effect {
                        StandardNormal.sample(rng)
                    } else {
                        0.0
                    };
                    for _ in 0..cluster_size {
                        let xi: f64 = xc + Distribution::<f64>::sample(&StandardNormal, rng);
                        let mut ei: f64 = ec + Distribution::<f64>::sample(&StandardNormal, rng);
                        if heteroskedastic {
                            ei *= 3.0 * xi.abs();
                        }
                        x.push(xi);
                        e.push(ei);
                        labels.push(c);
                    }
                }
                let y: Vec<f64> = x
                    .iter()
                    .zip(&e)
                    .map(|(xi, ei)| beta0 + beta * xi + ei)
                    .collect();
                let data = intercept_slope(&y, &x)?.with_clusters(labels)?;
                Ok(Generated {
                    data,
                    truth: Truth {
                        beta: DVector::from_vec(vec![beta0, beta]),
                        errors: DVector::from_vec(e),
                    },
                })
            }
            Self::BehrensFisher {
                n,
                n1,
                sigma0,
                err,
                beta1,
            } => {
                let d: Vec<f64> = (0..n).map(|i| if i < n1 { 1.0 } else { 0.0 }).collect();
                let e: Vec<f64> = (0..n)
                    .map(|i| {
                        let s = if i < n1 { 1.0 } else { sigma0 };
                        s * draw_error(err, rng)
                    })
                    .collect();
                let y: Vec<f64> = d.iter().zip(&e).map(|(di, ei)| beta1 * di + ei).collect();
                Ok(Generated {
                    data: intercept_slope(&y, &d)?,
                    truth: Truth {
                        beta: DVector::from_vec(vec![0.0, beta1]),
                        errors: DVector::from_vec(e),
                    },
                })
            }
            Self::Dyadic {
                m,
                x_dist,
                eps_dist,
                layout,
                beta1,
            } => {
                let node_x: Vec<f64> = (0..m).map(|_| draw_covariate(x_dist, rng)).collect();
                let node_e: Vec<f64> = (0..m).map(|_| draw_error(eps_dist, rng)).collect();
                let (col_x, col_e, pairs): (Vec<f64>, Vec<f64>, Vec<(usize, usize)>) = match layout
                {
                    PairLayout::LowerTriangle => (
                        node_x.clone(),
                        node_e.clone(),
                        (0..m).flat_map(|r| (0..r).map(move |c| (r, c))).collect(),
                    ),
                    PairLayout::FullGrid => (
                        (0..m).map(|_| draw_covariate(x_dist, rng)).collect(),
                        (0..m).map(|_| draw_error(eps_dist, rng)).collect(),
                        (0..m).flat_map(|r| (0..m).map(move |c| (r, c))).collect(),
                    ),
                };
                let mut x = Vec::with_capacity(pairs.len());
                let mut e = Vec::with_capacity(pairs.len());
                for &(r, c) in &pairs {
                    let u: f64 = StandardNormal.sample(rng);
                    x.push((node_x[r] - col_x[c]).abs());
                    e.push(node_e[r] + col_e[c] + u);
                }
                let y: Vec<f64> = x
                    .iter()
                    .zip(&e)
                    .map(|(xi, ei)| 1.0 + beta1 * xi + ei)
                    .collect();
                let (rows, cols): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                let data = intercept_slope(&y, &x)?.with_two_way(rows, cols)?;
                Ok(Generated {
                    data,
                    truth: Truth {
                        beta: DVector::from_vec(vec![1.0, beta1]),
                        errors: DVector::from_vec(e),
                    },
                })
            }
            Self::AR1 {
                n,
                rho,
                x_model,
                u_dist,
            } => {
                let mut x = Vec::with_capacity(n);
                let mut e = Vec::with_capacity(n);
                let (mut xt, mut et) = (0.0, 0.0);
                for t in 0..n + AR_BURN_IN {
                    let innovation = match x_model {
                        TimeCovariate::I | TimeCovariate::III => {
                            draw_covariate(CovariateDist::Normal, rng)
                        }
                        TimeCovariate::II | TimeCovariate::IV => {
                            draw_covariate(CovariateDist::LogNormal, rng)
                        }
                    };
                    xt = match x_model {
                        TimeCovariate::I | TimeCovariate::II => innovation,
                        TimeCovariate::III | TimeCovariate::IV => rho * xt + innovation,
                    };
                    et = rho * et + draw_error(u_dist, rng);
                    if t >= AR_BURN_IN {
                        x.push(xt);
                        e.push(et);
                    }
                }
                let data = intercept_slope(&e, &x)?.with_time((0..n as i64).collect())?;
                Ok(Generated {
                    data,
                    truth: Truth {
                        beta: DVector::zeros(2),
                        errors: DVector::from_vec(e),
                    },
                })
            }
            Self::HighDim {
                n,
                p,
                s0,
                signal,
                err,
            } => {
                // AR(1) recursion across columns gives Cov = 0.9^|i-j|.
                let innov = (1.0 - TOEPLITZ_RHO * TOEPLITZ_RHO).sqrt();
                let mut x = DMatrix::zeros(n, p);
                for i in 0..n {
                    let mut prev: f64 = StandardNormal.sample(rng);
                    x[(i, 0)] = prev;
                    for j in 1..p {
                        let z: f64 = StandardNormal.sample(rng);
                        prev = TOEPLITZ_RHO * prev + innov * z;
                        x[(i, j)] = prev;
                    }
                }
                let beta = DVector::from_fn(p, |j, _| {
                    if j >= s0 {
                        0.0
                    } else {
                        match signal {
                            Signal::Uniform { lo, hi } => rng.random_range(lo..hi),
                            Signal::Constant(c) => c,
                        }
                    }
                });
                let e = DVector::from_fn(n, |_, _| draw_error(err, rng));
                let y = &x * &beta + &e;
                Ok(Generated {
                    data: Dataset::new(y, x)?,
                    truth: Truth { beta, errors: e },
                })
            }
        }
    }

    /// Number of datapoints a draw will have.
    pub fn sample_size(&self) -> usize {
        match *self {
            Self::OneWayCluster {
                j, cluster_size, ..
            } => j * cluster_size,
            Self::BehrensFisher { n, .. } | Self::AR1 { n, .. } | Self::HighDim { n, .. } => n,
            Self::Dyadic { m, layout, .. } => match layout {
                PairLayout::LowerTriangle => m * (m - 1) / 2,
                PairLayout::FullGrid => m * m,
            },
        }
    }
}

fn intercept_slope(y: &[f64], x: &[f64]) -> Result<Dataset> {
    let n = y.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    Dataset::new(DVector::from_column_slice(y), design)
}

/// Sample covariance of the columns of `x`.
pub fn column_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let means = x.row_mean();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= &means;
    }
    centred.tr_mul(&centred) / (n - 1.0)
}
