//! Randomization test driver, p-values, the finite-sample decision rule and
//! confidence intervals by test inversion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{test_statistic, Dataset, Design, LinearHypothesis};
use crate::primitives::{enumerate_elements, group_size, GroupElement, GroupSize, PrimitiveKind};
use crate::rng::substream;

/// Largest group the engine will list when it picks enumeration by itself.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// Relative tolerance under which two statistic values count as tied.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sidedness {
    OneSidedGreater,
    OneSidedLess,
    TwoSided,
}

/// How group elements are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// `draws` iid uniform elements.
    Sampled,
    /// Every element, provided the group has at most `cap` of them.
    Enumerated { cap: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeUsed {
    Sampled,
    Enumerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub draws: usize,
    pub alpha: f64,
    pub mode: Mode,
    pub seed: u64,
    pub sidedness: Sidedness,
    /// Switch from sampling to full enumeration when the group has no more
    /// than `draws` elements.
    pub auto_enumerate: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            draws: 2000,
            alpha: 0.05,
            mode: Mode::Sampled,
            seed: 0,
            sidedness: Sidedness::TwoSided,
            auto_enumerate: true,
        }
    }
}

impl TestConfig {
    pub fn with_draws(mut self, draws: usize) -> Self {
        self.draws = draws;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_sidedness(mut self, sidedness: Sidedness) -> Self {
        self.sidedness = sidedness;
        self
    }

    /// Checks the configuration and returns advisory warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.draws == 0 {
            return Err(Error::InvalidConfig("draws must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let mut warnings = Vec::new();
        if self.mode == Mode::Sampled && (self.alpha * self.draws as f64) < 1.0 {
            warnings.push(format!(
                "alpha * draws = {:.3} < 1; the test can never reject by p-value alone",
                self.alpha * self.draws as f64
            ));
        }
        Ok(warnings)
    }
}

/// Outcome of the randomized decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Decision {
    Reject,
    Accept,
    /// Reject with probability `b`.
    RejectWithProb(f64),
}

impl Decision {
    fn from_probability(phi: f64) -> Self {
        if phi >= 1.0 {
            Decision::Reject
        } else if phi <= 0.0 {
            Decision::Accept
        } else {
            Decision::RejectWithProb(phi)
        }
    }

    /// Rejection probability: 1, 0 or `b`.
    pub fn probability(self) -> f64 {
        match self {
            Decision::Reject => 1.0,
            Decision::Accept => 0.0,
            Decision::RejectWithProb(b) => b,
        }
    }

    /// Turns the decision into a binary one, drawing a Bernoulli(b) if needed.
    pub fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> bool {
        match self {
            Decision::Reject => true,
            Decision::Accept => false,
            Decision::RejectWithProb(b) => rng.random::<f64>() < b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub t_obs: f64,
    pub draw_values: Vec<f64>,
    pub pval_one: f64,
    pub pval_two: f64,
    pub decision: Decision,
    pub mode_used: ModeUsed,
    pub group_size: GroupSize,
    pub group_size_note: String,
    pub warnings: Vec<String>,
}

/// Values of a function over group elements, with how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDraws<T> {
    pub values: Vec<T>,
    pub mode_used: ModeUsed,
    pub group_size: GroupSize,
}

impl<T> GroupDraws<T> {
    pub fn note(&self) -> String {
        match self.mode_used {
            ModeUsed::Enumerated => format!("all {} group elements enumerated", self.values.len()),
            ModeUsed::Sampled => format!(
                "{} uniform draws from a group of size {}",
                self.values.len(),
                self.group_size
            ),
        }
    }
}

/// Evaluates `f` on the group elements selected by `cfg`.
///
/// Sampled draw `r` uses the generator `substream(cfg.seed, r)`, and results
/// are returned in draw order, so the output does not depend on scheduling.
pub fn map_group<T, F>(
    kind: &PrimitiveKind,
    n: usize,
    cfg: &TestConfig,
    f: F,
) -> Result<GroupDraws<T>>
where
    T: Send,
    F: Fn(&GroupElement) -> T + Sync,
{
    kind.validate(n)?;
    let size = group_size(kind, n);
    let enumerate = match cfg.mode {
        Mode::Enumerated { cap } => {
            if !size.at_most(cap) {
                return Err(Error::GroupTooLarge { size, cap });
            }
            true
        }
        Mode::Sampled => {
            cfg.auto_enumerate
                && size.at_most(cfg.draws as u64)
                && size.at_most(DEFAULT_ENUMERATION_CAP)
        }
    };
    if enumerate {
        let cap = size.exact().unwrap_or(u64::MAX);
        let elements = enumerate_elements(kind, n, cap)?;
        let values = elements.par_iter().map(&f).collect();
        return Ok(GroupDraws {
            values,
            mode_used: ModeUsed::Enumerated,
            group_size: size,
        });
    }
    let values = (0..cfg.draws)
        .into_par_iter()
        .map_init(
            || GroupElement::identity(n),
            |g, r| {
                let mut rng = substream(cfg.seed, r as u64);
                kind.sample_into(n, g, &mut rng);
                f(g)
            },
        )
        .collect();
    Ok(GroupDraws {
        values,
        mode_used: ModeUsed::Sampled,
        group_size: size,
    })
}

/// Randomization values `w'(g u)` of a linear statistic.
pub fn randomization_values(
    kind: &PrimitiveKind,
    weight: &[f64],
    u: &[f64],
    cfg: &TestConfig,
) -> Result<GroupDraws<f64>> {
    if weight.len() != u.len() {
        return Err(Error::DimensionMismatch {
            what: "statistic weight",
            expected: u.len(),
            found: weight.len(),
        });
    }
    map_group(kind, u.len(), cfg, |g| g.weighted_sum(weight, u))
}

fn tolerance(t: f64, draws: &[f64]) -> f64 {
    let scale = draws.iter().fold(t.abs(), |m, v| m.max(v.abs()));
    TIE_TOLERANCE * scale
}

/// `#{r : draw_r >= t_obs} / R`.
pub fn pvalue_one_sided(t_obs: f64, draws: &[f64]) -> f64 {
    assert!(!draws.is_empty(), "p-value needs at least one draw");
    let tol = tolerance(t_obs, draws);
    let hits = draws.iter().filter(|&&v| v >= t_obs - tol).count();
    hits as f64 / draws.len() as f64
}

/// `min(P{draw >= t_obs}, P{draw <= t_obs})`; reject when this is at most `alpha / 2`.
pub fn pvalue_two_sided(t_obs: f64, draws: &[f64]) -> f64 {
    assert!(!draws.is_empty(), "p-value needs at least one draw");
    let tol = tolerance(t_obs, draws);
    let upper = draws.iter().filter(|&&v| v >= t_obs - tol).count();
    let lower = draws.iter().filter(|&&v| v <= t_obs + tol).count();
    upper.min(lower) as f64 / draws.len() as f64
}

/// Rejection probability of the level-`alpha` upper-tail test.
fn phi(t_obs: f64, draws: &[f64], alpha: f64) -> f64 {
    let r = draws.len();
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((r as f64 * (1.0 - alpha)) - 1e-9)
        .ceil()
        .clamp(1.0, r as f64) as usize;
    let tk = sorted[k - 1];
    let tol = tolerance(t_obs, draws);
    let above = sorted.iter().filter(|&&v| v > tk + tol).count();
    let tied = sorted.iter().filter(|&&v| (v - tk).abs() <= tol).count();
    if t_obs > tk + tol {
        1.0
    } else if (t_obs - tk).abs() <= tol {
        ((r as f64 * alpha - above as f64) / tied as f64).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// One-sided (upper tail) decision with the order-statistic correction.
///
/// With `k = ceil(R(1 - alpha))`, rejects when `t_obs` exceeds the `k`-th
/// smallest draw and rejects with probability `b = (R alpha - R+) / R0` when
/// it ties with it.
pub fn decide_with_correction(t_obs: f64, draws: &[f64], alpha: f64) -> Decision {
    assert!(!draws.is_empty(), "decision needs at least one draw");
    Decision::from_probability(phi(t_obs, draws, alpha))
}

/// Two-sided decision `phi_{alpha/2}(t, T) + phi_{alpha/2}(-t, -T)`.
pub fn decide_two_sided(t_obs: f64, draws: &[f64], alpha: f64) -> Decision {
    assert!(!draws.is_empty(), "decision needs at least one draw");
    let neg: Vec<f64> = draws.iter().map(|v| -v).collect();
    let p = phi(t_obs, draws, alpha / 2.0) + phi(-t_obs, &neg, alpha / 2.0);
    Decision::from_probability(p.min(1.0))
}

/// Decision for the given sidedness.
pub fn decide(t_obs: f64, draws: &[f64], alpha: f64, sidedness: Sidedness) -> Decision {
    match sidedness {
        Sidedness::OneSidedGreater => decide_with_correction(t_obs, draws, alpha),
        Sidedness::OneSidedLess => {
            let neg: Vec<f64> = draws.iter().map(|v| -v).collect();
            decide_with_correction(-t_obs, &neg, alpha)
        }
        Sidedness::TwoSided => decide_two_sided(t_obs, draws, alpha),
    }
}

/// Assembles an outcome from the observed statistic and its draws.
pub fn summarize(
    t_obs: f64,
    draws: GroupDraws<f64>,
    cfg: &TestConfig,
    mut warnings: Vec<String>,
) -> TestOutcome {
    let note = draws.note();
    let values = draws.values;
    let pval_one = match cfg.sidedness {
        Sidedness::OneSidedLess => {
            let neg: Vec<f64> = values.iter().map(|v| -v).collect();
            pvalue_one_sided(-t_obs, &neg)
        }
        _ => pvalue_one_sided(t_obs, &values),
    };
    let pval_two = pvalue_two_sided(t_obs, &values);
    let decision = decide(t_obs, &values, cfg.alpha, cfg.sidedness);
    if draws.mode_used == ModeUsed::Enumerated && (cfg.alpha * values.len() as f64) < 1.0 {
        warnings.push(format!(
            "the group has only {} elements, fewer than 1/alpha",
            values.len()
        ));
    }
    TestOutcome {
        t_obs,
        draw_values: values,
        pval_one,
        pval_two,
        decision,
        mode_used: draws.mode_used,
        group_size: draws.group_size,
        group_size_note: note,
        warnings,
    }
}

/// Residual randomization test of `h` under the invariance `kind`.
///
/// Fits the model under the null, then compares `T_n = sqrt(n)(a'beta_hat - a0)`
/// with the values `t_n(g e0)` over group elements `g`, where `e0` are the
/// restricted residuals.
pub fn run_test(
    d: &Dataset,
    h: &LinearHypothesis,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    let design = Design::new(d.x())?;
    run_test_with_design(&design, d.y(), h, kind, cfg)
}

/// [`run_test`] with a precomputed factorization of `X`.
pub fn run_test_with_design(
    design: &Design,
    y: &DVector<f64>,
    h: &LinearHypothesis,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    let warnings = cfg.validate()?;
    kind.validate(design.n())?;
    let fit = design.fit(y)?;
    let restricted = design.constrain(y, &fit, h)?;
    let functional = design.functional(h)?;
    let t_obs = test_statistic(&fit, h);
    let draws = randomization_values(
        kind,
        functional.weight.as_slice(),
        restricted.restricted_residuals.as_slice(),
        cfg,
    )?;
    Ok(summarize(t_obs, draws, cfg, warnings))
}

/// Runs the test with known errors in place of restricted residuals.
///
/// `t_obs` is `t_n(errors)`, which under the null equals `T_n`; the draws are
/// `t_n(g errors)`. Useful to check the exact level of the randomization
/// procedure itself.
pub fn run_test_on_errors(
    design: &Design,
    h: &LinearHypothesis,
    errors: &DVector<f64>,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    let warnings = cfg.validate()?;
    let functional = design.functional(h)?;
    let t_obs = functional.eval(errors);
    let draws = randomization_values(kind, functional.weight.as_slice(), errors.as_slice(), cfg)?;
    Ok(summarize(t_obs, draws, cfg, warnings))
}

/// Grid of null values for interval inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    /// Defaults to `(hi - lo) / 200`.
    pub step: Option<f64>,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self {
            lo,
            hi,
            step: Some(step),
        }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidConfig(format!(
                "grid bounds must satisfy lo < hi (got {} and {})",
                self.lo, self.hi
            )));
        }
        let step = self.step.unwrap_or((self.hi - self.lo) / 200.0);
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid step must be positive, got {step}"
            )));
        }
        let count = ((self.hi - self.lo) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|k| self.lo + k as f64 * step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub grid: Vec<f64>,
    pub pvals: Vec<f64>,
    pub level: f64,
    /// True when accepted grid points do not form one contiguous run.
    pub non_contiguous: bool,
}

/// Confidence interval for coefficient `coef_index` by inverting the
/// two-sided test over a grid.
///
/// Every grid point uses the same seed, so the p-value curve is a
/// deterministic function of the null value.
pub fn invert_ci(
    d: &Dataset,
    coef_index: usize,
    kind: &PrimitiveKind,
    cfg: &TestConfig,
    grid: Grid,
) -> Result<ConfidenceInterval> {
    let design = Design::new(d.x())?;
    let h = LinearHypothesis::coefficient(d.p(), coef_index, 0.0)?;
    let fit = design.fit(d.y())?;
    let estimate = fit.beta_hat[coef_index];
    if estimate < grid.lo || estimate > grid.hi {
        return Err(Error::InvalidConfig(format!(
            "grid [{}, {}] does not cover the estimate {estimate}",
            grid.lo, grid.hi
        )));
    }
    let points = grid.points()?;
    let pvals = points
        .iter()
        .map(|&a0| {
            run_test_with_design(&design, d.y(), &h.with_a0(a0), kind, cfg).map(|o| o.pval_two)
        })
        .collect::<Result<Vec<f64>>>()?;
    let accepted: Vec<usize> = (0..points.len())
        .filter(|&i| pvals[i] >= cfg.alpha / 2.0)
        .collect();
    let (first, last) = match (accepted.first(), accepted.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::EmptyAcceptanceRegion),
    };
    let non_contiguous = last - first + 1 != accepted.len();
    Ok(ConfidenceInterval {
        lower: points[first],
        upper: points[last],
        grid: points,
        pvals,
        level: 1.0 - cfg.alpha,
        non_contiguous,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    /// Mean over draws of `||M_r - (tr M_r / p) I||_F`.
    pub mean_deviation: f64,
    pub per_draw_norms: Vec<f64>,
    /// `||M - (tr M / p) I||_F` for the draw average `M` of the `M_r`.
    pub averaged_deviation: f64,
    /// Mean over draws of `X' G_r X / n`.
    pub mean_scaled_gram: DMatrix<f64>,
}

/// `X' g X`, with `g` acting on the rows of `X`.
fn transformed_gram(x: &DMatrix<f64>, g: &GroupElement) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut gx = DMatrix::zeros(n, p);
    for i in 0..n {
        let s = f64::from(g.sign[i]);
        for j in 0..p {
            gx[(i, j)] = s * x[(g.perm[i], j)];
        }
    }
    x.tr_mul(&gx)
}

/// Distances of `(X'X)^-1 X' G_r X` from the nearest multiple of the
/// identity, for the given elements.
pub fn similarity_for_elements(d: &Dataset, elements: &[GroupElement]) -> Result<SimilarityReport> {
    let design = Design::new(d.x())?;
    let (n, p) = (d.n(), d.p());
    let mut mean_scaled_gram = DMatrix::zeros(p, p);
    let mut per_draw_norms = Vec::with_capacity(elements.len());
    for g in elements {
        if g.n() != n {
            return Err(Error::LayoutMismatch {
                expected: n,
                found: g.n(),
            });
        }
        let xgx = transformed_gram(d.x(), g);
        let m = design.gram_inverse() * &xgx;
        let b = m.trace() / p as f64;
        let dev = &m - DMatrix::identity(p, p) * b;
        per_draw_norms.push(dev.norm());
        mean_scaled_gram += xgx / n as f64;
    }
    let count = elements.len().max(1) as f64;
    let mean_m = design.gram_inverse() * &mean_scaled_gram * (n as f64 / count);
    let b = mean_m.trace() / p as f64;
    Ok(SimilarityReport {
        mean_deviation: per_draw_norms.iter().sum::<f64>() / count,
        per_draw_norms,
        averaged_deviation: (&mean_m - DMatrix::identity(p, p) * b).norm(),
        mean_scaled_gram: mean_scaled_gram / count,
    })
}

/// Similarity diagnostic over `num_draws` uniform elements of `kind`.
pub fn similarity_diagnostic<R: Rng + ?Sized>(
    d: &Dataset,
    kind: &PrimitiveKind,
    num_draws: usize,
    rng: &mut R,
) -> Result<SimilarityReport> {
    kind.validate(d.n())?;
    let mut elements = Vec::with_capacity(num_draws);
    let mut g = GroupElement::identity(d.n());
    for _ in 0..num_draws {
        kind.sample_into(d.n(), &mut g, rng);
        elements.push(g.clone());
    }
    similarity_for_elements(d, &elements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Clustering;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.random::<f64>() * 4.0 - 2.0])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 + 0.3 * r[1] + (rng.random::<f64>() - 0.5))
            .collect();
        Dataset::from_rows(&y, &rows).unwrap()
    }

    #[test]
    fn pvalue_examples() {
        let draws = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!((pvalue_one_sided(1.0, &draws) - 0.4).abs() < 1e-15);
        assert_eq!(pvalue_one_sided(3.0, &draws), 0.0);
        assert_eq!(pvalue_one_sided(-3.0, &draws), 1.0);
        assert!((pvalue_two_sided(1.0, &draws) - 0.4).abs() < 1e-15);
        let nineteen: Vec<f64> = (0..19).map(f64::from).collect();
        assert!((pvalue_two_sided(18.0, &nineteen) - 1.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn correction_examples() {
        let draws: Vec<f64> = (0..19).map(f64::from).collect();
        match decide_with_correction(18.0, &draws, 0.05) {
            Decision::RejectWithProb(b) => assert!((b - 0.95).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let tied = vec![1.5; 20];
        match decide_with_correction(1.5, &tied, 0.05) {
            Decision::RejectWithProb(b) => assert!((b - 0.05).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(decide_with_correction(30.0, &draws, 0.05), Decision::Reject);
        assert_eq!(decide_with_correction(17.0, &draws, 0.05), Decision::Accept);
    }

    #[test]
    fn two_sided_rule_mirrors_the_lower_tail() {
        let draws: Vec<f64> = (-20..=20).map(f64::from).collect();
        assert_eq!(decide_two_sided(25.0, &draws, 0.05), Decision::Reject);
        assert_eq!(decide_two_sided(-25.0, &draws, 0.05), Decision::Reject);
        assert_eq!(decide_two_sided(0.0, &draws, 0.05), Decision::Accept);
    }

    /// The rule has exact level alpha when `t_obs` is one of the draws,
    /// uniformly placed: averaging phi over positions gives alpha.
    #[test]
    fn correction_attains_exact_level() {
        let r = 37;
        let draws: Vec<f64> = (0..r).map(|i| f64::from(i / 3)).collect();
        for alpha in [0.05, 0.1, 0.2] {
            let mean: f64 = draws
                .iter()
                .map(|&t| decide_with_correction(t, &draws, alpha).probability())
                .sum::<f64>()
                / r as f64;
            assert!((mean - alpha).abs() < 1e-12, "alpha {alpha}: {mean}");
        }
    }

    fn heap_permutations(n: usize) -> Vec<Vec<usize>> {
        fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                out.push(a.clone());
                return;
            }
            for i in 0..k {
                go(k - 1, a, out);
                if k.is_multiple_of(2) {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
            }
        }
        let mut a: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        go(n, &mut a, &mut out);
        out
    }

    #[test]
    fn enumerated_pvalue_matches_brute_force_orbit() {
        let d = toy(6, 3);
        let h = LinearHypothesis::coefficient(2, 1, 0.1).unwrap();
        let cfg = TestConfig::default().with_mode(Mode::Enumerated { cap: 1000 });
        let out = run_test(&d, &h, &PrimitiveKind::GlobalPerm, &cfg).unwrap();
        assert_eq!(out.draw_values.len(), 720);
        assert_eq!(out.mode_used, ModeUsed::Enumerated);

        // Oracle: normal equations solved by LU on every permuted residual vector.
        let x = d.x();
        let xtx = x.tr_mul(x);
        let a = h.a();
        let beta = xtx.clone().lu().solve(&x.tr_mul(d.y())).unwrap();
        let ga = xtx.clone().lu().solve(a).unwrap();
        let beta0 = &beta - &ga * ((a.dot(&beta) - h.a0()) / a.dot(&ga));
        let e0 = d.y() - x * beta0;
        let t = 6f64.sqrt() * (a.dot(&beta) - h.a0());
        let vals: Vec<f64> = heap_permutations(6)
            .into_iter()
            .map(|p| {
                let u = DVector::from_iterator(6, p.iter().map(|&i| e0[i]));
                let b = xtx.clone().lu().solve(&x.tr_mul(&u)).unwrap();
                6f64.sqrt() * a.dot(&b)
            })
            .collect();
        let tol = 1e-9 * (1.0 + t.abs());
        let ge = vals.iter().filter(|&&v| v >= t - tol).count() as f64 / 720.0;
        let le = vals.iter().filter(|&&v| v <= t + tol).count() as f64 / 720.0;
        assert!((out.t_obs - t).abs() < 1e-10);
        assert_eq!(out.pval_one, ge);
        assert_eq!(out.pval_two, ge.min(le));
    }

    #[test]
    fn centered_statistic_is_not_rejected() {
        let d = toy(30, 5);
        let beta = crate::linmodel::fit_ols(&d).unwrap().beta_hat;
        let h = LinearHypothesis::coefficient(2, 1, beta[1]).unwrap();
        let out = run_test(&d, &h, &PrimitiveKind::GlobalSign, &TestConfig::default()).unwrap();
        assert!(out.t_obs.abs() < 1e-12);
        assert!(out.pval_two >= 0.4);
        assert_eq!(out.decision, Decision::Accept);
    }

    #[test]
    fn identity_draw_ties_with_observed_statistic() {
        let d = toy(5, 8);
        let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
        let cfg = TestConfig::default().with_mode(Mode::Enumerated { cap: 200 });
        let out = run_test(&d, &h, &PrimitiveKind::GlobalSign, &cfg).unwrap();
        assert_eq!(out.draw_values.len(), 32);
        assert!((out.draw_values[0] - out.t_obs).abs() <= 1e-12 * (1.0 + out.t_obs.abs()));
        assert!(out.pval_one >= 1.0 / 32.0);
    }

    #[test]
    fn small_groups_are_enumerated_automatically() {
        let d = toy(4, 1);
        let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
        let out = run_test(&d, &h, &PrimitiveKind::GlobalPerm, &TestConfig::default()).unwrap();
        assert_eq!(out.mode_used, ModeUsed::Enumerated);
        assert_eq!(out.draw_values.len(), 24);
        let mut cfg = TestConfig::default().with_draws(100);
        cfg.auto_enumerate = false;
        let out = run_test(&d, &h, &PrimitiveKind::GlobalPerm, &cfg).unwrap();
        assert_eq!(out.mode_used, ModeUsed::Sampled);
        assert_eq!(out.draw_values.len(), 100);
    }

    #[test]
    fn oversized_enumeration_is_an_error() {
        let d = toy(12, 1);
        let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
        let cfg = TestConfig::default().with_mode(Mode::Enumerated { cap: 1000 });
        let err = run_test(&d, &h, &PrimitiveKind::GlobalPerm, &cfg).unwrap_err();
        assert!(matches!(err, Error::GroupTooLarge { .. }));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let d = toy(40, 2);
        let h = LinearHypothesis::coefficient(2, 1, 0.0).unwrap();
        let cfg = TestConfig::default().with_seed(99);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_test(&d, &h, &PrimitiveKind::GlobalPerm, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn interval_contains_estimate_under_heavy_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..25).map(|i| vec![1.0, f64::from(i)]).collect();
        let y: Vec<f64> = (0..25).map(|_| (rng.random::<f64>() - 0.5) * 1e3).collect();
        let d = Dataset::from_rows(&y, &rows).unwrap();
        let est = crate::linmodel::fit_ols(&d).unwrap().beta_hat[1];
        let cfg = TestConfig::default().with_draws(500);
        let ci = invert_ci(
            &d,
            1,
            &PrimitiveKind::GlobalPerm,
            &cfg,
            Grid::new(est - 100.0, est + 100.0, 1.0),
        )
        .unwrap();
        assert!(ci.lower <= est && est <= ci.upper);
        assert_eq!(ci.grid.len(), ci.pvals.len());
    }

    #[test]
    fn enumerated_interval_matches_grid_oracle() {
        let d = toy(8, 11);
        let cfg = TestConfig::default().with_mode(Mode::Enumerated { cap: 256 });
        let est = crate::linmodel::fit_ols(&d).unwrap().beta_hat[1];
        let grid = Grid::new(est - 3.0, est + 3.0, 0.05);
        let ci = invert_ci(&d, 1, &PrimitiveKind::GlobalSign, &cfg, grid).unwrap();

        // Oracle: explicit loop over all 256 sign vectors at every grid value.
        let x = d.x();
        let xtx_inv = x.tr_mul(x).try_inverse().unwrap();
        let a = DVector::from_vec(vec![0.0, 1.0]);
        let v = x * (&xtx_inv * &a) * 8f64.sqrt();
        let beta = &xtx_inv * x.tr_mul(d.y());
        let mut accepted = Vec::new();
        for &a0 in &grid.points().unwrap() {
            let ga = &xtx_inv * &a;
            let b0 = &beta - &ga * ((beta[1] - a0) / ga[1]);
            let e0 = d.y() - x * b0;
            let t = 8f64.sqrt() * (beta[1] - a0);
            let tol = 1e-10 * (1.0 + t.abs());
            let vals: Vec<f64> = (0u32..256)
                .map(|m| {
                    (0..8)
                        .map(|i| {
                            if m >> i & 1 == 1 {
                                -v[i] * e0[i]
                            } else {
                                v[i] * e0[i]
                            }
                        })
                        .sum()
                })
                .collect();
            let ge = vals.iter().filter(|&&s| s >= t - tol).count();
            let le = vals.iter().filter(|&&s| s <= t + tol).count();
            if ge.min(le) as f64 / 256.0 >= 0.025 {
                accepted.push(a0);
            }
        }
        assert_eq!(ci.lower, accepted[0]);
        assert_eq!(ci.upper, *accepted.last().unwrap());
    }

    #[test]
    fn empty_acceptance_region_is_reported() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0, f64::from(i)]).collect();
        let y: Vec<f64> = (0..30)
            .map(|i| 2.0 * f64::from(i) + 0.01 * f64::from(i % 3))
            .collect();
        let d = Dataset::from_rows(&y, &rows).unwrap();
        let est = crate::linmodel::fit_ols(&d).unwrap().beta_hat[1];
        let cfg = TestConfig::default().with_draws(200);
        let res = invert_ci(
            &d,
            1,
            &PrimitiveKind::GlobalPerm,
            &cfg,
            Grid::new(est - 10.0, est + 10.0, 0.7),
        );
        assert_eq!(res.unwrap_err(), Error::EmptyAcceptanceRegion);
    }

    #[test]
    fn identity_group_has_zero_deviation() {
        let d = toy(10, 3);
        let kind = PrimitiveKind::ClusterPerm(Clustering::singletons(10));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = similarity_diagnostic(&d, &kind, 5, &mut rng).unwrap();
        assert!(rep.per_draw_norms.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn sign_flips_average_the_gram_to_zero() {
        let d = toy(50, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 400;
        let rep = similarity_diagnostic(&d, &PrimitiveKind::GlobalSign, draws, &mut rng).unwrap();
        let bound = 5.0 * d.scale().powi(2) / ((50 * draws) as f64).sqrt();
        assert!(
            rep.mean_scaled_gram.iter().all(|v| v.abs() < bound),
            "{}",
            rep.mean_scaled_gram
        );
    }

    #[test]
    fn averaged_deviation_shrinks_with_draws() {
        let d = toy(40, 3);
        let dev = |draws: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(draws as u64);
            similarity_diagnostic(&d, &PrimitiveKind::GlobalSign, draws, &mut rng)
                .unwrap()
                .averaged_deviation
        };
        let slope = (dev(10_000) / dev(100)).ln() / 100f64.ln();
        assert!((-0.75..=-0.25).contains(&slope), "slope {slope}");
    }
}
