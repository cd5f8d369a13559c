//! Monte Carlo driver and reports.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use resrand::linmodel::LinearHypothesis;
use resrand::rng::derive_seed;
use resrand::{Error, Result};

use crate::method::{MethodResult, MethodSpec};
use crate::scenario::{ScenarioSpec, Truth};

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Null value tested; defaults to the scenario's own hypothesis.
    pub a0: Option<f64>,
}

impl MonteCarloConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            alpha: 0.05,
            a0: None,
        }
    }

    pub fn with_a0(mut self, a0: f64) -> Self {
        self.a0 = Some(a0);
        self
    }
}

/// Per-coefficient error and power for family methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    /// Share of replications with at least one false rejection.
    pub familywise_error: f64,
    /// False rejections over all null comparisons.
    pub per_comparison_error: f64,
    /// True rejections over all active comparisons (`NaN` with no actives).
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub label: String,
    pub method: MethodSpec,
    /// Replications where the method returned a decision.
    pub decided: usize,
    /// Replications where it declined to decide.
    pub undecided: usize,
    /// Replications that failed with an error.
    pub excluded: usize,
    /// Rejections over decided replications; for family methods, the
    /// familywise error rate.
    pub rejection_rate: f64,
    /// `sqrt(r (1 - r) / decided)`.
    pub mc_standard_error: f64,
    /// `decided / (decided + undecided)`.
    pub decided_fraction: f64,
    pub family: Option<FamilySummary>,
    /// First few distinct failure messages.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub scenario_id: String,
    pub scenario: ScenarioSpec,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub a0: f64,
    pub methods: Vec<MethodSummary>,
    pub wall_time_secs: f64,
    /// Scale of the original study this run stands in for.
    pub reference_scale: String,
    pub run_scale: String,
}

#[derive(Default, Clone)]
struct Tally {
    decided: usize,
    undecided: usize,
    rejected: usize,
    excluded: usize,
    any_false: usize,
    false_rej: usize,
    nulls: usize,
    true_rej: usize,
    actives: usize,
    family: bool,
    errors: Vec<String>,
}

impl Tally {
    fn add(&mut self, r: &Result<MethodResult>, truth: &Truth) {
        match r {
            Ok(MethodResult::Decided(rej)) => {
                self.decided += 1;
                self.rejected += usize::from(*rej);
            }
            Ok(MethodResult::Undecided) => self.undecided += 1,
            Ok(MethodResult::Family(rejected)) => {
                self.family = true;
                self.decided += 1;
                let mut any = false;
                for (j, &rej) in rejected.iter().enumerate() {
                    if truth.beta[j] == 0.0 {
                        self.nulls += 1;
                        self.false_rej += usize::from(rej);
                        any |= rej;
                    } else {
                        self.actives += 1;
                        self.true_rej += usize::from(rej);
                    }
                }
                self.any_false += usize::from(any);
            }
            Err(e) => {
                self.excluded += 1;
                let msg = e.to_string();
                if self.errors.len() < 5 && !self.errors.contains(&msg) {
                    self.errors.push(msg);
                }
            }
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Binomial Monte Carlo standard error of a rate over `m` trials.
pub fn mc_standard_error(rate: f64, m: usize) -> f64 {
    if m == 0 {
        f64::NAN
    } else {
        (rate * (1.0 - rate) / m as f64).sqrt()
    }
}

/// Runs `methods` on `cfg.replications` independent draws of `spec`.
///
/// Replication `i` generates its data from `derive_seed(cfg.seed, i)`, and
/// each method gets its own seed derived from that, so the report (other
/// than wall time) is identical for any thread count.
pub fn run_monte_carlo(
    spec: &ScenarioSpec,
    methods: &[MethodSpec],
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloReport> {
    run_monte_carlo_with_id(spec.family(), spec, methods, cfg, "")
}

pub fn run_monte_carlo_with_id(
    scenario_id: &str,
    spec: &ScenarioSpec,
    methods: &[MethodSpec],
    cfg: &MonteCarloConfig,
    reference_scale: &str,
) -> Result<MonteCarloReport> {
    spec.validate()?;
    if cfg.replications == 0 {
        return Err(Error::InvalidConfig(
            "replications must be at least 1".into(),
        ));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods to run".into()));
    }
    let base = spec.default_hypothesis()?;
    let h: LinearHypothesis = match cfg.a0 {
        Some(a0) => base.with_a0(a0),
        None => base,
    };
    let started = Instant::now();
    let per_rep: Vec<(Truth, Vec<Result<MethodResult>>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| {
            let rep_seed = derive_seed(cfg.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            let generated = match spec.generate(&mut rng) {
                Ok(g) => g,
                Err(e) => {
                    let truth = Truth {
                        beta: nalgebra::DVector::zeros(0),
                        errors: nalgebra::DVector::zeros(0),
                    };
                    return (truth, methods.iter().map(|_| Err(e.clone())).collect());
                }
            };
            let results = methods
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let method_seed = derive_seed(rep_seed, k as u64 + 1);
                    let mut mrng = ChaCha8Rng::seed_from_u64(derive_seed(method_seed, u64::MAX));
                    m.apply(&generated.data, &h, cfg.alpha, method_seed, &mut mrng)
                })
                .collect();
            (generated.truth, results)
        })
        .collect();

    let mut tallies = vec![Tally::default(); methods.len()];
    for (truth, results) in &per_rep {
        for (t, r) in tallies.iter_mut().zip(results) {
            t.add(r, truth);
        }
    }
    let summaries = methods
        .iter()
        .zip(tallies)
        .map(|(m, t)| {
            let family = t.family.then(|| FamilySummary {
                familywise_error: ratio(t.any_false, t.decided),
                per_comparison_error: ratio(t.false_rej, t.nulls),
                power: ratio(t.true_rej, t.actives),
            });
            let rate = match &family {
                Some(f) => f.familywise_error,
                None => ratio(t.rejected, t.decided),
            };
            MethodSummary {
                label: m.label(),
                method: m.clone(),
                decided: t.decided,
                undecided: t.undecided,
                excluded: t.excluded,
                rejection_rate: rate,
                mc_standard_error: mc_standard_error(rate, t.decided),
                decided_fraction: ratio(t.decided, t.decided + t.undecided),
                family,
                errors: t.errors,
            }
        })
        .collect();
    Ok(MonteCarloReport {
        scenario_id: scenario_id.to_string(),
        scenario: spec.clone(),
        replications: cfg.replications,
        seed: cfg.seed,
        alpha: cfg.alpha,
        a0: h.a0(),
        methods: summaries,
        wall_time_secs: started.elapsed().as_secs_f64(),
        reference_scale: reference_scale.to_string(),
        run_scale: format!("M = {}, n = {}", cfg.replications, spec.sample_size()),
    })
}

impl MonteCarloReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// One CSV row per method.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scenario_id",
            "method",
            "replications",
            "decided",
            "undecided",
            "excluded",
            "rejection_rate",
            "mc_standard_error",
            "decided_fraction",
            "familywise_error",
            "per_comparison_error",
            "power",
        ])?;
        for m in &self.methods {
            let fam = |f: fn(&FamilySummary) -> f64| {
                m.family
                    .as_ref()
                    .map(f)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            };
            w.write_record([
                self.scenario_id.clone(),
                m.label.clone(),
                self.replications.to_string(),
                m.decided.to_string(),
                m.undecided.to_string(),
                m.excluded.to_string(),
                m.rejection_rate.to_string(),
                m.mc_standard_error.to_string(),
                m.decided_fraction.to_string(),
                fam(|f| f.familywise_error),
                fam(|f| f.per_comparison_error),
                fam(|f| f.power),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
