//! JSON report shapes.

use serde::Serialize;

use resrand::engine::{Decision, ModeUsed, TestOutcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub t_obs: f64,
    pub pval_one: f64,
    pub pval_two: f64,
    /// `reject`, `accept` or `reject_with_prob`.
    pub decision: &'static str,
    /// Rejection probability of the randomized rule.
    pub b: f64,
    #[serde(rename = "R_used")]
    pub r_used: usize,
    pub mode: &'static str,
    pub seed: u64,
    pub primitive: String,
    pub group_size_note: String,
    pub warnings: Vec<String>,
}

pub fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::Reject => "reject",
        Decision::Accept => "accept",
        Decision::RejectWithProb(_) => "reject_with_prob",
    }
}

pub fn mode_name(m: ModeUsed) -> &'static str {
    match m {
        ModeUsed::Sampled => "sampled",
        ModeUsed::Enumerated => "enumerated",
    }
}

impl TestReport {
    pub fn new(o: &TestOutcome, seed: u64, primitive: &str) -> Self {
        Self {
            t_obs: o.t_obs,
            pval_one: o.pval_one,
            pval_two: o.pval_two,
            decision: decision_name(o.decision),
            b: o.decision.probability(),
            r_used: o.draw_values.len(),
            mode: mode_name(o.mode_used),
            seed,
            primitive: primitive.to_string(),
            group_size_note: o.group_size_note.clone(),
            warnings: o.warnings.clone(),
        }
    }
}
