//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use resrand::engine::{
    invert_ci, run_test, similarity_diagnostic, Grid, Mode, Sidedness, TestConfig,
};
use resrand::exactcons::{build_balanced_clustering, run_exact_test, BalancedDesignSpec};
use resrand::highdim::{family_test, PenaltyConfig};
use resrand::linmodel::{classical_wald_test, LinearHypothesis};
use resrand::primitives::PrimitiveKind;
use resrand::reflect::{
    run_reflection_test, ReflectionConfig, ReflectionOutcome, ReflectionVariant,
};
use resrand::rng::substream;
use resrand_simlab::{
    presets, run_monte_carlo_with_id, MethodSpec, MonteCarloConfig, ScenarioSpec,
};

use crate::config::ConfigFile;
use crate::ingest::{ingest_csv, Ingested};
use crate::report::{mode_name, TestReport};
use crate::{
    CiArgs, Cli, CliError, Command, DataArgs, DiagnoseArgs, ExactArgs, HighdimArgs, HypothesisArgs,
    ReflectArgs, RunArgs, SimulateArgs, TestArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Flag values with fallback to the config file.
struct Settings {
    file: ConfigFile,
    section: &'static str,
    resolved: Map<String, Value>,
}

fn flag_name(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

impl Settings {
    fn new(file: ConfigFile, section: &'static str) -> Self {
        Self {
            file,
            section,
            resolved: Map::new(),
        }
    }

    fn pick<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Clone + serde::Serialize,
        T::Err: std::fmt::Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file.parse_value(self.section, key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(
                key.to_string(),
                serde_json::to_value(v).unwrap_or(Value::Null),
            );
        }
        Ok(value)
    }

    fn pick_or<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Clone + serde::Serialize,
        T::Err: std::fmt::Display,
    {
        let v = self.pick(flag, key)?.unwrap_or(default);
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(&v).unwrap_or(Value::Null),
        );
        Ok(v)
    }

    fn require<T>(&mut self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr + Clone + serde::Serialize,
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?.ok_or_else(|| {
            CliError::flag(
                &flag_name(key),
                "is required (pass the flag or set it in the config file)",
            )
        })
    }

    fn switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        let v = flag || self.pick::<bool>(None, key)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), Value::Bool(v));
        Ok(v)
    }

    /// Repeated flag values, or a config entry split on `sep`.
    fn list(&mut self, flag: &[String], key: &str, sep: char) -> Result<Vec<String>> {
        let items: Vec<String> = if flag.is_empty() {
            match self.file.get(self.section, key) {
                Some(e) => e
                    .value
                    .split(sep)
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                None => Vec::new(),
            }
        } else {
            flag.to_vec()
        };
        if !items.is_empty() {
            self.resolved.insert(key.to_string(), json!(items));
        }
        Ok(items)
    }
}

fn load_data(s: &mut Settings, args: &DataArgs) -> Result<Ingested> {
    let path: PathBuf = s.require(args.data.clone(), "data")?;
    let no_intercept = s.switch(args.no_intercept, "no_intercept")?;
    Ok(ingest_csv(&path, !no_intercept)?)
}

fn parse_list(flag: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::flag(flag, format!("{v:?} is not a number")))
        })
        .collect()
}

fn hypothesis(
    s: &mut Settings,
    args: &HypothesisArgs,
    data: &Ingested,
) -> Result<LinearHypothesis> {
    let p = data.data.p();
    let a_text: Option<String> = s.pick(args.a.clone(), "a")?;
    let coef: Option<usize> = s.pick(args.coef, "coef")?;
    let a = match (a_text, coef) {
        (Some(_), Some(_)) => {
            return Err(CliError::flag("--a", "give either --a or --coef, not both"))
        }
        (None, None) => {
            return Err(CliError::flag(
                "--a",
                "a hypothesis is required: pass --a or --coef",
            ))
        }
        (Some(text), None) => {
            let a = parse_list("--a", &text)?;
            if a.len() != p {
                return Err(CliError::flag(
                    "--a",
                    format!(
                        "has {} entries but the design has {p} columns ({})",
                        a.len(),
                        data.columns.join(", ")
                    ),
                ));
            }
            DVector::from_vec(a)
        }
        (None, Some(j)) => {
            if j >= p {
                return Err(CliError::flag(
                    "--coef",
                    format!("index {j} out of range for {p} design columns"),
                ));
            }
            DVector::from_fn(p, |i, _| if i == j { 1.0 } else { 0.0 })
        }
    };
    let a0: f64 = s.require(args.a0, "a0")?;
    LinearHypothesis::new(a, a0).map_err(|e| CliError::flag("--a", e.to_string()))
}

fn test_config(s: &mut Settings, args: &RunArgs) -> Result<TestConfig> {
    let defaults = TestConfig::default();
    let sidedness = match s
        .pick_or(args.sidedness.clone(), "sidedness", "two-sided".to_string())?
        .as_str()
    {
        "two-sided" => Sidedness::TwoSided,
        "greater" => Sidedness::OneSidedGreater,
        "less" => Sidedness::OneSidedLess,
        other => {
            return Err(CliError::flag(
                "--sidedness",
                format!("unknown value {other:?} (expected two-sided, greater or less)"),
            ))
        }
    };
    let mode = match s
        .pick_or(args.mode.clone(), "mode", "sampled".to_string())?
        .as_str()
    {
        "sampled" => Mode::Sampled,
        "enumerated" => Mode::Enumerated {
            cap: s.pick_or(
                args.enum_cap,
                "enum_cap",
                resrand::engine::DEFAULT_ENUMERATION_CAP,
            )?,
        },
        other => {
            return Err(CliError::flag(
                "--mode",
                format!("unknown value {other:?} (expected sampled or enumerated)"),
            ))
        }
    };
    let cfg = TestConfig {
        draws: s.pick_or(args.draws, "draws", defaults.draws)?,
        alpha: s.pick_or(args.alpha, "alpha", defaults.alpha)?,
        mode,
        seed: s.pick_or(args.seed, "seed", defaults.seed)?,
        sidedness,
        auto_enumerate: true,
    };
    if cfg.draws == 0 {
        return Err(CliError::flag("--draws", "must be at least 1"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::flag(
            "--alpha",
            format!("must lie in (0, 1), got {}", cfg.alpha),
        ));
    }
    Ok(cfg)
}

fn primitive(name: &str, data: &Ingested) -> Result<PrimitiveKind> {
    let choice = resrand_simlab::PrimitiveChoice::parse(name).ok_or_else(|| {
        CliError::flag(
            "--primitive",
            format!("unknown primitive {name:?} (expected perm, sign, cluster-perm, cluster-sign, double or two-way-perm)"),
        )
    })?;
    choice
        .bind(&data.data)
        .map_err(|e| CliError::flag("--primitive", e.to_string()))
}

fn required_primitive(s: &mut Settings, flag: Option<String>) -> Result<String> {
    s.require(flag, "primitive")
}

fn finish(command: &str, s: Settings, body: Value) -> Result<String> {
    let mut out = Map::new();
    out.insert("command".into(), json!(command));
    out.insert("config".into(), Value::Object(s.resolved));
    match body {
        Value::Object(m) => out.extend(m),
        other => {
            out.insert("result".into(), other);
        }
    }
    Ok(format!(
        "{}\n",
        serde_json::to_string_pretty(&Value::Object(out)).expect("serializable")
    ))
}

fn object(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_test(s: &mut Settings, args: &TestArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let h = hypothesis(s, &args.hypothesis, &data)?;
    let cfg = test_config(s, &args.run)?;
    let names = s.list(&args.primitive, "primitive", ',')?;
    if names.is_empty() {
        return Err(CliError::flag(
            "--primitive",
            "is required (repeat it to compare primitives)",
        ));
    }
    let mut reports = Vec::with_capacity(names.len());
    for name in &names {
        let kind = primitive(name, &data)?;
        let outcome = run_test(&data.data, &h, &kind, &cfg)?;
        reports.push(TestReport::new(&outcome, cfg.seed, name));
    }
    if reports.len() == 1 {
        Ok(object(&reports[0]))
    } else {
        Ok(json!({ "comparison": reports }))
    }
}

fn cmd_ci(s: &mut Settings, args: &CiArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let coef: usize = s.require(args.coef, "coef")?;
    if coef >= data.data.p() {
        return Err(CliError::flag(
            "--coef",
            format!(
                "index {coef} out of range for {} design columns",
                data.data.p()
            ),
        ));
    }
    let cfg = test_config(s, &args.run)?;
    let name = required_primitive(s, args.primitive.clone())?;
    let kind = primitive(&name, &data)?;
    let h = LinearHypothesis::coefficient(data.data.p(), coef, 0.0)?;
    let wald = classical_wald_test(&data.data, &h, cfg.alpha)?;
    let span = 8.0
        * wald
            .standard_error
            .max(f64::EPSILON * (1.0 + wald.estimate.abs()));
    let lo = s.pick_or(args.lo, "lo", wald.estimate - span)?;
    let hi = s.pick_or(args.hi, "hi", wald.estimate + span)?;
    let step: Option<f64> = s.pick(args.step, "step")?;
    let grid = Grid { lo, hi, step };
    grid.points()
        .map_err(|e| CliError::flag("--lo", e.to_string()))?;
    let ci = invert_ci(&data.data, coef, &kind, &cfg, grid)?;
    let outcome = run_test(&data.data, &h, &kind, &cfg)?;
    let mut body = object(TestReport::new(&outcome, cfg.seed, &name));
    let extra = json!({
        "estimate": wald.estimate,
        "lower": ci.lower,
        "upper": ci.upper,
        "level": ci.level,
        "non_contiguous": ci.non_contiguous,
        "grid": ci.grid,
        "pvals": ci.pvals,
    });
    body.as_object_mut()
        .expect("object")
        .extend(extra.as_object().expect("object").clone());
    Ok(body)
}

fn cmd_exact(s: &mut Settings, args: &ExactArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let h = hypothesis(s, &args.hypothesis, &data)?;
    let clusters: usize = s.require(args.clusters, "clusters")?;
    let alpha = s.pick_or(args.alpha, "alpha", 0.05)?;
    let seed = s.pick_or(args.seed, "seed", 0)?;
    let spec = BalancedDesignSpec::from_dataset(&data.data, clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = build_balanced_clustering(&spec, &mut rng)?;
    let out = run_exact_test(&data.data, &h, &c, alpha)?;
    let mut body = object(TestReport::new(&out.outcome, seed, "cluster-sign"));
    let extra = json!({
        "exact": out.exact,
        "similarity": out.similarity,
        "clusters": c.members(),
    });
    body.as_object_mut()
        .expect("object")
        .extend(extra.as_object().expect("object").clone());
    Ok(body)
}

fn cmd_reflect(s: &mut Settings, args: &ReflectArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let h = hypothesis(s, &args.hypothesis, &data)?;
    let cfg = test_config(s, &args.run)?;
    let j: usize = s.require(args.j, "j")?;
    let variant = match s
        .pick_or(args.variant.clone(), "variant", "conditional".to_string())?
        .as_str()
    {
        "conditional" => ReflectionVariant::Conditional,
        "unconditional" => ReflectionVariant::Unconditional,
        other => {
            return Err(CliError::flag(
                "--variant",
                format!("unknown value {other:?} (expected conditional or unconditional)"),
            ))
        }
    };
    let defaults = ReflectionConfig::new(j, variant);
    let min_size = s.pick_or(
        args.min_cluster_size,
        "min_cluster_size",
        defaults.min_cluster_size,
    )?;
    let rcfg = defaults.with_min_cluster_size(min_size);
    Ok(match run_reflection_test(&data.data, &h, &rcfg, &cfg)? {
        ReflectionOutcome::Decided(o) => {
            let mut body = object(TestReport::new(&o, cfg.seed, "reflection"));
            body.as_object_mut()
                .expect("object")
                .insert("status".into(), json!("decided"));
            body
        }
        ReflectionOutcome::Undecided { achieved } => json!({
            "status": "undecided",
            "achieved_clusters": achieved,
            "seed": cfg.seed,
        }),
        ReflectionOutcome::NotRejected { achieved } => json!({
            "status": "not_rejected",
            "decision": "accept",
            "b": 0.0,
            "achieved_clusters": achieved,
            "seed": cfg.seed,
        }),
    })
}

fn cmd_highdim(s: &mut Settings, args: &HighdimArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let cfg = test_config(s, &args.run)?;
    let name = required_primitive(s, args.primitive.clone())?;
    let kind = primitive(&name, &data)?;
    let defaults = PenaltyConfig::default();
    let pen = PenaltyConfig::new(
        s.pick_or(args.lambda_ridge, "lambda_ridge", defaults.lambda_ridge)?,
        s.pick_or(args.lambda_lasso, "lambda_lasso", defaults.lambda_lasso)?,
    );
    pen.validate()
        .map_err(|e| CliError::flag("--lambda-ridge", e.to_string()))?;
    let report = family_test(&data.data, &pen, &kind, &cfg)?;
    Ok(json!({
        "columns": data.columns,
        "per_coef_pvals": report.per_coef_pvals,
        "rejected": report.rejected,
        "statistics": report.statistics,
        "alpha_family": report.alpha_family,
        "threshold": report.threshold(),
        "mode": mode_name(report.mode_used),
        "R_used": cfg.draws,
        "seed": cfg.seed,
        "primitive": name,
    }))
}

fn read_json<T: serde::de::DeserializeOwned>(flag: &str, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::flag(flag, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::flag(flag, format!("{}: {e}", path.display())))
}

fn cmd_simulate(s: &mut Settings, args: &SimulateArgs) -> Result<(Value, Option<String>)> {
    if args.list {
        let ids: Vec<Value> = presets()
            .iter()
            .map(|p| json!({ "id": p.id, "replications": p.replications, "methods": p.methods.iter().map(MethodSpec::label).collect::<Vec<_>>() }))
            .collect();
        return Ok((json!({ "presets": ids }), None));
    }
    let preset_id: Option<String> = s.pick(args.preset.clone(), "preset")?;
    let scenario_path: Option<PathBuf> = s.pick(args.scenario.clone(), "scenario")?;
    let (id, spec, methods, default_reps, default_a0, reference_scale) =
        match (preset_id, scenario_path) {
            (Some(_), Some(_)) => {
                return Err(CliError::flag(
                    "--preset",
                    "give either --preset or --scenario, not both",
                ))
            }
            (None, None) => {
                return Err(CliError::flag(
                    "--preset",
                    "a scenario is required: pass --preset or --scenario",
                ))
            }
            (Some(id), None) => {
                let p = resrand_simlab::preset(&id).ok_or_else(|| {
                    CliError::flag("--preset", format!("unknown preset {id:?} (see --list)"))
                })?;
                (p.id, p.spec, p.methods, p.replications, p.a0, p.reference_scale)
            }
            (None, Some(path)) => {
                let spec: ScenarioSpec = read_json("--scenario", &path)?;
                let methods = s.list(&args.method, "method", ';')?;
                if methods.is_empty() {
                    return Err(CliError::flag(
                        "--method",
                        "at least one method is required with --scenario",
                    ));
                }
                let methods = methods
                    .iter()
                    .map(|m| {
                        serde_json::from_str::<MethodSpec>(m)
                            .map_err(|e| CliError::flag("--method", format!("{m}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (spec.family().to_string(), spec, methods, 1000, None, "")
            }
        };
    let mut cfg = MonteCarloConfig::new(
        s.pick_or(args.replications, "replications", default_reps)?,
        s.pick_or(args.seed, "seed", 0)?,
    );
    cfg.a0 = s.pick(args.a0, "a0")?.or(default_a0);
    let format = s.pick_or(args.format.clone(), "format", "json".to_string())?;
    let report = run_monte_carlo_with_id(&id, &spec, &methods, &cfg, reference_scale)?;
    match format.as_str() {
        "json" => Ok((object(&report), None)),
        "csv" => {
            let mut buf = Vec::new();
            report
                .write_csv(&mut buf)
                .map_err(|e| CliError::flag("--format", e.to_string()))?;
            Ok((Value::Null, Some(String::from_utf8(buf).expect("utf-8"))))
        }
        other => Err(CliError::flag(
            "--format",
            format!("unknown format {other:?} (expected json or csv)"),
        )),
    }
}

fn cmd_diagnose(s: &mut Settings, args: &DiagnoseArgs) -> Result<Value> {
    let data = load_data(s, &args.data)?;
    let name = required_primitive(s, args.primitive.clone())?;
    let kind = primitive(&name, &data)?;
    let draws_text = s.pick_or(args.draws.clone(), "draws", "100,10000".to_string())?;
    let draws: Vec<usize> = draws_text
        .split(',')
        .map(|v| match v.trim().parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(CliError::flag(
                "--draws",
                format!("{v:?} is not a positive count"),
            )),
        })
        .collect::<Result<_>>()?;
    let seed = s.pick_or(args.seed, "seed", 0)?;
    let repeats = s.pick_or(args.repeats, "repeats", 20)?;
    if repeats == 0 {
        return Err(CliError::flag("--repeats", "must be at least 1"));
    }
    let mut mean_dev = Vec::with_capacity(draws.len());
    let mut deviations = Vec::with_capacity(draws.len());
    for (k, &r) in draws.iter().enumerate() {
        let (mut md, mut ad) = (0.0, 0.0);
        for j in 0..repeats {
            let mut rng = substream(seed, (k * repeats + j) as u64);
            let rep = similarity_diagnostic(&data.data, &kind, r, &mut rng)?;
            md += rep.mean_deviation;
            ad += rep.averaged_deviation;
        }
        mean_dev.push(md / repeats as f64);
        deviations.push(ad / repeats as f64);
    }
    // Log-log slope of the averaged deviation between the smallest and largest draw counts.
    let slope = match (draws.len(), deviations.first(), deviations.last()) {
        (n, Some(&d0), Some(&d1)) if n >= 2 && d0 > 0.0 && d1 > 0.0 => {
            Some((d1.ln() - d0.ln()) / ((draws[n - 1] as f64).ln() - (draws[0] as f64).ln()))
        }
        _ => None,
    };
    Ok(json!({
        "primitive": name,
        "seed": seed,
        "draws": draws,
        "repeats": repeats,
        "mean_deviation": mean_dev,
        "averaged_deviation": deviations,
        "slope": slope,
    }))
}

const DATA_KEYS: [&str; 2] = ["data", "no_intercept"];
const HYPOTHESIS_KEYS: [&str; 3] = ["a", "coef", "a0"];
const RUN_KEYS: [&str; 6] = ["draws", "seed", "alpha", "sidedness", "mode", "enum_cap"];

fn allowed(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

/// Runs the parsed command and returns the text to write.
pub fn execute(cli: &Cli) -> Result<String> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file.parse_value::<usize>("", "threads")?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::flag("--threads", e.to_string()))?;
    pool.install(|| dispatch(cli, file))
}

fn dispatch(cli: &Cli, file: ConfigFile) -> Result<String> {
    let (section, keys): (&'static str, Vec<&'static str>) = match &cli.command {
        Command::Test(_) => (
            "test",
            allowed(&[&DATA_KEYS, &HYPOTHESIS_KEYS, &RUN_KEYS, &["primitive"]]),
        ),
        Command::Ci(_) => (
            "ci",
            allowed(&[
                &DATA_KEYS,
                &RUN_KEYS,
                &["primitive", "coef", "lo", "hi", "step"],
            ]),
        ),
        Command::Exact(_) => (
            "exact",
            allowed(&[&DATA_KEYS, &HYPOTHESIS_KEYS, &["clusters", "alpha", "seed"]]),
        ),
        Command::Reflect(_) => (
            "reflect",
            allowed(&[
                &DATA_KEYS,
                &HYPOTHESIS_KEYS,
                &RUN_KEYS,
                &["j", "variant", "min_cluster_size"],
            ]),
        ),
        Command::Highdim(_) => (
            "highdim",
            allowed(&[
                &DATA_KEYS,
                &RUN_KEYS,
                &["primitive", "lambda_ridge", "lambda_lasso"],
            ]),
        ),
        Command::Simulate(_) => (
            "simulate",
            allowed(&[&[
                "preset",
                "scenario",
                "method",
                "replications",
                "seed",
                "a0",
                "format",
            ]]),
        ),
        Command::Diagnose(_) => (
            "diagnose",
            allowed(&[&DATA_KEYS, &["primitive", "draws", "seed", "repeats"]]),
        ),
    };
    file.check_keys(section, &keys)?;
    let mut s = Settings::new(file, section);
    let body = match &cli.command {
        Command::Test(a) => cmd_test(&mut s, a)?,
        Command::Ci(a) => cmd_ci(&mut s, a)?,
        Command::Exact(a) => cmd_exact(&mut s, a)?,
        Command::Reflect(a) => cmd_reflect(&mut s, a)?,
        Command::Highdim(a) => cmd_highdim(&mut s, a)?,
        Command::Simulate(a) => match cmd_simulate(&mut s, a)? {
            (_, Some(csv)) => return Ok(csv),
            (v, None) => v,
        },
        Command::Diagnose(a) => cmd_diagnose(&mut s, a)?,
    };
    finish(section, s, body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::decision_name;

    #[test]
    fn decision_names() {
        assert_eq!(decision_name(resrand::engine::Decision::Accept), "accept");
    }

    #[test]
    fn list_parsing_names_the_flag() {
        let err = parse_list("--a", "0, x").unwrap_err();
        assert!(err.to_string().starts_with("--a:"));
        assert_eq!(parse_list("--a", "0, 1.5").unwrap(), vec![0.0, 1.5]);
    }
}
