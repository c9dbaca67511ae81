//! Experiment configuration.
//!
//! Configurations are TOML files with one table per concern. Every key can be
//! overridden from the command line with `section.key=value`, where `value`
//! uses TOML syntax (bare words are taken as strings).

use std::path::{Path, PathBuf};

use pod2c::dynamics::{make_builtin, BlackboxSystem, NoiseSpec, ParamMap, ParamValue};
use pod2c::infostate::AssembleOptions;
use pod2c::pomilqr::{QuadraticCost, SolverConfig};
use pod2c::sysid::SysidConfig;
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

/// Environment variable that replaces `output.dir` when set.
pub const OUTPUT_DIR_ENV: &str = "POD2C_OUTPUT_DIR";

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub problem: ProblemSection,
    pub cost: CostSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sysid: SysidSection,
    #[serde(default)]
    pub lqg: LqgSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: Table,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub horizon: usize,
    pub x0: Vec<f64>,
    /// Constant control used to seed the optimizer; zero when absent.
    #[serde(default)]
    pub initial_control: Option<Vec<f64>>,
}

/// Diagonal quadratic cost weights.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub qf: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub alpha: f64,
    pub alpha_reduction: f64,
    pub alpha_floor: f64,
    pub mu: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            alpha: d.alpha,
            alpha_reduction: d.alpha_reduction,
            alpha_floor: d.alpha_floor,
            mu: d.mu,
            mu_increase: d.mu_increase,
            mu_decrease: d.mu_decrease,
            mu_min: d.mu_min,
            mu_max: d.mu_max,
            epsilon: d.epsilon,
            max_iterations: d.max_iterations,
        }
    }
}

impl SolverSection {
    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            alpha_reduction: self.alpha_reduction,
            alpha_floor: self.alpha_floor,
            mu: self.mu,
            mu_increase: self.mu_increase,
            mu_decrease: self.mu_decrease,
            mu_min: self.mu_min,
            mu_max: self.mu_max,
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
        }
    }
}

/// ARMA order: a fixed value or `"auto"` for residual-based selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Fixed(usize),
    Auto,
}

impl<'de> Deserialize<'de> for Order {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Word(String),
        }
        match Raw::deserialize(de)? {
            Raw::Int(q) if q >= 1 => Ok(Order::Fixed(q as usize)),
            Raw::Word(w) if w == "auto" => Ok(Order::Auto),
            _ => Err(serde::de::Error::custom(
                "order must be a positive integer or \"auto\"",
            )),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SysidSection {
    pub order: Order,
    /// Largest order tried by `"auto"` and by `sysid-check`.
    pub q_max: usize,
    pub rollouts: Option<usize>,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub per_lag_noise: bool,
}

impl Default for SysidSection {
    fn default() -> Self {
        Self {
            order: Order::Auto,
            q_max: 4,
            rollouts: None,
            sigma: None,
            seed: 0,
            per_lag_noise: false,
        }
    }
}

impl SysidSection {
    pub fn to_sysid(&self) -> SysidConfig {
        SysidConfig {
            rollouts: self.rollouts,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            per_lag_noise: self.per_lag_noise,
        }
    }
}

/// Noise levels the stored policy is designed for, as fractions of the
/// nominal magnitudes.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LqgSection {
    pub process_std: f64,
    pub measurement_std: f64,
}

impl Default for LqgSection {
    fn default() -> Self {
        Self {
            process_std: 0.1,
            measurement_std: 0.1,
        }
    }
}

/// Terminal success test on one output channel.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessSection {
    pub output: usize,
    pub tolerance: f64,
    /// Compare modulo a full turn, for angle outputs.
    pub wrap_angle: bool,
}

impl Default for SuccessSection {
    fn default() -> Self {
        Self {
            output: 0,
            tolerance: 0.1,
            wrap_angle: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
    /// Process level held fixed while measurement noise is swept.
    pub fixed_process: f64,
    /// Measurement level held fixed while process noise is swept.
    pub fixed_measurement: f64,
    pub measurement_levels: Vec<f64>,
    pub process_levels: Vec<f64>,
    /// Process level above which the controller is allowed to fail.
    pub failure_threshold: Option<f64>,
    /// Cost charged to a diverged episode, in multiples of the nominal cost.
    pub penalty_factor: f64,
    pub success: SuccessSection,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            seed: 0,
            fixed_process: 0.1,
            fixed_measurement: 0.1,
            measurement_levels: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            process_levels: vec![0.05, 0.1, 0.2, 0.3],
            failure_threshold: None,
            penalty_factor: 10.0,
            success: SuccessSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            svg: false,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parse configuration text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path, overrides: &[String]) -> Result<Self> {
        let parse_err = |e: toml::de::Error| HarnessError::Parse {
            path: origin.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        };
        // Schema errors in the file itself keep their line numbers.
        let from_file: ExperimentConfig = toml::from_str(text).map_err(parse_err)?;
        if overrides.is_empty() {
            from_file.validate()?;
            return Ok(from_file);
        }
        let mut table: Table = toml::from_str(text).map_err(parse_err)?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let cfg: ExperimentConfig =
            Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::Override {
                    spec: overrides.join(" "),
                    reason: e.message().trim().to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path, overrides)
    }

    pub fn system(&self) -> Result<Box<dyn BlackboxSystem>> {
        Ok(make_builtin(&self.system.name, &param_map(&self.system.params)?)?)
    }

    pub fn cost(&self) -> Result<QuadraticCost> {
        let c = &self.cost;
        Ok(QuadraticCost::diagonal(&c.q, &c.r, &c.qf, &c.target)?)
    }

    /// Design noise of the stored policy.
    pub fn design_noise(&self) -> NoiseSpec {
        NoiseSpec {
            process_std: self.lqg.process_std,
            measurement_std: self.lqg.measurement_std,
            seed: self.eval.seed,
        }
    }

    /// `POD2C_OUTPUT_DIR` if set, otherwise `output.dir`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }

    /// Cross-field checks, including those of the core sub-configurations.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let sys = self.system()?;
        let cost = self.cost()?;
        if self.problem.horizon == 0 {
            return bad("problem.horizon must be at least 1".into());
        }
        if self.problem.x0.len() != sys.state_dim() {
            return bad(format!(
                "problem.x0 has {} entries, system `{}` has {} states",
                self.problem.x0.len(),
                self.system.name,
                sys.state_dim()
            ));
        }
        if let Some(u) = &self.problem.initial_control {
            if u.len() != sys.control_dim() {
                return bad(format!(
                    "problem.initial_control has {} entries, system has {} controls",
                    u.len(),
                    sys.control_dim()
                ));
            }
        }
        if cost.output_dim() != sys.output_dim() || cost.control_dim() != sys.control_dim() {
            return bad(format!(
                "cost weights are {}x{} (outputs x controls), system is {}x{}",
                cost.output_dim(),
                cost.control_dim(),
                sys.output_dim(),
                sys.control_dim()
            ));
        }
        self.solver.to_solver().validate()?;
        if self.sysid.q_max == 0 {
            return bad("sysid.q_max must be at least 1".into());
        }
        if let Order::Fixed(q) = self.sysid.order {
            if q > self.problem.horizon {
                return bad(format!("sysid.order {q} exceeds the horizon"));
            }
        }
        if self.sysid.rollouts == Some(0) {
            return bad("sysid.rollouts must be positive".into());
        }
        if let Some(s) = self.sysid.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return bad("sysid.sigma must be positive".into());
            }
        }
        self.design_noise().validate()?;
        let e = &self.eval;
        if e.episodes == 0 {
            return bad("eval.episodes must be positive".into());
        }
        if e.measurement_levels.is_empty() && e.process_levels.is_empty() {
            return bad("eval needs at least one noise level".into());
        }
        let levels = e
            .measurement_levels
            .iter()
            .chain(&e.process_levels)
            .chain([&e.fixed_process, &e.fixed_measurement]);
        for &l in levels {
            if !(l >= 0.0) || !l.is_finite() {
                return bad(format!("noise level {l} must be a non-negative number"));
            }
        }
        if !(e.penalty_factor >= 0.0) {
            return bad("eval.penalty_factor must be non-negative".into());
        }
        if e.success.output >= sys.output_dim() {
            return bad(format!(
                "eval.success.output {} out of range for {} outputs",
                e.success.output,
                sys.output_dim()
            ));
        }
        if !(e.success.tolerance >= 0.0) {
            return bad("eval.success.tolerance must be non-negative".into());
        }
        Ok(())
    }
}

/// Apply one `section.key=value` override to a parsed table.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let err = |reason: &str| HarnessError::Override {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let (path, raw) = spec.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(err("empty key segment"));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("at least one segment");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| err(&format!("`{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Convert the `[system.params]` table into simulator parameters.
pub fn param_map(table: &Table) -> Result<ParamMap> {
    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
    fn list(v: &Value) -> Option<Vec<f64>> {
        v.as_array()?.iter().map(number).collect()
    }
    fn matrix(v: &Value) -> Option<Vec<Vec<f64>>> {
        v.as_array()?.iter().map(list).collect()
    }
    let mut out = ParamMap::new();
    for (key, v) in table {
        let depth = {
            let mut d = 0;
            let mut cur = v;
            while let Some(first) = cur.as_array().and_then(|a| a.first()) {
                d += 1;
                cur = first;
            }
            d
        };
        let parsed = match depth {
            0 => number(v).map(ParamValue::Number),
            1 => list(v).map(ParamValue::List),
            2 => matrix(v).map(ParamValue::Matrix),
            3 => v
                .as_array()
                .and_then(|a| a.iter().map(matrix).collect::<Option<Vec<_>>>())
                .map(ParamValue::MatrixSeq),
            _ => None,
        };
        let parsed = parsed.ok_or_else(|| {
            HarnessError::Config(format!(
                "system.params.{key}: expected a number, list, matrix or list of matrices"
            ))
        })?;
        out.insert(key.clone(), parsed);
    }
    Ok(out)
}
