//! The train → synthesize → evaluate pipeline and the order check.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use pod2c::dynamics::{BlackboxSystem, NoiseScale, NoiseSpec};
use pod2c::infostate::assemble;
use pod2c::lqg::{run_episode, Controller, EpisodeScore, Policy};
use pod2c::pomilqr::{optimize, write_log_csv, OptimizeResult, QuadraticCost, Trajectory};
use pod2c::sysid::{check_order, select_order, OrderSelection, RankReport};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Order};
use crate::error::{HarnessError, Result};
use crate::report::{ControllerKind, EpisodeRecord, EvalReport, GridPoint, Sweep};
use crate::svg::{Chart, Series};

/// Identification round used when re-fitting around the final nominal, kept
/// clear of the rounds the optimizer uses.
const SYNTHESIS_ROUND: u64 = 1 << 32;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const POLICY_FILE: &str = "policy.txt";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const NOMINAL_CSV: &str = "nominal.csv";
pub const LEVELS_CSV: &str = "eval_levels.csv";
pub const EPISODES_CSV: &str = "eval_episodes.csv";
pub const SYSID_CSV: &str = "sysid_check.csv";
pub const MEASUREMENT_SVG: &str = "cost_vs_measurement.svg";
pub const PROCESS_SVG: &str = "cost_vs_process.svg";

/// A validated configuration with its system and cost instantiated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: Box<dyn BlackboxSystem>,
    pub cost: QuadraticCost,
}

/// Result of `sysid-check`.
#[derive(Clone, Debug)]
pub struct SysidCheck {
    /// Observability rank per order, for exactly linear plants.
    pub analytic: Option<Vec<(usize, RankReport)>>,
    pub empirical: OrderSelection,
}

impl SysidCheck {
    /// Smallest order with a full-rank observability stack.
    pub fn analytic_order(&self) -> Option<usize> {
        self.analytic
            .as_ref()?
            .iter()
            .find(|(_, r)| r.sufficient)
            .map(|(q, _)| *q)
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = config.system()?;
        let cost = config.cost()?;
        Ok(Self {
            config,
            system,
            cost,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::new(ExperimentConfig::load(path, overrides)?)
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.config.problem.x0)
    }

    /// Constant-control rollout the optimizer starts from.
    pub fn initial_trajectory(&self) -> Result<Trajectory> {
        let nu = self.system.control_dim();
        let u = match &self.config.problem.initial_control {
            Some(u) => DVector::from_column_slice(u),
            None => DVector::zeros(nu),
        };
        let controls = vec![u; self.config.problem.horizon];
        Ok(Trajectory::simulate(self.system.as_ref(), &self.x0(), controls, &self.cost)?)
    }

    fn select(&self, around: &Trajectory) -> Result<OrderSelection> {
        let s = &self.config.sysid;
        let q_max = s.q_max.min(around.horizon() / 2).max(1);
        Ok(select_order(self.system.as_ref(), around, q_max, s.rollouts, s.sigma, s.seed)?)
    }

    /// ARMA order in use: the configured value, or the empirical selection
    /// around the initial trajectory.
    pub fn order(&self) -> Result<usize> {
        match self.config.sysid.order {
            Order::Fixed(q) => Ok(q),
            Order::Auto => Ok(self.select(&self.initial_trajectory()?)?.q),
        }
    }

    pub fn train(&self) -> Result<OptimizeResult> {
        let q = self.order()?;
        let s = &self.config.sysid;
        Ok(optimize(
            self.system.as_ref(),
            self.initial_trajectory()?,
            &self.cost,
            q,
            &self.config.solver.to_solver(),
            &s.to_sysid(),
            s.assemble_options(),
        )?)
    }

    /// Re-identify around `nominal` and wrap feedback around it, designed
    /// for the `[lqg]` noise levels.
    pub fn synthesize(&self, nominal: &Trajectory) -> Result<Policy> {
        if nominal.horizon() != self.config.problem.horizon {
            return Err(HarnessError::Config(format!(
                "trajectory horizon {} differs from problem.horizon {}",
                nominal.horizon(),
                self.config.problem.horizon
            )));
        }
        let q = self.order()?;
        let s = &self.config.sysid;
        let arma = s.to_sysid().identify(self.system.as_ref(), nominal, q, SYNTHESIS_ROUND)?;
        let ltv = assemble(&arma, s.assemble_options())?;
        let noise = self.config.design_noise().scaled(&scale_of(nominal.controls.as_slice(), &nominal.outputs));
        Ok(Policy::from_cost(ltv, nominal, &self.cost, &noise)?)
    }

    /// Noise settings evaluated, measurement sweep first.
    pub fn grid(&self) -> Vec<GridPoint> {
        let e = &self.config.eval;
        let m = e.measurement_levels.iter().map(|&m| GridPoint {
            sweep: Sweep::Measurement,
            process_std: e.fixed_process,
            measurement_std: m,
        });
        let p = e.process_levels.iter().map(|&p| GridPoint {
            sweep: Sweep::Process,
            process_std: p,
            measurement_std: e.fixed_measurement,
        });
        m.chain(p).collect()
    }

    fn success(&self, traj: &Trajectory) -> bool {
        let s = &self.config.eval.success;
        let z = traj.outputs.last().expect("non-empty trajectory")[s.output];
        let mut err = z - self.config.cost.target[s.output];
        if s.wrap_angle {
            let turn = 2.0 * std::f64::consts::PI;
            err = (err + std::f64::consts::PI).rem_euclid(turn) - std::f64::consts::PI;
        }
        err.abs() <= s.tolerance
    }

    /// Monte-Carlo evaluation of `policy` over the noise grid.
    ///
    /// The observer is redesigned for each grid point's noise; feedback is
    /// kept. Episode `e` uses the same random draws at every grid point and
    /// for both controllers.
    pub fn evaluate(&self, policy: &Policy) -> Result<EvalReport> {
        policy.validate()?;
        let e = &self.config.eval;
        let scale = scale_of(&policy.nominal_controls, &policy.nominal_outputs);
        let penalty = e.penalty_factor * policy.nominal_cost;
        let horizon = policy.horizon();
        let points = self.grid();
        let mut records = Vec::with_capacity(points.len() * e.episodes * 2);
        for (level, point) in points.iter().enumerate() {
            let noise = NoiseSpec {
                process_std: point.process_std,
                measurement_std: point.measurement_std,
                seed: e.seed,
            }
            .scaled(&scale);
            let tuned = policy.with_observer(&noise)?;
            let per_episode: Vec<Result<[EpisodeRecord; 2]>> = (0..e.episodes as u64)
                .into_par_iter()
                .map(|episode| {
                    let draw = noise.sample(episode, horizon);
                    let mut out = [None, None];
                    for (slot, kind) in ControllerKind::ALL.into_iter().enumerate() {
                        let controller = match kind {
                            ControllerKind::OpenLoop => Controller::OpenLoop,
                            ControllerKind::ClosedLoop => Controller::Lqg,
                        };
                        let run = run_episode(self.system.as_ref(), &tuned, controller, &draw, &self.cost);
                        let score = EpisodeScore::from_result(&run, penalty)?;
                        out[slot] = Some(EpisodeRecord {
                            level,
                            episode,
                            controller: kind,
                            cost: score.cost,
                            diverged: score.diverged,
                            success: run.as_ref().map(|t| self.success(t)).unwrap_or(false),
                        });
                    }
                    Ok(out.map(|r| r.expect("filled above")))
                })
                .collect();
            for pair in per_episode {
                records.extend(pair?);
            }
        }
        Ok(EvalReport::from_records(policy.nominal_cost, &points, records))
    }

    /// Observability ranks (linear plants) and empirical residuals per order.
    pub fn sysid_check(&self) -> Result<SysidCheck> {
        let q_max = self.config.sysid.q_max;
        let analytic = self
            .system
            .linear_spec()
            .map(|spec| (1..=q_max).map(|q| (q, check_order(&spec, q))).collect());
        let empirical = self.select(&self.initial_trajectory()?)?;
        Ok(SysidCheck { analytic, empirical })
    }
}

fn scale_of(controls: &[DVector<f64>], outputs: &[DVector<f64>]) -> NoiseScale {
    NoiseScale::from_nominal(controls, outputs)
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Write the optimized trajectory, convergence log and a long-format CSV of
/// the nominal signals. Returns the paths written.
pub fn write_training(dir: &Path, result: &OptimizeResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let traj_path = dir.join(TRAJECTORY_FILE);
    pod2c::artifact::save_trajectory(&traj_path, &result.trajectory)?;

    let (log_path, mut w) = create(dir, CONVERGENCE_CSV)?;
    write_log_csv(&result.log, &mut w)?;
    finish(&log_path, w)?;

    let (nom_path, w) = create(dir, NOMINAL_CSV)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "signal", "channel", "value"])?;
    let t = &result.trajectory;
    let signals: [(&str, &[DVector<f64>]); 3] =
        [("state", &t.states), ("output", &t.outputs), ("control", &t.controls)];
    for (name, seq) in signals {
        for (step, v) in seq.iter().enumerate() {
            for (ch, x) in v.iter().enumerate() {
                out.write_record([step.to_string(), name.to_string(), ch.to_string(), x.to_string()])?;
            }
        }
    }
    let w = out.into_inner().map_err(|e| HarnessError::io(&nom_path, e.into_error()))?;
    finish(&nom_path, w)?;
    Ok(vec![traj_path, log_path, nom_path])
}

pub fn write_policy(dir: &Path, policy: &Policy) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(POLICY_FILE);
    pod2c::artifact::save_policy(&path, policy)?;
    Ok(path)
}

/// Write per-level and per-episode CSVs and, when `svg` is set, the two
/// sweep charts.
pub fn write_evaluation(dir: &Path, report: &EvalReport, svg: bool) -> Result<Vec<PathBuf>> {
    let (levels, mut w) = create(dir, LEVELS_CSV)?;
    report.write_levels_csv(&mut w)?;
    finish(&levels, w)?;
    let (episodes, mut w) = create(dir, EPISODES_CSV)?;
    report.write_episodes_csv(&mut w)?;
    finish(&episodes, w)?;
    let mut written = vec![levels, episodes];
    if svg {
        for (sweep, name, label) in [
            (Sweep::Measurement, MEASUREMENT_SVG, "measurement noise (fraction of nominal)"),
            (Sweep::Process, PROCESS_SVG, "process noise (fraction of nominal)"),
        ] {
            if report.sweep(sweep).next().is_none() {
                continue;
            }
            let (path, mut w) = create(dir, name)?;
            w.write_all(sweep_chart(report, sweep, label).render().as_bytes())
                .map_err(|e| HarnessError::io(&path, e))?;
            finish(&path, w)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn sweep_chart(report: &EvalReport, sweep: Sweep, x_label: &str) -> Chart {
    let series = [
        (ControllerKind::OpenLoop, "open loop", "#d62728"),
        (ControllerKind::ClosedLoop, "closed loop", "#1f77b4"),
    ]
    .into_iter()
    .map(|(kind, name, color)| {
        let levels: Vec<_> = report.sweep(sweep).collect();
        Series {
            name: name.to_string(),
            color,
            x: levels.iter().map(|l| l.point.level()).collect(),
            mean: levels.iter().map(|l| l.stats(kind).mean).collect(),
            std: levels.iter().map(|l| l.stats(kind).std()).collect(),
        }
    })
    .collect();
    Chart {
        title: format!("Episodic cost vs {} noise", sweep.name()),
        x_label: x_label.to_string(),
        y_label: "episodic cost (mean ± std)".to_string(),
        series,
    }
}

pub fn write_sysid_check(dir: &Path, check: &SysidCheck) -> Result<PathBuf> {
    let (path, w) = create(dir, SYSID_CSV)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["q", "residual", "ratio_to_next", "observability_rank", "state_dim"])?;
    let e = &check.empirical;
    for (i, r) in e.residuals.iter().enumerate() {
        let q = i + 1;
        let ratio = e.ratios.get(i).map(f64::to_string).unwrap_or_default();
        let (rank, nx) = check
            .analytic
            .as_ref()
            .and_then(|a| a.iter().find(|(k, _)| *k == q))
            .map(|(_, rep)| (rep.rank.to_string(), rep.state_dim.to_string()))
            .unwrap_or_default();
        out.write_record([q.to_string(), r.to_string(), ratio, rank, nx])?;
    }
    let w = out.into_inner().map_err(|e| HarnessError::io(&path, e.into_error()))?;
    finish(&path, w)?;
    Ok(path)
}
