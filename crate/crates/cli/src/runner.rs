//! Command dispatch: solve / simulate / verify / example, each emitting DSV
//! artifacts plus a run manifest into the output directory.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctmdp_core::model::{ConditionId, CtmdpModel};
use ctmdp_core::queueing::{
    build_discrete_model, fixed_point_z, optimal_policy, u_closed_form, u_star_at_zero,
    u_star_at_zero_checked, QueueParams,
};
use ctmdp_core::rng::substream_seed;
use ctmdp_core::sim::{
    estimate_discounted_cost, explosion_probe, horizon_for_tail, simulate_episode,
    weight_moment_check, PolicySpec,
};
use ctmdp_core::solver::{dlp_check, solve, SolveReport};

use crate::config::{config_hash, Command, ConfigError, ModelSource, RunConfig};
use crate::dsv::{num, Manifest, Table};
use crate::modelfile::parse_model;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest state count on which the matrix-exponential residual diagnostics
/// run inside `verify`; larger models skip them (reported as such).
const RESIDUAL_STATE_LIMIT: usize = 64;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    /// A module operation failed; the first field names the failing check.
    Check(&'static str, String),
    Io(PathBuf, io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config: {e}"),
            RunError::Check(origin, msg) => write!(f, "{origin}: {msg}"),
            RunError::Io(path, e) => write!(f, "io on {}: {e}", path.display()),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    fs::create_dir_all(&config.out).map_err(|e| RunError::Io(config.out.clone(), e))?;

    let mut outcome = match config.command {
        Command::Solve => run_solve(config)?,
        Command::Simulate => run_simulate(config)?,
        Command::Verify => run_verify(config)?,
        Command::Example => run_example(config)?,
    };

    let manifest = Manifest {
        command: config.command.name(),
        config_hash: config_hash(config),
        seed: config.seed,
        version: VERSION,
        wall_ms: started.elapsed().as_millis(),
    };
    let path = manifest
        .write_to(&config.out)
        .map_err(|e| RunError::Io(config.out.clone(), e))?;
    outcome.artifacts.push(path);
    Ok(outcome)
}

fn load_model(config: &RunConfig) -> Result<CtmdpModel, RunError> {
    match &config.source {
        ModelSource::Path(p) => Ok(parse_model(p)?),
        ModelSource::Example(ex) => build_discrete_model(&ex.params, ex.n_states)
            .map_err(|e| RunError::Check("build_discrete_model", e.to_string())),
    }
}

fn write_table(table: Table, dir: &Path, name: &str) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    table
        .write_to(&path)
        .map_err(|e| RunError::Io(path.clone(), e))?;
    Ok(path)
}

fn solve_model(config: &RunConfig, model: &CtmdpModel) -> Result<SolveReport, RunError> {
    solve(model, config.tol, config.max_iter)
        .map_err(|e| RunError::Check("bellman_solve", e.to_string()))
}

fn run_solve(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let model = load_model(config)?;
    let report = solve_model(config, &model)?;

    let mut trace = Table::new(&["iteration", "sup_change", "residual"]);
    for stat in &report.history {
        trace.row(&[
            stat.iteration.to_string(),
            num(stat.sup_change),
            num(stat.bellman_residual),
        ]);
    }
    let trace_path = write_table(trace, &config.out, "trace.csv")?;

    let mut solution = Table::new(&["state", "value", "action"]);
    for i in 0..model.n_states() {
        let k = report.policy.choice[i];
        solution.row(&[
            num(model.states().points()[i]),
            num(report.value.values[i]),
            num(model.actions().actions(i)[k]),
        ]);
    }
    let solution_path = write_table(solution, &config.out, "solution.csv")?;

    let objective = model.gamma_mean(&report.value.values);
    Ok(RunOutcome {
        exit_code: if report.converged { 0 } else { 2 },
        summary: vec![
            format!(
                "solve: {} in {} iterations, residual {}, objective {}",
                if report.converged { "converged" } else { "NOT converged" },
                report.iterations,
                num(report.final_residual),
                num(objective)
            ),
        ],
        artifacts: vec![trace_path, solution_path],
    })
}

fn auto_horizon(config: &RunConfig, model: &CtmdpModel) -> Result<f64, RunError> {
    if let Some(h) = config.horizon {
        return Ok(h);
    }
    // pilot run sizes the tail target at a tenth of the expected half width
    let pilot_horizon = horizon_for_tail(model, 1e-6)
        .map_err(|e| RunError::Check("horizon_for_tail", e.to_string()))?
        .max(1.0);
    let pilot_n = config.episodes.min(500).max(2);
    let pilot_seed = substream_seed(config.seed, 0xF1107);
    let placeholder = solve_policy(config, model)?;
    let pilot = estimate_discounted_cost(model, &placeholder, pilot_horizon, pilot_n, pilot_seed)
        .map_err(|e| RunError::Check("estimate_discounted_cost", e.to_string()))?;
    let projected_half_width =
        pilot.half_width * (pilot_n as f64 / config.episodes as f64).sqrt();
    let target = (0.1 * projected_half_width).max(1e-12 * (1.0 + pilot.mean.abs()));
    match horizon_for_tail(model, target) {
        Ok(h) => Ok(h.max(1.0)),
        Err(_) => Ok(pilot_horizon),
    }
}

fn solve_policy(config: &RunConfig, model: &CtmdpModel) -> Result<PolicySpec, RunError> {
    let report = solve_model(config, model)?;
    Ok(PolicySpec::deterministic(report.policy))
}

fn run_simulate(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let model = load_model(config)?;
    let solve_report = solve_model(config, &model)?;
    let policy = PolicySpec::deterministic(solve_report.policy.clone());
    let horizon = auto_horizon(config, &model)?;

    let estimate = estimate_discounted_cost(&model, &policy, horizon, config.episodes, config.seed)
        .map_err(|e| RunError::Check("estimate_discounted_cost", e.to_string()))?;

    // trajectory log: replaying the same substreams reproduces the episodes
    let mut log = Table::new(&["episode", "m", "time", "state", "action"]);
    let mut exploded = 0usize;
    for episode in 0..config.episodes {
        let traj = simulate_episode(
            &model,
            &policy,
            horizon,
            substream_seed(config.seed, episode as u64),
        )
        .map_err(|e| RunError::Check("simulate_episode", e.to_string()))?;
        if traj.exploded {
            exploded += 1;
        }
        for m in 0..traj.states.len() {
            let action_cell = match traj.actions.get(m).copied().flatten() {
                Some(k) => num(model.actions().actions(traj.states[m])[k]),
                None => String::new(),
            };
            log.row(&[
                episode.to_string(),
                m.to_string(),
                num(traj.times[m]),
                traj.states[m].to_string(),
                action_cell,
            ]);
        }
    }
    let log_path = write_table(log, &config.out, "trajectories.csv")?;

    let mut est = Table::new(&["mean", "half_width", "episodes", "tail_bound", "horizon"]);
    est.row(&[
        num(estimate.mean),
        num(estimate.half_width),
        estimate.n_episodes.to_string(),
        num(estimate.tail_bound),
        num(estimate.horizon),
    ]);
    let est_path = write_table(est, &config.out, "estimate.csv")?;

    let objective = model.gamma_mean(&solve_report.value.values);
    Ok(RunOutcome {
        exit_code: if exploded == 0 { 0 } else { 2 },
        summary: vec![
            format!(
                "simulate: mean {} +- {} over {} episodes (tail bound {}, horizon {})",
                num(estimate.mean),
                num(estimate.half_width),
                estimate.n_episodes,
                num(estimate.tail_bound),
                num(estimate.horizon)
            ),
            format!("solved objective for comparison: {}", num(objective)),
            format!("exploded episodes: {exploded}"),
        ],
        artifacts: vec![log_path, est_path],
    })
}

struct Checks {
    table: Table,
    failures: usize,
    total: usize,
}

impl Checks {
    fn new() -> Self {
        Checks {
            table: Table::new(&["check", "status", "value", "threshold", "note"]),
            failures: 0,
            total: 0,
        }
    }

    fn record(&mut self, check: &str, passed: bool, value: f64, threshold: f64, note: &str) {
        self.total += 1;
        if !passed {
            self.failures += 1;
        }
        self.table.row(&[
            check.to_string(),
            if passed { "pass" } else { "fail" }.to_string(),
            num(value),
            num(threshold),
            note.to_string(),
        ]);
    }

    fn skip(&mut self, check: &str, note: &str) {
        self.table.row(&[
            check.to_string(),
            "skip".to_string(),
            String::new(),
            String::new(),
            note.to_string(),
        ]);
    }
}

fn run_verify(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let model = load_model(config)?;
    let mut checks = Checks::new();

    // kernel diagnostics
    let validation = model.validate_kernel();
    let worst_residual = validation
        .rows
        .iter()
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    checks.record(
        "kernel_validation",
        validation.passed,
        worst_residual,
        ctmdp_core::model::TAU_CONS,
        "max |row sum| over (state, action)",
    );

    // condition battery
    for id in ConditionId::ALL {
        let rep = model
            .check_condition(id)
            .map_err(|e| RunError::Check("check_condition", e.to_string()))?;
        let name = format!("condition_{}", id.name());
        checks.record(
            &name,
            rep.passed(),
            rep.slack(),
            -ctmdp_core::model::TAU_DRIFT,
            "worst clause slack",
        );
    }

    // Bellman solve, residual, and dual-LP certificate; a solve failure is
    // itself a reportable outcome, and everything downstream is skipped
    let report = match solve(&model, config.tol, config.max_iter) {
        Ok(report) => report,
        Err(e) => {
            checks.record("bellman_convergence", false, f64::NAN, 0.0, &e.to_string());
            for name in [
                "dlp_feasibility",
                "moment_bound",
                "explosion_probe",
                "forward_equation_residual",
                "martingale_residual",
            ] {
                checks.skip(name, "needs a solved value function");
            }
            let failures = checks.failures;
            let total = checks.total;
            let path = write_table(checks.table, &config.out, "checks.csv")?;
            return Ok(RunOutcome {
                exit_code: 2,
                summary: vec![format!("verify: {total} checks, {failures} failures")],
                artifacts: vec![path],
            });
        }
    };
    let qbar_max = (0..model.n_states())
        .map(|i| model.sup_rate(i))
        .fold(0.0, f64::max);
    let residual_budget = (model.alpha() + 1.0 + qbar_max) * config.tol;
    checks.record(
        "bellman_convergence",
        report.converged,
        report.final_residual,
        residual_budget,
        "weighted Bellman residual after the stopping rule",
    );
    let wp_max = model
        .weights()
        .w_prime
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let dlp_budget = residual_budget * wp_max / model.alpha();
    let dlp = dlp_check(&model, &report.value, dlp_budget);
    checks.record(
        "dlp_feasibility",
        dlp.feasible,
        dlp.feasibility_slack,
        -dlp_budget,
        "worst dual constraint slack of the solved value",
    );

    // simulation-side checks under the extracted policy
    let policy = PolicySpec::deterministic(report.policy.clone());
    let moment = weight_moment_check(
        &model,
        &policy,
        config.moment_time,
        config.episodes.min(10_000),
        config.seed,
    )
    .map_err(|e| RunError::Check("weight_moment_check", e.to_string()))?;
    checks.record(
        "moment_bound",
        moment.passed,
        moment.mean - 3.0 * moment.stderr,
        moment.bound,
        "mean - 3 stderr of w at the probe time vs the drift bound",
    );

    let max_level = model.states().max_level();
    if max_level == 0 {
        checks.skip("explosion_probe", "single nesting level; nothing to truncate");
    } else {
        let top = max_level.min(config.probe_levels);
        let levels: Vec<u32> = (1..=top).collect();
        let probe = explosion_probe(
            &model,
            &policy,
            config.moment_time,
            &levels,
            config.episodes.min(2_000),
            substream_seed(config.seed, 0xE5CA9E),
        )
        .map_err(|e| RunError::Check("explosion_probe", e.to_string()))?;
        let last = probe.rows.last().expect("at least one level");
        let exploded: usize = probe.rows.iter().map(|r| r.exploded_episodes).sum();
        checks.record(
            "explosion_probe",
            probe.decreasing_within_ci && last.frequency < 0.01 && exploded == 0,
            last.frequency,
            0.01,
            "escape frequency at the deepest probed level",
        );
    }

    // equation residuals are exact-arithmetic checks; they need the matrix
    // exponential, so they are gated on the state count
    if model.n_states() <= RESIDUAL_STATE_LIMIT {
        let x0 = (0..model.n_states())
            .max_by(|&a, &b| model.gamma()[a].partial_cmp(&model.gamma()[b]).unwrap())
            .unwrap_or(0);
        let target: Vec<usize> = (0..model.n_states())
            .filter(|&j| model.states().nesting()[j] <= 1)
            .collect();
        let kol = ctmdp_core::sim::kolmogorov_residual(
            &model,
            &report.policy,
            x0,
            config.moment_time,
            &target,
        )
        .map_err(|e| RunError::Check("kolmogorov_residual", e.to_string()))?;
        checks.record(
            "forward_equation_residual",
            kol <= 1e-6,
            kol,
            1e-6,
            "integral-form forward equation at the heaviest initial state",
        );
        let dyn_res = ctmdp_core::sim::dynkin_residual(
            &model,
            &report.policy,
            &report.value.values,
            x0,
            config.moment_time,
            true,
        )
        .map_err(|e| RunError::Check("dynkin_residual", e.to_string()))?;
        checks.record(
            "martingale_residual",
            dyn_res <= 1e-6,
            dyn_res,
            1e-6,
            "discounted martingale identity applied to the solved value",
        );
    } else {
        checks.skip(
            "forward_equation_residual",
            "state count above the matrix-exponential gate",
        );
        checks.skip(
            "martingale_residual",
            "state count above the matrix-exponential gate",
        );
    }

    // queueing-specific battery
    if let ModelSource::Example(ex) = &config.source {
        verify_example(&mut checks, config, ex.params, &model, &report)?;
    }

    let failures = checks.failures;
    let total = checks.total;
    let path = write_table(checks.table, &config.out, "checks.csv")?;
    Ok(RunOutcome {
        exit_code: if failures == 0 { 0 } else { 2 },
        summary: vec![format!(
            "verify: {} checks, {failures} failures",
            total
        )],
        artifacts: vec![path],
    })
}

fn verify_example(
    checks: &mut Checks,
    config: &RunConfig,
    params: QueueParams,
    model: &CtmdpModel,
    report: &SolveReport,
) -> Result<(), RunError> {
    let fp = fixed_point_z(&params, config.tol.min(1e-10), 200)
        .map_err(|e| RunError::Check("fixed_point_z", e.to_string()))?;
    checks.record(
        "fixed_point_convergence",
        true,
        fp.iterations as f64,
        200.0,
        "iterations of the scalar recursion",
    );
    let increasing = fp.z_history.windows(2).all(|p| p[1] > p[0]);
    checks.record(
        "fixed_point_monotone",
        increasing,
        fp.z_star,
        0.0,
        "trace strictly increasing toward z*",
    );
    checks.record(
        "fixed_point_first_step_bound",
        fp.first_step_bound,
        fp.z_history[1],
        1.0 - params.c1 / (2.0 * params.alpha),
        "first iterate above 1 - C1/(2 alpha)",
    );
    let lam_bound =
        10.0 / 7.0 * params.c2 * params.lambda + (params.alpha + params.lambda) / params.alpha;
    checks.record(
        "fixed_point_limit_bound",
        fp.limit_bound,
        fp.z_star,
        lam_bound,
        if fp.limit_bound_alpha_variant {
            "lambda-form bound; alpha-form variant also holds"
        } else {
            "lambda-form bound; alpha-form variant fails"
        },
    );
    match u_star_at_zero_checked(&params, fp.z_star) {
        Ok(u0) => checks.record(
            "idle_value_identity",
            true,
            u0,
            1e-7,
            "1 - z* agrees with its defining integral",
        ),
        Err(e) => checks.record("idle_value_identity", false, f64::NAN, 1e-7, &e.to_string()),
    }
    match optimal_policy(&params, fp.z_star) {
        Ok(_) => checks.record(
            "policy_admissible",
            true,
            params.a_budget,
            params.a_budget,
            "optimal intensity stays inside the budget",
        ),
        Err(e) => checks.record(
            "policy_admissible",
            false,
            f64::NAN,
            params.a_budget,
            &e.to_string(),
        ),
    }

    // discretized solve against the closed form, in the w'-weighted norm
    let mut sup_err: f64 = 0.0;
    for (i, &x) in model.states().points().iter().enumerate() {
        let reference = if x == 0.0 {
            u_star_at_zero(fp.z_star)
        } else {
            u_closed_form(&params, x, fp.z_star)
                .map_err(|e| RunError::Check("u_closed_form", e.to_string()))?
        };
        let err = (report.value.values[i] - reference).abs() / model.weights().w_prime[i];
        sup_err = sup_err.max(err);
    }
    checks.record(
        "solver_vs_closed_form",
        sup_err <= 5e-3,
        sup_err,
        5e-3,
        "weighted sup distance between the grid solve and the closed form",
    );
    Ok(())
}

fn run_example(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let ModelSource::Example(ex) = &config.source else {
        return Err(RunError::Check(
            "example",
            "the example command needs example parameters".into(),
        ));
    };
    let params = ex.params;
    let fp = fixed_point_z(&params, config.tol, 200)
        .map_err(|e| RunError::Check("fixed_point_z", e.to_string()))?;

    let mut trace = Table::new(&["n", "z"]);
    for (n, z) in fp.z_history.iter().enumerate() {
        trace.row(&[n.to_string(), num(*z)]);
    }
    let trace_path = write_table(trace, &config.out, "fixed_point.csv")?;

    let mut table = Table::new(&["x", "u_star", "phi_star"]);
    table.row(&["0".into(), num(u_star_at_zero(fp.z_star)), "0".into()]);
    let policy = optimal_policy(&params, fp.z_star);
    for j in 1..=200 {
        let x = j as f64 / 200.0;
        let u = u_closed_form(&params, x, fp.z_star)
            .map_err(|e| RunError::Check("u_closed_form", e.to_string()))?;
        let phi = match &policy {
            Ok(p) => num(p.rate(x)),
            Err(_) => String::new(),
        };
        table.row(&[num(x), num(u), phi]);
    }
    let table_path = write_table(table, &config.out, "policy_table.csv")?;

    let bounds_ok = fp.first_step_bound && fp.limit_bound;
    let admissible = policy.is_ok();
    let mut summary = vec![
        format!(
            "example: z* = {} after {} iterations (u*(0) = {})",
            num(fp.z_star),
            fp.iterations,
            num(u_star_at_zero(fp.z_star))
        ),
        format!(
            "bounds: first step {}, limit {} (alpha variant {})",
            fp.first_step_bound, fp.limit_bound, fp.limit_bound_alpha_variant
        ),
    ];
    if let Err(e) = &policy {
        summary.push(format!("policy: {e}"));
    }
    Ok(RunOutcome {
        exit_code: if bounds_ok && admissible { 0 } else { 2 },
        summary,
        artifacts: vec![trace_path, table_path],
    })
}
