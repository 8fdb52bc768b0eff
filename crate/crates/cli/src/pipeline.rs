//! Subcommand pipelines and run summaries.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use weakkam::extremals::{
    aubry_convergence, calibrated_extremal, two_sided_extremal, CalibrationOptions, ExtremalError,
};
use weakkam::lax_oleinik::{
    check_dpp, check_subsolution, check_supersolution, default_tolerance, solve_cauchy, stability_suite,
    GridField, SchemeConfig, SchemeError,
};
use weakkam::point;
use weakkam::skorokhod::{solve_reflected, validate_triple, InputSignal, ReflectedOptions, SkorokhodError};
use weakkam::weak_kam::{
    aubry_detect, build_action_graph, critical_value, critical_value_cycle, level_scale, mane_potential,
    mane_potential_to, representation, u_minus, ActionGraph, AubryOptions, AubryResult, CriticalValue,
    CycleOptions, GraphConfig, ManePotential, WeakKamError, FULL_MATRIX_CAP,
};

use crate::expr::Expr;
use crate::oracle::{oracle_value_iteration, OracleError};
use crate::output::{write_csv, write_json};
use crate::problem::{build_problem, Problem, ProblemError};
use crate::spec::{Format, ProblemSpec, SpecError};

/// Version tag of [`RunSummary`].
pub const SCHEMA: &str = "weakkam-run/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveCauchy,
    CriticalValue,
    Distance,
    Aubry,
    WeakKamSolve,
    Extremal,
    AubryOrbit,
    Skorokhod,
    Verify,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::SolveCauchy,
        Command::CriticalValue,
        Command::Distance,
        Command::Aubry,
        Command::WeakKamSolve,
        Command::Extremal,
        Command::AubryOrbit,
        Command::Skorokhod,
        Command::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveCauchy => "solve-cauchy",
            Command::CriticalValue => "critical-value",
            Command::Distance => "distance",
            Command::Aubry => "aubry",
            Command::WeakKamSolve => "weak-kam-solve",
            Command::Extremal => "extremal",
            Command::AubryOrbit => "aubry-orbit",
            Command::Skorokhod => "skorokhod",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{0}")]
    Missing(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for spec problems, 2 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) | CliError::Problem(_) | CliError::Missing(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

macro_rules! numerical {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical!(SchemeError, WeakKamError, ExtremalError, SkorokhodError, OracleError);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

/// `passed` is `value <= limit`. Ungated checks are reported only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub spec: ProblemSpec,
    pub headline: Vec<Metric>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.gated)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            3
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.headline.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.gated && !c.passed).collect()
    }
}

struct Ctx<'a> {
    spec: &'a ProblemSpec,
    p: Problem,
    out: Option<PathBuf>,
    headline: Vec<Metric>,
    checks: Vec<Check>,
    artifacts: Vec<String>,
}

impl Ctx<'_> {
    fn metric(&mut self, name: &str, value: f64) {
        self.headline.push(Metric { name: name.into(), value });
    }

    fn gate(&mut self, name: &str, value: f64, limit: f64) -> bool {
        let passed = value <= limit;
        self.checks.push(Check { name: name.into(), value, limit, passed, gated: true });
        passed
    }

    fn report(&mut self, name: &str, value: f64, limit: f64) {
        self.checks.push(Check { name: name.into(), value, limit, passed: value <= limit, gated: false });
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        if let Some(dir) = &self.out {
            if self.spec.output.wants(Format::Csv) {
                let path = write_csv(dir, name, header, rows)?;
                self.artifacts.push(path.display().to_string());
            }
        }
        Ok(())
    }

    fn h(&self) -> f64 {
        self.p.grid.h()
    }

    fn from(&self, what: &str) -> Result<[f64; 2], CliError> {
        self.spec.run.from.ok_or_else(|| CliError::Missing(format!("{what} needs a start point (--from or run.from)")))
    }
}

/// Runs `cmd` on `spec`, writing artifacts under `out` (none when `None`).
pub fn run_pipeline(spec: &ProblemSpec, cmd: Command, out: Option<&Path>) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    spec.validate()?;
    let p = build_problem(spec)?;
    let mut ctx = Ctx {
        spec,
        p,
        out: out.map(Path::to_path_buf),
        headline: Vec::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
    };
    ctx.metric("nodes", ctx.p.grid.len() as f64);
    match cmd {
        Command::SolveCauchy => run_cauchy(&mut ctx)?,
        Command::CriticalValue => run_critical_value(&mut ctx)?,
        Command::Distance => run_distance(&mut ctx)?,
        Command::Aubry => run_aubry(&mut ctx)?,
        Command::WeakKamSolve => run_weak_kam(&mut ctx)?,
        Command::Extremal => run_extremal(&mut ctx)?,
        Command::AubryOrbit => run_aubry_orbit(&mut ctx)?,
        Command::Skorokhod => run_skorokhod(&mut ctx)?,
        Command::Verify => run_verify(&mut ctx)?,
    }
    let mut summary = RunSummary {
        schema: SCHEMA.into(),
        command: cmd.name().into(),
        seed: spec.run.seed,
        spec: spec.clone(),
        headline: ctx.headline,
        checks: ctx.checks,
        artifacts: ctx.artifacts,
        wall_time_s: 0.0,
    };
    if let Some(dir) = &ctx.out {
        if spec.output.wants(Format::Json) {
            let name = format!("{}.json", cmd.name());
            summary.artifacts.push(dir.join(&name).display().to_string());
            summary.wall_time_s = start.elapsed().as_secs_f64();
            write_json(dir, &name, &summary)?;
            return Ok(summary);
        }
    }
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

fn cauchy_config(spec: &ProblemSpec) -> SchemeConfig<f64> {
    SchemeConfig { dt: spec.grid.dt, ..SchemeConfig::default() }
}

fn cauchy_checks(ctx: &mut Ctx, u0: &GridField<f64>, tf: &weakkam::lax_oleinik::TimeField<f64>) -> Result<(), CliError> {
    let d = tf.diagnostics.clone();
    let h = ctx.h();
    ctx.gate("upper_barrier", d.upper_defect, 1e-9);
    ctx.gate("lower_barrier", d.lower_defect, h * (1.0 + u0.lipschitz_ratio()));
    ctx.gate("control_bound_violations", d.control_bound_violations as f64, 0.0);
    let tol = 3.0 * (h + tf.dt);
    if tf.steps >= 2 {
        let half = tf.time(tf.steps / 2);
        let rep = check_dpp(tf, half, half, tol)?;
        ctx.gate("dpp_defect", rep.defect, tol);
        ctx.gate("dpp_one_shot_gap", rep.one_shot_gap, tol);
    }
    Ok(())
}

fn run_cauchy(ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = ctx.spec;
    let u0 = ctx.p.field_from("run.initial", &spec.run.initial)?;
    let tf = solve_cauchy(&ctx.p.model, &ctx.p.field, &u0, spec.grid.horizon, &cauchy_config(spec))?;
    let d = &tf.diagnostics;
    ctx.metric("dt", tf.dt);
    ctx.metric("steps", tf.steps as f64);
    ctx.metric("control_bound", d.control_bound);
    ctx.metric("max_control", d.max_control);
    ctx.metric("initial_lipschitz", u0.lipschitz_ratio());
    ctx.metric("final_lipschitz", d.final_lipschitz);
    let w = tf.final_field();
    ctx.metric("final_min", w.min());
    ctx.metric("final_max", w.max());
    cauchy_checks(ctx, &u0, &tf)?;

    let mut rows = Vec::new();
    let mut last = usize::MAX;
    for j in 0..=10 {
        let k = tf.steps * j / 10;
        if k == last {
            continue;
        }
        last = k;
        let slice = tf.slice(k).expect("every slice is stored");
        for (i, &v) in slice.iter().enumerate() {
            let x = tf.grid.node(i);
            rows.push(vec![tf.time(k), x[0], x[1], v]);
        }
    }
    ctx.csv("solve-cauchy.csv", &["t", "x", "y", "w"], &rows)?;
    if !spec.run.probes.is_empty() {
        let mut rows = Vec::new();
        for k in 0..=tf.steps {
            for (n, &q) in spec.run.probes.iter().enumerate() {
                let t = tf.time(k);
                rows.push(vec![t, n as f64, q[0], q[1], tf.at(q, t)]);
            }
        }
        ctx.csv("probes.csv", &["t", "probe", "x", "y", "w"], &rows)?;
    }
    Ok(())
}

struct Stationary {
    graph: ActionGraph<f64>,
    crit: CriticalValue<f64>,
    /// Full matrix when the grid is small enough, otherwise the columns of
    /// the Aubry nodes.
    pot: ManePotential<f64>,
    aubry: AubryResult<f64>,
}

fn stationary(ctx: &mut Ctx) -> Result<Stationary, CliError> {
    let g0 = build_action_graph(&ctx.p.model, &ctx.p.field, ctx.p.grid.clone(), 0.0, &GraphConfig::default());
    let crit = critical_value_cycle(&g0, &CycleOptions::default())?;
    let graph = g0.relevel(crit.c);
    let opts = AubryOptions { tau_min: None, tol: ctx.spec.run.tol_aubry };
    let (pot, aubry) = if graph.len() <= FULL_MATRIX_CAP {
        let pot = mane_potential(&graph)?;
        let aubry = aubry_detect(&graph, &pot, &opts)?;
        (pot, aubry)
    } else {
        let none = mane_potential_to(&graph, &[])?;
        let aubry = aubry_detect(&graph, &none, &opts)?;
        (mane_potential_to(&graph, &aubry.set)?, aubry)
    };
    ctx.metric("c", crit.c);
    ctx.metric("aubry_size", aubry.set.len() as f64);
    ctx.metric("aubry_tol", aubry.tol);
    ctx.metric("tau_min", aubry.tau_min);
    Ok(Stationary { graph, crit, pot, aubry })
}

/// Trace of `min_{y in A} d(., y)` on the Aubry nodes. It is zero unless
/// some `d(y, y')` between Aubry nodes is negative, and always compatible.
pub fn minimal_trace(pot: &ManePotential<f64>, nodes: &[usize]) -> Vec<f64> {
    nodes
        .iter()
        .map(|&y| nodes.iter().filter_map(|&z| pot.get(y, z)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// `min_A d(., y)`.
fn minimal_solution(st: &Stationary) -> Result<GridField<f64>, CliError> {
    let trace = minimal_trace(&st.pot, &st.aubry.set);
    Ok(representation(&st.pot, &st.aubry.set, &trace, 1e-9)?)
}

/// `max |u - representation(u restricted to A)|` against `5 h (1 + Lip u)`.
fn round_trip(ctx: &mut Ctx, st: &Stationary, name: &str, u: &GridField<f64>) {
    let limit = 5.0 * ctx.h() * (1.0 + u.lipschitz_ratio());
    let trace: Vec<f64> = st.aubry.set.iter().map(|&y| u.values[y]).collect();
    let value = match representation(&st.pot, &st.aubry.set, &trace, limit) {
        Ok(r) => u.sup_distance(&r),
        Err(_) => f64::INFINITY,
    };
    ctx.gate(name, value, limit);
}

fn run_critical_value(ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = ctx.spec;
    let graph = build_action_graph(&ctx.p.model, &ctx.p.field, ctx.p.grid.clone(), 0.0, &GraphConfig::default());
    let cfg = SchemeConfig { dt: spec.run.slope_dt, store_stride: usize::MAX, ..SchemeConfig::default() };
    let cv = critical_value(&ctx.p.model, &ctx.p.field, &graph, spec.run.slope_horizon, &cfg, spec.run.slope_tol)?;
    let gap = cv.gap.unwrap_or(f64::INFINITY);
    ctx.metric("c", cv.c);
    ctx.metric("c_cycle", cv.c_cycle);
    ctx.metric("c_slope", cv.c_slope.unwrap_or(f64::NAN));
    ctx.metric("gap", gap);
    ctx.metric("bracket_lo", cv.bracket.0);
    ctx.metric("bracket_hi", cv.bracket.1);
    ctx.metric("edges", graph.edge_count() as f64);
    ctx.gate("cycle_slope_gap", gap, spec.run.tol_c);
    ctx.gate("bracket_width", cv.bracket.1 - cv.bracket.0, 1e-4 * level_scale(&graph));
    let rows: Vec<Vec<f64>> = (0..graph.len())
        .map(|i| {
            let x = ctx.p.grid.node(i);
            vec![x[0], x[1], cv.potential[i], graph.loop_rate(i)]
        })
        .collect();
    ctx.csv("critical-value.csv", &["x", "y", "subsolution", "rest_rate"], &rows)
}

fn run_distance(ctx: &mut Ctx) -> Result<(), CliError> {
    let from = ctx.from("distance")?;
    let g0 = build_action_graph(&ctx.p.model, &ctx.p.field, ctx.p.grid.clone(), 0.0, &GraphConfig::default());
    let crit = critical_value_cycle(&g0, &CycleOptions::default())?;
    let gc = g0.relevel(crit.c);
    let y = ctx.p.grid.nearest_node(from);
    let pot = mane_potential_to(&gc, &[y])?;
    let col = pot.column(y).ok_or(WeakKamError::MissingColumn { node: y })?.to_vec();
    let yp = ctx.p.grid.node(y);
    ctx.metric("c", crit.c);
    ctx.metric("source_x", yp[0]);
    ctx.metric("source_y", yp[1]);
    ctx.metric("max_distance", col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    ctx.gate("self_distance", col[y].abs(), 1e-9);
    let excess = (0..gc.edge_count())
        .map(|e| col[gc.source(e)] - gc.weight(e) - col[gc.target(e)])
        .fold(f64::NEG_INFINITY, f64::max);
    ctx.gate("edge_consistency", excess, 1e-9);
    let rows: Vec<Vec<f64>> = (0..gc.len())
        .map(|i| {
            let x = ctx.p.grid.node(i);
            vec![x[0], x[1], col[i]]
        })
        .collect();
    ctx.csv("distance.csv", &["x", "y", "d"], &rows)
}

fn run_aubry(ctx: &mut Ctx) -> Result<(), CliError> {
    let st = stationary(ctx)?;
    ctx.gate("aubry_fallback", if st.aubry.fallback { 1.0 } else { 0.0 }, 0.0);
    if let Some(t) = st.pot.triangle_defect() {
        ctx.gate("triangle_defect", t, 1e-9);
    }
    let rows: Vec<Vec<f64>> = (0..st.graph.len())
        .map(|i| {
            let x = ctx.p.grid.node(i);
            vec![x[0], x[1], st.aubry.residual[i], if st.aubry.contains(i) { 1.0 } else { 0.0 }]
        })
        .collect();
    ctx.csv("aubry.csv", &["x", "y", "residual", "in_aubry"], &rows)
}

fn viscosity_report(ctx: &mut Ctx, name: &str, u: &GridField<f64>, c: f64) {
    let tol = default_tolerance(u);
    let sub = check_subsolution(&ctx.p.model, &ctx.p.field, u, c, tol);
    let sup = check_supersolution(&ctx.p.model, &ctx.p.field, u, c, tol);
    ctx.report(&format!("{name}_subsolution"), sub.worst, 0.0);
    ctx.report(&format!("{name}_supersolution"), sup.worst, 0.0);
}

fn long_time_solution(ctx: &mut Ctx, c: f64) -> Result<GridField<f64>, CliError> {
    let spec = ctx.spec;
    let cfg = SchemeConfig { dt: spec.run.slope_dt, store_stride: usize::MAX, ..SchemeConfig::default() };
    let u0 = GridField::constant(ctx.p.grid.clone(), 0.0);
    let um = u_minus(&ctx.p.model, &ctx.p.field, &u0, c, spec.run.slope_horizon, &cfg, f64::INFINITY)?;
    ctx.report("u_minus_relaxation", um.change, 5.0 * ctx.h() * (1.0 + um.field.lipschitz_ratio()));
    Ok(um.field)
}

fn run_weak_kam(ctx: &mut Ctx) -> Result<(), CliError> {
    let st = stationary(ctx)?;
    let u = minimal_solution(&st)?;
    let um = long_time_solution(ctx, st.crit.c)?;
    ctx.metric("lipschitz", u.lipschitz_ratio());
    ctx.metric("u_max", u.max());
    round_trip(ctx, &st, "round_trip_representation", &u);
    round_trip(ctx, &st, "round_trip_u_minus", &um);
    viscosity_report(ctx, "representation", &u, st.crit.c);
    let rows: Vec<Vec<f64>> = (0..u.values.len())
        .map(|i| {
            let x = ctx.p.grid.node(i);
            vec![x[0], x[1], u.values[i], um.values[i], if st.aubry.contains(i) { 1.0 } else { 0.0 }]
        })
        .collect();
    ctx.csv("weak-kam-solve.csv", &["x", "y", "u", "u_minus", "in_aubry"], &rows)
}

fn run_extremal(ctx: &mut Ctx) -> Result<(), CliError> {
    let from = ctx.from("extremal")?;
    let spec = ctx.spec;
    let st = stationary(ctx)?;
    let phi = minimal_solution(&st)?;
    let opts = CalibrationOptions { window: spec.run.window, tol: spec.run.tol_cal, ..CalibrationOptions::default() };
    let curve = calibrated_extremal(&ctx.p.model, &ctx.p.field, &phi, st.crit.c, from, spec.grid.horizon, &opts)?;
    let conv = aubry_convergence(&curve, &st.aubry, &ctx.p.grid);
    ctx.metric("dt", curve.dt);
    ctx.metric("window", curve.window);
    ctx.metric("total_defect", curve.total_defect);
    ctx.metric("max_speed", curve.max_speed);
    ctx.metric("speed_bound", curve.speed_bound);
    ctx.metric("aubry_tail", conv.tail);
    ctx.gate("calibration_defect", curve.worst_defect(), curve.tol);
    ctx.gate("speed_ratio", curve.max_speed, 1.2 * curve.speed_bound);
    let failed = curve.validation.clauses.iter().filter(|c| !c.passed).count();
    ctx.gate("triple_clauses_failed", failed as f64, 0.0);
    ctx.report("aubry_convergence", conv.tail, conv.previous.max(2.0 * conv.h));

    let n = curve.path.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let k = i.min(n - 2);
            let v = curve.controls[k];
            let l = curve.pushes[k] / curve.dt;
            let w = (i / curve.window_steps.max(1)).min(curve.defects.len().saturating_sub(1));
            let e = curve.defects.get(w).copied().unwrap_or(0.0);
            let x = curve.path[i];
            vec![curve.times[i], x[0], x[1], v[0], v[1], l, e, conv.distances[i]]
        })
        .collect();
    ctx.csv("extremal.csv", &["t", "eta_1", "eta_2", "v_1", "v_2", "l", "calibration_defect", "dist_aubry"], &rows)
}

fn run_aubry_orbit(ctx: &mut Ctx) -> Result<(), CliError> {
    let at = ctx.spec.run.at.ok_or_else(|| CliError::Missing("aubry-orbit needs a node (--at or run.at)".into()))?;
    let st = stationary(ctx)?;
    let y = ctx.p.grid.nearest_node(at);
    let orbit = two_sided_extremal(&st.graph, &st.aubry, y, ctx.spec.grid.horizon)?;
    ctx.metric("loop_cost", orbit.loop_cost);
    ctx.metric("loop_duration", orbit.loop_duration);
    ctx.metric("loop_nodes", orbit.loop_nodes.len() as f64);
    ctx.gate("consistency_excess", orbit.consistency_excess, 0.0);
    ctx.gate("aubry_distance", orbit.max_aubry_distance, 2.0 * ctx.h());
    let rows: Vec<Vec<f64>> = (0..orbit.times.len())
        .map(|i| {
            let x = orbit.points[i];
            vec![orbit.times[i], x[0], x[1], orbit.nodes[i] as f64]
        })
        .collect();
    ctx.csv("aubry-orbit.csv", &["t", "eta_1", "eta_2", "node"], &rows)
}

fn input_signal(spec: &ProblemSpec) -> Result<InputSignal<f64>, CliError> {
    let vx = Expr::parse(&spec.run.velocity[0]).map_err(|e| SpecError::Invalid { path: "run.velocity[0]".into(), message: e.to_string() })?;
    let vy = Expr::parse(&spec.run.velocity[1]).map_err(|e| SpecError::Invalid { path: "run.velocity[1]".into(), message: e.to_string() })?;
    let dim = spec.domain.dim();
    Ok(InputSignal::from_fn(spec.grid.horizon, spec.run.pieces, |t| {
        let y = if dim == 1 { 0.0 } else { vy.eval_at([0.0, 0.0], t) };
        [vx.eval_at([0.0, 0.0], t), y]
    }))
}

fn run_skorokhod(ctx: &mut Ctx) -> Result<(), CliError> {
    let x0 = ctx.from("skorokhod")?;
    let v = input_signal(ctx.spec)?;
    let sol = solve_reflected(&ctx.p.domain, &ctx.p.field, x0, &v, ctx.spec.run.tol_skorokhod, &ReflectedOptions::default())?;
    let tr = &sol.triple;
    ctx.metric("epsilon", *sol.epsilons.last().unwrap_or(&f64::NAN));
    ctx.metric("halvings", sol.sup_diffs.len() as f64);
    ctx.metric("last_sup_diff", sol.sup_diffs.last().copied().unwrap_or(f64::NAN));
    let worst_ratio = sol.contraction_ratios().into_iter().fold(f64::NEG_INFINITY, f64::max);
    ctx.metric("worst_contraction", worst_ratio);
    ctx.metric("ode_residual", tr.residuals.ode);
    ctx.metric("constraint_residual", tr.residuals.constraint);
    ctx.metric("complementarity_residual", tr.residuals.complementarity);
    ctx.metric("speed_ratio", tr.residuals.speed_ratio);
    let rep = validate_triple(&ctx.p.domain, &ctx.p.field, tr, &sol.tolerances);
    for c in &rep.clauses {
        ctx.gate(c.name, c.value, c.limit);
    }
    let dim = ctx.p.domain.dim();
    let mut header = vec!["t"];
    header.extend(if dim == 1 { &["eta_1"][..] } else { &["eta_1", "eta_2"][..] });
    header.extend(if dim == 1 { &["v_1"][..] } else { &["v_1", "v_2"][..] });
    header.push("l");
    let rows: Vec<Vec<f64>> = (0..tr.len())
        .map(|i| {
            let mut r = vec![tr.t_grid[i]];
            r.extend_from_slice(&tr.eta[i][..dim]);
            r.extend_from_slice(&tr.v[i][..dim]);
            r.push(tr.l[i]);
            r
        })
        .collect();
    ctx.csv("skorokhod.csv", &header, &rows)
}

/// Nodes whose distance to the boundary is at least a quarter of the
/// diameter; the whole interior when there are none.
fn deep_nodes(p: &Problem) -> Vec<usize> {
    let g = &p.grid;
    let boundary: Vec<[f64; 2]> = g.boundary_nodes().iter().map(|&i| g.node(i)).collect();
    let depth = |x: [f64; 2]| boundary.iter().map(|&b| point::dist(x, b)).fold(f64::INFINITY, f64::min);
    let cut = 0.25 * p.domain.diameter();
    let deep: Vec<usize> = (0..g.len()).filter(|&i| depth(g.node(i)) >= cut).collect();
    if deep.is_empty() {
        (0..g.len()).filter(|&i| !g.is_boundary(i)).collect()
    } else {
        deep
    }
}

fn run_verify(ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = ctx.spec;
    let h = ctx.h();

    // evolution: constants, order, barriers, dynamic programming
    let u0 = ctx.p.field_from("run.initial", &spec.run.initial)?;
    let tf = solve_cauchy(&ctx.p.model, &ctx.p.field, &u0, spec.grid.horizon, &cauchy_config(spec))?;
    cauchy_checks(ctx, &u0, &tf)?;
    let fixed = SchemeConfig {
        control_bound: Some(tf.diagnostics.control_bound),
        store_stride: usize::MAX,
        ..cauchy_config(spec)
    };
    let base = solve_cauchy(&ctx.p.model, &ctx.p.field, &u0, spec.grid.horizon, &fixed)?;
    let lifted = solve_cauchy(&ctx.p.model, &ctx.p.field, &u0.map(|v| v + 1.0), spec.grid.horizon, &fixed)?;
    let commute = base.last().iter().zip(lifted.last()).map(|(a, b)| (b - a - 1.0).abs()).fold(0.0, f64::max);
    ctx.gate("constant_commutation", commute, 1e-9);
    let centre = ctx.p.domain.anchor();
    let bumped = GridField::from_fn(ctx.p.grid.clone(), |x| {
        u0.at(x) + 0.3 * (-point::dist(x, centre).powi(2) / 0.1).exp()
    });
    let above = solve_cauchy(&ctx.p.model, &ctx.p.field, &bumped, spec.grid.horizon, &fixed)?;
    let order = base.last().iter().zip(above.last()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    ctx.gate("order_preservation", order, 0.0);

    // stationary problem
    let st = stationary(ctx)?;
    if let Some(t) = st.pot.triangle_defect() {
        ctx.gate("triangle_defect", t, 1e-9);
    }
    let u = minimal_solution(&st)?;
    round_trip(ctx, &st, "round_trip_representation", &u);
    viscosity_report(ctx, "representation", &u, st.crit.c);

    // min and convex combinations of subsolutions
    if st.pot.is_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.run.seed);
        let pool = deep_nodes(&ctx.p);
        let mut worst = f64::NEG_INFINITY;
        let mut failed = 0usize;
        let mut allowed = 0.0f64;
        for _ in 0..spec.run.pairs {
            let y1 = pool[rng.gen_range(0..pool.len())];
            let y2 = pool[rng.gen_range(0..pool.len())];
            let shift: f64 = rng.gen_range(-0.5..0.5);
            let lambda: f64 = rng.gen_range(0.0..1.0);
            let col = |y: usize| st.pot.column(y).expect("full matrix");
            let u1 = GridField::new(ctx.p.grid.clone(), col(y1)).map_err(|e| CliError::Numerical(e.to_string()))?;
            let u2 = GridField::new(ctx.p.grid.clone(), col(y2).iter().map(|v| v + shift).collect())
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let tol = default_tolerance(&u1).max(default_tolerance(&u2));
            let slack = spec.run.slack * h;
            match stability_suite(&ctx.p.model, &ctx.p.field, &u1, &u2, st.crit.c, lambda, tol, slack) {
                Ok(r) => {
                    worst = worst.max(r.min_defect.max(r.combination_defect) - r.allowed);
                    allowed = allowed.max(r.allowed);
                    if !r.passed {
                        failed += 1;
                    }
                }
                Err(_) => failed += 1,
            }
        }
        ctx.metric("stability_worst_margin", worst);
        ctx.metric("stability_allowed", allowed);
        ctx.gate("stability_pairs_failed", failed as f64, 0.0);
    }

    // independent value iteration
    let oracle = oracle_value_iteration(spec, spec.run.refine)?;
    let rel = relative_gap(&u, &oracle.field);
    ctx.metric("oracle_c", oracle.c);
    ctx.metric("oracle_sweeps", oracle.iterations as f64);
    ctx.gate("oracle_relative_gap", rel, spec.run.tol_oracle);
    Ok(())
}

/// `sup |u - v| / sup |v|` after shifting both to minimum zero.
pub fn relative_gap(u: &GridField<f64>, v: &GridField<f64>) -> f64 {
    let (mu, mv) = (u.min(), v.min());
    let num = u.values.iter().zip(&v.values).map(|(a, b)| ((a - mu) - (b - mv)).abs()).fold(0.0, f64::max);
    let den = v.values.iter().map(|b| (b - mv).abs()).fold(0.0, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}
