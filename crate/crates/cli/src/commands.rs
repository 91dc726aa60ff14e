//! One function per subcommand. Each fills an [`Output`] that the caller commits.

use std::path::Path;

use lossnet::action::{
    balance_residual, boundary_mesh, minimize_action_with, quasipotential_with, tree_formula, ActionResult, PathGrid,
    PathInit, Quasipotential, QuasipotentialMatrix, QuasipotentialOptions, MONOTONE_SLACK,
};
use lossnet::equilibria::{
    h_curve, phi, phi_grid, solve_equilibria_generic, two_class_h_roots, two_class_rho2, Classification,
    EquilibriumSet, RhoVector, ScanGrid,
};
use lossnet::meanfield::{integrate_ode_with, OdeOptions, Trajectory};
use lossnet::ratefn::lagrangian;
use lossnet::sim::{empirical_invariant, exit_times, simulate, SimConfig};
use lossnet::{Error, ModelParams, Occupancy, StateSpace, TangentVector};
use rayon::prelude::*;

use crate::config::{needs_equilibria, resolve_point, PointSpec, RunConfig, SimulationConfig};
use crate::error::CliError;
use crate::output::{field, num, Csv, Output};
use crate::svg;

pub struct Context {
    pub cfg: RunConfig,
    pub p: ModelParams,
    pub ss: StateSpace,
    pub header: String,
}

impl Context {
    pub fn new(cfg: RunConfig, command: &str) -> Result<Self, CliError> {
        let p = cfg.params()?;
        let ss = cfg.state_space(&p)?;
        let header = format!(
            "lossnet {} config-sha256={} command={command}",
            env!("CARGO_PKG_VERSION"),
            cfg.hash()
        );
        Ok(Self { cfg, p, ss, header })
    }

    fn csv(&self, columns: Vec<String>) -> Csv {
        Csv::new(&self.header, &columns)
    }

    fn labels(&self) -> Vec<String> {
        (0..self.ss.len()).map(|i| self.ss.label(i)).collect()
    }

    fn solve(&self) -> Result<EquilibriumSet, CliError> {
        let mut grid = ScanGrid::default_for(&self.ss, &self.p);
        if let Some(n) = self.cfg.equilibria.points_per_axis {
            if n == 0 {
                return Err(CliError::Config("points_per_axis must be positive".into()));
            }
            grid.counts = vec![n; self.p.classes];
        }
        let set = solve_equilibria_generic(&self.ss, &self.p, &grid).map_err(CliError::in_stage("equilibria"))?;
        for w in &set.warnings {
            log::warn!("{w}");
        }
        if set.is_empty() {
            return Err(CliError::Numerical {
                stage: Some("equilibria"),
                source: Error::NonConvergence {
                    iterations: set.starts,
                    best_value: f64::INFINITY,
                    grad_norm: f64::INFINITY,
                },
            });
        }
        log::info!("{} equilibria from {} starts", set.len(), set.starts);
        Ok(set)
    }

    /// Solves for equilibria only when some point refers to one.
    fn points(&self, specs: &[&PointSpec]) -> Result<Vec<Occupancy>, CliError> {
        let set = if needs_equilibria(specs) {
            Some(self.solve()?)
        } else {
            None
        };
        specs.iter().map(|s| resolve_point(s, &self.ss, set.as_ref())).collect()
    }

    fn simulation(&self) -> Result<&SimulationConfig, CliError> {
        self.cfg
            .simulation
            .as_ref()
            .ok_or_else(|| CliError::Config("missing \"simulation\" block".into()))
    }

    fn sim_config(&self, start: &Occupancy) -> Result<SimConfig, CliError> {
        let s = self.simulation()?;
        let y0 =
            Occupancy::from_counts(&start.nearest_grid_counts(s.n)).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = SimConfig {
            n: s.n,
            seed: self.cfg.seed,
            replica: 0,
            horizon: s.horizon,
            y0,
            record_dt: s.record_dt,
        };
        cfg.validate(&self.ss).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn sim_start(&self) -> Result<Occupancy, CliError> {
        let s = self.simulation()?;
        let spec = s.y0.as_ref().unwrap_or(&self.cfg.exit.center);
        Ok(self.points(&[spec])?.remove(0))
    }
}

fn trajectory_csv(ctx: &Context, traj: &Trajectory) -> Csv {
    let mut cols = vec!["time".to_string()];
    cols.extend(ctx.labels());
    let mut csv = ctx.csv(cols);
    for (t, y) in traj.times.iter().zip(&traj.points) {
        csv.row(std::iter::once(num(*t)).chain(y.as_slice().iter().map(|v| num(*v))));
    }
    csv
}

fn equilibria_csv(ctx: &Context, set: &EquilibriumSet) -> Csv {
    let k = ctx.p.classes;
    let mut cols = vec!["index".to_string()];
    cols.extend((1..=k).map(|c| format!("rho_{c}")));
    cols.extend(["residual", "phi", "g"].map(String::from));
    cols.extend((1..=k).map(|c| format!("eigenvalue_{c}")));
    cols.push("classification".into());
    let mut csv = ctx.csv(cols);
    for (i, e) in set.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(e.rho.as_slice().iter().map(|v| num(*v)));
        row.extend([num(e.residual), num(e.phi), num(e.g)]);
        row.extend(e.eigenvalues.iter().map(|v| num(*v)));
        row.push(e.classification.as_str().to_string());
        csv.row(row);
    }
    csv
}

fn bool_field(b: bool) -> String {
    b.to_string()
}

pub fn equilibria(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let set = ctx.solve()?;
    out.add_csv("equilibria.csv", equilibria_csv(ctx, &set));
    let p = &ctx.p;
    let closed_form = p.classes == 2 && p.size[0] == 1 && p.size[1] == p.capacity;
    if closed_form {
        let n = ctx.cfg.equilibria.h_points;
        if n < 3 {
            return Err(CliError::Config("h_points must be at least 3".into()));
        }
        let curve = h_curve(p, n).map_err(CliError::in_stage("h-curve"))?;
        let roots = two_class_h_roots(p, n).map_err(CliError::in_stage("h-curve"))?;
        let mut csv = ctx.csv(vec!["rho_1".into(), "rho_2".into(), "h".into()]);
        for &(x, h) in &curve {
            let r2 = two_class_rho2(x, p).unwrap_or(f64::NAN);
            csv.row([num(x), num(r2), num(h)]);
        }
        out.add_csv("h_curve.csv", csv);
        out.add("h_curve.svg", svg::h_curve(&curve, &roots, ctx.cfg.equilibria.h_log_y));
    } else {
        log::info!("h-curve needs two classes with sizes (1, C); skipped");
    }
    let grid = ctx.cfg.equilibria.phi_grid.clone();
    let span = |c: usize| {
        let lo = set.iter().map(|e| e.rho[c]).fold(f64::INFINITY, f64::min);
        let hi = set.iter().map(|e| e.rho[c]).fold(0.0, f64::max);
        [0.5 * lo, 1.5 * hi]
    };
    let points = grid.as_ref().map_or(41, |g| g.points);
    if points == 0 {
        return Err(CliError::Config("phi_grid.points must be positive".into()));
    }
    match p.classes {
        1 => {
            let r = grid.as_ref().map_or_else(|| span(0), |g| g.rho1);
            let mut csv = ctx.csv(vec!["rho_1".into(), "phi".into()]);
            for i in 0..points {
                let x = if points == 1 {
                    r[0]
                } else {
                    r[0] + (r[1] - r[0]) * i as f64 / (points - 1) as f64
                };
                let rho = RhoVector::new(vec![x]).map_err(|e| CliError::Config(e.to_string()))?;
                csv.row([
                    num(x),
                    num(phi(&rho, &ctx.ss, p).map_err(CliError::in_stage("phi-grid"))?),
                ]);
            }
            out.add_csv("phi_grid.csv", csv);
        }
        2 => {
            let r1 = grid.as_ref().map_or_else(|| span(0), |g| g.rho1);
            let r2 = grid.as_ref().and_then(|g| g.rho2).unwrap_or_else(|| span(1));
            if r1[0] <= 0.0 || r2[0] <= 0.0 {
                return Err(CliError::Config("phi_grid ranges must be positive".into()));
            }
            let values = phi_grid(&ctx.ss, p, (r1[0], r1[1], points), (r2[0], r2[1], points))
                .map_err(CliError::in_stage("phi-grid"))?;
            let mut csv = ctx.csv(vec!["rho_1".into(), "rho_2".into(), "phi".into()]);
            for (x, y, v) in values {
                csv.row([num(x), num(y), num(v)]);
            }
            out.add_csv("phi_grid.csv", csv);
        }
        _ => log::info!("phi grid is only written for one or two classes"),
    }
    Ok(())
}

pub fn ode(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let o = ctx
        .cfg
        .ode
        .as_ref()
        .ok_or_else(|| CliError::Config("missing \"ode\" block".into()))?;
    let y0 = ctx.points(&[&o.y0])?.remove(0);
    let opts = OdeOptions {
        step: o.step,
        record_every: o.record_every,
    };
    let traj = integrate_ode_with(&y0, o.horizon, opts, &ctx.ss, &ctx.p).map_err(|e| match e {
        Error::InvalidArgument(m) => CliError::Config(m),
        other => CliError::from(other),
    })?;
    out.add_csv("trajectory.csv", trajectory_csv(ctx, &traj));
    Ok(())
}

/// Rows of `2 |Theta|` numbers; `#` lines and a non-numeric first record are skipped.
fn read_pairs(path: &Path, n: usize) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut first = true;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line
            .split(',')
            .map(|f| f.trim().trim_matches('"').parse::<f64>())
            .collect();
        match parsed {
            Ok(v) if v.len() == 2 * n => rows.push((ln + 1, v)),
            Ok(v) => {
                return Err(CliError::Config(format!(
                    "{} line {}: expected {} values, got {}",
                    path.display(),
                    ln + 1,
                    2 * n,
                    v.len()
                )))
            }
            Err(_) if first => {}
            Err(e) => return Err(CliError::Config(format!("{} line {}: {e}", path.display(), ln + 1))),
        }
        first = false;
    }
    Ok(rows)
}

pub fn rate(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let r = ctx
        .cfg
        .rate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing \"rate\" block".into()))?;
    let n = ctx.ss.len();
    let rows = read_pairs(&r.input, n)?;
    let inputs: Vec<(usize, Occupancy, TangentVector)> = rows
        .into_iter()
        .map(|(ln, v)| {
            let bad = |e: Error| CliError::Config(format!("{} line {ln}: {e}", r.input.display()));
            Ok((
                ln,
                Occupancy::new(v[..n].to_vec()).map_err(bad)?,
                TangentVector::new(v[n..].to_vec()).map_err(bad)?,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let evals: Vec<_> = inputs
        .par_iter()
        .map(|(_, y, z)| lagrangian(y, z, &ctx.ss, &ctx.p, r.tol))
        .collect::<Result<_, _>>()
        .map_err(CliError::in_stage("rate"))?;
    let mut csv = ctx.csv(
        ["line", "L", "finite", "iterations", "grad_norm"]
            .map(String::from)
            .to_vec(),
    );
    for ((ln, _, _), e) in inputs.iter().zip(evals) {
        csv.row([
            ln.to_string(),
            num(e.value),
            bool_field(e.finite),
            e.iterations.to_string(),
            num(e.grad_norm),
        ]);
    }
    out.add_csv("rate.csv", csv);
    Ok(())
}

fn init_name(i: PathInit) -> &'static str {
    match i {
        PathInit::Straight => "straight",
        PathInit::OdeArc => "ode-arc",
    }
}

pub fn action(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let a = ctx
        .cfg
        .action
        .as_ref()
        .ok_or_else(|| CliError::Config("missing \"action\" block".into()))?;
    let pts = ctx.points(&[&a.from, &a.to])?;
    let opts = ctx.cfg.quasipotential.options();
    if opts.schedule.is_empty() || opts.schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(CliError::Config(
            "schedule horizons must be nonempty and increasing".into(),
        ));
    }
    let runs: Vec<ActionResult> = opts
        .schedule
        .par_iter()
        .map(|&(t, m)| minimize_action_with(&pts[0], &pts[1], t, m, &ctx.ss, &ctx.p, &opts.action))
        .collect::<Result<_, _>>()
        .map_err(CliError::in_stage("action"))?;
    let best = (0..runs.len())
        .min_by(|&i, &j| runs[i].action.total_cmp(&runs[j].action))
        .unwrap();
    if !runs.windows(2).all(|w| w[1].action <= w[0].action + MONOTONE_SLACK) {
        log::warn!("minimized actions are not monotone in T");
    }
    let mut csv = ctx.csv(
        [
            "horizon",
            "segments",
            "action",
            "converged",
            "iterations",
            "pg_norm",
            "init",
            "selected",
        ]
        .map(String::from)
        .to_vec(),
    );
    for (i, (r, &(t, m))) in runs.iter().zip(&opts.schedule).enumerate() {
        csv.row([
            num(t),
            m.to_string(),
            num(r.action),
            bool_field(r.converged),
            r.iterations.to_string(),
            num(r.pg_norm),
            init_name(r.init).to_string(),
            bool_field(i == best),
        ]);
    }
    out.add_csv("action.csv", csv);
    out.add_csv("action_path.csv", path_csv(ctx, &runs[best].path));
    Ok(())
}

fn path_csv(ctx: &Context, path: &PathGrid) -> Csv {
    let traj = Trajectory {
        times: path.times(),
        points: path.knots.clone(),
    };
    trajectory_csv(ctx, &traj)
}

/// Pairwise quasipotentials with per-run metadata, pairs in row-major order.
/// `(from, to, estimate)` for every ordered pair.
type PairRuns = Vec<(usize, usize, Quasipotential)>;

fn pairwise(
    ctx: &Context,
    points: &[Occupancy],
    opts: &QuasipotentialOptions,
) -> Result<(Vec<Vec<f64>>, PairRuns), CliError> {
    let k = points.len();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .collect();
    let results: Vec<Quasipotential> = pairs
        .par_iter()
        .map(|&(i, j)| quasipotential_with(&points[i], &points[j], &ctx.ss, &ctx.p, opts))
        .collect::<Result<_, _>>()
        .map_err(CliError::in_stage("quasipotential"))?;
    let mut phi = vec![vec![0.0; k]; k];
    let mut meta = Vec::new();
    for (&(i, j), q) in pairs.iter().zip(results) {
        phi[i][j] = q.value.max(0.0);
        meta.push((i, j, q));
    }
    Ok((phi, meta))
}

fn optimizer_csv(ctx: &Context) -> Csv {
    ctx.csv(
        [
            "stage",
            "from",
            "to",
            "horizon",
            "segments",
            "action",
            "converged",
            "iterations",
            "monotone",
        ]
        .map(String::from)
        .to_vec(),
    )
}

fn add_runs(csv: &mut Csv, stage: &str, from: &str, to: &str, q: &Quasipotential) {
    for r in &q.runs {
        csv.row([
            stage.to_string(),
            field(from),
            field(to),
            num(r.horizon),
            r.segments.to_string(),
            num(r.action),
            bool_field(r.converged),
            r.iterations.to_string(),
            bool_field(q.monotone),
        ]);
    }
}

fn phi_csv(ctx: &Context, phi: &[Vec<f64>]) -> Csv {
    let k = phi.len();
    let mut cols = vec!["from".to_string()];
    cols.extend((0..k).map(|j| format!("to_{j}")));
    let mut csv = ctx.csv(cols);
    for (i, row) in phi.iter().enumerate() {
        csv.row(std::iter::once(i.to_string()).chain(row.iter().map(|v| num(*v))));
    }
    csv
}

fn tree_outputs(
    ctx: &Context,
    out: &mut Output,
    phi: &[Vec<f64>],
    kinds: Option<&[Classification]>,
) -> Result<Vec<f64>, CliError> {
    let j = tree_formula(phi).map_err(CliError::in_stage("tree"))?;
    let residual = balance_residual(&j, phi);
    log::info!("balance residual {residual:.3e}");
    out.add_csv("phi_matrix.csv", phi_csv(ctx, phi));
    let mut cols = vec!["index".to_string(), "J".to_string()];
    if kinds.is_some() {
        cols.push("classification".into());
    }
    let mut csv = ctx.csv(cols);
    for (i, v) in j.iter().enumerate() {
        let mut row = vec![i.to_string(), num(*v)];
        if let Some(k) = kinds {
            row.push(k[i].as_str().to_string());
        }
        csv.row(row);
    }
    out.add_csv("J.csv", csv);
    Ok(j)
}

pub fn tree(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let t = ctx.cfg.tree.clone().unwrap_or(crate::config::TreeConfig {
        phi: None,
        points: None,
    });
    if let Some(phi) = t.phi {
        QuasipotentialMatrix::from_values(Vec::new(), phi.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        tree_outputs(ctx, out, &phi, None)?;
        return Ok(());
    }
    let opts = ctx.cfg.quasipotential.options();
    let (points, kinds) = match &t.points {
        Some(specs) => (ctx.points(&specs.iter().collect::<Vec<_>>())?, None),
        None => {
            let set = ctx.solve()?;
            let kinds: Vec<Classification> = set.iter().map(|e| e.classification).collect();
            (set.equilibria.into_iter().map(|e| e.nu).collect(), Some(kinds))
        }
    };
    let (phi, meta) = pairwise(ctx, &points, &opts)?;
    let mut csv = optimizer_csv(ctx);
    for (i, j, q) in &meta {
        add_runs(&mut csv, "quasipotential", &i.to_string(), &j.to_string(), q);
    }
    tree_outputs(ctx, out, &phi, kinds.as_deref())?;
    out.add_csv("optimizer.csv", csv);
    Ok(())
}

pub fn simulate_cmd(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let start = ctx.sim_start()?;
    let cfg = ctx.sim_config(&start)?;
    let traj = simulate(&cfg, &ctx.ss, &ctx.p)?;
    out.add_csv("trajectory.csv", trajectory_csv(ctx, &traj));
    Ok(())
}

pub fn exit_times_cmd(ctx: &Context, out: &mut Output) -> Result<bool, CliError> {
    let s = ctx.simulation()?;
    let center = ctx.points(&[&ctx.cfg.exit.center])?.remove(0);
    let domain = ctx
        .cfg
        .exit
        .domain
        .around(&center)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let start = ctx.sim_start()?;
    let mut cfg = ctx.sim_config(&start)?;
    if let Some(h) = s.exit_horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!("exit_horizon must be > 0, got {h}")));
        }
        cfg.horizon = h;
    }
    if !domain.contains(&cfg.y0, &ctx.ss, &ctx.p) {
        return Err(CliError::Config(
            "the starting grid point lies outside the domain".into(),
        ));
    }
    let outcomes = exit_times(&cfg, &domain, s.replicas, &ctx.ss, &ctx.p)?;
    let mut cols: Vec<String> = ["replica", "time", "censored", "events"].map(String::from).to_vec();
    cols.extend(ctx.labels());
    let mut csv = ctx.csv(cols);
    for (r, o) in outcomes.iter().enumerate() {
        let mut row = vec![r.to_string(), num(o.time), bool_field(o.censored), o.events.to_string()];
        row.extend(o.exit_state.as_slice().iter().map(|v| num(*v)));
        csv.row(row);
    }
    out.add_csv("exit_times.csv", csv);
    Ok(!outcomes.is_empty() && outcomes.iter().all(|o| o.censored))
}

pub fn invariant(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let s = ctx.simulation()?;
    let start = ctx.sim_start()?;
    let cfg = ctx.sim_config(&start)?;
    let hist = empirical_invariant(&cfg, s.burn_in, &ctx.ss, &ctx.p).map_err(|e| match e {
        Error::InvalidArgument(m) => CliError::Config(m),
        other => CliError::from(other),
    })?;
    let mut cols: Vec<String> = ctx.labels().into_iter().map(|l| format!("count{l}")).collect();
    cols.push("mass".into());
    let mut csv = ctx.csv(cols);
    for (cell, mass) in &hist.cells {
        csv.row(cell.iter().map(|c| c.to_string()).chain(std::iter::once(num(*mass))));
    }
    out.add_csv("histogram.csv", csv);
    Ok(())
}

pub fn pipeline(ctx: &Context, out: &mut Output) -> Result<(), CliError> {
    let set = ctx.solve()?;
    out.add_csv("equilibria.csv", equilibria_csv(ctx, &set));
    let opts = ctx.cfg.quasipotential.options();
    let points: Vec<Occupancy> = set.iter().map(|e| e.nu.clone()).collect();
    let kinds: Vec<Classification> = set.iter().map(|e| e.classification).collect();
    let (phi, meta) = pairwise(ctx, &points, &opts)?;
    let mut opt_csv = optimizer_csv(ctx);
    for (i, j, q) in &meta {
        add_runs(&mut opt_csv, "quasipotential", &i.to_string(), &j.to_string(), q);
    }
    tree_outputs(ctx, out, &phi, Some(&kinds))?;

    let exit = &ctx.cfg.exit;
    let mut cols: Vec<String> = ["equilibrium", "U", "mesh_points"].map(String::from).to_vec();
    cols.extend(ctx.labels().into_iter().map(|l| format!("argmin{l}")));
    let mut u_csv = ctx.csv(cols);
    for (i, e) in set
        .iter()
        .enumerate()
        .filter(|(_, e)| e.classification == Classification::LocalMin)
    {
        let domain = exit.domain.around(&e.nu).map_err(|e| CliError::Config(e.to_string()))?;
        let mesh = boundary_mesh(&e.nu, &domain, &ctx.ss, &ctx.p, exit.random_directions, ctx.cfg.seed)
            .map_err(CliError::in_stage("exit"))?;
        if mesh.is_empty() {
            return Err(CliError::Numerical {
                stage: Some("exit"),
                source: Error::InvalidArgument("boundary mesh is empty".into()),
            });
        }
        let qs: Vec<Quasipotential> = mesh
            .par_iter()
            .map(|y| quasipotential_with(&e.nu, y, &ctx.ss, &ctx.p, &opts))
            .collect::<Result<_, _>>()
            .map_err(CliError::in_stage("exit"))?;
        for (m, q) in qs.iter().enumerate() {
            add_runs(&mut opt_csv, "exit", &i.to_string(), &format!("mesh_{m}"), q);
        }
        let best = (0..qs.len())
            .min_by(|&a, &b| qs[a].value.total_cmp(&qs[b].value))
            .unwrap();
        let mut row = vec![i.to_string(), num(qs[best].value), mesh.len().to_string()];
        row.extend(mesh[best].as_slice().iter().map(|v| num(*v)));
        u_csv.row(row);
    }
    out.add_csv("U.csv", u_csv);
    out.add_csv("optimizer.csv", opt_csv);
    Ok(())
}
