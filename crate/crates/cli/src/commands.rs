use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use abatement::game::{solve_isaacs, GameSolveResult, UncertaintySpec};
use abatement::hjb::{solve_benchmark, solve_hjb, SolveResult};
use abatement::output::{write_grid_binary, write_policy_csv, write_series_csv, RunManifest};
use abatement::scenario::{preset, preset_names, ScenarioConfig, TaxMode};
use abatement::sim::{
    simulate_paths, statistics, CheckpointStats, Metric, PathEnsemble, PolicyRef, TaxDriver,
};
use abatement::tax::{BenchmarkKind, BenchmarkSpec, TaxChain};
use abatement::{Error, GridSpec, ModelSpec, RebateSpec, TechnologySpec};
use anyhow::Result;

use crate::figures;
use crate::{Cli, Command, TableId};

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.sim.n_paths = paths;
    }
    cfg.validate()?;
    let out = resolve_out_dir(cli, &cfg)?;

    match &cli.command {
        Command::Solve => solve_cmd(&cfg, &out),
        Command::Simulate { retain, thin } => simulate_cmd(&cfg, &out, *retain, *thin),
        Command::Game => game_cmd(&cfg, &out),
        Command::Table { table_id } => table_cmd(&cfg, &out, *table_id),
        Command::Figure { figure_id } => figures::run_figure(&cfg, &out, figure_id),
        Command::Benchmark => benchmark_cmd(&cfg, &out),
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::validation("config", format!("cannot read {}: {e}", path.display()))
        })?;
        return Ok(ScenarioConfig::from_json(&text)?);
    }
    if let Some(name) = &cli.preset {
        return preset(name).ok_or_else(|| {
            Error::validation(
                "preset",
                format!(
                    "unknown preset `{name}`; available: {}",
                    preset_names().join(", ")
                ),
            )
            .into()
        });
    }
    Err(Error::validation("config", "pass --config FILE or --preset NAME").into())
}

fn resolve_out_dir(cli: &Cli, cfg: &ScenarioConfig) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.outputs.directory.clone())
        .or_else(|| std::env::var_os("ABATEMENT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn base_name(cfg: &ScenarioConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| "scenario".to_string())
}

/// Solve dispatched on the scenario's tax mode.
pub enum Solved {
    Chain {
        result: SolveResult,
        chain: TaxChain,
    },
    Schedule {
        result: SolveResult,
        schedule: BenchmarkSpec,
    },
    Game {
        result: GameSolveResult,
        unc: UncertaintySpec,
    },
}

impl Solved {
    pub fn result(
        &self,
    ) -> (
        &abatement::ValueGrid,
        &abatement::PolicyGrid,
        &abatement::LipschitzBudget,
    ) {
        match self {
            Solved::Chain { result, .. } | Solved::Schedule { result, .. } => {
                (&result.value, &result.policy, &result.budget)
            }
            Solved::Game { result, .. } => (&result.value, &result.policy, &result.budget),
        }
    }

    fn initial_state(&self) -> usize {
        match self {
            Solved::Chain { chain, .. } => chain.initial_state,
            _ => 0,
        }
    }
}

pub fn solve_scenario(cfg: &ScenarioConfig, grid: &GridSpec) -> Result<Solved> {
    Ok(match &cfg.tax {
        TaxMode::Chain(chain) => Solved::Chain {
            result: solve_hjb(&cfg.model, chain, grid)?,
            chain: chain.clone(),
        },
        TaxMode::Benchmark(schedule) => Solved::Schedule {
            result: solve_benchmark(&cfg.model, schedule, grid)?,
            schedule: schedule.clone(),
        },
        TaxMode::Uncertainty(unc) => Solved::Game {
            result: solve_isaacs(&cfg.model, unc, grid)?,
            unc: unc.clone(),
        },
    })
}

pub fn simulate_scenario(
    cfg: &ScenarioConfig,
    solved: &Solved,
    sim: &abatement::sim::SimConfig,
) -> Result<PathEnsemble> {
    let (value, policy, _) = solved.result();
    let policy_ref = PolicyRef::Grid { value, policy };
    let ens = match solved {
        Solved::Chain { chain, .. } => {
            simulate_paths(&cfg.model, policy_ref, TaxDriver::Chain(chain), sim)?
        }
        Solved::Schedule { schedule, .. } => {
            simulate_paths(&cfg.model, policy_ref, TaxDriver::Schedule(schedule), sim)?
        }
        Solved::Game { unc, .. } => {
            simulate_paths(&cfg.model, policy_ref, TaxDriver::Game(unc), sim)?
        }
    };
    Ok(ens)
}

fn manifest_for(cfg: &ScenarioConfig, command: &str, solved: Option<&Solved>) -> RunManifest {
    let mut manifest = RunManifest::new(
        command,
        serde_json::to_value(cfg).expect("config serializes"),
        cfg.sim.seed,
    );
    if let Some(s) = solved {
        let (_, _, budget) = s.result();
        manifest.profit_lipschitz = Some(budget.profit_lipschitz);
        manifest.value_lipschitz = Some(budget.value_lipschitz);
        manifest.control_cap = Some(budget.control_cap);
        if let Solved::Schedule { schedule, .. } = s {
            match schedule {
                BenchmarkSpec::LinearIncreasing { slope } => {
                    manifest.benchmark_slope = Some(*slope)
                }
                BenchmarkSpec::Constant { level } => manifest.benchmark_level = Some(*level),
            }
        }
    }
    manifest
}

/// Relative change of the initial value under a mesh coarsening; a cheap
/// convergence indicator recorded in every solve manifest.
fn convergence_indicator(cfg: &ScenarioConfig, grid: &GridSpec, solved: &Solved) -> Result<f64> {
    let mut coarse = grid.clone();
    coarse.n_x = (grid.n_x / 2).max(11) | 1;
    coarse.n_t = (grid.n_t / 2).max(10);
    if let Some(axis) = coarse.y_axis.as_mut() {
        axis.n_y = (axis.n_y / 2).max(5) | 1;
    }
    let coarse_solved = solve_scenario(cfg, &coarse)?;
    let x0 = cfg.model.econ.initial_investment;
    let y0 = cfg.model.price.initial_log().unwrap_or(0.0);
    let state = solved.initial_state();
    let (value, _, _) = solved.result();
    let (coarse_value, _, _) = coarse_solved.result();
    let v = value.sample_value(0.0, x0, y0, state);
    let vc = coarse_value.sample_value(0.0, x0, y0, state);
    Ok((v - vc).abs() / v.abs().max(1e-12))
}

fn solve_cmd(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let base = base_name(cfg);
    let (value, policy, budget) = solved.result();

    write_grid_binary(&out.join(format!("{base}.grid.bin")), value, policy)?;
    let stride = (value.times.len() / 26).max(1);
    write_policy_csv(
        &out.join(format!("{base}.policy.csv")),
        value,
        policy,
        stride,
    )?;

    let mut manifest = manifest_for(cfg, "solve", Some(&solved));
    manifest.grid_convergence = Some(convergence_indicator(cfg, &grid, &solved)?);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{base}.manifest.json")))?;

    let x0 = cfg.model.econ.initial_investment;
    let y0 = cfg.model.price.initial_log().unwrap_or(0.0);
    println!(
        "solved {base}: V(0, x0) = {:.4}, L_V = {:.4}, control cap = {:.4}, convergence indicator = {:.2e}",
        value.sample_value(0.0, x0, y0, solved.initial_state()),
        budget.value_lipschitz,
        budget.control_cap,
        manifest.grid_convergence.unwrap()
    );
    println!(
        "wrote {base}.grid.bin, {base}.policy.csv, {base}.manifest.json in {}",
        out.display()
    );
    Ok(())
}

fn simulate_cmd(cfg: &ScenarioConfig, out: &Path, retain: usize, thin: usize) -> Result<()> {
    let start = Instant::now();
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let mut sim = cfg.sim.clone();
    sim.retain_paths = retain.max(sim.retain_paths);
    let ens = simulate_scenario(cfg, &solved, &sim)?;
    let base = base_name(cfg);

    write_ensemble_csv(&out.join(format!("{base}.ensemble.csv")), &ens, thin.max(1))?;
    for (metric, label) in [
        (Metric::Emissions, "emissions"),
        (Metric::Investment, "investment"),
    ] {
        let stats = statistics(&ens, metric);
        write_stats_csv(
            &out.join(format!("{base}.stats-{label}.csv")),
            &ens.checkpoints,
            &[("all".to_string(), stats)],
        )?;
    }

    let (j, se) = ens.policy_evaluation();
    let (value, _, _) = solved.result();
    let v0 = value.sample_value(
        0.0,
        cfg.model.econ.initial_investment,
        cfg.model.price.initial_log().unwrap_or(0.0),
        solved.initial_state(),
    );
    let mut manifest = manifest_for(cfg, "simulate", Some(&solved));
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{base}.manifest.json")))?;
    println!(
        "simulated {} paths: J = {j:.4} +- {se:.4} (solver V0 = {v0:.4}); clamp events: {}",
        ens.n_paths(),
        ens.clamp_events
    );
    println!(
        "wrote {base}.ensemble.csv and stats CSVs in {}",
        out.display()
    );
    Ok(())
}

fn game_cmd(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let TaxMode::Uncertainty(_) = &cfg.tax else {
        return Err(Error::validation(
            "tax",
            "the game command needs an `uncertainty` tax section",
        )
        .into());
    };
    let start = Instant::now();
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let base = base_name(cfg);
    let Solved::Game { result, .. } = &solved else {
        unreachable!()
    };

    // saddle field CSV: x, y, q_hat, tau_hat, G
    let field = &result.saddle;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut qs = Vec::new();
    let mut taus = Vec::new();
    let mut gs = Vec::new();
    for (k, &y) in field.y.iter().enumerate() {
        for (j, &x) in field.x.iter().enumerate() {
            let idx = k * field.x.len() + j;
            xs.push(x);
            ys.push(y);
            qs.push(field.output[idx]);
            taus.push(field.tax[idx]);
            gs.push(field.value[idx]);
        }
    }
    write_series_csv(
        &out.join(format!("{base}.saddle.csv")),
        &[
            ("x", xs.as_slice()),
            ("y", ys.as_slice()),
            ("q_hat", qs.as_slice()),
            ("tau_hat", taus.as_slice()),
            ("g", gs.as_slice()),
        ],
    )?;

    let (value, policy, budget) = solved.result();
    write_grid_binary(&out.join(format!("{base}.grid.bin")), value, policy)?;
    let stride = (value.times.len() / 26).max(1);
    write_policy_csv(
        &out.join(format!("{base}.policy.csv")),
        value,
        policy,
        stride,
    )?;
    let mut manifest = manifest_for(cfg, "game", Some(&solved));
    manifest.grid_convergence = Some(convergence_indicator(cfg, &grid, &solved)?);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{base}.manifest.json")))?;
    println!(
        "solved the game: u(0, x0) = {:.4}, control cap = {:.4}",
        value.sample_value(0.0, cfg.model.econ.initial_investment, 0.0, 0),
        budget.control_cap
    );
    println!(
        "wrote {base}.saddle.csv, {base}.grid.bin, {base}.policy.csv in {}",
        out.display()
    );
    Ok(())
}

/// Rebate variant matching the scenario's technology.
fn rebate_for(model: &ModelSpec) -> RebateSpec {
    match model.tech {
        TechnologySpec::Filter(_) => RebateSpec::FilterHalf,
        TechnologySpec::TwoTech(_) => RebateSpec::TwoTechAlpha { alpha: 0.5 },
    }
}

fn matched_benchmark(chain: &TaxChain, horizon: f64) -> BenchmarkSpec {
    let kind = if chain.initial_state == 0 {
        BenchmarkKind::LinearIncreasing
    } else {
        BenchmarkKind::Constant
    };
    chain.benchmark(horizon, kind)
}

fn table_cmd(cfg: &ScenarioConfig, out: &Path, table_id: TableId) -> Result<()> {
    let start = Instant::now();
    let base = base_name(cfg);
    let label = match table_id {
        TableId::Emissions => "emissions",
        TableId::Investment => "investment",
    };
    let rows = match (&cfg.tax, table_id) {
        (TaxMode::Chain(chain), TableId::Emissions) => {
            // rows per transaction-cost variant, fixed-output scenario
            let mut rows = Vec::new();
            for kappa in [0.2, 0.5] {
                let mut variant = cfg.clone();
                variant.model.econ.transaction_cost = kappa;
                rows.push((
                    format!("kappa={kappa}"),
                    table_row(&variant, chain, Metric::Emissions)?,
                ));
            }
            rows
        }
        (TaxMode::Chain(chain), TableId::Investment) => {
            // rows per rebate variant
            let mut rows = Vec::new();
            for (name, rebate) in [
                ("rebate", Some(rebate_for(&cfg.model))),
                ("no_rebate", None),
            ] {
                let mut variant = cfg.clone();
                variant.model.rebate = rebate.unwrap_or(RebateSpec::NoRebate);
                rows.push((
                    name.to_string(),
                    table_row(&variant, chain, Metric::Investment)?,
                ));
            }
            rows
        }
        (TaxMode::Uncertainty(_), TableId::Investment) => {
            let mut rows = Vec::new();
            for (name, rebate) in [
                ("rebate", Some(rebate_for(&cfg.model))),
                ("no_rebate", None),
            ] {
                let mut variant = cfg.clone();
                variant.model.rebate = rebate.unwrap_or(RebateSpec::NoRebate);
                let grid = variant.resolved_grid();
                let solved = solve_scenario(&variant, &grid)?;
                let ens = simulate_scenario(&variant, &solved, &variant.sim)?;
                rows.push((name.to_string(), statistics(&ens, Metric::Investment)));
            }
            rows
        }
        _ => {
            return Err(Error::validation(
                "tax",
                "this table needs a chain scenario (or an uncertainty scenario for the investment table)",
            )
            .into());
        }
    };

    let path = out.join(format!("{base}.table-{label}.csv"));
    write_stats_csv(&path, &cfg.sim.checkpoints, &rows)?;
    let mut manifest = manifest_for(cfg, &format!("table {label}"), None);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{base}.table-{label}.manifest.json")))?;
    println!("wrote {}", path.display());
    for (name, stats) in &rows {
        let cells: Vec<String> = stats
            .iter()
            .map(|s| {
                format!(
                    "t{:.0}: [{:.2} {:.2} {:.2}] bench {}",
                    s.checkpoint,
                    s.q05,
                    s.mean,
                    s.q95,
                    s.benchmark.map_or("-".to_string(), |b| format!("{b:.2}"))
                )
            })
            .collect();
        println!("  {name}: {}", cells.join(" | "));
    }
    Ok(())
}

/// Solves and simulates one table row plus its matched benchmark column.
fn table_row(
    cfg: &ScenarioConfig,
    chain: &TaxChain,
    metric: Metric,
) -> Result<Vec<CheckpointStats>> {
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let ens = simulate_scenario(cfg, &solved, &cfg.sim)?;
    let mut stats = statistics(&ens, metric);

    let schedule = matched_benchmark(chain, cfg.model.econ.horizon);
    let bench_result = solve_benchmark(&cfg.model, &schedule, &grid)?;
    let bench_ens = simulate_paths(
        &cfg.model,
        PolicyRef::Grid {
            value: &bench_result.value,
            policy: &bench_result.policy,
        },
        TaxDriver::Schedule(&schedule),
        &cfg.sim,
    )?;
    abatement::sim::attach_benchmark(&mut stats, &bench_ens, metric);
    Ok(stats)
}

fn benchmark_cmd(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let TaxMode::Chain(chain) = &cfg.tax else {
        return Err(
            Error::validation("tax", "the benchmark command needs a `chain` tax section").into(),
        );
    };
    let start = Instant::now();
    let horizon = cfg.model.econ.horizon;
    let expected = chain.expected_tax_integral(horizon);
    let BenchmarkSpec::LinearIncreasing { slope } =
        chain.benchmark(horizon, BenchmarkKind::LinearIncreasing)
    else {
        unreachable!()
    };
    let BenchmarkSpec::Constant { level } = chain.benchmark(horizon, BenchmarkKind::Constant)
    else {
        unreachable!()
    };
    println!("expected cumulative tax E[int tau dt] = {expected:.6}");
    println!("linear benchmark slope b = {slope:.6}");
    println!("constant benchmark level tau_bar = {level:.6}");

    let base = base_name(cfg);
    let mut manifest = manifest_for(cfg, "benchmark", None);
    manifest.benchmark_slope = Some(slope);
    manifest.benchmark_level = Some(level);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{base}.benchmark.json")))?;
    println!("wrote {base}.benchmark.json in {}", out.display());
    Ok(())
}

/// Stats CSV in the reference table layout: one row per variant,
/// `q05/mean/q95/benchmark` blocks per checkpoint.
pub fn write_stats_csv(
    path: &Path,
    checkpoints: &[f64],
    rows: &[(String, Vec<CheckpointStats>)],
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["variant".to_string()];
    for c in checkpoints {
        let tag = format!("t{}", trim_float(*c));
        for col in ["q05", "mean", "q95", "benchmark"] {
            header.push(format!("{tag}_{col}"));
        }
    }
    writeln!(w, "{}", header.join(",")).map_err(Error::from)?;
    for (name, stats) in rows {
        let mut cells = vec![name.clone()];
        for s in stats {
            cells.push(s.q05.to_string());
            cells.push(s.mean.to_string());
            cells.push(s.q95.to_string());
            cells.push(s.benchmark.map_or(String::new(), |b| b.to_string()));
        }
        writeln!(w, "{}", cells.join(",")).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn trim_float(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

/// Ensemble CSV: retained trajectories at a step thinning.
pub fn write_ensemble_csv(path: &Path, ens: &PathEnsemble, thin: usize) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "path_id,t,x,y,tau,gamma,q,cum_emissions,cum_profit").map_err(Error::from)?;
    for traj in &ens.retained {
        let n = ens.times.len();
        for k in (0..n).step_by(thin) {
            let rate_idx = k.min(traj.invest_rate.len().saturating_sub(1));
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                traj.path_id,
                ens.times[k],
                traj.investment[k],
                traj.factor[k],
                traj.tax[k],
                traj.invest_rate.get(rate_idx).copied().unwrap_or(0.0),
                traj.output.get(rate_idx).copied().unwrap_or(0.0),
                traj.cum_emissions[k],
                traj.cum_profit[k]
            )
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}
