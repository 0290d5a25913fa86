//! Figure catalog: each figure solves what it needs, renders a static SVG
//! and writes a CSV sidecar containing every plotted series. An empty
//! checkpoint list in the scenario skips the SVG and keeps the CSV.

use std::path::Path;
use std::time::Instant;

use abatement::game::saddle_point;
use abatement::output::{write_series_csv, RunManifest};
use abatement::plot::{render_figure, Band, LinePlot, Series, Span};
use abatement::scenario::{filter_endogenous, ScenarioConfig, TaxMode};
use abatement::sim::{SimConfig, Trajectory};
use abatement::tax::BenchmarkKind;
use abatement::{Error, RebateSpec, TechnologySpec};
use anyhow::Result;

use crate::commands::{simulate_scenario, solve_scenario};

const SOLID_RED: &str = "#c0392b";
const DASHED_BLUE: &str = "#2e6da4";
const GREY: &str = "#888888";

pub const FIGURE_IDS: &[&str] = &[
    "single_traj",
    "average_inv",
    "optimal_q",
    "optimal_I",
    "Istar",
    "saddle",
    "Iaverage_2tech_uncertainty",
];

pub fn run_figure(cfg: &ScenarioConfig, out: &Path, figure_id: &str) -> Result<()> {
    let start = Instant::now();
    let (panels, columns) = match figure_id {
        "single_traj" => single_trajectory(cfg)?,
        "average_inv" => average_investment(cfg)?,
        "optimal_q" => rebate_trajectory(cfg, TrajField::Output)?,
        "optimal_I" => rebate_trajectory(cfg, TrajField::Investment)?,
        "Istar" => rebate_trajectory(cfg, TrajField::Investment)?,
        "saddle" => saddle_profiles(cfg)?,
        "Iaverage_2tech_uncertainty" => uncertainty_average(cfg)?,
        other => {
            return Err(Error::validation(
                "figure_id",
                format!(
                    "unknown figure `{other}`; available: {}",
                    FIGURE_IDS.join(", ")
                ),
            )
            .into());
        }
    };

    let refs: Vec<(&str, &[f64])> = columns
        .iter()
        .map(|(name, values)| (name.as_str(), values.as_slice()))
        .collect();
    let csv_path = out.join(format!("{figure_id}.csv"));
    write_series_csv(&csv_path, &refs)?;
    let mut written = format!("{}", csv_path.display());

    if cfg.sim.checkpoints.is_empty() {
        println!("empty checkpoint list: skipping the SVG, wrote {written}");
    } else {
        let svg_path = out.join(format!("{figure_id}.svg"));
        std::fs::write(&svg_path, render_figure(&panels))?;
        written = format!("{written}, {}", svg_path.display());
        println!("wrote {written}");
    }

    let mut manifest = RunManifest::new(
        &format!("figure {figure_id}"),
        serde_json::to_value(cfg).expect("config serializes"),
        cfg.sim.seed,
    );
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("{figure_id}.manifest.json")))?;
    Ok(())
}

/// Grey spans over the periods a retained path spends in the high-tax
/// regime.
fn regime_spans(times: &[f64], tax: &[f64]) -> Vec<Span> {
    let (lo, hi) = tax
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo < 1e-12 {
        return Vec::new();
    }
    let cut = 0.5 * (lo + hi);
    let mut spans = Vec::new();
    let mut open: Option<f64> = None;
    for (k, &tau) in tax.iter().enumerate() {
        let high = tau > cut;
        match (high, open) {
            (true, None) => open = Some(times[k]),
            (false, Some(from)) => {
                spans.push(Span { from, to: times[k] });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(from) = open {
        spans.push(Span {
            from,
            to: *times.last().unwrap(),
        });
    }
    spans
}

fn single_path(cfg: &ScenarioConfig) -> Result<(Vec<f64>, Trajectory)> {
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let sim = SimConfig {
        n_paths: 1,
        retain_paths: 1,
        ..cfg.sim.clone()
    };
    let ens = simulate_scenario(cfg, &solved, &sim)?;
    let traj = ens.retained.into_iter().next().expect("one retained path");
    Ok((ens.times, traj))
}

/// One investment path per transaction-cost level, same tax trajectory.
fn single_trajectory(cfg: &ScenarioConfig) -> Result<(Vec<LinePlot>, Columns)> {
    require_chain(cfg)?;
    let mut plot = LinePlot::new(
        "Cumulative investment along one tax path",
        "time (years)",
        "investment level",
    );
    let mut columns: Columns = Vec::new();
    let mut tax_series: Option<(Vec<f64>, Vec<f64>)> = None;
    for (kappa, color, dashed) in [(0.2, SOLID_RED, false), (0.5, DASHED_BLUE, true)] {
        let mut variant = cfg.clone();
        variant.model.econ.transaction_cost = kappa;
        let (times, traj) = single_path(&variant)?;
        if tax_series.is_none() {
            plot.spans = regime_spans(&times, &traj.tax);
            columns.push(("t".into(), times.clone()));
            tax_series = Some((times, traj.tax.clone()));
        }
        plot.series.push(Series::new(
            &format!("kappa = {kappa}"),
            tax_series.as_ref().unwrap().0.clone(),
            traj.investment.clone(),
            color,
            dashed,
        ));
        columns.push((format!("x_kappa_{kappa}"), traj.investment));
    }
    columns.push(("tau".into(), tax_series.unwrap().1));
    Ok((vec![plot], columns))
}

/// Mean investment with the 5%/95% band against the deterministic
/// benchmark.
fn average_investment(cfg: &ScenarioConfig) -> Result<(Vec<LinePlot>, Columns)> {
    let TaxMode::Chain(chain) = &cfg.tax else {
        return Err(chain_needed());
    };
    let grid = cfg.resolved_grid();
    let solved = solve_scenario(cfg, &grid)?;
    let ens = simulate_scenario(cfg, &solved, &cfg.sim)?;
    let mean = ens.mean_investment();
    let q05 = ens.quantile_investment(0.05);
    let q95 = ens.quantile_investment(0.95);

    let kind = if chain.initial_state == 0 {
        BenchmarkKind::LinearIncreasing
    } else {
        BenchmarkKind::Constant
    };
    let schedule = chain.benchmark(cfg.model.econ.horizon, kind);
    let mut bench_cfg = cfg.clone();
    bench_cfg.tax = TaxMode::Benchmark(schedule);
    let bench_solved = solve_scenario(&bench_cfg, &grid)?;
    let bench_ens = simulate_scenario(&bench_cfg, &bench_solved, &cfg.sim)?;
    let bench_mean = bench_ens.mean_investment();

    let mut plot = LinePlot::new(
        "Average investment: random tax vs deterministic benchmark",
        "time (years)",
        "investment level",
    );
    plot.bands.push(Band {
        x: ens.times.clone(),
        lo: q05.clone(),
        hi: q95.clone(),
        fill: GREY.into(),
    });
    plot.series.push(Series::new(
        "mean (random tax)",
        ens.times.clone(),
        mean.clone(),
        SOLID_RED,
        false,
    ));
    plot.series.push(Series::new(
        "benchmark",
        ens.times.clone(),
        bench_mean.clone(),
        DASHED_BLUE,
        true,
    ));
    let columns = vec![
        ("t".to_string(), ens.times.clone()),
        ("mean_x".to_string(), mean),
        ("q05".to_string(), q05),
        ("q95".to_string(), q95),
        ("benchmark_mean".to_string(), bench_mean),
    ];
    Ok((vec![plot], columns))
}

enum TrajField {
    Output,
    Investment,
}

/// Rebate vs no-rebate single trajectories of the output or the
/// investment, on a shared price/tax path.
fn rebate_trajectory(cfg: &ScenarioConfig, field: TrajField) -> Result<(Vec<LinePlot>, Columns)> {
    let TaxMode::Chain(chain) = &cfg.tax else {
        return Err(chain_needed());
    };
    // the endogenous-output experiment: lift a fixed-output filter scenario
    // into its endogenous variant with the mean-reverting price
    let base = if matches!(cfg.model.tech, TechnologySpec::Filter(_))
        && cfg.model.econ.fixed_output.is_some()
    {
        let mut endog = filter_endogenous(chain.clone(), false);
        endog.sim = cfg.sim.clone();
        endog.name = cfg.name.clone();
        endog
    } else {
        cfg.clone()
    };

    let (title, y_label) = match field {
        TrajField::Output => ("Optimal output along one price/tax path", "output"),
        TrajField::Investment => (
            "Optimal investment along one price/tax path",
            "investment level",
        ),
    };
    let mut plot = LinePlot::new(title, "time (years)", y_label);
    let mut columns: Columns = Vec::new();
    let mut shared: Option<(Vec<f64>, Vec<f64>)> = None;
    for (rebate, label, color, dashed) in [
        (true, "rebate", SOLID_RED, false),
        (false, "no rebate", DASHED_BLUE, true),
    ] {
        let mut variant = base.clone();
        variant.model.rebate = if rebate {
            match variant.model.tech {
                TechnologySpec::Filter(_) => RebateSpec::FilterHalf,
                TechnologySpec::TwoTech(_) => RebateSpec::TwoTechAlpha { alpha: 0.5 },
            }
        } else {
            RebateSpec::NoRebate
        };
        let (times, traj) = single_path(&variant)?;
        let mut series = match field {
            TrajField::Output => traj.output.clone(),
            TrajField::Investment => traj.investment.clone(),
        };
        // the output series has one entry per step; align to step times
        if series.len() + 1 == times.len() {
            series.push(*series.last().unwrap());
        }
        if shared.is_none() {
            plot.spans = regime_spans(&times, &traj.tax);
            columns.push(("t".into(), times.clone()));
            shared = Some((times, traj.tax.clone()));
        }
        plot.series.push(Series::new(
            label,
            shared.as_ref().unwrap().0.clone(),
            series.clone(),
            color,
            dashed,
        ));
        columns.push((label.replace(' ', "_"), series));
    }
    columns.push(("tau".into(), shared.unwrap().1));
    Ok((vec![plot], columns))
}

/// Saddle-point profiles over the investment level, with and without
/// rebate.
fn saddle_profiles(cfg: &ScenarioConfig) -> Result<(Vec<LinePlot>, Columns)> {
    let TaxMode::Uncertainty(unc) = &cfg.tax else {
        return Err(Error::validation(
            "tax",
            "the saddle figure needs an `uncertainty` tax section",
        )
        .into());
    };
    let xs: Vec<f64> = (0..=300).map(|i| 60.0 * i as f64 / 300.0).collect();
    let mut q_panel = LinePlot::new("Equilibrium output q(x)", "investment level", "output");
    let mut tau_panel = LinePlot::new("Worst-case tax tau(x)", "investment level", "tax rate");
    let mut columns: Columns = vec![("x".into(), xs.clone())];
    for (alpha, label, color, dashed) in [
        (0.0, "no rebate (alpha=0)", DASHED_BLUE, true),
        (0.5, "rebate (alpha=0.5)", SOLID_RED, false),
    ] {
        let mut model = cfg.model.clone();
        model.rebate = if alpha > 0.0 {
            RebateSpec::TwoTechAlpha { alpha }
        } else {
            RebateSpec::NoRebate
        };
        let mut q_hat = Vec::with_capacity(xs.len());
        let mut tau_hat = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (q, tau, _) = saddle_point(&model, unc, 0.0, x, 0.0)?;
            q_hat.push(q);
            tau_hat.push(tau);
        }
        q_panel
            .series
            .push(Series::new(label, xs.clone(), q_hat.clone(), color, dashed));
        tau_panel.series.push(Series::new(
            label,
            xs.clone(),
            tau_hat.clone(),
            color,
            dashed,
        ));
        let tag = if alpha > 0.0 { "rebate" } else { "norebate" };
        columns.push((format!("q_hat_{tag}"), q_hat));
        columns.push((format!("tau_hat_{tag}"), tau_hat));
    }
    Ok((vec![q_panel, tau_panel], columns))
}

/// Average equilibrium investment under high and low uncertainty, with and
/// without rebate.
fn uncertainty_average(cfg: &ScenarioConfig) -> Result<(Vec<LinePlot>, Columns)> {
    let TaxMode::Uncertainty(base_unc) = &cfg.tax else {
        return Err(
            Error::validation("tax", "this figure needs an `uncertainty` tax section").into(),
        );
    };
    let mut panels = Vec::new();
    let mut columns: Columns = Vec::new();
    for (panel_idx, nu1) in [1.0, 20.0].into_iter().enumerate() {
        let mut plot = LinePlot::new(
            &format!("Average investment, penalty nu1 = {nu1}"),
            "time (years)",
            "investment level",
        );
        for (alpha, label, color, dashed) in [
            (0.0, "no rebate", DASHED_BLUE, true),
            (0.5, "rebate", SOLID_RED, false),
        ] {
            let mut variant = cfg.clone();
            let mut unc = base_unc.clone();
            unc.penalty = nu1;
            variant.tax = TaxMode::Uncertainty(unc);
            variant.model.rebate = if alpha > 0.0 {
                RebateSpec::TwoTechAlpha { alpha }
            } else {
                RebateSpec::NoRebate
            };
            let grid = variant.resolved_grid();
            let solved = solve_scenario(&variant, &grid)?;
            let ens = simulate_scenario(&variant, &solved, &variant.sim)?;
            let mean = ens.mean_investment();
            if panel_idx == 0 && alpha == 0.0 {
                columns.push(("t".into(), ens.times.clone()));
            }
            plot.series.push(Series::new(
                label,
                ens.times.clone(),
                mean.clone(),
                color,
                dashed,
            ));
            columns.push((format!("mean_x_nu{nu1}_alpha{alpha}"), mean));
        }
        panels.push(plot);
    }
    Ok((panels, columns))
}

type Columns = Vec<(String, Vec<f64>)>;

fn require_chain(cfg: &ScenarioConfig) -> Result<()> {
    match &cfg.tax {
        TaxMode::Chain(_) => Ok(()),
        _ => Err(chain_needed()),
    }
}

fn chain_needed() -> anyhow::Error {
    Error::validation("tax", "this figure needs a `chain` tax section").into()
}
