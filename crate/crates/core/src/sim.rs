//! Euler-Maruyama Monte Carlo engine for policy evaluation.
//!
//! Simulates the investment (and, when present, the log-price factor)
//! under a feedback policy, with tax regimes advanced by exact chain
//! simulation superposed on the Euler grid: a step is split at every jump
//! time and the policy is re-read after the switch. Cumulative physical
//! emissions and the discounted objective are accumulated along each path.
//!
//! Every path derives an independent counter-based random stream from
//! `(seed, path index)`, so ensembles are bit-identical regardless of how
//! the paths are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::UncertaintySpec;
use crate::grid::{PolicyGrid, ValueGrid};
use crate::model::{ModelSpec, PriceSpec};
use crate::output::model_hash;
use crate::tax::{BenchmarkSpec, TaxChain};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Euler steps over `[0, T]`.
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Evaluation dates for the quantile tables.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    /// Retain full trajectories for the first `retain_paths` paths.
    #[serde(default)]
    pub retain_paths: usize,
}

fn default_paths() -> usize {
    10_000
}
fn default_steps() -> usize {
    150
}
fn default_seed() -> u64 {
    1
}
fn default_checkpoints() -> Vec<f64> {
    vec![10.0, 15.0]
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: default_paths(),
            n_steps: default_steps(),
            seed: default_seed(),
            checkpoints: default_checkpoints(),
            retain_paths: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, path: &str, horizon: f64) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::validation(format!("{path}.n_paths"), "must be >= 1"));
        }
        if self.n_steps < 1 {
            return Err(Error::validation(format!("{path}.n_steps"), "must be >= 1"));
        }
        for (i, &c) in self.checkpoints.iter().enumerate() {
            if !(c >= 0.0 && c <= horizon + 1e-9) {
                return Err(Error::validation(
                    format!("{path}.checkpoints[{i}]"),
                    format!("must lie in [0, {horizon}]"),
                ));
            }
        }
        Ok(())
    }
}

/// Feedback policy to simulate.
#[derive(Clone, Copy)]
pub enum PolicyRef<'a> {
    /// Interpolate the solved grids.
    Grid {
        value: &'a ValueGrid,
        policy: &'a PolicyGrid,
    },
    /// Constant investment rate with instantaneously optimal output.
    ConstantRate(f64),
}

/// Source of the tax path.
#[derive(Clone, Copy)]
pub enum TaxDriver<'a> {
    /// Exact Markov-chain simulation.
    Chain(&'a TaxChain),
    /// Deterministic benchmark schedule.
    Schedule(&'a BenchmarkSpec),
    /// Worst-case tax frozen into the game policy; the objective includes
    /// the adversary's deviation penalty.
    Game(&'a UncertaintySpec),
}

/// Full series of one retained path, at the Euler step times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub path_id: usize,
    pub investment: Vec<f64>,
    pub factor: Vec<f64>,
    pub tax: Vec<f64>,
    pub invest_rate: Vec<f64>,
    pub output: Vec<f64>,
    pub cum_emissions: Vec<f64>,
    pub cum_profit: Vec<f64>,
}

/// Investment rate around a path's first regime switch.
#[derive(Debug, Clone, Copy)]
pub struct FirstJump {
    pub step: usize,
    pub rate_before: f64,
    pub rate_after: f64,
}

/// Simulated ensemble with per-checkpoint metrics and per-step investment
/// series for the figures.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub checkpoints: Vec<f64>,
    /// `[checkpoint][path]`
    pub checkpoint_investment: Vec<Vec<f64>>,
    /// Cumulative physical emissions up to the checkpoint.
    pub checkpoint_emissions: Vec<Vec<f64>>,
    /// Instantaneous emission rate at the checkpoint; this is what the
    /// "emissions after t years" tables report.
    pub checkpoint_emission_rate: Vec<Vec<f64>>,
    pub checkpoint_profit: Vec<Vec<f64>>,
    /// Discounted objective per path, including the terminal residual value.
    pub objective: Vec<f64>,
    /// `[path][step]` investment level at the step times.
    pub investment: Vec<Vec<f64>>,
    /// `[path][step]` investment rate at the left endpoint of each step.
    pub invest_rate: Vec<Vec<f64>>,
    pub retained: Vec<Trajectory>,
    pub first_jump: Vec<Option<FirstJump>>,
    /// Number of policy lookups that fell outside the solved grid.
    pub clamp_events: u64,
}

struct PathRecord {
    ckpt_x: Vec<f64>,
    ckpt_emissions: Vec<f64>,
    ckpt_rate: Vec<f64>,
    ckpt_profit: Vec<f64>,
    objective: f64,
    investment: Vec<f64>,
    invest_rate: Vec<f64>,
    retained: Option<Trajectory>,
    first_jump: Option<FirstJump>,
    clamps: u64,
}

/// Simulates the policy under the given tax driver.
pub fn simulate_paths(
    model: &ModelSpec,
    policy: PolicyRef<'_>,
    driver: TaxDriver<'_>,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    model.validate()?;
    let horizon = model.econ.horizon;
    cfg.validate("sim", horizon)?;
    if let PolicyRef::Grid { value, .. } = policy {
        if value.model_hash != model_hash(model) {
            return Err(Error::Mismatch(
                "the solved policy was produced for a different model".into(),
            ));
        }
    }
    match (&driver, &policy) {
        (TaxDriver::Chain(chain), PolicyRef::Grid { value, .. }) => {
            chain.validate("tax.chain")?;
            if value.tax_states.len() != chain.n_states()
                || value
                    .tax_states
                    .iter()
                    .zip(&chain.states)
                    .any(|(a, b)| (a - b).abs() > 1e-12)
            {
                return Err(Error::Mismatch(
                    "policy and tax chain have different state sets".into(),
                ));
            }
        }
        (TaxDriver::Chain(chain), _) => chain.validate("tax.chain")?,
        (TaxDriver::Schedule(_), PolicyRef::Grid { value, .. }) => {
            if value.tax_states.len() != 1 {
                return Err(Error::Mismatch(
                    "benchmark simulation needs a single-regime policy".into(),
                ));
            }
        }
        (TaxDriver::Game(_), PolicyRef::Grid { policy, .. }) if policy.tax.is_none() => {
            return Err(Error::Mismatch(
                "game simulation needs a policy with a worst-case tax field".into(),
            ));
        }
        _ => {}
    }

    let n_steps = cfg.n_steps;
    let dt = horizon / n_steps as f64;
    // checkpoint -> step index (nearest step time)
    let ckpt_steps: Vec<usize> = cfg
        .checkpoints
        .iter()
        .map(|&c| ((c / dt).round() as usize).min(n_steps))
        .collect();

    let run = |path_id: usize| -> PathRecord {
        simulate_one(model, policy, driver, cfg, path_id, dt, &ckpt_steps)
    };

    #[cfg(feature = "parallel")]
    let records: Vec<PathRecord> = (0..cfg.n_paths).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let records: Vec<PathRecord> = (0..cfg.n_paths).map(run).collect();

    let n_ckpt = cfg.checkpoints.len();
    let mut ensemble = PathEnsemble {
        horizon,
        times: (0..=n_steps).map(|k| k as f64 * dt).collect(),
        checkpoints: cfg.checkpoints.clone(),
        checkpoint_investment: vec![Vec::with_capacity(cfg.n_paths); n_ckpt],
        checkpoint_emissions: vec![Vec::with_capacity(cfg.n_paths); n_ckpt],
        checkpoint_emission_rate: vec![Vec::with_capacity(cfg.n_paths); n_ckpt],
        checkpoint_profit: vec![Vec::with_capacity(cfg.n_paths); n_ckpt],
        objective: Vec::with_capacity(cfg.n_paths),
        investment: Vec::with_capacity(cfg.n_paths),
        invest_rate: Vec::with_capacity(cfg.n_paths),
        retained: Vec::new(),
        first_jump: Vec::with_capacity(cfg.n_paths),
        clamp_events: 0,
    };
    for rec in records {
        for c in 0..n_ckpt {
            ensemble.checkpoint_investment[c].push(rec.ckpt_x[c]);
            ensemble.checkpoint_emissions[c].push(rec.ckpt_emissions[c]);
            ensemble.checkpoint_emission_rate[c].push(rec.ckpt_rate[c]);
            ensemble.checkpoint_profit[c].push(rec.ckpt_profit[c]);
        }
        ensemble.objective.push(rec.objective);
        ensemble.investment.push(rec.investment);
        ensemble.invest_rate.push(rec.invest_rate);
        ensemble.first_jump.push(rec.first_jump);
        ensemble.clamp_events += rec.clamps;
        if let Some(t) = rec.retained {
            ensemble.retained.push(t);
        }
    }
    Ok(ensemble)
}

/// Wrong-belief experiment: the policy was solved under a belief chain,
/// the tax path is simulated under the true one. State sets must match.
pub fn cross_belief_simulate(
    model: &ModelSpec,
    belief_value: &ValueGrid,
    belief_policy: &PolicyGrid,
    true_chain: &TaxChain,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    simulate_paths(
        model,
        PolicyRef::Grid {
            value: belief_value,
            policy: belief_policy,
        },
        TaxDriver::Chain(true_chain),
        cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn simulate_one(
    model: &ModelSpec,
    policy: PolicyRef<'_>,
    driver: TaxDriver<'_>,
    cfg: &SimConfig,
    path_id: usize,
    dt: f64,
    ckpt_steps: &[usize],
) -> PathRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_id as u64);
    let econ = &model.econ;
    let rate = econ.discount_rate;
    let delta = econ.depreciation;
    let sigma = econ.noise_vol;
    let kappa = econ.transaction_cost;
    let n_steps = cfg.n_steps;
    let horizon = econ.horizon;
    let (q_lo, q_hi) = econ.output_bounds();

    let ou = match &model.price {
        PriceSpec::OuLog {
            reversion,
            long_run_log,
            vol,
            ..
        } => Some((*reversion, *long_run_log, *vol)),
        _ => None,
    };

    let mut x = econ.initial_investment;
    let mut y = model.price.initial_log().unwrap_or(0.0);
    let mut state = match driver {
        TaxDriver::Chain(chain) => chain.initial_state,
        _ => 0,
    };
    let mut emissions = 0.0;
    let mut profit = 0.0;
    let mut clamps = 0u64;
    let mut first_jump: Option<FirstJump> = None;

    let retain = path_id < cfg.retain_paths;
    let mut investment = Vec::with_capacity(n_steps + 1);
    let mut invest_rate = Vec::with_capacity(n_steps);
    investment.push(x);
    let mut traj = retain.then(|| Trajectory {
        path_id,
        investment: vec![x],
        factor: vec![y],
        tax: Vec::with_capacity(n_steps + 1),
        invest_rate: Vec::with_capacity(n_steps),
        output: Vec::with_capacity(n_steps),
        cum_emissions: vec![0.0],
        cum_profit: vec![0.0],
    });

    let read_rate = |t: f64, x: f64, y: f64, state: usize, clamps: &mut u64| -> f64 {
        match policy {
            PolicyRef::Grid { value, policy } => {
                let (g, _, clamped) = policy.sample(value, t, x, y, state);
                if clamped {
                    *clamps += 1;
                }
                g.max(0.0)
            }
            PolicyRef::ConstantRate(g) => g,
        }
    };

    // investment rate, output and tax at a state point; the game driver
    // evaluates the frozen equilibrium maps exactly at the current state
    let decisions = |t: f64, x: f64, y: f64, state: usize, clamps: &mut u64| -> (f64, f64, f64) {
        match driver {
            TaxDriver::Game(unc) => {
                let (q_hat, tau_hat, _) = crate::game::saddle_point_raw(model, unc, t, x, y);
                let g = read_rate(t, x, y, 0, clamps);
                (g, q_hat, tau_hat)
            }
            _ => {
                let tau = match driver {
                    TaxDriver::Chain(chain) => chain.states[state],
                    TaxDriver::Schedule(s) => s.value_at(t),
                    TaxDriver::Game(_) => unreachable!(),
                };
                match policy {
                    PolicyRef::Grid { value, policy } => {
                        let (g, q, clamped) = policy.sample(value, t, x, y, state);
                        if clamped {
                            *clamps += 1;
                        }
                        (g.max(0.0), q.clamp(q_lo, q_hi), tau)
                    }
                    PolicyRef::ConstantRate(g) => {
                        (g, model.optimal_output(x, y, tau, q_lo, q_hi).output, tau)
                    }
                }
            }
        }
    };

    let mut ckpt_x = vec![x; ckpt_steps.len()];
    let mut ckpt_emissions = vec![0.0; ckpt_steps.len()];
    let mut ckpt_rate = vec![0.0; ckpt_steps.len()];
    let mut ckpt_profit = vec![0.0; ckpt_steps.len()];
    for (slot, &s) in ckpt_steps.iter().enumerate() {
        if s == 0 {
            ckpt_x[slot] = x;
            let (_, q0, _) = decisions(0.0, x, y, state, &mut clamps);
            ckpt_rate[slot] = model.emission_rate(q0, x);
        }
    }

    for k in 0..n_steps {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let mut a = t0;
        let mut first_segment = true;
        while a < t1 - 1e-15 {
            // next regime switch inside the step, if any
            let mut jump = false;
            let mut b = t1;
            if let TaxDriver::Chain(chain) = driver {
                let exit = chain.exit_rate(state);
                if exit > 0.0 {
                    let wait = rand_distr::Exp::new(exit)
                        .expect("positive rate")
                        .sample(&mut rng);
                    if a + wait < t1 {
                        b = a + wait;
                        jump = true;
                    }
                }
            }
            let (gamma, q, tau) = decisions(a, x, y, state, &mut clamps);
            if first_segment {
                invest_rate.push(gamma);
                if let Some(t) = traj.as_mut() {
                    t.invest_rate.push(gamma);
                    t.output.push(q);
                    t.tax.push(tau);
                }
                first_segment = false;
            }
            let seg = b - a;
            emissions += model.emission_rate(q, x) * seg;
            let flow = |g: f64, q: f64, tau: f64, x: f64, y: f64, t: f64| -> f64 {
                let mut f = model.profit_unchecked(q, x, y, tau) - g - kappa * g * g;
                if let TaxDriver::Game(unc) = driver {
                    let bar = unc.tau_bar.value_at(t);
                    f += unc.penalty * (tau - bar) * (tau - bar);
                }
                f
            };
            let reward_start = flow(gamma, q, tau, x, y, a);

            let z: f64 = StandardNormal.sample(&mut rng);
            x += (gamma - delta * x) * seg + sigma * seg.sqrt() * z;
            if let Some((rev, mu, vol)) = ou {
                let z2: f64 = StandardNormal.sample(&mut rng);
                y += rev * (mu - y) * seg + vol * seg.sqrt() * z2;
            }

            // trapezoidal reward quadrature over the state move, with the
            // segment's controls held fixed (they are what was actually
            // paid; output and worst-case tax adaptation is second order
            // by the first-order conditions). The right endpoint stays in
            // the pre-switch regime.
            let tau_b = match driver {
                TaxDriver::Chain(_) => tau,
                TaxDriver::Schedule(s) => s.value_at(b),
                TaxDriver::Game(unc) => crate::game::saddle_point_raw(model, unc, b, x, y).1,
            };
            let reward_end = flow(gamma, q, tau_b, x, y, b);
            let weight = if rate > 0.0 {
                ((-rate * a).exp() - (-rate * b).exp()) / rate
            } else {
                seg
            };
            profit += 0.5 * (reward_start + reward_end) * weight;

            if jump {
                let TaxDriver::Chain(chain) = driver else {
                    unreachable!()
                };
                let new_state = chain.draw_transition(state, &mut rng);
                if first_jump.is_none() {
                    let (g_after, _, _) = decisions(b, x, y, new_state, &mut clamps);
                    first_jump = Some(FirstJump {
                        step: k,
                        rate_before: gamma,
                        rate_after: g_after,
                    });
                }
                state = new_state;
            }
            a = b;
        }
        investment.push(x);
        if let Some(t) = traj.as_mut() {
            t.investment.push(x);
            t.factor.push(y);
            t.cum_emissions.push(emissions);
            t.cum_profit.push(profit);
        }
        for (slot, &s) in ckpt_steps.iter().enumerate() {
            if s == k + 1 {
                ckpt_x[slot] = x;
                ckpt_emissions[slot] = emissions;
                ckpt_profit[slot] = profit;
                let (_, q_now, _) = decisions(t1, x, y, state, &mut clamps);
                ckpt_rate[slot] = model.emission_rate(q_now, x);
            }
        }
    }
    if let Some(t) = traj.as_mut() {
        // align the right-continuous tax series with the step times
        let (_, _, tau_end) = decisions(horizon, x, y, state, &mut clamps);
        t.tax.push(tau_end);
    }

    let objective = profit + (-rate * horizon).exp() * model.residual_value(x);
    PathRecord {
        ckpt_x,
        ckpt_emissions,
        ckpt_rate,
        ckpt_profit,
        objective,
        investment,
        invest_rate,
        retained: traj,
        first_jump,
        clamps,
    }
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.objective.len()
    }

    /// Mean investment level at every step time.
    pub fn mean_investment(&self) -> Vec<f64> {
        mean_over_paths(&self.investment)
    }

    /// Mean investment rate at every step (left endpoints).
    pub fn mean_invest_rate(&self) -> Vec<f64> {
        mean_over_paths(&self.invest_rate)
    }

    /// Nearest-rank quantile of the investment level per step time.
    pub fn quantile_investment(&self, p: f64) -> Vec<f64> {
        let n_steps = self.times.len();
        (0..n_steps)
            .map(|k| {
                let mut col: Vec<f64> = self.investment.iter().map(|path| path[k]).collect();
                col.sort_by(f64::total_cmp);
                nearest_rank(&col, p)
            })
            .collect()
    }

    /// Sample mean and standard error of the discounted objective.
    pub fn policy_evaluation(&self) -> (f64, f64) {
        let n = self.objective.len() as f64;
        let mean = self.objective.iter().sum::<f64>() / n;
        if self.objective.len() < 2 {
            return (mean, 0.0);
        }
        let var = self
            .objective
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

fn mean_over_paths(series: &[Vec<f64>]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let len = series[0].len();
    let mut out = vec![0.0; len];
    for path in series {
        for (o, v) in out.iter_mut().zip(path) {
            *o += v;
        }
    }
    let n = series.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Nearest-rank quantile of an already sorted sample.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (p * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Which per-path metric a table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Emissions,
    Investment,
}

/// Quantile summary of one metric at one checkpoint.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckpointStats {
    pub checkpoint: f64,
    pub q05: f64,
    pub mean: f64,
    pub q95: f64,
    pub benchmark: Option<f64>,
}

/// Per-checkpoint 5% quantile, mean and 95% quantile of the metric.
pub fn statistics(ensemble: &PathEnsemble, metric: Metric) -> Vec<CheckpointStats> {
    let source = match metric {
        Metric::Emissions => &ensemble.checkpoint_emission_rate,
        Metric::Investment => &ensemble.checkpoint_investment,
    };
    ensemble
        .checkpoints
        .iter()
        .zip(source)
        .map(|(&checkpoint, values)| {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            CheckpointStats {
                checkpoint,
                q05: nearest_rank(&sorted, 0.05),
                mean,
                q95: nearest_rank(&sorted, 0.95),
                benchmark: None,
            }
        })
        .collect()
}

/// Fills the benchmark column with the mean of the same metric in a
/// benchmark ensemble (simulated under the deterministic schedule with the
/// configured noise retained).
pub fn attach_benchmark(stats: &mut [CheckpointStats], benchmark: &PathEnsemble, metric: Metric) {
    let bench_stats = statistics(benchmark, metric);
    for (s, b) in stats.iter_mut().zip(bench_stats) {
        debug_assert!((s.checkpoint - b.checkpoint).abs() < 1e-9);
        s.benchmark = Some(b.mean);
    }
}
