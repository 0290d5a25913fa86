//! Backward finite-difference solver for the regime-coupled HJB equation
//!
//! ```text
//! v_t + profit* + L_tax v + L_factor v + (sigma^2/2) v_xx - delta x v_x
//!     + sup_{0<=g<=gbar} { g v_x - g - kappa g^2 }  =  r v,
//! v(T, .) = residual value,
//! ```
//!
//! on a tensor grid over (time, investment, factor, tax state). Per time
//! step the control is maximised explicitly from the upwind gradient of the
//! known slice and the regime coupling is applied explicitly; diffusion,
//! the frozen total drift `(gamma* - delta x)` (upwinded in its sign), the
//! factor dynamics and discounting are solved theta-implicitly with
//! tridiagonal sweeps per dimension. Boundary rows impose a zero second
//! derivative and ignore inward drift excess, which keeps every implicit
//! matrix an M-matrix.

use crate::error::{Error, Result};
use crate::grid::{
    lipschitz_profit_bound, GridShape, GridSpec, LipschitzBudget, PolicyGrid, ValueGrid,
};
use crate::linalg::solve_tridiagonal;
use crate::model::{ModelSpec, PriceSpec};
use crate::output::model_hash;
use crate::tax::{BenchmarkSpec, TaxChain};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Solved value function, feedback policy and the Lipschitz budget that
/// capped the control search.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: ValueGrid,
    pub policy: PolicyGrid,
    pub budget: LipschitzBudget,
}

/// Closed-form maximisation of `p g - g - kappa g^2` over `0 <= g <= cap`.
///
/// Returns the supremum and the maximiser: zero below the kink at `p = 1`,
/// the interior quadratic maximum up to `p = 2 kappa cap + 1`, and the cap
/// branch beyond. Continuous and convex in `p`.
pub fn hamiltonian_sup(p: f64, kappa: f64, cap: f64) -> (f64, f64) {
    if p <= 1.0 {
        (0.0, 0.0)
    } else if p <= 2.0 * kappa * cap + 1.0 {
        let g = (p - 1.0) / (2.0 * kappa);
        (0.25 * (p - 1.0) * (p - 1.0) / kappa, g)
    } else {
        (cap * (p - 1.0) - kappa * cap * cap, cap)
    }
}

/// Feedback rule `(p - 1)^+ / (2 kappa)` clamped to the control cap.
#[inline]
pub fn feedback_rate(p: f64, kappa: f64, cap: f64) -> f64 {
    ((p - 1.0).max(0.0) / (2.0 * kappa)).min(cap)
}

/// Solves the tax-risk problem for a Markov-chain tax process.
pub fn solve_hjb(model: &ModelSpec, chain: &TaxChain, grid: &GridSpec) -> Result<SolveResult> {
    solve_hjb_with_cap_scale(model, chain, grid, 1.0)
}

/// Same solve with the control cap scaled by `cap_scale >= 1`. The solved
/// value is invariant to the scale (the cap already exceeds the threshold
/// at which the feedback rule saturates); exposed so that the invariance
/// can be exercised as a test.
pub fn solve_hjb_with_cap_scale(
    model: &ModelSpec,
    chain: &TaxChain,
    grid: &GridSpec,
    cap_scale: f64,
) -> Result<SolveResult> {
    model.validate()?;
    chain.validate("tax.chain")?;
    grid.validate("grid", model)?;
    let tau_max = chain.max_state();
    common_preconditions(model, grid, tau_max, chain.max_exit_rate())?;

    let mut budget = make_budget(model, tau_max);
    budget.control_cap *= cap_scale.max(1.0);
    let levels = chain.states.clone();
    let (q_lo, q_hi) = model.econ.output_bounds();
    let xs = grid.x_values();
    let ys = grid.y_values();
    let fill = |_t: f64, tables: &mut SourceTables| {
        fill_profit_tables(model, &levels, &xs, &ys, q_lo, q_hi, None, tables);
    };
    let (value, policy) = run_sweep(SweepInputs {
        model,
        grid,
        tax_levels: levels.clone(),
        chain: Some(chain),
        fill: &fill,
        time_varying: false,
        budget,
        want_tax_policy: false,
    });
    Ok(SolveResult {
        value,
        policy,
        budget,
    })
}

/// Solves the control problem under a deterministic benchmark tax
/// schedule (a single regime with a time-dependent reward).
pub fn solve_benchmark(
    model: &ModelSpec,
    schedule: &BenchmarkSpec,
    grid: &GridSpec,
) -> Result<SolveResult> {
    model.validate()?;
    schedule.validate("tax.benchmark")?;
    grid.validate("grid", model)?;
    let horizon = model.econ.horizon;
    let tau_max = schedule.value_at(0.0).max(schedule.value_at(horizon));
    common_preconditions(model, grid, tau_max, 0.0)?;

    let budget = make_budget(model, tau_max);
    let (q_lo, q_hi) = model.econ.output_bounds();
    let xs = grid.x_values();
    let ys = grid.y_values();
    let fill = |t: f64, tables: &mut SourceTables| {
        let levels = [schedule.value_at(t)];
        fill_profit_tables(model, &levels, &xs, &ys, q_lo, q_hi, None, tables);
    };
    let (value, policy) = run_sweep(SweepInputs {
        model,
        grid,
        tax_levels: vec![schedule.value_at(0.0)],
        chain: None,
        fill: &fill,
        time_varying: !matches!(schedule, BenchmarkSpec::Constant { .. }),
        budget,
        want_tax_policy: false,
    });
    Ok(SolveResult {
        value,
        policy,
        budget,
    })
}

pub(crate) fn make_budget(model: &ModelSpec, tau_max: f64) -> LipschitzBudget {
    LipschitzBudget::new(
        lipschitz_profit_bound(model, tau_max),
        model.residual.lipschitz(),
        model.econ.discount_rate,
        model.econ.depreciation,
        model.econ.horizon,
        model.econ.transaction_cost,
    )
}

pub(crate) fn common_preconditions(
    model: &ModelSpec,
    grid: &GridSpec,
    tau_max: f64,
    max_jump_rate: f64,
) -> Result<()> {
    if !(model.econ.noise_vol > 0.0) {
        return Err(Error::Precondition(
            "noise_vol (sigma) must be strictly positive: with a degenerate investment \
             diffusion the value function can be a strict viscosity solution with kinks \
             that the scheme does not resolve"
                .into(),
        ));
    }
    let (q_lo, q_hi) = model.econ.output_bounds();
    if q_lo < q_hi {
        model.check_output_single_crossing(grid.x_min, grid.x_max, tau_max, q_lo, q_hi)?;
    }
    let dt = model.econ.horizon / grid.n_t as f64;
    if dt * max_jump_rate > 0.95 {
        let need = (model.econ.horizon * max_jump_rate / 0.95).ceil() as usize;
        return Err(Error::Precondition(format!(
            "time step too large for the explicit regime coupling \
             (dt * max exit rate = {:.3} > 0.95); increase grid.n_t to at least {need}",
            dt * max_jump_rate
        )));
    }
    let theta = grid.theta_scheme;
    if theta < 1.0 {
        let dx = grid.dx();
        let mut rate = model.econ.noise_vol.powi(2) / (dx * dx)
            + (control_cap_hint(model, tau_max)
                + model.econ.depreciation * grid.x_max.abs().max(grid.x_min.abs()))
                / dx
            + model.econ.discount_rate;
        if let (
            Some(dy),
            PriceSpec::OuLog {
                reversion,
                vol,
                long_run_log,
                ..
            },
        ) = (grid.dy(), &model.price)
        {
            let axis = grid.y_axis.as_ref().expect("dy implies axis");
            let span = (axis.y_max - long_run_log)
                .abs()
                .max((long_run_log - axis.y_min).abs());
            rate += vol * vol / (dy * dy) + reversion * span / dy;
        }
        if (1.0 - theta) * dt * rate > 0.95 {
            let need = (model.econ.horizon * (1.0 - theta) * rate / 0.95).ceil() as usize;
            return Err(Error::Precondition(format!(
                "explicit fraction of the scheme violates the CFL bound; \
                 increase grid.n_t to at least {need} or raise theta_scheme"
            )));
        }
    }
    Ok(())
}

fn control_cap_hint(model: &ModelSpec, tau_max: f64) -> f64 {
    make_budget(model, tau_max).control_cap
}

/// Per-(state, y, x) tables driving one sweep step: the running reward,
/// the maximising output, and (for game solves) the worst-case tax.
pub(crate) struct SourceTables {
    pub reward: Vec<f64>,
    pub output: Vec<f64>,
    pub tax: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_profit_tables(
    model: &ModelSpec,
    levels: &[f64],
    xs: &[f64],
    ys: &[f64],
    q_lo: f64,
    q_hi: f64,
    tax_out: Option<&[f64]>,
    tables: &mut SourceTables,
) {
    let n_x = xs.len();
    let n_y = ys.len();
    for (s, &tau) in levels.iter().enumerate() {
        for (k, &y) in ys.iter().enumerate() {
            let base = (s * n_y + k) * n_x;
            for (j, &x) in xs.iter().enumerate() {
                let r = model.optimal_output(x, y, tau, q_lo, q_hi);
                tables.reward[base + j] = r.profit;
                tables.output[base + j] = r.output;
            }
        }
    }
    if let (Some(levels_out), Some(buf)) = (tax_out, tables.tax.as_mut()) {
        buf.copy_from_slice(levels_out);
    }
}

pub(crate) struct SweepInputs<'a> {
    pub model: &'a ModelSpec,
    pub grid: &'a GridSpec,
    pub tax_levels: Vec<f64>,
    pub chain: Option<&'a TaxChain>,
    /// Fills the source tables for the slice being computed at time `t`.
    pub fill: &'a (dyn Fn(f64, &mut SourceTables) + Sync),
    /// Whether the tables depend on time (forces a refill per step).
    pub time_varying: bool,
    pub budget: LipschitzBudget,
    pub want_tax_policy: bool,
}

pub(crate) fn run_sweep(inp: SweepInputs<'_>) -> (ValueGrid, PolicyGrid) {
    let model = inp.model;
    let grid = inp.grid;
    let n_x = grid.n_x;
    let n_y = grid.n_y();
    let n_states = inp.tax_levels.len();
    let n_rows = n_states * n_y;
    let slice_len = n_rows * n_x;
    let n_t = grid.n_t;
    let horizon = model.econ.horizon;
    let dt = horizon / n_t as f64;
    let dx = grid.dx();
    let theta = grid.theta_scheme;
    let kappa = model.econ.transaction_cost;
    let delta = model.econ.depreciation;
    let rate = model.econ.discount_rate;
    let sigma2 = model.econ.noise_vol * model.econ.noise_vol;
    let cap = inp.budget.control_cap;
    let xs = grid.x_values();
    let ys = grid.y_values();

    // stored slices: at most ~150 plus the endpoints
    let stored_steps = select_stored_steps(n_t);
    let n_stored = stored_steps.len();
    let mut slot_of_step = vec![usize::MAX; n_t + 1];
    for (slot, &step) in stored_steps.iter().enumerate() {
        slot_of_step[step] = slot;
    }

    let mut v_old = vec![0.0; slice_len];
    let mut v_new = vec![0.0; slice_len];
    let mut rhs = vec![0.0; slice_len];
    let mut gamma_work = vec![0.0; slice_len];
    let mut transpose_buf = if n_y > 1 {
        vec![0.0; slice_len]
    } else {
        Vec::new()
    };

    let mut tables = SourceTables {
        reward: vec![0.0; slice_len],
        output: vec![0.0; slice_len],
        tax: inp.want_tax_policy.then(|| vec![0.0; slice_len]),
    };

    let mut stored_values = vec![0.0; n_stored * slice_len];
    let mut stored_gamma = vec![0.0; n_stored * slice_len];
    let mut stored_output = vec![0.0; n_stored * slice_len];
    let mut stored_tax = inp.want_tax_policy.then(|| vec![0.0; n_stored * slice_len]);

    // terminal slice: the residual value, exactly
    for chunk in v_old.chunks_mut(n_x) {
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = model.residual_value(xs[j]);
        }
    }
    (inp.fill)(horizon, &mut tables);

    let ou = match &model.price {
        PriceSpec::OuLog {
            reversion,
            vol,
            long_run_log,
            ..
        } => Some((*reversion, *long_run_log, vol * vol)),
        _ => None,
    };

    let store = |step: usize,
                 slice: &[f64],
                 tables: &SourceTables,
                 stored_values: &mut [f64],
                 stored_gamma: &mut [f64],
                 stored_output: &mut [f64],
                 stored_tax: &mut Option<Vec<f64>>| {
        let slot = slot_of_step[step];
        if slot == usize::MAX {
            return;
        }
        let dst = slot * slice_len;
        stored_values[dst..dst + slice_len].copy_from_slice(slice);
        stored_output[dst..dst + slice_len].copy_from_slice(&tables.output);
        if let (Some(all), Some(cur)) = (stored_tax.as_mut(), tables.tax.as_ref()) {
            all[dst..dst + slice_len].copy_from_slice(cur);
        }
        // post-hoc policy export from central differences
        let g = &mut stored_gamma[dst..dst + slice_len];
        for row in 0..n_rows {
            let b = row * n_x;
            for j in 0..n_x {
                let p = if j == 0 {
                    (slice[b + 1] - slice[b]) / dx
                } else if j == n_x - 1 {
                    (slice[b + n_x - 1] - slice[b + n_x - 2]) / dx
                } else {
                    (slice[b + j + 1] - slice[b + j - 1]) / (2.0 * dx)
                };
                g[b + j] = feedback_rate(p, kappa, cap);
            }
        }
    };

    store(
        n_t,
        &v_old,
        &tables,
        &mut stored_values,
        &mut stored_gamma,
        &mut stored_output,
        &mut stored_tax,
    );

    let gen_rates: Option<Vec<f64>> = inp.chain.map(|c| c.generator.clone());

    for n in (0..n_t).rev() {
        let t = n as f64 * dt;
        if inp.time_varying {
            (inp.fill)(t, &mut tables);
        }

        // stage 1: explicit source, regime coupling and control selection
        {
            let v = &v_old;
            let reward = &tables.reward;
            let gen = gen_rates.as_deref();
            let xs = &xs;
            let ys = &ys;
            rows_for_each2(&mut rhs, &mut gamma_work, n_x, |row, rhs_row, gamma_row| {
                let s = row / n_y;
                let k = row % n_y;
                let b = row * n_x;
                for j in 0..n_x {
                    let vj = v[b + j];
                    let p_fwd = if j + 1 < n_x {
                        (v[b + j + 1] - vj) / dx
                    } else {
                        (vj - v[b + j - 1]) / dx
                    };
                    let drift_at = |g: f64| g - delta * xs[j];
                    let mut gamma = feedback_rate(p_fwd, kappa, cap);
                    if drift_at(gamma) < 0.0 {
                        let p_bwd = if j > 0 {
                            (vj - v[b + j - 1]) / dx
                        } else {
                            p_fwd
                        };
                        let g_bwd = feedback_rate(p_bwd, kappa, cap);
                        gamma = if drift_at(g_bwd) <= 0.0 {
                            g_bwd
                        } else {
                            // sonic node: invest exactly against depreciation
                            (delta * xs[j]).clamp(0.0, cap)
                        };
                    }
                    gamma_row[j] = gamma;

                    let mut src = reward[b + j] - gamma - kappa * gamma * gamma;
                    if let Some(g) = gen {
                        let mut coupling = 0.0;
                        for s2 in 0..n_states {
                            if s2 != s {
                                coupling +=
                                    g[s * n_states + s2] * (v[(s2 * n_y + k) * n_x + j] - vj);
                            }
                        }
                        src += coupling;
                    }
                    let mut out = vj + dt * src;
                    if theta < 1.0 {
                        out += (1.0 - theta)
                            * dt
                            * explicit_space_terms(
                                v,
                                b,
                                j,
                                n_x,
                                dx,
                                sigma2,
                                gamma - delta * xs[j],
                                rate,
                            );
                        if let Some((rev, mu, vol2)) = ou {
                            out += (1.0 - theta)
                                * dt
                                * explicit_factor_terms(
                                    v, s, k, j, n_x, n_y, grid, rev, mu, vol2, ys,
                                );
                        }
                    }
                    rhs_row[j] = out;
                }
            });
        }

        // stage 2: implicit sweep along the investment axis
        {
            let rhs_ref = &rhs;
            let gamma_ref = &gamma_work;
            let xs = &xs;
            rows_for_each1(&mut v_new, n_x, |row, out_row| {
                let b = row * n_x;
                let mut lower = vec![0.0; n_x - 1];
                let mut diag = vec![0.0; n_x];
                let mut upper = vec![0.0; n_x - 1];
                let mut work = vec![0.0; 2 * n_x];
                let h = theta * dt;
                let diff = 0.5 * sigma2 / (dx * dx);
                for j in 0..n_x {
                    let mu = gamma_ref[b + j] - delta * xs[j];
                    if j == 0 {
                        // boundary row: zero second derivative, inward drift only
                        let m = mu.max(0.0);
                        diag[0] = 1.0 + h * (m / dx + rate);
                        upper[0] = -h * m / dx;
                    } else if j == n_x - 1 {
                        let m = (-mu).max(0.0);
                        diag[j] = 1.0 + h * (m / dx + rate);
                        lower[j - 1] = -h * m / dx;
                    } else {
                        let up = mu.max(0.0) / dx;
                        let dn = (-mu).max(0.0) / dx;
                        lower[j - 1] = -h * (diff + dn);
                        diag[j] = 1.0 + h * (2.0 * diff + up + dn + rate);
                        upper[j] = -h * (diff + up);
                    }
                }
                solve_tridiagonal(
                    &lower,
                    &diag,
                    &upper,
                    &rhs_ref[b..b + n_x],
                    &mut work,
                    out_row,
                );
            });
        }

        // stage 3: implicit sweep along the factor axis
        if let Some((rev, mu_y, vol2)) = ou {
            let dy = grid.dy().expect("factor axis");
            // transpose each state's (y, x) plane to make columns contiguous
            {
                let src = &v_new;
                rows_for_each1(&mut transpose_buf, n_y, |row, out_row| {
                    let s = row / n_x;
                    let j = row % n_x;
                    for k in 0..n_y {
                        out_row[k] = src[(s * n_y + k) * n_x + j];
                    }
                });
            }
            {
                let ys = &ys;
                rows_for_each1(&mut transpose_buf, n_y, |_row, col| {
                    let mut lower = vec![0.0; n_y - 1];
                    let mut diag = vec![0.0; n_y];
                    let mut upper = vec![0.0; n_y - 1];
                    let mut work = vec![0.0; 2 * n_y];
                    let mut local_rhs = vec![0.0; n_y];
                    local_rhs.copy_from_slice(col);
                    let h = theta * dt;
                    let diff = 0.5 * vol2 / (dy * dy);
                    for k in 0..n_y {
                        let b_drift = rev * (mu_y - ys[k]);
                        if k == 0 {
                            let m = b_drift.max(0.0);
                            diag[0] = 1.0 + h * m / dy;
                            upper[0] = -h * m / dy;
                        } else if k == n_y - 1 {
                            let m = (-b_drift).max(0.0);
                            diag[k] = 1.0 + h * m / dy;
                            lower[k - 1] = -h * m / dy;
                        } else {
                            let up = b_drift.max(0.0) / dy;
                            let dn = (-b_drift).max(0.0) / dy;
                            lower[k - 1] = -h * (diff + dn);
                            diag[k] = 1.0 + h * (2.0 * diff + up + dn);
                            upper[k] = -h * (diff + up);
                        }
                    }
                    solve_tridiagonal(&lower, &diag, &upper, &local_rhs, &mut work, col);
                });
            }
            {
                let src = &transpose_buf;
                rows_for_each1(&mut v_new, n_x, |row, out_row| {
                    let s = row / n_y;
                    let k = row % n_y;
                    for (j, out) in out_row.iter_mut().enumerate() {
                        *out = src[(s * n_x + j) * n_y + k];
                    }
                });
            }
        }

        std::mem::swap(&mut v_old, &mut v_new);
        store(
            n,
            &v_old,
            &tables,
            &mut stored_values,
            &mut stored_gamma,
            &mut stored_output,
            &mut stored_tax,
        );
    }

    let times: Vec<f64> = stored_steps.iter().map(|&s| s as f64 * dt).collect();
    let shape = GridShape {
        n_t: n_stored,
        n_states,
        n_y,
        n_x,
    };
    debug_assert_eq!(shape.len(), stored_values.len());
    let value = ValueGrid {
        grid: grid.clone(),
        times,
        tax_states: inp.tax_levels,
        values: stored_values,
        model_hash: model_hash(model),
    };
    let policy = PolicyGrid {
        invest_rate: stored_gamma,
        output: stored_output,
        tax: stored_tax,
    };
    (value, policy)
}

/// Stored slice indices: every step when the sweep is short, otherwise a
/// uniform thinning to roughly 150 slices, always keeping 0 and n_t.
fn select_stored_steps(n_t: usize) -> Vec<usize> {
    const TARGET: usize = 150;
    if n_t <= TARGET {
        return (0..=n_t).collect();
    }
    let mut steps: Vec<usize> = (0..=TARGET)
        .map(|j| ((j as f64 / TARGET as f64) * n_t as f64).round() as usize)
        .collect();
    steps.dedup();
    steps
}

#[allow(clippy::too_many_arguments)]
fn explicit_space_terms(
    v: &[f64],
    b: usize,
    j: usize,
    n_x: usize,
    dx: f64,
    sigma2: f64,
    mu: f64,
    rate: f64,
) -> f64 {
    let vj = v[b + j];
    if j == 0 {
        let m = mu.max(0.0);
        m * (v[b + 1] - vj) / dx - rate * vj
    } else if j == n_x - 1 {
        let m = (-mu).max(0.0);
        -m * (vj - v[b + j - 1]) / dx - rate * vj
    } else {
        let diff = 0.5 * sigma2 * (v[b + j + 1] - 2.0 * vj + v[b + j - 1]) / (dx * dx);
        let adv =
            mu.max(0.0) * (v[b + j + 1] - vj) / dx - (-mu).max(0.0) * (vj - v[b + j - 1]) / dx;
        diff + adv - rate * vj
    }
}

#[allow(clippy::too_many_arguments)]
fn explicit_factor_terms(
    v: &[f64],
    s: usize,
    k: usize,
    j: usize,
    n_x: usize,
    n_y: usize,
    grid: &GridSpec,
    rev: f64,
    mu_y: f64,
    vol2: f64,
    ys: &[f64],
) -> f64 {
    let dy = grid.dy().expect("factor axis");
    let at = |kk: usize| v[(s * n_y + kk) * n_x + j];
    let vk = at(k);
    let b_drift = rev * (mu_y - ys[k]);
    if k == 0 {
        b_drift.max(0.0) * (at(1) - vk) / dy
    } else if k == n_y - 1 {
        -(-b_drift).max(0.0) * (vk - at(k - 1)) / dy
    } else {
        let diff = 0.5 * vol2 * (at(k + 1) - 2.0 * vk + at(k - 1)) / (dy * dy);
        let adv =
            b_drift.max(0.0) * (at(k + 1) - vk) / dy - (-b_drift).max(0.0) * (vk - at(k - 1)) / dy;
        diff + adv
    }
}

fn rows_for_each1<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    buf.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    buf.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

fn rows_for_each2<F>(a: &mut [f64], b: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    a.par_chunks_mut(row_len)
        .zip(b.par_chunks_mut(row_len))
        .enumerate()
        .for_each(|(i, (ra, rb))| f(i, ra, rb));
    #[cfg(not(feature = "parallel"))]
    a.chunks_mut(row_len)
        .zip(b.chunks_mut(row_len))
        .enumerate()
        .for_each(|(i, (ra, rb))| f(i, ra, rb));
}
