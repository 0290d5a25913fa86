//! Tax-uncertainty differential game.
//!
//! The producer maximises profit while a penalised adversary picks the tax
//! from a band around a reference plan. Because the tax only enters the
//! running reward, the game value solves an HJB equation whose reward is
//! the pointwise saddle value
//!
//! ```text
//! g(q, tau; x, y) = profit(q, x, y, tau) + nu1 (tau - tau_bar)^2,
//! G(x, y) = max_q min_tau g = min_tau max_q g,
//! ```
//!
//! computed here by a root find on the strictly decreasing composite
//! first-order condition, followed by the same implicit sweep as the
//! tax-risk solver (without regime coupling).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LipschitzBudget, PolicyGrid, ValueGrid};
use crate::hjb::{common_preconditions, make_budget, run_sweep, SourceTables, SweepInputs};
use crate::model::ModelSpec;

/// Piecewise-linear schedule of a scalar in time; a single point means a
/// constant. Times must be strictly increasing; values are extended
/// constantly beyond the last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

impl Schedule {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    if t <= t1 {
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points.last().unwrap().1
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Schedule::Constant(_) => true,
            Schedule::PiecewiseLinear { points } => points.len() <= 1,
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PiecewiseLinear { points } => {
                points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        if let Schedule::PiecewiseLinear { points } = self {
            if points.is_empty() {
                return Err(Error::validation(path, "schedule needs at least one point"));
            }
            for w in points.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(Error::validation(path, "breakpoints must be increasing"));
                }
            }
        }
        Ok(())
    }
}

/// Uncertainty model of the game: the admissible tax band, the reference
/// plan and the quadratic deviation penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub tau_min: Schedule,
    pub tau_max: Schedule,
    pub tau_bar: Schedule,
    /// Penalty coefficient `nu1 > 0`; smaller values mean more uncertainty.
    pub penalty: f64,
}

impl UncertaintySpec {
    pub fn constant(tau_min: f64, tau_max: f64, tau_bar: f64, penalty: f64) -> Self {
        UncertaintySpec {
            tau_min: Schedule::Constant(tau_min),
            tau_max: Schedule::Constant(tau_max),
            tau_bar: Schedule::Constant(tau_bar),
            penalty,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.tau_min.validate(&format!("{path}.tau_min"))?;
        self.tau_max.validate(&format!("{path}.tau_max"))?;
        self.tau_bar.validate(&format!("{path}.tau_bar"))?;
        if !(self.penalty > 0.0) {
            return Err(Error::validation(format!("{path}.penalty"), "must be > 0"));
        }
        for i in 0..=64 {
            let t = i as f64;
            let (lo, hi, bar) = self.band_at(t);
            if !(0.0 <= lo && lo <= bar && bar <= hi) {
                return Err(Error::validation(
                    path,
                    format!("band ordering 0 <= tau_min <= tau_bar <= tau_max violated at t={t}"),
                ));
            }
        }
        Ok(())
    }

    pub fn band_at(&self, t: f64) -> (f64, f64, f64) {
        (
            self.tau_min.value_at(t),
            self.tau_max.value_at(t),
            self.tau_bar.value_at(t),
        )
    }

    pub fn is_constant(&self) -> bool {
        self.tau_min.is_constant() && self.tau_max.is_constant() && self.tau_bar.is_constant()
    }
}

/// Pointwise equilibrium maps over the spatial grid: the saddle output,
/// worst-case tax and saddle value per `(y, x)` node.
#[derive(Debug, Clone)]
pub struct SaddleField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub output: Vec<f64>,
    pub tax: Vec<f64>,
    pub value: Vec<f64>,
}

impl SaddleField {
    fn idx(&self, k: usize, j: usize) -> usize {
        k * self.x.len() + j
    }
}

/// Solved game: value function, equilibrium feedback (investment rate,
/// output, worst-case tax) and the saddle field at the initial time.
#[derive(Debug, Clone)]
pub struct GameSolveResult {
    pub value: ValueGrid,
    pub policy: PolicyGrid,
    pub budget: LipschitzBudget,
    pub saddle: SaddleField,
}

/// Adversary's best response to an output level:
/// `clip(tau_bar + (C1(q) - nu0(q)) / (2 nu1), tau_min, tau_max)`.
pub fn tau_best_response(model: &ModelSpec, unc: &UncertaintySpec, t: f64, q: f64, x: f64) -> f64 {
    let (lo, hi, bar) = unc.band_at(t);
    let c1 = model.emission_rate(q, x);
    let adj = (c1 - model.rebate_value(q)) / (2.0 * unc.penalty);
    (bar + adj).clamp(lo, hi)
}

/// Producer's best response to a tax level: the instantaneous optimiser on
/// `[min_output, max_output]`.
pub fn q_best_response(model: &ModelSpec, tau: f64, x: f64, y: f64) -> f64 {
    let (q_lo, q_hi) = model.econ.output_bounds();
    model.optimal_output(x, y, tau, q_lo, q_hi).output
}

/// Saddle point of `g(q, tau; x, y)` at one spatial node.
///
/// The composite first-order condition
/// `phi(q) = p - dC0 - (dC1 - dnu0) tau(q)` is strictly decreasing wherever
/// it can cross zero; the root (or the binding output bound) is the saddle
/// output, the adversary response at it the saddle tax. A sign pattern
/// violating single crossing is reported as an error instead of silently
/// returning one of several candidates.
pub fn saddle_point(
    model: &ModelSpec,
    unc: &UncertaintySpec,
    t: f64,
    x: f64,
    y: f64,
) -> Result<(f64, f64, f64)> {
    let (q_lo, q_hi) = model.econ.output_bounds();
    let phi = |q: f64| {
        let tau = tau_best_response(model, unc, t, q, x);
        model.marginal_profit(q, x, y, tau)
    };

    // sign-pattern check on a coarse sample: once negative, phi must not
    // return to positive
    if q_hi > q_lo {
        let scale = model.price(y).abs() + 1.0;
        let tol = 1e-9 * scale;
        let mut seen_negative = false;
        for i in 0..=32 {
            let q = q_lo + (q_hi - q_lo) * i as f64 / 32.0;
            let v = phi(q);
            if v < -tol {
                seen_negative = true;
            } else if seen_negative && v > tol {
                return Err(Error::Precondition(format!(
                    "saddle-point condition is not single-crossing at x={x:.4}, y={y:.4}: \
                     the configured rebate violates the concavity assumptions"
                )));
            }
        }
    }

    Ok(saddle_point_raw(model, unc, t, x, y))
}

/// Saddle point without the sign-pattern scan; used in simulation loops
/// after the configuration has been vetted once.
pub(crate) fn saddle_point_raw(
    model: &ModelSpec,
    unc: &UncertaintySpec,
    t: f64,
    x: f64,
    y: f64,
) -> (f64, f64, f64) {
    let (q_lo, q_hi) = model.econ.output_bounds();
    let phi = |q: f64| {
        let tau = tau_best_response(model, unc, t, q, x);
        model.marginal_profit(q, x, y, tau)
    };
    let q_hat = if q_lo >= q_hi || phi(q_lo) < 0.0 {
        q_lo
    } else if phi(q_hi) > 0.0 {
        q_hi
    } else {
        let (mut lo, mut hi) = (q_lo, q_hi);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let tau_hat = tau_best_response(model, unc, t, q_hat, x);
    let value = game_reward(model, unc, t, q_hat, tau_hat, x, y);
    (q_hat, tau_hat, value)
}

/// The zero-sum reward `g(q, tau; x, y)`.
pub fn game_reward(
    model: &ModelSpec,
    unc: &UncertaintySpec,
    t: f64,
    q: f64,
    tau: f64,
    x: f64,
    y: f64,
) -> f64 {
    let bar = unc.tau_bar.value_at(t);
    model.profit_unchecked(q, x, y, tau) + unc.penalty * (tau - bar) * (tau - bar)
}

/// Computes the saddle field on the spatial grid at time `t`.
pub fn saddle_field(
    model: &ModelSpec,
    unc: &UncertaintySpec,
    grid: &GridSpec,
    t: f64,
) -> Result<SaddleField> {
    let xs = grid.x_values();
    let ys = grid.y_values();
    let mut field = SaddleField {
        x: xs.clone(),
        y: ys.clone(),
        output: vec![0.0; xs.len() * ys.len()],
        tax: vec![0.0; xs.len() * ys.len()],
        value: vec![0.0; xs.len() * ys.len()],
    };
    for (k, &y) in ys.iter().enumerate() {
        for (j, &x) in xs.iter().enumerate() {
            let (q, tau, g) = saddle_point(model, unc, t, x, y)?;
            let idx = field.idx(k, j);
            field.output[idx] = q;
            field.tax[idx] = tau;
            field.value[idx] = g;
        }
    }
    Ok(field)
}

/// Solves the game by the reduced Bellman-Isaacs equation: the tax-risk
/// sweep without regime coupling, with the saddle value as running reward.
pub fn solve_isaacs(
    model: &ModelSpec,
    unc: &UncertaintySpec,
    grid: &GridSpec,
) -> Result<GameSolveResult> {
    model.validate()?;
    unc.validate("tax.uncertainty")?;
    grid.validate("grid", model)?;
    let tau_max = unc.tau_max.max_value();
    common_preconditions(model, grid, tau_max, 0.0)?;

    let budget = make_budget(model, tau_max);
    let saddle_out = saddle_field(model, unc, grid, 0.0)?;
    let saddle = saddle_out.clone();
    let constant = unc.is_constant();
    let fill = move |t: f64, tables: &mut SourceTables| {
        let recomputed;
        let f = if constant {
            &saddle
        } else {
            recomputed = saddle_field(model, unc, grid, t)
                .expect("single-crossing verified at t = 0; band schedules preserve it");
            &recomputed
        };
        tables.reward.copy_from_slice(&f.value);
        tables.output.copy_from_slice(&f.output);
        if let Some(tax) = tables.tax.as_mut() {
            tax.copy_from_slice(&f.tax);
        }
    };
    let (value, policy) = run_sweep(SweepInputs {
        model,
        grid,
        tax_levels: vec![unc.tau_bar.value_at(0.0)],
        chain: None,
        fill: &fill,
        time_varying: !constant,
        budget,
        want_tax_policy: true,
    });
    Ok(GameSolveResult {
        value,
        policy,
        budget,
        saddle: saddle_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use approx::assert_relative_eq;

    fn game_model(alpha: f64) -> ModelSpec {
        ModelSpec {
            econ: EconomicParams {
                discount_rate: 0.04,
                depreciation: 0.02,
                noise_vol: 0.2,
                transaction_cost: 0.5,
                horizon: 10.0,
                max_output: 10.0,
                min_output: 5.0,
                fixed_output: None,
                initial_investment: 0.0,
            },
            tech: TechnologySpec::TwoTech(TwoTechParams {
                brown_input_cost: 1.0,
                brown_emission: 1.0,
                brown_input_coeff: 1.0,
                green_productivity: 0.2,
                green_threshold: 20.0,
                smooth_width: 1.0,
                maintenance_base: 0.0,
                maintenance_slope: 0.0,
            }),
            rebate: if alpha > 0.0 {
                RebateSpec::TwoTechAlpha { alpha }
            } else {
                RebateSpec::NoRebate
            },
            price: PriceSpec::Constant { price: 2.1 },
            residual: ResidualValueSpec::LinearPositive { slope: 0.7 },
        }
    }

    fn band(penalty: f64) -> UncertaintySpec {
        UncertaintySpec::constant(0.5, 1.5, 1.0, penalty)
    }

    #[test]
    fn tau_response_clips_to_band() {
        // emission rate minus rebate of 2 with nu1 = 1 pushes tau to the cap
        let m = game_model(0.0);
        let u = band(1.0);
        // pick a node where the brown emission rate is sizeable
        let q = 10.0;
        let x = 0.0;
        let c1 = m.emission_rate(q, x);
        let expected = (1.0 + c1 / 2.0).clamp(0.5, 1.5);
        assert_relative_eq!(tau_best_response(&m, &u, 0.0, q, x), expected);
        assert_eq!(expected, 1.5);
    }

    #[test]
    fn tau_response_is_reference_when_rebate_offsets_emissions() {
        // fully green node without rebate: C1 = 0 and nu0 = 0
        let m = game_model(0.0);
        let u = band(1.0);
        let x = 90.0; // green capacity 14 > q
        assert_relative_eq!(tau_best_response(&m, &u, 0.0, 6.0, x), 1.0);
    }

    #[test]
    fn rebate_pushes_worst_case_tax_below_reference() {
        let m = game_model(0.5);
        let u = band(1.0);
        let x = 90.0; // full abatement: C1 = 0, nu0 > 0
        let tau = tau_best_response(&m, &u, 0.0, 8.0, x);
        assert!(tau < 1.0, "expected tau below the reference, got {tau}");
    }

    #[test]
    fn saddle_fixed_point_residuals() {
        for alpha in [0.0, 0.5] {
            for penalty in [1.0, 20.0] {
                let m = game_model(alpha);
                let u = band(penalty);
                for i in 0..20 {
                    let x = 60.0 * (i as f64 * 0.618033988749895).fract();
                    let (q, tau, _) = saddle_point(&m, &u, 0.0, x, 0.0).unwrap();
                    let q2 = q_best_response(&m, tau, x, 0.0);
                    let tau2 = tau_best_response(&m, &u, 0.0, q, x);
                    assert!(
                        (q - q2).abs() <= 1e-8,
                        "output fixed point: {q} vs {q2} (x={x}, alpha={alpha}, nu1={penalty})"
                    );
                    assert!(
                        (tau - tau2).abs() <= 1e-8,
                        "tax fixed point: {tau} vs {tau2}"
                    );
                }
            }
        }
    }

    #[test]
    fn saddle_profiles_are_monotone_in_investment() {
        // the equilibrium output increases in x, the worst-case tax decreases
        for (alpha, penalty) in [(0.0, 1.0), (0.5, 1.0), (0.0, 20.0), (0.5, 20.0)] {
            let m = game_model(alpha);
            let u = band(penalty);
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..=60 {
                let x = i as f64;
                let (q, tau, _) = saddle_point(&m, &u, 0.0, x, 0.0).unwrap();
                if let Some((pq, pt)) = prev {
                    assert!(q >= pq - 1e-9, "output not increasing at x={x}");
                    assert!(tau <= pt + 1e-9, "tax not decreasing at x={x}");
                }
                prev = Some((q, tau));
            }
        }
    }

    #[test]
    fn degenerate_band_recovers_reference_tax() {
        let m = game_model(0.0);
        let u = UncertaintySpec::constant(1.0, 1.0, 1.0, 5.0);
        let (q, tau, g) = saddle_point(&m, &u, 0.0, 30.0, 0.0).unwrap();
        assert_eq!(tau, 1.0);
        assert_relative_eq!(q, q_best_response(&m, 1.0, 30.0, 0.0), epsilon = 1e-9);
        assert_relative_eq!(g, m.profit_unchecked(q, 30.0, 0.0, 1.0), epsilon = 1e-9);
    }

    #[test]
    fn schedules_interpolate_piecewise_linearly() {
        let s = Schedule::PiecewiseLinear {
            points: vec![(0.0, 1.0), (10.0, 2.0)],
        };
        assert_relative_eq!(s.value_at(-1.0), 1.0);
        assert_relative_eq!(s.value_at(5.0), 1.5);
        assert_relative_eq!(s.value_at(20.0), 2.0);
        assert!(!s.is_constant());
        assert!(Schedule::Constant(1.0).is_constant());
    }

    #[test]
    fn flat_schedules_reproduce_the_constant_band_solve() {
        // a piecewise-linear plan with equal endpoints takes the
        // time-varying path (per-step saddle recomputation) and must land
        // on the constant-band solution exactly
        let m = game_model(0.5);
        let grid = crate::grid::GridSpec {
            x_min: 0.0,
            x_max: 100.0,
            n_x: 101,
            y_axis: None,
            n_t: 120,
            theta_scheme: 1.0,
        };
        let constant = solve_isaacs(&m, &band(1.0), &grid).unwrap();
        let scheduled = UncertaintySpec {
            tau_min: Schedule::Constant(0.5),
            tau_max: Schedule::Constant(1.5),
            tau_bar: Schedule::PiecewiseLinear {
                points: vec![(0.0, 1.0), (10.0, 1.0)],
            },
            penalty: 1.0,
        };
        assert!(!scheduled.is_constant());
        let varying = solve_isaacs(&m, &scheduled, &grid).unwrap();
        let max_diff = constant
            .value
            .values
            .iter()
            .zip(&varying.value.values)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(max_diff == 0.0, "flat schedule deviates by {max_diff}");
        assert_eq!(constant.policy.tax, varying.policy.tax);
    }

    #[test]
    fn uncertainty_validation_rejects_bad_bands() {
        let u = UncertaintySpec::constant(1.5, 0.5, 1.0, 1.0);
        assert!(u.validate("tax.uncertainty").is_err());
        let u = UncertaintySpec::constant(0.5, 1.5, 1.0, 0.0);
        assert!(u.validate("tax.uncertainty").is_err());
        assert!(band(1.0).validate("tax.uncertainty").is_ok());
    }
}
