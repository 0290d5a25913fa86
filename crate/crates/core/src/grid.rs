//! Space-time grids, solved value/policy storage and interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PriceSpec, TechnologySpec};

/// Discretisation of the solver domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    /// Price-factor axis; absent for constant prices.
    #[serde(default)]
    pub y_axis: Option<YAxis>,
    /// Number of solver time steps over `[0, T]`.
    pub n_t: usize,
    /// Implicitness weight of the diffusion/drift part (1 = fully implicit).
    #[serde(default = "default_theta")]
    pub theta_scheme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YAxis {
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
}

fn default_theta() -> f64 {
    1.0
}

impl GridSpec {
    /// Grid defaults used in the experiments: the investment axis covers
    /// the region the technology can reach, the factor axis four stationary
    /// standard deviations around the long-run mean.
    pub fn default_for(model: &ModelSpec) -> GridSpec {
        let (mut x_min, mut x_max) = match model.tech {
            TechnologySpec::Filter(_) => (-1.0, 12.0),
            TechnologySpec::TwoTech(_) => (0.0, 100.0),
        };
        let x0 = model.econ.initial_investment;
        if x0 < x_min {
            x_min = x0 - 1.0;
        }
        if x0 > x_max {
            x_max = x0 + 1.0;
        }
        let y_axis = match model.price {
            PriceSpec::Constant { .. } => None,
            PriceSpec::OuLog {
                reversion,
                long_run_log,
                vol,
                ..
            } => {
                let sd = vol / (2.0 * reversion).sqrt();
                let half = (4.0 * sd).max(1e-3);
                Some(YAxis {
                    y_min: long_run_log - half,
                    y_max: long_run_log + half,
                    n_y: 101,
                })
            }
        };
        GridSpec {
            x_min,
            x_max,
            n_x: 201,
            y_axis,
            n_t: 600.max((40.0 * model.econ.horizon).ceil() as usize),
            theta_scheme: 1.0,
        }
    }

    pub fn n_y(&self) -> usize {
        self.y_axis.as_ref().map_or(1, |a| a.n_y)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dy(&self) -> Option<f64> {
        self.y_axis
            .as_ref()
            .map(|a| (a.y_max - a.y_min) / (a.n_y - 1) as f64)
    }

    pub fn x_values(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_x).map(|i| self.x_min + dx * i as f64).collect()
    }

    pub fn y_values(&self) -> Vec<f64> {
        match &self.y_axis {
            None => vec![0.0],
            Some(a) => {
                let dy = (a.y_max - a.y_min) / (a.n_y - 1) as f64;
                (0..a.n_y).map(|k| a.y_min + dy * k as f64).collect()
            }
        }
    }

    pub fn validate(&self, path: &str, model: &ModelSpec) -> Result<()> {
        if !(self.x_min < self.x_max) {
            return Err(Error::validation(
                format!("{path}.x_min"),
                "requires x_min < x_max",
            ));
        }
        if self.n_x < 3 {
            return Err(Error::validation(
                format!("{path}.n_x"),
                "needs at least 3 nodes",
            ));
        }
        if self.n_t < 1 {
            return Err(Error::validation(
                format!("{path}.n_t"),
                "needs at least 1 step",
            ));
        }
        if !(self.theta_scheme >= 0.0 && self.theta_scheme <= 1.0) {
            return Err(Error::validation(
                format!("{path}.theta_scheme"),
                "must lie in [0, 1]",
            ));
        }
        let x0 = model.econ.initial_investment;
        if x0 < self.x_min || x0 > self.x_max {
            return Err(Error::validation(
                format!("{path}.x_min"),
                format!(
                    "domain [{}, {}] does not contain the initial investment {x0}",
                    self.x_min, self.x_max
                ),
            ));
        }
        match (&self.y_axis, &model.price) {
            (None, PriceSpec::OuLog { .. }) => {
                return Err(Error::validation(
                    format!("{path}.y_axis"),
                    "required for the mean-reverting price model",
                ));
            }
            (Some(_), PriceSpec::Constant { .. }) => {
                return Err(Error::validation(
                    format!("{path}.y_axis"),
                    "not allowed with a constant price",
                ));
            }
            (
                Some(a),
                PriceSpec::OuLog {
                    reversion,
                    long_run_log,
                    vol,
                    initial_price,
                },
            ) => {
                if !(a.y_min < a.y_max) || a.n_y < 3 {
                    return Err(Error::validation(
                        format!("{path}.y_axis"),
                        "requires y_min < y_max and n_y >= 3",
                    ));
                }
                let y0 = initial_price.ln();
                if y0 < a.y_min || y0 > a.y_max {
                    return Err(Error::validation(
                        format!("{path}.y_axis"),
                        format!("domain does not contain the initial log price {y0:.4}"),
                    ));
                }
                let sd = vol / (2.0 * reversion).sqrt();
                if sd > 0.0
                    && (long_run_log - 4.0 * sd < a.y_min || long_run_log + 4.0 * sd > a.y_max)
                {
                    return Err(Error::validation(
                        format!("{path}.y_axis"),
                        "must cover four stationary standard deviations around the long-run mean",
                    ));
                }
            }
            (None, PriceSpec::Constant { .. }) => {}
        }
        Ok(())
    }
}

/// Lipschitz budget of the control problem: the profit and residual-value
/// constants propagate to a bound on the value-function slope, which in
/// turn caps the investment rate the solver ever needs to consider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBudget {
    /// Lipschitz constant of the maximised profit in the investment level.
    pub profit_lipschitz: f64,
    /// Lipschitz constant of the residual value.
    pub residual_lipschitz: f64,
    /// Resulting bound on the value-function slope.
    pub value_lipschitz: f64,
    /// Control cap strictly above the largest rate the feedback rule can
    /// select; the solved value is invariant to raising it further.
    pub control_cap: f64,
}

impl LipschitzBudget {
    pub fn new(
        profit_lipschitz: f64,
        residual_lipschitz: f64,
        discount_rate: f64,
        depreciation: f64,
        horizon: f64,
        transaction_cost: f64,
    ) -> Self {
        let rd = discount_rate + depreciation;
        let annuity = if rd > 0.0 {
            (1.0 - (-rd * horizon).exp()) / rd
        } else {
            horizon
        };
        let value_lipschitz = profit_lipschitz * annuity + residual_lipschitz;
        let control_cap = control_cap(value_lipschitz, transaction_cost);
        LipschitzBudget {
            profit_lipschitz,
            residual_lipschitz,
            value_lipschitz,
            control_cap,
        }
    }
}

/// Control cap above the threshold at which the solved value function
/// becomes invariant to the cap: `1.1 * max((L_V - 1)^+ / (2 kappa), 1e-6)`.
pub fn control_cap(value_lipschitz: f64, transaction_cost: f64) -> f64 {
    1.1 * ((value_lipschitz - 1.0).max(0.0) / (2.0 * transaction_cost)).max(1e-6)
}

/// Analytic bound on the x-Lipschitz constant of the maximised profit.
///
/// Filter: `Q(q_max) tau_max e1` (the slope of the emission factor is at
/// most `e1`). Two technologies: the cost slope in `x` is bounded by
/// `(c_b + e_b tau_max) Q_b'(q_max) p_g` plus the maintenance slope.
pub fn lipschitz_profit_bound(model: &ModelSpec, tau_max: f64) -> f64 {
    let q_max = model.econ.max_output;
    match &model.tech {
        TechnologySpec::Filter(f) => f.input_quantity(q_max) * tau_max * f.abatement_slope,
        TechnologySpec::TwoTech(t) => {
            let brown_slope = 1.5 * t.brown_input_coeff * q_max.sqrt();
            (t.brown_input_cost + t.brown_emission * tau_max) * brown_slope * t.green_productivity
                + t.maintenance_slope
        }
    }
}

/// Solved value function on the stored time slices.
///
/// Values are laid out `[time][tax state][y][x]`, row-major; the terminal
/// slice equals the residual value exactly.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub grid: GridSpec,
    /// Stored slice times, ascending, first 0 and last T.
    pub times: Vec<f64>,
    /// Tax level per regime index (a single entry for game/benchmark solves).
    pub tax_states: Vec<f64>,
    pub values: Vec<f64>,
    pub model_hash: u64,
}

/// Feedback controls on the same layout as [`ValueGrid`].
#[derive(Debug, Clone)]
pub struct PolicyGrid {
    pub invest_rate: Vec<f64>,
    pub output: Vec<f64>,
    /// Worst-case tax field for game solves.
    pub tax: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GridShape {
    pub n_t: usize,
    pub n_states: usize,
    pub n_y: usize,
    pub n_x: usize,
}

impl GridShape {
    #[inline]
    pub fn idx(&self, t: usize, s: usize, y: usize, x: usize) -> usize {
        ((t * self.n_states + s) * self.n_y + y) * self.n_x + x
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_states * self.n_y * self.n_x
    }
}

impl ValueGrid {
    pub(crate) fn shape(&self) -> GridShape {
        GridShape {
            n_t: self.times.len(),
            n_states: self.tax_states.len(),
            n_y: self.grid.n_y(),
            n_x: self.grid.n_x,
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty time axis")
    }

    pub fn value_at_node(&self, t: usize, state: usize, y: usize, x: usize) -> f64 {
        let sh = self.shape();
        self.values[sh.idx(t, state, y, x)]
    }

    /// Trilinear interpolation of the value in `(t, x, y)` for a regime.
    /// Points outside the spatial domain are clamped to the boundary.
    pub fn sample_value(&self, t: f64, x: f64, y: f64, state: usize) -> f64 {
        sample(self.grid_view(&self.values), t, x, y, state).0
    }

    fn grid_view<'a>(&'a self, data: &'a [f64]) -> GridView<'a> {
        GridView {
            grid: &self.grid,
            times: &self.times,
            shape: self.shape(),
            data,
        }
    }

    /// One-sided/central finite-difference gradient of the value in the
    /// investment direction, at the stored slice nearest to `t` and the
    /// factor row nearest to `y`. Interior nodes use the O(dx^2) central
    /// stencil; the boundary nodes fall back to one-sided differences.
    pub fn gradient_x(&self, t: f64, x: f64, y: f64, state: usize) -> Result<f64> {
        let sh = self.shape();
        if state >= sh.n_states {
            return Err(Error::OutOfDomain(format!("tax state {state}")));
        }
        if t < -1e-12 || t > self.horizon() + 1e-12 {
            return Err(Error::OutOfDomain(format!("t = {t}")));
        }
        if x < self.grid.x_min - 1e-12 || x > self.grid.x_max + 1e-12 {
            return Err(Error::OutOfDomain(format!("x = {x}")));
        }
        let ti = nearest_index(&self.times, t);
        let yi = match &self.grid.y_axis {
            None => 0,
            Some(a) => {
                if y < a.y_min - 1e-12 || y > a.y_max + 1e-12 {
                    return Err(Error::OutOfDomain(format!("y = {y}")));
                }
                let dy = (a.y_max - a.y_min) / (a.n_y - 1) as f64;
                (((y - a.y_min) / dy).round() as usize).min(a.n_y - 1)
            }
        };
        let dx = self.grid.dx();
        let u = ((x - self.grid.x_min) / dx).clamp(0.0, (sh.n_x - 1) as f64);
        let node = |j: usize| self.values[sh.idx(ti, state, yi, j)];
        let grad_at = |j: usize| -> f64 {
            if j == 0 {
                (node(1) - node(0)) / dx
            } else if j == sh.n_x - 1 {
                (node(sh.n_x - 1) - node(sh.n_x - 2)) / dx
            } else {
                (node(j + 1) - node(j - 1)) / (2.0 * dx)
            }
        };
        let j = u.floor() as usize;
        if j >= sh.n_x - 1 {
            return Ok(grad_at(sh.n_x - 1));
        }
        let w = u - j as f64;
        Ok(grad_at(j) * (1.0 - w) + grad_at(j + 1) * w)
    }
}

impl PolicyGrid {
    /// Interpolated feedback controls at `(t, x, y)` for a regime. The
    /// returned flag is true when the spatial point had to be clamped to
    /// the grid boundary.
    pub fn sample(
        &self,
        value: &ValueGrid,
        t: f64,
        x: f64,
        y: f64,
        state: usize,
    ) -> (f64, f64, bool) {
        let (g, c1) = sample(value.grid_view(&self.invest_rate), t, x, y, state);
        let (q, c2) = sample(value.grid_view(&self.output), t, x, y, state);
        (g, q, c1 || c2)
    }

    /// Interpolated worst-case tax for game policies.
    pub fn sample_tax(&self, value: &ValueGrid, t: f64, x: f64, y: f64) -> Option<f64> {
        let tax = self.tax.as_ref()?;
        Some(sample(value.grid_view(tax), t, x, y, 0).0)
    }
}

struct GridView<'a> {
    grid: &'a GridSpec,
    times: &'a [f64],
    shape: GridShape,
    data: &'a [f64],
}

fn nearest_index(values: &[f64], v: f64) -> usize {
    let k = values.partition_point(|&w| w < v);
    if k == 0 {
        return 0;
    }
    if k >= values.len() {
        return values.len() - 1;
    }
    if (v - values[k - 1]).abs() <= (values[k] - v).abs() {
        k - 1
    } else {
        k
    }
}

/// Trilinear interpolation with boundary clamping; reports whether the
/// spatial point lay outside the grid.
fn sample(view: GridView<'_>, t: f64, x: f64, y: f64, state: usize) -> (f64, bool) {
    let sh = view.shape;
    debug_assert!(state < sh.n_states);
    let mut clamped = false;

    // time bracket (stored times are sorted, not necessarily uniform)
    let (t0, t1, wt) = {
        let k = view.times.partition_point(|&s| s <= t);
        if k == 0 {
            (0, 0, 0.0)
        } else if k >= sh.n_t {
            (sh.n_t - 1, sh.n_t - 1, 0.0)
        } else {
            let lo = k - 1;
            let span = view.times[k] - view.times[lo];
            let w = if span > 0.0 {
                (t - view.times[lo]) / span
            } else {
                0.0
            };
            (lo, k, w)
        }
    };

    let dx = view.grid.dx();
    let mut u = (x - view.grid.x_min) / dx;
    if u < 0.0 || u > (sh.n_x - 1) as f64 {
        clamped = true;
        u = u.clamp(0.0, (sh.n_x - 1) as f64);
    }
    let xj = (u.floor() as usize).min(sh.n_x - 2);
    let wx = (u - xj as f64).clamp(0.0, 1.0);

    let (yk, wy) = match &view.grid.y_axis {
        None => (0usize, 0.0),
        Some(a) => {
            let dy = (a.y_max - a.y_min) / (a.n_y - 1) as f64;
            let mut v = (y - a.y_min) / dy;
            if v < 0.0 || v > (a.n_y - 1) as f64 {
                clamped = true;
                v = v.clamp(0.0, (a.n_y - 1) as f64);
            }
            let k = (v.floor() as usize).min(a.n_y - 2);
            (k, (v - k as f64).clamp(0.0, 1.0))
        }
    };

    let plane = |ti: usize| -> f64 {
        let at = |yy: usize, xx: usize| view.data[sh.idx(ti, state, yy, xx)];
        let row = |yy: usize| at(yy, xj) * (1.0 - wx) + at(yy, xj + 1) * wx;
        if sh.n_y == 1 {
            row(0)
        } else {
            row(yk) * (1.0 - wy) + row(yk + 1) * wy
        }
    };
    let v = if t0 == t1 {
        plane(t0)
    } else {
        plane(t0) * (1.0 - wt) + plane(t1) * wt
    };
    (v, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_grid(n_x: usize, f: impl Fn(f64) -> f64) -> ValueGrid {
        let grid = GridSpec {
            x_min: 0.0,
            x_max: 2.0,
            n_x,
            y_axis: None,
            n_t: 1,
            theta_scheme: 1.0,
        };
        let xs = grid.x_values();
        let values: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let mut all = values.clone();
        all.extend_from_slice(&values);
        ValueGrid {
            grid,
            times: vec![0.0, 1.0],
            tax_states: vec![0.0],
            values: all,
            model_hash: 0,
        }
    }

    #[test]
    fn gradient_exact_on_linear_field() {
        let vg = linear_grid(21, |x| 2.0 * x);
        for x in [0.15, 0.5, 1.0, 1.77] {
            assert_relative_eq!(vg.gradient_x(0.0, x, 0.0, 0).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_central_difference_is_exact_on_quadratics_at_nodes() {
        let vg = linear_grid(21, |x| x * x);
        // interior node x = 1.0: central difference of x^2 is exact
        assert_relative_eq!(
            vg.gradient_x(0.0, 1.0, 0.0, 0).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        // boundary node: one-sided, O(dx) error accepted
        let dx = 0.1;
        let g = vg.gradient_x(0.0, 0.0, 0.0, 0).unwrap();
        assert_relative_eq!(g, dx, epsilon = 1e-12);
    }

    #[test]
    fn gradient_rejects_out_of_domain() {
        let vg = linear_grid(11, |x| x);
        assert!(vg.gradient_x(0.0, 3.0, 0.0, 0).is_err());
        assert!(vg.gradient_x(-0.5, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn sampling_interpolates_and_clamps() {
        let vg = linear_grid(21, |x| 3.0 * x + 1.0);
        assert_relative_eq!(vg.sample_value(0.0, 0.5, 0.0, 0), 2.5, epsilon = 1e-12);
        // clamped beyond the right edge
        assert_relative_eq!(vg.sample_value(0.0, 5.0, 0.0, 0), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn budget_matches_reported_constants() {
        // filter parameters: L_pi = Q(4) * 0.2 * 0.5 = 1
        let b = LipschitzBudget::new(1.0, 0.0, 0.02, 0.05, 15.0, 0.5);
        assert_relative_eq!(
            b.value_lipschitz,
            (1.0 - (-1.05_f64).exp()) / 0.07,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            b.control_cap,
            1.1 * (b.value_lipschitz - 1.0),
            max_relative = 1e-12
        );
        // degenerate: slope below one means never invest
        let b = LipschitzBudget::new(0.0, 1.0, 0.02, 0.05, 15.0, 0.5);
        assert_relative_eq!(b.control_cap, 1.1e-6, max_relative = 1e-12);
        assert_relative_eq!(control_cap(3.0, 0.5), 2.2, max_relative = 1e-12);
    }
}
