//! Problem instance and the instantaneous-profit layer.
//!
//! A producer sells electricity at price `p(y)`, pays production cost
//! `C0(q, x)` plus emission taxes `C1(q, x) * tau`, and may receive an
//! emission-independent rebate `nu0(q) * tau`. The instantaneous profit is
//!
//! ```text
//! profit(q, x, y, tau) = p(y) q - C0(q, x) - C1(q, x) tau + nu0(q) tau
//! ```
//!
//! and `optimal_output` maximises it over the admissible output interval.
//! Two production technologies are supported: a brown plant that can be
//! retrofitted with filters, and a brown/green pair where investment builds
//! green capacity with zero marginal cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Economic parameters of the producer problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    /// Interest/discount rate (1/year).
    pub discount_rate: f64,
    /// Depreciation rate of the installed abatement capital (1/year).
    pub depreciation: f64,
    /// Volatility of the exogenous investment-value noise.
    pub noise_vol: f64,
    /// Quadratic transaction-cost coefficient on the investment rate.
    pub transaction_cost: f64,
    /// Horizon (years); interpreted as the lifetime of the plant.
    pub horizon: f64,
    /// Maximum electricity output (energy/year).
    pub max_output: f64,
    /// Minimum output, used in the game scenarios (contractual floor).
    #[serde(default)]
    pub min_output: f64,
    /// When set, output is not optimised but held at this level.
    #[serde(default)]
    pub fixed_output: Option<f64>,
    /// Initial investment level at t = 0.
    #[serde(default)]
    pub initial_investment: f64,
}

impl EconomicParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        let fail = |field: &str, msg: &str| -> Result<()> {
            Err(Error::validation(format!("{path}.{field}"), msg))
        };
        if !(self.discount_rate >= 0.0) {
            return fail("discount_rate", "must be >= 0");
        }
        if !(self.depreciation >= 0.0 && self.depreciation < 1.0) {
            return fail("depreciation", "must lie in [0, 1)");
        }
        if !(self.noise_vol >= 0.0) {
            return fail("noise_vol", "must be >= 0");
        }
        if !(self.transaction_cost > 0.0) {
            return fail("transaction_cost", "must be > 0");
        }
        if !(self.horizon > 0.0) {
            return fail("horizon", "must be > 0");
        }
        if !(self.min_output >= 0.0 && self.min_output < self.max_output) {
            return fail("min_output", "requires 0 <= min_output < max_output");
        }
        if let Some(q) = self.fixed_output {
            if !(q >= self.min_output && q <= self.max_output) {
                return fail("fixed_output", "must lie in [min_output, max_output]");
            }
        }
        if !self.initial_investment.is_finite() {
            return fail("initial_investment", "must be finite");
        }
        Ok(())
    }

    /// Output bounds used by the optimiser; collapses to a point in
    /// fixed-output mode.
    pub fn output_bounds(&self) -> (f64, f64) {
        match self.fixed_output {
            Some(q) => (q, q),
            None => (self.min_output, self.max_output),
        }
    }
}

/// Filter (carbon capture) retrofit technology.
///
/// Producing `q` units needs `input_coeff * q^{3/2}` units of raw material;
/// each unit costs `input_cost` dollars and emits `base_emission` tons of
/// CO2, reduced by the installed filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTech {
    /// Coefficient of the raw-material requirement `Q(q) = a q^{3/2}`.
    pub input_coeff: f64,
    /// Cost per unit of raw material (dollars).
    pub input_cost: f64,
    /// Emission per unit of raw material without filters (tons CO2).
    pub base_emission: f64,
    /// Initial slope of the emission reduction in the investment level.
    pub abatement_slope: f64,
}

impl FilterTech {
    /// Raw material needed for output `q`.
    pub fn input_quantity(&self, q: f64) -> f64 {
        self.input_coeff * q.powf(1.5)
    }

    fn input_quantity_slope(&self, q: f64) -> f64 {
        1.5 * self.input_coeff * q.max(0.0).sqrt()
    }

    /// Residual emission factor per unit of raw material at investment `x`.
    ///
    /// Evaluates `e0 * ((1 - e1 x / (2 e0))^+)^2`: a perfect square that
    /// decreases smoothly from `e0` at `x = 0` to zero at `x = 2 e0 / e1`
    /// and stays zero beyond. Negative `x` (possible through the investment
    /// noise) raises the factor above `e0`; no state clamping is applied.
    pub fn emission_factor(&self, x: f64) -> f64 {
        if self.abatement_slope == 0.0 {
            return self.base_emission;
        }
        let root = (1.0 - self.abatement_slope * x / (2.0 * self.base_emission)).max(0.0);
        self.base_emission * root * root
    }

    /// Derivative of `emission_factor` with respect to `x`.
    pub fn emission_factor_slope(&self, x: f64) -> f64 {
        if self.abatement_slope == 0.0 {
            return 0.0;
        }
        let root = (1.0 - self.abatement_slope * x / (2.0 * self.base_emission)).max(0.0);
        -self.abatement_slope * root
    }

    /// Investment level at which emissions are fully abated.
    pub fn full_abatement_level(&self) -> f64 {
        2.0 * self.base_emission / self.abatement_slope
    }
}

/// Brown/green technology pair: investment builds green capacity with zero
/// marginal cost; residual demand is served by the brown plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTechParams {
    /// Cost per unit of brown input (dollars).
    pub brown_input_cost: f64,
    /// Emission per unit of brown input (tons CO2).
    pub brown_emission: f64,
    /// Coefficient of the brown input requirement `Q_b(q) = a_b q^{3/2}`.
    pub brown_input_coeff: f64,
    /// Green productivity per unit of investment beyond the threshold.
    pub green_productivity: f64,
    /// Fixed-cost threshold: investment below it produces no green output.
    pub green_threshold: f64,
    /// Softplus width used to smooth the capacity kink at the threshold.
    #[serde(default = "default_smooth_width")]
    pub smooth_width: f64,
    /// Constant part of the green maintenance cost (default 0).
    #[serde(default)]
    pub maintenance_base: f64,
    /// Slope of the green maintenance cost in the investment level.
    #[serde(default)]
    pub maintenance_slope: f64,
}

fn default_smooth_width() -> f64 {
    1.0
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl TwoTechParams {
    /// Smoothed green production capacity at investment level `x`.
    ///
    /// `p_g * s * softplus((x - threshold)/s)`: increasing, smooth, and
    /// asymptotic to the piecewise-linear capacity as `x` moves away from
    /// the threshold.
    pub fn green_capacity(&self, x: f64) -> f64 {
        let s = self.smooth_width;
        self.green_productivity * s * softplus((x - self.green_threshold) / s)
    }

    /// Derivative of `green_capacity` with respect to `x`.
    pub fn green_capacity_slope(&self, x: f64) -> f64 {
        self.green_productivity * sigmoid((x - self.green_threshold) / self.smooth_width)
    }

    /// Brown input needed to serve output `w` (already net of green).
    pub fn brown_input(&self, w: f64) -> f64 {
        self.brown_input_coeff * w.max(0.0).powf(1.5)
    }

    fn brown_input_slope(&self, w: f64) -> f64 {
        1.5 * self.brown_input_coeff * w.max(0.0).sqrt()
    }

    /// Green maintenance cost, affine in `x` and floored at zero.
    pub fn maintenance(&self, x: f64) -> f64 {
        (self.maintenance_base + self.maintenance_slope * x).max(0.0)
    }
}

/// Production technology variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TechnologySpec {
    Filter(FilterTech),
    TwoTech(TwoTechParams),
}

impl TechnologySpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            TechnologySpec::Filter(f) => {
                if !(f.input_coeff > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.input_coeff"),
                        "must be > 0",
                    ));
                }
                for (name, v) in [
                    ("input_cost", f.input_cost),
                    ("base_emission", f.base_emission),
                    ("abatement_slope", f.abatement_slope),
                ] {
                    if !(v >= 0.0) {
                        return Err(Error::validation(format!("{path}.{name}"), "must be >= 0"));
                    }
                }
                if f.abatement_slope > 0.0 && !(f.base_emission > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.base_emission"),
                        "must be > 0 when abatement_slope > 0",
                    ));
                }
            }
            TechnologySpec::TwoTech(t) => {
                if !(t.brown_input_coeff > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.brown_input_coeff"),
                        "must be > 0",
                    ));
                }
                if !(t.green_productivity > 0.0 && t.green_productivity < 1.0) {
                    return Err(Error::validation(
                        format!("{path}.green_productivity"),
                        "must lie in (0, 1)",
                    ));
                }
                if !(t.smooth_width > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.smooth_width"),
                        "must be > 0",
                    ));
                }
                for (name, v) in [
                    ("brown_input_cost", t.brown_input_cost),
                    ("brown_emission", t.brown_emission),
                    ("green_threshold", t.green_threshold),
                    ("maintenance_base", t.maintenance_base),
                    ("maintenance_slope", t.maintenance_slope),
                ] {
                    if !(v >= 0.0) {
                        return Err(Error::validation(format!("{path}.{name}"), "must be >= 0"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tax-rebate variants. The rebate pays `nu0(q) * tau` independently of the
/// producer's actual emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RebateSpec {
    NoRebate,
    /// `nu0(q) = Q(q) e0 / 2`: tax is fully refunded once half of the
    /// emissions are abated (filter technology only).
    FilterHalf,
    /// `nu0(q) = e_b Q_b(alpha q)`: rebate exceeds tax payments as soon as
    /// more than the fraction `1 - alpha` of output is produced green
    /// (two-technology case only).
    TwoTechAlpha {
        alpha: f64,
    },
}

/// Electricity price variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceSpec {
    Constant {
        price: f64,
    },
    /// `p_t = exp(Y_t)` with `dY = theta (mu - Y) dt + alpha dB`.
    OuLog {
        reversion: f64,
        long_run_log: f64,
        vol: f64,
        initial_price: f64,
    },
}

impl PriceSpec {
    /// Price for a given value of the log-price factor. The factor is
    /// ignored for constant prices.
    pub fn price(&self, y: f64) -> f64 {
        match self {
            PriceSpec::Constant { price } => *price,
            PriceSpec::OuLog { .. } => y.exp(),
        }
    }

    /// Initial value of the factor process, if there is one.
    pub fn initial_log(&self) -> Option<f64> {
        match self {
            PriceSpec::Constant { .. } => None,
            PriceSpec::OuLog { initial_price, .. } => Some(initial_price.ln()),
        }
    }

    pub fn has_factor(&self) -> bool {
        matches!(self, PriceSpec::OuLog { .. })
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            PriceSpec::Constant { price } => {
                if !(*price > 0.0) {
                    return Err(Error::validation(format!("{path}.price"), "must be > 0"));
                }
            }
            PriceSpec::OuLog {
                reversion,
                vol,
                initial_price,
                long_run_log,
            } => {
                if !(*reversion > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.reversion"),
                        "must be > 0",
                    ));
                }
                if !(*vol >= 0.0) {
                    return Err(Error::validation(format!("{path}.vol"), "must be >= 0"));
                }
                if !(*initial_price > 0.0) {
                    return Err(Error::validation(
                        format!("{path}.initial_price"),
                        "must be > 0",
                    ));
                }
                if !long_run_log.is_finite() {
                    return Err(Error::validation(
                        format!("{path}.long_run_log"),
                        "must be finite",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Residual value of the installed investment at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualValueSpec {
    Zero,
    LinearPositive { slope: f64 },
}

impl ResidualValueSpec {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ResidualValueSpec::Zero => 0.0,
            ResidualValueSpec::LinearPositive { slope } => (slope * x).max(0.0),
        }
    }

    /// Lipschitz constant of the residual value.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ResidualValueSpec::Zero => 0.0,
            ResidualValueSpec::LinearPositive { slope } => *slope,
        }
    }
}

/// The full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub econ: EconomicParams,
    pub tech: TechnologySpec,
    #[serde(default = "default_rebate")]
    pub rebate: RebateSpec,
    pub price: PriceSpec,
    #[serde(default = "default_residual")]
    pub residual: ResidualValueSpec,
}

fn default_rebate() -> RebateSpec {
    RebateSpec::NoRebate
}

fn default_residual() -> ResidualValueSpec {
    ResidualValueSpec::Zero
}

/// Output of the instantaneous optimisation: the maximiser and the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalOutput {
    pub output: f64,
    pub profit: f64,
}

const BISECT_TOL: f64 = 1e-10;

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.econ.validate("model.econ")?;
        self.tech.validate("model.tech")?;
        self.price.validate("model.price")?;
        match (&self.rebate, &self.tech) {
            (RebateSpec::FilterHalf, TechnologySpec::TwoTech(_)) => {
                return Err(Error::validation(
                    "model.rebate",
                    "filter_half rebate requires the filter technology",
                ));
            }
            (RebateSpec::TwoTechAlpha { .. }, TechnologySpec::Filter(_)) => {
                return Err(Error::validation(
                    "model.rebate",
                    "two_tech_alpha rebate requires the two-technology cost",
                ));
            }
            (RebateSpec::TwoTechAlpha { alpha }, _) if !(*alpha >= 0.0 && *alpha <= 1.0) => {
                return Err(Error::validation(
                    "model.rebate.alpha",
                    "must lie in [0, 1]",
                ));
            }
            _ => {}
        }
        if let ResidualValueSpec::LinearPositive { slope } = &self.residual {
            if !(*slope >= 0.0) {
                return Err(Error::validation("model.residual.slope", "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn price(&self, y: f64) -> f64 {
        self.price.price(y)
    }

    pub fn residual_value(&self, x: f64) -> f64 {
        self.residual.value(x)
    }

    /// Emission-free production cost `C0` and physical emission rate `C1`.
    pub fn cost_components(&self, q: f64, x: f64) -> Result<(f64, f64)> {
        self.check_output_domain(q)?;
        Ok(self.costs(q, x))
    }

    pub(crate) fn costs(&self, q: f64, x: f64) -> (f64, f64) {
        match &self.tech {
            TechnologySpec::Filter(f) => {
                let input = f.input_quantity(q);
                (input * f.input_cost, input * f.emission_factor(x))
            }
            TechnologySpec::TwoTech(t) => {
                let w = (q - t.green_capacity(x)).max(0.0);
                let brown = t.brown_input(w);
                (
                    t.maintenance(x) + t.brown_input_cost * brown,
                    t.brown_emission * brown,
                )
            }
        }
    }

    /// Physical emission rate `C1(q, x)` without the domain check.
    pub(crate) fn emission_rate(&self, q: f64, x: f64) -> f64 {
        self.costs(q, x).1
    }

    /// Rebate base `nu0(q)`.
    pub fn rebate_value(&self, q: f64) -> f64 {
        match (&self.rebate, &self.tech) {
            (RebateSpec::NoRebate, _) => 0.0,
            (RebateSpec::FilterHalf, TechnologySpec::Filter(f)) => {
                0.5 * f.input_quantity(q) * f.base_emission
            }
            (RebateSpec::TwoTechAlpha { alpha }, TechnologySpec::TwoTech(t)) => {
                t.brown_emission * t.brown_input(alpha * q)
            }
            // Incompatible pairs are rejected at validation time.
            _ => 0.0,
        }
    }

    fn rebate_slope(&self, q: f64) -> f64 {
        match (&self.rebate, &self.tech) {
            (RebateSpec::NoRebate, _) => 0.0,
            (RebateSpec::FilterHalf, TechnologySpec::Filter(f)) => {
                0.5 * f.input_quantity_slope(q) * f.base_emission
            }
            (RebateSpec::TwoTechAlpha { alpha }, TechnologySpec::TwoTech(t)) => {
                t.brown_emission * alpha * t.brown_input_slope(alpha * q)
            }
            _ => 0.0,
        }
    }

    /// Instantaneous profit `p(y) q - C0 - C1 tau + nu0(q) tau`.
    pub fn instantaneous_profit(&self, q: f64, x: f64, y: f64, tau: f64) -> Result<f64> {
        self.check_output_domain(q)?;
        if !(tau >= 0.0) {
            return Err(Error::validation("tau", "must be >= 0"));
        }
        Ok(self.profit_unchecked(q, x, y, tau))
    }

    pub(crate) fn profit_unchecked(&self, q: f64, x: f64, y: f64, tau: f64) -> f64 {
        let (c0, c1) = self.costs(q, x);
        self.price(y) * q - c0 - c1 * tau + self.rebate_value(q) * tau
    }

    /// Marginal profit in the output:
    /// `p(y) - dC0/dq - (dC1/dq - dnu0/dq) tau`.
    pub fn marginal_profit(&self, q: f64, x: f64, y: f64, tau: f64) -> f64 {
        let (dc0, dc1) = match &self.tech {
            TechnologySpec::Filter(f) => {
                let ds = f.input_quantity_slope(q);
                (ds * f.input_cost, ds * f.emission_factor(x))
            }
            TechnologySpec::TwoTech(t) => {
                let w = (q - t.green_capacity(x)).max(0.0);
                let ds = t.brown_input_slope(w);
                (t.brown_input_cost * ds, t.brown_emission * ds)
            }
        };
        self.price(y) - dc0 - (dc1 - self.rebate_slope(q)) * tau
    }

    /// Maximises the instantaneous profit over `[q_lo, q_hi]`.
    ///
    /// Boundary cases follow the sign of the marginal profit at the
    /// endpoints; interior optima are located by bisection on the marginal
    /// profit (closed forms are used for the filter technology, where they
    /// exist). `q_lo == q_hi` selects fixed-output mode.
    pub fn optimal_output(&self, x: f64, y: f64, tau: f64, q_lo: f64, q_hi: f64) -> OptimalOutput {
        debug_assert!(q_lo <= q_hi);
        if q_lo >= q_hi {
            return OptimalOutput {
                output: q_lo,
                profit: self.profit_unchecked(q_lo, x, y, tau),
            };
        }
        if let Some(q) = self.closed_form_output(x, y, tau) {
            let q = q.clamp(q_lo, q_hi);
            return OptimalOutput {
                output: q,
                profit: self.profit_unchecked(q, x, y, tau),
            };
        }
        if self.marginal_profit(q_lo, x, y, tau) <= 0.0 {
            return OptimalOutput {
                output: q_lo,
                profit: self.profit_unchecked(q_lo, x, y, tau),
            };
        }
        if self.marginal_profit(q_hi, x, y, tau) >= 0.0 {
            return OptimalOutput {
                output: q_hi,
                profit: self.profit_unchecked(q_hi, x, y, tau),
            };
        }
        let mut lo = q_lo;
        let mut hi = q_hi;
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            if self.marginal_profit(mid, x, y, tau) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        OptimalOutput {
            output: q,
            profit: self.profit_unchecked(q, x, y, tau),
        }
    }

    /// Unconstrained optimal output for the filter technology, where the
    /// first-order condition inverts in closed form.
    fn closed_form_output(&self, x: f64, y: f64, tau: f64) -> Option<f64> {
        let TechnologySpec::Filter(f) = &self.tech else {
            return None;
        };
        let rebate_cut = match &self.rebate {
            RebateSpec::NoRebate => 0.0,
            RebateSpec::FilterHalf => 0.5 * f.base_emission * tau,
            RebateSpec::TwoTechAlpha { .. } => return None,
        };
        let denom = f.input_cost + tau * f.emission_factor(x) - rebate_cut;
        if denom <= 0.0 {
            // Marginal profit never turns negative; the cap binds.
            return Some(f64::INFINITY);
        }
        let root = 2.0 * self.price(y) / (3.0 * f.input_coeff * denom);
        Some(root * root)
    }

    fn check_output_domain(&self, q: f64) -> Result<()> {
        if !(q >= 0.0 && q <= self.econ.max_output) {
            return Err(Error::validation(
                "q",
                format!("output {q} outside [0, {}]", self.econ.max_output),
            ));
        }
        Ok(())
    }

    /// Verifies that the marginal profit crosses zero at most once (from
    /// above) on the configured `(q, tau, x)` box, which is what the
    /// endpoint/bisection rule of `optimal_output` requires. With a
    /// convex rebate the profit need not be globally concave in the
    /// output, but a sign change back to positive would make the
    /// maximiser ill-defined; that situation is rejected here.
    pub fn check_output_single_crossing(
        &self,
        x_lo: f64,
        x_hi: f64,
        tau_max: f64,
        q_lo: f64,
        q_hi: f64,
    ) -> Result<()> {
        let scale = self
            .price
            .price(self.price.initial_log().unwrap_or(0.0))
            .abs()
            + 1.0;
        let tol = 1e-9 * scale;
        let taus = [0.0, 0.5 * tau_max, tau_max];
        for xi in 0..=32 {
            let x = x_lo + (x_hi - x_lo) * xi as f64 / 32.0;
            for &tau in &taus {
                let mut seen_negative = false;
                for qi in 0..=64 {
                    let q = q_lo + (q_hi - q_lo) * qi as f64 / 64.0;
                    let mp = self.marginal_profit(q, x, 0.0, tau);
                    if mp < -tol {
                        seen_negative = true;
                    } else if seen_negative && mp > tol {
                        return Err(Error::validation(
                            "model",
                            format!(
                                "marginal profit re-crosses zero at q={q:.4}, x={x:.4}, \
                                 tau={tau:.4}: the configured rebate breaks concavity of the \
                                 profit in the output"
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest tax level the profit layer has to support, used for the
    /// Lipschitz budget. Taken over chain states or the uncertainty band by
    /// the callers.
    pub fn is_filter(&self) -> bool {
        matches!(self.tech, TechnologySpec::Filter(_))
    }
}
