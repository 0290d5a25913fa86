//! Browser demo: three interactive views over the abatement toolkit,
//! rendered as SVG strings for a single static page.
//!
//! Each exported function takes a JSON parameter object and returns a
//! standalone SVG document. The heavy lifting (profit layer, saddle
//! points, a coarse HJB solve with one simulated path) runs in the wasm
//! module itself; the page only wires sliders to re-renders.

// validation predicates negate comparisons so that NaN inputs fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use abatement::game::{saddle_point, UncertaintySpec};
use abatement::hjb::solve_hjb;
use abatement::plot::{render_figure, LinePlot, Series, Span};
use abatement::scenario::{preset, TaxMode};
use abatement::sim::{simulate_paths, PolicyRef, SimConfig, TaxDriver};
use abatement::{GridSpec, RebateSpec, TechnologySpec};
use serde::Deserialize;
use wasm_bindgen::prelude::*;

const RED: &str = "#c0392b";
const BLUE: &str = "#2e6da4";

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad parameters: {e}"))
}

/// Filter technology: residual emission factor and the instantaneous
/// optimum as functions of the investment level.
#[derive(Deserialize)]
pub struct EmissionParams {
    #[serde(default = "default_tax")]
    pub tax: f64,
    #[serde(default = "default_price")]
    pub price: f64,
    #[serde(default = "default_slope")]
    pub abatement_slope: f64,
}

fn default_tax() -> f64 {
    0.2
}
fn default_price() -> f64 {
    5.0
}
fn default_slope() -> f64 {
    0.5
}

pub fn emission_view(p: &EmissionParams) -> Result<String, String> {
    if !(p.tax >= 0.0 && p.price > 0.0 && p.abatement_slope >= 0.0) {
        return Err("tax >= 0, price > 0 and abatement_slope >= 0 required".into());
    }
    let mut cfg = preset("filter_tax_increase").expect("preset");
    cfg.model.econ.fixed_output = None;
    cfg.model.price = abatement::PriceSpec::Constant { price: p.price };
    let TechnologySpec::Filter(ref mut tech) = cfg.model.tech else {
        unreachable!()
    };
    tech.abatement_slope = p.abatement_slope;
    let tech = tech.clone();
    let model = &cfg.model;

    let xs: Vec<f64> = (0..=240).map(|i| -1.0 + 13.0 * i as f64 / 240.0).collect();
    let factor: Vec<f64> = xs.iter().map(|&x| tech.emission_factor(x)).collect();
    let mut output = Vec::with_capacity(xs.len());
    let mut profit = Vec::with_capacity(xs.len());
    for &x in &xs {
        let r = model.optimal_output(x, 0.0, p.tax, 0.0, model.econ.max_output);
        output.push(r.output);
        profit.push(r.profit);
    }

    let mut top = LinePlot::new(
        "Residual emission factor",
        "investment level",
        "tons CO2 per input unit",
    );
    top.series
        .push(Series::new("factor", xs.clone(), factor, RED, false));
    let mut bottom = LinePlot::new(
        &format!("Optimal output and profit at tax {:.2}", p.tax),
        "investment level",
        "output / profit",
    );
    bottom.series.push(Series::new(
        "optimal output",
        xs.clone(),
        output,
        BLUE,
        false,
    ));
    bottom
        .series
        .push(Series::new("maximised profit", xs, profit, RED, true));
    Ok(render_figure(&[top, bottom]))
}

/// Saddle-point explorer for the tax-uncertainty game.
#[derive(Deserialize)]
pub struct SaddleParams {
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default = "default_alpha")]
    pub rebate_alpha: f64,
}

fn default_penalty() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}

pub fn saddle_view(p: &SaddleParams) -> Result<String, String> {
    if !(p.penalty > 0.0) {
        return Err("penalty must be > 0".into());
    }
    if !(0.0..=1.0).contains(&p.rebate_alpha) {
        return Err("rebate_alpha must lie in [0, 1]".into());
    }
    let base = preset("twotech_uncertainty").expect("preset");
    let unc = UncertaintySpec::constant(0.5, 1.5, 1.0, p.penalty);
    let mut q_panel = LinePlot::new("Equilibrium output q(x)", "investment level", "output");
    let mut tau_panel = LinePlot::new("Worst-case tax tau(x)", "investment level", "tax rate");
    let xs: Vec<f64> = (0..=240).map(|i| 60.0 * i as f64 / 240.0).collect();
    for (alpha, label, color, dashed) in [
        (0.0, "no rebate".to_string(), BLUE, true),
        (
            p.rebate_alpha,
            format!("rebate alpha = {:.2}", p.rebate_alpha),
            RED,
            false,
        ),
    ] {
        let mut model = base.model.clone();
        model.rebate = if alpha > 0.0 {
            RebateSpec::TwoTechAlpha { alpha }
        } else {
            RebateSpec::NoRebate
        };
        let mut q_hat = Vec::with_capacity(xs.len());
        let mut tau_hat = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (q, tau, _) = saddle_point(&model, &unc, 0.0, x, 0.0).map_err(|e| e.to_string())?;
            q_hat.push(q);
            tau_hat.push(tau);
        }
        q_panel
            .series
            .push(Series::new(&label, xs.clone(), q_hat, color, dashed));
        tau_panel
            .series
            .push(Series::new(&label, xs.clone(), tau_hat, color, dashed));
    }
    Ok(render_figure(&[q_panel, tau_panel]))
}

/// Coarse tax-risk solve plus one simulated path: the hedging behaviour
/// under a random tax switch, interactively in the browser.
#[derive(Deserialize)]
pub struct PolicyParams {
    #[serde(default = "default_kappa")]
    pub transaction_cost: f64,
    #[serde(default = "default_intensity")]
    pub jump_intensity: f64,
    #[serde(default)]
    pub reversal: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_kappa() -> f64 {
    0.5
}
fn default_intensity() -> f64 {
    0.25
}
fn default_seed() -> u64 {
    7
}

pub fn policy_view(p: &PolicyParams) -> Result<String, String> {
    if !(p.transaction_cost > 0.0) {
        return Err("transaction_cost must be > 0".into());
    }
    if !(p.jump_intensity >= 0.0 && p.jump_intensity <= 5.0) {
        return Err("jump_intensity must lie in [0, 5]".into());
    }
    let mut cfg = preset(if p.reversal {
        "filter_tax_reversal"
    } else {
        "filter_tax_increase"
    })
    .expect("preset");
    cfg.model.econ.transaction_cost = p.transaction_cost;
    let TaxMode::Chain(ref mut chain) = cfg.tax else {
        unreachable!()
    };
    if p.reversal {
        chain.generator = vec![-0.25, 0.25, p.jump_intensity, -p.jump_intensity];
    } else {
        chain.generator = vec![-p.jump_intensity, p.jump_intensity, 0.0, 0.0];
    }
    let chain = chain.clone();

    // coarse grid keeps the in-browser solve interactive
    let grid = GridSpec {
        x_min: -1.0,
        x_max: 12.0,
        n_x: 81,
        y_axis: None,
        n_t: 240,
        theta_scheme: 1.0,
    };
    let res = solve_hjb(&cfg.model, &chain, &grid).map_err(|e| e.to_string())?;
    let sim = SimConfig {
        n_paths: 1,
        n_steps: 150,
        seed: p.seed,
        checkpoints: vec![],
        retain_paths: 1,
    };
    let ens = simulate_paths(
        &cfg.model,
        PolicyRef::Grid {
            value: &res.value,
            policy: &res.policy,
        },
        TaxDriver::Chain(&chain),
        &sim,
    )
    .map_err(|e| e.to_string())?;
    let traj = &ens.retained[0];

    let mut path_panel = LinePlot::new(
        "One simulated investment path (grey = high tax)",
        "time (years)",
        "investment level",
    );
    path_panel.spans = spans(&ens.times, &traj.tax);
    path_panel.series.push(Series::new(
        "investment",
        ens.times.clone(),
        traj.investment.clone(),
        RED,
        false,
    ));

    let xs = grid.x_values();
    let n_x = grid.n_x;
    let mut policy_panel = LinePlot::new(
        "Feedback investment rate at t = 0",
        "investment level",
        "rate",
    );
    for (state, label, color, dashed) in [
        (0usize, "low-tax state", BLUE, true),
        (1usize, "high-tax state", RED, false),
    ] {
        let rate: Vec<f64> = (0..n_x)
            .map(|j| res.policy.invest_rate[state * n_x + j])
            .collect();
        policy_panel
            .series
            .push(Series::new(label, xs.clone(), rate, color, dashed));
    }
    Ok(render_figure(&[path_panel, policy_panel]))
}

fn spans(times: &[f64], tax: &[f64]) -> Vec<Span> {
    let hi = tax.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lo = tax.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if hi - lo < 1e-12 {
        return Vec::new();
    }
    let cut = 0.5 * (lo + hi);
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    for (k, &tau) in tax.iter().enumerate() {
        match (tau > cut, open) {
            (true, None) => open = Some(times[k]),
            (false, Some(from)) => {
                out.push(Span { from, to: times[k] });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(from) = open {
        out.push(Span {
            from,
            to: *times.last().unwrap(),
        });
    }
    out
}

#[wasm_bindgen]
pub fn emission_explorer(params_json: &str) -> Result<String, JsValue> {
    let params: EmissionParams = parse(params_json).map_err(|e| JsValue::from_str(&e))?;
    emission_view(&params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn saddle_explorer(params_json: &str) -> Result<String, JsValue> {
    let params: SaddleParams = parse(params_json).map_err(|e| JsValue::from_str(&e))?;
    saddle_view(&params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn policy_explorer(params_json: &str) -> Result<String, JsValue> {
    let params: PolicyParams = parse(params_json).map_err(|e| JsValue::from_str(&e))?;
    policy_view(&params).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emission_view_renders_svg() {
        let p: EmissionParams = serde_json::from_str("{}").unwrap();
        let svg = emission_view(&p).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
        assert!(svg.contains("Residual emission factor"));
    }

    #[test]
    fn saddle_view_renders_and_validates() {
        let p: SaddleParams = serde_json::from_str(r#"{"penalty": 20.0}"#).unwrap();
        let svg = saddle_view(&p).unwrap();
        assert!(svg.contains("Worst-case tax"));
        let bad: SaddleParams = serde_json::from_str(r#"{"penalty": 0.0}"#).unwrap();
        assert!(saddle_view(&bad).is_err());
    }

    #[test]
    fn policy_view_solves_and_plots_a_path() {
        let p: PolicyParams =
            serde_json::from_str(r#"{"transaction_cost": 0.2, "jump_intensity": 0.4}"#).unwrap();
        let svg = policy_view(&p).unwrap();
        assert!(svg.contains("simulated investment path"));
        assert!(svg.contains(r#"height="720""#));
    }

    #[test]
    fn malformed_json_is_reported() {
        let r: Result<EmissionParams, _> = parse::<EmissionParams>("{not json");
        assert!(r.is_err());
    }
}
