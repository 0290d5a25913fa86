//! Scenario configuration: a single JSON document with `model`, `tax`,
//! `grid`, `sim` and `outputs` sections, plus the named presets mirroring
//! the experiment parameterisations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::UncertaintySpec;
use crate::grid::GridSpec;
use crate::model::{
    EconomicParams, FilterTech, ModelSpec, PriceSpec, RebateSpec, ResidualValueSpec,
    TechnologySpec, TwoTechParams,
};
use crate::sim::SimConfig;
use crate::tax::{BenchmarkSpec, TaxChain};

/// Exactly one tax-mode section must be present: a Markov chain (tax
/// risk), a deterministic benchmark schedule, or an uncertainty band (the
/// differential game).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxMode {
    Chain(TaxChain),
    Benchmark(BenchmarkSpec),
    Uncertainty(UncertaintySpec),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Output directory; the CLI falls back to `--out`, then to the
    /// `ABATEMENT_OUT` environment variable, then to `./out`.
    #[serde(default)]
    pub directory: Option<PathBuf>,
    /// Requested artifact names (advisory; commands write their defaults).
    #[serde(default)]
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub tax: TaxMode,
    /// Discretisation; derived from the model when absent.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The grid to solve on: the configured one, or the model defaults.
    pub fn resolved_grid(&self) -> GridSpec {
        self.grid
            .clone()
            .unwrap_or_else(|| GridSpec::default_for(&self.model))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match &self.tax {
            TaxMode::Chain(chain) => chain.validate("tax.chain")?,
            TaxMode::Benchmark(b) => b.validate("tax.benchmark")?,
            TaxMode::Uncertainty(u) => u.validate("tax.uncertainty")?,
        }
        self.resolved_grid().validate("grid", &self.model)?;
        self.sim.validate("sim", self.model.econ.horizon)?;
        Ok(())
    }

    /// Largest tax level this scenario can produce.
    pub fn tau_max(&self) -> f64 {
        match &self.tax {
            TaxMode::Chain(chain) => chain.max_state(),
            TaxMode::Benchmark(b) => b.value_at(0.0).max(b.value_at(self.model.econ.horizon)),
            TaxMode::Uncertainty(u) => u.tau_max.max_value(),
        }
    }
}

/// Names of the built-in presets.
pub fn preset_names() -> &'static [&'static str] {
    &[
        "filter_tax_increase",
        "filter_tax_reversal",
        "twotech_tax_increase",
        "twotech_tax_reversal",
        "twotech_uncertainty",
    ]
}

/// Returns a built-in preset by name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "filter_tax_increase" => filter_preset(TaxChain::two_state(0.0, 0.2, 0.25, 0.0, false)),
        "filter_tax_reversal" => filter_preset(TaxChain::two_state(0.0, 0.2, 0.25, 0.25, true)),
        "twotech_tax_increase" => twotech_preset(TaxMode::Chain(TaxChain::two_state(
            0.0, 1.0, 0.25, 0.0, false,
        ))),
        "twotech_tax_reversal" => twotech_preset(TaxMode::Chain(TaxChain::two_state(
            0.0, 1.0, 0.25, 0.25, true,
        ))),
        "twotech_uncertainty" => {
            let mut cfg = twotech_preset(TaxMode::Uncertainty(UncertaintySpec::constant(
                0.5, 1.5, 1.0, 1.0,
            )));
            cfg.model.econ.horizon = 10.0;
            cfg.model.econ.min_output = 5.0;
            cfg.sim.checkpoints = vec![5.0, 10.0];
            // the equilibrium reward has band-clipping kinks that first-order
            // upwinding smears; the one-dimensional solve is cheap, so the
            // preset buys accuracy with a fine investment axis
            cfg.grid = Some(GridSpec {
                x_min: 0.0,
                x_max: 100.0,
                n_x: 6401,
                y_axis: None,
                n_t: 2400,
                theta_scheme: 1.0,
            });
            cfg.sim.n_steps = 600;
            cfg
        }
        _ => return None,
    };
    let mut cfg = cfg;
    cfg.name = Some(name.to_string());
    Some(cfg)
}

/// Filter-technology scenario: fixed output 4, constant price, two-state
/// tax chain with high level 0.2.
fn filter_preset(chain: TaxChain) -> ScenarioConfig {
    ScenarioConfig {
        name: None,
        model: ModelSpec {
            econ: EconomicParams {
                discount_rate: 0.02,
                depreciation: 0.05,
                noise_vol: 0.05,
                transaction_cost: 0.5,
                horizon: 15.0,
                max_output: 4.0,
                min_output: 0.0,
                fixed_output: Some(4.0),
                initial_investment: 0.0,
            },
            tech: TechnologySpec::Filter(FilterTech {
                input_coeff: 1.25,
                input_cost: 1.0,
                base_emission: 1.5,
                abatement_slope: 0.5,
            }),
            rebate: RebateSpec::NoRebate,
            price: PriceSpec::Constant { price: 5.0 },
            residual: ResidualValueSpec::Zero,
        },
        tax: TaxMode::Chain(chain),
        grid: None,
        sim: SimConfig {
            seed: 7,
            ..SimConfig::default()
        },
        outputs: OutputSpec::default(),
    }
}

/// Filter scenario with endogenous output, mean-reverting price and the
/// half-abatement rebate available; used by the investment tables.
pub fn filter_endogenous(chain: TaxChain, rebate: bool) -> ScenarioConfig {
    let mut cfg = filter_preset(chain);
    cfg.model.econ.fixed_output = None;
    cfg.model.price = PriceSpec::OuLog {
        reversion: 1.0,
        long_run_log: 5.0_f64.ln(),
        vol: 0.1,
        initial_price: 5.0,
    };
    if rebate {
        cfg.model.rebate = RebateSpec::FilterHalf;
    }
    cfg
}

/// Two-technology scenario: endogenous output, constant price 2.1,
/// positive residual value. Paths start at the green fixed-cost threshold:
/// below it the marginal product of investment is zero and the barrier is
/// never worth crossing, so the interesting dynamics (and the reported
/// investment levels) live beyond it.
fn twotech_preset(tax: TaxMode) -> ScenarioConfig {
    ScenarioConfig {
        name: None,
        model: ModelSpec {
            econ: EconomicParams {
                discount_rate: 0.04,
                depreciation: 0.02,
                noise_vol: 0.2,
                transaction_cost: 0.5,
                horizon: 15.0,
                max_output: 10.0,
                min_output: 0.0,
                fixed_output: None,
                initial_investment: 20.0,
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
            rebate: RebateSpec::NoRebate,
            price: PriceSpec::Constant { price: 2.1 },
            residual: ResidualValueSpec::LinearPositive { slope: 0.7 },
        },
        tax,
        grid: None,
        sim: SimConfig {
            seed: 7,
            ..SimConfig::default()
        },
        outputs: OutputSpec::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name.as_deref(), Some(*name));
        }
        assert!(preset("unknown").is_none());
    }

    #[test]
    fn config_round_trips_through_json() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            let json = cfg.to_json();
            let back = ScenarioConfig::from_json(&json).unwrap();
            assert_eq!(cfg, back, "round trip changed {name}");
        }
    }

    #[test]
    fn missing_tax_section_is_reported() {
        let text = r#"{ "model": {}, "sim": {} }"#;
        let err = ScenarioConfig::from_json(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("config"), "{msg}");
    }

    #[test]
    fn default_grids_match_technology() {
        let f = preset("filter_tax_increase").unwrap();
        let g = f.resolved_grid();
        assert_eq!((g.x_min, g.x_max, g.n_x), (-1.0, 12.0, 201));
        assert!(g.y_axis.is_none());
        let t = preset("twotech_tax_increase").unwrap();
        let g = t.resolved_grid();
        assert_eq!((g.x_min, g.x_max), (0.0, 100.0));
        // endogenous filter uses a factor axis covering the stationary band
        let e = filter_endogenous(TaxChain::two_state(0.0, 0.2, 0.25, 0.0, false), true);
        let g = e.resolved_grid();
        let axis = g.y_axis.expect("factor axis");
        let mu = 5.0_f64.ln();
        let sd = 0.1 / (2.0_f64).sqrt();
        assert!(axis.y_min <= mu - 4.0 * sd + 1e-12);
        assert!(axis.y_max >= mu + 4.0 * sd - 1e-12);
        e.validate().unwrap();
    }

    #[test]
    fn tau_max_per_mode() {
        assert_eq!(preset("filter_tax_increase").unwrap().tau_max(), 0.2);
        assert_eq!(preset("twotech_uncertainty").unwrap().tau_max(), 1.5);
        let mut cfg = preset("filter_tax_increase").unwrap();
        cfg.tax = TaxMode::Benchmark(BenchmarkSpec::LinearIncreasing { slope: 0.0197 });
        assert!((cfg.tau_max() - 0.2955).abs() < 1e-4);
    }
}
