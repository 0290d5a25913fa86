//! Property-based invariants for the profit layer, the saddle-point maps,
//! the tax chain and the serialization formats.

use abatement::game::{game_reward, saddle_point, tau_best_response, UncertaintySpec};
use abatement::grid::lipschitz_profit_bound;
use abatement::hjb::hamiltonian_sup;
use abatement::scenario::{preset, ScenarioConfig};
use abatement::tax::TaxChain;
use abatement::{
    EconomicParams, FilterTech, ModelSpec, PriceSpec, RebateSpec, ResidualValueSpec,
    TechnologySpec, TwoTechParams,
};
use proptest::prelude::*;
use proptest::test_runner::Config as ProptestConfig;

fn filter_model(price: f64) -> ModelSpec {
    ModelSpec {
        econ: EconomicParams {
            discount_rate: 0.02,
            depreciation: 0.05,
            noise_vol: 0.05,
            transaction_cost: 0.5,
            horizon: 15.0,
            max_output: 4.0,
            min_output: 0.0,
            fixed_output: None,
            initial_investment: 0.0,
        },
        tech: TechnologySpec::Filter(FilterTech {
            input_coeff: 1.25,
            input_cost: 1.0,
            base_emission: 1.5,
            abatement_slope: 0.5,
        }),
        rebate: RebateSpec::NoRebate,
        price: PriceSpec::Constant { price },
        residual: ResidualValueSpec::Zero,
    }
}

fn twotech_model(alpha: f64) -> ModelSpec {
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
        rebate: if alpha > 0.0 {
            RebateSpec::TwoTechAlpha { alpha }
        } else {
            RebateSpec::NoRebate
        },
        price: PriceSpec::Constant { price: 2.1 },
        residual: ResidualValueSpec::LinearPositive { slope: 0.7 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// The maximised profit is Lipschitz in the investment level with the
    /// analytic budget constant.
    #[test]
    fn profit_lipschitz_bound_filter(
        x1 in 0.0..12.0f64,
        x2 in 0.0..12.0f64,
        tau in 0.0..0.2f64,
        price in 2.0..6.0f64,
    ) {
        let m = filter_model(price);
        let l_hat = lipschitz_profit_bound(&m, 0.2);
        let p1 = m.optimal_output(x1, 0.0, tau, 0.0, 4.0).profit;
        let p2 = m.optimal_output(x2, 0.0, tau, 0.0, 4.0).profit;
        prop_assert!((p1 - p2).abs() <= l_hat * (x1 - x2).abs() + 1e-9);
    }

    #[test]
    fn profit_lipschitz_bound_twotech(
        x1 in -5.0..100.0f64,
        x2 in -5.0..100.0f64,
        tau in 0.0..1.0f64,
    ) {
        let m = twotech_model(0.0);
        let l_hat = lipschitz_profit_bound(&m, 1.0);
        let p1 = m.optimal_output(x1, 0.0, tau, 0.0, 10.0).profit;
        let p2 = m.optimal_output(x2, 0.0, tau, 0.0, 10.0).profit;
        prop_assert!((p1 - p2).abs() <= l_hat * (x1 - x2).abs() + 1e-9);
    }

    /// Marginal profit decreases in the output wherever the cost curvature
    /// is active (everywhere for the filter; beyond the green capacity for
    /// the two-technology cost).
    #[test]
    fn marginal_profit_strictly_decreasing(
        x in -1.0..12.0f64,
        tau in 0.0..0.2f64,
        q in 0.05..3.95f64,
    ) {
        let m = filter_model(5.0);
        let h = 1e-5;
        prop_assert!(m.marginal_profit(q + h, x, 0.0, tau) < m.marginal_profit(q, x, 0.0, tau));
    }

    #[test]
    fn marginal_profit_decreasing_on_active_region_twotech(
        x in 0.0..100.0f64,
        tau in 0.0..1.0f64,
        u in 0.05..0.95f64,
        alpha in prop::sample::select(vec![0.0, 0.5]),
    ) {
        let m = twotech_model(alpha);
        let TechnologySpec::TwoTech(ref t) = m.tech else { unreachable!() };
        let green = t.green_capacity(x);
        prop_assume!(green < 9.5);
        let q = green + (10.0 - green - 0.02) * u + 0.01;
        let h = 1e-5;
        prop_assert!(m.marginal_profit(q + h, x, 0.0, tau) < m.marginal_profit(q, x, 0.0, tau));
    }

    /// Output maximiser stays in bounds and satisfies the endpoint sign
    /// conditions of the three-case rule.
    #[test]
    fn optimal_output_three_case_rule(
        x in -1.0..12.0f64,
        tau in 0.0..0.2f64,
        price in 1.0..8.0f64,
        q_lo in 0.0..1.0f64,
    ) {
        let m = filter_model(price);
        let r = m.optimal_output(x, 0.0, tau, q_lo, 4.0);
        prop_assert!(r.output >= q_lo - 1e-12 && r.output <= 4.0 + 1e-12);
        if r.output <= q_lo + 1e-9 {
            prop_assert!(m.marginal_profit(q_lo, x, 0.0, tau) <= 1e-6);
        } else if r.output >= 4.0 - 1e-9 {
            prop_assert!(m.marginal_profit(4.0, x, 0.0, tau) >= -1e-6);
        } else {
            prop_assert!(m.marginal_profit(r.output, x, 0.0, tau).abs() <= 1e-6);
        }
    }

    /// Closed-form maximiser for the Hamiltonian dominates random controls.
    #[test]
    fn hamiltonian_dominates_feasible_controls(
        p in -2.0..8.0f64,
        kappa in 0.05..2.0f64,
        cap in 0.1..20.0f64,
        u in 0.0..1.0f64,
    ) {
        let (h, g_star) = hamiltonian_sup(p, kappa, cap);
        let g = cap * u;
        prop_assert!(h + 1e-12 >= p * g - g - kappa * g * g);
        prop_assert!(g_star >= 0.0 && g_star <= cap);
        let at_star = p * g_star - g_star - kappa * g_star * g_star;
        prop_assert!((h - at_star).abs() <= 1e-12);
    }

    /// Saddle inequalities: no player improves by a unilateral deviation.
    #[test]
    fn saddle_inequalities(
        x in 0.0..60.0f64,
        q_dev in 0.0..1.0f64,
        tau_dev in 0.0..1.0f64,
        alpha in prop::sample::select(vec![0.0, 0.5]),
        nu1 in prop::sample::select(vec![1.0, 20.0]),
    ) {
        let m = twotech_model(alpha);
        let unc = UncertaintySpec::constant(0.5, 1.5, 1.0, nu1);
        let (q_hat, tau_hat, g_value) = saddle_point(&m, &unc, 0.0, x, 0.0).unwrap();
        let q = 5.0 + 5.0 * q_dev;
        let tau = 0.5 + tau_dev;
        let g_q = game_reward(&m, &unc, 0.0, q, tau_hat, x, 0.0);
        let g_tau = game_reward(&m, &unc, 0.0, q_hat, tau, x, 0.0);
        prop_assert!(g_q <= g_value + 1e-8, "producer deviation improves: {g_q} > {g_value}");
        prop_assert!(g_value <= g_tau + 2e-8, "adversary deviation improves: {g_tau} < {g_value}");
        // fixed-point residuals
        let tau_back = tau_best_response(&m, &unc, 0.0, q_hat, x);
        prop_assert!((tau_back - tau_hat).abs() <= 1e-8);
    }

    /// Adversary response stays in the band and moves with the sign of
    /// emissions minus rebate.
    #[test]
    fn tau_response_in_band(
        q in 5.0..10.0f64,
        x in 0.0..100.0f64,
        nu1 in 0.2..30.0f64,
    ) {
        let m = twotech_model(0.5);
        let unc = UncertaintySpec::constant(0.5, 1.5, 1.0, nu1);
        let tau = tau_best_response(&m, &unc, 0.0, q, x);
        prop_assert!((0.5..=1.5).contains(&tau));
    }

    /// Normalising a generator makes row sums vanish identically and keeps
    /// simulation inside the state set.
    #[test]
    fn chain_normalisation_and_closure(
        g01 in 0.0..2.0f64,
        g10 in 0.0..2.0f64,
        g02 in 0.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let chain = TaxChain {
            states: vec![0.0, 0.1, 0.3],
            generator: vec![
                0.0, g01, g02,
                g10, 0.0, 0.5,
                0.0, 0.25, 0.0,
            ],
            initial_state: 0,
        }
        .normalized();
        chain.validate("tax").unwrap();
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| chain.rate(i, j)).sum();
            prop_assert!(row.abs() < 1e-14);
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let path = chain.simulate(20.0, &mut rng);
        for &s in &path.states {
            prop_assert!(s < 3);
        }
        let occ = chain.occupation(7.5);
        let total: f64 = occ.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    /// Scenario configurations survive a JSON round trip unchanged.
    #[test]
    fn scenario_round_trip(
        kappa in 0.05..2.0f64,
        seed in any::<u64>(),
        paths in 1usize..5000,
        which in prop::sample::select(vec![
            "filter_tax_increase",
            "filter_tax_reversal",
            "twotech_tax_increase",
            "twotech_uncertainty",
        ]),
    ) {
        let mut cfg = preset(which).unwrap();
        cfg.model.econ.transaction_cost = kappa;
        cfg.sim.seed = seed;
        cfg.sim.n_paths = paths;
        let json = cfg.to_json();
        let back = ScenarioConfig::from_json(&json).unwrap();
        prop_assert_eq!(cfg, back);
    }
}

/// Binary grid artifacts round-trip bit-exactly over random shapes.
#[test]
fn grid_binary_round_trip_random_shapes() {
    use abatement::output::{read_grid_binary, write_grid_binary};
    use abatement::{GridSpec, PolicyGrid, ValueGrid};
    let dir = std::env::temp_dir().join(format!("abatement-prop-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut state = 0xdeadbeefu64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for case in 0..20 {
        let n_x = 3 + (next() * 8.0) as usize;
        let n_y = 1 + (next() * 3.0) as usize;
        let n_states = 1 + (next() * 3.0) as usize;
        let n_t = 2 + (next() * 4.0) as usize;
        let len = n_t * n_states * n_y * n_x;
        let grid = GridSpec {
            x_min: -1.0,
            x_max: 3.0,
            n_x,
            y_axis: (n_y > 1).then_some(abatement::grid::YAxis {
                y_min: 0.0,
                y_max: 1.0,
                n_y,
            }),
            n_t: n_t - 1,
            theta_scheme: 1.0,
        };
        let value = ValueGrid {
            grid,
            times: (0..n_t).map(|k| k as f64).collect(),
            tax_states: (0..n_states).map(|s| s as f64 * 0.1).collect(),
            values: (0..len).map(|_| next() * 100.0 - 50.0).collect(),
            model_hash: case,
        };
        let with_tax = case % 2 == 0;
        let policy = PolicyGrid {
            invest_rate: (0..len).map(|_| next() * 10.0).collect(),
            output: (0..len).map(|_| next() * 4.0).collect(),
            tax: with_tax.then(|| (0..len).map(|_| next()).collect()),
        };
        let path = dir.join(format!("g{case}.bin"));
        write_grid_binary(&path, &value, &policy).unwrap();
        let (v2, p2) = read_grid_binary(&path).unwrap();
        assert_eq!(v2.values, value.values);
        assert_eq!(v2.times, value.times);
        assert_eq!(v2.tax_states, value.tax_states);
        assert_eq!(p2.invest_rate, policy.invest_rate);
        assert_eq!(p2.output, policy.output);
        assert_eq!(p2.tax, policy.tax);
    }
    std::fs::remove_dir_all(&dir).ok();
}
