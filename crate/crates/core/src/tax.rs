//! Finite-state Markov-chain tax dynamics.
//!
//! The tax rate lives on a finite set of levels and switches according to a
//! generator matrix. The module provides exact path simulation, the
//! equivalent pure-jump (marked Poisson) representation, the analytic
//! expected cumulative tax, and the deterministic benchmark schedules that
//! match it in expectation.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-state Markov tax process: sorted tax levels, a generator matrix
/// (row-major, 1/year) and the initial state index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxChain {
    pub states: Vec<f64>,
    pub generator: Vec<f64>,
    pub initial_state: usize,
}

impl TaxChain {
    /// Two-state chain shorthand: levels `(low, high)` with upward
    /// intensity `g_up` and downward intensity `g_down`.
    pub fn two_state(low: f64, high: f64, g_up: f64, g_down: f64, start_high: bool) -> Self {
        TaxChain {
            states: vec![low, high],
            generator: vec![-g_up, g_up, g_down, -g_down],
            initial_state: usize::from(start_high),
        }
    }

    pub fn single_state(level: f64) -> Self {
        TaxChain {
            states: vec![level],
            generator: vec![0.0],
            initial_state: 0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from * self.n_states() + to]
    }

    /// Total exit rate out of a state (`-g_ii`).
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.rate(state, state)
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states()).fold(0.0, |m, i| m.max(self.exit_rate(i)))
    }

    pub fn max_state(&self) -> f64 {
        self.states.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let k = self.states.len();
        if k == 0 {
            return Err(Error::validation(
                format!("{path}.states"),
                "must be non-empty",
            ));
        }
        if self.generator.len() != k * k {
            return Err(Error::validation(
                format!("{path}.generator"),
                format!("expected {} entries (row-major {k}x{k})", k * k),
            ));
        }
        for i in 0..k {
            if !(self.states[i] >= 0.0) {
                return Err(Error::validation(
                    format!("{path}.states[{i}]"),
                    "tax levels must be >= 0",
                ));
            }
            if i > 0 && !(self.states[i] > self.states[i - 1]) {
                return Err(Error::validation(
                    format!("{path}.states[{i}]"),
                    "tax levels must be strictly increasing",
                ));
            }
            let mut off_sum = 0.0;
            for j in 0..k {
                if i != j {
                    let g = self.rate(i, j);
                    if !(g >= 0.0) {
                        return Err(Error::validation(
                            format!("{path}.generator[{i}][{j}]"),
                            "off-diagonal intensities must be >= 0",
                        ));
                    }
                    off_sum += g;
                }
            }
            let scale = off_sum.abs().max(1.0);
            if (self.rate(i, i) + off_sum).abs() > 1e-8 * scale {
                return Err(Error::validation(
                    format!("{path}.generator[{i}][{i}]"),
                    "rows of the generator must sum to zero",
                ));
            }
        }
        if self.initial_state >= k {
            return Err(Error::validation(
                format!("{path}.initial_state"),
                format!("index out of range (have {k} states)"),
            ));
        }
        Ok(())
    }

    /// Rebuilds the diagonal as minus the off-diagonal row sum, making row
    /// sums zero to machine precision.
    pub fn normalized(mut self) -> Self {
        let k = self.n_states();
        for i in 0..k {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| self.rate(i, j)).sum();
            self.generator[i * k + i] = -off;
        }
        self
    }

    /// Applies the generator to a function given by its values on the
    /// states: `(L f)(i) = sum_j g_ij (f_j - f_i)`.
    pub fn apply_generator(&self, f: &[f64]) -> Vec<f64> {
        let k = self.n_states();
        (0..k)
            .map(|i| (0..k).map(|j| self.rate(i, j) * (f[j] - f[i])).sum())
            .collect()
    }

    /// Exact simulation: exponential holding times with the state's exit
    /// rate and embedded-chain transition probabilities.
    pub fn simulate<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> ChainPath {
        let mut times = vec![0.0];
        let mut states = vec![self.initial_state];
        let mut t = 0.0;
        let mut s = self.initial_state;
        loop {
            let rate = self.exit_rate(s);
            if rate <= 0.0 {
                break;
            }
            t += Exp::new(rate).expect("positive rate").sample(rng);
            if t >= horizon {
                break;
            }
            s = self.draw_transition(s, rng);
            times.push(t);
            states.push(s);
        }
        ChainPath { times, states }
    }

    /// Draws the jump target from state `from` using the embedded chain.
    pub(crate) fn draw_transition<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let rate = self.exit_rate(from);
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let k = self.n_states();
        for j in 0..k {
            if j == from {
                continue;
            }
            acc += self.rate(from, j);
            if u < acc {
                return j;
            }
        }
        // numerical slack: fall back to the last positive-rate target
        (0..k)
            .rev()
            .find(|&j| j != from && self.rate(from, j) > 0.0)
            .unwrap_or(from)
    }

    /// State occupation probabilities at `t`, from the forward equation.
    pub fn occupation(&self, t: f64) -> Vec<f64> {
        let k = self.n_states();
        let mut probs = vec![0.0; k];
        probs[self.initial_state] = 1.0;
        let mut acc = ExpectedTax::zero();
        integrate_forward(self, &mut probs, &mut acc, t);
        probs
    }

    /// `E[int_0^T tau_t dt]`, by adaptive 4th-order integration of the
    /// forward equation (relative tolerance 1e-10).
    pub fn expected_tax_integral(&self, horizon: f64) -> f64 {
        let k = self.n_states();
        let mut probs = vec![0.0; k];
        probs[self.initial_state] = 1.0;
        let mut acc = ExpectedTax::zero();
        integrate_forward(self, &mut probs, &mut acc, horizon);
        acc.integral
    }

    /// Deterministic benchmark schedule with the same expected cumulative
    /// tax as the chain: linear `b t` or constant.
    pub fn benchmark(&self, horizon: f64, kind: BenchmarkKind) -> BenchmarkSpec {
        let expected = self.expected_tax_integral(horizon);
        match kind {
            BenchmarkKind::LinearIncreasing => BenchmarkSpec::LinearIncreasing {
                slope: 2.0 * expected / (horizon * horizon),
            },
            BenchmarkKind::Constant => BenchmarkSpec::Constant {
                level: expected / horizon,
            },
        }
    }

    /// Pure-jump representation: one mark per ordered state pair with the
    /// transition intensity as weight.
    pub fn to_jump_representation(&self) -> JumpRepresentation {
        let k = self.n_states();
        let mut marks = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j && self.rate(i, j) > 0.0 {
                    marks.push(Mark {
                        from: i,
                        to: j,
                        weight: self.rate(i, j),
                    });
                }
            }
        }
        JumpRepresentation {
            states: self.states.clone(),
            marks,
        }
    }
}

/// Right-continuous piecewise-constant path of the chain.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.states[0],
            k => self.states[k - 1],
        }
    }
}

/// Marked-Poisson representation of the chain: mark `(i, j)` fires with
/// intensity `weight` and moves the process from level `i` to level `j`
/// (jump size zero elsewhere).
#[derive(Debug, Clone)]
pub struct JumpRepresentation {
    pub states: Vec<f64>,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, Copy)]
pub struct Mark {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

impl JumpRepresentation {
    /// Total intensity of the driving Poisson measure.
    pub fn total_intensity(&self) -> f64 {
        self.marks.iter().map(|m| m.weight).sum()
    }

    /// Jump size `Gamma(tau, z)` for the chain at state index `state` under
    /// mark `z`.
    pub fn jump_size(&self, state: usize, mark: &Mark) -> f64 {
        if state == mark.from {
            self.states[mark.to] - self.states[mark.from]
        } else {
            0.0
        }
    }

    /// Generator applied through the jump representation:
    /// `sum_z w(z) (f(tau + Gamma(tau, z)) - f(tau))`.
    pub fn apply_generator(&self, f: &[f64]) -> Vec<f64> {
        (0..self.states.len())
            .map(|i| {
                self.marks
                    .iter()
                    .map(|m| {
                        if m.from == i {
                            m.weight * (f[m.to] - f[i])
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Thinning simulation: events of a Poisson process with the total
    /// intensity, each carrying a mark drawn by weight; marks not matching
    /// the current state leave the path unchanged.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        initial_state: usize,
        horizon: f64,
        rng: &mut R,
    ) -> ChainPath {
        let mut times = vec![0.0];
        let mut states = vec![initial_state];
        let total = self.total_intensity();
        if total <= 0.0 {
            return ChainPath { times, states };
        }
        let exp = Exp::new(total).expect("positive intensity");
        let mut t = 0.0;
        let mut s = initial_state;
        loop {
            t += exp.sample(rng);
            if t >= horizon {
                break;
            }
            let mut u: f64 = rng.random::<f64>() * total;
            for m in &self.marks {
                u -= m.weight;
                if u < 0.0 {
                    if m.from == s {
                        s = m.to;
                        times.push(t);
                        states.push(s);
                    }
                    break;
                }
            }
        }
        ChainPath { times, states }
    }
}

/// Deterministic benchmark tax schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkSpec {
    LinearIncreasing { slope: f64 },
    Constant { level: f64 },
}

impl BenchmarkSpec {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            BenchmarkSpec::LinearIncreasing { slope } => slope * t,
            BenchmarkSpec::Constant { level } => *level,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let v = match self {
            BenchmarkSpec::LinearIncreasing { slope } => ("slope", *slope),
            BenchmarkSpec::Constant { level } => ("level", *level),
        };
        if !(v.1 >= 0.0) {
            return Err(Error::validation(format!("{path}.{}", v.0), "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    LinearIncreasing,
    Constant,
}

struct ExpectedTax {
    integral: f64,
}

impl ExpectedTax {
    fn zero() -> Self {
        ExpectedTax { integral: 0.0 }
    }
}

/// One RK4 step of the forward equation `p' = p G` augmented with the
/// running integral `z' = p . tau`.
fn rk4_step(chain: &TaxChain, probs: &[f64], dt: f64) -> (Vec<f64>, f64) {
    let k = chain.n_states();
    let deriv = |p: &[f64]| -> (Vec<f64>, f64) {
        let mut d = vec![0.0; k];
        for (j, dj) in d.iter_mut().enumerate() {
            for (i, &pi) in p.iter().enumerate() {
                *dj += pi * chain.rate(i, j);
            }
        }
        let z: f64 = (0..k).map(|i| p[i] * chain.states[i]).sum();
        (d, z)
    };
    let (k1, z1) = deriv(probs);
    let p2: Vec<f64> = (0..k).map(|i| probs[i] + 0.5 * dt * k1[i]).collect();
    let (k2, z2) = deriv(&p2);
    let p3: Vec<f64> = (0..k).map(|i| probs[i] + 0.5 * dt * k2[i]).collect();
    let (k3, z3) = deriv(&p3);
    let p4: Vec<f64> = (0..k).map(|i| probs[i] + dt * k3[i]).collect();
    let (k4, z4) = deriv(&p4);
    let out: Vec<f64> = (0..k)
        .map(|i| probs[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let dz = dt / 6.0 * (z1 + 2.0 * z2 + 2.0 * z3 + z4);
    (out, dz)
}

/// Adaptive step-doubling RK4 for the forward equation, relative tolerance
/// 1e-10 on the occupation probabilities.
fn integrate_forward(chain: &TaxChain, probs: &mut Vec<f64>, acc: &mut ExpectedTax, horizon: f64) {
    const REL_TOL: f64 = 1e-10;
    let mut t = 0.0;
    let rate = chain.max_exit_rate().max(1e-12);
    let mut dt = (0.1 / rate).min(horizon);
    while t < horizon {
        dt = dt.min(horizon - t);
        let (full, _z_full) = rk4_step(chain, probs, dt);
        let (half, z_half) = rk4_step(chain, probs, 0.5 * dt);
        let (two_half, z_second) = rk4_step(chain, &half, 0.5 * dt);
        let err = full
            .iter()
            .zip(&two_half)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if err < REL_TOL {
            *probs = two_half;
            acc.integral += z_half + z_second;
            t += dt;
            if err < 0.01 * REL_TOL {
                dt *= 2.0;
            }
        } else {
            dt *= 0.5;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn increase_chain() -> TaxChain {
        TaxChain::two_state(0.0, 0.2, 0.25, 0.0, false)
    }

    fn reversal_chain() -> TaxChain {
        TaxChain::two_state(0.0, 0.2, 0.25, 0.25, true)
    }

    #[test]
    fn validation_catches_bad_generators() {
        let mut c = increase_chain();
        c.generator[1] = -0.25;
        assert!(c.validate("tax").is_err());
        let mut c = increase_chain();
        c.generator[0] = -0.3;
        assert!(c.validate("tax").is_err());
        let c = TaxChain {
            states: vec![0.2, 0.1],
            generator: vec![0.0; 4],
            initial_state: 0,
        };
        assert!(c.validate("tax").is_err());
        assert!(increase_chain().validate("tax").is_ok());
    }

    #[test]
    fn jump_representation_of_two_state_chain() {
        let rep = increase_chain().to_jump_representation();
        assert_eq!(rep.marks.len(), 1);
        let m = rep.marks[0];
        assert_eq!((m.from, m.to), (0, 1));
        assert_eq!(m.weight, 0.25);
        assert_relative_eq!(rep.jump_size(0, &m), 0.2);
        assert_eq!(rep.jump_size(1, &m), 0.0);
        // single state: no marks
        assert!(TaxChain::single_state(0.1)
            .to_jump_representation()
            .marks
            .is_empty());
    }

    #[test]
    fn generators_agree_between_chain_and_jump_form() {
        let chain = reversal_chain();
        let rep = chain.to_jump_representation();
        let f = vec![3.0, -1.5];
        let a = chain.apply_generator(&f);
        let b = rep.apply_generator(&f);
        for (u, v) in a.iter().zip(&b) {
            assert_relative_eq!(u, v, epsilon = 1e-14);
        }
    }

    #[test]
    fn absorbing_chain_stays_constant() {
        let chain = TaxChain::two_state(0.0, 0.2, 0.25, 0.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let path = chain.simulate(100.0, &mut rng);
        assert_eq!(path.states, vec![1]);
        assert_eq!(path.state_at(50.0), 1);
    }

    #[test]
    fn first_jump_time_is_exponential() {
        let chain = increase_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut jumped = 0usize;
        for _ in 0..n {
            let path = chain.simulate(15.0, &mut rng);
            if path.times.len() > 1 && path.times[1] < 4.0 {
                jumped += 1;
            }
        }
        let frac = jumped as f64 / n as f64;
        let expect = 1.0 - (-1.0_f64).exp();
        let stderr = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!(
            (frac - expect).abs() <= 3.0 * stderr,
            "frac {frac} vs {expect} +- {stderr}"
        );
    }

    #[test]
    fn occupation_matches_two_state_closed_form() {
        let chain = reversal_chain();
        // P(high at t | start high) = (1 + exp(-2 g t)) / 2
        for t in [1.0, 5.0, 12.0] {
            let p = chain.occupation(t);
            let expect = 0.5 * (1.0 + (-0.5 * t).exp());
            assert_relative_eq!(p[1], expect, epsilon = 1e-9);
        }
        let p5 = chain.occupation(5.0);
        assert_relative_eq!(p5[1], 0.541, epsilon = 5e-4);
    }

    #[test]
    fn simulated_occupation_matches_forward_equation() {
        let chain = reversal_chain();
        let n = 100_000;
        let checkpoints: Vec<f64> = (1..=10).map(|k| 1.5 * k as f64).collect();
        let mut counts = vec![0usize; checkpoints.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..n {
            let path = chain.simulate(15.0, &mut rng);
            for (c, &t) in counts.iter_mut().zip(&checkpoints) {
                if path.state_at(t) == 1 {
                    *c += 1;
                }
            }
        }
        for (c, &t) in counts.iter().zip(&checkpoints) {
            let expect = chain.occupation(t)[1];
            let frac = *c as f64 / n as f64;
            let stderr = (expect * (1.0 - expect) / n as f64).sqrt().max(1e-9);
            assert!(
                (frac - expect).abs() <= 3.5 * stderr,
                "t={t}: {frac} vs {expect}"
            );
        }
    }

    #[test]
    fn thinning_simulation_is_distributionally_equivalent() {
        let chain = reversal_chain();
        let rep = chain.to_jump_representation();
        let n = 60_000;
        let t = 7.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut high_chain = 0usize;
        let mut high_rep = 0usize;
        for _ in 0..n {
            if chain.simulate(t, &mut rng).state_at(t) == 1 {
                high_chain += 1;
            }
            if rep.simulate(chain.initial_state, t, &mut rng).state_at(t) == 1 {
                high_rep += 1;
            }
        }
        let (a, b) = (high_chain as f64 / n as f64, high_rep as f64 / n as f64);
        let stderr = (a * (1.0 - a) / n as f64).sqrt() * std::f64::consts::SQRT_2;
        assert!((a - b).abs() <= 3.0 * stderr, "{a} vs {b}");
    }

    #[test]
    fn expected_tax_integral_closed_forms() {
        // absorbing upward chain
        let inc = increase_chain();
        let expect = 0.2 * (15.0 - (1.0 - (-3.75_f64).exp()) / 0.25);
        assert_relative_eq!(inc.expected_tax_integral(15.0), expect, max_relative = 1e-8);
        assert_relative_eq!(inc.expected_tax_integral(15.0), 2.2188, epsilon = 1e-4);
        // symmetric reversal chain started high
        let rev = reversal_chain();
        let expect = 0.1 * (15.0 + (1.0 - (-7.5_f64).exp()) / 0.5);
        assert_relative_eq!(rev.expected_tax_integral(15.0), expect, max_relative = 1e-8);
        assert_relative_eq!(rev.expected_tax_integral(15.0), 1.6999, epsilon = 1e-4);
        // constant chain
        let c = TaxChain::single_state(0.3);
        assert_relative_eq!(
            c.expected_tax_integral(15.0),
            0.3 * 15.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn benchmark_constants_match_reported_values() {
        let b = increase_chain().benchmark(15.0, BenchmarkKind::LinearIncreasing);
        let BenchmarkSpec::LinearIncreasing { slope } = b else {
            panic!()
        };
        assert_relative_eq!(slope, 0.0197, epsilon = 1e-4);

        let c = reversal_chain().benchmark(15.0, BenchmarkKind::Constant);
        let BenchmarkSpec::Constant { level } = c else {
            panic!()
        };
        assert_relative_eq!(level, 0.113, epsilon = 1e-3);

        // two-technology variants scale the high state to 1
        let inc2 = TaxChain::two_state(0.0, 1.0, 0.25, 0.0, false);
        let BenchmarkSpec::LinearIncreasing { slope } =
            inc2.benchmark(15.0, BenchmarkKind::LinearIncreasing)
        else {
            panic!()
        };
        assert_relative_eq!(slope, 0.0985, epsilon = 5e-4);
        let rev2 = TaxChain::two_state(0.0, 1.0, 0.25, 0.25, true);
        let BenchmarkSpec::Constant { level } = rev2.benchmark(15.0, BenchmarkKind::Constant)
        else {
            panic!()
        };
        assert_relative_eq!(level, 0.565, epsilon = 2e-3);
    }

    #[test]
    fn benchmark_schedules_evaluate() {
        let b = BenchmarkSpec::LinearIncreasing { slope: 0.02 };
        assert_relative_eq!(b.value_at(10.0), 0.2);
        let c = BenchmarkSpec::Constant { level: 0.113 };
        assert_relative_eq!(c.value_at(3.0), 0.113);
    }
}
