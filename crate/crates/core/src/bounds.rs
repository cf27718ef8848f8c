//! Right-hand sides of the finite-time error bounds.
//!
//! Expectation bounds (`thm1`, `thm3`, `cor1`, `cor2`) control
//! `E‖θ̄ − θ_ref‖²`; high-probability bounds (`thm2`, `thm4`) control the
//! norm `‖θ̄ − θ_ref‖` itself with probability `1 − δ`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::TdProblem;
use crate::td::{max_step_size_for, reg_max_step_size_for};

/// Relative slack when comparing a step size with its admissible maximum.
const STEP_SLACK: f64 = 1e-12;

/// Problem constants and run parameters shared by every bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub discount: f64,
    pub phi_max: f64,
    pub r_max: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Tail index `k`.
    pub k: usize,
    /// Tail length `N = t − k`.
    pub n: usize,
    pub delta: f64,
    /// `E‖θ₀ − θ_ref‖²`. High-probability forms use its square root.
    pub initial_error: f64,
    pub sigma: f64,
}

impl BoundInputs {
    /// Constants from `problem` with `σ` taken at `theta_ref`.
    ///
    /// Run parameters start at `α` = universal TD step, `λ = 0`, `k = 0`,
    /// `N = 1`, `δ = 0.1` and `θ₀ = 0`; override them with struct update
    /// syntax.
    pub fn from_problem(problem: &TdProblem, theta_ref: &DVector<f64>) -> Result<Self> {
        Ok(BoundInputs {
            discount: problem.discount(),
            phi_max: problem.phi_max(),
            r_max: problem.r_max(),
            mu: problem.mu(),
            mu_prime: problem.mu_prime(),
            alpha: max_step_size_for(problem.discount(), problem.phi_max())?,
            lambda: 0.0,
            k: 0,
            n: 1,
            delta: 0.1,
            initial_error: theta_ref.norm_squared(),
            sigma: sigma(problem, theta_ref),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("tail length N must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("step size must be positive, got {}", self.alpha)));
        }
        if !(self.initial_error >= 0.0 && self.sigma >= 0.0) {
            return Err(invalid("initial error and sigma must be non-negative"));
        }
        if !(self.mu_prime > 0.0 && self.mu > 0.0) {
            return Err(invalid("mu and mu' must be positive"));
        }
        Ok(())
    }

    fn check_td_step(&self) -> Result<()> {
        self.validate()?;
        let max = max_step_size_for(self.discount, self.phi_max)?;
        if self.alpha > max * (1.0 + STEP_SLACK) {
            return Err(Error::StepSizeTooLarge { alpha: self.alpha, max });
        }
        Ok(())
    }

    fn check_reg_step(&self) -> Result<()> {
        self.validate()?;
        let max = reg_max_step_size_for(self.discount, self.phi_max, self.lambda)?;
        if self.alpha > max * (1.0 + STEP_SLACK) {
            return Err(Error::StepSizeTooLarge { alpha: self.alpha, max });
        }
        Ok(())
    }

    fn check_delta(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        Ok(())
    }

    fn td_rate(&self) -> f64 {
        (1.0 - self.discount) * self.mu_prime
    }

    fn reg_rate(&self) -> f64 {
        self.mu + self.lambda
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    Thm1,
    Thm2,
    Thm3,
    Thm4,
    Cor1,
    Cor2,
}

impl BoundName {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundName::Thm1 => "thm1",
            BoundName::Thm2 => "thm2",
            BoundName::Thm3 => "thm3",
            BoundName::Thm4 => "thm4",
            BoundName::Cor1 => "cor1",
            BoundName::Cor2 => "cor2",
        }
    }

    /// True for bounds on the expected squared error.
    pub fn is_expectation(self) -> bool {
        !matches!(self, BoundName::Thm2 | BoundName::Thm4)
    }
}

/// A bound split into its terms; `value` is their sum.
///
/// For high-probability bounds `variance_term` holds both `σ/√N` terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: BoundName,
    pub value: f64,
    pub bias_term: f64,
    pub variance_term: f64,
    pub drift_term: f64,
}

impl BoundReport {
    fn new(name: BoundName, bias_term: f64, variance_term: f64, drift_term: f64) -> Self {
        BoundReport {
            name,
            value: bias_term + variance_term + drift_term,
            bias_term,
            variance_term,
            drift_term,
        }
    }
}

/// `σ = R_max + (1 + β) Φ²_max ‖θ_ref‖₂`.
pub fn sigma(problem: &TdProblem, theta_ref: &DVector<f64>) -> f64 {
    sigma_for(problem.r_max(), problem.discount(), problem.phi_max(), theta_ref.norm())
}

pub fn sigma_for(r_max: f64, discount: f64, phi_max: f64, theta_ref_norm: f64) -> f64 {
    r_max + (1.0 + discount) * phi_max * phi_max * theta_ref_norm
}

fn expectation_form(name: BoundName, rate: f64, inp: &BoundInputs) -> BoundReport {
    let n = inp.n as f64;
    let bias = 10.0 * (-(inp.k as f64) * inp.alpha * rate).exp() / (inp.alpha * inp.alpha * rate * rate * n * n)
        * inp.initial_error;
    let variance = 10.0 * inp.sigma * inp.sigma / (rate * rate * n);
    BoundReport::new(name, bias, variance, 0.0)
}

fn high_probability_form(name: BoundName, rate: f64, exponent_rate: f64, inp: &BoundInputs) -> BoundReport {
    let n = inp.n as f64;
    let root_n = n.sqrt();
    let deviation = 2.0 * inp.sigma / (rate * root_n) * (1.0 / inp.delta).ln().sqrt();
    let bias = 4.0 * (-(inp.k as f64) * inp.alpha * exponent_rate).exp() / (inp.alpha * rate * n)
        * inp.initial_error.sqrt();
    let spread = 4.0 * inp.sigma / (rate * root_n);
    BoundReport::new(name, bias, deviation + spread, 0.0)
}

/// Expected squared error of tail-averaged TD(0).
pub fn thm1_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_td_step()?;
    Ok(expectation_form(BoundName::Thm1, inp.td_rate(), inp))
}

/// Norm of the error of projected tail-averaged TD(0), with probability `1 − δ`.
///
/// The exponent in the bias term uses `(1 − β)²μ′`.
pub fn thm2_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_td_step()?;
    inp.check_delta()?;
    let rate = inp.td_rate();
    let exponent_rate = (1.0 - inp.discount).powi(2) * inp.mu_prime;
    Ok(high_probability_form(BoundName::Thm2, rate, exponent_rate, inp))
}

/// Expected squared error of tail-averaged regularised TD around `θ*_reg`.
pub fn thm3_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_reg_step()?;
    Ok(expectation_form(BoundName::Thm3, inp.reg_rate(), inp))
}

/// High-probability norm bound for projected regularised TD around `θ*_reg`.
pub fn thm4_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_reg_step()?;
    inp.check_delta()?;
    let rate = inp.reg_rate();
    Ok(high_probability_form(BoundName::Thm4, rate, rate, inp))
}

/// Which constant to use for the regularisation drift `‖θ*_reg − θ*‖²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    /// `2λ²Φ²_max R²_max / (μ(μ + λ))`.
    #[default]
    Stated,
    /// `λ²Φ_max / (μ(μ + λ))`.
    Derived,
}

pub fn drift_term(inp: &BoundInputs, form: DriftForm) -> f64 {
    let l2 = inp.lambda * inp.lambda;
    let denom = inp.mu * (inp.mu + inp.lambda);
    match form {
        DriftForm::Stated => 2.0 * l2 * inp.phi_max * inp.phi_max * inp.r_max * inp.r_max / denom,
        DriftForm::Derived => l2 * inp.phi_max / denom,
    }
}

/// Expected squared error of regularised TD around the unregularised `θ*`.
pub fn cor1_bound(inp: &BoundInputs) -> Result<BoundReport> {
    cor1_bound_with(inp, DriftForm::Stated)
}

pub fn cor1_bound_with(inp: &BoundInputs, form: DriftForm) -> Result<BoundReport> {
    let base = thm3_bound(inp)?;
    Ok(BoundReport::new(
        BoundName::Cor1,
        2.0 * base.bias_term,
        2.0 * base.variance_term,
        drift_term(inp, form),
    ))
}

/// `cor1` specialised to `λ = 1/√N` and the matching universal step size.
///
/// `inp.alpha` and `inp.lambda` are ignored.
pub fn cor2_bound(inp: &BoundInputs) -> Result<BoundReport> {
    let inp = cor2_inputs(inp)?;
    inp.validate()?;
    let n = inp.n as f64;
    let root_n = n.sqrt();
    let c = (1.0 + inp.discount) * inp.phi_max * inp.phi_max;
    let mu2 = inp.mu * inp.mu;
    let bias = 20.0 * (1.0 + c * root_n).powi(4) * (-(inp.k as f64) * inp.mu / (c * c * root_n)).exp()
        / (mu2 * n.powi(3))
        * inp.initial_error;
    let variance = 20.0 * inp.sigma * inp.sigma / (mu2 * n);
    let drift = 2.0 * inp.phi_max * inp.phi_max * inp.r_max * inp.r_max / (mu2 * n);
    Ok(BoundReport::new(BoundName::Cor2, bias, variance, drift))
}

/// `inp` with `λ = 1/√N` and `α` at the regularised universal step size.
pub fn cor2_inputs(inp: &BoundInputs) -> Result<BoundInputs> {
    if inp.n == 0 {
        return Err(invalid("tail length N must be positive"));
    }
    let lambda = 1.0 / (inp.n as f64).sqrt();
    Ok(BoundInputs {
        lambda,
        alpha: reg_max_step_size_for(inp.discount, inp.phi_max, lambda)?,
        ..inp.clone()
    })
}

pub fn bound(name: BoundName, inp: &BoundInputs) -> Result<BoundReport> {
    match name {
        BoundName::Thm1 => thm1_bound(inp),
        BoundName::Thm2 => thm2_bound(inp),
        BoundName::Thm3 => thm3_bound(inp),
        BoundName::Thm4 => thm4_bound(inp),
        BoundName::Cor1 => cor1_bound(inp),
        BoundName::Cor2 => cor2_bound(inp),
    }
}

/// `μ` against `(1 − β)μ′`; a large ratio favours regularised TD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub mu: f64,
    pub one_minus_beta_mu_prime: f64,
    pub ratio: f64,
}

pub fn compare_conditioning(problem: &TdProblem) -> Conditioning {
    let mu = problem.mu();
    let td = (1.0 - problem.discount()) * problem.mu_prime();
    Conditioning {
        mu,
        one_minus_beta_mu_prime: td,
        ratio: mu / td,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{FeatureMap, PolicyChain};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn two_state(beta: f64) -> TdProblem {
        let chain = PolicyChain::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_element(2, 1.0),
            beta,
        )
        .unwrap();
        TdProblem::new(chain, FeatureMap::from_rows(vec![vec![1.0], vec![0.5]]).unwrap()).unwrap()
    }

    fn inputs(beta: f64) -> BoundInputs {
        BoundInputs {
            discount: beta,
            phi_max: 1.0,
            r_max: 1.0,
            mu: 0.625 - 0.5625 * beta,
            mu_prime: 0.625,
            alpha: max_step_size_for(beta, 1.0).unwrap(),
            lambda: 0.0,
            k: 0,
            n: 1024,
            delta: 0.1,
            initial_error: 4.0,
            sigma: 3.0,
        }
    }

    fn reg_inputs(beta: f64, lambda: f64) -> BoundInputs {
        BoundInputs {
            lambda,
            alpha: reg_max_step_size_for(beta, 1.0, lambda).unwrap(),
            ..inputs(beta)
        }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_for(1.0, 0.0, 1.0, 1.0), 2.0);
        assert_eq!(sigma_for(0.7, 0.4, 3.0, 0.0), 0.7);
        let one = sigma_for(0.0, 0.3, 1.0, 2.0);
        let two = sigma_for(0.0, 0.3, 2.0, 2.0);
        assert_relative_eq!(two, 4.0 * one, max_relative = 1e-15);
        let p = two_state(0.5);
        assert_eq!(sigma(&p, &DVector::zeros(1)), 1.0);
    }

    #[test]
    fn thm1_terms() {
        let inp = inputs(0.5);
        let r = thm1_bound(&inp).unwrap();
        let rate = 0.5 * 0.625;
        let n = 1024.0;
        assert_relative_eq!(r.bias_term, 10.0 * 4.0 / (inp.alpha.powi(2) * rate * rate * n * n), max_relative = 1e-14);
        assert_relative_eq!(r.variance_term, 90.0 / (rate * rate * n), max_relative = 1e-14);
        assert_eq!(r.drift_term, 0.0);

        let zero = thm1_bound(&BoundInputs { initial_error: 0.0, ..inp.clone() }).unwrap();
        assert_eq!(zero.value, zero.variance_term);
    }

    #[test]
    fn thm1_duplicate_evaluation() {
        // β = 0.5 two-state constants, N = k = 2¹⁵.
        let beta = 0.5f64;
        let (mu_p, a) = (0.625f64, 0.5 / 2.25);
        let (k, n) = (32768.0f64, 32768.0f64);
        let (init, sig) = (1.0f64, 1.0f64 + 1.5 * (0.75 / 0.34375));
        let expect = 10.0 * (-k * a * (1.0 - beta) * mu_p).exp() * init
            / (a.powi(2) * (1.0 - beta).powi(2) * mu_p.powi(2) * n.powi(2))
            + 10.0 * sig.powi(2) / ((1.0 - beta).powi(2) * mu_p.powi(2) * n);

        let p = two_state(beta);
        let star = crate::mdp::td_fixed_point(&p).unwrap();
        let inp = BoundInputs {
            k: 32768,
            n: 32768,
            initial_error: init,
            ..BoundInputs::from_problem(&p, &star).unwrap()
        };
        assert_relative_eq!(inp.sigma, sig, max_relative = 1e-12);
        assert_relative_eq!(thm1_bound(&inp).unwrap().value, expect, max_relative = 1e-12);
    }

    #[test]
    fn step_size_refusals() {
        let inp = inputs(0.5);
        let too_big = BoundInputs { alpha: inp.alpha * 1.01, ..inp.clone() };
        assert!(matches!(thm1_bound(&too_big), Err(Error::StepSizeTooLarge { .. })));
        assert!(matches!(thm2_bound(&too_big), Err(Error::StepSizeTooLarge { .. })));

        let reg = reg_inputs(0.5, 0.1);
        let too_big = BoundInputs { alpha: reg.alpha * 1.01, ..reg.clone() };
        assert!(thm3_bound(&too_big).is_err());
        assert!(thm4_bound(&too_big).is_err());
        assert!(cor1_bound(&too_big).is_err());
        assert!(thm3_bound(&BoundInputs { lambda: 0.0, ..reg }).is_err());
    }

    #[test]
    fn delta_range() {
        let inp = inputs(0.5);
        for delta in [0.0, -0.1, 1.5] {
            assert!(thm2_bound(&BoundInputs { delta, ..inp.clone() }).is_err());
        }
    }

    #[test]
    fn thm2_terms() {
        let inp = BoundInputs { delta: 1.0, ..inputs(0.5) };
        let r = thm2_bound(&inp).unwrap();
        let rate = 0.5 * 0.625;
        assert_relative_eq!(r.variance_term, 4.0 * 3.0 / (rate * 32.0), max_relative = 1e-14);

        // Large k kills the bias; with log(1/δ) = 4 the σ terms total 8σ/(rate √N).
        let inp = BoundInputs { k: 10_000_000, delta: (-4.0f64).exp(), ..inputs(0.5) };
        let r = thm2_bound(&inp).unwrap();
        assert!(r.bias_term < 1e-15);
        assert_relative_eq!(r.value, 8.0 * 3.0 / (rate * 32.0), max_relative = 1e-12);

        // Quadrupling N halves the δ-term.
        let small = BoundInputs { initial_error: 0.0, ..inputs(0.5) };
        let large = BoundInputs { n: 4096, ..small.clone() };
        let spread = |i: &BoundInputs| 4.0 * i.sigma / (rate * (i.n as f64).sqrt());
        let dev = |i: &BoundInputs| thm2_bound(i).unwrap().variance_term - spread(i);
        assert_relative_eq!(dev(&large), dev(&small) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn thm2_exponent_uses_squared_discount_factor() {
        let inp = BoundInputs { k: 100, ..inputs(0.5) };
        let r = thm2_bound(&inp).unwrap();
        let rate = 0.5 * 0.625;
        let expect = 4.0 * (-100.0 * inp.alpha * 0.25 * 0.625).exp() / (inp.alpha * rate * 1024.0) * 2.0;
        assert_relative_eq!(r.bias_term, expect, max_relative = 1e-14);
    }

    #[test]
    fn thm3_and_thm4_duplicate_evaluation() {
        let inp = BoundInputs { k: 300, ..reg_inputs(0.9, 0.05) };
        let rate = inp.mu + 0.05;
        let n = 1024.0;
        let e = (-300.0 * inp.alpha * rate).exp();
        let thm3 = 10.0 * e / (inp.alpha.powi(2) * rate * rate * n * n) * 4.0 + 90.0 / (rate * rate * n);
        assert_relative_eq!(thm3_bound(&inp).unwrap().value, thm3, max_relative = 1e-13);

        let thm4 = 2.0 * 3.0 / (rate * 32.0) * (10.0f64).ln().sqrt()
            + 4.0 * e / (inp.alpha * rate * n) * 2.0
            + 12.0 / (rate * 32.0);
        assert_relative_eq!(thm4_bound(&inp).unwrap().value, thm4, max_relative = 1e-13);

        let k0 = thm3_bound(&BoundInputs { k: 0, ..inp.clone() }).unwrap();
        assert_relative_eq!(k0.bias_term, 40.0 / (inp.alpha.powi(2) * rate * rate * n * n), max_relative = 1e-14);
    }

    #[test]
    fn cor1_drift_forms() {
        let inp = reg_inputs(0.9, 0.2);
        let r = cor1_bound(&inp).unwrap();
        let base = thm3_bound(&inp).unwrap();
        assert_relative_eq!(r.bias_term, 2.0 * base.bias_term, max_relative = 1e-15);
        assert_relative_eq!(r.drift_term, 2.0 * 0.04 / (inp.mu * (inp.mu + 0.2)), max_relative = 1e-14);
        let derived = cor1_bound_with(&inp, DriftForm::Derived).unwrap();
        assert_relative_eq!(derived.drift_term, 0.04 / (inp.mu * (inp.mu + 0.2)), max_relative = 1e-14);

        let no_reward = BoundInputs { r_max: 0.0, ..inp.clone() };
        assert_eq!(cor1_bound(&no_reward).unwrap().drift_term, 0.0);

        // λ² scaling near zero.
        let d1 = drift_term(&reg_inputs(0.9, 1e-4), DriftForm::Stated);
        let d2 = drift_term(&reg_inputs(0.9, 1e-5), DriftForm::Stated);
        assert!((d1 / d2 - 100.0).abs() < 0.1);
    }

    #[test]
    fn cor2_against_cor1_substitution() {
        for n in [1usize << 10, 1 << 16, 1 << 30] {
            let inp = BoundInputs { n, ..inputs(0.9) };
            let c2 = cor2_bound(&inp).unwrap();
            let c1 = cor1_bound(&cor2_inputs(&inp).unwrap()).unwrap();
            // Replacing μ + λ with μ only loosens each term at k = 0.
            assert!(c2.bias_term >= c1.bias_term);
            assert!(c2.variance_term >= c1.variance_term);
            assert!(c2.drift_term >= c1.drift_term);
            let lambda = 1.0 / (n as f64).sqrt();
            let ratio = ((inp.mu + lambda) / inp.mu).powi(2);
            assert_relative_eq!(c2.bias_term / c1.bias_term, ratio, max_relative = 1e-9);
            assert_relative_eq!(c2.variance_term / c1.variance_term, ratio, max_relative = 1e-9);
        }
        let far = cor2_bound(&BoundInputs { n: 1 << 30, ..inputs(0.9) }).unwrap();
        let near = cor2_bound(&BoundInputs { n: 1 << 20, ..inputs(0.9) }).unwrap();
        assert_relative_eq!(near.drift_term / far.drift_term, 1024.0, max_relative = 1e-12);
        let zero = cor2_bound(&BoundInputs { initial_error: 0.0, ..inputs(0.9) }).unwrap();
        assert_eq!(zero.bias_term, 0.0);
    }

    #[test]
    fn conditioning_on_two_state_example() {
        let c = compare_conditioning(&two_state(0.99));
        assert_relative_eq!(c.one_minus_beta_mu_prime, 0.00625, max_relative = 1e-10);
        assert_relative_eq!(c.mu, 0.068125, max_relative = 1e-10);
        assert_relative_eq!(c.ratio, 10.9, max_relative = 1e-10);
        let ratios: Vec<f64> = [0.1, 0.5, 0.9, 0.99].iter().map(|b| compare_conditioning(&two_state(*b)).ratio).collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn conditioning_at_zero_discount() {
        let c = compare_conditioning(&two_state(0.0));
        assert_relative_eq!(c.mu, c.one_minus_beta_mu_prime, max_relative = 1e-12);
    }

    fn strategy() -> impl Strategy<Value = (BoundInputs, BoundName)> {
        (
            0.0f64..0.99,
            0.1f64..3.0,
            0.0f64..2.0,
            0.01f64..1.0,
            1e-3f64..1.0,
            0usize..5000,
            1usize..100_000,
            0.0f64..10.0,
            prop::sample::select(vec![
                BoundName::Thm1,
                BoundName::Thm2,
                BoundName::Thm3,
                BoundName::Thm4,
                BoundName::Cor1,
                BoundName::Cor2,
            ]),
        )
            .prop_map(|(beta, phi, r_max, mu_prime, lambda, k, n, init, name)| {
                let reg = !matches!(name, BoundName::Thm1 | BoundName::Thm2);
                let alpha = if reg {
                    reg_max_step_size_for(beta, phi, lambda).unwrap()
                } else {
                    max_step_size_for(beta, phi).unwrap()
                };
                let inp = BoundInputs {
                    discount: beta,
                    phi_max: phi,
                    r_max,
                    mu: (1.0 - beta) * mu_prime,
                    mu_prime,
                    alpha,
                    lambda: if reg { lambda } else { 0.0 },
                    k,
                    n,
                    delta: 0.05,
                    initial_error: init,
                    sigma: r_max + 0.5,
                };
                (inp, name)
            })
    }

    proptest! {
        #[test]
        fn bounds_positive_and_decreasing_in_n((inp, name) in strategy()) {
            // cor2's exponent weakens as N grows, so only k = 0 is monotone there.
            let inp = if name == BoundName::Cor2 { BoundInputs { k: 0, ..inp } } else { inp };
            let a = bound(name, &inp).unwrap();
            let b = bound(name, &BoundInputs { n: inp.n * 2, ..inp.clone() }).unwrap();
            prop_assert!(a.value.is_finite() && a.value > 0.0);
            prop_assert!(b.value <= a.value);
            let sum = a.bias_term + a.variance_term + a.drift_term;
            prop_assert!((a.value - sum).abs() <= 1e-12 * a.value.max(1.0));
        }

        #[test]
        fn bias_decreasing_in_k((inp, name) in strategy()) {
            let a = bound(name, &inp).unwrap();
            let b = bound(name, &BoundInputs { k: inp.k + 100, ..inp.clone() }).unwrap();
            prop_assert!(b.bias_term <= a.bias_term);
            prop_assert_eq!(b.variance_term, a.variance_term);
        }

        #[test]
        fn cor1_dominates_twice_thm3((inp, _name) in strategy()) {
            let lambda = if inp.lambda > 0.0 { inp.lambda } else { 0.1 };
            let inp = BoundInputs {
                lambda,
                alpha: reg_max_step_size_for(inp.discount, inp.phi_max, lambda).unwrap(),
                ..inp
            };
            let c = cor1_bound(&inp).unwrap();
            let t = thm3_bound(&inp).unwrap();
            prop_assert!(c.value >= 2.0 * t.value * (1.0 - 1e-15));
        }
    }
}
