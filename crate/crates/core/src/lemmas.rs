//! Executable checks of the matrix and contraction inequalities behind the
//! error bounds.
//!
//! Exact checks evaluate both sides in closed form for many random `θ` and
//! count violations beyond [`LEMMA_TOL`]. Monte-Carlo checks average over
//! i.i.d. transitions and allow three standard errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{regularised_fixed_point, td_fixed_point, TdProblem};
use crate::sampling::{stream_rng, IidSampler, RewardMode};
use crate::td::{max_step_size, reg_max_step_size};

/// Slack allowed on exact checks, relative to `max(1, |rhs|)`.
pub const LEMMA_TOL: f64 = 1e-9;
/// Draws per Monte-Carlo estimate.
pub const MC_DRAWS: usize = 100_000;
/// Number of `θ` directions tested by each Monte-Carlo check.
pub const MC_THETAS: usize = 4;
/// Regularisation strengths used by the regularised checks.
pub const LAMBDAS: [f64; 3] = [1.0, 0.1, 0.01];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Exact,
    MonteCarlo,
}

/// Outcome of one inequality over all trials.
///
/// `worst_slack` is the smallest `rhs − lhs` seen (plus three standard
/// errors for Monte-Carlo checks); negative slack beyond tolerance is a
/// violation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub kind: CheckKind,
    pub trials: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    name: String,
    kind: CheckKind,
    trials: usize,
    violations: usize,
    worst_slack: f64,
}

impl Tally {
    fn new(name: impl Into<String>, kind: CheckKind) -> Self {
        Tally {
            name: name.into(),
            kind,
            trials: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
        }
    }

    /// Records `lhs ≤ rhs`.
    fn le(&mut self, lhs: f64, rhs: f64) {
        let slack = rhs - lhs;
        self.trials += 1;
        self.worst_slack = self.worst_slack.min(slack);
        let tol = match self.kind {
            CheckKind::Exact => LEMMA_TOL * rhs.abs().max(1.0),
            CheckKind::MonteCarlo => 0.0,
        };
        if slack.is_nan() || slack < -tol {
            self.violations += 1;
        }
    }

    fn finish(self) -> LemmaCheck {
        LemmaCheck {
            passed: self.violations == 0,
            name: self.name,
            kind: self.kind,
            trials: self.trials,
            violations: self.violations,
            worst_slack: self.worst_slack,
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// `E[aᵀa]` with `a = φ(s)φ(s)ᵀ − βφ(s)φ(s′)ᵀ`, `s ~ ρ`, `s′ ~ P(s, ·)`.
pub fn second_moment(problem: &TdProblem) -> DMatrix<f64> {
    let d = problem.dim();
    let beta = problem.discount();
    let p = problem.chain().p_pi();
    let rho = problem.stationary();
    let mut out = DMatrix::zeros(d, d);
    for s in 0..problem.n_states() {
        let phi = problem.features().row(s);
        let phi_sq = phi.norm_squared();
        for s2 in 0..problem.n_states() {
            let w = rho[s] * p[(s, s2)];
            if w == 0.0 {
                continue;
            }
            // aᵀa = (φ − βφ′) φᵀφ (φ − βφ′)ᵀ
            let u = &phi - problem.features().row(s2) * beta;
            out += (&u * u.transpose()) * (w * phi_sq);
        }
    }
    out
}

/// Spectral norm via singular values.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Runs every check on `problem` with `trials` random `θ` per exact check.
pub fn verify_lemmas(problem: &TdProblem, seed: u64, trials: usize) -> Result<LemmaReport> {
    let mut report = verify_exact(problem, seed, trials)?;
    report.checks.extend(verify_monte_carlo(problem, seed, MC_DRAWS)?.checks);
    Ok(report)
}

/// The closed-form checks only.
pub fn verify_exact(problem: &TdProblem, seed: u64, trials: usize) -> Result<LemmaReport> {
    if trials < 1 {
        return Err(invalid("need at least one trial"));
    }
    let d = problem.dim();
    let beta = problem.discount();
    let phi2 = problem.phi_max().powi(2);
    let a = problem.a();
    let b_cov = problem.feature_cov();
    let sym = a + a.transpose();
    let mu = problem.mu();
    let mu_prime = problem.mu_prime();
    let moment = second_moment(problem);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut rng = stream_rng(seed, 0x1e44a);

    let mut psd = Tally::new("psd_bound", CheckKind::Exact);
    let mut lower = Tally::new("a_lower", CheckKind::Exact);
    let mut upper2 = Tally::new("a_upper_2", CheckKind::Exact);
    let mut contraction = Tally::new("contraction", CheckKind::Exact);
    let mut reg_contraction = Tally::new("reg_contraction", CheckKind::Exact);

    let alpha = max_step_size(problem)?;
    let reg_alphas: Vec<(f64, f64)> = LAMBDAS
        .iter()
        .map(|&l| reg_max_step_size(problem, l).map(|a| (l, a)))
        .collect::<Result<_>>()?;

    // Expected one-step second moments of (I − α(λI + a)).
    let td_moment = &eye - &sym * alpha + &moment * (alpha * alpha);
    let reg_moments: Vec<(DMatrix<f64>, f64)> = reg_alphas
        .iter()
        .map(|&(l, al)| {
            let shrink = 1.0 - al * l;
            let m = &eye * (shrink * shrink) - &sym * (al * shrink) + &moment * (al * al);
            (m, 1.0 - al * (mu + l))
        })
        .collect();

    for _ in 0..trials {
        let theta = random_vector(&mut rng, d);
        let u = random_vector(&mut rng, d);
        let v = random_vector(&mut rng, d);
        let (tu, tv) = (theta.dot(&u), theta.dot(&v));
        psd.le((tu * tv).abs(), (tu * tu + tv * tv) / 2.0);

        let q_b = quad(b_cov, &theta);
        let q_sym = quad(&sym, &theta);
        lower.le(2.0 * (1.0 - beta) * q_b, q_sym);
        lower.le(q_sym, 2.0 * (1.0 + beta) * q_b);

        upper2.le(quad(&moment, &theta), phi2 * (1.0 + beta).powi(2) * q_b);

        let norm2 = theta.norm_squared();
        contraction.le(quad(&td_moment, &theta), (1.0 - alpha * (1.0 - beta) * mu_prime) * norm2);
        for (m, factor) in &reg_moments {
            reg_contraction.le(quad(m, &theta), factor * norm2);
        }
    }

    let mut a_upper = Tally::new("a_upper", CheckKind::Exact);
    a_upper.le(spectral_norm(a), (1.0 + beta) * phi2);

    let mut feature_bound = Tally::new("regtd_feature_bound", CheckKind::Exact);
    for &(l, al) in &reg_alphas {
        let m = &eye - (a + &eye * l) * al;
        feature_bound.le(spectral_norm(&(m.transpose() * &m)), 1.0 - al * (mu + l));
    }

    let mut drift = Tally::new("reg_drift", CheckKind::Exact);
    let star = td_fixed_point(problem)?;
    let a_inv_norm = 1.0 / a.clone().svd(false, false).singular_values.min();
    for &l in &LAMBDAS {
        let reg = regularised_fixed_point(problem, l)?;
        let shifted = a + &eye * l;
        let shifted_inv_norm = 1.0 / shifted.svd(false, false).singular_values.min();
        drift.le((&star - reg).norm(), l * a_inv_norm * shifted_inv_norm * problem.b().norm());
    }

    Ok(LemmaReport {
        checks: vec![
            psd.finish(),
            a_upper.finish(),
            lower.finish(),
            upper2.finish(),
            contraction.finish(),
            reg_contraction.finish(),
            feature_bound.finish(),
            drift.finish(),
        ],
    })
}

/// Sampled versions of the second-moment and contraction checks.
pub fn verify_monte_carlo(problem: &TdProblem, seed: u64, draws: usize) -> Result<LemmaReport> {
    if draws < 2 {
        return Err(invalid("need at least two Monte-Carlo draws"));
    }
    let d = problem.dim();
    let beta = problem.discount();
    let phi2 = problem.phi_max().powi(2);
    let mu = problem.mu();
    let mu_prime = problem.mu_prime();
    let features = problem.features();
    let alpha = max_step_size(problem)?;
    let lambda = LAMBDAS[1];
    let reg_alpha = reg_max_step_size(problem, lambda)?;
    let mut rng = stream_rng(seed, 0x3c);

    let mut upper2 = Tally::new("a_upper_2_mc", CheckKind::MonteCarlo);
    let mut contraction = Tally::new("contraction_mc", CheckKind::MonteCarlo);
    let mut reg_contraction = Tally::new("reg_contraction_mc", CheckKind::MonteCarlo);

    for j in 0..MC_THETAS {
        let theta = random_vector(&mut rng, d);
        let norm2 = theta.norm_squared();
        let q_b = quad(problem.feature_cov(), &theta);
        let mut stats = [Welford::default(), Welford::default(), Welford::default()];
        let sampler = IidSampler::new(problem, stream_rng(seed, 0x3c00 + j as u64), RewardMode::Expected);
        for tr in sampler.take(draws) {
            // aθ = φ(s) (φ(s) − βφ(s′))ᵀθ
            let coef = features.value(tr.s, theta.as_slice()) - beta * features.value(tr.s_next, theta.as_slice());
            let phi = features.row(tr.s);
            let a_theta = &phi * coef;
            stats[0].push(a_theta.norm_squared());
            stats[1].push((&theta - &a_theta * alpha).norm_squared());
            stats[2].push((&theta * (1.0 - reg_alpha * lambda) - &a_theta * reg_alpha).norm_squared());
        }
        let [s0, s1, s2] = stats;
        upper2.le(s0.mean() - 3.0 * s0.std_error(), phi2 * (1.0 + beta).powi(2) * q_b);
        contraction.le(s1.mean() - 3.0 * s1.std_error(), (1.0 - alpha * (1.0 - beta) * mu_prime) * norm2);
        reg_contraction.le(s2.mean() - 3.0 * s2.std_error(), (1.0 - reg_alpha * (mu + lambda)) * norm2);
    }

    Ok(LemmaReport {
        checks: vec![upper2.finish(), contraction.finish(), reg_contraction.finish()],
    })
}

/// Running mean and variance.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance with `n − 1` in the denominator.
    pub(crate) fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub(crate) fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{FeatureMap, PolicyChain};
    use crate::sampling::sample_iid;
    use approx::assert_relative_eq;

    fn two_state(beta: f64) -> TdProblem {
        let chain = PolicyChain::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_element(2, 1.0),
            beta,
        )
        .unwrap();
        TdProblem::new(chain, FeatureMap::from_rows(vec![vec![1.0], vec![0.5]]).unwrap()).unwrap()
    }

    fn three_state() -> TdProblem {
        let chain = PolicyChain::new(
            DMatrix::from_row_slice(3, 3, &[0.1, 0.6, 0.3, 0.5, 0.2, 0.3, 0.3, 0.3, 0.4]),
            DVector::from_row_slice(&[1.0, -0.5, 0.2]),
            0.8,
        )
        .unwrap();
        let f = FeatureMap::from_rows(vec![vec![1.0, 0.0], vec![0.3, 0.9], vec![-0.4, 0.5]]).unwrap();
        TdProblem::new(chain, f).unwrap()
    }

    #[test]
    fn second_moment_matches_sampling() {
        let p = three_state();
        let m = second_moment(&p);
        let mut rng = stream_rng(4, 0);
        let draws = 400_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..draws {
            let tr = sample_iid(&p, &mut rng);
            let phi = p.features().row(tr.s);
            let phi2 = p.features().row(tr.s_next);
            let a = &phi * phi.transpose() - &phi * phi2.transpose() * 0.8;
            acc += a.transpose() * a;
        }
        acc /= draws as f64;
        assert!((acc - &m).abs().max() < 0.01, "{m}");
    }

    #[test]
    fn second_moment_two_state_closed_form() {
        // d = 1: E[a²] = Σ ρ P φ²(φ − βφ′)².
        let beta = 0.7;
        let m = second_moment(&two_state(beta))[(0, 0)];
        let phis = [1.0, 0.5];
        let mut expect = 0.0;
        for &x in &phis {
            for &y in &phis {
                expect += 0.25 * x * x * (x - beta * y) * (x - beta * y);
            }
        }
        assert_relative_eq!(m, expect, max_relative = 1e-14);
    }

    #[test]
    fn all_checks_pass_on_examples() {
        for beta in [0.0, 0.5, 0.9, 0.99] {
            let report = verify_lemmas(&two_state(beta), 1, 1000).unwrap();
            assert!(report.passed(), "{report:?}");
        }
        let report = verify_lemmas(&three_state(), 2, 1000).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checks.len(), 11);
    }

    #[test]
    fn sandwich_collapses_at_zero_discount() {
        let report = verify_exact(&two_state(0.0), 3, 1000).unwrap();
        let lower = report.get("a_lower").unwrap();
        assert!(lower.worst_slack.abs() < 1e-12);
        assert_eq!(lower.trials, 2000);
    }

    #[test]
    fn tally_flags_violations() {
        let mut t = Tally::new("x", CheckKind::Exact);
        t.le(1.0, 1.0 + 1e-12);
        t.le(1.0 + 1e-10, 1.0);
        t.le(2.0, 1.0);
        let c = t.finish();
        assert_eq!(c.violations, 1);
        assert!(!c.passed);
        assert_relative_eq!(c.worst_slack, -1.0);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 0.0];
        let mut w = Welford::default();
        xs.iter().for_each(|x| w.push(*x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(w.mean(), mean, max_relative = 1e-15);
        assert_relative_eq!(w.variance(), var, max_relative = 1e-14);
    }
}
