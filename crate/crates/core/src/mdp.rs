//! Finite MDPs under a fixed policy, linear features and the matrices of
//! the projected Bellman equation.
//!
//! The central type is [`TdProblem`]: a Markov reward process together with
//! a feature map, from which the stationary distribution `ρ`, the TD system
//! `A θ = b` and the scalar constants entering every step-size rule and
//! bound (`μ`, `μ′`, `Φ_max`, `R_max`) are derived once and then shared
//! read-only.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Row sums of stochastic matrices must be within this of one.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Entries at or below this are not edges of the transition graph.
pub const EDGE_TOL: f64 = 1e-15;
/// Residual accepted from the dense linear solves.
pub const SOLVE_TOL: f64 = 1e-9;

const RANK_TOL: f64 = 1e-10;
const COVARIANCE_TOL: f64 = 1e-12;
const POWER_ITER_TOL: f64 = 1e-12;
const POWER_ITER_CAP: usize = 1_000_000;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

fn check_distribution(what: &'static str, row: usize, probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic { what, row, sum });
    }
    Ok(())
}

fn check_discount(discount: f64) -> Result<()> {
    if !(0.0..1.0).contains(&discount) {
        return Err(invalid(format!("discount must lie in [0, 1), got {discount}")));
    }
    Ok(())
}

/// A finite MDP `⟨S, A, P, r, β⟩`.
#[derive(Clone, Debug)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    // P[s][a][s'] stored row-major as ((s * n_actions) + a) * n_states + s'.
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    discount: f64,
}

impl Mdp {
    /// Builds an MDP from nested `P[s][a][s′]` probabilities and an
    /// `r[s][a]` reward table.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(invalid("an MDP needs at least one state"));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(invalid("an MDP needs at least one action"));
        }
        check_discount(discount)?;
        if reward.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} rows, expected {n_states}",
                reward.len()
            )));
        }

        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "state {s} has {} actions, expected {n_actions}",
                    per_action.len()
                )));
            }
            for row in per_action {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition row of state {s} has {} entries, expected {n_states}",
                        row.len()
                    )));
                }
                check_distribution("transition", s, row)?;
                flat.extend_from_slice(row);
            }
        }

        let mut r = DMatrix::zeros(n_states, n_actions);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "reward row {s} has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            for (a, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(invalid(format!("reward r[{s}][{a}] is not finite")));
                }
                r[(s, a)] = *v;
            }
        }

        Ok(Mdp {
            n_states,
            n_actions,
            transition: flat,
            reward: r,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// `P(s′ | s, a)`.
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// The declared reward bound `max |r(s, a)|` over all pairs.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// A stationary randomised policy `π(s, a)`.
#[derive(Clone, Debug)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || m == 0 {
            return Err(invalid("policy must be non-empty"));
        }
        let mut probs = DMatrix::zeros(n, m);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!("policy row {s} has {} entries, expected {m}", row.len())));
            }
            check_distribution("policy", s, row)?;
            for (a, p) in row.iter().enumerate() {
                probs[(s, a)] = *p;
            }
        }
        Ok(Policy { probs })
    }

    /// Picks action `actions[s]` with probability one in every state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(invalid(format!("action {a} out of range")));
                }
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Policy::new(rows)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// The Markov reward process `(P_π, R, β)` obtained by fixing a policy.
#[derive(Clone, Debug)]
pub struct PolicyChain {
    p_pi: DMatrix<f64>,
    r_pi: DVector<f64>,
    discount: f64,
    r_max: f64,
    // Per state: (probability, reward) pairs of the action-level rewards.
    reward_support: Vec<Vec<(f64, f64)>>,
}

impl PolicyChain {
    /// Builds a chain directly from a transition matrix and expected
    /// per-state rewards. Rewards are deterministic given the state.
    pub fn new(p_pi: DMatrix<f64>, r_pi: DVector<f64>, discount: f64) -> Result<Self> {
        let n = p_pi.nrows();
        if n == 0 || p_pi.ncols() != n || r_pi.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "transition is {}x{}, rewards have length {}",
                p_pi.nrows(),
                p_pi.ncols(),
                r_pi.len()
            )));
        }
        check_discount(discount)?;
        for s in 0..n {
            let row: Vec<f64> = p_pi.row(s).iter().copied().collect();
            check_distribution("chain transition", s, &row)?;
        }
        if r_pi.iter().any(|r| !r.is_finite()) {
            return Err(invalid("rewards must be finite"));
        }
        let r_max = r_pi.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let reward_support = r_pi.iter().map(|&r| vec![(1.0, r)]).collect();
        let chain = PolicyChain {
            p_pi,
            r_pi,
            discount,
            r_max,
            reward_support,
        };
        chain.check_irreducible()?;
        Ok(chain)
    }

    pub fn n_states(&self) -> usize {
        self.p_pi.nrows()
    }

    pub fn p_pi(&self) -> &DMatrix<f64> {
        &self.p_pi
    }

    pub fn r_pi(&self) -> &DVector<f64> {
        &self.r_pi
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `max |r(s, a)|` over pairs the policy can select.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// The distribution of the one-step reward in state `s`.
    pub fn reward_support(&self, s: usize) -> &[(f64, f64)] {
        &self.reward_support[s]
    }

    /// Fails with [`Error::NotIrreducible`] unless the positive-entry graph
    /// is strongly connected.
    pub fn check_irreducible(&self) -> Result<()> {
        let n = self.n_states();
        let forward = reachable(n, |u, v| self.p_pi[(u, v)] > EDGE_TOL);
        let backward = reachable(n, |u, v| self.p_pi[(v, u)] > EDGE_TOL);
        match (0..n).find(|&s| !forward[s] || !backward[s]) {
            Some(s) => Err(Error::NotIrreducible(s)),
            None => Ok(()),
        }
    }

    /// Period of the (irreducible) chain: gcd of all cycle lengths.
    pub fn period(&self) -> usize {
        let n = self.n_states();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if self.p_pi[(u, v)] > EDGE_TOL && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut g = 0usize;
        for u in 0..n {
            for v in 0..n {
                if self.p_pi[(u, v)] > EDGE_TOL && level[u] != usize::MAX && level[v] != usize::MAX {
                    let diff = (level[u] + 1).abs_diff(level[v]);
                    g = gcd(g, diff);
                }
            }
        }
        g.max(1)
    }

    /// `(T^π V)(s) = R(s) + β Σ_{s′} P_π(s, s′) V(s′)`.
    pub fn bellman_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "value vector has length {}, expected {}",
                v.len(),
                self.n_states()
            )));
        }
        Ok(&self.r_pi + (&self.p_pi * v) * self.discount)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reachable(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for (v, visited) in seen.iter_mut().enumerate() {
            if !*visited && edge(u, v) {
                *visited = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Reduces an MDP under `policy` to its Markov reward process.
pub fn induce_chain(mdp: &Mdp, policy: &Policy) -> Result<PolicyChain> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let pi = policy.probs();
    if pi.nrows() != n || pi.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP has {n} states and {m} actions",
            pi.nrows(),
            pi.ncols()
        )));
    }

    let mut p_pi = DMatrix::zeros(n, n);
    let mut r_pi = DVector::zeros(n);
    let mut r_max = 0.0f64;
    let mut reward_support = Vec::with_capacity(n);
    for s in 0..n {
        let mut support = Vec::new();
        for a in 0..m {
            let w = pi[(s, a)];
            if w == 0.0 {
                continue;
            }
            let r = mdp.reward()[(s, a)];
            r_pi[s] += w * r;
            r_max = r_max.max(r.abs());
            support.push((w, r));
            for s2 in 0..n {
                p_pi[(s, s2)] += w * mdp.prob(s, a, s2);
            }
        }
        reward_support.push(support);
    }

    let chain = PolicyChain {
        p_pi,
        r_pi,
        discount: mdp.discount(),
        r_max,
        reward_support,
    };
    for s in 0..n {
        let row: Vec<f64> = chain.p_pi.row(s).iter().copied().collect();
        check_distribution("induced transition", s, &row)?;
    }
    chain.check_irreducible()?;
    Ok(chain)
}

/// Stationary distribution `ρ = ρ P_π` of an irreducible chain.
///
/// Power iteration first; if it stalls (periodic or very slowly mixing
/// chains) the dense system `(P_πᵀ − I) ρ = 0, Σ ρ = 1` is solved instead.
pub fn stationary_distribution(chain: &PolicyChain) -> Result<DVector<f64>> {
    chain.check_irreducible()?;
    let n = chain.n_states();
    let p = chain.p_pi();
    let pt = p.transpose();

    let mut rho = DVector::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    for _ in 0..POWER_ITER_CAP {
        let mut next = &pt * &rho;
        let total = next.sum();
        next /= total;
        let change = (&next - &rho).lp_norm(1);
        rho = next;
        if change <= POWER_ITER_TOL {
            converged = true;
            break;
        }
    }

    let residual = |r: &DVector<f64>| (&pt * r - r).amax();
    if !converged || residual(&rho) > STATIONARY_RESIDUAL_TOL || rho.iter().any(|x| *x <= 0.0) {
        rho = dense_stationary(p)?;
    }
    if residual(&rho) > STATIONARY_RESIDUAL_TOL || rho.iter().any(|x| *x <= 0.0) {
        return Err(Error::NotConverged("stationary distribution"));
    }
    Ok(rho)
}

fn dense_stationary(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let rho = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotConverged("dense stationary solve"))?;
    let total = rho.sum();
    Ok(rho / total)
}

/// A feature matrix `Φ` with one row `φ(s)ᵀ` per state.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    phi_max: f64,
}

impl FeatureMap {
    /// Validates full column rank.
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (n, d) = phi.shape();
        if n == 0 || d == 0 {
            return Err(invalid("feature matrix must be non-empty"));
        }
        if d > n {
            return Err(Error::RankDeficient(0.0));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        let sv = phi.clone().svd(false, false).singular_values;
        let smallest = sv.min();
        if smallest <= RANK_TOL {
            return Err(Error::RankDeficient(smallest));
        }
        let phi_max = (0..n).map(|s| phi.row(s).norm()).fold(0.0, f64::max);
        Ok(FeatureMap { phi, phi_max })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("feature rows have unequal lengths".into()));
        }
        FeatureMap::new(DMatrix::from_row_iterator(n, d, rows.into_iter().flatten()))
    }

    pub fn identity(n: usize) -> Self {
        FeatureMap {
            phi: DMatrix::identity(n, n),
            phi_max: 1.0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `max_s ‖φ(s)‖₂`.
    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    /// `θᵀ φ(s)`.
    #[inline]
    pub fn value(&self, s: usize, theta: &[f64]) -> f64 {
        theta.iter().enumerate().map(|(j, t)| self.phi[(s, j)] * t).sum()
    }

    #[inline]
    pub fn get(&self, s: usize, j: usize) -> f64 {
        self.phi[(s, j)]
    }

    pub fn row(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }
}

/// Everything TD needs to know about a policy-evaluation problem.
#[derive(Clone, Debug)]
pub struct TdProblem {
    chain: PolicyChain,
    features: FeatureMap,
    stationary: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    feature_cov: DMatrix<f64>,
    mu: f64,
    mu_prime: f64,
}

impl TdProblem {
    /// Computes `ρ`, `A = Φᵀ D (I − β P_π) Φ`, `b = Φᵀ D R`, `B = Φᵀ D Φ`,
    /// `μ = λ_min((A + Aᵀ)/2)` and `μ′ = λ_min(B)`.
    pub fn new(chain: PolicyChain, features: FeatureMap) -> Result<Self> {
        let n = chain.n_states();
        if features.n_states() != n {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, chain has {n} states",
                features.n_states()
            )));
        }
        let stationary = stationary_distribution(&chain)?;
        let phi = features.matrix();
        let d_phi = DMatrix::from_fn(n, phi.ncols(), |s, j| stationary[s] * phi[(s, j)]);
        let dphi_t = d_phi.transpose();

        let feature_cov = &dphi_t * phi;
        let feature_cov = (&feature_cov + feature_cov.transpose()) * 0.5;
        let next = chain.p_pi() * phi;
        let a = &feature_cov - (&dphi_t * next) * chain.discount();
        let b = &dphi_t * chain.r_pi();

        let mu_prime = min_eigenvalue(&feature_cov);
        if mu_prime <= COVARIANCE_TOL {
            return Err(Error::DegenerateCovariance(mu_prime));
        }
        let mu = min_eigenvalue(&((&a + a.transpose()) * 0.5));

        Ok(TdProblem {
            chain,
            features,
            stationary,
            a,
            b,
            feature_cov,
            mu,
            mu_prime,
        })
    }

    /// Builds the problem from an MDP, a policy and features.
    pub fn from_mdp(mdp: &Mdp, policy: &Policy, features: FeatureMap) -> Result<Self> {
        TdProblem::new(induce_chain(mdp, policy)?, features)
    }

    pub fn chain(&self) -> &PolicyChain {
        &self.chain
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    /// `ρ`, the diagonal of `D`.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `B = Φᵀ D Φ`.
    pub fn feature_cov(&self) -> &DMatrix<f64> {
        &self.feature_cov
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mu_prime(&self) -> f64 {
        self.mu_prime
    }

    pub fn phi_max(&self) -> f64 {
        self.features.phi_max()
    }

    pub fn r_max(&self) -> f64 {
        self.chain.r_max()
    }

    pub fn discount(&self) -> f64 {
        self.chain.discount()
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Returns a copy with rewards multiplied by `scale`; every matrix
    /// except `b` is unchanged.
    pub fn with_scaled_rewards(&self, scale: f64) -> Result<Self> {
        let mut chain = self.chain.clone();
        chain.r_pi *= scale;
        chain.r_max *= scale.abs();
        for support in &mut chain.reward_support {
            for (_, r) in support.iter_mut() {
                *r *= scale;
            }
        }
        TdProblem::new(chain, self.features.clone())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn solve_checked(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    let mut x = lu.solve(rhs).ok_or(Error::Singular {
        residual: f64::INFINITY,
        tolerance: SOLVE_TOL,
    })?;
    // One step of iterative refinement.
    let r = rhs - m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let residual = (m * &x - rhs).norm();
    if !residual.is_finite() || residual > SOLVE_TOL {
        return Err(Error::Singular {
            residual,
            tolerance: SOLVE_TOL,
        });
    }
    Ok(x)
}

/// The TD fixed point `θ* = A⁻¹ b`.
pub fn td_fixed_point(problem: &TdProblem) -> Result<DVector<f64>> {
    solve_checked(problem.a(), problem.b())
}

/// The regularised fixed point `θ*_reg = (A + λI)⁻¹ b`.
pub fn regularised_fixed_point(problem: &TdProblem, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("regularisation must be positive, got {lambda}")));
    }
    let d = problem.dim();
    let shifted = problem.a() + DMatrix::identity(d, d) * lambda;
    solve_checked(&shifted, problem.b())
}

/// `‖Φθ − Π T^π(Φθ)‖_D` with `Π = Φ (ΦᵀDΦ)⁻¹ ΦᵀD`.
pub fn projected_bellman_residual(problem: &TdProblem, theta: &DVector<f64>) -> Result<f64> {
    if theta.len() != problem.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter has length {}, expected {}",
            theta.len(),
            problem.dim()
        )));
    }
    let phi = problem.features().matrix();
    let rho = problem.stationary();
    let v = phi * theta;
    let tv = problem.chain().bellman_apply(&v)?;
    let weighted = phi.transpose() * tv.component_mul(rho);
    let coeffs = problem
        .feature_cov()
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateCovariance(problem.mu_prime()))?
        .solve(&weighted);
    let diff = v - phi * coeffs;
    Ok(diff.component_mul(&diff).dot(rho).sqrt())
}

/// `θ*` and, when requested, `θ*_reg` for one `λ`.
#[derive(Clone, Debug)]
pub struct FixedPoints {
    pub theta_star: DVector<f64>,
    pub theta_star_reg: Option<(f64, DVector<f64>)>,
}

impl FixedPoints {
    pub fn compute(problem: &TdProblem, lambda: Option<f64>) -> Result<Self> {
        let theta_star = td_fixed_point(problem)?;
        let theta_star_reg = match lambda {
            Some(l) => Some((l, regularised_fixed_point(problem, l)?)),
            None => None,
        };
        Ok(FixedPoints {
            theta_star,
            theta_star_reg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_state(p: f64, beta: f64, rewards: [f64; 2]) -> TdProblem {
        let chain = PolicyChain::new(
            DMatrix::from_row_slice(2, 2, &[1.0 - p, p, p, 1.0 - p]),
            DVector::from_row_slice(&rewards),
            beta,
        )
        .unwrap();
        let features = FeatureMap::from_rows(vec![vec![1.0], vec![0.5]]).unwrap();
        TdProblem::new(chain, features).unwrap()
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    fn random_chain(rng: &mut ChaCha8Rng, n: usize, beta: f64) -> PolicyChain {
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for (j, v) in random_stochastic(rng, n).into_iter().enumerate() {
                p[(s, j)] = v;
            }
        }
        let r = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        PolicyChain::new(p, r, beta).unwrap()
    }

    #[test]
    fn deterministic_policy_selects_slices() {
        let p = vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        ];
        let mdp = Mdp::new(p, vec![vec![1.0, 2.0], vec![3.0, 4.0]], 0.9).unwrap();
        let policy = Policy::deterministic(&[1, 0], 2).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert_eq!(chain.p_pi().row(0).iter().copied().collect::<Vec<_>>(), vec![0.2, 0.8]);
        assert_eq!(chain.p_pi().row(1).iter().copied().collect::<Vec<_>>(), vec![0.3, 0.7]);
        assert_eq!(chain.r_pi().as_slice(), &[2.0, 3.0]);
        // R_max only looks at actions the policy can take.
        assert_eq!(chain.r_max(), 3.0);
        assert_eq!(mdp.r_max(), 4.0);
    }

    #[test]
    fn uniform_policy_over_identical_actions() {
        let row = vec![vec![0.25, 0.75], vec![0.25, 0.75]];
        let p = vec![row.clone(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]];
        let mdp = Mdp::new(p, vec![vec![0.0, 0.0], vec![0.0, 0.0]], 0.5).unwrap();
        let chain = induce_chain(&mdp, &Policy::uniform(2, 2)).unwrap();
        assert_eq!(chain.p_pi()[(0, 0)], 0.25);
        assert_eq!(chain.p_pi()[(0, 1)], 0.75);
    }

    #[test]
    fn random_mdp_induces_stochastic_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, m) = (4, 3);
        let p: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..m).map(|_| random_stochastic(&mut rng, n)).collect())
            .collect();
        let r: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
        let pi: Vec<Vec<f64>> = (0..n).map(|_| random_stochastic(&mut rng, m)).collect();
        let mdp = Mdp::new(p.clone(), r.clone(), 0.9).unwrap();
        let chain = induce_chain(&mdp, &Policy::new(pi.clone()).unwrap()).unwrap();
        for s in 0..n {
            let sum: f64 = chain.p_pi().row(s).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            // Direct summation oracle.
            for s2 in 0..n {
                let expect: f64 = (0..m).map(|a| pi[s][a] * p[s][a][s2]).sum();
                assert_abs_diff_eq!(chain.p_pi()[(s, s2)], expect, epsilon = 1e-15);
            }
            let expect_r: f64 = (0..m).map(|a| pi[s][a] * r[s][a]).sum();
            assert_abs_diff_eq!(chain.r_pi()[s], expect_r, epsilon = 1e-15);
        }
    }

    #[test]
    fn induce_chain_rejects_bad_inputs() {
        let p = vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]];
        let mdp = Mdp::new(p, vec![vec![0.0], vec![0.0]], 0.5).unwrap();
        let wrong_shape = Policy::uniform(3, 1);
        assert!(matches!(induce_chain(&mdp, &wrong_shape), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            Policy::new(vec![vec![0.5, 0.6]]),
            Err(Error::NotStochastic { .. })
        ));
        assert!(matches!(
            Mdp::new(vec![vec![vec![0.4, 0.5]], vec![vec![1.0, 0.0]]], vec![vec![0.0], vec![0.0]], 0.5),
            Err(Error::NotStochastic { .. })
        ));
        assert!(Mdp::new(vec![vec![vec![1.0]]], vec![vec![0.0]], 1.0).is_err());
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
        let err = PolicyChain::new(p, DVector::zeros(3), 0.5).unwrap_err();
        assert!(matches!(err, Error::NotIrreducible(2)));
    }

    #[test]
    fn stationary_of_symmetric_and_doubly_stochastic_chains() {
        let p = two_state(0.5, 0.9, [1.0, 1.0]);
        assert_abs_diff_eq!(p.stationary()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.stationary()[1], 0.5, epsilon = 1e-12);

        let m = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.5, 0.2, 0.3, 0.3, 0.5, 0.2]);
        let chain = PolicyChain::new(m, DVector::zeros(3), 0.5).unwrap();
        let rho = stationary_distribution(&chain).unwrap();
        for x in rho.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_matches_dense_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chain = random_chain(&mut rng, 6, 0.9);
        let rho = stationary_distribution(&chain).unwrap();
        // Oracle: eigenvector of Pᵀ for eigenvalue 1 via SVD null space of (Pᵀ − I).
        let m = chain.p_pi().transpose() - DMatrix::identity(6, 6);
        let svd = m.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let idx = svd.singular_values.imin();
        let mut oracle: DVector<f64> = v_t.row(idx).transpose();
        let total = oracle.sum();
        oracle /= total;
        for i in 0..6 {
            assert_abs_diff_eq!(rho[i], oracle[i], epsilon = 1e-8);
        }
        let residual = (chain.p_pi().transpose() * &rho - &rho).amax();
        assert!(residual <= 1e-10);
    }

    #[test]
    fn periodic_chain_falls_back_to_dense_solve() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let chain = PolicyChain::new(p, DVector::zeros(3), 0.5).unwrap();
        assert_eq!(chain.period(), 3);
        let rho = stationary_distribution(&chain).unwrap();
        for x in rho.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_state_example_matrices() {
        for beta in [0.0, 0.1, 0.5, 0.9, 0.99] {
            let p = two_state(0.5, beta, [1.0, 1.0]);
            assert_abs_diff_eq!(p.a()[(0, 0)], 5.0 / 8.0 - 9.0 * beta / 16.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.feature_cov()[(0, 0)], 5.0 / 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_discount_gives_a_equal_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = random_chain(&mut rng, 5, 0.0);
        let phi = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = TdProblem::new(chain, FeatureMap::new(phi).unwrap()).unwrap();
        assert_eq!(p.a(), p.feature_cov());
    }

    #[test]
    fn a_matches_monte_carlo_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chain = random_chain(&mut rng, 5, 0.8);
        let phi = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = TdProblem::new(chain, FeatureMap::new(phi.clone()).unwrap()).unwrap();

        let cdf = |w: &[f64], u: f64| {
            let mut acc = 0.0;
            for (i, x) in w.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            w.len() - 1
        };
        let rho: Vec<f64> = p.stationary().iter().copied().collect();
        let rows: Vec<Vec<f64>> = (0..5).map(|s| p.chain().p_pi().row(s).iter().copied().collect()).collect();
        let draws = 1_000_000usize;
        let mut sum = [[0.0f64; 2]; 2];
        let mut sum_sq = [[0.0f64; 2]; 2];
        for _ in 0..draws {
            let s = cdf(&rho, rng.random());
            let s2 = cdf(&rows[s], rng.random());
            for i in 0..2 {
                for j in 0..2 {
                    let x = phi[(s, i)] * (phi[(s, j)] - 0.8 * phi[(s2, j)]);
                    sum[i][j] += x;
                    sum_sq[i][j] += x * x;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let mean = sum[i][j] / draws as f64;
                let var = sum_sq[i][j] / draws as f64 - mean * mean;
                let se = (var / draws as f64).sqrt();
                assert!((mean - p.a()[(i, j)]).abs() <= 3.0 * se, "A[{i}{j}]");
            }
        }
    }

    #[test]
    fn rank_deficient_features_are_rejected() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(FeatureMap::new(phi), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn fixed_points_on_two_state_example() {
        let p = two_state(0.5, 0.9, [1.0, 1.0]);
        let theta = td_fixed_point(&p).unwrap();
        assert_abs_diff_eq!(p.a()[(0, 0)], 0.11875, epsilon = 1e-12);
        assert_abs_diff_eq!(p.b()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[0], 0.75 / 0.11875, epsilon = 1e-10);

        let p = two_state(0.5, 0.99, [1.0, 1.0]);
        let a = 5.0 / 8.0 - 9.0 * 0.99 / 16.0;
        let reg = regularised_fixed_point(&p, 0.1).unwrap();
        assert_abs_diff_eq!(reg[0], 0.75 / (a + 0.1), epsilon = 1e-10);
    }

    #[test]
    fn zero_rewards_give_zero_fixed_points() {
        let p = two_state(0.3, 0.9, [0.0, 0.0]);
        assert_eq!(td_fixed_point(&p).unwrap()[0], 0.0);
        for l in [1.0, 0.1, 1e-3] {
            assert_eq!(regularised_fixed_point(&p, l).unwrap()[0], 0.0);
        }
        assert!(regularised_fixed_point(&p, 0.0).is_err());
    }

    #[test]
    fn regularised_fixed_point_converges_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chain = random_chain(&mut rng, 6, 0.9);
        let phi = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = TdProblem::new(chain, FeatureMap::new(phi).unwrap()).unwrap();
        let star = td_fixed_point(&p).unwrap();
        let mut prev = f64::INFINITY;
        for l in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let gap = (regularised_fixed_point(&p, l).unwrap() - &star).norm();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn tabular_fixed_point_solves_bellman_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chain = random_chain(&mut rng, 5, 0.7);
        let p = TdProblem::new(chain.clone(), FeatureMap::identity(5)).unwrap();
        let theta = td_fixed_point(&p).unwrap();
        // Dense oracle: V = (I − βP)⁻¹ R.
        let v = (DMatrix::identity(5, 5) - chain.p_pi() * 0.7).lu().solve(chain.r_pi()).unwrap();
        for s in 0..5 {
            assert_abs_diff_eq!(theta[s], v[s], epsilon = 1e-9);
        }
        assert!((p.a() * &theta - p.b()).norm() <= 1e-9);
        assert!(projected_bellman_residual(&p, &v).unwrap() <= 1e-8);
    }

    #[test]
    fn bellman_apply_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chain = random_chain(&mut rng, 4, 0.6);
        assert_eq!(&chain.bellman_apply(&DVector::zeros(4)).unwrap(), chain.r_pi());
        let v = (DMatrix::identity(4, 4) - chain.p_pi() * 0.6).lu().solve(chain.r_pi()).unwrap();
        let tv = chain.bellman_apply(&v).unwrap();
        assert!((tv - &v).amax() <= 1e-9);

        let undiscounted = PolicyChain::new(chain.p_pi().clone(), chain.r_pi().clone(), 0.0).unwrap();
        let any = DVector::from_fn(4, |i, _| i as f64 * 3.0);
        assert_eq!(&undiscounted.bellman_apply(&any).unwrap(), chain.r_pi());
        assert!(chain.bellman_apply(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn projected_residual_vanishes_only_at_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let chain = random_chain(&mut rng, 6, 0.9);
        let phi = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = TdProblem::new(chain.clone(), FeatureMap::new(phi.clone()).unwrap()).unwrap();
        let star = td_fixed_point(&p).unwrap();
        assert!(projected_bellman_residual(&p, &star).unwrap() <= 1e-8);

        let mut moved = star.clone();
        moved[0] += 1.0;
        let got = projected_bellman_residual(&p, &moved).unwrap();
        assert!(got > 1e-3);

        // Compose Π and T^π explicitly.
        let d = DMatrix::from_diagonal(p.stationary());
        let b = phi.transpose() * &d * &phi;
        let proj = &phi * b.try_inverse().unwrap() * phi.transpose() * &d;
        let v = &phi * &moved;
        let diff = &v - proj * chain.bellman_apply(&v).unwrap();
        let expect = (diff.transpose() * &d * &diff)[(0, 0)].sqrt();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-10);
    }

    #[test]
    fn mu_prime_matches_dense_eigen_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chain = random_chain(&mut rng, 7, 0.9);
        let phi = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = TdProblem::new(chain, FeatureMap::new(phi).unwrap()).unwrap();
        let eig = p.feature_cov().clone().symmetric_eigenvalues();
        assert_abs_diff_eq!(p.mu_prime(), eig.min(), epsilon = 1e-9);
        assert!(p.mu() > 0.0);
        assert!(p.mu() >= (1.0 - 0.9) * p.mu_prime() - 1e-12);
    }
}
