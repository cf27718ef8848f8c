//! TD(0) update rules, universal step sizes and tail-averaged runs.
//!
//! Four variants share one loop: plain TD(0), TD(0) projected onto an
//! `H`-ball, regularised TD with shrinkage `(1 − αλ)`, and the projected
//! regularised form. A run keeps only the current iterate, the running mean
//! of iterates `k+1, …, t` and a logarithmic number of error snapshots, so
//! memory is independent of the horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{FeatureMap, TdProblem};
use crate::sampling::{
    drop_k_stream, stream_rng, IidSampler, MarkovStream, RewardMode, Start, Transition,
};

/// Iterates with norm above this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// First snapshot step is `2^FIRST_SNAPSHOT_POW`.
pub const FIRST_SNAPSHOT_POW: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Projected,
    Regularised,
    ProjectedRegularised,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::Projected,
        Variant::Regularised,
        Variant::ProjectedRegularised,
    ];

    pub fn is_projected(self) -> bool {
        matches!(self, Variant::Projected | Variant::ProjectedRegularised)
    }

    pub fn is_regularised(self) -> bool {
        matches!(self, Variant::Regularised | Variant::ProjectedRegularised)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Projected => "projected",
            Variant::Regularised => "regularised",
            Variant::ProjectedRegularised => "projected_regularised",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant {s:?}")))
    }
}

/// Source of transitions for a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Iid,
    Markov,
    /// Every `K`-th transition of a Markov trajectory.
    DropK(usize),
}

/// Everything a single run needs besides the problem.
///
/// `None` fields take their defaults when the run starts: `alpha` the
/// matching universal step size, `h_radius` `2‖b‖₂/μ`, `tail_index` `⌊t/2⌋`
/// and `theta0` the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub h_radius: Option<f64>,
    pub total_steps: usize,
    pub tail_index: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub seed: u64,
    /// Stream within `seed`; distinct streams never share random numbers.
    pub stream: u64,
    pub sampling: Sampling,
    pub reward_mode: RewardMode,
    pub start: Start,
    /// Parameter against which snapshot errors are measured.
    pub reference: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(variant: Variant, total_steps: usize) -> Self {
        RunConfig {
            variant,
            alpha: None,
            lambda: 0.0,
            h_radius: None,
            total_steps,
            tail_index: None,
            theta0: None,
            seed: 0,
            stream: 0,
            sampling: Sampling::Iid,
            reward_mode: RewardMode::Expected,
            start: Start::Stationary,
            reference: None,
        }
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn h_radius(mut self, h: f64) -> Self {
        self.h_radius = Some(h);
        self
    }

    pub fn tail_index(mut self, k: usize) -> Self {
        self.tail_index = Some(k);
        self
    }

    pub fn theta0(mut self, theta0: Vec<f64>) -> Self {
        self.theta0 = Some(theta0);
        self
    }

    pub fn seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn start(mut self, start: Start) -> Self {
        self.start = start;
        self
    }

    pub fn reference(mut self, reference: Vec<f64>) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Fills defaults and checks every invariant against `problem`.
    pub fn resolve(&self, problem: &TdProblem) -> Result<ResolvedConfig> {
        let d = problem.dim();
        let t = self.total_steps;
        if t == 0 {
            return Err(invalid("a run needs at least one step"));
        }
        let k = self.tail_index.unwrap_or(t / 2);
        if k >= t {
            return Err(invalid(format!("tail index {k} must be below the horizon {t}")));
        }

        let lambda = self.lambda;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        if !self.variant.is_regularised() && lambda != 0.0 {
            return Err(invalid(format!("variant {} takes no regularisation", self.variant.name())));
        }

        let alpha = match self.alpha {
            Some(a) => a,
            None if self.variant.is_regularised() => {
                if lambda == 0.0 {
                    return Err(invalid("regularised runs with lambda = 0 need an explicit step size"));
                }
                reg_max_step_size(problem, lambda)?
            }
            None => max_step_size(problem)?,
        };
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("step size must be positive, got {alpha}")));
        }

        let h_radius = if self.variant.is_projected() {
            let min_h = problem.b().norm() / problem.mu();
            let h = self.h_radius.unwrap_or(2.0 * min_h);
            if !(h > min_h && h.is_finite()) {
                return Err(invalid(format!("projection radius {h} must exceed ‖b‖/μ = {min_h}")));
            }
            Some(h)
        } else {
            None
        };

        let theta0 = match &self.theta0 {
            Some(v) if v.len() != d => {
                return Err(Error::DimensionMismatch(format!("theta0 has length {}, expected {d}", v.len())))
            }
            Some(v) => v.clone(),
            None => vec![0.0; d],
        };
        if let Some(r) = &self.reference {
            if r.len() != d {
                return Err(Error::DimensionMismatch(format!("reference has length {}, expected {d}", r.len())));
            }
        }
        if let Sampling::DropK(0) = self.sampling {
            return Err(invalid("drop-K spacing must be at least 1"));
        }

        Ok(ResolvedConfig {
            variant: self.variant,
            alpha,
            lambda,
            h_radius,
            total_steps: t,
            tail_index: k,
            theta0,
            reference: self.reference.clone(),
        })
    }
}

/// A [`RunConfig`] with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub lambda: f64,
    pub h_radius: Option<f64>,
    pub total_steps: usize,
    pub tail_index: usize,
    pub theta0: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

impl ResolvedConfig {
    /// `N = t − k`.
    pub fn tail_len(&self) -> usize {
        self.total_steps - self.tail_index
    }
}

/// Output of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    /// `θ_{k+1,N}`, the mean of iterates `k+1, …, t`.
    pub tail_average: DVector<f64>,
    /// `θ_t`.
    pub final_iterate: DVector<f64>,
    /// `(i, ‖θ_i − θ_ref‖²)` at `i = 2⁸, 2⁹, …` and `i = t`.
    pub snapshots: Vec<(usize, f64)>,
    /// Largest `‖θ_i‖₂` seen over the run.
    pub max_norm: f64,
}

#[inline]
fn temporal_difference(theta: &[f64], tr: &Transition, beta: f64, features: &FeatureMap) -> f64 {
    tr.r + beta * features.value(tr.s_next, theta) - features.value(tr.s, theta)
}

#[inline]
fn td_update(theta: &mut [f64], tr: &Transition, alpha: f64, beta: f64, features: &FeatureMap) {
    let step = alpha * temporal_difference(theta, tr, beta, features);
    for (j, x) in theta.iter_mut().enumerate() {
        *x += step * features.get(tr.s, j);
    }
}

#[inline]
fn reg_td_update(theta: &mut [f64], tr: &Transition, alpha: f64, lambda: f64, beta: f64, features: &FeatureMap) {
    let step = alpha * temporal_difference(theta, tr, beta, features);
    let shrink = 1.0 - alpha * lambda;
    for (j, x) in theta.iter_mut().enumerate() {
        *x = shrink * *x + step * features.get(tr.s, j);
    }
}

fn check_finite(theta: &[f64], step: usize) -> Result<f64> {
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { step, norm });
    }
    Ok(norm)
}

/// One TD(0) step `θ + α (r + β θᵀφ(s′) − θᵀφ(s)) φ(s)`.
pub fn td_step(theta: &DVector<f64>, tr: &Transition, alpha: f64, beta: f64, features: &FeatureMap) -> Result<DVector<f64>> {
    let mut out = theta.clone();
    td_update(out.as_mut_slice(), tr, alpha, beta, features);
    check_finite(out.as_slice(), 1)?;
    Ok(out)
}

/// One regularised step `(1 − αλ) θ + α (r + β θᵀφ(s′) − θᵀφ(s)) φ(s)`.
pub fn reg_td_step(
    theta: &DVector<f64>,
    tr: &Transition,
    alpha: f64,
    lambda: f64,
    beta: f64,
    features: &FeatureMap,
) -> Result<DVector<f64>> {
    let mut out = theta.clone();
    reg_td_update(out.as_mut_slice(), tr, alpha, lambda, beta, features);
    check_finite(out.as_slice(), 1)?;
    Ok(out)
}

/// Euclidean projection onto the ball of radius `h`.
pub fn project_ball(theta: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut out = theta.clone();
    project_in_place(out.as_mut_slice(), h);
    out
}

#[inline]
fn project_in_place(theta: &mut [f64], h: f64) -> f64 {
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > h {
        let scale = h / norm;
        for x in theta.iter_mut() {
            *x *= scale;
        }
        h
    } else {
        norm
    }
}

/// `(1 − β) / ((1 + β)² Φ²_max)`.
pub fn max_step_size_for(discount: f64, phi_max: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&discount) {
        return Err(invalid(format!("discount must lie in [0, 1), got {discount}")));
    }
    if phi_max.is_nan() || phi_max <= 0.0 {
        return Err(invalid("feature bound must be positive"));
    }
    Ok((1.0 - discount) / ((1.0 + discount).powi(2) * phi_max * phi_max))
}

/// `λ / (λ² + 2λ(1 + β)Φ²_max + (1 + β)² Φ⁴_max)`.
pub fn reg_max_step_size_for(discount: f64, phi_max: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let c = (1.0 + discount) * phi_max * phi_max;
    Ok(lambda / (lambda * lambda + 2.0 * lambda * c + c * c))
}

/// Universal step size for (projected) TD(0); needs no eigenvalues.
pub fn max_step_size(problem: &TdProblem) -> Result<f64> {
    max_step_size_for(problem.discount(), problem.phi_max())
}

/// Universal step size for regularised TD.
pub fn reg_max_step_size(problem: &TdProblem, lambda: f64) -> Result<f64> {
    reg_max_step_size_for(problem.discount(), problem.phi_max(), lambda)
}

/// Runs the configured variant over the configured sampler.
pub fn run(problem: &TdProblem, config: &RunConfig) -> Result<RunTrace> {
    let rng = stream_rng(config.seed, config.stream);
    match config.sampling {
        Sampling::Iid => run_on_stream(problem, config, IidSampler::new(problem, rng, config.reward_mode)),
        Sampling::Markov => run_on_stream(
            problem,
            config,
            MarkovStream::new(problem, config.start, rng, config.reward_mode)?,
        ),
        Sampling::DropK(k) => run_on_stream(
            problem,
            config,
            drop_k_stream(MarkovStream::new(problem, config.start, rng, config.reward_mode)?, k)?,
        ),
    }
}

/// Runs the configured variant over an arbitrary transition stream,
/// ignoring `config.sampling`.
pub fn run_on_stream<I>(problem: &TdProblem, config: &RunConfig, stream: I) -> Result<RunTrace>
where
    I: IntoIterator<Item = Transition>,
{
    let cfg = config.resolve(problem)?;
    let features = problem.features();
    let beta = problem.discount();
    let d = problem.dim();
    let regularised = cfg.variant.is_regularised();

    let mut theta = cfg.theta0.clone();
    let mut tail = vec![0.0; d];
    let mut tail_count = 0usize;
    let mut snapshots = Vec::new();
    let mut next_snapshot = 1usize << FIRST_SNAPSHOT_POW;
    let mut max_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut stream = stream.into_iter();
    for i in 1..=cfg.total_steps {
        let tr = stream
            .next()
            .ok_or_else(|| invalid(format!("transition stream ended after {} steps", i - 1)))?;
        if regularised {
            reg_td_update(&mut theta, &tr, cfg.alpha, cfg.lambda, beta, features);
        } else {
            td_update(&mut theta, &tr, cfg.alpha, beta, features);
        }
        let mut norm = check_finite(&theta, i)?;
        if let Some(h) = cfg.h_radius {
            norm = project_in_place(&mut theta, h);
        }
        max_norm = max_norm.max(norm);

        if i > cfg.tail_index {
            tail_count += 1;
            let w = 1.0 / tail_count as f64;
            for (m, x) in tail.iter_mut().zip(&theta) {
                *m += (x - *m) * w;
            }
        }

        if let Some(reference) = &cfg.reference {
            if i == next_snapshot || i == cfg.total_steps {
                let err = theta.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
                snapshots.push((i, err));
                if i == next_snapshot {
                    next_snapshot <<= 1;
                }
            }
        }
    }

    Ok(RunTrace {
        tail_average: DVector::from_vec(tail),
        final_iterate: DVector::from_vec(theta),
        snapshots,
        max_norm,
    })
}

/// Noise-free mean dynamics `θ_i = (I − α(A + λI)) θ_{i−1} + α b`.
///
/// Returns `θ_0, θ_1, …, θ_t`.
pub fn expected_update_trajectory(
    problem: &TdProblem,
    alpha: f64,
    lambda: f64,
    theta0: &DVector<f64>,
    t: usize,
) -> Result<Vec<DVector<f64>>> {
    let d = problem.dim();
    if theta0.len() != d {
        return Err(Error::DimensionMismatch(format!("theta0 has length {}, expected {d}", theta0.len())));
    }
    if t == 0 {
        return Err(invalid("trajectory length must be at least 1"));
    }
    let contraction = DMatrix::identity(d, d) - (problem.a() + DMatrix::identity(d, d) * lambda) * alpha;
    let drive = problem.b() * alpha;
    let mut out = Vec::with_capacity(t + 1);
    out.push(theta0.clone());
    for i in 0..t {
        let next = &contraction * &out[i] + &drive;
        out.push(next);
    }
    Ok(out)
}
