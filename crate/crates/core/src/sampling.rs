//! Transition streams: i.i.d. draws from `ρ(s) P_π(s′|s)`, single Markov
//! trajectories, one-in-`K` subsampling of a trajectory, and the exact
//! mixing profile `D(τ)` used to pick `K`.
//!
//! Every sampler owns a [`ChaCha8Rng`] built by [`stream_rng`], so a given
//! `(seed, stream)` pair always replays the same transitions regardless of
//! which thread consumes it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{stationary_distribution, PolicyChain, TdProblem};

/// One observed sample `(s, r, s′)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub r: f64,
    pub s_next: usize,
}

/// How the reward attached to a transition is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r = R(s)`, the policy-averaged reward.
    #[default]
    Expected,
    /// Draw `a ~ π(s)` and emit `r(s, a)`.
    Sampled,
}

/// Where a Markov trajectory starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    State(usize),
    #[default]
    Stationary,
}

/// The generator for stream `stream` of experiment seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF sampling from a finite distribution.
#[derive(Clone, Debug)]
pub(crate) struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub(crate) fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .into_iter()
            .map(|w| {
                acc += w.max(0.0);
                acc
            })
            .collect();
        let total = acc;
        if total > 0.0 {
            for c in &mut cdf {
                *c /= total;
            }
        }
        Categorical { cdf }
    }

    #[inline]
    pub(crate) fn sample(&self, u: f64) -> usize {
        let i = self.cdf.partition_point(|&c| c <= u);
        // Skip zero-width bins that rounding might land on.
        i.min(self.cdf.len() - 1)
    }
}

/// Per-problem lookup tables shared by every sampler.
#[derive(Clone, Debug)]
struct Tables {
    stationary: Categorical,
    rows: Vec<Categorical>,
    expected_reward: Vec<f64>,
    reward_draw: Vec<(Categorical, Vec<f64>)>,
}

impl Tables {
    fn new(chain: &PolicyChain, stationary: &DVector<f64>) -> Self {
        let n = chain.n_states();
        let p = chain.p_pi();
        Tables {
            stationary: Categorical::new(stationary.iter().copied()),
            rows: (0..n).map(|s| Categorical::new(p.row(s).iter().copied())).collect(),
            expected_reward: chain.r_pi().iter().copied().collect(),
            reward_draw: (0..n)
                .map(|s| {
                    let support = chain.reward_support(s);
                    (
                        Categorical::new(support.iter().map(|(w, _)| *w)),
                        support.iter().map(|(_, r)| *r).collect(),
                    )
                })
                .collect(),
        }
    }

    #[inline]
    fn reward(&self, s: usize, mode: RewardMode, rng: &mut ChaCha8Rng) -> f64 {
        match mode {
            RewardMode::Expected => self.expected_reward[s],
            RewardMode::Sampled => {
                let (dist, values) = &self.reward_draw[s];
                values[dist.sample(rng.random())]
            }
        }
    }
}

/// I.i.d. transitions: `s ~ ρ`, `s′ ~ P_π(·|s)`.
#[derive(Clone, Debug)]
pub struct IidSampler {
    tables: Tables,
    rng: ChaCha8Rng,
    mode: RewardMode,
}

impl IidSampler {
    pub fn new(problem: &TdProblem, rng: ChaCha8Rng, mode: RewardMode) -> Self {
        IidSampler {
            tables: Tables::new(problem.chain(), problem.stationary()),
            rng,
            mode,
        }
    }

    pub fn sample(&mut self) -> Transition {
        let s = self.tables.stationary.sample(self.rng.random());
        let s_next = self.tables.rows[s].sample(self.rng.random());
        let r = self.tables.reward(s, self.mode, &mut self.rng);
        Transition { s, r, s_next }
    }
}

impl Iterator for IidSampler {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        Some(self.sample())
    }
}

/// Draws a single transition from the i.i.d. observation model.
pub fn sample_iid(problem: &TdProblem, rng: &mut ChaCha8Rng) -> Transition {
    let tables = Tables::new(problem.chain(), problem.stationary());
    let s = tables.stationary.sample(rng.random());
    let s_next = tables.rows[s].sample(rng.random());
    let r = tables.reward(s, RewardMode::Expected, rng);
    Transition { s, r, s_next }
}

/// Consecutive transitions of one trajectory; each sample's `s` is the
/// previous sample's `s_next`.
#[derive(Clone, Debug)]
pub struct MarkovStream {
    tables: Tables,
    rng: ChaCha8Rng,
    mode: RewardMode,
    state: usize,
}

impl MarkovStream {
    pub fn new(problem: &TdProblem, start: Start, mut rng: ChaCha8Rng, mode: RewardMode) -> Result<Self> {
        let tables = Tables::new(problem.chain(), problem.stationary());
        let state = match start {
            Start::State(s) if s < problem.n_states() => s,
            Start::State(s) => return Err(invalid(format!("start state {s} out of range"))),
            Start::Stationary => tables.stationary.sample(rng.random()),
        };
        Ok(MarkovStream {
            tables,
            rng,
            mode,
            state,
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Iterator for MarkovStream {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        let s = self.state;
        let s_next = self.tables.rows[s].sample(self.rng.random());
        let r = self.tables.reward(s, self.mode, &mut self.rng);
        self.state = s_next;
        Some(Transition { s, r, s_next })
    }
}

/// Convenience wrapper for [`MarkovStream::new`].
pub fn markov_stream(problem: &TdProblem, start: Start, rng: ChaCha8Rng) -> Result<MarkovStream> {
    MarkovStream::new(problem, start, rng, RewardMode::Expected)
}

/// Keeps the 1st, (K+1)-th, (2K+1)-th, … element of the wrapped stream.
#[derive(Clone, Debug)]
pub struct DropK<I> {
    inner: I,
    k: usize,
    started: bool,
}

impl<I: Iterator<Item = Transition>> Iterator for DropK<I> {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        if self.started {
            for _ in 1..self.k {
                self.inner.next()?;
            }
        }
        self.started = true;
        self.inner.next()
    }
}

pub fn drop_k_stream<I: Iterator<Item = Transition>>(inner: I, k: usize) -> Result<DropK<I>> {
    if k == 0 {
        return Err(invalid("drop-K spacing must be at least 1"));
    }
    Ok(DropK {
        inner,
        k,
        started: false,
    })
}

/// One step of [`CoupledDropK`]: the drop-K trajectory sample, the i.i.d.
/// sample, and whether they coincide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledPair {
    pub markov: Transition,
    pub iid: Transition,
}

impl CoupledPair {
    pub fn agree(&self) -> bool {
        self.markov == self.iid
    }
}

/// The drop-K trajectory and an i.i.d. stream built on one probability
/// space.
///
/// The gap between retained pairs is a `(K−1)`-step transition, so the next
/// retained state is drawn from `P_π^{K−1}(x, ·)` and maximally coupled
/// with the i.i.d. draw from `ρ`. Marginally the first stream is exactly
/// [`drop_k_stream`] over a stationary-start [`MarkovStream`] and the second
/// is exactly [`IidSampler`]; they differ at a step with probability
/// `TV(P_π^{K−1}(x, ·), ρ) ≤ D(K−1)`.
#[derive(Clone, Debug)]
pub struct CoupledDropK {
    tables: Tables,
    kernel: Vec<Vec<f64>>,
    rho: Vec<f64>,
    rng: ChaCha8Rng,
    mode: RewardMode,
    state: Option<usize>,
}

impl CoupledDropK {
    pub fn new(problem: &TdProblem, k: usize, rng: ChaCha8Rng, mode: RewardMode) -> Result<Self> {
        if k == 0 {
            return Err(invalid("drop-K spacing must be at least 1"));
        }
        let n = problem.n_states();
        let p = problem.chain().p_pi();
        let mut power = DMatrix::identity(n, n);
        for _ in 1..k {
            power = &power * p;
        }
        Ok(CoupledDropK {
            tables: Tables::new(problem.chain(), problem.stationary()),
            kernel: (0..n).map(|s| power.row(s).iter().copied().collect()).collect(),
            rho: problem.stationary().iter().copied().collect(),
            rng,
            mode,
            state: None,
        })
    }

    pub fn next_pair(&mut self) -> CoupledPair {
        let u = [
            self.rng.random::<f64>(),
            self.rng.random::<f64>(),
            self.rng.random::<f64>(),
            self.rng.random::<f64>(),
        ];
        let (x, y) = match self.state {
            None => {
                let s = self.tables.stationary.sample(u[1]);
                (s, s)
            }
            Some(prev) => maximal_coupling(&self.kernel[prev], &self.rho, u[0], u[1], u[2]),
        };
        let x_next = self.tables.rows[x].sample(u[3]);
        let y_next = self.tables.rows[y].sample(u[3]);
        // Shared reward randomness keeps coinciding pairs identical.
        let mut reward_rng = self.rng.clone();
        let rx = self.tables.reward(x, self.mode, &mut reward_rng);
        let ry = self.tables.reward(y, self.mode, &mut self.rng);
        self.state = Some(x_next);
        CoupledPair {
            markov: Transition {
                s: x,
                r: rx,
                s_next: x_next,
            },
            iid: Transition {
                s: y,
                r: ry,
                s_next: y_next,
            },
        }
    }

    /// Splits into the two marginal streams, each yielding `len` items.
    pub fn take_split(mut self, len: usize) -> (Vec<Transition>, Vec<Transition>, usize) {
        let mut markov = Vec::with_capacity(len);
        let mut iid = Vec::with_capacity(len);
        let mut disagreements = 0;
        for _ in 0..len {
            let pair = self.next_pair();
            if !pair.agree() {
                disagreements += 1;
            }
            markov.push(pair.markov);
            iid.push(pair.iid);
        }
        (markov, iid, disagreements)
    }
}

/// Draws `(X, Y)` with `X ~ p`, `Y ~ q` and `P(X ≠ Y) = TV(p, q)`.
fn maximal_coupling(p: &[f64], q: &[f64], u0: f64, u1: f64, u2: f64) -> (usize, usize) {
    let overlap: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let mass: f64 = overlap.iter().sum();
    if u0 < mass {
        let s = Categorical::new(overlap).sample(u1);
        return (s, s);
    }
    let x = Categorical::new(p.iter().zip(q).map(|(a, b)| (a - b).max(0.0))).sample(u1);
    let y = Categorical::new(q.iter().zip(p).map(|(a, b)| (a - b).max(0.0))).sample(u2);
    (x, y)
}

/// Total-variation distance `½ ‖p − q‖₁`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact mixing profile of a chain and a dominating exponential envelope
/// `C exp(−τ/τ_mix)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub c: f64,
    pub tau_mix: f64,
    /// `(τ, D(τ))` for `τ = 1, …, horizon`.
    pub curve: Vec<(usize, f64)>,
}

/// Values of `D(τ)` below this are rounding noise from the matrix powers.
pub const MIXING_NOISE_FLOOR: f64 = 1e-13;

impl MixingEstimate {
    pub fn envelope(&self, tau: f64) -> f64 {
        self.c * (-tau / self.tau_mix).exp()
    }

    /// `D(τ)` from the measured curve; the envelope past the horizon.
    pub fn distance(&self, tau: usize) -> f64 {
        if tau == 0 {
            return 1.0;
        }
        match self.curve.get(tau - 1) {
            Some((_, d)) => *d,
            None => self.envelope(tau as f64),
        }
    }

    /// `K = ⌈τ_mix ln(C n / δ)⌉`, at least 1.
    pub fn drop_k_spacing(&self, n: usize, delta: f64) -> usize {
        if self.c <= 0.0 {
            return 1;
        }
        let k = (self.tau_mix * (self.c * n as f64 / delta).ln()).ceil();
        if k.is_finite() && k >= 1.0 {
            k as usize
        } else {
            1
        }
    }

    /// `n D(K − 1)`, the coupling failure bound for `n` retained samples.
    pub fn coupling_failure_bound(&self, n: usize, k: usize) -> f64 {
        n as f64 * self.distance(k.saturating_sub(1))
    }
}

/// Computes `D(τ) = max_s ½ ‖P_π^τ(s, ·) − ρ‖₁` for `τ = 1..=horizon` and
/// fits `(C, τ_mix)`.
///
/// `τ_mix` comes from least squares on `ln D(τ)` over points with
/// `D ∈ (1e-8, 0.5)`; `C` is then raised just enough for the envelope to
/// dominate every point of the curve.
pub fn estimate_mixing(chain: &PolicyChain, horizon: usize) -> Result<MixingEstimate> {
    let period = chain.period();
    if period > 1 {
        return Err(Error::Periodic(period));
    }
    let rho = stationary_distribution(chain)?;
    let rho: Vec<f64> = rho.iter().copied().collect();
    let n = chain.n_states();
    let p = chain.p_pi();

    let mut power = p.clone();
    let mut curve = Vec::with_capacity(horizon);
    for tau in 1..=horizon {
        let d = (0..n)
            .map(|s| {
                let row: Vec<f64> = power.row(s).iter().copied().collect();
                tv_distance(&row, &rho)
            })
            .fold(0.0, f64::max);
        curve.push((tau, d));
        power = &power * p;
    }

    if curve.iter().all(|(_, d)| *d <= MIXING_NOISE_FLOOR) {
        return Ok(MixingEstimate {
            c: 0.0,
            tau_mix: 1.0,
            curve,
        });
    }
    let below_half = curve.iter().filter(|(_, d)| *d < 0.5).count();
    if below_half < 3 {
        return Err(Error::HorizonTooShort(below_half));
    }

    let mut fit: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(_, d)| *d > 1e-8 && *d < 0.5)
        .map(|(t, d)| (*t as f64, d.ln()))
        .collect();
    if fit.len() < 2 {
        // Very fast decay: fall back to every point above the noise floor.
        fit = curve
            .iter()
            .filter(|(_, d)| *d > MIXING_NOISE_FLOOR && *d < 0.5)
            .map(|(t, d)| (*t as f64, d.ln()))
            .collect();
    }

    let (slope, intercept) = if fit.len() >= 2 {
        least_squares(&fit)
    } else {
        // A single point above the floor: decay from it to the floor by the next step.
        let (t, ln_d) = fit.first().copied().unwrap_or((1.0, MIXING_NOISE_FLOOR.ln()));
        let slope = MIXING_NOISE_FLOOR.ln() - ln_d;
        (slope.min(-1e-3), ln_d - slope * t)
    };
    if slope >= 0.0 {
        return Err(Error::NotConverged("mixing profile does not decay"));
    }
    let tau_mix = -1.0 / slope;
    let c_fit = intercept.exp();
    let c_dom = curve
        .iter()
        .filter(|(_, d)| *d > MIXING_NOISE_FLOOR)
        .map(|(t, d)| d * (*t as f64 / tau_mix).exp())
        .fold(0.0, f64::max);
    Ok(MixingEstimate {
        c: c_fit.max(c_dom),
        tau_mix,
        curve,
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub(crate) fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
