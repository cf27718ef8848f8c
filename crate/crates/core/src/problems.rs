//! Problem files, the built-in two-state chain and random problem generation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{FeatureMap, Mdp, Policy, TdProblem};
use crate::sampling::stream_rng;

/// Rejection-sampling budget for [`gen_random_problem`].
pub const MAX_RESAMPLES: usize = 1000;
const RANDOM_PROBLEM_STREAM: u64 = 0x9e0b;

/// On-disk JSON description of a policy-evaluation problem.
///
/// `transition[s][a][s′]`, `reward[s][a]`, `policy[s][a]` and
/// `features[s][j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    pub policy: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<TdProblem> {
        if self.transition.len() != self.n_states || self.features.len() != self.n_states {
            return Err(Error::DimensionMismatch(format!(
                "n_states is {} but transition has {} rows and features {}",
                self.n_states,
                self.transition.len(),
                self.features.len()
            )));
        }
        if let Some(row) = self.transition.iter().find(|row| row.len() != self.n_actions) {
            return Err(Error::DimensionMismatch(format!(
                "n_actions is {} but a transition row has {} actions",
                self.n_actions,
                row.len()
            )));
        }
        let mdp = Mdp::new(self.transition.clone(), self.reward.clone(), self.discount)?;
        let policy = Policy::new(self.policy.clone())?;
        TdProblem::from_mdp(&mdp, &policy, FeatureMap::from_rows(self.features.clone())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Two states, one action: stay with probability `1 − p`, switch with `p`;
/// features `φ = (1, ½)`; constant reward.
pub fn two_state_file(discount: f64, p: f64, reward: f64) -> Result<ProblemFile> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("switch probability must lie in (0, 1), got {p}")));
    }
    Ok(ProblemFile {
        n_states: 2,
        n_actions: 1,
        transition: vec![vec![vec![1.0 - p, p]], vec![vec![p, 1.0 - p]]],
        reward: vec![vec![reward], vec![reward]],
        discount,
        policy: vec![vec![1.0], vec![1.0]],
        features: vec![vec![1.0], vec![0.5]],
    })
}

/// The two-state problem with `r ≡ 1`.
///
/// ```
/// let p = tdtail::build_two_state(0.9, 0.5).unwrap();
/// assert!((p.a()[(0, 0)] - (0.625 - 0.5625 * 0.9)).abs() < 1e-12);
/// ```
pub fn build_two_state(discount: f64, p: f64) -> Result<TdProblem> {
    two_state_file(discount, p, 1.0)?.to_problem()
}

/// A random two-action problem with `n` states and `d` features.
///
/// The discount is drawn from `[0.5, 0.95)`. Transition rows are sparse
/// and the whole problem is redrawn until the induced chain is irreducible
/// and the features have full column rank. Features are scaled so the
/// largest row has unit norm; rewards lie in `[−1, 1]`.
pub fn random_problem_file(n: usize, d: usize, seed: u64) -> Result<ProblemFile> {
    if n < 2 || d == 0 || d > n {
        return Err(invalid(format!("need n ≥ 2 and 1 ≤ d ≤ n, got n = {n}, d = {d}")));
    }
    let n_actions = 2;
    let mut rng = stream_rng(seed, RANDOM_PROBLEM_STREAM);
    let discount = rng.random_range(0.5..0.95);

    for _ in 0..MAX_RESAMPLES {
        let transition: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..n_actions).map(|_| sparse_row(&mut rng, n)).collect())
            .collect();
        let policy: Vec<Vec<f64>> = (0..n)
            .map(|_| normalise((0..n_actions).map(|_| rng.random::<f64>() + 0.05).collect()))
            .collect();
        let reward = (0..n)
            .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let mut features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let scale = features
            .iter()
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        for row in &mut features {
            row.iter_mut().for_each(|x| *x /= scale);
        }

        let file = ProblemFile {
            n_states: n,
            n_actions,
            transition,
            reward,
            discount,
            policy,
            features,
        };
        match file.to_problem() {
            Ok(_) => return Ok(file),
            Err(
                Error::NotIrreducible(_)
                | Error::RankDeficient(_)
                | Error::DegenerateCovariance(_)
                | Error::Singular { .. },
            ) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ResamplingExhausted(MAX_RESAMPLES))
}

pub fn gen_random_problem(n: usize, d: usize, seed: u64) -> Result<TdProblem> {
    random_problem_file(n, d, seed)?.to_problem()
}

fn sparse_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random::<f64>() })
        .collect();
    if row.iter().all(|x| *x == 0.0) {
        row[rng.random_range(0..n)] = 1.0;
    }
    normalise(row)
}

fn normalise(row: Vec<f64>) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    row.into_iter().map(|x| x / total).collect()
}

fn default_p() -> f64 {
    0.5
}

fn default_reward() -> f64 {
    1.0
}

/// Where a problem comes from.
///
/// Parses from `two-state:beta=0.9,p=0.5`, `random:n=6,d=3,seed=1` or a
/// path to a [`ProblemFile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    File {
        path: PathBuf,
    },
    TwoState {
        beta: f64,
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_reward")]
        reward: f64,
    },
    Random {
        n: usize,
        d: usize,
        seed: u64,
    },
}

impl ProblemSource {
    pub fn to_file(&self) -> Result<ProblemFile> {
        match self {
            ProblemSource::File { path } => ProblemFile::load(path),
            ProblemSource::TwoState { beta, p, reward } => two_state_file(*beta, *p, *reward),
            ProblemSource::Random { n, d, seed } => random_problem_file(*n, *d, *seed),
        }
    }

    pub fn load(&self) -> Result<TdProblem> {
        self.to_file()?.to_problem()
    }
}

impl fmt::Display for ProblemSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemSource::File { path } => write!(f, "{}", path.display()),
            ProblemSource::TwoState { beta, p, reward } => write!(f, "two-state:beta={beta},p={p},reward={reward}"),
            ProblemSource::Random { n, d, seed } => write!(f, "random:n={n},d={d},seed={seed}"),
        }
    }
}

impl FromStr for ProblemSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((kind, args)) = s.split_once(':').filter(|(k, _)| matches!(*k, "two-state" | "random")) else {
            return Ok(ProblemSource::File { path: PathBuf::from(s) });
        };
        let mut pairs = Vec::new();
        for part in args.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value in {s:?}, got {part:?}")))?;
            pairs.push((key.trim(), value.trim()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| v.parse::<f64>().map_err(|_| invalid(format!("{key} = {v:?} is not a number"))))
                .transpose()
        };
        let int = |key: &str| -> Result<u64> {
            let v = get(key).ok_or_else(|| invalid(format!("{kind} needs {key}=")))?;
            v.parse::<u64>().map_err(|_| invalid(format!("{key} = {v:?} is not an integer")))
        };
        let allowed: &[&str] = if kind == "two-state" { &["beta", "p", "reward"] } else { &["n", "d", "seed"] };
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(invalid(format!("unknown key {k:?} for {kind}")));
        }
        if kind == "two-state" {
            Ok(ProblemSource::TwoState {
                beta: num("beta")?.ok_or_else(|| invalid("two-state needs beta="))?,
                p: num("p")?.unwrap_or_else(default_p),
                reward: num("reward")?.unwrap_or_else(default_reward),
            })
        } else {
            Ok(ProblemSource::Random {
                n: int("n")? as usize,
                d: int("d")? as usize,
                seed: int("seed")?,
            })
        }
    }
}
