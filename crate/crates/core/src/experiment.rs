//! Seed ensembles over variants and horizons, with bound values attached.
//!
//! Every `(variant, t, seed)` run is independent and goes to a rayon pool.
//! Seed `i` always uses RNG stream `i` of the base seed, so variants and
//! horizons see common random numbers and results do not depend on the
//! number of worker threads.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound, compare_conditioning, cor2_bound, thm1_bound, BoundInputs, BoundName, Conditioning};
use crate::error::{invalid, Error, Result};
use crate::mdp::{regularised_fixed_point, td_fixed_point, TdProblem};
use crate::problems::ProblemSource;
use crate::sampling::{least_squares, RewardMode, Start};
use crate::td::{max_step_size, run, RunConfig, RunTrace, Sampling, Variant};

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 15] = [
    "variant",
    "t",
    "N",
    "k",
    "alpha",
    "lambda",
    "seed_count",
    "mse_mean",
    "mse_std",
    "err_p50",
    "err_p90",
    "err_p99",
    "bound_value",
    "bound_name",
    "error",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// The universal step size matching the variant and `λ`.
    #[default]
    AutoMax,
    Explicit(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    #[default]
    None,
    Fixed(f64),
    /// `λ = 1/√N` at each horizon.
    OneOverSqrtN,
}

/// Which fixed point errors are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `θ*_reg` for regularised runs with `λ > 0`, `θ*` otherwise.
    #[default]
    Auto,
    /// `θ*` for every run.
    TdFixedPoint,
}

fn default_k_fraction() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.1
}

/// A JSON experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub problem: ProblemSource,
    pub variants: Vec<Variant>,
    /// Total steps `t`, strictly increasing.
    pub horizons: Vec<usize>,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// `k = ⌊k_fraction · t⌋`.
    #[serde(default = "default_k_fraction")]
    pub k_fraction: f64,
    #[serde(default)]
    pub alpha: AlphaRule,
    #[serde(default)]
    pub lambda: LambdaRule,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub start: Start,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub h_radius: Option<f64>,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemSource, variants: Vec<Variant>, horizons: Vec<usize>, seeds: usize) -> Self {
        ExperimentSpec {
            problem,
            variants,
            horizons,
            seeds,
            base_seed: 0,
            k_fraction: default_k_fraction(),
            alpha: AlphaRule::AutoMax,
            lambda: LambdaRule::None,
            delta: default_delta(),
            sampling: Sampling::Iid,
            reward_mode: RewardMode::Expected,
            start: Start::Stationary,
            theta0: None,
            h_radius: None,
            reference: Reference::Auto,
            output: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(invalid("no variants given"));
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 {
            return Err(invalid("horizons must be non-empty and positive"));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("horizons must be strictly increasing"));
        }
        if self.seeds == 0 {
            return Err(invalid("need at least one seed"));
        }
        if !(0.0..1.0).contains(&self.k_fraction) {
            return Err(invalid(format!("k_fraction must lie in [0, 1), got {}", self.k_fraction)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        match self.lambda {
            LambdaRule::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(invalid(format!("lambda must be non-negative, got {l}")))
            }
            _ => {}
        }
        if let AlphaRule::Explicit(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid(format!("explicit step size must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// `k` for horizon `t`.
    pub fn tail_index(&self, t: usize) -> usize {
        ((t as f64) * self.k_fraction).floor() as usize
    }

    /// `λ` for a variant at horizon `t`.
    pub fn lambda_for(&self, variant: Variant, t: usize) -> f64 {
        if !variant.is_regularised() {
            return 0.0;
        }
        match self.lambda {
            LambdaRule::None => 0.0,
            LambdaRule::Fixed(l) => l,
            LambdaRule::OneOverSqrtN => 1.0 / ((t - self.tail_index(t)) as f64).sqrt(),
        }
    }

    /// The run configuration for one `(variant, t, seed)` cell.
    pub fn run_config(&self, variant: Variant, t: usize, seed: usize) -> RunConfig {
        let mut cfg = RunConfig::new(variant, t)
            .tail_index(self.tail_index(t))
            .lambda(self.lambda_for(variant, t))
            .seed(self.base_seed, seed as u64)
            .sampling(self.sampling)
            .reward_mode(self.reward_mode)
            .start(self.start);
        if let AlphaRule::Explicit(a) = self.alpha {
            cfg = cfg.alpha(a);
        }
        if let Some(h) = self.h_radius {
            cfg = cfg.h_radius(h);
        }
        if let Some(theta0) = &self.theta0 {
            cfg = cfg.theta0(theta0.clone());
        }
        cfg
    }
}

/// Aggregate over all seeds of one `(variant, t)` cell.
///
/// `err_p*` are quantiles of `‖θ̄ − θ_ref‖₂`; `mse_*` summarise its square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed_count: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub err_p50: f64,
    pub err_p90: f64,
    pub err_p99: f64,
    pub bound_value: Option<f64>,
    pub bound_name: Option<BoundName>,
    /// Set when some seeds diverged or the configuration was rejected.
    pub error: Option<String>,
}

impl ResultRow {
    /// `mse_std / √seed_count`.
    pub fn std_error(&self) -> f64 {
        self.mse_std / (self.seed_count as f64).sqrt()
    }

    /// For expectation bounds: `bound ≥ mse_mean − 3 · std_error`.
    pub fn bound_dominates(&self) -> Option<bool> {
        match (self.bound_value, self.bound_name) {
            (Some(b), Some(name)) if name.is_expectation() => Some(b >= self.mse_mean - 3.0 * self.std_error()),
            _ => None,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `template` for streams `0..seeds` in parallel, in stream order.
pub fn run_seeds(problem: &TdProblem, template: &RunConfig, seeds: usize) -> Vec<Result<RunTrace>> {
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = RunConfig {
                stream: i as u64,
                ..template.clone()
            };
            run(problem, &cfg)
        })
        .collect()
}

struct Cell {
    variant: Variant,
    t: usize,
    k: usize,
    lambda: f64,
    reference: DVector<f64>,
    config_error: Option<String>,
    alpha: f64,
}

fn reference_for(problem: &TdProblem, spec: &ExperimentSpec, star: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if spec.reference == Reference::Auto && lambda > 0.0 {
        regularised_fixed_point(problem, lambda)
    } else {
        Ok(star.clone())
    }
}

fn bound_name_for(spec: &ExperimentSpec, variant: Variant, lambda: f64) -> Option<BoundName> {
    let regularised = variant.is_regularised() && lambda > 0.0;
    let projected = variant.is_projected();
    match (regularised, spec.reference, projected) {
        (false, _, false) => Some(BoundName::Thm1),
        (false, _, true) => Some(BoundName::Thm2),
        (true, Reference::Auto, false) => Some(BoundName::Thm3),
        (true, Reference::Auto, true) => Some(BoundName::Thm4),
        (true, Reference::TdFixedPoint, false) => match (spec.lambda, spec.alpha) {
            (LambdaRule::OneOverSqrtN, AlphaRule::AutoMax) => Some(BoundName::Cor2),
            _ => Some(BoundName::Cor1),
        },
        (true, Reference::TdFixedPoint, true) => None,
    }
}

fn attach_bound(problem: &TdProblem, spec: &ExperimentSpec, cell: &Cell, theta0: &DVector<f64>) -> Option<(BoundName, f64)> {
    let name = bound_name_for(spec, cell.variant, cell.lambda)?;
    let base = BoundInputs::from_problem(problem, &cell.reference).ok()?;
    let inp = BoundInputs {
        alpha: cell.alpha,
        lambda: cell.lambda,
        k: cell.k,
        n: cell.t - cell.k,
        delta: spec.delta,
        initial_error: (theta0 - &cell.reference).norm_squared(),
        ..base
    };
    bound(name, &inp).ok().map(|r| (name, r.value))
}

/// Runs every `(variant, t)` cell of `spec` on the current rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let problem = spec.problem.load()?;
    run_experiment_on(&problem, spec)
}

/// As [`run_experiment`] with an already loaded problem.
pub fn run_experiment_on(problem: &TdProblem, spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let star = td_fixed_point(problem)?;
    let theta0 = match &spec.theta0 {
        Some(v) if v.len() == problem.dim() => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "theta0 has length {}, expected {}",
                v.len(),
                problem.dim()
            )))
        }
        None => DVector::zeros(problem.dim()),
    };

    let mut cells = Vec::new();
    for &variant in &spec.variants {
        for &t in &spec.horizons {
            let lambda = spec.lambda_for(variant, t);
            let k = spec.tail_index(t);
            let resolved = spec.run_config(variant, t, 0).resolve(problem);
            let (alpha, config_error) = match resolved {
                Ok(r) => (r.alpha, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            cells.push(Cell {
                variant,
                t,
                k,
                lambda,
                reference: reference_for(problem, spec, &star, lambda)?,
                config_error,
                alpha,
            });
        }
    }

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .filter(|&c| cells[c].config_error.is_none())
        .flat_map(|c| (0..spec.seeds).map(move |s| (c, s)))
        .collect();
    let outcomes: Vec<(usize, std::result::Result<f64, String>)> = tasks
        .par_iter()
        .map(|&(c, s)| {
            let cell = &cells[c];
            let cfg = spec.run_config(cell.variant, cell.t, s);
            let out = run(problem, &cfg)
                .map(|trace| (trace.tail_average - &cell.reference).norm())
                .map_err(|e| e.to_string());
            (c, out)
        })
        .collect();

    let mut per_cell: Vec<Vec<std::result::Result<f64, String>>> = vec![Vec::new(); cells.len()];
    for (c, out) in outcomes {
        per_cell[c].push(out);
    }

    let rows = cells
        .iter()
        .zip(per_cell)
        .map(|(cell, outs)| {
            let mut norms: Vec<f64> = outs.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
            let failures: Vec<&String> = outs.iter().filter_map(|o| o.as_ref().err()).collect();
            let error = match (&cell.config_error, failures.first()) {
                (Some(e), _) => Some(e.clone()),
                (None, Some(first)) => Some(format!("{} of {} seeds failed: {first}", failures.len(), outs.len())),
                (None, None) => None,
            };
            norms.sort_by(f64::total_cmp);
            let squares: Vec<f64> = norms.iter().map(|x| x * x).collect();
            let (mse_mean, mse_std) = if squares.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&squares) };
            let bound = if cell.config_error.is_none() { attach_bound(problem, spec, cell, &theta0) } else { None };
            ResultRow {
                variant: cell.variant,
                t: cell.t,
                n: cell.t - cell.k,
                k: cell.k,
                alpha: cell.alpha,
                lambda: cell.lambda,
                seed_count: norms.len(),
                mse_mean,
                mse_std,
                err_p50: quantile(&norms, 0.5),
                err_p90: quantile(&norms, 0.9),
                err_p99: quantile(&norms, 0.99),
                bound_value: bound.map(|b| b.1),
                bound_name: bound.map(|b| b.0),
                error,
            }
        })
        .collect();
    Ok(rows)
}

/// Runs `f` on a dedicated pool of `jobs` threads (all cores if `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes rows with [`CSV_COLUMNS`]; floats carry 17 significant digits.
pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.t.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            float(r.alpha),
            float(r.lambda),
            r.seed_count.to_string(),
            float(r.mse_mean),
            float(r.mse_std),
            float(r.err_p50),
            float(r.err_p90),
            float(r.err_p99),
            r.bound_value.map(float).unwrap_or_default(),
            r.bound_name.map(|b| b.as_str().to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(invalid(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// Least-squares slope of `ln mse` against `ln N`.
///
/// ```
/// let pts: Vec<(f64, f64)> = (1..6).map(|i| (f64::from(1 << i), 3.0 / f64::from(1 << i))).collect();
/// assert!((tdtail::estimate_rate(&pts).unwrap() + 1.0).abs() < 1e-9);
/// ```
pub fn estimate_rate(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(invalid(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(n, m)| !(*n > 0.0 && *m > 0.0 && m.is_finite())) {
        return Err(invalid(format!("rate needs positive N and mse, got {p:?}")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, m)| (n.ln(), m.ln())).collect();
    Ok(least_squares(&logs).0)
}

/// Slope for each variant with at least three error-free rows.
pub fn rates_by_variant(rows: &[ResultRow]) -> Vec<(Variant, Result<f64>)> {
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.dedup();
    variants
        .into_iter()
        .map(|v| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.variant == v && r.error.is_none())
                .map(|r| (r.n as f64, r.mse_mean))
                .collect();
            (v, estimate_rate(&pts))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub source: String,
    pub n_states: usize,
    pub dim: usize,
    pub discount: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub phi_max: f64,
    pub r_max: f64,
    pub alpha_max: f64,
    pub theta_star: Vec<f64>,
}

impl ProblemSummary {
    pub fn new(source: &str, problem: &TdProblem) -> Result<Self> {
        Ok(ProblemSummary {
            source: source.to_string(),
            n_states: problem.n_states(),
            dim: problem.dim(),
            discount: problem.discount(),
            mu: problem.mu(),
            mu_prime: problem.mu_prime(),
            phi_max: problem.phi_max(),
            r_max: problem.r_max(),
            alpha_max: max_step_size(problem)?,
            theta_star: td_fixed_point(problem)?.iter().copied().collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub variant: Variant,
    pub slope: Option<f64>,
}

/// JSON companion of the CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spec: ExperimentSpec,
    pub problem: ProblemSummary,
    pub conditioning: Conditioning,
    pub rates: Vec<RateEntry>,
    pub rows: Vec<ResultRow>,
}

impl Summary {
    pub fn new(spec: &ExperimentSpec, problem: &TdProblem, rows: Vec<ResultRow>) -> Result<Self> {
        let rates = rates_by_variant(&rows)
            .into_iter()
            .map(|(variant, slope)| RateEntry {
                variant,
                slope: slope.ok(),
            })
            .collect();
        Ok(Summary {
            spec: spec.clone(),
            problem: ProblemSummary::new(&spec.problem.to_string(), problem)?,
            conditioning: compare_conditioning(problem),
            rates,
            rows,
        })
    }
}

/// Writes `csv_path` and a JSON summary next to it with extension `.json`.
pub fn write_outputs(csv_path: &Path, rows: &[ResultRow], summary: &impl Serialize) -> Result<PathBuf> {
    write_csv_file(csv_path, rows)?;
    let json_path = csv_path.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(summary)?)?;
    Ok(json_path)
}

/// `thm1` against `cor2` at one horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub thm1: f64,
    pub cor2: f64,
}

/// Side-by-side empirical and bound results for plain and regularised TD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub conditioning: Conditioning,
    pub bounds: Vec<BoundPair>,
    pub rows: Vec<ResultRow>,
}

/// `thm1` and `cor2` at each horizon, both measured against `θ*` from `θ₀`.
pub fn bound_pairs(problem: &TdProblem, spec: &ExperimentSpec) -> Result<Vec<BoundPair>> {
    let star = td_fixed_point(problem)?;
    let theta0 = spec.theta0.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(problem.dim()));
    let base = BoundInputs {
        delta: spec.delta,
        initial_error: (&theta0 - &star).norm_squared(),
        ..BoundInputs::from_problem(problem, &star)?
    };
    spec.horizons
        .iter()
        .map(|&t| {
            let k = spec.tail_index(t);
            let inp = BoundInputs { k, n: t - k, ..base.clone() };
            Ok(BoundPair {
                t,
                n: t - k,
                thm1: thm1_bound(&inp)?.value,
                cor2: cor2_bound(&inp)?.value,
            })
        })
        .collect()
}

/// Runs `spec`, which must hold a plain and a regularised variant.
pub fn compare_variants(spec: &ExperimentSpec) -> Result<Comparison> {
    let plain = spec.variants.iter().any(|v| !v.is_regularised());
    let regularised = spec.variants.iter().any(|v| v.is_regularised());
    if !(plain && regularised) {
        return Err(invalid("comparison needs both a plain and a regularised variant"));
    }
    spec.validate()?;
    let problem = spec.problem.load()?;
    Ok(Comparison {
        conditioning: compare_conditioning(&problem),
        bounds: bound_pairs(&problem, spec)?,
        rows: run_experiment_on(&problem, spec)?,
    })
}
