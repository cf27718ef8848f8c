use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use tdtail::experiment::{
    compare_variants, read_csv_file, run_experiment_on, with_jobs, write_outputs, ExperimentSpec,
    ProblemSummary, Summary,
};
use tdtail::lemmas::verify_lemmas;
use tdtail::sampling::estimate_mixing;
use tdtail::{
    compare_conditioning, estimate_rate, max_step_size, reg_max_step_size, regularised_fixed_point, td_fixed_point,
    ProblemSource, TdProblem, Variant,
};

/// Tail-averaged and regularised TD(0) experiments.
#[derive(Parser)]
#[command(name = "tdtail", version)]
struct Cli {
    /// Base seed; overrides the experiment file's `base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path. CSV for `run` and `compare` (a JSON summary is written
    /// beside it), JSON for the rest. Without it results go to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// A problem file, `two-state:beta=..,p=..,reward=..` or
    /// `random:n=..,d=..,seed=..`.
    #[arg(long, global = true)]
    problem: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print θ*, θ*_reg, μ, μ′ and the universal step sizes.
    Solve {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Execute an experiment file.
    Run { spec: PathBuf },
    /// Fit the log-log slope of mse against N from a results CSV.
    Rate {
        csv: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run the lemma-verification suite.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Run an experiment file holding plain and regularised variants side by side.
    Compare { spec: PathBuf },
    /// Mixing profile and drop-K spacing of the problem's chain.
    Mixing {
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        /// Number of retained samples the spacing is chosen for.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
}

fn problem_source(cli: &Cli) -> Result<ProblemSource> {
    let Some(src) = &cli.problem else {
        bail!("this command needs --problem");
    };
    Ok(src.parse()?)
}

fn load_problem(source: &ProblemSource) -> Result<TdProblem> {
    source.load().with_context(|| format!("loading problem {source}"))
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_spec(cli: &Cli, path: &Path) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path).with_context(|| format!("reading spec {}", path.display()))?;
    if let Some(seed) = cli.seed {
        spec.base_seed = seed;
    }
    if cli.problem.is_some() {
        spec.problem = problem_source(cli)?;
    }
    if let Some(out) = &cli.out {
        spec.output = Some(out.clone());
    }
    Ok(spec)
}

fn csv_target(spec: &ExperimentSpec, fallback: &str) -> PathBuf {
    spec.output.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn solve(cli: &Cli, lambda: Option<f64>) -> Result<()> {
    let source = problem_source(cli)?;
    let problem = load_problem(&source)?;
    let mut value = json!({
        "problem": source.to_string(),
        "theta_star": td_fixed_point(&problem)?.as_slice(),
        "mu": problem.mu(),
        "mu_prime": problem.mu_prime(),
        "phi_max": problem.phi_max(),
        "r_max": problem.r_max(),
        "discount": problem.discount(),
        "alpha_max": max_step_size(&problem)?,
        "conditioning": compare_conditioning(&problem),
    });
    if let Some(l) = lambda {
        value["lambda"] = json!(l);
        value["theta_star_reg"] = json!(regularised_fixed_point(&problem, l)?.as_slice());
        value["alpha_max_reg"] = json!(reg_max_step_size(&problem, l)?);
    }
    emit(cli.out.as_deref(), &value)
}

fn run(cli: &Cli, spec_path: &Path) -> Result<()> {
    let spec = load_spec(cli, spec_path)?;
    spec.validate()?;
    let problem = load_problem(&spec.problem)?;
    let rows = with_jobs(cli.jobs, || run_experiment_on(&problem, &spec))??;
    let target = csv_target(&spec, "results.csv");
    let summary = Summary::new(&spec, &problem, rows.clone())?;
    let json_path = write_outputs(&target, &rows, &summary)?;
    for r in &rows {
        println!(
            "{:<22} t={:<9} mse={:.4e} bound={} {}",
            r.variant.name(),
            r.t,
            r.mse_mean,
            r.bound_value.map(|b| format!("{b:.4e}")).unwrap_or_else(|| "-".into()),
            r.error.as_deref().unwrap_or("")
        );
    }
    for rate in &summary.rates {
        if let Some(slope) = rate.slope {
            println!("{:<22} slope={slope:.4}", rate.variant.name());
        }
    }
    eprintln!("wrote {} and {}", target.display(), json_path.display());
    Ok(())
}

fn rate(cli: &Cli, csv: &Path, variant: Option<Variant>) -> Result<()> {
    let rows = read_csv_file(csv).with_context(|| format!("reading {}", csv.display()))?;
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.dedup();
    if let Some(v) = variant {
        variants.retain(|x| *x == v);
        if variants.is_empty() {
            bail!("no rows for variant {}", v.name());
        }
    }
    let mut out = serde_json::Map::new();
    for v in variants {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.variant == v && r.error.is_none())
            .map(|r| (r.n as f64, r.mse_mean))
            .collect();
        out.insert(v.name().to_string(), json!(estimate_rate(&pts)?));
    }
    emit(cli.out.as_deref(), &serde_json::Value::Object(out))
}

fn verify(cli: &Cli, trials: usize) -> Result<bool> {
    if trials < 1000 {
        bail!("--trials must be at least 1000");
    }
    let source = problem_source(cli)?;
    let problem = load_problem(&source)?;
    let seed = cli.seed.unwrap_or(0);
    let report = with_jobs(cli.jobs, || verify_lemmas(&problem, seed, trials))??;
    for c in &report.checks {
        eprintln!(
            "{:<22} {:<4} violations={:<4} worst_slack={:.3e}",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.violations,
            c.worst_slack
        );
    }
    emit(cli.out.as_deref(), &json!({ "problem": source.to_string(), "passed": report.passed(), "checks": report.checks }))?;
    Ok(report.passed())
}

fn compare(cli: &Cli, spec_path: &Path) -> Result<()> {
    let spec = load_spec(cli, spec_path)?;
    let comparison = with_jobs(cli.jobs, || compare_variants(&spec))??;
    let target = csv_target(&spec, "comparison.csv");
    let problem = load_problem(&spec.problem)?;
    let summary = json!({
        "problem": ProblemSummary::new(&spec.problem.to_string(), &problem)?,
        "comparison": comparison,
    });
    let json_path = write_outputs(&target, &comparison.rows, &summary)?;
    let c = comparison.conditioning;
    println!(
        "mu={:.6e} (1-beta)mu'={:.6e} ratio={:.4}",
        c.mu, c.one_minus_beta_mu_prime, c.ratio
    );
    for b in &comparison.bounds {
        println!("N={:<9} thm1={:.4e} cor2={:.4e}", b.n, b.thm1, b.cor2);
    }
    eprintln!("wrote {} and {}", target.display(), json_path.display());
    Ok(())
}

fn mixing(cli: &Cli, horizon: usize, samples: usize, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        bail!("--delta must lie in (0, 1)");
    }
    let source = problem_source(cli)?;
    let problem = load_problem(&source)?;
    let est = estimate_mixing(problem.chain(), horizon)?;
    let k = est.drop_k_spacing(samples, delta);
    emit(
        cli.out.as_deref(),
        &json!({
            "problem": source.to_string(),
            "c": est.c,
            "tau_mix": est.tau_mix,
            "samples": samples,
            "delta": delta,
            "drop_k": k,
            "coupling_failure_bound": est.coupling_failure_bound(samples, k),
            "curve": est.curve,
        }),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { lambda } => solve(&cli, *lambda).map(|_| true),
        Command::Run { spec } => run(&cli, spec).map(|_| true),
        Command::Rate { csv, variant } => rate(&cli, csv, *variant).map(|_| true),
        Command::Verify { trials } => verify(&cli, *trials),
        Command::Compare { spec } => compare(&cli, spec).map(|_| true),
        Command::Mixing {
            horizon,
            samples,
            delta,
        } => mixing(&cli, *horizon, *samples, *delta).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["tdtail", "solve", "--problem", "two-state:beta=0.5", "--seed", "3", "--jobs", "2"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert_eq!(cli.jobs, Some(2));
        assert!(matches!(cli.command, Command::Solve { lambda: None }));
    }

    #[test]
    fn variant_filter_parses() {
        let cli = Cli::try_parse_from(["tdtail", "rate", "x.csv", "--variant", "projected_regularised"]).unwrap();
        assert!(matches!(cli.command, Command::Rate { variant: Some(Variant::ProjectedRegularised), .. }));
        assert!(Cli::try_parse_from(["tdtail", "rate", "x.csv", "--variant", "nope"]).is_err());
    }
}
