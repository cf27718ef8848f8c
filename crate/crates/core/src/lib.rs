//! Tail-averaged and regularised TD(0) policy evaluation with linear
//! function approximation.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: Markov chains, policies, features and the matrices `A`, `b`,
//!   `B` with their fixed points and eigen quantities.
//! - [`sampling`]: i.i.d., Markov and drop-K transition streams, coupled
//!   streams and mixing-time estimates.
//! - [`td`]: the four TD(0) variants, universal step sizes and tail
//!   averaging.
//! - [`bounds`]: right-hand sides of the finite-time error bounds.
//! - [`lemmas`]: executable checks of the inequalities behind the bounds.
//! - [`problems`] and [`experiment`]: problem sources, seed ensembles and
//!   CSV/JSON output.
//!
//! ```
//! use tdtail::{build_two_state, run, td_fixed_point, RunConfig, Variant};
//!
//! let problem = build_two_state(0.5, 0.5).unwrap();
//! let star = td_fixed_point(&problem).unwrap();
//! let trace = run(&problem, &RunConfig::new(Variant::Vanilla, 1 << 14).seed(7, 0)).unwrap();
//! assert!((trace.tail_average - star).norm() < 0.1);
//! ```

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod lemmas;
pub mod mdp;
pub mod problems;
pub mod sampling;
pub mod td;

pub use bounds::{
    compare_conditioning, cor1_bound, cor2_bound, sigma, thm1_bound, thm2_bound, thm3_bound, thm4_bound,
    BoundInputs, BoundName, BoundReport, Conditioning, DriftForm,
};
pub use error::{Error, Result};
pub use experiment::{
    compare_variants, estimate_rate, run_experiment, AlphaRule, ExperimentSpec, LambdaRule, Reference, ResultRow,
};
pub use lemmas::{verify_lemmas, LemmaReport};
pub use mdp::{
    induce_chain, projected_bellman_residual, regularised_fixed_point, stationary_distribution, td_fixed_point,
    FeatureMap, Mdp, Policy, PolicyChain, TdProblem,
};
pub use problems::{build_two_state, gen_random_problem, ProblemFile, ProblemSource};
pub use sampling::{
    drop_k_stream, estimate_mixing, markov_stream, sample_iid, stream_rng, CoupledDropK, IidSampler,
    MarkovStream, MixingEstimate, RewardMode, Start, Transition,
};
pub use td::{
    expected_update_trajectory, max_step_size, reg_max_step_size, reg_td_step, run, run_on_stream, td_step,
    RunConfig, RunTrace, Sampling, Variant,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/td.md")]
    mod td {}
    #[doc = include_str!("../../../book/src/regularisation.md")]
    mod regularisation {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/mixing.md")]
    mod mixing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
