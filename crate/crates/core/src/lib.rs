//! Entropy-regularized policy gradient descent ascent for finite two-player
//! zero-sum Markov games.
//!
//! The max player picks `a` with policy `pi`, the min player picks `b` with
//! `phi`; both policies are tabular softmax. Everything is evaluated exactly
//! (dense linear solves), so games are expected to be desk-sized.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod best_response;
pub mod evaluation;
pub mod format;
pub mod gda;
pub mod game;
pub mod lemmas;
pub mod library;
pub mod metrics;

pub use error::{Error, Result};
pub use evaluation::{
    advantage, check_gradient, evaluate, gradients, objective, value_regularized, visitation,
    EvalResult, GradientCheck,
};
pub use equilibrium::{
    duality_gap, estimate_c, shapley_solve, solve_matrix_game_exact,
    solve_matrix_game_regularized, EquilibriumSolution, MatrixGame, MatrixSolution,
};
pub use best_response::{best_response_max, best_response_min, g_tau, h_tau, BestResponse};
pub use format::{load_game, save_game};
pub use gda::{
    check_initial_condition, check_theorem1_stepsizes, gda_step, run_algorithm1, run_algorithm2,
    run_fixed_tau, run_vanilla_gda, schedule_from_theorem2, Alg1Options, RunOptions, RunResult,
    Schedule, Termination, TheoremConstants,
};
pub use lemmas::{verify_lemmas, LemmaOptions, LemmaReport};
pub use metrics::{compute_deltas, compute_unregularized_gaps, read_csv, write_csv, EqCache, IterateRecord};
pub use game::{
    policy_entropy, softmax_policies, MarkovGame, Policy, PolicyPair, PolicyParams, Table,
};
pub use library::{
    generate, paper_game_deterministic, paper_game_mixed, GeneratorKind, GeneratorSpec,
};
