//! `regmg` command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 numerical
//! failure (divergence, oracle failure, violated lemma inequality).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use regmg::equilibrium::{estimate_c, shapley_solve};
use regmg::gda::{
    default_c, run_algorithm1, run_algorithm2, run_fixed_tau, run_vanilla_gda,
    schedule_from_theorem2, search_initial_tau, Alg1Options, InnerStop, RunOptions, RunResult,
    Schedule, StepRule, Termination, TheoremConstants, DEFAULT_INNER_CAP,
};
use regmg::lemmas::{verify_lemmas_with, exact_gradients, LemmaOptions};
use regmg::library::{self, GeneratorKind, GeneratorSpec, PRNG_NAME};
use regmg::metrics::{write_csv_with, DEFAULT_ORACLE_TOL};
use regmg::{load_game, save_game, Error, MarkovGame, PolicyPair, PolicyParams, Policy, Table};

#[derive(Parser, Debug)]
#[command(name = "regmg", version, about = "Entropy-regularized GDA for zero-sum Markov games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a GDA algorithm and log convergence metrics.
    Solve(SolveArgs),
    /// Solve for the (regularized) Nash equilibrium.
    Equilibrium(EquilibriumArgs),
    /// Run the numerical lemma suites over random and built-in games.
    VerifyLemmas(VerifyArgs),
    /// Generate a game file.
    Gen(GenArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Algo {
    /// GDA at a fixed weight tau0.
    Fixed,
    /// Nested loop with tau_t = tau0 * eta^t.
    Alg1,
    /// Single loop with polynomial schedules.
    Diminishing,
    /// Unregularized GDA.
    Vanilla,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Preset {
    /// Constant alpha = 1e-3, beta = 1e-2, tau_k = (k+1)^{-1/3}.
    Practical,
    /// Constructive theorem schedule from --lambda and c.
    Theorem2,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SolveArgs {
    /// Game file or builtin:mixed / builtin:deterministic.
    #[arg(long)]
    game: String,
    #[arg(long, value_enum, default_value = "diminishing")]
    algo: Algo,
    /// Iterations (for alg1: optional global budget).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha_exp: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    beta_exp: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    tau_exp: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// Geometric factor for alg1 (default from the constants).
    #[arg(long)]
    eta: Option<f64>,
    /// Lower bound on equilibrium entries (default: estimated).
    #[arg(long)]
    c: Option<f64>,
    /// Schedule preset for --algo diminishing; explicit flags override it.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of outer stages for alg1.
    #[arg(long, default_value_t = 8)]
    outer: usize,
    #[arg(long, default_value_t = DEFAULT_INNER_CAP)]
    inner_cap: usize,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
    tol: f64,
    /// CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Track equal-weight averaged policies.
    #[arg(long)]
    average: bool,
    /// Echoed in the summary; also seeds `gen:` game specs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct EquilibriumArgs {
    #[arg(long)]
    game: String,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
    tol: f64,
    /// Optional JSON destination for the policies.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mutation {
    None,
    SignFlip,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 25)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Random policy pairs per game.
    #[arg(long, default_value_t = 3)]
    points: usize,
    /// Test fixture: corrupt the gradient oracle.
    #[arg(long, value_enum, default_value = "none", hide = true)]
    mutate: Mutation,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// mixed, general, paper_mixed or paper_deterministic.
    #[arg(long, default_value = "mixed")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Solve the tau = 1e-3 equilibrium and print its smallest entry.
    #[arg(long)]
    check_mixed: bool,
}

/// Failure with its exit code.
struct Fail {
    code: u8,
    message: String,
}

fn config(message: impl Into<String>) -> Fail {
    Fail {
        code: 1,
        message: message.into(),
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter(_)
            | Error::InvalidDistribution(_)
            | Error::DimensionMismatch(_)
            | Error::Stochasticity { .. }
            | Error::NegativeProbability { .. }
            | Error::MissingField(_)
            | Error::Parse(_)
            | Error::Io { .. } => 1,
            _ => 2,
        };
        Fail {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Fail>;

fn main() -> ExitCode {
    // clap reports usage errors with status 2, which is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Equilibrium(a) => cmd_equilibrium(a),
        Command::VerifyLemmas(a) => cmd_verify(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(spec: &str, seed: u64) -> Result<MarkovGame, Fail> {
    if let Some(g) = library::builtin(spec) {
        return Ok(g);
    }
    if spec.starts_with("builtin:") {
        return Err(config(format!(
            "unknown builtin `{spec}` (expected builtin:mixed or builtin:deterministic)"
        )));
    }
    if let Some(kind) = spec.strip_prefix("gen:") {
        let kind: GeneratorKind = kind.parse()?;
        return Ok(library::generate(&GeneratorSpec::new(kind, seed, 2, 2))?);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| config(format!("cannot read game file {spec}: {e}")))?;
    Ok(load_game(&text)?)
}

fn game_hash(game: &MarkovGame) -> String {
    Sha256::digest(save_game(game).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn reference_for(spec: &str) -> Option<(Policy, Policy)> {
    match spec.strip_prefix("builtin:").unwrap_or(spec) {
        "mixed" => Some(library::paper_mixed_reference_ne()),
        "deterministic" => Some(library::paper_deterministic_reference_ne()),
        _ => None,
    }
}

fn positive(name: &str, v: f64) -> Result<f64, Fail> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config(format!("--{name} must be finite and > 0, got {v}")))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_else(|| "n/a".into())
}

fn print_rows(label: &str, p: &Policy) {
    let rows: Vec<String> = p
        .probs()
        .to_rows()
        .iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:.6}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    println!("{label}: {}", rows.join(" "));
}

fn cmd_solve(a: SolveArgs) -> CmdResult {
    if a.tol <= 0.0 || !a.tol.is_finite() {
        return Err(config("--tol must be > 0"));
    }
    let game = load(&a.game, a.seed)?;
    let reference = reference_for(&a.game);
    let mut opts = RunOptions {
        log_every: a.log_every,
        oracle_tol: a.tol,
        reference,
        average: a.average,
        ..Default::default()
    };

    let mut lines: Vec<String> = Vec::new();
    let res: RunResult = match a.algo {
        Algo::Fixed => {
            let tau = positive("tau0", a.tau0.unwrap_or(1.0))?;
            let alpha = a.alpha0.unwrap_or(1e-2);
            let beta = a.beta0.unwrap_or(1e-2);
            let iters = a.iters.unwrap_or(10_000);
            lines.push(format!(
                "schedule: fixed tau = {tau:e}, alpha = {alpha:e}, beta = {beta:e}, iterations = {iters}"
            ));
            run_fixed_tau(&game, None, tau, alpha, beta, iters, &mut opts)?
        }
        Algo::Vanilla => {
            let alpha = a.alpha0.unwrap_or(1e-3);
            let beta = a.beta0.unwrap_or(1e-2);
            let iters = a.iters.unwrap_or(50_000);
            lines.push(format!(
                "schedule: tau = 0, alpha = {alpha:e}, beta = {beta:e}, iterations = {iters}, average = {}",
                a.average
            ));
            run_vanilla_gda(&game, alpha, beta, iters, a.average, &mut opts)?
        }
        Algo::Diminishing => {
            let iters = a.iters.unwrap_or(50_000);
            let mut s = match a.preset {
                Some(Preset::Theorem2) => {
                    let lambda = positive("lambda", a.lambda.unwrap_or(1.0))?;
                    let c = match a.c {
                        Some(c) => positive("c", c)?,
                        None => default_c(&game, lambda, a.tol)?,
                    };
                    let t2 = schedule_from_theorem2(&game, c, lambda, a.tol)?;
                    lines.push(format!(
                        "theorem schedule: lambda = {lambda:e}, c = {c:e}, h = {:e}, beta interval = [{:e}, {:e}], feasible = {}, initial condition {:e} <= {:e}: {}",
                        t2.h, t2.beta_interval.0, t2.beta_interval.1, t2.feasible,
                        t2.initial_lhs, t2.initial_rhs, t2.initial_ok
                    ));
                    t2.schedule
                }
                _ => Schedule::practical(),
            };
            if let Some(v) = a.alpha0 { s.alpha0 = v; }
            if let Some(v) = a.beta0 { s.beta0 = v; }
            if let Some(v) = a.tau0 { s.tau0 = v; }
            if let Some(v) = a.h { s.h = v; }
            if let Some(v) = a.alpha_exp { s.exponents.0 = v; }
            if let Some(v) = a.beta_exp { s.exponents.1 = v; }
            if let Some(v) = a.tau_exp { s.exponents.2 = v; }
            s.validate()?;
            lines.push(format!(
                "schedule: alpha_k = {:e}/(k+{})^{}, beta_k = {:e}/(k+{})^{}, tau_k = {:e}/(k+{})^{}, iterations = {iters}",
                s.alpha0, s.h, s.exponents.0, s.beta0, s.h, s.exponents.1, s.tau0, s.h, s.exponents.2
            ));
            run_algorithm2(&game, &s, iters, &mut opts)?
        }
        Algo::Alg1 => {
            let c = match a.c {
                Some(c) => Some(positive("c", c)?),
                None => {
                    let t = a.tau0.unwrap_or(1.0);
                    let c = default_c(&game, t, a.tol)?;
                    (c > 0.0).then_some(c)
                }
            };
            let consts = c.map(|c| TheoremConstants::new(&game, c)).transpose()?;
            let tau0 = match (a.tau0, &consts) {
                (Some(t), _) => positive("tau0", t)?,
                (None, Some(k)) => {
                    let ic = search_initial_tau(&game, &PolicyParams::zeros(&game), 1.0, k, a.tol, 60)?;
                    lines.push(format!(
                        "initial condition: tau0 = {:e} gives 3*delta_pi + delta_phi = {:e} <= C1*tau0 = {:e}",
                        ic.tau, ic.lhs, ic.rhs
                    ));
                    ic.tau
                }
                (None, None) => return Err(config("--tau0 is required when c cannot be estimated")),
            };
            let eta = match (a.eta, &consts) {
                (Some(e), _) => e,
                (None, Some(k)) => k.corollary1_eta(),
                (None, None) => return Err(config("--eta is required when c cannot be estimated")),
            };
            let cfg = Alg1Options {
                tau0,
                eta,
                outer_iters: a.outer,
                step_rule: StepRule::Scaled {
                    alpha_base: a.alpha0.unwrap_or(1e-2),
                    beta_base: a.beta0.unwrap_or(1e-2),
                },
                inner_stop: InnerStop::Halving,
                inner_cap: a.inner_cap,
                max_total_iters: a.iters,
            };
            lines.push(format!(
                "schedule: tau_t = {tau0:e} * {eta}^t, stages = {}, alpha_t = {:e} * (1/tau | tau^2), beta_t = {:e} * (1/tau | 1), inner cap = {}",
                cfg.outer_iters,
                a.alpha0.unwrap_or(1e-2),
                a.beta0.unwrap_or(1e-2),
                cfg.inner_cap
            ));
            run_algorithm1(&game, &cfg, &mut opts)?
        }
    };

    if let Some(path) = &a.out {
        write_csv_with(&res.log, path, 10.0 * a.tol)?;
    }

    println!("# summary");
    println!("command: solve");
    println!("algorithm: {:?}", a.algo);
    println!("game: {} (sha256 {})", a.game, game_hash(&game));
    println!("seed: {} ({PRNG_NAME})", a.seed);
    for l in &lines {
        println!("{l}");
    }
    println!("tolerances: oracle_tol = {:e}, log_every = {}", a.tol, a.log_every);
    match estimate_c(&game, &[1.0, 0.1, 0.01], a.tol) {
        Ok(est) if est.c > 0.0 => {
            let k = TheoremConstants::new(&game, est.c)?;
            println!(
                "constants: c = {:e}, L_V = {:e}, L_H = {:e}, C1 = {:e}, C2 = {:e}, L_delta = {:e}, eta* = {}",
                est.c, k.l_v, k.l_h, k.c1, k.c2, k.l_delta, k.corollary1_eta()
            );
        }
        Ok(est) => println!("constants: unavailable (estimated c = {:e})", est.c),
        Err(e) => println!("constants: unavailable ({e})"),
    }
    for st in &res.stages {
        println!(
            "stage {}: tau = {:e}, K_t = {}, composite {:e} -> {:e}{}",
            st.t,
            st.tau,
            st.iterations,
            st.start_composite,
            st.end_composite,
            if st.stopped_by_rule { "" } else { " (cap)" }
        );
    }
    for w in &res.warnings {
        println!("warning: {w}");
    }
    println!("iterations: {}", res.wall_iterations);
    println!(
        "termination: {}",
        match res.termination {
            Termination::Completed => "completed",
            Termination::MaxIters => "max_iters",
            Termination::Diverged => "diverged",
        }
    );
    if let Some(last) = res.log.last() {
        println!(
            "final: k = {}, tau = {:e}, delta_pi = {}, delta_phi = {}, gap_max_unreg = {}, gap_min_unreg = {}, dist_to_ne = {}",
            last.k,
            last.tau,
            fmt_opt(last.delta_pi),
            fmt_opt(last.delta_phi),
            fmt_opt(last.gap_max_unreg),
            fmt_opt(last.gap_min_unreg),
            fmt_opt(last.dist_to_ne)
        );
        if last.avg_gap_max_unreg.is_some() {
            println!(
                "averaged: gap_max_unreg = {}, gap_min_unreg = {}",
                fmt_opt(last.avg_gap_max_unreg),
                fmt_opt(last.avg_gap_min_unreg)
            );
        }
    }
    if let Ok(pair) = regmg::softmax_policies(&res.params_final) {
        print_rows("pi", &pair.pi);
        print_rows("phi", &pair.phi);
    }
    if let Some(path) = &a.out {
        println!("csv: {}", path.display());
    }
    if res.termination == Termination::Diverged {
        return Err(Fail {
            code: 2,
            message: "iterates diverged".into(),
        });
    }
    Ok(())
}

fn policy_json(p: &Policy) -> serde_json::Value {
    serde_json::json!(p.probs().to_rows())
}

fn cmd_equilibrium(a: EquilibriumArgs) -> CmdResult {
    if a.tau.is_nan() || a.tau < 0.0 || !a.tau.is_finite() {
        return Err(config(format!("--tau must be finite and >= 0, got {}", a.tau)));
    }
    let game = load(&a.game, 0)?;
    let sol = shapley_solve(&game, a.tau, a.tol)?;
    println!("game: {} (sha256 {})", a.game, game_hash(&game));
    println!("tau: {:e}", a.tau);
    if sol.solved_tau != a.tau {
        println!(
            "note: exact solve fell back to tau = {:e}; error bar {:e}",
            sol.solved_tau, sol.error_bar
        );
    }
    print_rows("pi", &sol.pi_star);
    print_rows("phi", &sol.phi_star);
    let v: Vec<String> = sol.value_vector.iter().map(|x| format!("{x:.10}")).collect();
    println!("value: [{}]", v.join(", "));
    println!("J: {:.12}", sol.j_star);
    println!("duality_gap: {:e}", sol.duality_gap);
    println!("sweeps: {}", sol.iterations);
    if let Some(path) = &a.out {
        let doc = serde_json::json!({
            "tau": a.tau,
            "pi": policy_json(&sol.pi_star),
            "phi": policy_json(&sol.phi_star),
            "value": sol.value_vector,
            "j": sol.j_star,
            "duality_gap": sol.duality_gap,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc).expect("json") + "\n")
            .map_err(|e| config(format!("cannot write {}: {e}", path.display())))?;
        println!("policies: {}", path.display());
    }
    Ok(())
}

fn sign_flipped(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> regmg::Result<(Table, Table)> {
    let (gt, gp) = exact_gradients(game, pair, tau)?;
    Ok((gt.axpy(-2.0, &gt), gp.axpy(-2.0, &gp)))
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(config("--tol must be > 0"));
    }
    if a.trials == 0 {
        println!("warning: --trials 0, nothing to check (vacuous pass)");
        return Ok(());
    }
    let opts = LemmaOptions {
        trials: a.trials,
        seed: a.seed,
        tol: a.tol,
        include_builtins: true,
        points: a.points,
    };
    let rep = match a.mutate {
        Mutation::None => verify_lemmas_with(&opts, &exact_gradients)?,
        Mutation::SignFlip => verify_lemmas_with(&opts, &sign_flipped)?,
    };
    println!(
        "verify-lemmas: {} games ({} random, seed {}, {PRNG_NAME}), tol {:e}",
        rep.games, a.trials, a.seed, a.tol
    );
    for s in &rep.suites {
        let status = match (s.passed(), s.informational) {
            (true, _) => "PASS",
            (false, true) => "FAIL (informational)",
            (false, false) => "FAIL",
        };
        println!(
            "{:<28} {:>6} passed / {:>6} checks  worst excess {:+.3e}  {status}  -- {}",
            s.name,
            s.checks - s.violations,
            s.checks,
            s.worst_excess,
            s.description
        );
        if let Some(v) = &s.first_violation {
            println!("    first violation: {v}");
        }
    }
    if rep.passed() {
        println!("result: all suites passed");
        Ok(())
    } else {
        Err(Fail {
            code: 2,
            message: "lemma inequalities violated".into(),
        })
    }
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let kind: GeneratorKind = a.kind.parse()?;
    let mut spec = GeneratorSpec::new(kind, a.seed, a.states, a.actions);
    spec.gamma = a.gamma;
    let game = library::generate(&spec)?;
    let text = save_game(&game);
    std::fs::write(&a.out, &text)
        .map_err(|e| config(format!("cannot write {}: {e}", a.out.display())))?;
    println!("kind: {kind:?}");
    println!("seed: {} ({PRNG_NAME})", a.seed);
    println!("wrote: {} (sha256 {})", a.out.display(), game_hash(&game));
    if a.check_mixed {
        let sol = shapley_solve(&game, 1e-3, DEFAULT_ORACLE_TOL)?;
        let m = sol.pi_star.min_entry().min(sol.phi_star.min_entry());
        println!("tau=1e-3 equilibrium min entry: {m:.6e}");
    }
    Ok(())
}
