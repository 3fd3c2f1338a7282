//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failing criteria are reported
//! but do not fail the process unless `REGMG_ACCEPTANCE_STRICT=1` is set, so
//! that the rest of `cargo test` still runs.

use std::time::Instant;

use regmg::gda::{
    contraction_check, search_initial_tau, theorem1_feasible_stepsizes, Alg1Options, InnerStop,
    StepRule,
};
use regmg::library::{paper_deterministic_reference_ne, paper_mixed_reference_ne};
use regmg::{
    check_theorem1_stepsizes, estimate_c, paper_game_deterministic, paper_game_mixed,
    run_algorithm1, run_algorithm2, run_fixed_tau, run_vanilla_gda, shapley_solve,
    softmax_policies, verify_lemmas, LemmaOptions, MarkovGame, Policy, PolicyParams, RunOptions,
    Schedule, Termination, TheoremConstants,
};

const TOL: f64 = 1e-10;
const GAP_THRESHOLD: f64 = 1e-2;
const POLICY_TOL: f64 = 0.02;
const ITERS: usize = 50_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pair_diff(pi: &Policy, phi: &Policy, reference: &(Policy, Policy)) -> f64 {
    pi.max_abs_diff(&reference.0).max(phi.max_abs_diff(&reference.1))
}

/// Practical single-loop run: alpha = 1e-3, beta = 1e-2, tau_k = (k+1)^{-1/3}.
fn figure_run(game: &MarkovGame, reference: (Policy, Policy)) -> Outcome {
    let sched = Schedule::polynomial(1e-3, 1e-2, 1.0, (0.0, 0.0, 1.0 / 3.0), 1.0);
    let mut opts = RunOptions {
        log_every: 100,
        oracle_tol: TOL,
        reference: Some(reference.clone()),
        ..Default::default()
    };
    let res = match run_algorithm2(game, &sched, ITERS, &mut opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let last = res.last();
    let gap = last.nash_gap().unwrap_or(f64::INFINITY);
    let pair = softmax_policies(&res.params_final).unwrap();
    let diff = pair_diff(&pair.pi, &pair.phi, &reference);
    outcome(
        res.termination == Termination::Completed && gap < GAP_THRESHOLD && diff <= POLICY_TOL,
        format!(
            "k={} tau={:.4} gap={gap:.4e} (< {GAP_THRESHOLD:e}) [max {:.4e}, min {:.4e}], max policy diff {diff:.4} (<= {POLICY_TOL})",
            last.k,
            last.tau,
            last.gap_max_unreg.unwrap_or(f64::NAN),
            last.gap_min_unreg.unwrap_or(f64::NAN),
        ),
    )
}

fn criterion1() -> Outcome {
    figure_run(&paper_game_mixed(), paper_mixed_reference_ne())
}

fn criterion2() -> Outcome {
    let game = paper_game_mixed();
    let mut opts = RunOptions {
        log_every: 100,
        oracle_tol: TOL,
        deltas: false,
        ..Default::default()
    };
    let res = match run_vanilla_gda(&game, 1e-3, 1e-2, ITERS, true, &mut opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let window: Vec<f64> = res
        .log
        .iter()
        .filter(|r| r.k >= ITERS - 10_000)
        .filter_map(|r| r.nash_gap())
        .collect();
    let window_max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg = res.last().avg_nash_gap().unwrap_or(f64::INFINITY);
    outcome(
        window_max >= GAP_THRESHOLD && avg < window_max,
        format!(
            "last-iterate gap max over k in [{}, {ITERS}] = {window_max:.4e} ({} samples, must be >= {GAP_THRESHOLD:e}); averaged gap at k={ITERS} = {avg:.4e}",
            ITERS - 10_000,
            window.len()
        ),
    )
}

fn criterion3() -> Outcome {
    figure_run(&paper_game_deterministic(), paper_deterministic_reference_ne())
}

fn criterion4() -> Outcome {
    let game = paper_game_mixed();
    let c = match estimate_c(&game, &[1.0, 0.1, 0.01], TOL) {
        Ok(e) => e.c,
        Err(e) => return outcome(false, format!("estimate_c failed: {e}")),
    };
    let consts = TheoremConstants::new(&game, c).unwrap();
    let params0 = PolicyParams::zeros(&game);
    let ic = match search_initial_tau(&game, &params0, 1.0, &consts, TOL, 60) {
        Ok(ic) => ic,
        Err(e) => return outcome(false, format!("no tau satisfies the initial condition: {e}")),
    };
    let tau = ic.tau;
    let (alpha, beta) = theorem1_feasible_stepsizes(&consts, tau);
    let report = check_theorem1_stepsizes(&consts, tau, alpha, beta);
    if !report.ok {
        return outcome(false, format!("step sizes infeasible: {:?}", report.violated()));
    }
    let iters = 2000;
    let mut opts = RunOptions {
        log_every: 1,
        oracle_tol: TOL,
        unreg_gaps: false,
        ..Default::default()
    };
    let res = match run_fixed_tau(&game, None, tau, alpha, beta, iters, &mut opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let rate = consts.contraction_rate(alpha, tau);
    let rep = contraction_check(&res.log, rate, 10.0 * TOL);
    outcome(
        rep.checked >= iters && rep.violations == 0,
        format!(
            "c={c:.5} tau={tau} (3dp+df={:.3e} <= C1 tau={:.3e}), alpha={alpha:.3e}, beta={beta:.3e}, rate=1-{:.3e}; {} steps checked, {} violations, worst next/prev {:.6}",
            ic.lhs,
            ic.rhs,
            1.0 - rate,
            rep.checked,
            rep.violations,
            rep.worst_ratio
        ),
    )
}

fn criterion5() -> Outcome {
    let opts = LemmaOptions {
        trials: 25,
        seed: 7,
        tol: 1e-8,
        include_builtins: true,
        points: 3,
    };
    let rep = match verify_lemmas(&opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite failed to run: {e}")),
    };
    let parts: Vec<String> = rep
        .suites
        .iter()
        .map(|s| {
            format!(
                "{}{} {}/{}",
                s.name,
                if s.informational { "(info)" } else { "" },
                s.violations,
                s.checks
            )
        })
        .collect();
    outcome(
        rep.passed(),
        format!("{} games; violations/checks: {}", rep.games, parts.join(", ")),
    )
}

/// Discounted value of a fixed deterministic pair by plain fixed-point
/// iteration; independent of the library's linear-solve evaluator.
fn pure_pair_value(game: &MarkovGame, a_of: &[usize], b_of: &[usize]) -> f64 {
    let n = game.n_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                let (a, b) = (a_of[s], b_of[s]);
                let cont: f64 = game
                    .transition_row(s, a, b)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                game.reward(s, a, b) + game.gamma() * cont
            })
            .collect();
        let diff = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-14 {
            break;
        }
    }
    game.rho().iter().zip(&v).map(|(r, x)| r * x).sum()
}

fn criterion6() -> Outcome {
    let mixed = paper_game_mixed();
    let sol = match shapley_solve(&mixed, 0.0, TOL) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("shapley_solve failed: {e}")),
    };
    let reference = paper_mixed_reference_ne();
    let diff = pair_diff(&sol.pi_star, &sol.phi_star, &reference);
    let j_ref = regmg::objective(
        &mixed,
        &regmg::PolicyPair::new(reference.0.clone(), reference.1.clone()),
        0.0,
    )
    .unwrap();
    let j_diff = (sol.j_star - j_ref).abs();
    let mixed_ok = diff <= 2e-3 && j_diff <= 2e-3 && sol.duality_gap <= 1e-8;

    let det = paper_game_deterministic();
    let det_sol = shapley_solve(&det, 0.0, TOL).unwrap();
    let profiles: Vec<[usize; 2]> = vec![[0, 0], [0, 1], [1, 0], [1, 1]];
    let brute = profiles
        .iter()
        .map(|a| {
            profiles
                .iter()
                .map(|b| pure_pair_value(&det, a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let det_diff = (det_sol.j_star - brute).abs();
    outcome(
        mixed_ok && det_diff <= 1e-8,
        format!(
            "mixed: max entry diff {diff:.4e} (<= 2e-3), |J* - J(ref)| = {j_diff:.4e} (<= 2e-3), duality gap {:.2e}; deterministic: |J* - maxmin| = {det_diff:.2e} (<= 1e-8)",
            sol.duality_gap
        ),
    )
}

fn criterion7() -> Outcome {
    let game = paper_game_mixed();
    let c = estimate_c(&game, &[1.0, 0.1, 0.01], TOL).unwrap().c;
    let consts = TheoremConstants::new(&game, c).unwrap();
    let params0 = PolicyParams::zeros(&game);
    let ic = match search_initial_tau(&game, &params0, 1.0, &consts, TOL, 60) {
        Ok(ic) => ic,
        Err(e) => return outcome(false, format!("no tau satisfies the initial condition: {e}")),
    };
    let cfg = Alg1Options::new(ic.tau, &consts, 8);
    let mut opts = RunOptions {
        log_every: 0,
        oracle_tol: TOL,
        ..Default::default()
    };
    let res = match run_algorithm1(&game, &cfg, &mut opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let all_halved = res.stages.len() == 8 && res.stages.iter().all(|s| s.stopped_by_rule);
    let last = res.last();
    let bound = consts.corollary1_envelope(last.tau) + 10.0 * TOL;
    let (gm, gn) = (
        last.gap_max_unreg.unwrap_or(f64::INFINITY),
        last.gap_min_unreg.unwrap_or(f64::INFINITY),
    );
    let envelope_ok = gm <= bound && gn <= bound;

    // K_t as tau_t shrinks below 1
    let companion = Alg1Options {
        tau0: 1.0,
        eta: 0.5,
        outer_iters: 7,
        step_rule: StepRule::default(),
        inner_stop: InnerStop::Halving,
        inner_cap: cfg.inner_cap,
        max_total_iters: None,
    };
    let mut copts = RunOptions {
        log_every: 0,
        oracle_tol: TOL,
        unreg_gaps: false,
        ..Default::default()
    };
    let k_t: Vec<usize> = match run_algorithm1(&game, &companion, &mut copts) {
        Ok(r) => r.stages.iter().filter(|s| s.tau < 1.0).map(|s| s.iterations).collect(),
        Err(e) => return outcome(false, format!("companion run failed: {e}")),
    };
    let monotone = k_t.len() >= 2 && k_t.windows(2).all(|w| w[1] >= w[0]);
    let k_list: Vec<usize> = res.stages.iter().map(|s| s.iterations).collect();
    outcome(
        all_halved && envelope_ok && monotone,
        format!(
            "tau0={} eta={:.6}: K_t={k_list:?} all halved={all_halved}; gaps ({gm:.4e}, {gn:.4e}) <= (C1+L_delta) tau_T = {bound:.4e}; companion (tau0=1, eta=0.5) K_t={k_t:?} nondecreasing={monotone}",
            ic.tau, cfg.eta
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters probe test binaries; keep quiet then.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("single-loop convergence on the mixed game", criterion1),
        ("vanilla GDA baseline (last iterate oscillates, average improves)", criterion2),
        ("single-loop convergence on the deterministic game", criterion3),
        ("fixed-weight contraction inequality", criterion4),
        ("lemma suite, 25 random games + builtins", criterion5),
        ("oracle cross-validation", criterion6),
        ("nested-loop envelope", criterion7),
    ];
    let mut passed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if o.pass {
            passed += 1;
        }
        println!(
            "criterion {}: {} {name} -- {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    let strict = std::env::var("REGMG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed != criteria.len() {
        std::process::exit(1);
    }
}
