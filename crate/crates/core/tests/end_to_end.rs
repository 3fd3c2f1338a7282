//! Cross-module checks through the public API, with oracles written here
//! from scratch (plain fixed-point iteration, closed-form 2x2 solutions).

use regmg::library::paper_mixed_reference_ne;
use regmg::{
    duality_gap, gda_step, generate, gradients, load_game, paper_game_deterministic,
    paper_game_mixed, read_csv, run_algorithm2, save_game, shapley_solve, softmax_policies,
    write_csv, GeneratorKind, GeneratorSpec, MarkovGame, Policy, PolicyParams, RunOptions,
    Schedule,
};

const TOL: f64 = 1e-10;

/// V for fixed stochastic policies by iterating the Bellman operator.
fn value_by_iteration(game: &MarkovGame, pi: &Policy, phi: &Policy) -> Vec<f64> {
    let n = game.n_states();
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for (s, out) in next.iter_mut().enumerate() {
            for a in 0..game.n_actions_max() {
                for b in 0..game.n_actions_min() {
                    let cont: f64 = game.transition_row(s, a, b).iter().zip(&v).map(|(p, x)| p * x).sum();
                    *out += pi.prob(s, a) * phi.prob(s, b) * (game.reward(s, a, b) + game.gamma() * cont);
                }
            }
        }
        let diff = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-13 {
            break;
        }
    }
    v
}

fn j(game: &MarkovGame, v: &[f64]) -> f64 {
    game.rho().iter().zip(v).map(|(r, x)| r * x).sum()
}

/// All deterministic stationary policies of a 2-state, 2-action player.
fn pure_policies() -> Vec<Policy> {
    [[0, 0], [0, 1], [1, 0], [1, 1]]
        .iter()
        .map(|acts| Policy::deterministic(acts, 2))
        .collect()
}

#[test]
fn serialized_game_solves_identically() {
    let game = generate(&GeneratorSpec::new(GeneratorKind::RandomMixed2x2, 9, 2, 2)).unwrap();
    let back = load_game(&save_game(&game)).unwrap();
    let a = shapley_solve(&game, 0.1, TOL).unwrap();
    let b = shapley_solve(&back, 0.1, TOL).unwrap();
    assert_eq!(a.pi_star, b.pi_star);
    assert_eq!(a.j_star, b.j_star);
}

#[test]
fn mixed_equilibrium_against_independent_oracles() {
    let game = paper_game_mixed();
    let sol = shapley_solve(&game, 0.0, TOL).unwrap();

    // value: policy evaluation by iteration agrees with the solver
    let v = value_by_iteration(&game, &sol.pi_star, &sol.phi_star);
    for (x, y) in v.iter().zip(&sol.value_vector) {
        assert!((x - y).abs() < 1e-8, "{v:?} vs {:?}", sol.value_vector);
    }

    // each state's stage game at V* is solved by the 2x2 closed form
    for s in 0..2 {
        let g: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                (0..2)
                    .map(|b| {
                        let cont: f64 = game.transition_row(s, a, b).iter().zip(&v).map(|(p, x)| p * x).sum();
                        game.reward(s, a, b) + game.gamma() * cont
                    })
                    .collect()
            })
            .collect();
        let den = g[0][0] - g[0][1] - g[1][0] + g[1][1];
        let x0 = (g[1][1] - g[1][0]) / den;
        let y0 = (g[1][1] - g[0][1]) / den;
        let val = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / den;
        assert!((sol.pi_star.prob(s, 0) - x0).abs() < 1e-8, "state {s}");
        assert!((sol.phi_star.prob(s, 0) - y0).abs() < 1e-8, "state {s}");
        assert!((sol.value_vector[s] - val).abs() < 1e-8, "state {s}");
    }

    // the reference table agrees in s2 to its 3 decimals
    let (rpi, rphi) = paper_mixed_reference_ne();
    for b in 0..2 {
        assert!((sol.pi_star.prob(1, b) - rpi.prob(1, b)).abs() < 2e-3);
        assert!((sol.phi_star.prob(1, b) - rphi.prob(1, b)).abs() < 2e-3);
    }
}

#[test]
fn reference_mixed_pair_is_exploitable() {
    // Brute force over deterministic deviations (an optimal stationary
    // deterministic response always exists against a fixed policy).
    let game = paper_game_mixed();
    let (pi, phi) = paper_mixed_reference_ne();
    let upper = pure_policies()
        .iter()
        .map(|p| j(&game, &value_by_iteration(&game, p, &phi)))
        .fold(f64::NEG_INFINITY, f64::max);
    let lower = pure_policies()
        .iter()
        .map(|q| j(&game, &value_by_iteration(&game, &pi, q)))
        .fold(f64::INFINITY, f64::min);
    let gap = upper - lower;
    assert!(gap > 0.03, "{gap}");
    let lib = duality_gap(&game, &pi, &phi, 0.0, TOL).unwrap();
    assert!((gap - lib).abs() < 1e-7, "{gap} vs {lib}");
}

#[test]
fn deterministic_equilibrium_is_brute_force_saddle() {
    let game = paper_game_deterministic();
    let sol = shapley_solve(&game, 0.0, TOL).unwrap();
    let pure = pure_policies();
    let table: Vec<Vec<f64>> = pure
        .iter()
        .map(|p| pure.iter().map(|q| j(&game, &value_by_iteration(&game, p, q))).collect())
        .collect();
    let maxmin = table.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).fold(f64::NEG_INFINITY, f64::max);
    let minmax = (0..4).map(|c| table.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max)).fold(f64::INFINITY, f64::min);
    assert!((maxmin - minmax).abs() < 1e-9);
    assert!((sol.j_star - maxmin).abs() < 1e-8);
    assert!(sol.pi_star.max_abs_diff(&Policy::deterministic(&[1, 1], 2)) < 1e-9);
    assert!(sol.phi_star.max_abs_diff(&Policy::deterministic(&[0, 0], 2)) < 1e-9);
}

#[test]
fn gda_step_matches_recomputed_gradients() {
    let game = paper_game_mixed();
    let p0 = PolicyParams::zeros(&game);
    let p1 = gda_step(&game, &p0, 0.1, 0.1, 1.0).unwrap();
    let (gt, _) = gradients(&game, &softmax_policies(&p0).unwrap(), 1.0).unwrap();
    let theta1 = p0.theta.axpy(0.1, &gt);
    assert!(p1.theta.max_abs_diff(&theta1) < 1e-15);
    let mid = PolicyParams { theta: theta1, psi: p0.psi.clone() };
    let (_, gp) = gradients(&game, &softmax_policies(&mid).unwrap(), 1.0).unwrap();
    assert!(p1.psi.max_abs_diff(&p0.psi.axpy(-0.1, &gp)) < 1e-15);
}

#[test]
fn run_log_survives_csv_round_trip() {
    let game = paper_game_mixed();
    let mut opts = RunOptions { log_every: 40, ..Default::default() };
    let res = run_algorithm2(&game, &Schedule::practical(), 200, &mut opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    write_csv(&res.log, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), res.log.len());
    for (a, b) in back.iter().zip(&res.log) {
        assert_eq!(a.k, b.k);
        assert_eq!(a.tau.to_bits(), b.tau.to_bits());
        assert_eq!(a.gap_max_unreg.map(f64::to_bits), b.gap_max_unreg.map(f64::to_bits));
    }
    // tau_k = (k+1)^{-1/3} exactly as logged
    for r in &back {
        assert_eq!(r.tau, 1.0 / ((r.k as f64) + 1.0).powf(1.0 / 3.0));
    }
}
