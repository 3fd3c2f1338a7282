//! Best responses against a fixed opponent.
//!
//! Fixing one player turns the game into an MDP for the other. Both players
//! are handled by one "maximize" soft value iteration; the min player's
//! problem is solved on negated rewards and mapped back.
//!
//! `value_vector` is always reported in the game's own convention (payoff to
//! the max player), i.e. it is `V_tau` at the (fixed, responder) pair.

use crate::error::{Error, Result};
use crate::evaluation::{dot, value_regularized};
use crate::game::{logsumexp, MarkovGame, Policy, PolicyPair, Table};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub policy: Policy,
    pub value_vector: Vec<f64>,
    /// `J_tau` at (fixed policy, response), from an exact linear solve.
    pub j_value: f64,
    pub iterations_used: usize,
    /// Final sup-norm change of the value iteration.
    pub residual: f64,
}

/// Single-agent MDP seen by the responder, oriented so that the responder
/// maximizes `sum gamma^k (reward + bonus - tau log p)`.
struct InducedMdp {
    n_states: usize,
    n_actions: usize,
    reward: Table,
    /// `trans[(s * n_actions + u) * n_states + s']`
    trans: Vec<f64>,
    /// Per-state constant contributed by the fixed player's entropy.
    bonus: Vec<f64>,
    gamma: f64,
}

impl InducedMdp {
    fn for_min(game: &MarkovGame, pi: &Policy, tau: f64) -> Self {
        let (ns, na, nb) = (game.n_states(), game.n_actions_max(), game.n_actions_min());
        let mut reward = Table::zeros(ns, nb);
        let mut trans = vec![0.0; ns * nb * ns];
        for s in 0..ns {
            for b in 0..nb {
                let mut r = 0.0;
                let out = &mut trans[(s * nb + b) * ns..(s * nb + b + 1) * ns];
                for a in 0..na {
                    let pa = pi.prob(s, a);
                    r += pa * game.reward(s, a, b);
                    for (o, &p) in out.iter_mut().zip(game.transition_row(s, a, b)) {
                        *o += pa * p;
                    }
                }
                reward.set(s, b, -r);
            }
        }
        let bonus = (0..ns).map(|s| -tau * pi.entropy(s)).collect();
        InducedMdp {
            n_states: ns,
            n_actions: nb,
            reward,
            trans,
            bonus,
            gamma: game.gamma(),
        }
    }

    fn for_max(game: &MarkovGame, phi: &Policy, tau: f64) -> Self {
        let (ns, na, nb) = (game.n_states(), game.n_actions_max(), game.n_actions_min());
        let mut reward = Table::zeros(ns, na);
        let mut trans = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let mut r = 0.0;
                let out = &mut trans[(s * na + a) * ns..(s * na + a + 1) * ns];
                for b in 0..nb {
                    let pb = phi.prob(s, b);
                    r += pb * game.reward(s, a, b);
                    for (o, &p) in out.iter_mut().zip(game.transition_row(s, a, b)) {
                        *o += pb * p;
                    }
                }
                reward.set(s, a, r);
            }
        }
        let bonus = (0..ns).map(|s| -tau * phi.entropy(s)).collect();
        InducedMdp {
            n_states: ns,
            n_actions: na,
            reward,
            trans,
            bonus,
            gamma: game.gamma(),
        }
    }

    fn q_values(&self, w: &[f64]) -> Table {
        let mut q = Table::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for u in 0..self.n_actions {
                let row = &self.trans[(s * self.n_actions + u) * self.n_states..][..self.n_states];
                q.set(s, u, self.reward.get(s, u) + self.gamma * dot(row, w));
            }
        }
        q
    }

    /// Value iteration; `tau = 0` gives the hard Bellman operator.
    fn solve(&self, tau: f64, tol: f64, max_iters: usize) -> Result<(Vec<f64>, Table, usize, f64)> {
        let threshold = if self.gamma > 0.0 {
            tol * (1.0 - self.gamma) / (2.0 * self.gamma)
        } else {
            f64::INFINITY
        };
        let mut w = vec![0.0; self.n_states];
        let mut residual = f64::INFINITY;
        for it in 1..=max_iters {
            let q = self.q_values(&w);
            let next: Vec<f64> = (0..self.n_states)
                .map(|s| {
                    let row = q.row(s);
                    let best = if tau > 0.0 {
                        let scaled: Vec<f64> = row.iter().map(|x| x / tau).collect();
                        tau * logsumexp(&scaled)
                    } else {
                        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    };
                    self.bonus[s] + best
                })
                .collect();
            residual = next
                .iter()
                .zip(&w)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            w = next;
            if !residual.is_finite() {
                break;
            }
            if residual <= threshold {
                let q = self.q_values(&w);
                return Ok((w, q, it, residual));
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iters,
            residual,
        })
    }
}

fn check_soft(tau: f64, tol: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "soft best response needs finite tau > 0, got {tau}; use the hard variant at tau = 0"
        )));
    }
    check_tol(tol)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")))
    }
}

fn check_policy(policy: &Policy, ns: usize, na: usize, who: &str) -> Result<()> {
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(Error::DimensionMismatch(format!(
            "{who} policy is {}x{}, expected {ns}x{na}",
            policy.n_states(),
            policy.n_actions()
        )));
    }
    Ok(())
}

/// Boltzmann policy `p(u|s) ∝ exp(q(s,u) / tau)` built from logits so that the
/// cached logs stay finite even when probabilities underflow.
fn boltzmann(q: &Table, tau: f64) -> Result<Policy> {
    let mut logits = q.clone();
    for x in logits.as_mut_slice() {
        *x /= tau;
    }
    Policy::from_logits(&logits)
}

fn greedy(q: &Table) -> Vec<usize> {
    (0..q.rows()).map(|s| greedy_row(q.row(s))).collect()
}

fn finish(
    game: &MarkovGame,
    pair: PolicyPair,
    responder_is_min: bool,
    tau: f64,
    iterations_used: usize,
    residual: f64,
) -> Result<BestResponse> {
    let v = value_regularized(game, &pair, tau)?;
    let j_value = dot(game.rho(), &v);
    let policy = if responder_is_min { pair.phi } else { pair.pi };
    Ok(BestResponse {
        policy,
        value_vector: v,
        j_value,
        iterations_used,
        residual,
    })
}

/// `phi_tau(pi) = argmin_phi J_tau(pi, phi)` by soft value iteration.
pub fn soft_best_response_min(
    game: &MarkovGame,
    pi: &Policy,
    tau: f64,
    tol: f64,
) -> Result<BestResponse> {
    soft_best_response_min_with(game, pi, tau, tol, DEFAULT_MAX_ITERS)
}

pub fn soft_best_response_min_with(
    game: &MarkovGame,
    pi: &Policy,
    tau: f64,
    tol: f64,
    max_iters: usize,
) -> Result<BestResponse> {
    check_soft(tau, tol)?;
    check_policy(pi, game.n_states(), game.n_actions_max(), "max")?;
    let mdp = InducedMdp::for_min(game, pi, tau);
    let (_, q, iters, residual) = mdp.solve(tau, tol, max_iters)?;
    let phi = boltzmann(&q, tau)?;
    finish(game, PolicyPair::new(pi.clone(), phi), true, tau, iters, residual)
}

/// `pi_tau(phi) = argmax_pi J_tau(pi, phi)` by soft value iteration.
pub fn soft_best_response_max(
    game: &MarkovGame,
    phi: &Policy,
    tau: f64,
    tol: f64,
) -> Result<BestResponse> {
    soft_best_response_max_with(game, phi, tau, tol, DEFAULT_MAX_ITERS)
}

pub fn soft_best_response_max_with(
    game: &MarkovGame,
    phi: &Policy,
    tau: f64,
    tol: f64,
    max_iters: usize,
) -> Result<BestResponse> {
    check_soft(tau, tol)?;
    check_policy(phi, game.n_states(), game.n_actions_min(), "min")?;
    let mdp = InducedMdp::for_max(game, phi, tau);
    let (_, q, iters, residual) = mdp.solve(tau, tol, max_iters)?;
    let pi = boltzmann(&q, tau)?;
    finish(game, PolicyPair::new(pi, phi.clone()), false, tau, iters, residual)
}

/// Deterministic optimal response of the induced MDP: value iteration to
/// `tol`, then policy-iteration polishing so the returned policy is exactly
/// optimal among deterministic stationary policies.
fn hard_response(
    game: &MarkovGame,
    mdp: &InducedMdp,
    fixed: &Policy,
    responder_is_min: bool,
    tol: f64,
    max_iters: usize,
) -> Result<BestResponse> {
    let (_, q, iters, residual) = mdp.solve(0.0, tol, max_iters)?;
    let mut actions = greedy(&q);
    let mut extra = 0;
    loop {
        let response = Policy::deterministic(&actions, mdp.n_actions);
        let pair = if responder_is_min {
            PolicyPair::new(fixed.clone(), response)
        } else {
            PolicyPair::new(response, fixed.clone())
        };
        let v = value_regularized(game, &pair, 0.0)?;
        // the responder's own (maximized) value
        let w: Vec<f64> = if responder_is_min {
            v.iter().map(|x| -x).collect()
        } else {
            v
        };
        let q = mdp.q_values(&w);
        let mut improved = false;
        for s in 0..mdp.n_states {
            let current = q.get(s, actions[s]);
            let best = greedy_row(q.row(s));
            if q.get(s, best) > current + 1e-12 * (1.0 + current.abs()) {
                actions[s] = best;
                improved = true;
            }
        }
        extra += 1;
        if !improved || extra >= 100 {
            return finish(game, pair, responder_is_min, 0.0, iters + extra, residual);
        }
    }
}

/// Lowest-index greedy choice; entries within a relative `1e-12` of the best
/// count as ties.
fn greedy_row(row: &[f64]) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + best.abs());
    row.iter().position(|&x| x >= best - slack).unwrap()
}

/// A deterministic minimizer `phi_0(pi)`, ties broken toward the lowest
/// action index.
pub fn hard_best_response_min(game: &MarkovGame, pi: &Policy, tol: f64) -> Result<BestResponse> {
    check_tol(tol)?;
    check_policy(pi, game.n_states(), game.n_actions_max(), "max")?;
    let mdp = InducedMdp::for_min(game, pi, 0.0);
    hard_response(game, &mdp, pi, true, tol, DEFAULT_MAX_ITERS)
}

/// A deterministic maximizer `pi_0(phi)`, ties broken toward the lowest
/// action index.
pub fn hard_best_response_max(game: &MarkovGame, phi: &Policy, tol: f64) -> Result<BestResponse> {
    check_tol(tol)?;
    check_policy(phi, game.n_states(), game.n_actions_min(), "min")?;
    let mdp = InducedMdp::for_max(game, phi, 0.0);
    hard_response(game, &mdp, phi, false, tol, DEFAULT_MAX_ITERS)
}

/// Min-player response: soft for `tau > 0`, hard for `tau = 0`.
pub fn best_response_min(game: &MarkovGame, pi: &Policy, tau: f64, tol: f64) -> Result<BestResponse> {
    if tau == 0.0 {
        hard_best_response_min(game, pi, tol)
    } else {
        soft_best_response_min(game, pi, tau, tol)
    }
}

/// Max-player response: soft for `tau > 0`, hard for `tau = 0`.
pub fn best_response_max(
    game: &MarkovGame,
    phi: &Policy,
    tau: f64,
    tol: f64,
) -> Result<BestResponse> {
    if tau == 0.0 {
        hard_best_response_max(game, phi, tol)
    } else {
        soft_best_response_max(game, phi, tau, tol)
    }
}

/// `g_tau(pi) = min_phi J_tau(pi, phi)`.
pub fn g_tau(game: &MarkovGame, pi: &Policy, tau: f64, tol: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    Ok(best_response_min(game, pi, tau, tol)?.j_value)
}

/// `h_tau(phi) = max_pi J_tau(pi, phi)`, the mirror of [`g_tau`].
pub fn h_tau(game: &MarkovGame, phi: &Policy, tau: f64, tol: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    Ok(best_response_max(game, phi, tau, tol)?.j_value)
}
