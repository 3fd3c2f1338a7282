//! Exact policy evaluation: regularized values, discounted visitation,
//! advantages and closed-form softmax policy gradients.
//!
//! All linear systems are `|S| x |S|` and solved by dense LU with partial
//! pivoting. If the LU residual misses `VALUE_RESIDUAL_TOL` a fixed-point
//! sweep takes over.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{softmax_policies, MarkovGame, PolicyPair, PolicyParams, Table};

pub const VALUE_RESIDUAL_TOL: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_SWEEPS: usize = 1_000_000;

/// Dense `S x A x B` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(s: usize, a: usize, b: usize) -> Self {
        Tensor3 {
            dims: (s, a, b),
            data: vec![0.0; s * a * b],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.data[(s * self.dims.1 + a) * self.dims.2 + b]
    }

    #[inline]
    fn set(&mut self, s: usize, a: usize, b: usize, v: f64) {
        self.data[(s * self.dims.1 + a) * self.dims.2 + b] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Everything about one `(pi, phi, tau)` evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub tau: f64,
    pub v_tau: Vec<f64>,
    pub j_tau: f64,
    pub d_rho: Vec<f64>,
    pub adv: Tensor3,
    pub grad_theta: Table,
    pub grad_psi: Table,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "tau must be finite and >= 0, got {tau}"
        )))
    }
}

fn check_logs(pair: &PolicyPair, tau: f64) -> Result<()> {
    if tau == 0.0 {
        return Ok(());
    }
    for s in 0..pair.pi.n_states() {
        if pair.pi.log_probs().row(s).iter().any(|l| !l.is_finite()) {
            return Err(Error::LogOfZero {
                player: "max",
                state: s,
            });
        }
        if pair.phi.log_probs().row(s).iter().any(|l| !l.is_finite()) {
            return Err(Error::LogOfZero {
                player: "min",
                state: s,
            });
        }
    }
    Ok(())
}

/// State-to-state kernel `P_{pi,phi}(s, s')`.
pub fn pair_transition(game: &MarkovGame, pair: &PolicyPair) -> DMatrix<f64> {
    let ns = game.n_states();
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..game.n_actions_max() {
            let pa = pair.pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for b in 0..game.n_actions_min() {
                let w = pa * pair.phi.prob(s, b);
                if w == 0.0 {
                    continue;
                }
                for (next, &q) in game.transition_row(s, a, b).iter().enumerate() {
                    p[(s, next)] += w * q;
                }
            }
        }
    }
    p
}

/// Per-state expected stage payoff including both entropy bonuses:
/// `sum pi phi r + tau H(pi) - tau H(phi)`.
pub fn stage_cost(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    pair.check_shape(game)?;
    check_logs(pair, tau)?;
    Ok((0..game.n_states())
        .map(|s| {
            let mut c = 0.0;
            for a in 0..game.n_actions_max() {
                let pa = pair.pi.prob(s, a);
                for b in 0..game.n_actions_min() {
                    c += pa * pair.phi.prob(s, b) * game.reward(s, a, b);
                }
            }
            if tau > 0.0 {
                c += tau * (pair.pi.entropy(s) - pair.phi.entropy(s));
            }
            c
        })
        .collect())
}

fn bellman_residual(v: &[f64], c: &[f64], p: &DMatrix<f64>, gamma: f64) -> f64 {
    let ns = v.len();
    (0..ns)
        .map(|s| {
            let pv: f64 = (0..ns).map(|t| p[(s, t)] * v[t]).sum();
            (v[s] - c[s] - gamma * pv).abs()
        })
        .fold(0.0, f64::max)
}

fn solve_policy_value(c: &[f64], p: &DMatrix<f64>, gamma: f64) -> Result<Vec<f64>> {
    let ns = c.len();
    let a = DMatrix::identity(ns, ns) - p * gamma;
    let rhs = DVector::from_column_slice(c);
    if let Some(sol) = a.lu().solve(&rhs) {
        let v: Vec<f64> = sol.iter().copied().collect();
        if bellman_residual(&v, c, p, gamma) <= VALUE_RESIDUAL_TOL {
            return Ok(v);
        }
    }
    let v = fixed_point_value(c, p, gamma)?;
    let res = bellman_residual(&v, c, p, gamma);
    if res <= VALUE_RESIDUAL_TOL {
        Ok(v)
    } else {
        Err(Error::Numerical(format!(
            "policy evaluation residual {res:e} exceeds {VALUE_RESIDUAL_TOL:e}"
        )))
    }
}

/// Fixed-point sweeps `V <- c + gamma P V` until the sup-norm change is below
/// `1e-12`.
fn fixed_point_value(c: &[f64], p: &DMatrix<f64>, gamma: f64) -> Result<Vec<f64>> {
    let ns = c.len();
    let mut v = c.to_vec();
    for _ in 0..FIXED_POINT_MAX_SWEEPS {
        let next: Vec<f64> = (0..ns)
            .map(|s| c[s] + gamma * (0..ns).map(|t| p[(s, t)] * v[t]).sum::<f64>())
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        v = next;
        if change <= FIXED_POINT_TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: FIXED_POINT_MAX_SWEEPS,
        residual: bellman_residual(&v, c, p, gamma),
    })
}

/// Regularized state values `V_tau^{pi,phi}`.
pub fn value_regularized(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> Result<Vec<f64>> {
    let c = stage_cost(game, pair, tau)?;
    let p = pair_transition(game, pair);
    solve_policy_value(&c, &p, game.gamma())
}

/// Same values computed by fixed-point sweeps only.
pub fn value_regularized_iterative(
    game: &MarkovGame,
    pair: &PolicyPair,
    tau: f64,
) -> Result<Vec<f64>> {
    let c = stage_cost(game, pair, tau)?;
    let p = pair_transition(game, pair);
    fixed_point_value(&c, &p, game.gamma())
}

/// `J_tau(pi, phi) = sum_s rho(s) V_tau(s)`.
pub fn objective(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> Result<f64> {
    let v = value_regularized(game, pair, tau)?;
    Ok(dot(game.rho(), &v))
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Normalized discounted state visitation `d_rho^{pi,phi}`.
pub fn visitation(game: &MarkovGame, pair: &PolicyPair) -> Result<Vec<f64>> {
    pair.check_shape(game)?;
    let p = pair_transition(game, pair);
    visitation_from_kernel(game, &p)
}

fn visitation_from_kernel(game: &MarkovGame, p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let ns = game.n_states();
    let gamma = game.gamma();
    let a = DMatrix::identity(ns, ns) - p.transpose() * gamma;
    let rhs = DVector::from_iterator(ns, game.rho().iter().map(|r| (1.0 - gamma) * r));
    let d = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular visitation system".into()))?;
    let d: Vec<f64> = d.iter().copied().collect();
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > VALUE_RESIDUAL_TOL {
        return Err(Error::Numerical(format!("visitation sums to {sum}")));
    }
    Ok(d)
}

/// Regularized advantage `A_tau(s, a, b)` given consistent values `v_tau`.
pub fn advantage(
    game: &MarkovGame,
    pair: &PolicyPair,
    tau: f64,
    v_tau: &[f64],
) -> Result<Tensor3> {
    check_tau(tau)?;
    pair.check_shape(game)?;
    check_logs(pair, tau)?;
    let (ns, na, nb) = (game.n_states(), game.n_actions_max(), game.n_actions_min());
    if v_tau.len() != ns {
        return Err(Error::DimensionMismatch(format!(
            "value vector has {} entries, expected {ns}",
            v_tau.len()
        )));
    }
    let gamma = game.gamma();
    let mut adv = Tensor3::zeros(ns, na, nb);
    for s in 0..ns {
        for a in 0..na {
            let reg_a = if tau > 0.0 {
                -tau * pair.pi.log_probs().get(s, a)
            } else {
                0.0
            };
            for b in 0..nb {
                let reg_b = if tau > 0.0 {
                    tau * pair.phi.log_probs().get(s, b)
                } else {
                    0.0
                };
                let cont = dot(game.transition_row(s, a, b), v_tau);
                adv.set(
                    s,
                    a,
                    b,
                    game.reward(s, a, b) + reg_a + reg_b + gamma * cont - v_tau[s],
                );
            }
        }
    }
    Ok(adv)
}

fn gradients_from(
    game: &MarkovGame,
    pair: &PolicyPair,
    d_rho: &[f64],
    adv: &Tensor3,
) -> (Table, Table) {
    let (ns, na, nb) = (game.n_states(), game.n_actions_max(), game.n_actions_min());
    let scale = 1.0 / (1.0 - game.gamma());
    let mut gt = Table::zeros(ns, na);
    let mut gp = Table::zeros(ns, nb);
    for s in 0..ns {
        let w = scale * d_rho[s];
        for a in 0..na {
            let pa = pair.pi.prob(s, a);
            let mut acc = 0.0;
            for b in 0..nb {
                acc += pair.phi.prob(s, b) * adv.get(s, a, b);
            }
            gt.set(s, a, w * pa * acc);
        }
        for b in 0..nb {
            let pb = pair.phi.prob(s, b);
            let mut acc = 0.0;
            for a in 0..na {
                acc += pair.pi.prob(s, a) * adv.get(s, a, b);
            }
            gp.set(s, b, w * pb * acc);
        }
    }
    (gt, gp)
}

/// Full evaluation at one point.
pub fn evaluate(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> Result<EvalResult> {
    let c = stage_cost(game, pair, tau)?;
    let p = pair_transition(game, pair);
    let v_tau = solve_policy_value(&c, &p, game.gamma())?;
    let d_rho = visitation_from_kernel(game, &p)?;
    let adv = advantage(game, pair, tau, &v_tau)?;
    let (grad_theta, grad_psi) = gradients_from(game, pair, &d_rho, &adv);
    Ok(EvalResult {
        tau,
        j_tau: dot(game.rho(), &v_tau),
        v_tau,
        d_rho,
        adv,
        grad_theta,
        grad_psi,
    })
}

/// Closed-form `(dJ_tau/dtheta, dJ_tau/dpsi)` at a softmax policy pair.
pub fn gradients(game: &MarkovGame, pair: &PolicyPair, tau: f64) -> Result<(Table, Table)> {
    let e = evaluate(game, pair, tau)?;
    Ok((e.grad_theta, e.grad_psi))
}

/// Which logit table a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Max,
    Min,
}

/// Result of comparing closed-form gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest relative error over all coordinates whose magnitude exceeds
    /// the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_player: Player,
    pub worst_state: usize,
    pub worst_action: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Every coordinate within `rel_tol` relative or `abs_tol` absolute.
    pub passed: bool,
}

pub const FD_DEFAULT_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-7;

/// Central-difference check of the closed-form gradients of
/// `J_tau(softmax(theta), softmax(psi))` over every logit.
///
/// A step near `1e-5` balances truncation (`O(step^2)`) against cancellation
/// (`O(eps |J| / step)`); much smaller steps lose digits on games with large
/// values.
pub fn check_gradient(
    game: &MarkovGame,
    params: &PolicyParams,
    tau: f64,
    step: f64,
) -> Result<GradientCheck> {
    check_gradient_with(game, params, tau, step, |g, p, t| {
        let e = evaluate(g, p, t)?;
        Ok((e.grad_theta, e.grad_psi))
    })
}

/// Same as [`check_gradient`] but against any gradient oracle.
pub fn check_gradient_with<F>(
    game: &MarkovGame,
    params: &PolicyParams,
    tau: f64,
    step: f64,
    oracle: F,
) -> Result<GradientCheck>
where
    F: Fn(&MarkovGame, &PolicyPair, f64) -> Result<(Table, Table)>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must lie in (0, 1e-2], got {step}"
        )));
    }
    let pair = softmax_policies(params)?;
    let (gt, gp) = oracle(game, &pair, tau)?;
    let j = |p: &PolicyParams| -> Result<f64> { objective(game, &softmax_policies(p)?, tau) };

    let mut report = GradientCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_player: Player::Max,
        worst_state: 0,
        worst_action: 0,
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    let mut worst_score = -1.0;
    for player in [Player::Max, Player::Min] {
        let (table, grad) = match player {
            Player::Max => (&params.theta, &gt),
            Player::Min => (&params.psi, &gp),
        };
        for s in 0..table.rows() {
            for a in 0..table.cols() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (tp, tm) = match player {
                    Player::Max => (&mut plus.theta, &mut minus.theta),
                    Player::Min => (&mut plus.psi, &mut minus.psi),
                };
                tp.set(s, a, table.get(s, a) + step);
                tm.set(s, a, table.get(s, a) - step);
                let numeric = (j(&plus)? - j(&minus)?) / (2.0 * step);
                let analytic = grad.get(s, a);
                let abs_err = (analytic - numeric).abs();
                let scale = analytic.abs().max(numeric.abs());
                let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
                let ok = rel_err <= FD_REL_TOL || abs_err <= FD_ABS_TOL;
                report.passed &= ok;
                report.max_abs_error = report.max_abs_error.max(abs_err);
                // rank coordinates: failing ones first, then by relative error
                let score = if ok { rel_err.min(1.0) } else { 2.0 + rel_err };
                if abs_err > FD_ABS_TOL {
                    report.max_rel_error = report.max_rel_error.max(rel_err);
                }
                if score > worst_score {
                    worst_score = score;
                    report.worst_player = player;
                    report.worst_state = s;
                    report.worst_action = a;
                    report.analytic = analytic;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
