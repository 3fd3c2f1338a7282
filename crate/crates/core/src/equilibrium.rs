//! Equilibrium oracles.
//!
//! A (regularized) Markov game decomposes into per-state matrix games with
//! payoff `G_s = r(s,.,.) + gamma P(s,.,.) V`. Shapley iteration applies the
//! stage-game value operator until `V` is stationary.
//!
//! Regularized stage games (`tau > 0`) have a unique quantal response
//! equilibrium, found by Newton's method on the first-order conditions in
//! log-probability coordinates, with the damped fixed-point iteration and
//! entropic mirror-prox as fallbacks. Unregularized stage games use support
//! enumeration over square kernels (Shapley–Snow), which is exhaustive and
//! exact for up to `ENUMERATION_CAP` actions per player.

use nalgebra::{DMatrix, DVector};

use crate::best_response::{best_response_max, best_response_min};
use crate::error::{Error, Result};
use crate::evaluation::dot;
use crate::game::{logsumexp, policy_entropy, MarkovGame, Policy, Table};

/// Largest action count per player handled by support enumeration. The
/// number of square support pairs is `sum_k C(m,k) C(n,k) = C(m+n, m)`,
/// i.e. 12 870 small LU solves at 8x8.
pub const ENUMERATION_CAP: usize = 8;

/// Regularization weights used when exact enumeration is out of reach.
pub const VANISHING_TAUS: [f64; 3] = [1e-2, 1e-3, 1e-4];

const NEWTON_MAX_ITERS: usize = 200;
const FIXED_POINT_MAX_ITERS: usize = 200_000;
const MIRROR_PROX_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    /// Payoff to the row (max) player.
    pub payoff: Table,
    pub tau: f64,
}

impl MatrixGame {
    pub fn new(payoff: Table, tau: f64) -> Result<Self> {
        if !payoff.is_finite() {
            return Err(Error::InvalidParameter("matrix game payoff must be finite".into()));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
        }
        Ok(MatrixGame { payoff, tau })
    }

    /// `x^T G y + tau H(x) - tau H(y)`.
    pub fn value_at(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            v += xi * dot(self.payoff.row(i), y);
        }
        if self.tau > 0.0 {
            v += self.tau * (entropy(x) - entropy(y));
        }
        v
    }

    /// `max_x' f(x', y) - min_y' f(x, y')`, zero exactly at the saddle point.
    pub fn saddle_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let gy = mat_vec(&self.payoff, y);
        let gtx = mat_t_vec(&self.payoff, x);
        if self.tau > 0.0 {
            let t = self.tau;
            let best_x = t * logsumexp(&scale(&gy, 1.0 / t)) - t * entropy(y);
            let best_y = -t * logsumexp(&scale(&gtx, -1.0 / t)) + t * entropy(x);
            best_x - best_y
        } else {
            max_of(&gy) - min_of(&gtx)
        }
    }
}

/// Which stage-game solver produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMethod {
    Newton,
    DampedFixedPoint,
    MirrorProx,
    SupportEnumeration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Logs of `x` and `y`; finite for regularized games even when entries
    /// underflow.
    pub log_x: Vec<f64>,
    pub log_y: Vec<f64>,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub method: MatrixMethod,
}

fn entropy(p: &[f64]) -> f64 {
    policy_entropy(p).unwrap_or(f64::NAN)
}

fn scale(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| v * c).collect()
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

fn mat_vec(g: &Table, y: &[f64]) -> Vec<f64> {
    (0..g.rows()).map(|i| dot(g.row(i), y)).collect()
}

fn mat_t_vec(g: &Table, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &gij) in out.iter_mut().zip(g.row(i)) {
            *o += xi * gij;
        }
    }
    out
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = logsumexp(z);
    z.iter().map(|v| v - lse).collect()
}

fn exp_normalized(logs: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    p
}

/// Packs a pair given by (unnormalized) log-probabilities.
fn solution_from_logs(
    mg: &MatrixGame,
    log_x: &[f64],
    log_y: &[f64],
    iterations: usize,
    method: MatrixMethod,
) -> MatrixSolution {
    let (log_x, log_y) = (log_softmax(log_x), log_softmax(log_y));
    let (x, y) = (exp_normalized(&log_x), exp_normalized(&log_y));
    MatrixSolution {
        value: mg.value_at(&x, &y),
        residual: mg.saddle_residual(&x, &y),
        x,
        y,
        log_x,
        log_y,
        iterations,
        method,
    }
}

/// Packs a pair given by probabilities (fallback solvers). Zero entries get
/// the log of their best-response weight so logs stay finite.
fn solution_from_probs(mg: &MatrixGame, x: &[f64], y: &[f64], iterations: usize, method: MatrixMethod) -> MatrixSolution {
    let t = mg.tau;
    let br_x = log_softmax(&scale(&mat_vec(&mg.payoff, y), 1.0 / t));
    let br_y = log_softmax(&scale(&mat_t_vec(&mg.payoff, x), -1.0 / t));
    let logs = |p: &[f64], br: &[f64]| -> Vec<f64> {
        p.iter().zip(br).map(|(&v, &b)| if v > 0.0 { v.ln() } else { b }).collect()
    };
    solution_from_logs(mg, &logs(x, &br_x), &logs(y, &br_y), iterations, method)
}

/// Newton's method on
/// `G y - tau p - lambda 1 = 0`, `G^T x + tau q - mu 1 = 0`, `sum x = sum y = 1`
/// with `x = exp(p)`, `y = exp(q)`, backtracking on the residual norm.
fn newton_qre(mg: &MatrixGame, init_logs: Option<(&[f64], &[f64])>) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let g = &mg.payoff;
    let t = mg.tau;
    let (m, n) = (g.rows(), g.cols());
    let dim = m + n + 2;
    let gscale = 1.0 + g.max_abs();

    let (mut p, mut q) = match init_logs {
        Some((lx, ly)) if lx.len() == m && ly.len() == n => (lx.to_vec(), ly.to_vec()),
        _ => (vec![-(m as f64).ln(); m], vec![-(n as f64).ln(); n]),
    };
    let x0 = exp_normalized(&p);
    let y0 = exp_normalized(&q);
    let gy = mat_vec(g, &y0);
    let gtx = mat_t_vec(g, &x0);
    let mut lam = (0..m).map(|i| gy[i] - t * p[i]).sum::<f64>() / m as f64;
    let mut mu = (0..n).map(|j| gtx[j] + t * q[j]).sum::<f64>() / n as f64;

    let residual = |p: &[f64], q: &[f64], lam: f64, mu: f64| -> Vec<f64> {
        let x: Vec<f64> = p.iter().map(|v| v.exp()).collect();
        let y: Vec<f64> = q.iter().map(|v| v.exp()).collect();
        let gy = mat_vec(g, &y);
        let gtx = mat_t_vec(g, &x);
        let mut f = Vec::with_capacity(dim);
        f.extend((0..m).map(|i| gy[i] - t * p[i] - lam));
        f.extend((0..n).map(|j| gtx[j] + t * q[j] - mu));
        f.push(x.iter().sum::<f64>() - 1.0);
        f.push(y.iter().sum::<f64>() - 1.0);
        f
    };
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    // round-off floor of the residual: |G| and tau |log p| terms cancel in F
    let target_at = |p: &[f64], q: &[f64]| {
        let logs = p.iter().chain(q).fold(1.0f64, |a, v| a.max(v.abs()));
        1e-14 * (gscale + t * logs)
    };

    let mut f = residual(&p, &q, lam, mu);
    for it in 0..NEWTON_MAX_ITERS {
        let target = target_at(&p, &q);
        if f.iter().all(|v| v.abs() <= target) {
            return Some((p, q, it));
        }
        let x: Vec<f64> = p.iter().map(|v| v.exp()).collect();
        let y: Vec<f64> = q.iter().map(|v| v.exp()).collect();
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..m {
            jac[(i, i)] = -t;
            for j in 0..n {
                jac[(i, m + j)] = g.get(i, j) * y[j];
                jac[(m + j, i)] = g.get(i, j) * x[i];
            }
            jac[(i, m + n)] = -1.0;
            jac[(m + n, i)] = x[i];
        }
        for j in 0..n {
            jac[(m + j, m + j)] = t;
            jac[(m + j, m + n + 1)] = -1.0;
            jac[(m + n + 1, m + j)] = y[j];
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|v| -v));
        let step = jac.lu().solve(&rhs)?;
        // Only upward moves can overflow exp(); log-probabilities at the
        // solution are <= 0 but may be ~ -|G|/tau, so downward moves stay free.
        let mut alpha: f64 = 1.0;
        for (cur, d) in p.iter().chain(&q).zip(step.iter()) {
            if *d > 0.0 {
                alpha = alpha.min((5.0 - cur).max(0.0) / d);
            }
        }
        let f_norm = norm(&f);
        let mut accepted = false;
        for _ in 0..60 {
            let np: Vec<f64> = (0..m).map(|i| p[i] + alpha * step[i]).collect();
            let nq: Vec<f64> = (0..n).map(|j| q[j] + alpha * step[m + j]).collect();
            let nl = lam + alpha * step[m + n];
            let nm = mu + alpha * step[m + n + 1];
            let nf = residual(&np, &nq, nl, nm);
            if nf.iter().all(|v| v.is_finite()) && norm(&nf) <= (1.0 - 1e-4 * alpha) * f_norm {
                p = np;
                q = nq;
                lam = nl;
                mu = nm;
                f = nf;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // stalled: accept if already at round-off level
            return if f.iter().all(|v| v.abs() <= 1e3 * target) {
                Some((p, q, it))
            } else {
                None
            };
        }
    }
    if f.iter().all(|v| v.abs() <= 1e3 * target_at(&p, &q)) {
        Some((p, q, NEWTON_MAX_ITERS))
    } else {
        None
    }
}

/// Averaged best-response iteration
/// `x <- (1-l) x + l softmax(G y / tau)`, `y <- (1-l) y + l softmax(-G^T x / tau)`
/// with `l = min(1, tau / (tau + ||G||_inf))`.
fn damped_fixed_point(mg: &MatrixGame, tol: f64) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let g = &mg.payoff;
    let t = mg.tau;
    let lam = (t / (t + g.max_abs())).min(1.0);
    let mut x = vec![1.0 / g.rows() as f64; g.rows()];
    let mut y = vec![1.0 / g.cols() as f64; g.cols()];
    for it in 1..=FIXED_POINT_MAX_ITERS {
        let bx = exp_normalized(&log_softmax(&scale(&mat_vec(g, &y), 1.0 / t)));
        let by = exp_normalized(&log_softmax(&scale(&mat_t_vec(g, &x), -1.0 / t)));
        for (xi, b) in x.iter_mut().zip(&bx) {
            *xi = (1.0 - lam) * *xi + lam * b;
        }
        for (yj, b) in y.iter_mut().zip(&by) {
            *yj = (1.0 - lam) * *yj + lam * b;
        }
        if it % 16 == 0 && mg.saddle_residual(&x, &y) <= tol {
            return Some((x, y, it));
        }
    }
    None
}

/// Entropic mirror-prox on the regularized saddle problem with step
/// `eta = tau / (2 sqrt(tau^2 + ||G||_inf^2))`.
fn mirror_prox(mg: &MatrixGame, tol: f64) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let g = &mg.payoff;
    let t = mg.tau;
    let eta = 0.5 * t / (t * t + g.max_abs().powi(2)).sqrt();
    let step = |x: &[f64], y: &[f64], gx: &[f64], gy: &[f64]| -> (Vec<f64>, Vec<f64>) {
        // ascent for x, descent for y, in log space
        let ax: Vec<f64> = x.iter().zip(gx).map(|(xi, d)| xi.ln() + eta * d).collect();
        let ay: Vec<f64> = y.iter().zip(gy).map(|(yj, d)| yj.ln() - eta * d).collect();
        (exp_normalized(&log_softmax(&ax)), exp_normalized(&log_softmax(&ay)))
    };
    let grads = |x: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let gx: Vec<f64> = mat_vec(g, y)
            .iter()
            .zip(x)
            .map(|(v, xi)| v - t * (xi.ln() + 1.0))
            .collect();
        let gy: Vec<f64> = mat_t_vec(g, x)
            .iter()
            .zip(y)
            .map(|(v, yj)| v + t * (yj.ln() + 1.0))
            .collect();
        (gx, gy)
    };
    let mut x = vec![1.0 / g.rows() as f64; g.rows()];
    let mut y = vec![1.0 / g.cols() as f64; g.cols()];
    for it in 1..=MIRROR_PROX_MAX_ITERS {
        let (gx, gy) = grads(&x, &y);
        let (xh, yh) = step(&x, &y, &gx, &gy);
        let (gx, gy) = grads(&xh, &yh);
        let (nx, ny) = step(&x, &y, &gx, &gy);
        x = nx;
        y = ny;
        if x.iter().chain(&y).any(|v| !(*v > 0.0)) {
            return None;
        }
        if it % 16 == 0 && mg.saddle_residual(&x, &y) <= tol {
            return Some((x, y, it));
        }
    }
    None
}

/// Smallest saddle residual resolvable in double precision: the residual
/// subtracts terms of size `|G|` and `tau log n`.
fn noise_floor(mg: &MatrixGame) -> f64 {
    let logs = ((mg.payoff.rows() * mg.payoff.cols()) as f64).ln();
    64.0 * f64::EPSILON * (1.0 + mg.payoff.max_abs() + mg.tau * logs)
}

/// Unique saddle point of `max_x min_y x^T G y + tau H(x) - tau H(y)`.
pub fn solve_matrix_game_regularized(mg: &MatrixGame, tol: f64) -> Result<MatrixSolution> {
    solve_matrix_game_regularized_from(mg, tol, None)
}

/// Same, warm-started from log-probabilities of a nearby solution.
pub fn solve_matrix_game_regularized_from(
    mg: &MatrixGame,
    tol: f64,
    init_logs: Option<(&[f64], &[f64])>,
) -> Result<MatrixSolution> {
    if !(mg.tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularized matrix game needs tau > 0, got {}",
            mg.tau
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    let tol = tol.max(noise_floor(mg));
    let accept = |sol: MatrixSolution| -> Option<MatrixSolution> {
        (sol.residual <= tol && sol.residual >= -tol).then_some(sol)
    };

    if let Some((p, q, it)) = newton_qre(mg, init_logs) {
        let sol = solution_from_logs(mg, &p, &q, it, MatrixMethod::Newton);
        if let Some(sol) = accept(sol) {
            return Ok(sol);
        }
    }
    // continuation in tau from a heavily regularized (easy) game
    let mut total = 0;
    let top = (mg.payoff.max_abs() + 1.0).max(mg.tau);
    let mut taus = vec![];
    let mut t = mg.tau;
    while t < top {
        taus.push(t);
        t *= 4.0;
    }
    taus.push(t);
    let mut logs: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut ok = true;
    for &ti in taus.iter().rev() {
        let sub = MatrixGame { payoff: mg.payoff.clone(), tau: ti };
        match newton_qre(&sub, logs.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))) {
            Some((p, q, it)) => {
                total += it;
                logs = Some((p, q));
            }
            None => {
                ok = false;
                break;
            }
        }
    }
    if ok {
        if let Some((p, q)) = &logs {
            let sol = solution_from_logs(mg, p, q, total, MatrixMethod::Newton);
            if let Some(sol) = accept(sol) {
                return Ok(sol);
            }
        }
    }
    if let Some((x, y, it)) = damped_fixed_point(mg, tol) {
        if let Some(sol) = accept(solution_from_probs(mg, &x, &y, it, MatrixMethod::DampedFixedPoint)) {
            return Ok(sol);
        }
    }
    match mirror_prox(mg, tol) {
        Some((x, y, it)) => {
            let sol = solution_from_probs(mg, &x, &y, it, MatrixMethod::MirrorProx);
            let residual = sol.residual;
            accept(sol).ok_or(Error::NoConvergence {
                iterations: it,
                residual,
            })
        }
        None => Err(Error::NoConvergence {
            iterations: MIRROR_PROX_MAX_ITERS,
            residual: f64::NAN,
        }),
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Solves `[M^T -1; 1^T 0] [w; v] = [0; 1]`: weights on the support making the
/// opponent indifferent across the support.
fn indifference(sub: &DMatrix<f64>) -> Option<(Vec<f64>, f64)> {
    let k = sub.nrows();
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            a[(j, i)] = sub[(i, j)];
        }
        a[(i, k)] = -1.0;
        a[(k, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let lu = a.lu();
    if lu.determinant().abs() < 1e-14 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    Some((sol.iter().take(k).copied().collect(), sol[k]))
}

/// Unregularized minimax solution by support enumeration over square
/// supports, smallest supports first. Every matrix game has an optimal pair
/// supported on a nonsingular square kernel, so the search is exhaustive.
pub fn solve_matrix_game_exact(payoff: &Table, tol: f64) -> Result<MatrixSolution> {
    let (m, n) = (payoff.rows(), payoff.cols());
    if m > ENUMERATION_CAP || n > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            actions: m.max(n),
            cap: ENUMERATION_CAP,
        });
    }
    if !payoff.is_finite() {
        return Err(Error::InvalidParameter("matrix game payoff must be finite".into()));
    }
    let mg = MatrixGame {
        payoff: payoff.clone(),
        tau: 0.0,
    };
    let feas = 1e-12 * (1.0 + payoff.max_abs());
    let mut iterations = 0;
    let mut best: Option<MatrixSolution> = None;
    for k in 1..=m.min(n) {
        for rows in combinations(m, k) {
            for cols in combinations(n, k) {
                iterations += 1;
                let sub = DMatrix::from_fn(k, k, |i, j| payoff.get(rows[i], cols[j]));
                // x on `rows` equalizes the columns; y on `cols` equalizes the rows
                let Some((xs, _)) = indifference(&sub) else { continue };
                let Some((ys, _)) = indifference(&sub.transpose()) else { continue };
                if xs.iter().chain(&ys).any(|&w| w < -feas) {
                    continue;
                }
                let mut x = vec![0.0; m];
                let mut y = vec![0.0; n];
                for (i, &r) in rows.iter().enumerate() {
                    x[r] = xs[i].max(0.0);
                }
                for (j, &c) in cols.iter().enumerate() {
                    y[c] = ys[j].max(0.0);
                }
                let sx: f64 = x.iter().sum();
                let sy: f64 = y.iter().sum();
                x.iter_mut().for_each(|v| *v /= sx);
                y.iter_mut().for_each(|v| *v /= sy);
                let residual = mg.saddle_residual(&x, &y);
                if residual <= tol.max(feas) {
                    let value = mg.value_at(&x, &y);
                    let logs = |p: &[f64]| p.iter().map(|v| v.ln()).collect::<Vec<f64>>();
                    return Ok(MatrixSolution {
                        log_x: logs(&x),
                        log_y: logs(&y),
                        x,
                        y,
                        value,
                        residual,
                        iterations,
                        method: MatrixMethod::SupportEnumeration,
                    });
                }
                if best.as_ref().is_none_or(|b| residual < b.residual) {
                    let value = mg.value_at(&x, &y);
                    best = Some(MatrixSolution {
                        log_x: vec![],
                        log_y: vec![],
                        x,
                        y,
                        value,
                        residual,
                        iterations,
                        method: MatrixMethod::SupportEnumeration,
                    });
                }
            }
        }
    }
    Err(Error::NoConvergence {
        iterations,
        residual: best.map_or(f64::NAN, |b| b.residual),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub tau: f64,
    pub pi_star: Policy,
    pub phi_star: Policy,
    /// Per-state game value `V*`.
    pub value_vector: Vec<f64>,
    /// `rho . V*`.
    pub j_star: f64,
    /// `max_pi J_tau(pi, phi*) - min_phi J_tau(pi*, phi)`.
    pub duality_gap: f64,
    pub iterations: usize,
    /// Sup-norm change of `V` after every sweep.
    pub sweep_residuals: Vec<f64>,
    /// Regularization actually used for the stage games (differs from `tau`
    /// only on the vanishing-tau path).
    pub solved_tau: f64,
    /// Bound on `|j_star - J*|` from solving at `solved_tau` instead of `tau`.
    pub error_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyOptions {
    pub max_sweeps: usize,
    /// Initial value vector (zeros by default).
    pub v0: Option<Vec<f64>>,
}

impl Default for ShapleyOptions {
    fn default() -> Self {
        ShapleyOptions {
            max_sweeps: 1_000_000,
            v0: None,
        }
    }
}

fn stage_payoff(game: &MarkovGame, s: usize, v: &[f64]) -> Table {
    let (na, nb) = (game.n_actions_max(), game.n_actions_min());
    let mut g = Table::zeros(na, nb);
    for a in 0..na {
        for b in 0..nb {
            g.set(a, b, game.reward(s, a, b) + game.gamma() * dot(game.transition_row(s, a, b), v));
        }
    }
    g
}

fn solve_stage(
    game: &MarkovGame,
    s: usize,
    v: &[f64],
    tau: f64,
    stage_tol: f64,
    warm: Option<&MatrixSolution>,
) -> Result<MatrixSolution> {
    let payoff = stage_payoff(game, s, v);
    let out = if tau > 0.0 {
        let mg = MatrixGame { payoff, tau };
        let init = warm
            .filter(|w| !w.log_x.is_empty())
            .map(|w| (w.log_x.as_slice(), w.log_y.as_slice()));
        solve_matrix_game_regularized_from(&mg, stage_tol, init)
    } else {
        solve_matrix_game_exact(&payoff, stage_tol)
    };
    out.map_err(|e| Error::StageGame {
        state: s,
        source: Box::new(e),
    })
}

/// Shapley iteration with default options.
pub fn shapley_solve(game: &MarkovGame, tau: f64, tol: f64) -> Result<EquilibriumSolution> {
    shapley_solve_with(game, tau, tol, &ShapleyOptions::default())
}

pub fn shapley_solve_with(
    game: &MarkovGame,
    tau: f64,
    tol: f64,
    opts: &ShapleyOptions,
) -> Result<EquilibriumSolution> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    let too_big = game.n_actions_max() > ENUMERATION_CAP || game.n_actions_min() > ENUMERATION_CAP;
    if tau == 0.0 && too_big {
        return vanishing_tau(game, tol, opts);
    }
    shapley_core(game, tau, tol, opts)
}

fn vanishing_tau(game: &MarkovGame, tol: f64, opts: &ShapleyOptions) -> Result<EquilibriumSolution> {
    let mut v0 = opts.v0.clone();
    let mut last = None;
    for &t in &VANISHING_TAUS {
        let sub = ShapleyOptions {
            max_sweeps: opts.max_sweeps,
            v0: v0.clone(),
        };
        let sol = shapley_core(game, t, tol, &sub)?;
        v0 = Some(sol.value_vector.clone());
        last = Some(sol);
    }
    let mut sol = last.expect("at least one tau");
    let t = sol.solved_tau;
    let logs = (game.n_actions_max() as f64).ln().max((game.n_actions_min() as f64).ln());
    sol.tau = 0.0;
    // the regularized value differs from the plain one by at most the
    // discounted entropy mass
    sol.error_bar = t * logs / (1.0 - game.gamma());
    sol.duality_gap = duality_gap(game, &sol.pi_star, &sol.phi_star, 0.0, tol)?;
    Ok(sol)
}

fn shapley_core(
    game: &MarkovGame,
    tau: f64,
    tol: f64,
    opts: &ShapleyOptions,
) -> Result<EquilibriumSolution> {
    let ns = game.n_states();
    let gamma = game.gamma();
    let mut v = match &opts.v0 {
        Some(v0) if v0.len() == ns => v0.clone(),
        Some(v0) => {
            return Err(Error::DimensionMismatch(format!(
                "initial value has {} entries, expected {ns}",
                v0.len()
            )))
        }
        None => vec![0.0; ns],
    };
    // Stopping at tol (1-gamma)^2 / (8 gamma) keeps the exploitability of the
    // extracted stage policies (which inflate a value error by about
    // 2 gamma / (1 - gamma)) inside `tol`; the floor tracks round-off in V.
    let stage_tol = (tol * (1.0 - gamma) * 1e-2).max(1e-13 * (1.0 + game.reward_max().abs().max(game.reward_min().abs())) / (1.0 - gamma));
    let mut warm: Vec<Option<MatrixSolution>> = vec![None; ns];
    let mut residuals = Vec::new();
    let mut sweeps = 0;
    loop {
        if sweeps >= opts.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                residual: residuals.last().copied().unwrap_or(f64::NAN),
            });
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let sol = solve_stage(game, s, &v, tau, stage_tol, warm[s].as_ref())?;
            next[s] = sol.value;
            warm[s] = Some(sol);
        }
        let change = next
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        residuals.push(change);
        v = next;
        sweeps += 1;
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let threshold = if gamma > 0.0 {
            let logs = ((game.n_actions_max() * game.n_actions_min()) as f64).ln();
            (tol * (1.0 - gamma).powi(2) / (8.0 * gamma))
                .max(64.0 * f64::EPSILON * (1.0 + vmax + tau * logs))
        } else {
            f64::INFINITY
        };
        if change <= threshold {
            break;
        }
    }

    // policies from the stage games at the converged values
    let (na, nb) = (game.n_actions_max(), game.n_actions_min());
    let mut pi_logits = Table::zeros(ns, na);
    let mut phi_logits = Table::zeros(ns, nb);
    let mut pi_probs = Table::zeros(ns, na);
    let mut phi_probs = Table::zeros(ns, nb);
    for s in 0..ns {
        let sol = solve_stage(game, s, &v, tau, stage_tol, warm[s].as_ref())?;
        pi_logits.row_mut(s).copy_from_slice(&sol.log_x);
        phi_logits.row_mut(s).copy_from_slice(&sol.log_y);
        pi_probs.row_mut(s).copy_from_slice(&sol.x);
        phi_probs.row_mut(s).copy_from_slice(&sol.y);
    }
    let (pi_star, phi_star) = if tau > 0.0 {
        (Policy::from_logits(&pi_logits)?, Policy::from_logits(&phi_logits)?)
    } else {
        (Policy::from_probs(pi_probs)?, Policy::from_probs(phi_probs)?)
    };
    let duality_gap = duality_gap(game, &pi_star, &phi_star, tau, tol)?;
    Ok(EquilibriumSolution {
        tau,
        j_star: dot(game.rho(), &v),
        value_vector: v,
        pi_star,
        phi_star,
        duality_gap,
        iterations: sweeps,
        sweep_residuals: residuals,
        solved_tau: tau,
        error_bar: 0.0,
    })
}

/// `J_tau(pi_tau(phi), phi) - J_tau(pi, phi_tau(pi))`, responses solved to `tol`.
pub fn duality_gap(game: &MarkovGame, pi: &Policy, phi: &Policy, tau: f64, tol: f64) -> Result<f64> {
    let upper = best_response_max(game, phi, tau, tol)?.j_value;
    let lower = best_response_min(game, pi, tau, tol)?.j_value;
    Ok(upper - lower)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CEstimate {
    /// Minimum equilibrium policy entry over the grid.
    pub c: f64,
    /// `(tau, min entry of (pi_tau*, phi_tau*))` per grid point.
    pub per_tau: Vec<(f64, f64)>,
    /// Set when the minimum entry collapses as tau shrinks, i.e. the
    /// equilibrium looks deterministic and no positive `c` is plausible.
    pub vanishing: bool,
}

/// Empirical stand-in for the constant `c` lower-bounding regularized
/// equilibrium policy entries. It is a measurement on a finite grid and
/// certifies nothing about smaller `tau`.
pub fn estimate_c(game: &MarkovGame, tau_grid: &[f64], tol: f64) -> Result<CEstimate> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidParameter("tau grid is empty".into()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter("tau grid entries must be > 0".into()));
    }
    if tau_grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("tau grid must be decreasing".into()));
    }
    let mut per_tau = Vec::with_capacity(tau_grid.len());
    let mut v0 = None;
    for &t in tau_grid {
        let opts = ShapleyOptions {
            v0: v0.clone(),
            ..ShapleyOptions::default()
        };
        let sol = shapley_solve_with(game, t, tol, &opts)?;
        v0 = Some(sol.value_vector.clone());
        per_tau.push((t, sol.pi_star.min_entry().min(sol.phi_star.min_entry())));
    }
    let c = per_tau.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let first = per_tau[0].1;
    let last = per_tau[per_tau.len() - 1].1;
    let vanishing = per_tau.len() > 1 && last < 1e-3 && last < 0.1 * first;
    Ok(CEstimate { c, per_tau, vanishing })
}
