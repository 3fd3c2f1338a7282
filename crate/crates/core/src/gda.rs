//! Policy gradient descent ascent drivers: fixed weight, the nested-loop
//! scheme with a geometrically shrinking weight, the single-loop
//! diminishing-weight scheme, and unregularized GDA with policy
//! averaging. Also the theorem constants and step-size/initial-condition
//! checks used to configure them.

use std::f64::consts::LN_2;

use crate::equilibrium::estimate_c;
use crate::error::{Error, Result};
use crate::evaluation::gradients;
use crate::game::{softmax_policies, MarkovGame, Policy, PolicyPair, PolicyParams, Table};
use crate::metrics::{
    deltas_for_pair, unregularized_gaps_for_pair, EqCache, IterateRecord, DEFAULT_ORACLE_TOL,
};

/// Default per-stage iteration cap for the nested-loop scheme.
pub const DEFAULT_INNER_CAP: usize = 100_000;
pub const DEFAULT_LOG_EVERY: usize = 50;

// ---------------------------------------------------------------------------
// single step

struct Step {
    next: PolicyParams,
    grad_theta_norm: f64,
    grad_psi_norm: f64,
}

fn check_step_sizes(alpha: f64, beta: f64, tau: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step sizes must be finite and >= 0, got alpha={alpha}, beta={beta}"
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

fn grads_at(game: &MarkovGame, pair: &PolicyPair, tau: f64, k: usize) -> Result<(Table, Table)> {
    let (gt, gp) = match gradients(game, pair, tau) {
        Ok(g) => g,
        // a softmax entry underflowed to zero while tau > 0
        Err(Error::LogOfZero { .. }) | Err(Error::Numerical(_)) => return Err(Error::Diverged(k)),
        Err(e) => return Err(e),
    };
    if !gt.is_finite() || !gp.is_finite() {
        return Err(Error::Diverged(k));
    }
    Ok((gt, gp))
}

fn pair_of(params: &PolicyParams, k: usize) -> Result<PolicyPair> {
    if !params.is_finite() {
        return Err(Error::Diverged(k));
    }
    softmax_policies(params)
}

// theta moves first with the gradient at (theta_k, psi_k); psi then moves
// with the gradient at (theta_{k+1}, psi_k).
fn step_traced(
    game: &MarkovGame,
    params: &PolicyParams,
    pair: &PolicyPair,
    alpha: f64,
    beta: f64,
    tau: f64,
    k: usize,
) -> Result<Step> {
    let (g_theta, g_psi_old) = grads_at(game, pair, tau, k)?;
    let theta = params.theta.axpy(alpha, &g_theta);
    let mid = PolicyParams {
        theta,
        psi: params.psi.clone(),
    };
    let mid_pair = pair_of(&mid, k)?;
    let (_, g_psi) = grads_at(game, &mid_pair, tau, k)?;
    let psi = params.psi.axpy(-beta, &g_psi);
    let next = PolicyParams {
        theta: mid.theta,
        psi,
    };
    if !next.is_finite() {
        return Err(Error::Diverged(k));
    }
    Ok(Step {
        next,
        grad_theta_norm: g_theta.norm(),
        grad_psi_norm: g_psi_old.norm(),
    })
}

/// One GDA update. Non-finite gradients or iterates give `Error::Diverged`.
pub fn gda_step(
    game: &MarkovGame,
    params: &PolicyParams,
    alpha: f64,
    beta: f64,
    tau: f64,
) -> Result<PolicyParams> {
    check_step_sizes(alpha, beta, tau)?;
    let pair = pair_of(params, 0)?;
    Ok(step_traced(game, params, &pair, alpha, beta, tau, 0)?.next)
}

// ---------------------------------------------------------------------------
// run plumbing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    MaxIters,
    Diverged,
}

/// Per-stage bookkeeping of the nested-loop scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct StageInfo {
    pub t: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Inner iterations run in this stage (`K_t`).
    pub iterations: usize,
    pub start_composite: f64,
    pub end_composite: f64,
    /// Whether the stage ended through the halving rule (or the fixed count)
    /// rather than the cap.
    pub stopped_by_rule: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub params_final: PolicyParams,
    /// One record per iterate, `k = 0..=wall_iterations`.
    pub log: Vec<IterateRecord>,
    pub termination: Termination,
    pub wall_iterations: usize,
    pub stages: Vec<StageInfo>,
    /// Final equal-weight averaged policies, when averaging was requested.
    pub averaged: Option<PolicyPair>,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn last(&self) -> &IterateRecord {
        self.log.last().expect("log always holds the k = 0 record")
    }
}

pub struct RunOptions<'a> {
    /// Oracle-backed metrics are computed every `log_every` iterations
    /// (and always at k = 0 and the final iterate). 0 means endpoints only.
    pub log_every: usize,
    pub oracle_tol: f64,
    /// Compute `delta_pi`/`delta_phi` (needs tau > 0 at the logged k).
    pub deltas: bool,
    pub unreg_gaps: bool,
    /// Reference pair for the `dist_to_ne` column.
    pub reference: Option<(Policy, Policy)>,
    /// Track equal-weight averages of the policy matrices.
    pub average: bool,
    pub callback: Option<&'a mut dyn FnMut(&IterateRecord)>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            log_every: DEFAULT_LOG_EVERY,
            oracle_tol: DEFAULT_ORACLE_TOL,
            deltas: true,
            unreg_gaps: true,
            reference: None,
            average: false,
            callback: None,
        }
    }
}

impl std::fmt::Debug for RunOptions<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOptions")
            .field("log_every", &self.log_every)
            .field("oracle_tol", &self.oracle_tol)
            .field("deltas", &self.deltas)
            .field("unreg_gaps", &self.unreg_gaps)
            .field("reference", &self.reference.is_some())
            .field("average", &self.average)
            .field("callback", &self.callback.is_some())
            .finish()
    }
}

struct Recorder<'g, 'o, 'a> {
    game: &'g MarkovGame,
    opts: &'o mut RunOptions<'a>,
    eq: EqCache,
    eq0: EqCache,
    sums: Option<(Table, Table, usize)>,
    log: Vec<IterateRecord>,
}

impl<'g, 'o, 'a> Recorder<'g, 'o, 'a> {
    fn new(game: &'g MarkovGame, opts: &'o mut RunOptions<'a>) -> Self {
        let tol = opts.oracle_tol;
        let sums = opts.average.then(|| {
            (
                Table::zeros(game.n_states(), game.n_actions_max()),
                Table::zeros(game.n_states(), game.n_actions_min()),
                0,
            )
        });
        Recorder {
            game,
            opts,
            eq: EqCache::new(tol),
            eq0: EqCache::new(tol),
            sums,
            log: Vec::new(),
        }
    }

    fn full(&self, k: usize, last: bool) -> bool {
        last || k == 0 || (self.opts.log_every > 0 && k % self.opts.log_every == 0)
    }

    fn averaged(&self) -> Result<Option<PolicyPair>> {
        let Some((sp, sf, n)) = &self.sums else {
            return Ok(None);
        };
        debug_assert!(*n > 0);
        // rows of a sum of n stochastic rows; dividing by the row sum is
        // dividing by n up to rounding
        let norm = |t: &Table| -> Result<Policy> {
            let mut t = t.clone();
            for s in 0..t.rows() {
                let row = t.row_mut(s);
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
            }
            Policy::from_probs(t)
        };
        Ok(Some(PolicyPair::new(norm(sp)?, norm(sf)?)))
    }

    /// Builds the record for iterate `k`. `deltas` may carry a composite the
    /// caller already computed at this iterate.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        k: usize,
        (alpha, beta, tau): (f64, f64, f64),
        pair: &PolicyPair,
        grad_norms: (f64, f64),
        full: bool,
        deltas: Option<(f64, f64)>,
    ) -> Result<()> {
        if let Some((sp, sf, n)) = &mut self.sums {
            *sp = sp.axpy(1.0, pair.pi.probs());
            *sf = sf.axpy(1.0, pair.phi.probs());
            *n += 1;
        }
        let tol = self.opts.oracle_tol;
        let mut r = IterateRecord {
            k,
            tau,
            alpha,
            beta,
            min_pi: pair.pi.min_entry(),
            min_phi: pair.phi.min_entry(),
            grad_theta_norm: grad_norms.0,
            grad_psi_norm: grad_norms.1,
            ..Default::default()
        };
        if let Some((pi, phi)) = &self.opts.reference {
            r.dist_to_ne = Some(pair.pi.max_abs_diff(pi).max(pair.phi.max_abs_diff(phi)));
        }
        if let Some((dp, df)) = deltas {
            r.set_deltas(dp, df);
        }
        if full {
            if r.delta_pi.is_none() && self.opts.deltas && tau > 0.0 {
                let (dp, df) = deltas_for_pair(self.game, pair, tau, &mut self.eq, tol)?;
                r.set_deltas(dp, df);
            }
            if self.opts.unreg_gaps {
                let (gmax, gmin) = unregularized_gaps_for_pair(self.game, pair, &mut self.eq0, tol)?;
                r.gap_max_unreg = Some(gmax);
                r.gap_min_unreg = Some(gmin);
                if let Some(avg) = self.averaged()? {
                    let (amax, amin) =
                        unregularized_gaps_for_pair(self.game, &avg, &mut self.eq0, tol)?;
                    r.avg_gap_max_unreg = Some(amax);
                    r.avg_gap_min_unreg = Some(amin);
                }
            }
        }
        if let Some(cb) = self.opts.callback.as_mut() {
            cb(&r);
        }
        self.log.push(r);
        Ok(())
    }

    fn finish(
        self,
        params_final: PolicyParams,
        termination: Termination,
        stages: Vec<StageInfo>,
        warnings: Vec<String>,
    ) -> Result<RunResult> {
        let averaged = self.averaged()?;
        let wall_iterations = self.log.len().saturating_sub(1);
        Ok(RunResult {
            params_final,
            log: self.log,
            termination,
            wall_iterations,
            stages,
            averaged,
            warnings,
        })
    }
}

/// Generic single loop: `sched(k) = (alpha_k, beta_k, tau_k)`.
fn run_loop(
    game: &MarkovGame,
    params0: PolicyParams,
    max_iters: usize,
    sched: impl Fn(usize) -> (f64, f64, f64),
    opts: &mut RunOptions<'_>,
) -> Result<RunResult> {
    check_params_shape(game, &params0)?;
    let mut rec = Recorder::new(game, opts);
    let mut params = params0;
    let mut warnings = Vec::new();
    for k in 0..=max_iters {
        let (alpha, beta, tau) = sched(k);
        check_step_sizes(alpha, beta, tau)?;
        let last = k == max_iters;
        let full = rec.full(k, last);
        let outcome = pair_of(&params, k).and_then(|pair| {
            if last {
                let (gt, gp) = grads_at(game, &pair, tau, k)?;
                Ok((pair, (gt.norm(), gp.norm()), None))
            } else {
                let st = step_traced(game, &params, &pair, alpha, beta, tau, k)?;
                Ok((pair, (st.grad_theta_norm, st.grad_psi_norm), Some(st.next)))
            }
        });
        match outcome {
            Ok((pair, norms, next)) => {
                rec.record(k, (alpha, beta, tau), &pair, norms, full, None)?;
                if let Some(next) = next {
                    params = next;
                }
            }
            Err(Error::Diverged(at)) => {
                warnings.push(format!("iterates diverged at k = {at}"));
                return rec.finish(params, Termination::Diverged, Vec::new(), warnings);
            }
            Err(e) => return Err(e),
        }
    }
    rec.finish(params, Termination::Completed, Vec::new(), warnings)
}

fn check_params_shape(game: &MarkovGame, params: &PolicyParams) -> Result<()> {
    let ns = game.n_states();
    if params.theta.rows() != ns
        || params.theta.cols() != game.n_actions_max()
        || params.psi.rows() != ns
        || params.psi.cols() != game.n_actions_min()
    {
        return Err(Error::DimensionMismatch(format!(
            "params are {}x{} / {}x{}, game needs {}x{} / {}x{}",
            params.theta.rows(),
            params.theta.cols(),
            params.psi.rows(),
            params.psi.cols(),
            ns,
            game.n_actions_max(),
            ns,
            game.n_actions_min()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// drivers

/// GDA at a fixed weight. `params0 = None` starts from uniform policies.
pub fn run_fixed_tau(
    game: &MarkovGame,
    params0: Option<PolicyParams>,
    tau: f64,
    alpha: f64,
    beta: f64,
    max_iters: usize,
    opts: &mut RunOptions<'_>,
) -> Result<RunResult> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("fixed-tau GDA needs tau > 0, got {tau}")));
    }
    check_step_sizes(alpha, beta, tau)?;
    let params0 = params0.unwrap_or_else(|| PolicyParams::zeros(game));
    run_loop(game, params0, max_iters, |_| (alpha, beta, tau), opts)
}

/// Unregularized GDA from uniform policies; `average` tracks equal-weight
/// averages of the policy matrices.
pub fn run_vanilla_gda(
    game: &MarkovGame,
    alpha: f64,
    beta: f64,
    max_iters: usize,
    average: bool,
    opts: &mut RunOptions<'_>,
) -> Result<RunResult> {
    check_step_sizes(alpha, beta, 0.0)?;
    opts.average = opts.average || average;
    run_loop(game, PolicyParams::zeros(game), max_iters, |_| (alpha, beta, 0.0), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Polynomial,
    PiecewiseGeometric,
}

/// Step-size and weight schedule. Polynomial: `x_k = x0 / (k + h)^{a_x}`.
/// Piecewise-geometric: `tau_t = tau0 * eta^t` indexed by stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub alpha0: f64,
    pub beta0: f64,
    pub tau0: f64,
    /// `(a_alpha, a_beta, a_tau)`.
    pub exponents: (f64, f64, f64),
    pub h: f64,
    pub eta: f64,
}

impl Schedule {
    pub fn constant(alpha: f64, beta: f64, tau: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant,
            alpha0: alpha,
            beta0: beta,
            tau0: tau,
            exponents: (0.0, 0.0, 0.0),
            h: 1.0,
            eta: 0.5,
        }
    }

    pub fn polynomial(alpha0: f64, beta0: f64, tau0: f64, exponents: (f64, f64, f64), h: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Polynomial,
            alpha0,
            beta0,
            tau0,
            exponents,
            h,
            eta: 0.5,
        }
    }

    /// Exponents `(2/3, 0, 1/3)`.
    pub fn theorem2(alpha0: f64, beta0: f64, tau0: f64, h: f64) -> Self {
        Schedule::polynomial(alpha0, beta0, tau0, (2.0 / 3.0, 0.0, 1.0 / 3.0), h)
    }

    /// The practical run: constant alpha = 1e-3, beta = 1e-2 and
    /// `tau_k = (k + 1)^{-1/3}`.
    pub fn practical() -> Self {
        Schedule::polynomial(1e-3, 1e-2, 1.0, (0.0, 0.0, 1.0 / 3.0), 1.0)
    }

    pub fn piecewise_geometric(alpha0: f64, beta0: f64, tau0: f64, eta: f64) -> Self {
        Schedule {
            kind: ScheduleKind::PiecewiseGeometric,
            alpha0,
            beta0,
            tau0,
            exponents: (0.0, 0.0, 0.0),
            h: 1.0,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, v) in [("alpha0", self.alpha0), ("beta0", self.beta0), ("tau0", self.tau0)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        let (a, b, t) = self.exponents;
        if [a, b, t].iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return bad(format!("exponents must be >= 0, got ({a}, {b}, {t})"));
        }
        if !(self.h >= 1.0) || !self.h.is_finite() {
            return bad(format!("h must be >= 1, got {}", self.h));
        }
        if self.kind == ScheduleKind::PiecewiseGeometric && !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        Ok(())
    }

    /// `(alpha_k, beta_k, tau_k)`; for the geometric kind `k` is the stage.
    pub fn at(&self, k: usize) -> (f64, f64, f64) {
        match self.kind {
            ScheduleKind::Constant => (self.alpha0, self.beta0, self.tau0),
            ScheduleKind::Polynomial => {
                let base = k as f64 + self.h;
                let (a, b, t) = self.exponents;
                (
                    self.alpha0 / base.powf(a),
                    self.beta0 / base.powf(b),
                    self.tau0 / base.powf(t),
                )
            }
            ScheduleKind::PiecewiseGeometric => (
                self.alpha0,
                self.beta0,
                self.tau0 * self.eta.powi(k as i32),
            ),
        }
    }
}

/// Single-loop scheme: one GDA step per k with `(alpha_k, beta_k, tau_k)` from the
/// schedule, `tau_k` used for both gradient evaluations.
pub fn run_algorithm2(
    game: &MarkovGame,
    schedule: &Schedule,
    max_iters: usize,
    opts: &mut RunOptions<'_>,
) -> Result<RunResult> {
    schedule.validate()?;
    if schedule.kind == ScheduleKind::PiecewiseGeometric {
        return Err(Error::InvalidParameter(
            "the diminishing-weight scheme takes a constant or polynomial schedule".into(),
        ));
    }
    let s = *schedule;
    run_loop(game, PolicyParams::zeros(game), max_iters, move |k| s.at(k), opts)
}

/// Per-stage step sizes for the nested-loop scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `alpha_t = alpha_base / tau_t`, `beta_t = beta_base / tau_t` while
    /// `tau_t >= 1`; `alpha_t = alpha_base * tau_t^2`, `beta_t = beta_base`
    /// below 1, so `alpha_t / beta_t` shrinks like `tau_t^2`.
    Scaled { alpha_base: f64, beta_base: f64 },
    Constant { alpha: f64, beta: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Scaled {
            alpha_base: 1e-2,
            beta_base: 1e-2,
        }
    }
}

impl StepRule {
    pub fn at(&self, tau: f64) -> (f64, f64) {
        match *self {
            StepRule::Scaled {
                alpha_base,
                beta_base,
            } => {
                if tau >= 1.0 {
                    (alpha_base / tau, beta_base / tau)
                } else {
                    (alpha_base * tau * tau, beta_base)
                }
            }
            StepRule::Constant { alpha, beta } => (alpha, beta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerStop {
    /// Stop once `3 delta_pi + delta_phi` is at most half its stage-start
    /// value (or below the oracle resolution `10 * tol`).
    Halving,
    FixedIters(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alg1Options {
    pub tau0: f64,
    pub eta: f64,
    /// Number of stages `T`; the returned iterate is `(theta_{T,0}, psi_{T,0})`.
    pub outer_iters: usize,
    pub step_rule: StepRule,
    pub inner_stop: InnerStop,
    pub inner_cap: usize,
    /// Global iteration budget across stages.
    pub max_total_iters: Option<usize>,
}

impl Alg1Options {
    /// Defaults with `eta` from the constants.
    pub fn new(tau0: f64, consts: &TheoremConstants, outer_iters: usize) -> Self {
        Alg1Options {
            tau0,
            eta: consts.corollary1_eta(),
            outer_iters,
            step_rule: StepRule::default(),
            inner_stop: InnerStop::Halving,
            inner_cap: DEFAULT_INNER_CAP,
            max_total_iters: None,
        }
    }
}

/// Nested-loop scheme: stages at `tau_t = tau0 * eta^t`, warm-started, each run
/// until the inner stop rule fires or the cap is hit.
pub fn run_algorithm1(
    game: &MarkovGame,
    cfg: &Alg1Options,
    opts: &mut RunOptions<'_>,
) -> Result<RunResult> {
    if !(cfg.tau0 > 0.0) || !cfg.tau0.is_finite() {
        return Err(Error::InvalidParameter(format!("tau0 must be > 0, got {}", cfg.tau0)));
    }
    if !(cfg.eta > 0.0 && cfg.eta < 1.0) {
        return Err(Error::InvalidParameter(format!("eta must lie in (0, 1), got {}", cfg.eta)));
    }
    if cfg.inner_cap == 0 {
        return Err(Error::InvalidParameter("inner_cap must be >= 1".into()));
    }
    let halving = cfg.inner_stop == InnerStop::Halving;
    let tol = opts.oracle_tol;
    let mut rec = Recorder::new(game, opts);
    let mut params = PolicyParams::zeros(game);
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let mut k = 0usize;
    let mut budget_hit = false;

    let tau_at = |t: usize| cfg.tau0 * cfg.eta.powi(t as i32);
    let composite_at = |rec: &mut Recorder, pair: &PolicyPair, tau: f64| -> Result<(f64, f64)> {
        deltas_for_pair(game, pair, tau, &mut rec.eq, tol)
    };

    'outer: for t in 0..cfg.outer_iters {
        let tau = tau_at(t);
        let (alpha, beta) = cfg.step_rule.at(tau);
        check_step_sizes(alpha, beta, tau)?;
        let mut start = None;
        let mut end: f64;
        let mut stopped_by_rule = false;
        let mut i = 0usize;
        loop {
            let pair = match pair_of(&params, k) {
                Ok(p) => p,
                Err(Error::Diverged(at)) => {
                    warnings.push(format!("iterates diverged at k = {at}"));
                    return rec.finish(params, Termination::Diverged, stages, warnings);
                }
                Err(e) => return Err(e),
            };
            let deltas = if halving || i == 0 {
                Some(composite_at(&mut rec, &pair, tau)?)
            } else {
                None
            };
            let comp = deltas.map(|(dp, df)| 3.0 * dp + df);
            if i == 0 {
                start = comp;
            }
            end = comp.unwrap_or(f64::NAN);
            if i > 0 {
                let done = match cfg.inner_stop {
                    InnerStop::Halving => {
                        let c = comp.unwrap();
                        c <= 0.5 * start.unwrap() || c <= 10.0 * tol
                    }
                    InnerStop::FixedIters(n) => i >= n,
                };
                if done {
                    stopped_by_rule = true;
                    break;
                }
                if i >= cfg.inner_cap {
                    warnings.push(format!(
                        "stage {t} (tau = {tau:e}) hit the inner cap of {} iterations before the stop rule",
                        cfg.inner_cap
                    ));
                    break;
                }
            }
            if cfg.max_total_iters.is_some_and(|m| k >= m) {
                budget_hit = true;
                stages.push(StageInfo {
                    t,
                    tau,
                    alpha,
                    beta,
                    iterations: i,
                    start_composite: start.unwrap_or(f64::NAN),
                    end_composite: end,
                    stopped_by_rule: false,
                });
                break 'outer;
            }
            let full = rec.full(k, false);
            match step_traced(game, &params, &pair, alpha, beta, tau, k) {
                Ok(st) => {
                    rec.record(
                        k,
                        (alpha, beta, tau),
                        &pair,
                        (st.grad_theta_norm, st.grad_psi_norm),
                        full,
                        deltas,
                    )?;
                    params = st.next;
                }
                Err(Error::Diverged(at)) => {
                    warnings.push(format!("iterates diverged at k = {at}"));
                    return rec.finish(params, Termination::Diverged, stages, warnings);
                }
                Err(e) => return Err(e),
            }
            k += 1;
            i += 1;
        }
        stages.push(StageInfo {
            t,
            tau,
            alpha,
            beta,
            iterations: i,
            start_composite: start.unwrap_or(f64::NAN),
            end_composite: end,
            stopped_by_rule,
        });
    }

    // final iterate (theta_{T,0}, psi_{T,0}) logged at tau_T
    let t_final = if budget_hit { stages.len().saturating_sub(1) } else { cfg.outer_iters };
    let tau = tau_at(t_final);
    let (alpha, beta) = cfg.step_rule.at(tau);
    let outcome = pair_of(&params, k)
        .and_then(|pair| grads_at(game, &pair, tau, k).map(|g| (pair, g)));
    match outcome {
        Ok((pair, (gt, gp))) => {
            rec.record(k, (alpha, beta, tau), &pair, (gt.norm(), gp.norm()), true, None)?;
        }
        Err(Error::Diverged(at)) => {
            warnings.push(format!("iterates diverged at k = {at}"));
            return rec.finish(params, Termination::Diverged, stages, warnings);
        }
        Err(e) => return Err(e),
    }
    let termination = if budget_hit {
        Termination::MaxIters
    } else {
        Termination::Completed
    };
    rec.finish(params, termination, stages, warnings)
}

// ---------------------------------------------------------------------------
// theory

/// Constants of the convergence analysis for a game and a lower bound `c` on
/// regularized equilibrium policy entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremConstants {
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions_max: usize,
    pub n_actions_min: usize,
    pub rho_min: f64,
    pub c: f64,
    pub l_v: f64,
    pub l_h: f64,
    pub c1: f64,
    pub c2: f64,
    pub l_delta: f64,
}

impl TheoremConstants {
    pub fn new(game: &MarkovGame, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("c must be finite and > 0, got {c}")));
        }
        let rho_min = game.rho_min();
        if !(rho_min > 0.0) {
            return Err(Error::InvalidParameter(
                "the constants need an initial distribution with full support".into(),
            ));
        }
        let gamma = game.gamma();
        let ns = game.n_states();
        let log_a = (game.n_actions_max() as f64).ln();
        let log_b = (game.n_actions_min() as f64).ln();
        let one_m = 1.0 - gamma;
        Ok(TheoremConstants {
            gamma,
            n_states: ns,
            n_actions_max: game.n_actions_max(),
            n_actions_min: game.n_actions_min(),
            rho_min,
            c,
            l_v: 8.0 / one_m.powi(3),
            l_h: (4.0 + 8.0 * log_a) / one_m.powi(3),
            c1: rho_min * c * c / (64.0 * LN_2),
            c2: 2.0 * (ns as f64).sqrt() / ((one_m * rho_min).sqrt() * c),
            l_delta: 4.0 * log_a + 3.0 * log_b + log_b / one_m,
        })
    }

    pub fn log_a(&self) -> f64 {
        (self.n_actions_max as f64).ln()
    }

    pub fn log_b(&self) -> f64 {
        (self.n_actions_min as f64).ln()
    }

    /// Smoothness constant `3 L_H max(tau, 1)`.
    pub fn l(&self, tau: f64) -> f64 {
        3.0 * self.l_h * tau.max(1.0)
    }

    /// Per-step contraction factor of the composite at fixed weight.
    pub fn contraction_rate(&self, alpha: f64, tau: f64) -> f64 {
        1.0 - (1.0 - self.gamma) * alpha * tau * self.rho_min.powi(2) * self.c.powi(2)
            / (32.0 * self.n_states as f64)
    }

    /// `(C1 + 2 L_delta) / (2 C1 + 2 L_delta)`.
    pub fn corollary1_eta(&self) -> f64 {
        (self.c1 + 2.0 * self.l_delta) / (2.0 * self.c1 + 2.0 * self.l_delta)
    }

    /// Bound on both unregularized gaps once a stage at weight `tau` starts
    /// with composite at most `C1 tau`.
    pub fn corollary1_envelope(&self, tau: f64) -> f64 {
        (self.c1 + self.l_delta) * tau
    }

    /// `(gap_max bound, gap_min bound)` of the diminishing-weight theorem.
    pub fn theorem2_bounds(&self, k: usize, tau0: f64, h: f64) -> (f64, f64) {
        let base = (k as f64 + h).cbrt();
        let logs = self.log_a() + self.log_b();
        let one_m = 1.0 - self.gamma;
        (
            (self.c1 * tau0 + 3.0 * logs * tau0) / (3.0 * base),
            (one_m * self.c1 * tau0 + logs * tau0) / (one_m * base),
        )
    }
}

/// `c` from `estimate_c` over `{tau0, tau0/10, tau0/100}`.
pub fn default_c(game: &MarkovGame, tau0: f64, tol: f64) -> Result<f64> {
    Ok(estimate_c(game, &[tau0, tau0 / 10.0, tau0 / 100.0], tol)?.c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeReport {
    pub ok: bool,
    pub constraints: Vec<Constraint>,
}

impl StepSizeReport {
    pub fn violated(&self) -> Vec<&'static str> {
        self.constraints
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.name)
            .collect()
    }
}

pub const MAX_STEP: &str = "max{alpha,beta} <= 1/L";
pub const RATIO: &str = "alpha/beta <= min{(1-gamma) rho_min^3 c^2 tau^2 / (152 log2 |S| L^2), 8}";
pub const ALPHA_CAP: &str = "alpha <= min{(L + C2 L^2/tau)^-1, 16|S| / ((1-gamma) rho_min^2 c^2 tau)}";

fn ratio_bound(k: &TheoremConstants, tau: f64) -> f64 {
    let l = k.l(tau);
    ((1.0 - k.gamma) * k.rho_min.powi(3) * k.c.powi(2) * tau * tau
        / (152.0 * LN_2 * k.n_states as f64 * l * l))
        .min(8.0)
}

fn alpha_cap(k: &TheoremConstants, tau: f64) -> f64 {
    let l = k.l(tau);
    (1.0 / (l + k.c2 * l * l / tau))
        .min(16.0 * k.n_states as f64 / ((1.0 - k.gamma) * k.rho_min.powi(2) * k.c.powi(2) * tau))
}

/// Evaluates the three fixed-weight step-size conditions literally.
pub fn check_theorem1_stepsizes(
    consts: &TheoremConstants,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> StepSizeReport {
    let l = consts.l(tau);
    let mk = |name, lhs: f64, rhs: f64| Constraint {
        name,
        lhs,
        rhs,
        satisfied: lhs <= rhs,
    };
    let constraints = vec![
        mk(MAX_STEP, alpha.max(beta), 1.0 / l),
        mk(RATIO, alpha / beta, ratio_bound(consts, tau)),
        mk(ALPHA_CAP, alpha, alpha_cap(consts, tau)),
    ];
    StepSizeReport {
        ok: constraints.iter().all(|c| c.satisfied),
        constraints,
    }
}

/// Largest feasible pair: `beta = 1/L` and `alpha` at the tighter of the
/// ratio and cap conditions.
pub fn theorem1_feasible_stepsizes(consts: &TheoremConstants, tau: f64) -> (f64, f64) {
    let beta = 1.0 / consts.l(tau);
    let alpha = (ratio_bound(consts, tau) * beta).min(alpha_cap(consts, tau)).min(beta);
    (alpha, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub tau: f64,
    pub delta_pi: f64,
    pub delta_phi: f64,
    /// `3 delta_pi + delta_phi`.
    pub lhs: f64,
    /// `C1 tau`.
    pub rhs: f64,
    pub satisfied: bool,
}

/// Checks `3 delta_pi_0 + delta_phi_0 <= C1 tau`.
pub fn check_initial_condition(
    game: &MarkovGame,
    params0: &PolicyParams,
    tau: f64,
    consts: &TheoremConstants,
    tol: f64,
) -> Result<InitialCondition> {
    let mut cache = EqCache::new(tol);
    let pair = softmax_policies(params0)?;
    let (dp, df) = deltas_for_pair(game, &pair, tau, &mut cache, tol)?;
    let lhs = 3.0 * dp + df;
    let rhs = consts.c1 * tau;
    Ok(InitialCondition {
        tau,
        delta_pi: dp,
        delta_phi: df,
        lhs,
        rhs,
        satisfied: lhs <= rhs,
    })
}

/// Doubles tau from `tau_start` until the initial condition holds.
pub fn search_initial_tau(
    game: &MarkovGame,
    params0: &PolicyParams,
    tau_start: f64,
    consts: &TheoremConstants,
    tol: f64,
    max_doublings: usize,
) -> Result<InitialCondition> {
    let mut tau = tau_start;
    for _ in 0..=max_doublings {
        let ic = check_initial_condition(game, params0, tau, consts, tol)?;
        if ic.satisfied {
            return Ok(ic);
        }
        tau *= 2.0;
    }
    Err(Error::NoConvergence {
        iterations: max_doublings,
        residual: tau,
    })
}

/// Per-step check of the fixed-weight contraction on consecutive records
/// carrying a composite.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub rate: f64,
    pub checked: usize,
    pub violations: usize,
    /// Largest `next - (rate * prev + slack)` seen.
    pub worst_excess: f64,
    /// Largest observed `next / prev`.
    pub worst_ratio: f64,
}

pub fn contraction_check(log: &[IterateRecord], rate: f64, slack: f64) -> ContractionReport {
    let mut rep = ContractionReport {
        rate,
        checked: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_ratio: f64::NEG_INFINITY,
    };
    for w in log.windows(2) {
        let (Some(prev), Some(next)) = (w[0].composite, w[1].composite) else {
            continue;
        };
        if w[1].k != w[0].k + 1 {
            continue;
        }
        rep.checked += 1;
        let excess = next - (rate * prev + slack);
        rep.worst_excess = rep.worst_excess.max(excess);
        if prev > 0.0 {
            rep.worst_ratio = rep.worst_ratio.max(next / prev);
        }
        if excess > 0.0 {
            rep.violations += 1;
        }
    }
    rep
}

/// Step sizes and weight for the diminishing scheme, built by the
/// constructive recipe `tau0 = lambda h^{1/3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Schedule {
    pub lambda: f64,
    pub h: f64,
    pub tau0: f64,
    pub alpha0: f64,
    pub beta_interval: (f64, f64),
    pub beta0: f64,
    /// Whether the `beta0` interval is non-empty.
    pub feasible: bool,
    /// `delta_pi_0 + delta_phi_0` at `tau0` from uniform policies.
    pub initial_lhs: f64,
    /// `C1 lambda`.
    pub initial_rhs: f64,
    pub initial_ok: bool,
    pub schedule: Schedule,
}

impl Theorem2Schedule {
    pub fn hypotheses_met(&self) -> bool {
        self.feasible && self.initial_ok
    }
}

pub fn schedule_from_theorem2(
    game: &MarkovGame,
    c: f64,
    lambda: f64,
    tol: f64,
) -> Result<Theorem2Schedule> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let k = TheoremConstants::new(game, c)?;
    let one_m = 1.0 - k.gamma;
    let rho = k.rho_min;
    let num = 65536.0 * LN_2 * (k.log_a() + k.log_b()) + 96.0 * one_m * rho * c * c;
    let den = 3.0 * one_m * one_m * rho.powi(3) * c.powi(4);
    let rhs = (2.0 * k.l_h + 4.0 * k.l_h * k.l_h * k.c2) * lambda
        + (k.l_h + 4.0 * k.l_h * k.l_h * k.c2)
        + k.l_h * k.l_h * k.c2 / lambda;
    let mut h = 1.0f64;
    while num / (den * lambda * h) > rhs {
        h *= 2.0;
        if !h.is_finite() {
            return Err(Error::Numerical("no finite h satisfies the step-size condition".into()));
        }
    }
    let tau0 = lambda * h.cbrt();
    let alpha0 = num / (den * lambda * h.cbrt());
    let l0 = k.l_h * (2.0 * tau0 + 1.0);
    let lo = (152.0 * LN_2 * k.n_states as f64 * l0 * l0 * alpha0
        / (one_m * tau0 * tau0 * rho.powi(3) * c * c))
        .max(alpha0);
    let hi = 1.0 / l0;
    let feasible = lo <= hi;
    let beta0 = hi;

    let mut cache = EqCache::new(tol);
    let pair = PolicyPair::uniform(game);
    let (dp, df) = deltas_for_pair(game, &pair, tau0, &mut cache, tol)?;
    let initial_lhs = dp + df;
    let initial_rhs = k.c1 * lambda;
    Ok(Theorem2Schedule {
        lambda,
        h,
        tau0,
        alpha0,
        beta_interval: (lo, hi),
        beta0,
        feasible,
        initial_lhs,
        initial_rhs,
        initial_ok: initial_lhs <= initial_rhs,
        schedule: Schedule::theorem2(alpha0, beta0, tau0, h),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeStatus {
    HypothesesUnmet,
    Holds,
    Violated { k: usize, gap: f64, bound: f64 },
}

/// Compares logged unregularized gaps against the diminishing-weight bounds.
/// Only meaningful when the caller certifies the hypotheses.
pub fn theorem2_envelope(
    log: &[IterateRecord],
    consts: &TheoremConstants,
    tau0: f64,
    h: f64,
    hypotheses_met: bool,
    slack: f64,
) -> EnvelopeStatus {
    if !hypotheses_met {
        return EnvelopeStatus::HypothesesUnmet;
    }
    for r in log {
        let (b10, b11) = consts.theorem2_bounds(r.k, tau0, h);
        if let Some(g) = r.gap_max_unreg {
            if g > b10 + slack {
                return EnvelopeStatus::Violated { k: r.k, gap: g, bound: b10 };
            }
        }
        if let Some(g) = r.gap_min_unreg {
            if g > b11 + slack {
                return EnvelopeStatus::Violated { k: r.k, gap: g, bound: b11 };
            }
        }
    }
    EnvelopeStatus::Holds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::shapley_solve;
    use crate::library::{paper_game_deterministic, paper_game_mixed};

    const TOL: f64 = 1e-10;

    fn one_state_constant_game() -> MarkovGame {
        MarkovGame::new(1, 2, 2, vec![1.0; 4], vec![0.5; 4], 0.9, vec![1.0]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let g = one_state_constant_game();
        let p = PolicyParams::zeros(&g);
        assert_eq!(gda_step(&g, &p, 0.3, 0.3, 0.0).unwrap(), p);
    }

    #[test]
    fn step_order_uses_updated_theta() {
        let g = paper_game_mixed();
        let p0 = PolicyParams::zeros(&g);
        let next = gda_step(&g, &p0, 0.1, 0.1, 1.0).unwrap();
        // independent re-evaluation at both points
        let (gt, gp_old) = gradients(&g, &softmax_policies(&p0).unwrap(), 1.0).unwrap();
        let theta1 = p0.theta.axpy(0.1, &gt);
        let mid = PolicyParams { theta: theta1.clone(), psi: p0.psi.clone() };
        let (_, gp_new) = gradients(&g, &softmax_policies(&mid).unwrap(), 1.0).unwrap();
        assert_eq!(next.theta, theta1);
        assert_eq!(next.psi, p0.psi.axpy(-0.1, &gp_new));
        // the simultaneous variant lands elsewhere
        let simultaneous = p0.psi.axpy(-0.1, &gp_old);
        assert!(next.psi.max_abs_diff(&simultaneous) > 1e-6);
    }

    #[test]
    fn zero_beta_freezes_psi() {
        let g = paper_game_mixed();
        let p0 = PolicyParams::zeros(&g);
        let next = gda_step(&g, &p0, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(next.psi, p0.psi);
        assert!(next.theta.max_abs_diff(&p0.theta) > 0.0);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let g = paper_game_mixed();
        let p0 = PolicyParams::zeros(&g);
        assert!(gda_step(&g, &p0, -1.0, 0.1, 1.0).is_err());
        assert!(gda_step(&g, &p0, 0.1, f64::NAN, 1.0).is_err());
        assert!(gda_step(&g, &p0, 0.1, 0.1, -1.0).is_err());
        let mut bad = p0.clone();
        bad.theta.set(0, 0, f64::INFINITY);
        assert_eq!(gda_step(&g, &bad, 0.1, 0.1, 1.0), Err(Error::Diverged(0)));
    }

    #[test]
    fn huge_steps_report_divergence() {
        // values overflow to inf on the first evaluation
        let g = MarkovGame::new(1, 2, 2, vec![1.0; 4], vec![1e308, 0.0, 0.0, 1e308], 0.9, vec![1.0]).unwrap();
        let mut opts = RunOptions { log_every: 0, unreg_gaps: false, ..Default::default() };
        let res = run_fixed_tau(&g, None, 1.0, 0.1, 0.1, 50, &mut opts).unwrap();
        assert_eq!(res.termination, Termination::Diverged);
        assert!(res.log.is_empty());
        assert!(!res.warnings.is_empty());
    }

    #[test]
    fn zero_iterations_logs_only_k0() {
        let g = paper_game_mixed();
        let mut opts = RunOptions::default();
        let res = run_fixed_tau(&g, None, 1.0, 0.1, 0.1, 0, &mut opts).unwrap();
        assert_eq!(res.log.len(), 1);
        assert_eq!(res.log[0].k, 0);
        assert!(res.log[0].composite.is_some());
        assert_eq!(res.termination, Termination::Completed);
    }

    #[test]
    fn frozen_dynamics() {
        let g = paper_game_mixed();
        let mut opts = RunOptions { log_every: 5, ..Default::default() };
        let res = run_fixed_tau(&g, None, 1.0, 0.0, 0.0, 20, &mut opts).unwrap();
        assert_eq!(res.params_final, PolicyParams::zeros(&g));
        let c0 = res.log[0].composite.unwrap();
        for r in &res.log {
            if let Some(c) = r.composite {
                assert_eq!(c, c0);
            }
        }
    }

    #[test]
    fn log_length_and_cadence() {
        let g = paper_game_mixed();
        let mut seen = 0usize;
        let mut cb = |_: &IterateRecord| seen += 1;
        let mut opts = RunOptions {
            log_every: 7,
            callback: Some(&mut cb),
            ..Default::default()
        };
        let res = run_fixed_tau(&g, None, 1.0, 1e-2, 1e-2, 30, &mut opts).unwrap();
        drop(opts);
        assert_eq!(seen, 31);
        assert_eq!(res.log.len(), 31);
        assert_eq!(res.wall_iterations, 30);
        for r in &res.log {
            let expect = r.k % 7 == 0 || r.k == 30;
            assert_eq!(r.composite.is_some(), expect, "k = {}", r.k);
            assert_eq!(r.gap_max_unreg.is_some(), expect);
        }
    }

    #[test]
    fn fixed_tau_converges_to_regularized_equilibrium() {
        let g = paper_game_mixed();
        let mut opts = RunOptions { log_every: 500, ..Default::default() };
        let res = run_fixed_tau(&g, None, 1.0, 1e-2, 1e-2, 3000, &mut opts).unwrap();
        let last = res.last();
        assert!(last.composite.unwrap() < 1e-6, "{:?}", last.composite);
        let sol = shapley_solve(&g, 1.0, TOL).unwrap();
        let pair = softmax_policies(&res.params_final).unwrap();
        assert!(pair.pi.max_abs_diff(&sol.pi_star) < 1e-3);
        assert!(pair.phi.max_abs_diff(&sol.phi_star) < 1e-3);
    }

    #[test]
    fn fixed_tau_rejects_zero_tau() {
        let g = paper_game_mixed();
        assert!(run_fixed_tau(&g, None, 0.0, 0.1, 0.1, 1, &mut RunOptions::default()).is_err());
    }

    #[test]
    fn schedule_bookkeeping_is_exact() {
        let g = crate::library::generate(&crate::library::GeneratorSpec::new(
            crate::library::GeneratorKind::RandomMixed2x2,
            3,
            2,
            2,
        ))
        .unwrap();
        let s = Schedule::theorem2(1e-3, 1e-2, 1.0, 1.0);
        let mut opts = RunOptions { log_every: 0, deltas: false, unreg_gaps: false, ..Default::default() };
        let res = run_algorithm2(&g, &s, 40, &mut opts).unwrap();
        for r in &res.log {
            assert_eq!(r.tau, 1.0 / (r.k as f64 + 1.0).powf(1.0 / 3.0));
            assert_eq!(r.alpha, 1e-3 / (r.k as f64 + 1.0).powf(2.0 / 3.0));
            assert_eq!(r.beta, 1e-2);
        }
        for w in res.log.windows(2) {
            assert!(w[1].tau <= w[0].tau);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::polynomial(1.0, 1.0, 1.0, (0.0, 0.0, 0.0), 0.5).validate().is_err());
        assert!(Schedule::polynomial(0.0, 1.0, 1.0, (0.0, 0.0, 0.0), 1.0).validate().is_err());
        assert!(Schedule::polynomial(1.0, 1.0, 1.0, (-1.0, 0.0, 0.0), 1.0).validate().is_err());
        assert!(Schedule::piecewise_geometric(1.0, 1.0, 1.0, 1.0).validate().is_err());
        assert!(Schedule::practical().validate().is_ok());
        let g = Schedule::piecewise_geometric(1.0, 2.0, 8.0, 0.5);
        assert_eq!(g.at(3), (1.0, 2.0, 1.0));
    }

    #[test]
    fn constant_policy_average_is_that_policy() {
        let g = paper_game_mixed();
        let mut opts = RunOptions { log_every: 0, ..Default::default() };
        let res = run_vanilla_gda(&g, 0.0, 0.0, 10, true, &mut opts).unwrap();
        let avg = res.averaged.clone().unwrap();
        let uniform = PolicyPair::uniform(&g);
        assert!(avg.pi.max_abs_diff(&uniform.pi) < 1e-15);
        assert!(avg.phi.max_abs_diff(&uniform.phi) < 1e-15);
        assert!(res.last().avg_gap_max_unreg.is_some());
    }

    #[test]
    fn averages_are_row_stochastic() {
        let g = paper_game_mixed();
        let mut opts = RunOptions { log_every: 0, ..Default::default() };
        let res = run_vanilla_gda(&g, 1e-2, 1e-2, 200, true, &mut opts).unwrap();
        let avg = res.averaged.unwrap();
        for p in [&avg.pi, &avg.phi] {
            for s in 0..p.n_states() {
                assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constants_are_positive() {
        let g = paper_game_mixed();
        let k = TheoremConstants::new(&g, 0.12).unwrap();
        for v in [k.l_v, k.l_h, k.c1, k.c2, k.l_delta, k.l(0.5), k.l(2.0)] {
            assert!(v > 0.0 && v.is_finite());
        }
        assert!((k.l_v - 8000.0).abs() < 1e-6);
        assert!((k.l_h - (4.0 + 8.0 * LN_2) * 1000.0).abs() < 1e-6);
        assert_eq!(k.l(0.5), 3.0 * k.l_h);
        assert_eq!(k.l(2.0), 6.0 * k.l_h);
        let eta = k.corollary1_eta();
        assert!(eta > 0.5 && eta < 1.0);
        assert!(TheoremConstants::new(&g, 0.0).is_err());
    }

    #[test]
    fn stepsize_report() {
        let g = paper_game_mixed();
        let k = TheoremConstants::new(&g, 0.12).unwrap();
        let tau = 1.0;
        let (a, b) = theorem1_feasible_stepsizes(&k, tau);
        let rep = check_theorem1_stepsizes(&k, tau, a, b);
        assert!(rep.ok, "{rep:?}");
        let big = check_theorem1_stepsizes(&k, tau, a, 2.0 / k.l(tau));
        assert!(!big.ok);
        assert!(big.violated().contains(&MAX_STEP));
        let c = &big.constraints[0];
        assert_eq!(c.rhs, 1.0 / k.l(tau));
    }

    #[test]
    fn initial_condition_limits() {
        let g = paper_game_mixed();
        let k = TheoremConstants::new(&g, 0.12).unwrap();
        let z = PolicyParams::zeros(&g);
        let big = check_initial_condition(&g, &z, 1e6, &k, TOL).unwrap();
        assert!(big.satisfied, "{big:?}");
        let small = check_initial_condition(&g, &z, 1e-8, &k, TOL).unwrap();
        assert!(!small.satisfied, "{small:?}");
        // at the equilibrium itself the left side vanishes
        let sol = shapley_solve(&g, 0.7, TOL).unwrap();
        let at = PolicyParams::from_pair(&PolicyPair::new(sol.pi_star, sol.phi_star)).unwrap();
        let eq = check_initial_condition(&g, &at, 0.7, &k, TOL).unwrap();
        assert!(eq.lhs <= 10.0 * TOL && eq.satisfied);
        let found = search_initial_tau(&g, &z, 1.0, &k, TOL, 60).unwrap();
        assert!(found.satisfied && found.tau >= 1.0);
    }

    #[test]
    fn algorithm1_bookkeeping() {
        let g = paper_game_mixed();
        let cfg = Alg1Options {
            tau0: 2.0,
            eta: 0.5,
            outer_iters: 4,
            step_rule: StepRule::default(),
            inner_stop: InnerStop::Halving,
            inner_cap: 20_000,
            max_total_iters: None,
        };
        let mut opts = RunOptions { log_every: 0, ..Default::default() };
        let res = run_algorithm1(&g, &cfg, &mut opts).unwrap();
        assert_eq!(res.stages.len(), 4);
        for (t, st) in res.stages.iter().enumerate() {
            assert_eq!(st.tau, 2.0 * 0.5f64.powi(t as i32));
            assert!(st.stopped_by_rule, "{st:?}");
            assert!(st.end_composite <= 0.5 * st.start_composite || st.end_composite <= 10.0 * TOL);
        }
        let total: usize = res.stages.iter().map(|s| s.iterations).sum();
        assert_eq!(res.wall_iterations, total);
        assert_eq!(res.last().tau, 2.0 * 0.5f64.powi(4));
        for w in res.log.windows(2) {
            assert!(w[1].tau <= w[0].tau);
            assert_eq!(w[1].k, w[0].k + 1);
        }
    }

    #[test]
    fn algorithm1_single_stage_matches_fixed_tau() {
        let g = paper_game_mixed();
        let cfg = Alg1Options {
            tau0: 1.0,
            eta: 0.999,
            outer_iters: 1,
            step_rule: StepRule::Constant { alpha: 1e-2, beta: 1e-2 },
            inner_stop: InnerStop::FixedIters(25),
            inner_cap: 1000,
            max_total_iters: None,
        };
        let mut o1 = RunOptions { log_every: 0, ..Default::default() };
        let a1 = run_algorithm1(&g, &cfg, &mut o1).unwrap();
        let mut o2 = RunOptions { log_every: 0, ..Default::default() };
        let fx = run_fixed_tau(&g, None, 1.0, 1e-2, 1e-2, 25, &mut o2).unwrap();
        assert_eq!(a1.params_final, fx.params_final);
        assert_eq!(a1.stages[0].iterations, 25);
    }

    #[test]
    fn algorithm1_budget() {
        let g = paper_game_mixed();
        let cfg = Alg1Options {
            tau0: 1.0,
            eta: 0.5,
            outer_iters: 10,
            step_rule: StepRule::Constant { alpha: 1e-2, beta: 1e-2 },
            inner_stop: InnerStop::FixedIters(10),
            inner_cap: 100,
            max_total_iters: Some(25),
        };
        let res = run_algorithm1(&g, &cfg, &mut RunOptions { log_every: 0, ..Default::default() }).unwrap();
        assert_eq!(res.termination, Termination::MaxIters);
        assert_eq!(res.wall_iterations, 25);
    }

    #[test]
    fn deterministic_game_vanilla_converges() {
        let g = paper_game_deterministic();
        let mut opts = RunOptions { log_every: 10_000, ..Default::default() };
        let res = run_vanilla_gda(&g, 1e-3, 1e-2, 200_000, false, &mut opts).unwrap();
        let gaps: Vec<f64> = res.log.iter().filter_map(|r| r.nash_gap()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
        let gap = res.last().nash_gap().unwrap();
        assert!(gap < 1e-2, "{gap}");
    }

    #[test]
    fn theorem2_recipe() {
        let g = paper_game_mixed();
        let s = schedule_from_theorem2(&g, 0.12, 10.0, TOL).unwrap();
        assert_eq!(s.tau0, 10.0 * s.h.cbrt());
        assert!(s.h >= 1.0);
        assert!(s.beta_interval.0 > 0.0 && s.beta_interval.1 > 0.0);
        assert_eq!(s.schedule.exponents, (2.0 / 3.0, 0.0, 1.0 / 3.0));
        assert!(schedule_from_theorem2(&g, 0.12, 0.0, TOL).is_err());
    }

    #[test]
    fn envelope_reports_unmet_hypotheses() {
        let g = paper_game_mixed();
        let k = TheoremConstants::new(&g, 0.12).unwrap();
        let rec = IterateRecord { gap_max_unreg: Some(1e9), ..Default::default() };
        assert_eq!(theorem2_envelope(std::slice::from_ref(&rec), &k, 1.0, 1.0, false, 0.0), EnvelopeStatus::HypothesesUnmet);
        assert!(matches!(
            theorem2_envelope(&[rec], &k, 1.0, 1.0, true, 0.0),
            EnvelopeStatus::Violated { .. }
        ));
    }

    #[test]
    fn contraction_check_counts() {
        let mk = |k, c| IterateRecord { k, composite: Some(c), ..Default::default() };
        let log = vec![mk(0, 1.0), mk(1, 0.5), mk(2, 0.6)];
        let rep = contraction_check(&log, 0.9, 0.0);
        assert_eq!(rep.checked, 2);
        assert_eq!(rep.violations, 1);
    }
}
