//! Python bindings. Policies cross the boundary as `list[list[float]]`
//! (row per state), logs as lists of dicts.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use regmg_core::gda::{Alg1Options, InnerStop, StepRule};
use regmg_core::library::{self, GeneratorKind, GeneratorSpec};
use regmg_core::metrics::DEFAULT_ORACLE_TOL;
use regmg_core::{self as core, IterateRecord, MarkovGame, Policy, PolicyPair, RunOptions, Table};

create_exception!(regmg, RegmgError, PyValueError);

fn err(e: core::Error) -> PyErr {
    RegmgError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn policy(rows: Rows) -> PyResult<Policy> {
    Policy::from_rows(&rows).map_err(err)
}

fn pair(pi: Rows, phi: Rows) -> PyResult<PolicyPair> {
    Ok(PolicyPair::new(policy(pi)?, policy(phi)?))
}

fn rows(t: &Table) -> Rows {
    t.to_rows()
}

/// Finite two-player zero-sum discounted Markov game.
#[pyclass(name = "Game", module = "regmg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGame {
    inner: MarkovGame,
}

#[pymethods]
impl PyGame {
    /// `transition[s][a][b][s']`, `reward[s][a][b]`.
    #[new]
    fn new(transition: Vec<Vec<Vec<Vec<f64>>>>, reward: Vec<Vec<Vec<f64>>>, gamma: f64, rho: Vec<f64>) -> PyResult<Self> {
        let inner = MarkovGame::from_nested(&transition, &reward, gamma, rho).map_err(err)?;
        Ok(PyGame { inner })
    }

    /// `"mixed"` or `"deterministic"` (with or without the `builtin:` prefix).
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let key = if name.starts_with("builtin:") { name.to_string() } else { format!("builtin:{name}") };
        library::builtin(&key)
            .map(|inner| PyGame { inner })
            .ok_or_else(|| RegmgError::new_err(format!("unknown builtin `{name}`")))
    }

    #[staticmethod]
    #[pyo3(signature = (kind, seed, n_states=2, n_actions=2, gamma=None))]
    fn generate(kind: &str, seed: u64, n_states: usize, n_actions: usize, gamma: Option<f64>) -> PyResult<Self> {
        let kind: GeneratorKind = kind.parse().map_err(err)?;
        let mut spec = GeneratorSpec::new(kind, seed, n_states, n_actions);
        spec.gamma = gamma;
        Ok(PyGame { inner: library::generate(&spec).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGame { inner: core::load_game(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        core::save_game(&self.inner)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions_max(&self) -> usize {
        self.inner.n_actions_max()
    }

    #[getter]
    fn n_actions_min(&self) -> usize {
        self.inner.n_actions_min()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho().to_vec()
    }

    fn reward_matrix(&self, s: usize) -> PyResult<Rows> {
        if s >= self.inner.n_states() {
            return Err(RegmgError::new_err(format!("state {s} out of range")));
        }
        Ok(rows(&self.inner.reward_matrix(s)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Game(states={}, actions=({}, {}), gamma={})",
            self.inner.n_states(),
            self.inner.n_actions_max(),
            self.inner.n_actions_min(),
            self.inner.gamma()
        )
    }
}

/// Uniform policy pair for the game.
#[pyfunction]
fn uniform_policies(game: &PyGame) -> (Rows, Rows) {
    let p = PolicyPair::uniform(&game.inner);
    (rows(p.pi.probs()), rows(p.phi.probs()))
}

/// Regularized objective `J_tau(pi, phi)`.
#[pyfunction]
#[pyo3(signature = (game, pi, phi, tau=0.0))]
fn objective(game: &PyGame, pi: Rows, phi: Rows, tau: f64) -> PyResult<f64> {
    core::objective(&game.inner, &pair(pi, phi)?, tau).map_err(err)
}

/// Values, visitation and softmax gradients at a policy pair.
#[pyfunction]
#[pyo3(signature = (game, pi, phi, tau=0.0))]
fn evaluate<'py>(py: Python<'py>, game: &PyGame, pi: Rows, phi: Rows, tau: f64) -> PyResult<Bound<'py, PyDict>> {
    let ev = core::evaluate(&game.inner, &pair(pi, phi)?, tau).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", ev.v_tau)?;
    d.set_item("j", ev.j_tau)?;
    d.set_item("visitation", ev.d_rho)?;
    d.set_item("grad_theta", rows(&ev.grad_theta))?;
    d.set_item("grad_psi", rows(&ev.grad_psi))?;
    Ok(d)
}

/// Regularized (tau > 0) or exact (tau = 0) equilibrium by Shapley iteration.
#[pyfunction]
#[pyo3(signature = (game, tau=0.0, tol=DEFAULT_ORACLE_TOL))]
fn equilibrium<'py>(py: Python<'py>, game: &PyGame, tau: f64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let sol = core::shapley_solve(&game.inner, tau, tol).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pi", rows(sol.pi_star.probs()))?;
    d.set_item("phi", rows(sol.phi_star.probs()))?;
    d.set_item("value", sol.value_vector)?;
    d.set_item("j", sol.j_star)?;
    d.set_item("duality_gap", sol.duality_gap)?;
    d.set_item("iterations", sol.iterations)?;
    Ok(d)
}

/// Best response of the min player to `pi`: `(policy, J)`.
#[pyfunction]
#[pyo3(signature = (game, pi, tau=0.0, tol=DEFAULT_ORACLE_TOL))]
fn best_response_min(game: &PyGame, pi: Rows, tau: f64, tol: f64) -> PyResult<(Rows, f64)> {
    let br = core::best_response_min(&game.inner, &policy(pi)?, tau, tol).map_err(err)?;
    Ok((rows(br.policy.probs()), br.j_value))
}

/// Best response of the max player to `phi`: `(policy, J)`.
#[pyfunction]
#[pyo3(signature = (game, phi, tau=0.0, tol=DEFAULT_ORACLE_TOL))]
fn best_response_max(game: &PyGame, phi: Rows, tau: f64, tol: f64) -> PyResult<(Rows, f64)> {
    let br = core::best_response_max(&game.inner, &policy(phi)?, tau, tol).map_err(err)?;
    Ok((rows(br.policy.probs()), br.j_value))
}

#[pyfunction]
#[pyo3(signature = (game, pi, phi, tau=0.0, tol=DEFAULT_ORACLE_TOL))]
fn duality_gap(game: &PyGame, pi: Rows, phi: Rows, tau: f64, tol: f64) -> PyResult<f64> {
    core::duality_gap(&game.inner, &policy(pi)?, &policy(phi)?, tau, tol).map_err(err)
}

fn record_dict<'py>(py: Python<'py>, r: &IterateRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("k", r.k)?;
    d.set_item("tau", r.tau)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("beta", r.beta)?;
    d.set_item("delta_pi", r.delta_pi)?;
    d.set_item("delta_phi", r.delta_phi)?;
    d.set_item("composite", r.composite)?;
    d.set_item("gap_max_unreg", r.gap_max_unreg)?;
    d.set_item("gap_min_unreg", r.gap_min_unreg)?;
    d.set_item("min_pi", r.min_pi)?;
    d.set_item("min_phi", r.min_phi)?;
    d.set_item("grad_theta_norm", r.grad_theta_norm)?;
    d.set_item("grad_psi_norm", r.grad_psi_norm)?;
    d.set_item("dist_to_ne", r.dist_to_ne)?;
    d.set_item("avg_gap_max_unreg", r.avg_gap_max_unreg)?;
    d.set_item("avg_gap_min_unreg", r.avg_gap_min_unreg)?;
    Ok(d)
}

/// Outcome of a GDA run.
#[pyclass(name = "RunResult", module = "regmg", frozen)]
struct PyRunResult {
    inner: core::RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn termination(&self) -> &'static str {
        match self.inner.termination {
            core::Termination::Completed => "completed",
            core::Termination::MaxIters => "max_iters",
            core::Termination::Diverged => "diverged",
        }
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.wall_iterations
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// Final softmax policies `(pi, phi)`.
    fn policies(&self) -> PyResult<(Rows, Rows)> {
        let p = core::softmax_policies(&self.inner.params_final).map_err(err)?;
        Ok((rows(p.pi.probs()), rows(p.phi.probs())))
    }

    /// Equal-weight averaged policies, if averaging was on.
    fn averaged_policies(&self) -> Option<(Rows, Rows)> {
        self.inner
            .averaged
            .as_ref()
            .map(|p| (rows(p.pi.probs()), rows(p.phi.probs())))
    }

    /// Records carrying oracle metrics (every `log_every`-th iterate plus the endpoints).
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .log
            .iter()
            .filter(|r| r.gap_max_unreg.is_some() || r.delta_pi.is_some())
            .map(|r| record_dict(py, r))
            .collect()
    }

    fn last<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        record_dict(py, self.inner.last())
    }

    /// `(tau, K_t, stopped_by_rule)` per Algorithm-1 stage.
    fn stages(&self) -> Vec<(f64, usize, bool)> {
        self.inner
            .stages
            .iter()
            .map(|s| (s.tau, s.iterations, s.stopped_by_rule))
            .collect()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        core::write_csv(&self.inner.log, path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(termination={}, iterations={}, gap={:?})",
            self.termination(),
            self.inner.wall_iterations,
            self.inner.last().nash_gap()
        )
    }
}

fn run_opts(log_every: usize, tol: f64, average: bool) -> RunOptions<'static> {
    RunOptions {
        log_every,
        oracle_tol: tol,
        average,
        ..Default::default()
    }
}

/// Single-loop GDA with `x_k = x0 / (k + h)^{exp}` schedules.
#[pyfunction]
#[pyo3(signature = (game, iters=50_000, alpha0=1e-3, beta0=1e-2, tau0=1.0,
    alpha_exp=0.0, beta_exp=0.0, tau_exp=1.0/3.0, h=1.0, log_every=100,
    tol=DEFAULT_ORACLE_TOL, average=false))]
#[allow(clippy::too_many_arguments)]
fn run_diminishing(
    py: Python<'_>,
    game: &PyGame,
    iters: usize,
    alpha0: f64,
    beta0: f64,
    tau0: f64,
    alpha_exp: f64,
    beta_exp: f64,
    tau_exp: f64,
    h: f64,
    log_every: usize,
    tol: f64,
    average: bool,
) -> PyResult<PyRunResult> {
    let sched = core::Schedule::polynomial(alpha0, beta0, tau0, (alpha_exp, beta_exp, tau_exp), h);
    let inner = py
        .detach(|| core::run_algorithm2(&game.inner, &sched, iters, &mut run_opts(log_every, tol, average)))
        .map_err(err)?;
    Ok(PyRunResult { inner })
}

/// GDA at a fixed regularization weight, from uniform policies.
#[pyfunction]
#[pyo3(signature = (game, tau, alpha, beta, iters, log_every=50, tol=DEFAULT_ORACLE_TOL))]
#[allow(clippy::too_many_arguments)]
fn run_fixed(
    py: Python<'_>,
    game: &PyGame,
    tau: f64,
    alpha: f64,
    beta: f64,
    iters: usize,
    log_every: usize,
    tol: f64,
) -> PyResult<PyRunResult> {
    let inner = py
        .detach(|| {
            core::run_fixed_tau(&game.inner, None, tau, alpha, beta, iters, &mut run_opts(log_every, tol, false))
        })
        .map_err(err)?;
    Ok(PyRunResult { inner })
}

/// Unregularized GDA.
#[pyfunction]
#[pyo3(signature = (game, alpha=1e-3, beta=1e-2, iters=50_000, average=true, log_every=100, tol=DEFAULT_ORACLE_TOL))]
#[allow(clippy::too_many_arguments)]
fn run_vanilla(
    py: Python<'_>,
    game: &PyGame,
    alpha: f64,
    beta: f64,
    iters: usize,
    average: bool,
    log_every: usize,
    tol: f64,
) -> PyResult<PyRunResult> {
    let inner = py
        .detach(|| {
            let mut opts = run_opts(log_every, tol, average);
            opts.deltas = false;
            core::run_vanilla_gda(&game.inner, alpha, beta, iters, average, &mut opts)
        })
        .map_err(err)?;
    Ok(PyRunResult { inner })
}

/// Nested-loop scheme with `tau_t = tau0 * eta^t` and halving inner stops.
#[pyfunction]
#[pyo3(signature = (game, tau0, eta, outer=8, alpha_base=1e-2, beta_base=1e-2, inner_cap=100_000, tol=DEFAULT_ORACLE_TOL))]
#[allow(clippy::too_many_arguments)]
fn run_nested(
    py: Python<'_>,
    game: &PyGame,
    tau0: f64,
    eta: f64,
    outer: usize,
    alpha_base: f64,
    beta_base: f64,
    inner_cap: usize,
    tol: f64,
) -> PyResult<PyRunResult> {
    let cfg = Alg1Options {
        tau0,
        eta,
        outer_iters: outer,
        step_rule: StepRule::Scaled { alpha_base, beta_base },
        inner_stop: InnerStop::Halving,
        inner_cap,
        max_total_iters: None,
    };
    let inner = py
        .detach(|| core::run_algorithm1(&game.inner, &cfg, &mut run_opts(0, tol, false)))
        .map_err(err)?;
    Ok(PyRunResult { inner })
}

/// Runs the lemma suites; returns `{suite: (violations, checks)}` and the overall verdict.
#[pyfunction]
#[pyo3(signature = (trials=25, seed=7, tol=1e-8, points=3))]
fn verify_lemmas<'py>(
    py: Python<'py>,
    trials: usize,
    seed: u64,
    tol: f64,
    points: usize,
) -> PyResult<(bool, Bound<'py, PyDict>)> {
    let opts = core::LemmaOptions {
        trials,
        seed,
        tol,
        include_builtins: true,
        points,
    };
    let rep = py.detach(|| core::verify_lemmas(&opts)).map_err(err)?;
    let d = PyDict::new(py);
    for s in &rep.suites {
        d.set_item(s.name, (s.violations, s.checks))?;
    }
    Ok((rep.passed(), d))
}

#[pymodule]
#[pyo3(name = "regmg")]
fn regmg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RegmgError", m.py().get_type::<RegmgError>())?;
    m.add("PRNG_NAME", library::PRNG_NAME)?;
    m.add_class::<PyGame>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(uniform_policies, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(best_response_min, m)?)?;
    m.add_function(wrap_pyfunction!(best_response_max, m)?)?;
    m.add_function(wrap_pyfunction!(duality_gap, m)?)?;
    m.add_function(wrap_pyfunction!(run_diminishing, m)?)?;
    m.add_function(wrap_pyfunction!(run_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(run_vanilla, m)?)?;
    m.add_function(wrap_pyfunction!(run_nested, m)?)?;
    m.add_function(wrap_pyfunction!(verify_lemmas, m)?)?;
    Ok(())
}
