//! Convergence metrics and the CSV iterate log.
//!
//! `delta_pi`/`delta_phi` measure distance to the regularized equilibrium at
//! the current weight; the `gap_*_unreg` pair measures the same thing for the
//! original (tau = 0) game using hard best responses.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::best_response::g_tau;
use crate::equilibrium::{shapley_solve, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::evaluation::objective;
use crate::game::{softmax_policies, MarkovGame, PolicyPair, PolicyParams};

/// Default tolerance handed to the equilibrium and best-response oracles.
pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;

pub const CSV_HEADER: [&str; 14] = [
    "k",
    "tau",
    "alpha",
    "beta",
    "delta_pi",
    "delta_phi",
    "composite",
    "gap_max_unreg",
    "gap_min_unreg",
    "min_pi",
    "min_phi",
    "grad_theta_norm",
    "grad_psi_norm",
    "dist_to_ne",
];

/// Extra columns written only for runs that track averaged policies.
pub const CSV_AVERAGE_COLUMNS: [&str; 2] = ["avg_gap_max_unreg", "avg_gap_min_unreg"];

/// One logged iterate. Oracle-backed fields are `None` on iterations skipped
/// by the logging cadence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterateRecord {
    pub k: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta_pi: Option<f64>,
    pub delta_phi: Option<f64>,
    pub composite: Option<f64>,
    pub gap_max_unreg: Option<f64>,
    pub gap_min_unreg: Option<f64>,
    pub min_pi: f64,
    pub min_phi: f64,
    pub grad_theta_norm: f64,
    pub grad_psi_norm: f64,
    pub dist_to_ne: Option<f64>,
    pub avg_gap_max_unreg: Option<f64>,
    pub avg_gap_min_unreg: Option<f64>,
}

impl IterateRecord {
    /// Nash gap of the last iterate: the larger of the two unregularized gaps.
    pub fn nash_gap(&self) -> Option<f64> {
        Some(self.gap_max_unreg?.max(self.gap_min_unreg?))
    }

    pub fn avg_nash_gap(&self) -> Option<f64> {
        Some(self.avg_gap_max_unreg?.max(self.avg_gap_min_unreg?))
    }

    pub fn set_deltas(&mut self, delta_pi: f64, delta_phi: f64) {
        self.delta_pi = Some(delta_pi);
        self.delta_phi = Some(delta_phi);
        self.composite = Some(3.0 * delta_pi + delta_phi);
    }
}

/// Memoized equilibrium solutions keyed by the exact bits of tau.
#[derive(Debug, Clone)]
pub struct EqCache {
    tol: f64,
    solutions: HashMap<u64, EquilibriumSolution>,
}

impl EqCache {
    pub fn new(tol: f64) -> Self {
        EqCache {
            tol,
            solutions: HashMap::new(),
        }
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn insert(&mut self, solution: EquilibriumSolution) {
        self.solutions.insert(solution.tau.to_bits(), solution);
    }

    pub fn get(&mut self, game: &MarkovGame, tau: f64) -> Result<&EquilibriumSolution> {
        let key = tau.to_bits();
        if !self.solutions.contains_key(&key) {
            let sol = shapley_solve(game, tau, self.tol)?;
            self.solutions.insert(key, sol);
        }
        Ok(&self.solutions[&key])
    }
}

/// `(delta_pi, delta_phi)` for the policies encoded by `params` at weight `tau`.
pub fn compute_deltas(
    game: &MarkovGame,
    params: &PolicyParams,
    tau: f64,
    cache: &mut EqCache,
    tol: f64,
) -> Result<(f64, f64)> {
    let pair = softmax_policies(params)?;
    deltas_for_pair(game, &pair, tau, cache, tol)
}

pub fn deltas_for_pair(
    game: &MarkovGame,
    pair: &PolicyPair,
    tau: f64,
    cache: &mut EqCache,
    tol: f64,
) -> Result<(f64, f64)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta metrics need tau > 0, got {tau}"
        )));
    }
    let j_star = cache.get(game, tau)?.j_star;
    let g = g_tau(game, &pair.pi, tau, tol)?;
    let j = objective(game, pair, tau)?;
    Ok((j_star - g, j - g))
}

/// `(gap_max, gap_min)` in the original game; `cache` supplies the tau = 0
/// equilibrium value.
pub fn compute_unregularized_gaps(
    game: &MarkovGame,
    params: &PolicyParams,
    cache: &mut EqCache,
    tol: f64,
) -> Result<(f64, f64)> {
    let pair = softmax_policies(params)?;
    unregularized_gaps_for_pair(game, &pair, cache, tol)
}

pub fn unregularized_gaps_for_pair(
    game: &MarkovGame,
    pair: &PolicyPair,
    cache: &mut EqCache,
    tol: f64,
) -> Result<(f64, f64)> {
    let j_star = cache.get(game, 0.0)?.j_star;
    let g0 = g_tau(game, &pair.pi, 0.0, tol)?;
    let j = objective(game, pair, 0.0)?;
    Ok((j_star - g0, j - g0))
}

/// Consecutive-weight check on `g` at a fixed max policy:
/// `|g_{tau_k}(pi) - g_{tau_k1}(pi)|` against
/// `(tau_k - tau_k1) * max(log|A|, log|B|) + 20 tol`.
/// Returns `(difference, bound, holds)`.
pub fn lemma3_hook(
    game: &MarkovGame,
    pi: &crate::game::Policy,
    tau_k: f64,
    tau_k1: f64,
    tol: f64,
) -> Result<(f64, f64, bool)> {
    let diff = (g_tau(game, pi, tau_k, tol)? - g_tau(game, pi, tau_k1, tol)?).abs();
    let logs = (game.n_actions_max() as f64).ln().max((game.n_actions_min() as f64).ln());
    let bound = (tau_k - tau_k1).abs() * logs + 20.0 * tol;
    Ok((diff, bound, diff <= bound))
}

fn clamp_small_negative(v: f64, clamp_tol: f64) -> f64 {
    if v < 0.0 && v >= -clamp_tol {
        0.0
    } else {
        v
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes the log to `w`. Metric values in `[-clamp_tol, 0)` are written as
/// 0; the composite column is rebuilt from the written deltas so the
/// `3*delta_pi + delta_phi` identity survives the clamp.
pub fn write_csv_to<W: Write>(log: &[IterateRecord], w: W, clamp_tol: f64) -> Result<()> {
    let averaged = log
        .iter()
        .any(|r| r.avg_gap_max_unreg.is_some() || r.avg_gap_min_unreg.is_some());
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };

    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if averaged {
        header.extend(CSV_AVERAGE_COLUMNS);
    }
    wtr.write_record(&header).map_err(io)?;

    let clamp = |v: Option<f64>| v.map(|x| clamp_small_negative(x, clamp_tol));
    for r in log {
        let dpi = clamp(r.delta_pi);
        let dphi = clamp(r.delta_phi);
        let composite = match (r.delta_pi, r.delta_phi, dpi, dphi) {
            (Some(a), Some(b), Some(ca), Some(cb)) if ca != a || cb != b => {
                Some(clamp_small_negative(3.0 * ca + cb, clamp_tol))
            }
            _ => clamp(r.composite),
        };
        let mut row = vec![
            r.k.to_string(),
            fmt_f64(r.tau),
            fmt_f64(r.alpha),
            fmt_f64(r.beta),
            fmt_opt(dpi),
            fmt_opt(dphi),
            fmt_opt(composite),
            fmt_opt(clamp(r.gap_max_unreg)),
            fmt_opt(clamp(r.gap_min_unreg)),
            fmt_f64(r.min_pi),
            fmt_f64(r.min_phi),
            fmt_f64(r.grad_theta_norm),
            fmt_f64(r.grad_psi_norm),
            fmt_opt(r.dist_to_ne),
        ];
        if averaged {
            row.push(fmt_opt(clamp(r.avg_gap_max_unreg)));
            row.push(fmt_opt(clamp(r.avg_gap_min_unreg)));
        }
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Writes the log to `path` with the default clamp (10x the oracle tolerance).
pub fn write_csv(log: &[IterateRecord], path: impl AsRef<Path>) -> Result<()> {
    write_csv_with(log, path, 10.0 * DEFAULT_ORACLE_TOL)
}

pub fn write_csv_with(log: &[IterateRecord], path: impl AsRef<Path>, clamp_tol: f64) -> Result<()> {
    let path = path.as_ref();
    let with_path = |e: Error| match e {
        Error::Io { message, .. } => Error::Io {
            path: path.display().to_string(),
            message,
        },
        other => other,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_csv_to(log, std::io::BufWriter::new(file), clamp_tol).map_err(with_path)
}

/// Parses a log written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<IterateRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(r: R) -> Result<Vec<IterateRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let parse_err = |e: csv::Error| Error::Parse(e.to_string());
    let header = rdr.headers().map_err(parse_err)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < CSV_HEADER.len() || cols[..CSV_HEADER.len()] != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected CSV header: {cols:?}")));
    }
    let averaged = cols.len() == CSV_HEADER.len() + CSV_AVERAGE_COLUMNS.len()
        && cols[CSV_HEADER.len()..] == CSV_AVERAGE_COLUMNS;
    if cols.len() > CSV_HEADER.len() && !averaged {
        return Err(Error::Parse(format!("unexpected CSV header: {cols:?}")));
    }

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(parse_err)?;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| {
                Error::Parse(format!("row {}, column `{}`: {e}", line + 1, cols[i]))
            })
        };
        let req = |i: usize| -> Result<f64> {
            field(i)?.ok_or_else(|| Error::MissingField(format!("{} (row {})", cols[i], line + 1)))
        };
        let k = rec
            .get(0)
            .unwrap_or("")
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("row {}, column `k`: {e}", line + 1)))?;
        out.push(IterateRecord {
            k,
            tau: req(1)?,
            alpha: req(2)?,
            beta: req(3)?,
            delta_pi: field(4)?,
            delta_phi: field(5)?,
            composite: field(6)?,
            gap_max_unreg: field(7)?,
            gap_min_unreg: field(8)?,
            min_pi: req(9)?,
            min_phi: req(10)?,
            grad_theta_norm: req(11)?,
            grad_psi_norm: req(12)?,
            dist_to_ne: field(13)?,
            avg_gap_max_unreg: if averaged { field(14)? } else { None },
            avg_gap_min_unreg: if averaged { field(15)? } else { None },
        });
    }
    Ok(out)
}
