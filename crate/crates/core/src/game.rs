//! Markov game model, dense tables, softmax policies and entropies.

use crate::error::{Error, Result};

pub(crate) const STOCHASTIC_TOL: f64 = 1e-12;

/// Dense row-major table of `rows x cols` reals. Used for logits, policies and
/// gradient tables indexed by `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Table {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "table of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Table { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Table {
            rows: n,
            cols: m,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Table) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self + scale * other`, entrywise.
    pub fn axpy(&self, scale: f64, other: &Table) -> Table {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x + scale * y)
            .collect();
        Table {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Two-player zero-sum Markov game with dense transition and reward tensors.
///
/// The max player picks `a` from `n_actions_max` actions, the min player
/// picks `b` from `n_actions_min`; `reward(s, a, b)` is paid to the max player.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    n_states: usize,
    n_actions_max: usize,
    n_actions_min: usize,
    // index ((s * A + a) * B + b) * S + s'
    transition: Vec<f64>,
    // index (s * A + a) * B + b
    reward: Vec<f64>,
    gamma: f64,
    rho: Vec<f64>,
}

impl MarkovGame {
    /// Builds a game from flat tensors, validating every invariant.
    pub fn new(
        n_states: usize,
        n_actions_max: usize,
        n_actions_min: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions_max == 0 || n_actions_min == 0 {
            return Err(Error::InvalidParameter(
                "state and action counts must be positive".into(),
            ));
        }
        let (s, a, b) = (n_states, n_actions_max, n_actions_min);
        if transition.len() != s * a * b * s {
            return Err(Error::DimensionMismatch(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                s * a * b * s
            )));
        }
        if reward.len() != s * a * b {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                s * a * b
            )));
        }
        if rho.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "rho has {} entries, expected {s}",
                rho.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reward entry {i} is not finite"
            )));
        }
        let game = MarkovGame {
            n_states,
            n_actions_max,
            n_actions_min,
            transition,
            reward,
            gamma,
            rho,
        };
        game.validate()?;
        Ok(game)
    }

    /// Builds a game from nested arrays `transition[s][a][b][s']` and
    /// `reward[s][a][b]`.
    pub fn from_nested(
        transition: &[Vec<Vec<Vec<f64>>>],
        reward: &[Vec<Vec<f64>>],
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let s = reward.len();
        let a = reward.first().map_or(0, Vec::len);
        let b = reward
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        let mut flat_r = Vec::with_capacity(s * a * b);
        for (si, rs) in reward.iter().enumerate() {
            if rs.len() != a {
                return Err(Error::DimensionMismatch(format!(
                    "reward[{si}] has {} rows, expected {a}",
                    rs.len()
                )));
            }
            for (ai, ra) in rs.iter().enumerate() {
                if ra.len() != b {
                    return Err(Error::DimensionMismatch(format!(
                        "reward[{si}][{ai}] has {} entries, expected {b}",
                        ra.len()
                    )));
                }
                flat_r.extend_from_slice(ra);
            }
        }
        if transition.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "transition has {} states, reward has {s}",
                transition.len()
            )));
        }
        let mut flat_p = Vec::with_capacity(s * a * b * s);
        for (si, ps) in transition.iter().enumerate() {
            if ps.len() != a {
                return Err(Error::DimensionMismatch(format!(
                    "transition[{si}] has {} rows, expected {a}",
                    ps.len()
                )));
            }
            for (ai, pa) in ps.iter().enumerate() {
                if pa.len() != b {
                    return Err(Error::DimensionMismatch(format!(
                        "transition[{si}][{ai}] has {} entries, expected {b}",
                        pa.len()
                    )));
                }
                for (bi, pb) in pa.iter().enumerate() {
                    if pb.len() != s {
                        return Err(Error::DimensionMismatch(format!(
                            "transition[{si}][{ai}][{bi}] has {} entries, expected {s}",
                            pb.len()
                        )));
                    }
                    flat_p.extend_from_slice(pb);
                }
            }
        }
        MarkovGame::new(s, a, b, flat_p, flat_r, gamma, rho)
    }

    fn validate(&self) -> Result<()> {
        let (ns, na, nb) = (self.n_states, self.n_actions_max, self.n_actions_min);
        for s in 0..ns {
            for a in 0..na {
                for b in 0..nb {
                    let row = self.transition_row(s, a, b);
                    for (next, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) || !p.is_finite() {
                            return Err(Error::NegativeProbability {
                                s,
                                a,
                                b,
                                next,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > STOCHASTIC_TOL {
                        return Err(Error::Stochasticity { s, a, b, sum });
                    }
                }
            }
        }
        if let Some(i) = self.rho.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "rho[{i}] = {} is negative or not finite",
                self.rho[i]
            )));
        }
        let sum: f64 = self.rho.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!(
                "rho sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions_max(&self) -> usize {
        self.n_actions_max
    }

    pub fn n_actions_min(&self) -> usize {
        self.n_actions_min
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_tensor(&self) -> &[f64] {
        &self.reward
    }

    /// Next-state distribution `P(. | s, a, b)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let ns = self.n_states;
        let start = ((s * self.n_actions_max + a) * self.n_actions_min + b) * ns;
        &self.transition[start..start + ns]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, b: usize) -> f64 {
        self.reward[(s * self.n_actions_max + a) * self.n_actions_min + b]
    }

    /// Reward matrix `r(s, ., .)` as an `A x B` table.
    pub fn reward_matrix(&self, s: usize) -> Table {
        let (na, nb) = (self.n_actions_max, self.n_actions_min);
        let start = s * na * nb;
        Table {
            rows: na,
            cols: nb,
            data: self.reward[start..start + na * nb].to_vec(),
        }
    }

    pub fn rho_min(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Strictly positive initial distribution.
    pub fn rho_is_positive(&self) -> bool {
        self.rho_min() > 0.0
    }

    pub fn reward_min(&self) -> f64 {
        self.reward.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn reward_max(&self) -> f64 {
        self.reward.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every reward lies in `[0, 1]`, the range the Lipschitz and
    /// smoothness constants are derived for.
    pub fn rewards_in_unit_interval(&self) -> bool {
        self.reward_min() >= 0.0 && self.reward_max() <= 1.0
    }

    /// Affinely rescales rewards into `[0, 1]`. A constant reward maps to 0.
    pub fn normalize_rewards(&self) -> MarkovGame {
        let lo = self.reward_min();
        let span = self.reward_max() - lo;
        let mut out = self.clone();
        for r in &mut out.reward {
            *r = if span > 0.0 { (*r - lo) / span } else { 0.0 };
        }
        out
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<MarkovGame> {
        MarkovGame::new(
            self.n_states,
            self.n_actions_max,
            self.n_actions_min,
            self.transition.clone(),
            self.reward.clone(),
            gamma,
            self.rho.clone(),
        )
    }

    pub fn with_rho(&self, rho: Vec<f64>) -> Result<MarkovGame> {
        MarkovGame::new(
            self.n_states,
            self.n_actions_max,
            self.n_actions_min,
            self.transition.clone(),
            self.reward.clone(),
            self.gamma,
            rho,
        )
    }
}

/// Softmax logit tables for both players.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: Table,
    pub psi: Table,
}

impl PolicyParams {
    /// All-zero logits, i.e. uniform policies.
    pub fn zeros(game: &MarkovGame) -> Self {
        PolicyParams {
            theta: Table::zeros(game.n_states(), game.n_actions_max()),
            psi: Table::zeros(game.n_states(), game.n_actions_min()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.psi.is_finite()
    }

    /// Logits reproducing a policy pair (entrywise log). Requires positive
    /// entries.
    pub fn from_pair(pair: &PolicyPair) -> Result<Self> {
        let theta = log_table(&pair.pi, "max")?;
        let psi = log_table(&pair.phi, "min")?;
        Ok(PolicyParams { theta, psi })
    }
}

fn log_table(p: &Policy, player: &'static str) -> Result<Table> {
    for s in 0..p.n_states() {
        if p.row(s).iter().any(|&x| x <= 0.0) {
            return Err(Error::LogOfZero { player, state: s });
        }
    }
    Ok(p.log_probs.clone())
}

/// Row-stochastic policy matrix with cached log-probabilities.
///
/// When built from logits the logs are `theta - logsumexp(theta)`, which stays
/// accurate where the probability itself underflows. Zero entries carry
/// `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Table,
    log_probs: Table,
}

impl Policy {
    pub fn from_logits(logits: &Table) -> Result<Self> {
        if !logits.is_finite() {
            return Err(Error::InvalidParameter("non-finite logits".into()));
        }
        let mut probs = Table::zeros(logits.rows(), logits.cols());
        let mut log_probs = Table::zeros(logits.rows(), logits.cols());
        for s in 0..logits.rows() {
            let row = logits.row(s);
            let lse = logsumexp(row);
            let mut sum = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let lp = z - lse;
                log_probs.set(s, j, lp);
                let p = lp.exp();
                probs.set(s, j, p);
                sum += p;
            }
            for p in probs.row_mut(s) {
                *p /= sum;
            }
        }
        Ok(Policy { probs, log_probs })
    }

    /// Wraps an explicit stochastic matrix. Rows must be probability vectors
    /// within `1e-12`.
    pub fn from_probs(probs: Table) -> Result<Self> {
        for s in 0..probs.rows() {
            let row = probs.row(s);
            if let Some(j) = row.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "policy entry ({s},{j}) = {} is negative or not finite",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "policy row {s} sums to {sum}"
                )));
            }
        }
        let mut log_probs = Table::zeros(probs.rows(), probs.cols());
        for (lp, &p) in log_probs.as_mut_slice().iter_mut().zip(probs.as_slice()) {
            *lp = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        }
        Ok(Policy { probs, log_probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Policy::from_probs(Table::from_rows(rows)?)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Policy {
            probs: Table::filled(n_states, n_actions, p),
            log_probs: Table::filled(n_states, n_actions, p.ln()),
        }
    }

    /// Deterministic policy playing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Table::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs.set(s, a, 1.0);
        }
        Policy::from_probs(probs).expect("one-hot rows are stochastic")
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn log_probs(&self) -> &Table {
        &self.log_probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.cols()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.min_entry()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.min_entry() > 0.0
    }

    /// Entropy of the row at state `s`, using the cached logs.
    pub fn entropy(&self, s: usize) -> f64 {
        self.probs
            .row(s)
            .iter()
            .zip(self.log_probs.row(s))
            .map(|(&p, &lp)| if p > 0.0 { -p * lp } else { 0.0 })
            .sum()
    }

    /// Largest entrywise distance to another policy.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs.max_abs_diff(&other.probs)
    }

    /// Squared Euclidean distance over all entries.
    pub fn sq_dist(&self, other: &Policy) -> f64 {
        self.probs
            .as_slice()
            .iter()
            .zip(other.probs.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }
}

/// Policy pair `(pi, phi)` for the max and min players.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub pi: Policy,
    pub phi: Policy,
}

impl PolicyPair {
    pub fn new(pi: Policy, phi: Policy) -> Self {
        PolicyPair { pi, phi }
    }

    pub fn uniform(game: &MarkovGame) -> Self {
        PolicyPair {
            pi: Policy::uniform(game.n_states(), game.n_actions_max()),
            phi: Policy::uniform(game.n_states(), game.n_actions_min()),
        }
    }

    pub fn min_pi_entry(&self) -> f64 {
        self.pi.min_entry()
    }

    pub fn min_phi_entry(&self) -> f64 {
        self.phi.min_entry()
    }

    pub(crate) fn check_shape(&self, game: &MarkovGame) -> Result<()> {
        let ok = self.pi.n_states() == game.n_states()
            && self.phi.n_states() == game.n_states()
            && self.pi.n_actions() == game.n_actions_max()
            && self.phi.n_actions() == game.n_actions_min();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "policy pair shapes {}x{} / {}x{} do not match game {}x{}x{}",
                self.pi.n_states(),
                self.pi.n_actions(),
                self.phi.n_states(),
                self.phi.n_actions(),
                game.n_states(),
                game.n_actions_max(),
                game.n_actions_min()
            )))
        }
    }
}

/// Softmax policies induced by the logit tables.
pub fn softmax_policies(params: &PolicyParams) -> Result<PolicyPair> {
    Ok(PolicyPair {
        pi: Policy::from_logits(&params.theta)?,
        phi: Policy::from_logits(&params.psi)?,
    })
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of a vector with max subtraction.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Shannon entropy `-sum p log p` of a probability vector, with `0 log 0 = 0`.
pub fn policy_entropy(row: &[f64]) -> Result<f64> {
    if let Some(i) = row.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "entry {i} = {} is negative or not finite",
            row[i]
        )));
    }
    Ok(row
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Independent scalar softmax for cross-checking.
    fn softmax_scalar(x: &[f64]) -> Vec<f64> {
        let denom: f64 = x.iter().map(|v| v.exp()).sum();
        x.iter().map(|v| v.exp() / denom).collect()
    }

    fn params(theta: Vec<Vec<f64>>, psi: Vec<Vec<f64>>) -> PolicyParams {
        PolicyParams {
            theta: Table::from_rows(&theta).unwrap(),
            psi: Table::from_rows(&psi).unwrap(),
        }
    }

    #[test]
    fn zero_logits_give_uniform() {
        let p = params(vec![vec![0.0, 0.0]; 3], vec![vec![0.0; 3]; 3]);
        let pair = softmax_policies(&p).unwrap();
        for s in 0..3 {
            assert_eq!(pair.pi.row(s), &[0.5, 0.5]);
            for &q in pair.phi.row(s) {
                assert_abs_diff_eq!(q, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for c in [-40.0, -1.5, 0.0, 7.0, 49.0] {
            let p = params(vec![vec![c, c]], vec![vec![c, c]]);
            let pair = softmax_policies(&p).unwrap();
            assert_abs_diff_eq!(pair.pi.prob(0, 0), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(pair.pi.prob(0, 1), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_log3_gives_three_quarters() {
        let p = params(vec![vec![3f64.ln(), 0.0]], vec![vec![0.0, 0.0]]);
        let pair = softmax_policies(&p).unwrap();
        let expect = softmax_scalar(&[3f64.ln(), 0.0]);
        assert_abs_diff_eq!(pair.pi.prob(0, 0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(pair.pi.prob(0, 1), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pair.pi.prob(0, 0), expect[0], epsilon = 1e-15);
    }

    #[test]
    fn non_finite_logits_rejected() {
        let p = params(vec![vec![f64::NAN, 0.0]], vec![vec![0.0, 0.0]]);
        assert!(matches!(
            softmax_policies(&p),
            Err(Error::InvalidParameter(_))
        ));
        let p = params(vec![vec![0.0, 0.0]], vec![vec![f64::INFINITY, 0.0]]);
        assert!(softmax_policies(&p).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(policy_entropy(&[0.5, 0.5]).unwrap(), 2f64.ln());
        assert_eq!(policy_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        let h = policy_entropy(&[0.75, 0.25]).unwrap();
        let expect = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert_abs_diff_eq!(h, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.5623, epsilon = 1e-4);
        assert!(matches!(
            policy_entropy(&[1.5, -0.5]),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn extreme_logits_keep_logs_finite() {
        let p = params(vec![vec![800.0, 0.0]], vec![vec![0.0, -900.0]]);
        let pair = softmax_policies(&p).unwrap();
        assert_eq!(pair.pi.prob(0, 1), 0.0);
        assert_abs_diff_eq!(pair.pi.log_probs().get(0, 1), -800.0, epsilon = 1e-9);
        assert!(pair.phi.log_probs().get(0, 1).is_finite());
    }

    #[test]
    fn validation_names_offending_index() {
        let mut p = vec![0.5; 2 * 2 * 2 * 2];
        // P(.|s=1,a=0,b=1) sums to 0.9
        let idx = ((1 * 2 + 0) * 2 + 1) * 2;
        p[idx] = 0.4;
        let err = MarkovGame::new(2, 2, 2, p, vec![0.0; 8], 0.9, vec![0.5, 0.5]).unwrap_err();
        match err {
            Error::Stochasticity { s, a, b, sum } => {
                assert_eq!((s, a, b), (1, 0, 1));
                assert_abs_diff_eq!(sum, 0.9, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rho_min_and_reward_range() {
        let g = MarkovGame::new(
            2,
            1,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![-2.0, 5.0],
            0.5,
            vec![0.25, 0.75],
        )
        .unwrap();
        assert_eq!(g.rho_min(), 0.25);
        assert!(g.rho_is_positive());
        assert_eq!((g.reward_min(), g.reward_max()), (-2.0, 5.0));
        assert!(!g.rewards_in_unit_interval());
        let n = g.normalize_rewards();
        assert_eq!(n.reward_tensor(), &[0.0, 1.0]);
        let z = g.with_rho(vec![0.0, 1.0]).unwrap();
        assert!(!z.rho_is_positive());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let theta = Table::from_vec(4, 3, logits.clone()).unwrap();
            let psi = Table::from_vec(3, 4, logits).unwrap();
            let pair = softmax_policies(&PolicyParams { theta, psi }).unwrap();
            for s in 0..4 {
                let sum: f64 = pair.pi.row(s).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(pair.pi.row(s).iter().all(|&p| p > 0.0));
            }
            for s in 0..3 {
                let sum: f64 = pair.phi.row(s).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn entropy_within_bounds(logits in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
            let row = softmax(&logits);
            let h = policy_entropy(&row).unwrap();
            let n = row.len() as f64;
            prop_assert!(h >= 0.0);
            prop_assert!(h <= n.ln() + 1e-12);
        }

        #[test]
        fn entropy_max_at_equal_logits(c in -50.0f64..50.0, n in 1usize..10) {
            let row = softmax(&vec![c; n]);
            let h = policy_entropy(&row).unwrap();
            prop_assert!((h - (n as f64).ln()).abs() <= 1e-12);
        }
    }
}
