//! Built-in benchmark games and seeded random game generators.
//!
//! Random games draw from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`),
//! which produces the same stream on every platform, so a seed pins the game
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{MarkovGame, Policy};

/// Name of the generator PRNG, echoed in run summaries.
pub const PRNG_NAME: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64)";

/// Minimum gap between the dominant diagonal and the other entries in
/// `random_mixed_2x2` reward matrices.
pub const DOMINANCE_MARGIN: f64 = 0.5;

// Shared 2-state, 2x2-action kernel: P[s][a][b][s'].
const PAPER_TRANSITION: [[[[f64; 2]; 2]; 2]; 2] = [
    [[[0.2, 0.8], [0.5, 0.5]], [[0.5, 0.5], [0.1, 0.9]]],
    [[[0.3, 0.7], [0.2, 0.8]], [[0.6, 0.4], [0.2, 0.8]]],
];

fn paper_game(reward: [[[f64; 2]; 2]; 2]) -> MarkovGame {
    let transition: Vec<f64> = PAPER_TRANSITION
        .iter()
        .flatten()
        .flatten()
        .flatten()
        .copied()
        .collect();
    let reward: Vec<f64> = reward.iter().flatten().flatten().copied().collect();
    MarkovGame::new(2, 2, 2, transition, reward, 0.9, vec![0.5, 0.5])
        .expect("built-in game is valid")
}

/// Completely mixed 2-state benchmark game.
pub fn paper_game_mixed() -> MarkovGame {
    paper_game([[[1.0, 2.0], [2.0, 1.0]], [[6.0, 4.0], [3.0, 10.0]]])
}

/// Benchmark game with a pure equilibrium (max plays action 1, min plays
/// action 0 in both states).
pub fn paper_game_deterministic() -> MarkovGame {
    paper_game([[[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 4.0]]])
}

/// Tabulated reference equilibrium for the mixed game, rounded to three
/// decimals: `(pi, phi)`.
pub fn paper_mixed_reference_ne() -> (Policy, Policy) {
    (
        Policy::from_rows(&[vec![0.812, 0.188], vec![0.837, 0.163]]).unwrap(),
        Policy::from_rows(&[vec![0.880, 0.120], vec![0.597, 0.403]]).unwrap(),
    )
}

/// Pure equilibrium of the deterministic game.
pub fn paper_deterministic_reference_ne() -> (Policy, Policy) {
    (
        Policy::deterministic(&[1, 1], 2),
        Policy::deterministic(&[0, 0], 2),
    )
}

/// Resolves `builtin:mixed` / `builtin:deterministic` (or the bare names).
pub fn builtin(name: &str) -> Option<MarkovGame> {
    match name.strip_prefix("builtin:").unwrap_or(name) {
        "mixed" => Some(paper_game_mixed()),
        "deterministic" => Some(paper_game_deterministic()),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    PaperMixed,
    PaperDeterministic,
    /// 2x2 stage rewards with a dominant diagonal or anti-diagonal.
    RandomMixed2x2,
    /// Rewards uniform in `[0, 1]`, no structure.
    RandomGeneral,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_mixed" => Ok(GeneratorKind::PaperMixed),
            "paper_deterministic" => Ok(GeneratorKind::PaperDeterministic),
            "random_mixed_2x2" | "mixed" => Ok(GeneratorKind::RandomMixed2x2),
            "random_general" | "general" => Ok(GeneratorKind::RandomGeneral),
            other => Err(Error::InvalidParameter(format!(
                "unknown generator kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub seed: u64,
    pub n_states: usize,
    /// Action count for both players (`random_general` only; 2x2 kinds
    /// ignore it).
    pub n_actions: usize,
    pub gamma: Option<f64>,
    pub rho: Option<Vec<f64>>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, seed: u64, n_states: usize, n_actions: usize) -> Self {
        GeneratorSpec {
            kind,
            seed,
            n_states,
            n_actions,
            gamma: None,
            rho: None,
        }
    }
}

/// Builds a game from a generator spec. Output is a pure function of the spec.
pub fn generate(spec: &GeneratorSpec) -> Result<MarkovGame> {
    let base = match spec.kind {
        GeneratorKind::PaperMixed => paper_game_mixed(),
        GeneratorKind::PaperDeterministic => paper_game_deterministic(),
        GeneratorKind::RandomMixed2x2 => random_game(spec, 2, true)?,
        GeneratorKind::RandomGeneral => random_game(spec, spec.n_actions, false)?,
    };
    let game = match spec.gamma {
        Some(g) => base.with_gamma(g)?,
        None => base,
    };
    match &spec.rho {
        Some(rho) => game.with_rho(rho.clone()),
        None => Ok(game),
    }
}

fn random_game(spec: &GeneratorSpec, n_actions: usize, mixed: bool) -> Result<MarkovGame> {
    let ns = spec.n_states;
    if ns == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter(
            "generator needs at least one state and one action".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let na = n_actions;

    let mut reward = Vec::with_capacity(ns * na * na);
    for _ in 0..ns {
        if mixed {
            reward.extend(dominant_2x2(&mut rng));
        } else {
            reward.extend((0..na * na).map(|_| rng.random::<f64>()));
        }
    }

    let mut transition = Vec::with_capacity(ns * na * na * ns);
    for _ in 0..ns * na * na {
        let draws: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = draws.iter().sum();
        let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
        // push rounding residue into the largest entry
        let residue = 1.0 - row.iter().sum::<f64>();
        let imax = row
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap();
        row[imax] += residue;
        transition.extend(row);
    }

    let gamma = spec.gamma.unwrap_or(0.9);
    let rho = vec![1.0 / ns as f64; ns];
    MarkovGame::new(ns, na, na, transition, reward, gamma, rho)
}

/// 2x2 matrix in `[0, 1]` whose diagonal (or anti-diagonal) entries exceed
/// every other entry by at least `DOMINANCE_MARGIN`; such a matrix game has
/// no pure saddle point.
fn dominant_2x2(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let span = 1.0 - DOMINANCE_MARGIN;
    let off = [rng.random::<f64>() * span, rng.random::<f64>() * span];
    let floor = off[0].max(off[1]) + DOMINANCE_MARGIN;
    let hi = [
        floor + rng.random::<f64>() * (1.0 - floor),
        floor + rng.random::<f64>() * (1.0 - floor),
    ];
    if rng.random::<bool>() {
        [hi[0], off[0], off[1], hi[1]]
    } else {
        [off[0], hi[0], hi[1], off[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_game_tensors() {
        let g = paper_game_mixed();
        assert_eq!(g.gamma(), 0.9);
        assert_eq!(g.rho(), &[0.5, 0.5]);
        let r1: Vec<f64> = g.reward_matrix(0).as_slice().to_vec();
        let r2: Vec<f64> = g.reward_matrix(1).as_slice().to_vec();
        assert_eq!(r1, vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(r2, vec![6.0, 4.0, 3.0, 10.0]);
        let expect_s1_s1 = [[0.2, 0.5], [0.5, 0.1]];
        let expect_s2_s2 = [[0.7, 0.8], [0.4, 0.8]];
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(g.transition_row(0, a, b)[0], expect_s1_s1[a][b]);
                assert_eq!(g.transition_row(1, a, b)[1], expect_s2_s2[a][b]);
                for s in 0..2 {
                    let row = g.transition_row(s, a, b);
                    assert_eq!(row[0] + row[1], 1.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_game_has_dominance() {
        let g = paper_game_deterministic();
        for s in 0..2 {
            let r = g.reward_matrix(s);
            for b in 0..2 {
                assert!(r.get(1, b) > r.get(0, b));
            }
            for a in 0..2 {
                assert!(r.get(a, 0) < r.get(a, 1));
            }
        }
        assert_eq!(g.transition_tensor(), paper_game_mixed().transition_tensor());
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        for kind in [GeneratorKind::RandomMixed2x2, GeneratorKind::RandomGeneral] {
            let spec = GeneratorSpec::new(kind, 42, 3, 3);
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
            let other = GeneratorSpec::new(kind, 43, 3, 3);
            assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
        }
    }

    #[test]
    fn mixed_generator_respects_margin() {
        for seed in 0..50 {
            let g = generate(&GeneratorSpec::new(GeneratorKind::RandomMixed2x2, seed, 2, 2)).unwrap();
            assert!(g.rewards_in_unit_interval());
            for s in 0..2 {
                let r = g.reward_matrix(s);
                let diag = [r.get(0, 0), r.get(1, 1)];
                let anti = [r.get(0, 1), r.get(1, 0)];
                let (hi, lo) = if diag[0] > anti[0] { (diag, anti) } else { (anti, diag) };
                let gap = hi[0].min(hi[1]) - lo[0].max(lo[1]);
                assert!(gap >= DOMINANCE_MARGIN - 1e-12, "seed {seed} gap {gap}");
            }
        }
    }

    #[test]
    fn overrides_apply() {
        let mut spec = GeneratorSpec::new(GeneratorKind::RandomGeneral, 1, 2, 2);
        spec.gamma = Some(0.5);
        spec.rho = Some(vec![0.3, 0.7]);
        let g = generate(&spec).unwrap();
        assert_eq!(g.gamma(), 0.5);
        assert_eq!(g.rho(), &[0.3, 0.7]);
        assert!(generate(&GeneratorSpec::new(GeneratorKind::RandomGeneral, 1, 0, 2)).is_err());
    }

    #[test]
    fn builtin_names() {
        assert_eq!(builtin("builtin:mixed"), Some(paper_game_mixed()));
        assert_eq!(builtin("deterministic"), Some(paper_game_deterministic()));
        assert_eq!(builtin("builtin:nope"), None);
    }
}
