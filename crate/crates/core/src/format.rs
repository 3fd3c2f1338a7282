//! On-disk game document: a JSON object with fields `n_states`,
//! `n_actions_max`, `n_actions_min`, `gamma`, `rho`, `reward[s][a][b]` and
//! `transition[s][a][b][s']`. Field order is irrelevant.
//!
//! Doubles are written in shortest round-trip form, so `load_game(save_game(g))`
//! reproduces every tensor bit for bit.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::game::MarkovGame;

#[derive(Debug, Serialize, Deserialize)]
struct GameDocument {
    n_states: usize,
    n_actions_max: usize,
    n_actions_min: usize,
    gamma: f64,
    rho: Vec<f64>,
    reward: Vec<Vec<Vec<f64>>>,
    transition: Vec<Vec<Vec<Vec<f64>>>>,
}

const FIELDS: [&str; 7] = [
    "n_states",
    "n_actions_max",
    "n_actions_min",
    "gamma",
    "rho",
    "reward",
    "transition",
];

/// Parses and validates a game document.
pub fn load_game(text: &str) -> Result<MarkovGame> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("game document must be a JSON object".into()))?;
    for field in FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::MissingField(field.to_string()));
        }
    }
    let doc: GameDocument =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;

    let (s, a, b) = (doc.n_states, doc.n_actions_max, doc.n_actions_min);
    check_len("rho", doc.rho.len(), s)?;
    check_len("reward", doc.reward.len(), s)?;
    check_len("transition", doc.transition.len(), s)?;
    for (si, rs) in doc.reward.iter().enumerate() {
        check_len(&format!("reward[{si}]"), rs.len(), a)?;
        for (ai, ra) in rs.iter().enumerate() {
            check_len(&format!("reward[{si}][{ai}]"), ra.len(), b)?;
        }
    }
    for (si, ps) in doc.transition.iter().enumerate() {
        check_len(&format!("transition[{si}]"), ps.len(), a)?;
        for (ai, pa) in ps.iter().enumerate() {
            check_len(&format!("transition[{si}][{ai}]"), pa.len(), b)?;
            for (bi, pb) in pa.iter().enumerate() {
                check_len(&format!("transition[{si}][{ai}][{bi}]"), pb.len(), s)?;
            }
        }
    }
    MarkovGame::from_nested(&doc.transition, &doc.reward, doc.gamma, doc.rho)
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} has {got} entries, expected {expected}"
        )))
    }
}

/// Serializes a game as a pretty-printed document.
pub fn save_game(game: &MarkovGame) -> String {
    let (ns, na, nb) = (game.n_states(), game.n_actions_max(), game.n_actions_min());
    let reward = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| (0..nb).map(|b| game.reward(s, a, b)).collect())
                .collect()
        })
        .collect();
    let transition = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    (0..nb)
                        .map(|b| game.transition_row(s, a, b).to_vec())
                        .collect()
                })
                .collect()
        })
        .collect();
    let doc = GameDocument {
        n_states: ns,
        n_actions_max: na,
        n_actions_min: nb,
        gamma: game.gamma(),
        rho: game.rho().to_vec(),
        reward,
        transition,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("game document serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{generate, paper_game_mixed, GeneratorKind, GeneratorSpec};

    const MIXED_DOC: &str = r#"{
        "gamma": 0.9,
        "n_states": 2, "n_actions_max": 2, "n_actions_min": 2,
        "rho": [0.5, 0.5],
        "reward": [[[1, 2], [2, 1]], [[6, 4], [3, 10]]],
        "transition": [
            [[[0.2, 0.8], [0.5, 0.5]], [[0.5, 0.5], [0.1, 0.9]]],
            [[[0.3, 0.7], [0.2, 0.8]], [[0.6, 0.4], [0.2, 0.8]]]
        ]
    }"#;

    #[test]
    fn loads_mixed_game_document() {
        let g = load_game(MIXED_DOC).unwrap();
        let p_s1: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| g.transition_row(0, a, b)[0])
            .collect();
        assert_eq!(p_s1, vec![0.2, 0.5, 0.5, 0.1]);
        assert_eq!(g, paper_game_mixed());
    }

    #[test]
    fn bad_row_sum_names_index() {
        let doc = MIXED_DOC.replace("[0.6, 0.4]", "[0.6, 0.3]");
        match load_game(&doc) {
            Err(Error::Stochasticity { s, a, b, .. }) => assert_eq!((s, a, b), (1, 1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_reported() {
        let doc = MIXED_DOC.replace("\"gamma\": 0.9,", "");
        assert_eq!(
            load_game(&doc).unwrap_err(),
            Error::MissingField("gamma".into())
        );
    }

    #[test]
    fn dimension_mismatch_reported() {
        let doc = MIXED_DOC.replace("[[6, 4], [3, 10]]", "[[6, 4], [3]]");
        assert!(matches!(load_game(&doc), Err(Error::DimensionMismatch(m)) if m.contains("reward[1][1]")));
    }

    #[test]
    fn round_trip_random_game_is_exact() {
        for seed in 0..5 {
            let g = generate(&GeneratorSpec {
                kind: GeneratorKind::RandomGeneral,
                seed,
                n_states: 3,
                n_actions: 3,
                gamma: None,
                rho: None,
            })
            .unwrap();
            let back = load_game(&save_game(&g)).unwrap();
            assert_eq!(back.transition_tensor(), g.transition_tensor());
            assert_eq!(back.reward_tensor(), g.reward_tensor());
            assert_eq!(back, g);
        }
    }
}
