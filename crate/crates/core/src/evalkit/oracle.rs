use std::collections::{BTreeSet, HashMap};

use crate::corpus::STOP_ID;
use crate::{Error, Result};

/// Scores keyed by (selected prefix, candidate id).
pub type ScoreTable = HashMap<(Vec<String>, String), f64>;

/// Full stable sort by descending score then ascending id, cut to `k`.
pub fn oracle_topk(pool_scores: &[(String, f64)], k: usize) -> Vec<String> {
    let mut sorted = pool_scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    sorted.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Stepwise argmax over a precomputed score table. The sentinel is always a candidate and
/// ends the chain when it wins.
pub fn oracle_greedy(table: &ScoreTable, pool: &[String], m_max: usize, score_floor: Option<f64>) -> Result<Vec<String>> {
    let mut remaining: BTreeSet<String> = pool.iter().filter(|id| *id != STOP_ID).cloned().collect();
    remaining.insert(STOP_ID.to_string());
    let mut selected: Vec<String> = Vec::new();
    while selected.len() < m_max {
        let mut scored = Vec::with_capacity(remaining.len());
        for cand in &remaining {
            let key = (selected.clone(), cand.clone());
            let s = *table.get(&key).ok_or_else(|| Error::MissingScore {
                prefix: selected.clone(),
                candidate: cand.clone(),
            })?;
            scored.push((cand.clone(), s));
        }
        let best = oracle_topk(&scored, 1).remove(0);
        let best_score = scored.iter().find(|(id, _)| *id == best).map(|(_, s)| *s).unwrap_or(f64::NAN);
        if best == STOP_ID || score_floor.is_some_and(|f| best_score < f) {
            break;
        }
        remaining.remove(&best);
        selected.push(best);
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn topk_fixtures() {
        let scores = vec![(s("a"), 0.9), (s("b"), 0.5), (s("c"), 0.1)];
        assert_eq!(oracle_topk(&scores, 2), vec!["a", "b"]);
        let flat = vec![(s("c"), 0.3), (s("a"), 0.3), (s("b"), 0.3)];
        assert_eq!(oracle_topk(&flat, 3), vec!["a", "b", "c"]);
    }

    #[test]
    fn greedy_fixture_and_stop_only_pool() {
        let mut t = ScoreTable::new();
        for (prefix, cand, v) in [
            (vec![], "A", 0.9),
            (vec![], "B", 0.4),
            (vec![], STOP_ID, 0.1),
            (vec![s("A")], "B", 0.7),
            (vec![s("A")], STOP_ID, 0.3),
            (vec![s("A"), s("B")], STOP_ID, 0.95),
        ] {
            t.insert((prefix, s(cand)), v);
        }
        assert_eq!(oracle_greedy(&t, &[s("A"), s("B")], 4, None).unwrap(), vec!["A", "B"]);
        assert_eq!(oracle_greedy(&t, &[s("A"), s("B")], 1, None).unwrap(), vec!["A"]);
        assert_eq!(oracle_greedy(&t, &[], 4, None).unwrap(), Vec::<String>::new());
        assert_eq!(oracle_greedy(&t, &[s("A"), s("B")], 4, Some(0.85)).unwrap(), vec!["A"]);
    }

    #[test]
    fn missing_entry_is_an_error() {
        let mut t = ScoreTable::new();
        t.insert((vec![], s("A")), 0.5);
        assert!(matches!(
            oracle_greedy(&t, &[s("A")], 4, None),
            Err(Error::MissingScore { .. })
        ));
    }
}
