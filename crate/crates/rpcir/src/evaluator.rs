//! Classification (AUC-PR) and ranking (Hits@k) evaluation.
//!
//! Ties are handled pessimistically throughout: an equal-scored negative
//! outranks the positive, so a constant scorer earns nothing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::model::Model;
use crate::paths::enumerate_paths;
use crate::subgraph::extract_enclosing_subgraph;
use crate::tensor::Tape;
use crate::trainer::sample_negative_triple;

#[derive(Debug, Clone, Serialize)]
pub struct EvalConfig {
    pub k_rank: usize,
    pub num_negatives: usize,
    pub seed: u64,
    pub dump_scores: bool,
    /// false for checkpoints trained with the no-paths ablation: their
    /// path-block scorer weights are untrained, so feeding enumerated paths
    /// at inference would only inject noise
    pub use_paths: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_rank: 10,
            num_negatives: 50,
            seed: 0,
            dump_scores: false,
            use_paths: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TripleScore {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub score: f64,
    pub label: u8,
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub hits_at_k: f64,
    pub k_rank: usize,
    pub num_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_triple: Option<Vec<TripleScore>>,
}

/// Area under the precision-recall curve by step interpolation: sort all
/// scores descending with negatives ahead of equal-scored positives, then
/// average precision at each positive's rank.
pub fn auc_pr(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::Contract(
            "auc_pr needs at least one positive and one negative score".into(),
        ));
    }
    let mut ranked: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    // Descending score; negatives first on ties (pessimistic).
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });
    let total_pos = pos_scores.len() as f64;
    let mut tp = 0usize;
    let mut area = 0.0;
    for (rank0, &(_, is_pos)) in ranked.iter().enumerate() {
        if is_pos {
            tp += 1;
            let precision = tp as f64 / (rank0 + 1) as f64;
            area += precision / total_pos;
        }
    }
    Ok(area)
}

/// Pessimistic rank of the positive among its negatives: equal-scored
/// negatives count as ranked above it.
pub fn pessimistic_rank(pos_score: f64, neg_scores: &[f64]) -> usize {
    1 + neg_scores.iter().filter(|&&n| n >= pos_score).count()
}

/// All head/tail entity corruptions of `triple` absent from `g`, in a
/// deterministic order.
pub fn corruption_candidates(g: &KnowledgeGraph, triple: &Triple) -> Vec<Triple> {
    let mut out = Vec::new();
    for e in 0..g.entity_count() {
        let cand = Triple::new(e, triple.relation, triple.tail);
        if cand != *triple && !g.contains(&cand) {
            out.push(cand);
        }
    }
    for e in 0..g.entity_count() {
        let cand = Triple::new(triple.head, triple.relation, e);
        if cand != *triple && !g.contains(&cand) {
            out.push(cand);
        }
    }
    out.dedup();
    out
}

/// Sample up to `n` filtered corruptions; logs when fewer are available.
pub fn sample_eval_negatives(
    g: &KnowledgeGraph,
    triple: &Triple,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Triple> {
    let candidates = corruption_candidates(g, triple);
    if candidates.len() <= n {
        if candidates.len() < n {
            log::warn!(
                "only {} valid corruptions available (wanted {n})",
                candidates.len()
            );
        }
        return candidates;
    }
    candidates.choose_multiple(rng, n).copied().collect()
}

/// Score one triple with a trained model: enclosing subgraph, path
/// enumeration and a full forward pass, no dropout.
pub fn score_triple(model: &Model, g: &KnowledgeGraph, triple: &Triple) -> Result<f64> {
    score_triple_opts(model, g, triple, true)
}

/// As `score_triple`, with the path branch optionally disabled to match a
/// no-paths training ablation.
pub fn score_triple_opts(
    model: &Model,
    g: &KnowledgeGraph,
    triple: &Triple,
    use_paths: bool,
) -> Result<f64> {
    let sub = extract_enclosing_subgraph(g, triple, model.cfg.k, true)?;
    let paths = if use_paths {
        enumerate_paths(&sub, model.cfg.l_max)
    } else {
        Vec::new()
    };
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let out = bound.score_triple(&sub, &paths, triple.relation, None)?;
    Ok(tape.value_scalar(out.score))
}

/// Pessimistic rank of each target among `num_negatives` sampled corruptions,
/// scored by `scorer`. Per-target rngs are derived from `seed` xor the
/// target index so parallel evaluation stays deterministic.
pub fn ranks<S>(
    scorer: &S,
    g: &KnowledgeGraph,
    targets: &[Triple],
    num_negatives: usize,
    seed: u64,
) -> Result<Vec<usize>>
where
    S: Fn(&Triple) -> Result<f64> + Sync,
{
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e3779b9));
            let negatives = sample_eval_negatives(g, t, num_negatives, &mut rng);
            let pos = scorer(t)?;
            let neg: Vec<f64> = negatives.iter().map(|n| scorer(n)).collect::<Result<_>>()?;
            Ok(pessimistic_rank(pos, &neg))
        })
        .collect()
}

/// AUC-PR over `targets` with one sampled corruption per positive; the cheap
/// classification-only evaluation used for validation and sweeps.
pub fn auc_with_sampled_negatives(
    model: &Model,
    g: &KnowledgeGraph,
    targets: &[Triple],
    seed: u64,
    use_paths: bool,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::with_capacity(targets.len());
    let mut neg = Vec::with_capacity(targets.len());
    for t in targets {
        let n = sample_negative_triple(g, t, &mut rng)?;
        pos.push(score_triple_opts(model, g, t, use_paths)?);
        neg.push(score_triple_opts(model, g, &n, use_paths)?);
    }
    auc_pr(&pos, &neg)
}

/// Run both metrics over the ind-test targets, extracting subgraphs from the
/// ind-test graph. The graph must carry inverse relations compatible with
/// the model's relation-id layout.
pub fn evaluate(
    model: &Model,
    g: &KnowledgeGraph,
    targets: &[Triple],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if !g.has_inverses() {
        return Err(Error::Compat("evaluate needs a graph with inverse relations".into()));
    }
    if g.relation_count() != model.num_relations {
        return Err(Error::Compat(format!(
            "graph has {} relation ids but the checkpoint expects {}",
            g.relation_count(),
            model.num_relations
        )));
    }
    if targets.is_empty() {
        return Err(Error::Contract("evaluate needs at least one test triple".into()));
    }
    let scorer = |t: &Triple| score_triple_opts(model, g, t, cfg.use_paths);

    // AUC-PR with one filtered corruption per positive.
    let scored: Vec<(f64, f64, Triple)> = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5_0000 ^ (i as u64).wrapping_mul(31));
            let neg = sample_negative_triple(g, t, &mut rng)?;
            Ok((scorer(t)?, scorer(&neg)?, neg))
        })
        .collect::<Result<_>>()?;
    let pos_scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let neg_scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let auc = auc_pr(&pos_scores, &neg_scores)?;

    let ranks = ranks(&scorer, g, targets, cfg.num_negatives, cfg.seed)?;
    let hits = ranks.iter().filter(|&&r| r <= cfg.k_rank).count() as f64 / targets.len() as f64;

    let per_triple = cfg.dump_scores.then(|| {
        targets
            .iter()
            .zip(&pos_scores)
            .zip(&ranks)
            .map(|((t, &score), &rank)| TripleScore {
                head: g.entity_vocab().name(t.head).to_string(),
                relation: g.relation_vocab().name(t.relation).to_string(),
                tail: g.entity_vocab().name(t.tail).to_string(),
                score,
                label: 1,
                rank: Some(rank),
            })
            .collect()
    });
    Ok(EvalReport {
        auc_pr: auc,
        hits_at_k: hits,
        k_rank: cfg.k_rank,
        num_test: targets.len(),
        per_triple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationVocabMode;

    #[test]
    fn perfect_separation_is_one() {
        assert_eq!(auc_pr(&[0.9, 0.8], &[0.2, 0.1]).unwrap(), 1.0);
    }

    #[test]
    fn identical_lists_give_half() {
        // Each positive sits right behind its equal-scored negative.
        let v = vec![0.9, 0.8, 0.3];
        let got = auc_pr(&v, &v).unwrap();
        assert!((got - 0.5).abs() < 1e-12, "{got}");
    }

    #[test]
    fn single_inverted_pair_is_half() {
        assert_eq!(auc_pr(&[0.1], &[0.9]).unwrap(), 0.5);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(auc_pr(&[], &[1.0]).is_err());
        assert!(auc_pr(&[1.0], &[]).is_err());
    }

    #[test]
    fn auc_pr_invariant_under_monotone_transform() {
        let pos = [0.7, 0.2, 0.55];
        let neg = [0.6, 0.1, 0.15, 0.4];
        let base = auc_pr(&pos, &neg).unwrap();
        let f = |x: f64| (3.0 * x).exp() + 1.0;
        let tp: Vec<f64> = pos.iter().map(|&x| f(x)).collect();
        let tn: Vec<f64> = neg.iter().map(|&x| f(x)).collect();
        assert!((auc_pr(&tp, &tn).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn reversed_call_gives_minimal_curve() {
        // Regression fixture: perfect separation forward, worst-case reversed.
        let pos = [0.9, 0.8];
        let neg = [0.2, 0.1];
        assert_eq!(auc_pr(&pos, &neg).unwrap(), 1.0);
        // Reversed: both "positives" rank below both "negatives":
        // precisions 1/3 and 2/4.
        let rev = auc_pr(&neg, &pos).unwrap();
        assert!((rev - (1.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_fixtures() {
        // Positive above all 50 negatives: a hit.
        let negs = vec![0.1; 50];
        assert_eq!(pessimistic_rank(0.9, &negs), 1);
        // Positive below 10 higher-scored negatives: rank 11, a miss at k=10.
        let mut negs = vec![0.1; 40];
        negs.extend(vec![0.95; 10]);
        assert_eq!(pessimistic_rank(0.9, &negs), 11);
        // Constant scorer: every tie counts against the positive.
        assert_eq!(pessimistic_rank(0.5, &vec![0.5; 50]), 51);
    }

    #[test]
    fn hits_monotone_in_k() {
        let ranks = [1usize, 5, 11, 31, 51];
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count();
        for k in 1..51 {
            assert!(hits(k + 1) >= hits(k));
        }
    }

    #[test]
    fn corruptions_are_filtered_against_the_graph() {
        let g = crate::kg::KnowledgeGraph::from_named(
            [("a", "r", "b"), ("c", "r", "b"), ("a", "r", "c")],
            RelationVocabMode::Fresh,
        )
        .unwrap();
        let target = Triple::new(0, 0, 1); // (a, r, b)
        let cands = corruption_candidates(&g, &target);
        assert!(!cands.iter().any(|c| g.contains(c)));
        assert!(!cands.contains(&target));
        // (b,r,b) and tail corruptions (a,r,a) are allowed.
        assert!(cands.contains(&Triple::new(1, 0, 1)));
        assert!(cands.contains(&Triple::new(0, 0, 0)));
    }

    #[test]
    fn sampling_fewer_candidates_returns_all() {
        let g = crate::kg::KnowledgeGraph::from_named([("a", "r", "b")], RelationVocabMode::Fresh)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = sample_eval_negatives(&g, &Triple::new(0, 0, 1), 50, &mut rng);
        // Only (b,r,b), (a,r,a) exist.
        assert_eq!(negs.len(), 2);
    }
}
