//! Synthetic fully-inductive benchmark with two planted composition rules:
//! target_ab(X,Y) <- body_a(X,Z) ^ body_b(Z,Y) and
//! target_cd(X,Y) <- body_c(X,Z) ^ body_d(Z,Y).
//!
//! Both graph halves are generated from the same recipe over disjoint entity
//! pools, so a model that learns the rules transfers to the ind-test side.
//! Two heads with disjoint bodies make the relation itself informative: a
//! model must associate each body sequence with its own head, not merely
//! detect that some chain connects the endpoints.
//!
//! The generator can also plant *broken* chains: the first body relation of
//! one rule composed with the second body relation of the other (a "c/d"
//! cross), with no target fact on the endpoints. Broken pairs are structural
//! twins of true target pairs — with `decoy_paths` both kinds additionally
//! get a parallel noise path, so path counts, degrees and double-radius
//! labels all match — and differ only in which relations compose the
//! connecting chain. Scoring a broken pair as if it carried the rule head is
//! therefore a pure test of relation-composition discrimination.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{InductiveSplit, KnowledgeGraph, RelationVocabMode, Triple};

/// The planted rules, as (head relation, body relation sequence).
pub const PLANTED_RULES: [(&str, [&str; 2]); 2] = [
    ("target_ab", ["body_a", "body_b"]),
    ("target_cd", ["body_c", "body_d"]),
];
pub const NOISE_RELATION: &str = "noise";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_train_entities: usize,
    pub num_ind_entities: usize,
    /// chains per side, split evenly across the planted rules
    pub num_train_chains: usize,
    pub num_ind_chains: usize,
    pub num_train_noise: usize,
    pub num_ind_noise: usize,
    /// broken (crossed-body) chains per side; their endpoint pairs are
    /// reported as hard negatives and carry no target fact
    pub num_train_broken: usize,
    pub num_ind_broken: usize,
    /// half-real bridges per side: a rule's first body relation followed by a
    /// noise edge, endpoint pairs reported as hard negatives — connected like
    /// a target pair, but with the wrong composition
    pub num_train_bridges: usize,
    pub num_ind_bridges: usize,
    /// give every true and broken chain a parallel noise path
    pub decoy_paths: bool,
    /// fraction of train-side target facts held out as validation triples
    pub valid_fraction: f64,
    /// fraction of ind-side target facts held out as test triples
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_train_entities: 90,
            num_ind_entities: 45,
            num_train_chains: 30,
            num_ind_chains: 16,
            num_train_noise: 15,
            num_ind_noise: 8,
            num_train_broken: 0,
            num_ind_broken: 0,
            num_train_bridges: 0,
            num_ind_bridges: 0,
            decoy_paths: false,
            valid_fraction: 0.2,
            test_fraction: 0.5,
            seed: 0,
        }
    }
}

pub struct SynthData {
    pub split: InductiveSplit,
    /// rule heads queried over broken-chain pairs: structurally matched
    /// non-facts, empty unless broken chains were requested
    pub train_hard_negatives: Vec<Triple>,
    pub ind_hard_negatives: Vec<Triple>,
    pub config: SynthConfig,
}

struct Side {
    /// triples forming the graph file (body + kept targets + noise)
    graph: Vec<(String, String, String)>,
    /// target facts withheld from the graph
    held_out: Vec<(String, String, String)>,
    /// rule heads over broken-chain endpoint pairs; never facts
    hard_negatives: Vec<(String, String, String)>,
}

struct SideSpec {
    num_entities: usize,
    num_chains: usize,
    num_noise: usize,
    num_broken: usize,
    num_bridges: usize,
    decoy_paths: bool,
    held_fraction: f64,
}

fn generate_side(prefix: &str, spec: &SideSpec, rng: &mut ChaCha8Rng) -> Result<Side> {
    if spec.num_entities < 3 {
        return Err(Error::Contract("need at least 3 entities per side".into()));
    }
    let num_entities = spec.num_entities;
    let name = |i: usize| format!("{prefix}{i}");
    let mut graph = Vec::new();
    let mut targets = Vec::new();
    let mut hard_negatives = Vec::new();
    // One chain per (x, y) pair across rules, true and broken alike, so a
    // rule head queried over a broken pair is guaranteed to be a non-fact.
    let mut seen_pairs = std::collections::HashSet::new();
    let total = spec.num_chains + spec.num_broken + spec.num_bridges;
    let mut chains = 0usize;
    let mut attempts = 0usize;
    while chains < total {
        attempts += 1;
        if attempts > 100 * total {
            return Err(Error::Sampling(
                "could not place the requested number of chains".into(),
            ));
        }
        let x = rng.gen_range(0..num_entities);
        let z = rng.gen_range(0..num_entities);
        let y = rng.gen_range(0..num_entities);
        if x == z || z == y || x == y || !seen_pairs.insert((x, y)) {
            continue;
        }
        let rule = chains % PLANTED_RULES.len();
        let (head, body) = PLANTED_RULES[rule];
        let broken = chains >= spec.num_chains && chains < spec.num_chains + spec.num_broken;
        let bridge = chains >= spec.num_chains + spec.num_broken;
        if bridge {
            // A half-real chain: the rule's first body relation followed by a
            // noise edge. The pair is connected like a target pair and the
            // path even starts correctly, but the composition is wrong, so
            // the endpoints are a hard negative for the rule head.
            graph.push((name(x), body[0].into(), name(z)));
            graph.push((name(z), NOISE_RELATION.into(), name(y)));
            hard_negatives.push((name(x), head.into(), name(y)));
            chains += 1;
            continue;
        }
        graph.push((name(x), body[0].into(), name(z)));
        if broken {
            // Cross in the other rule's second body relation; the pair gets
            // no target fact and becomes a hard negative for `head`.
            let wrong = PLANTED_RULES[(rule + 1) % PLANTED_RULES.len()].1[1];
            graph.push((name(z), wrong.into(), name(y)));
            hard_negatives.push((name(x), head.into(), name(y)));
        } else {
            graph.push((name(z), body[1].into(), name(y)));
            targets.push((name(x), head.into(), name(y)));
        }
        if spec.decoy_paths {
            // A parallel noise path between the same endpoints, identical for
            // true and broken chains: the planted body is then one relational
            // path among several, and uniform attention dilutes it.
            let mut w = rng.gen_range(0..num_entities);
            while w == x || w == y {
                w = rng.gen_range(0..num_entities);
            }
            graph.push((name(x), NOISE_RELATION.into(), name(w)));
            graph.push((name(w), NOISE_RELATION.into(), name(y)));
        }
        chains += 1;
    }
    for _ in 0..spec.num_noise {
        let u = rng.gen_range(0..num_entities);
        let mut v = rng.gen_range(0..num_entities - 1);
        if v >= u {
            v += 1;
        }
        graph.push((name(u), NOISE_RELATION.into(), name(v)));
    }
    targets.shuffle(rng);
    let held = ((targets.len() as f64) * spec.held_fraction).round() as usize;
    // Keep at least one target fact on each side of the cut.
    let held = held.clamp(1, targets.len().saturating_sub(1).max(1));
    let held_out = targets.split_off(targets.len() - held);
    graph.extend(targets);
    Ok(Side {
        graph,
        held_out,
        hard_negatives,
    })
}

fn resolve(g: &KnowledgeGraph, named: &[(String, String, String)]) -> Result<Vec<Triple>> {
    named
        .iter()
        .map(|(h, r, t)| {
            let lookup = |vocab: &crate::kg::Vocab, name: &str| {
                vocab
                    .get(name)
                    .ok_or_else(|| Error::Lookup(format!("generated name {name:?} missing")))
            };
            Ok(Triple::new(
                lookup(g.entity_vocab(), h)?,
                lookup(g.relation_vocab(), r)?,
                lookup(g.entity_vocab(), t)?,
            ))
        })
        .collect()
}

/// Generate a deterministic planted-rule split. Graphs come without inverse
/// relations, matching what `InductiveSplit::load` produces from disk.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if !(0.0..1.0).contains(&cfg.valid_fraction) || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Contract("held-out fractions must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = generate_side(
        "t",
        &SideSpec {
            num_entities: cfg.num_train_entities,
            num_chains: cfg.num_train_chains,
            num_noise: cfg.num_train_noise,
            num_broken: cfg.num_train_broken,
            num_bridges: cfg.num_train_bridges,
            decoy_paths: cfg.decoy_paths,
            held_fraction: cfg.valid_fraction,
        },
        &mut rng,
    )?;
    let ind = generate_side(
        "i",
        &SideSpec {
            num_entities: cfg.num_ind_entities,
            num_chains: cfg.num_ind_chains,
            num_noise: cfg.num_ind_noise,
            num_broken: cfg.num_ind_broken,
            num_bridges: cfg.num_ind_bridges,
            decoy_paths: cfg.decoy_paths,
            held_fraction: cfg.test_fraction,
        },
        &mut rng,
    )?;
    let train_graph = KnowledgeGraph::from_named(
        train.graph.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        RelationVocabMode::Fresh,
    )?;
    let ind_test_graph = KnowledgeGraph::from_named(
        ind.graph.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        RelationVocabMode::Extend(train_graph.relation_vocab().clone()),
    )?;
    let target_ids: Vec<usize> = PLANTED_RULES
        .iter()
        .map(|(head, _)| {
            train_graph
                .relation_vocab()
                .get(head)
                .expect("target relation interned")
        })
        .collect();
    let train_targets: Vec<Triple> = train_graph
        .triples()
        .iter()
        .filter(|t| target_ids.contains(&t.relation))
        .copied()
        .collect();
    let valid_targets = resolve(&train_graph, &train.held_out)?;
    let test_targets = resolve(&ind_test_graph, &ind.held_out)?;
    let train_hard_negatives = resolve(&train_graph, &train.hard_negatives)?;
    let ind_hard_negatives = resolve(&ind_test_graph, &ind.hard_negatives)?;
    Ok(SynthData {
        split: InductiveSplit {
            train_graph,
            ind_test_graph,
            train_targets,
            valid_targets,
            test_targets,
        },
        train_hard_negatives,
        ind_hard_negatives,
        config: cfg.clone(),
    })
}

/// The planted body relation ids for a target relation id, if `relation`
/// heads one of the planted rules in `g`'s vocabulary.
pub fn planted_body(g: &KnowledgeGraph, relation: usize) -> Option<Vec<usize>> {
    let vocab = g.relation_vocab();
    PLANTED_RULES.iter().find_map(|(head, body)| {
        (vocab.get(head) == Some(relation))
            .then(|| body.iter().map(|b| vocab.get(b).unwrap()).collect())
    })
}
