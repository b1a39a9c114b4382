//! Relational path enumeration between the target endpoints and negative
//! (corrupted) path construction for contrast.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId, Triple};
use crate::subgraph::{extract_enclosing_subgraph, EnclosingSubgraph};

/// Ordered relation sequence along a directed walk from head to tail.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationalPath(pub Vec<RelationId>);

impl RelationalPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Positive paths and their one-for-one corruptions.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub positives: Vec<RelationalPath>,
    pub negatives: Vec<RelationalPath>,
}

/// Every directed walk from the local head to the local tail of length
/// <= l_max, projected to its relation sequence. Distinct walks with the same
/// relation sequence merge; output is ordered by (length, lexicographic ids).
pub fn enumerate_paths(sub: &EnclosingSubgraph, l_max: usize) -> Vec<RelationalPath> {
    let n = sub.num_nodes();
    let mut out_edges: Vec<Vec<(RelationId, usize)>> = vec![Vec::new(); n];
    for &(u, r, v) in &sub.edges {
        out_edges[u].push((r, v));
    }
    let (h, t) = (sub.local_head(), sub.local_tail());
    let mut found: BTreeSet<Vec<RelationId>> = BTreeSet::new();
    // Frontier of (node, relation sequence so far); walks may revisit nodes.
    let mut frontier: Vec<(usize, Vec<RelationId>)> = vec![(h, Vec::new())];
    for _ in 0..l_max {
        let mut next = Vec::new();
        for (u, seq) in frontier {
            for &(r, v) in &out_edges[u] {
                let mut ext = seq.clone();
                ext.push(r);
                if v == t {
                    found.insert(ext.clone());
                }
                next.push((v, ext));
            }
        }
        // Walks with identical relation sequences at the same node behave
        // identically from here on; merge them to bound the frontier.
        next.sort_unstable();
        next.dedup();
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    let mut paths: Vec<RelationalPath> = found.into_iter().map(RelationalPath).collect();
    paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.0.cmp(&b.0)));
    paths
}

/// Corrupt each positive at one uniformly chosen position with a uniformly
/// chosen different relation, rejecting results that collide with any
/// positive (<= 100 attempts per path).
pub fn generate_negative_paths<R: Rng>(
    positives: &[RelationalPath],
    relation_count: usize,
    rng: &mut R,
) -> Result<Vec<RelationalPath>> {
    if relation_count < 2 {
        return Err(Error::Contract(
            "generate_negative_paths needs at least 2 relations".into(),
        ));
    }
    let positive_set: HashSet<&RelationalPath> = positives.iter().collect();
    let mut negatives = Vec::with_capacity(positives.len());
    for p in positives {
        let mut done = false;
        for _ in 0..100 {
            let pos = rng.gen_range(0..p.len());
            let cur = p.0[pos];
            let mut repl = rng.gen_range(0..relation_count - 1);
            if repl >= cur {
                repl += 1;
            }
            let mut cand = p.clone();
            cand.0[pos] = repl;
            if !positive_set.contains(&cand) {
                negatives.push(cand);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::CorruptionExhausted(p.0.clone()));
        }
    }
    Ok(negatives)
}

/// Mean paths per enclosing subgraph plus a path-length histogram.
#[derive(Debug, Clone, Serialize)]
pub struct PathStats {
    pub mean_paths: Option<f64>,
    pub histogram: BTreeMap<usize, usize>,
    pub num_subgraphs: usize,
}

pub fn count_paths_stats(
    g: &KnowledgeGraph,
    targets: &[Triple],
    k: usize,
    l_max: usize,
) -> Result<PathStats> {
    let mut histogram = BTreeMap::new();
    let mut total = 0usize;
    for target in targets {
        let sub = extract_enclosing_subgraph(g, target, k, true)?;
        for p in enumerate_paths(&sub, l_max) {
            *histogram.entry(p.len()).or_insert(0) += 1;
            total += 1;
        }
    }
    let mean_paths = if targets.is_empty() {
        None
    } else {
        Some(total as f64 / targets.len() as f64)
    };
    Ok(PathStats {
        mean_paths,
        histogram,
        num_subgraphs: targets.len(),
    })
}
