//! Independent oracles used by the acceptance suite: a brute-force walk
//! enumerator and a from-scratch BFS labeling, both written without reference
//! to the library's own subgraph/path code paths.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rpcir::kg::{KnowledgeGraph, RelationVocabMode, Triple};

/// A random multi-relational digraph: <= `max_nodes` nodes, <= `max_rels`
/// base relations, <= `max_edges` edges, no self-loops, at least one edge.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
    max_rels: usize,
    max_edges: usize,
) -> KnowledgeGraph {
    let nodes = rng.gen_range(2..=max_nodes);
    let rels = rng.gen_range(1..=max_rels);
    let edges = rng.gen_range(1..=max_edges);
    let mut triples = Vec::new();
    for _ in 0..edges {
        let h = rng.gen_range(0..nodes);
        let mut t = rng.gen_range(0..nodes - 1);
        if t >= h {
            t += 1;
        }
        let r = rng.gen_range(0..rels);
        triples.push((format!("n{h}"), format!("r{r}"), format!("n{t}")));
    }
    KnowledgeGraph::from_named(
        triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        RelationVocabMode::Fresh,
    )
    .unwrap()
    .add_inverse_relations()
    .unwrap()
}

/// All distinct relation sequences along directed walks `from -> to` of
/// length <= `l_max` over an explicit edge list, by depth-first search.
pub fn brute_force_walks(
    edges: &[(usize, usize, usize)], // (u, relation, v)
    from: usize,
    to: usize,
    l_max: usize,
) -> Vec<Vec<usize>> {
    let mut found: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(from, Vec::new())];
    while let Some((node, seq)) = stack.pop() {
        if seq.len() >= l_max {
            continue;
        }
        for &(u, r, v) in edges {
            if u != node {
                continue;
            }
            let mut ext = seq.clone();
            ext.push(r);
            if v == to {
                found.insert(ext.clone());
            }
            stack.push((v, ext));
        }
    }
    let mut out: Vec<Vec<usize>> = found.into_iter().collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Undirected BFS distances from `source` over an explicit edge list,
/// restricted to `allowed` nodes. Unreachable nodes are absent.
pub fn bfs_distances(
    edges: &[(usize, usize)],
    allowed: &HashSet<usize>,
    source: usize,
) -> HashMap<usize, usize> {
    let mut dist = HashMap::new();
    if !allowed.contains(&source) {
        return dist;
    }
    dist.insert(source, 0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == u && allowed.contains(&y) && !dist.contains_key(&y) {
                    dist.insert(y, du + 1);
                    queue.push_back(y);
                }
            }
        }
    }
    dist
}

/// Independent reimplementation of enclosing-subgraph node selection and
/// double-radius labeling, straight from the definitions: k-hop neighborhood
/// intersection, target-edge removal (both directions), BFS labels, pruning.
pub struct OracleSubgraph {
    /// global node id -> (d_head, d_tail), for every surviving node
    pub labels: HashMap<usize, (usize, usize)>,
}

pub fn oracle_enclosing_subgraph(g: &KnowledgeGraph, target: &Triple, k: usize) -> OracleSubgraph {
    let nb = g.num_base_relations();
    let inv = |r: usize| if r < nb { r + nb } else { r - nb };
    // Undirected edge list of the whole graph, minus the target edge and its
    // inverse twin.
    let keep = |t: &Triple| {
        !(t.head == target.head && t.tail == target.tail && t.relation == target.relation)
            && !(t.head == target.tail && t.tail == target.head && t.relation == inv(target.relation))
    };
    let full_edges: Vec<(usize, usize)> = g
        .triples()
        .iter()
        .filter(|t| keep(t))
        .map(|t| (t.head, t.tail))
        .collect();
    let everything: HashSet<usize> = (0..g.entity_count()).collect();

    // k-hop neighborhoods over the *unpruned* graph including the target edge
    // (neighborhood selection happens before edge removal).
    let all_edges: Vec<(usize, usize)> =
        g.triples().iter().map(|t| (t.head, t.tail)).collect();
    let from_head = bfs_distances(&all_edges, &everything, target.head);
    let from_tail = bfs_distances(&all_edges, &everything, target.tail);
    let mut candidates: HashSet<usize> = everything
        .iter()
        .copied()
        .filter(|n| {
            from_head.get(n).is_some_and(|&d| d <= k) && from_tail.get(n).is_some_and(|&d| d <= k)
        })
        .collect();
    candidates.insert(target.head);
    candidates.insert(target.tail);

    // Double-radius labels: BFS inside the candidate set with the target edge
    // removed; prune nodes farther than k from either endpoint.
    let dh = bfs_distances(&full_edges, &candidates, target.head);
    let dt = bfs_distances(&full_edges, &candidates, target.tail);
    let mut labels = HashMap::new();
    for &n in &candidates {
        if n == target.head {
            labels.insert(n, (0, *dt.get(&target.head).unwrap_or(&k).min(&k)));
            continue;
        }
        if n == target.tail {
            labels.insert(n, (*dh.get(&target.tail).unwrap_or(&k).min(&k), 0));
            continue;
        }
        match (dh.get(&n), dt.get(&n)) {
            (Some(&a), Some(&b)) if a <= k && b <= k => {
                labels.insert(n, (a, b));
            }
            _ => {}
        }
    }
    OracleSubgraph { labels }
}

/// Pick a uniformly random base triple of the graph.
pub fn random_target(g: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Triple {
    let base: Vec<&Triple> = g
        .triples()
        .iter()
        .filter(|t| t.relation < g.num_base_relations())
        .collect();
    *base[rng.gen_range(0..base.len())]
}
