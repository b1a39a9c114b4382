//! Enclosing-subgraph extraction and double-radius node labels.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

/// Local re-indexed subgraph around a target triple. Node 0 is the head and
/// (unless head == tail) node 1 is the tail; remaining nodes are sorted by
/// global id so extraction is deterministic.
#[derive(Debug, Clone, Serialize)]
pub struct EnclosingSubgraph {
    /// nodes[local] = global entity id
    pub nodes: Vec<EntityId>,
    #[serde(skip)]
    pub local_ids: HashMap<EntityId, usize>,
    /// (local head, relation, local tail)
    pub edges: Vec<(usize, RelationId, usize)>,
    /// (local h, target relation, local t)
    pub target: (usize, RelationId, usize),
    /// per-node (d_h, d_t) hop distances, capped at k for h and t
    pub labels: Vec<(usize, usize)>,
    pub k: usize,
}

impl EnclosingSubgraph {
    pub fn local_head(&self) -> usize {
        self.target.0
    }

    pub fn local_tail(&self) -> usize {
        self.target.2
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// All entities reachable from `e` within `k` undirected hops, including `e`.
pub fn k_hop_neighborhood(
    g: &KnowledgeGraph,
    e: EntityId,
    k: usize,
) -> Result<HashSet<EntityId>> {
    if e >= g.entity_count() {
        return Err(Error::Lookup(format!("entity id {e} out of range")));
    }
    let mut seen: HashSet<EntityId> = HashSet::new();
    seen.insert(e);
    let mut frontier = vec![e];
    for _ in 0..k {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in g.undirected_neighbors(u) {
                if seen.insert(v) {
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(seen)
}

fn is_target_edge(
    edge: &(EntityId, RelationId, EntityId),
    target: &Triple,
    nb: usize,
    has_inverses: bool,
) -> bool {
    let &(u, r, v) = edge;
    if u == target.head && r == target.relation && v == target.tail {
        return true;
    }
    if !has_inverses {
        return false;
    }
    // The same fact read backwards: r and r^-1 swap across nb.
    let inv = if target.relation < nb {
        target.relation + nb
    } else {
        target.relation - nb
    };
    u == target.tail && r == inv && v == target.head
}

/// Extract the k-hop enclosing subgraph of `target`: node set is the
/// intersection of the endpoints' k-hop undirected neighborhoods (plus the
/// endpoints themselves), edges are all graph edges between retained nodes.
/// Node labels are hop distances computed with the target edge removed;
/// nodes farther than k from either endpoint are pruned, while the endpoints
/// keep capped labels.
pub fn extract_enclosing_subgraph(
    g: &KnowledgeGraph,
    target: &Triple,
    k: usize,
    remove_target_edge: bool,
) -> Result<EnclosingSubgraph> {
    let (h, t) = (target.head, target.tail);
    let nh = k_hop_neighborhood(g, h, k)?;
    let nt = k_hop_neighborhood(g, t, k)?;
    let mut cand: Vec<EntityId> = nh.intersection(&nt).copied().collect();
    if !cand.contains(&h) {
        cand.push(h);
    }
    if t != h && !cand.contains(&t) {
        cand.push(t);
    }
    cand.sort_unstable();
    let cand_set: HashSet<EntityId> = cand.iter().copied().collect();

    // Induced edges (global ids), minus the target edge and its inverse when asked.
    let nb = g.num_base_relations();
    let mut edges_global: Vec<(EntityId, RelationId, EntityId)> = Vec::new();
    for &u in &cand {
        for &(r, v) in g.out_edges(u) {
            if !cand_set.contains(&v) {
                continue;
            }
            let edge = (u, r, v);
            if remove_target_edge && is_target_edge(&edge, target, nb, g.has_inverses()) {
                continue;
            }
            edges_global.push(edge);
        }
    }
    edges_global.sort_unstable();

    // Distances on the undirected candidate subgraph with the target edge removed.
    let mut adj: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
    for &(u, _, v) in &edges_global {
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    let bfs = |src: EntityId| -> HashMap<EntityId, usize> {
        let mut dist = HashMap::new();
        dist.insert(src, 0usize);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if let Some(neigh) = adj.get(&u) {
                for &v in neigh {
                    if !dist.contains_key(&v) {
                        dist.insert(v, d + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    };
    let dist_h = bfs(h);
    let dist_t = bfs(t);
    let d_ht = dist_h.get(&t).copied().unwrap_or(usize::MAX).min(k);

    // Retain endpoints (with capped labels) and nodes within k of both.
    let mut nodes = Vec::new();
    let mut labels = Vec::new();
    // Head first, tail second for stable local indices.
    nodes.push(h);
    labels.push((0, d_ht));
    if t != h {
        nodes.push(t);
        labels.push((d_ht, 0));
    }
    for &n in &cand {
        if n == h || n == t {
            continue;
        }
        let dh = dist_h.get(&n).copied().unwrap_or(usize::MAX);
        let dt = dist_t.get(&n).copied().unwrap_or(usize::MAX);
        if dh <= k && dt <= k {
            nodes.push(n);
            labels.push((dh, dt));
        }
    }
    let local_ids: HashMap<EntityId, usize> =
        nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let edges: Vec<(usize, RelationId, usize)> = edges_global
        .iter()
        .filter_map(|&(u, r, v)| match (local_ids.get(&u), local_ids.get(&v)) {
            (Some(&lu), Some(&lv)) => Some((lu, r, lv)),
            _ => None,
        })
        .collect();
    let target_local = (local_ids[&h], target.relation, local_ids[&t]);
    Ok(EnclosingSubgraph {
        nodes,
        local_ids,
        edges,
        target: target_local,
        labels,
        k,
    })
}

/// Double-radius one-hot features: row i = one-hot(d_h) ++ one-hot(d_t),
/// each block of width k+1.
pub fn double_radius_features(sub: &EnclosingSubgraph) -> Vec<Vec<f64>> {
    let width = 2 * sub.k + 2;
    sub.labels
        .iter()
        .map(|&(dh, dt)| {
            let mut row = vec![0.0; width];
            row[dh.min(sub.k)] = 1.0;
            row[sub.k + 1 + dt.min(sub.k)] = 1.0;
            row
        })
        .collect()
}
