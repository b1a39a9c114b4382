//! First-order rule readout: turn per-subgraph path attention into ranked
//! Horn rules with confidences.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId, Triple, Vocab};
use crate::model::Model;
use crate::paths::{enumerate_paths, RelationalPath};
use crate::subgraph::extract_enclosing_subgraph;
use crate::tensor::Tape;

/// One body atom: a base relation, optionally traversed against its
/// direction (printed with swapped arguments).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Atom {
    pub relation: RelationId,
    pub inverse: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rule {
    /// base relation implied by the body
    pub head: RelationId,
    pub body: Vec<Atom>,
    /// mean attention weight over the subgraphs containing the body
    pub confidence: f64,
    /// number of enclosing subgraphs in which the body appeared
    pub support: usize,
}

/// Attention weights over the connecting paths of one target's enclosing
/// subgraph; empty when the endpoints are not path-connected.
pub fn subgraph_betas(
    model: &Model,
    g: &KnowledgeGraph,
    triple: &Triple,
) -> Result<Vec<(RelationalPath, f64)>> {
    let sub = extract_enclosing_subgraph(g, triple, model.cfg.k, true)?;
    let paths = enumerate_paths(&sub, model.cfg.l_max);
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let out = bound.score_triple(&sub, &paths, triple.relation, None)?;
    let betas = out
        .betas
        .ok_or_else(|| Error::Contract("betas missing despite non-empty paths".into()))?;
    let values = tape.value(betas);
    Ok(paths.into_iter().zip(values.data).collect())
}

fn path_to_body(path: &RelationalPath, num_base: usize) -> Vec<Atom> {
    path.0
        .iter()
        .map(|&r| {
            if r < num_base {
                Atom { relation: r, inverse: false }
            } else {
                Atom { relation: r - num_base, inverse: true }
            }
        })
        .collect()
}

/// Mine rules from the targets' enclosing subgraphs: every connecting path
/// becomes a candidate body for its target's relation, its confidence the
/// mean attention it received across the subgraphs where it appeared.
/// Results are filtered by `min_confidence` and sorted by
/// (head relation, confidence descending, body).
pub fn extract_rules(
    model: &Model,
    g: &KnowledgeGraph,
    targets: &[Triple],
    min_confidence: f64,
) -> Result<Vec<Rule>> {
    let nb = g.num_base_relations();
    let mut acc: BTreeMap<(RelationId, RelationalPath), (f64, usize)> = BTreeMap::new();
    for t in targets {
        if t.relation >= nb {
            return Err(Error::Contract(format!(
                "rule head relation {} is not a base relation",
                t.relation
            )));
        }
        for (path, beta) in subgraph_betas(model, g, t)? {
            let entry = acc.entry((t.relation, path)).or_insert((0.0, 0));
            entry.0 += beta;
            entry.1 += 1;
        }
    }
    let mut rules: Vec<Rule> = acc
        .into_iter()
        .map(|((head, path), (beta_sum, support))| Rule {
            head,
            body: path_to_body(&path, nb),
            confidence: beta_sum / support as f64,
            support,
        })
        .filter(|r| r.confidence >= min_confidence)
        .collect();
    rules.sort_by(|a, b| {
        a.head
            .cmp(&b.head)
            .then_with(|| b.confidence.partial_cmp(&a.confidence).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.body.cmp(&b.body))
    });
    Ok(rules)
}

/// Render one rule, e.g.
/// `0.99 hypernym(X,Y) <- verb_group(X,Z1) ^ hypernym(Z1,Z2) ^ hypernym(Z2,Y)`.
/// Inverse atoms print with swapped arguments.
pub fn format_rule(rule: &Rule, relations: &Vocab) -> String {
    let n = rule.body.len();
    let var = |i: usize| -> String {
        if i == 0 {
            "X".into()
        } else if i == n {
            "Y".into()
        } else {
            format!("Z{i}")
        }
    };
    let body = rule
        .body
        .iter()
        .enumerate()
        .map(|(i, atom)| {
            let (a, b) = if atom.inverse {
                (var(i + 1), var(i))
            } else {
                (var(i), var(i + 1))
            };
            format!("{}({a},{b})", relations.name(atom.relation))
        })
        .collect::<Vec<_>>()
        .join(" ^ ");
    format!(
        "{:.2} {}(X,Y) <- {}",
        rule.confidence,
        relations.name(rule.head),
        body
    )
}

/// Tab-separated export: confidence, support, head, formatted rule.
pub fn rules_to_tsv(rules: &[Rule], relations: &Vocab) -> String {
    let mut out = String::from("confidence\tsupport\thead\trule\n");
    for r in rules {
        out.push_str(&format!(
            "{:.6}\t{}\t{}\t{}\n",
            r.confidence,
            r.support,
            relations.name(r.head),
            format_rule(r, relations)
        ));
    }
    out
}
