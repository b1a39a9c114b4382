//! The RPC-IR network: attention-augmented relational GCN over an enclosing
//! subgraph, path encoders, path attention, readout and triple scoring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::paths::RelationalPath;
use crate::subgraph::{double_radius_features, EnclosingSubgraph};
use crate::tensor::{Array, BoundParams, ParamStore, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathEncoder {
    Cbow,
    Cnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub k: usize,
    pub l_max: usize,
    pub path_encoder: PathEncoder,
    pub cnn_window: usize,
    pub edge_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 3,
            dim: 32,
            k: 3,
            l_max: 3,
            path_encoder: PathEncoder::Cbow,
            cnn_window: 2,
            edge_dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_layers == 0 || self.k == 0 || self.l_max == 0 {
            return Err(Error::Contract(
                "dim, num_layers, k and l_max must all be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(Error::Contract(format!(
                "edge_dropout must be in [0, 1), got {}",
                self.edge_dropout
            )));
        }
        if self.cnn_window != 2 {
            return Err(Error::Contract(
                "only cnn_window = 2 is supported".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        2 * self.k + 2
    }

    /// Width of the scorer input [s_{h->t}; r_T; p_{h->t}]:
    /// readout + per-layer head/tail pairs + target relation + paths.
    pub fn score_width(&self) -> usize {
        self.dim * (1 + 2 * self.num_layers) + self.dim + self.dim
    }
}

/// Model parameters plus the relation-id layout they were built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub num_relations: usize,
    pub num_base_relations: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format_version: u32,
    cfg: ModelConfig,
    num_base_relations: usize,
    /// the `ParamStore` document, embedded verbatim
    params: serde_json::Value,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

impl Model {
    /// Initialize parameters for a graph with `num_base_relations` base
    /// relations (the id space is doubled for inverses).
    pub fn new<R: Rng>(cfg: ModelConfig, num_base_relations: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let num_relations = 2 * num_base_relations;
        let d = cfg.dim;
        let mut params = ParamStore::new();
        params.add("rel_emb", glorot(rng, num_relations, d, d, d), true)?;
        params.add(
            "w_in",
            glorot(rng, cfg.feature_width(), d, cfg.feature_width(), d),
            true,
        )?;
        for l in 0..cfg.num_layers {
            params.add(
                &format!("layer{l}.w_rel"),
                glorot(rng, num_relations * d, d, d, d),
                true,
            )?;
            params.add(&format!("layer{l}.w_self"), glorot(rng, d, d, d, d), true)?;
        }
        // Attention MLP shared across layers.
        params.add("att.w1", glorot(rng, 4 * d, d, 4 * d, d), true)?;
        params.add("att.b1", Array::zeros(1, d), true)?;
        params.add("att.w2", glorot(rng, d, 1, d, 1), true)?;
        params.add("att.b2", Array::zeros(1, 1), true)?;
        params.add(
            "w_score",
            glorot(rng, cfg.score_width(), 1, cfg.score_width(), 1),
            true,
        )?;
        if cfg.path_encoder == PathEncoder::Cnn {
            for j in 0..cfg.l_max.saturating_sub(1) {
                params.add(&format!("cnn.w{j}"), glorot(rng, 2 * d, d, 2 * d, d), true)?;
                params.add(&format!("cnn.b{j}"), Array::zeros(1, d), true)?;
            }
        }
        Ok(Model {
            cfg,
            params,
            num_relations,
            num_base_relations,
        })
    }

    /// Serialize configuration, relation layout and parameters as one
    /// checkpoint document.
    pub fn to_json(&self) -> String {
        let doc = ModelCheckpoint {
            format_version: crate::tensor::CHECKPOINT_FORMAT_VERSION,
            cfg: self.cfg.clone(),
            num_base_relations: self.num_base_relations,
            params: serde_json::from_str(&self.params.to_json()).expect("params are valid json"),
        };
        serde_json::to_string(&doc).expect("serialize checkpoint")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelCheckpoint = serde_json::from_str(text)
            .map_err(|e| Error::Compat(format!("bad model checkpoint: {e}")))?;
        if doc.format_version != crate::tensor::CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Compat(format!(
                "checkpoint format {} unsupported (expected {})",
                doc.format_version,
                crate::tensor::CHECKPOINT_FORMAT_VERSION
            )));
        }
        doc.cfg.validate()?;
        let params = ParamStore::from_json(
            &serde_json::to_string(&doc.params).expect("reserialize params"),
        )?;
        Ok(Model {
            cfg: doc.cfg,
            params,
            num_relations: 2 * doc.num_base_relations,
            num_base_relations: doc.num_base_relations,
        })
    }

    pub fn bind<'a>(&'a self, tape: &'a Tape) -> BoundModel<'a> {
        BoundModel {
            model: self,
            tape,
            bound: self.params.bind(tape),
        }
    }
}

/// One forward-pass binding of the model onto a tape.
pub struct BoundModel<'a> {
    pub model: &'a Model,
    pub tape: &'a Tape,
    pub bound: BoundParams,
}

/// Result of scoring one triple.
pub struct ScoredTriple {
    /// f(e_T, P, r_T), a scalar tensor
    pub score: TensorId,
    /// aggregated path representation (zero vector when pathless)
    pub path_repr: TensorId,
    /// attention weights over the supplied paths, when any
    pub betas: Option<TensorId>,
}

impl<'a> BoundModel<'a> {
    fn p(&self, name: &str) -> TensorId {
        self.bound
            .id(self.model.params.index_of(name).expect("known parameter"))
    }

    pub fn relation_vec(&self, r: RelationId) -> Result<TensorId> {
        if r >= self.model.num_relations {
            return Err(Error::Lookup(format!(
                "relation id {r} out of range ({} relations)",
                self.model.num_relations
            )));
        }
        self.tape.row_select(self.p("rel_emb"), r)
    }

    /// GCN propagation with edge attention. Returns per-layer node
    /// embeddings (`num_layers` entries, excluding the projected input).
    /// `dropout_mask[e] = false` silences edge `e`.
    pub fn gcn_forward(
        &self,
        sub: &EnclosingSubgraph,
        target_relation: RelationId,
        dropout_mask: Option<&[bool]>,
    ) -> Result<Vec<Vec<TensorId>>> {
        let tape = self.tape;
        let cfg = &self.model.cfg;
        let d = cfg.dim;
        if let Some(mask) = dropout_mask {
            if mask.len() != sub.edges.len() {
                return Err(Error::Contract(format!(
                    "dropout mask length {} != edge count {}",
                    mask.len(),
                    sub.edges.len()
                )));
            }
        }
        let r_t = self.relation_vec(target_relation)?;
        let w_in = self.p("w_in");
        let feats = double_radius_features(sub);
        let mut z: Vec<TensorId> = feats
            .into_iter()
            .map(|row| tape.matmul(tape.leaf(Array::row(row)), w_in))
            .collect::<Result<_>>()?;

        let (w1, b1, w2, b2) = (self.p("att.w1"), self.p("att.b1"), self.p("att.w2"), self.p("att.b2"));
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let w_rel = self.p(&format!("layer{l}.w_rel"));
            let w_self = self.p(&format!("layer{l}.w_self"));
            let mut incoming: Vec<Vec<TensorId>> = vec![Vec::new(); sub.num_nodes()];
            let mut rel_cache: std::collections::HashMap<RelationId, (TensorId, TensorId)> =
                std::collections::HashMap::new();
            for (e, &(u, r, v)) in sub.edges.iter().enumerate() {
                if dropout_mask.map_or(false, |m| !m[e]) {
                    continue;
                }
                let (r_vec, w_r) = match rel_cache.get(&r) {
                    Some(&pair) => pair,
                    None => {
                        let pair = (self.relation_vec(r)?, tape.row_slice(w_rel, r * d, d)?);
                        rel_cache.insert(r, pair);
                        pair
                    }
                };
                let att_in = tape.concat_cols(&[z[v], z[u], r_vec, r_t])?;
                let y = tape.relu(tape.add(tape.matmul(att_in, w1)?, b1)?);
                let alpha = tape.sigmoid(tape.add(tape.matmul(y, w2)?, b2)?);
                let msg = tape.mul_scalar(tape.matmul(z[u], w_r)?, alpha)?;
                incoming[v].push(msg);
            }
            let mut next = Vec::with_capacity(sub.num_nodes());
            for (i, msgs) in incoming.into_iter().enumerate() {
                let own = tape.matmul(z[i], w_self)?;
                let pre = if msgs.is_empty() {
                    own
                } else {
                    tape.add(tape.sum_all(&msgs)?, own)?
                };
                next.push(tape.relu(pre));
            }
            z = next;
            layers.push(z.clone());
        }
        Ok(layers)
    }

    /// Encode one relational path: CBOW sums relation embeddings; CNN sums
    /// per-window linear maps over adjacent relation pairs (a single-relation
    /// path is its relation's embedding).
    pub fn encode_path(&self, path: &RelationalPath) -> Result<TensorId> {
        if path.is_empty() {
            return Err(Error::Contract("cannot encode an empty path".into()));
        }
        let tape = self.tape;
        let rels: Vec<TensorId> = path
            .0
            .iter()
            .map(|&r| self.relation_vec(r))
            .collect::<Result<_>>()?;
        match self.model.cfg.path_encoder {
            PathEncoder::Cbow => tape.sum_all(&rels),
            PathEncoder::Cnn => {
                if rels.len() == 1 {
                    return Ok(rels[0]);
                }
                let mut windows = Vec::with_capacity(rels.len() - 1);
                for j in 0..rels.len() - 1 {
                    let w = self.p(&format!("cnn.w{j}"));
                    let b = self.p(&format!("cnn.b{j}"));
                    let win = tape.concat_cols(&[rels[j], rels[j + 1]])?;
                    windows.push(tape.add(tape.matmul(win, w)?, b)?);
                }
                tape.sum_all(&windows)
            }
        }
    }

    /// Attention weights beta over encoded paths wrt the target relation:
    /// softmax of the dot products.
    pub fn path_attention(&self, path_vecs: &[TensorId], r_t_vec: TensorId) -> Result<TensorId> {
        if path_vecs.is_empty() {
            return Err(Error::Contract("path_attention over zero paths".into()));
        }
        let dots: Vec<TensorId> = path_vecs
            .iter()
            .map(|&p| self.tape.dot(p, r_t_vec))
            .collect::<Result<_>>()?;
        let logits = self.tape.concat_cols(&dots)?;
        Ok(self.tape.softmax_rows(logits))
    }

    /// Attention-weighted sum of path vectors; the zero vector on empty input.
    pub fn aggregate_paths(
        &self,
        path_vecs: &[TensorId],
        r_t_vec: TensorId,
    ) -> Result<(TensorId, Option<TensorId>)> {
        if path_vecs.is_empty() {
            let zero = self.tape.leaf(Array::zeros(1, self.model.cfg.dim));
            return Ok((zero, None));
        }
        let betas = self.path_attention(path_vecs, r_t_vec)?;
        let mut terms = Vec::with_capacity(path_vecs.len());
        for (i, &p) in path_vecs.iter().enumerate() {
            let beta_i = self.tape.col_select(betas, i)?;
            terms.push(self.tape.mul_scalar(p, beta_i)?);
        }
        Ok((self.tape.sum_all(&terms)?, Some(betas)))
    }

    /// Average readout over node embeddings of one layer.
    pub fn readout(&self, layer: &[TensorId]) -> Result<TensorId> {
        let sum = self.tape.sum_all(layer)?;
        Ok(self.tape.scale(sum, 1.0 / layer.len() as f64))
    }

    /// Eqs. 10-11 style score: a linear functional over
    /// [readout; all-layer head/tail embeddings; r_T; p_{h->t}].
    pub fn score(
        &self,
        layers: &[Vec<TensorId>],
        sub: &EnclosingSubgraph,
        path_repr: TensorId,
        target_relation: RelationId,
    ) -> Result<TensorId> {
        let tape = self.tape;
        let last = layers
            .last()
            .ok_or_else(|| Error::Contract("score needs at least one GCN layer".into()))?;
        let readout = self.readout(last)?;
        let mut parts = vec![readout];
        for layer in layers {
            parts.push(layer[sub.local_head()]);
            parts.push(layer[sub.local_tail()]);
        }
        parts.push(self.relation_vec(target_relation)?);
        parts.push(path_repr);
        let s = tape.concat_cols(&parts)?;
        tape.matmul(s, self.p("w_score"))
    }

    /// Full forward pass for one triple: GCN, path encoding + attention,
    /// aggregation and scoring.
    pub fn score_triple(
        &self,
        sub: &EnclosingSubgraph,
        paths: &[RelationalPath],
        target_relation: RelationId,
        dropout_mask: Option<&[bool]>,
    ) -> Result<ScoredTriple> {
        let layers = self.gcn_forward(sub, target_relation, dropout_mask)?;
        let r_t = self.relation_vec(target_relation)?;
        let path_vecs: Vec<TensorId> = paths
            .iter()
            .map(|p| self.encode_path(p))
            .collect::<Result<_>>()?;
        let (path_repr, betas) = self.aggregate_paths(&path_vecs, r_t)?;
        let score = self.score(&layers, sub, path_repr, target_relation)?;
        Ok(ScoredTriple {
            score,
            path_repr,
            betas,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, RelationVocabMode, Triple};
    use crate::subgraph::extract_enclosing_subgraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(dim: usize, encoder: PathEncoder) -> Model {
        let cfg = ModelConfig {
            num_layers: 2,
            dim,
            k: 2,
            l_max: 3,
            path_encoder: encoder,
            cnn_window: 2,
            edge_dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Model::new(cfg, 3, &mut rng).unwrap()
    }

    fn toy_sub() -> (KnowledgeGraph, EnclosingSubgraph, RelationId) {
        let g = KnowledgeGraph::from_named(
            [("a", "r0", "b"), ("b", "r1", "c"), ("a", "r2", "c")],
            RelationVocabMode::Fresh,
        )
        .unwrap()
        .add_inverse_relations()
        .unwrap();
        let target = Triple::new(
            g.entity_vocab().get("a").unwrap(),
            g.relation_vocab().get("r2").unwrap(),
            g.entity_vocab().get("c").unwrap(),
        );
        let sub = extract_enclosing_subgraph(&g, &target, 2, true).unwrap();
        let r = target.relation;
        (g, sub, r)
    }

    fn set_param(model: &mut Model, name: &str, value: Array) {
        *model.params.get_mut(name).unwrap() = value;
    }

    #[test]
    fn isolated_node_with_zero_weights_stays_zero() {
        let mut model = tiny_model(3, PathEncoder::Cbow);
        set_param(&mut model, "w_in", Array::zeros(6, 3));
        let g = KnowledgeGraph::from_named(
            [("h", "rt", "t"), ("x", "r0", "y"), ("z", "r1", "w")],
            RelationVocabMode::Fresh,
        )
        .unwrap()
        .add_inverse_relations()
        .unwrap();
        let target = Triple::new(
            g.entity_vocab().get("h").unwrap(),
            g.relation_vocab().get("rt").unwrap(),
            g.entity_vocab().get("t").unwrap(),
        );
        let sub = extract_enclosing_subgraph(&g, &target, 2, true).unwrap();
        assert!(sub.edges.is_empty());
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let layers = bound.gcn_forward(&sub, target.relation, None).unwrap();
        for layer in &layers {
            for &z in layer {
                assert!(tape.value(z).data.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn attention_weights_land_in_unit_interval() {
        let model = tiny_model(4, PathEncoder::Cbow);
        let (_, sub, r) = toy_sub();
        let tape = Tape::new();
        let bound = model.bind(&tape);
        // Recompute one edge's alpha by hand from the forward pieces.
        let layers = bound.gcn_forward(&sub, r, None).unwrap();
        assert_eq!(layers.len(), 2);
        // alpha is sigmoid output; probe the formula directly on the first edge.
        let r_t = bound.relation_vec(r).unwrap();
        let &(u, er, v) = &sub.edges[0];
        let z0: Vec<TensorId> = double_radius_features(&sub)
            .into_iter()
            .map(|row| tape.matmul(tape.leaf(Array::row(row)), bound.p("w_in")).unwrap())
            .collect();
        let att_in = tape
            .concat_cols(&[z0[v], z0[u], bound.relation_vec(er).unwrap(), r_t])
            .unwrap();
        let y = tape.relu(
            tape.add(tape.matmul(att_in, bound.p("att.w1")).unwrap(), bound.p("att.b1"))
                .unwrap(),
        );
        let alpha = tape.sigmoid(
            tape.add(tape.matmul(y, bound.p("att.w2")).unwrap(), bound.p("att.b2"))
                .unwrap(),
        );
        let a = tape.value_scalar(alpha);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn scalar_gcn_matches_hand_computation() {
        // 2 nodes, 1 edge, 1-dim weights set by hand.
        let cfg = ModelConfig {
            num_layers: 1,
            dim: 1,
            k: 1,
            l_max: 1,
            path_encoder: PathEncoder::Cbow,
            cnn_window: 2,
            edge_dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::new(cfg, 1, &mut rng).unwrap();
        let g = KnowledgeGraph::from_named([("h", "r", "t")], RelationVocabMode::Fresh)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let target = Triple::new(0, 0, 1);
        let sub = extract_enclosing_subgraph(&g, &target, 1, false).unwrap();
        // Hand-set everything scalar: features width 2k+2 = 4.
        set_param(&mut model, "w_in", Array::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]));
        set_param(&mut model, "rel_emb", Array::from_rows(vec![vec![0.5], vec![-0.5]]));
        set_param(&mut model, "layer0.w_rel", Array::from_rows(vec![vec![2.0], vec![3.0]]));
        set_param(&mut model, "layer0.w_self", Array::scalar(0.25));
        set_param(&mut model, "att.w1", Array::zeros(4, 1));
        set_param(&mut model, "att.b1", Array::zeros(1, 1));
        set_param(&mut model, "att.w2", Array::zeros(1, 1));
        set_param(&mut model, "att.b2", Array::zeros(1, 1));
        // alpha = sigmoid(0) = 0.5 on every edge.
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let layers = bound.gcn_forward(&sub, 0, None).unwrap();
        // Node features: h labeled (0,1) -> [1,0,0,1] -> z = 1*1 + 4*1 = 5.
        //                t labeled (1,0) -> [0,1,1,0] -> z = 2 + 3 = 5.
        // Edges: (h,r0,t) and (t,r0inv,h), both alpha = 0.5.
        // t gets: relu(0.5 * 2.0 * 5 + 0.25 * 5) = relu(5 + 1.25) = 6.25
        // h gets: relu(0.5 * 3.0 * 5 + 0.25 * 5) = relu(7.5 + 1.25) = 8.75
        let zh = tape.value_scalar(layers[0][sub.local_head()]);
        let zt = tape.value_scalar(layers[0][sub.local_tail()]);
        assert!((zh - 8.75).abs() < 1e-12, "zh = {zh}");
        assert!((zt - 6.25).abs() < 1e-12, "zt = {zt}");
    }

    #[test]
    fn cbow_sums_and_is_order_insensitive() {
        let mut model = tiny_model(2, PathEncoder::Cbow);
        set_param(
            &mut model,
            "rel_emb",
            Array::from_rows(vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![2.0, 2.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
            ]),
        );
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let ab = bound.encode_path(&RelationalPath(vec![0, 1])).unwrap();
        let ba = bound.encode_path(&RelationalPath(vec![1, 0])).unwrap();
        assert_eq!(tape.value(ab).data, vec![1.0, 1.0]);
        assert_eq!(tape.value(ab), tape.value(ba));
    }

    #[test]
    fn cnn_single_relation_is_the_embedding() {
        let model = tiny_model(4, PathEncoder::Cnn);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let p = bound.encode_path(&RelationalPath(vec![2])).unwrap();
        let emb = bound.relation_vec(2).unwrap();
        assert_eq!(tape.value(p), tape.value(emb));
    }

    #[test]
    fn empty_path_is_a_contract_error() {
        let model = tiny_model(2, PathEncoder::Cbow);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        assert!(matches!(
            bound.encode_path(&RelationalPath(vec![])),
            Err(Error::Contract(_))
        ));
    }

    fn attention_fixture(dots: &[f64]) -> Vec<f64> {
        // Build unit-dim paths whose dot with r_T = the requested logits.
        let model = tiny_model(1, PathEncoder::Cbow);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let r_t = tape.leaf(Array::row(vec![1.0]));
        let vecs: Vec<TensorId> = dots.iter().map(|&d| tape.leaf(Array::row(vec![d]))).collect();
        let betas = bound.path_attention(&vecs, r_t).unwrap();
        tape.value(betas).data
    }

    #[test]
    fn path_attention_fixtures() {
        assert_eq!(attention_fixture(&[3.7]), vec![1.0]);
        let even = attention_fixture(&[1.25, 1.25]);
        assert!((even[0] - 0.5).abs() < 1e-12 && (even[1] - 0.5).abs() < 1e-12);
        let skew = attention_fixture(&[3.0f64.ln(), 0.0]);
        assert!((skew[0] - 0.75).abs() < 1e-12, "{skew:?}");
        assert!((skew[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn betas_form_a_distribution() {
        let betas = attention_fixture(&[0.3, -2.0, 5.5, 1.1]);
        assert!(betas.iter().all(|&b| b > 0.0 && b <= 1.0));
        assert!((betas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shifting_logits_leaves_betas_unchanged() {
        let base = attention_fixture(&[0.4, -1.0, 2.0]);
        let shifted = attention_fixture(&[0.4 + 7.0, -1.0 + 7.0, 2.0 + 7.0]);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_fixtures() {
        let model = tiny_model(2, PathEncoder::Cbow);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        // Single path: aggregation is the path itself.
        let v = tape.leaf(Array::row(vec![0.5, -1.5]));
        let r_t = tape.leaf(Array::row(vec![1.0, 0.0]));
        let (agg, betas) = bound.aggregate_paths(&[v], r_t).unwrap();
        assert_eq!(tape.value(agg), tape.value(v));
        assert_eq!(tape.value(betas.unwrap()).data, vec![1.0]);
        // Two equal vectors: convex combination is the vector.
        let a = tape.leaf(Array::row(vec![2.0, 2.0]));
        let b = tape.leaf(Array::row(vec![2.0, 2.0]));
        let (agg, _) = bound.aggregate_paths(&[a, b], r_t).unwrap();
        assert_eq!(tape.value(agg).data, vec![2.0, 2.0]);
        // beta (0.75, 0.25) over [2,0],[0,2] -> [1.5, 0.5]; arrange dots ln3, 0
        // with r_T = [ln3/2, 0] ... easier: unit-dim style via dot values.
        let r_t = tape.leaf(Array::row(vec![3.0f64.ln() / 2.0, 0.0]));
        let p1 = tape.leaf(Array::row(vec![2.0, 0.0]));
        let p2 = tape.leaf(Array::row(vec![0.0, 2.0]));
        let (agg, betas) = bound.aggregate_paths(&[p1, p2], r_t).unwrap();
        let b = tape.value(betas.unwrap());
        assert!((b.data[0] - 0.75).abs() < 1e-12);
        let got = tape.value(agg);
        assert!((got.data[0] - 1.5).abs() < 1e-12 && (got.data[1] - 0.5).abs() < 1e-12);
        // Empty set: zero vector, no betas.
        let (agg, betas) = bound.aggregate_paths(&[], r_t).unwrap();
        assert!(betas.is_none());
        assert_eq!(tape.value(agg).data, vec![0.0, 0.0]);
    }

    #[test]
    fn readout_fixtures() {
        let model = tiny_model(1, PathEncoder::Cbow);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let one = tape.leaf(Array::row(vec![4.0]));
        assert_eq!(tape.value(bound.readout(&[one]).unwrap()).data, vec![4.0]);
        let v = tape.leaf(Array::row(vec![1.5]));
        let nv = tape.leaf(Array::row(vec![-1.5]));
        assert_eq!(tape.value(bound.readout(&[v, nv]).unwrap()).data, vec![0.0]);
        let xs: Vec<TensorId> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&x| tape.leaf(Array::row(vec![x])))
            .collect();
        assert_eq!(tape.value(bound.readout(&xs).unwrap()).data, vec![2.0]);
    }

    #[test]
    fn score_is_linear_in_w_score_and_zero_map_gives_zero() {
        let mut model = tiny_model(2, PathEncoder::Cbow);
        let (_, sub, r) = toy_sub();
        let score_with = |model: &Model| {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let out = bound
                .score_triple(&sub, &[RelationalPath(vec![0, 1])], r, None)
                .unwrap();
            tape.value_scalar(out.score)
        };
        let f1 = score_with(&model);
        let w = model.params.get("w_score").unwrap().clone();
        let doubled = Array {
            rows: w.rows,
            cols: w.cols,
            data: w.data.iter().map(|&x| 2.0 * x).collect(),
        };
        set_param(&mut model, "w_score", doubled);
        let f2 = score_with(&model);
        assert!((f2 - 2.0 * f1).abs() < 1e-9);
        set_param(&mut model, "w_score", Array::zeros(w.rows, w.cols));
        assert_eq!(score_with(&model), 0.0);
    }

    #[test]
    fn hand_built_score_dot_product() {
        // All concat entries zero except r_T contributing 0.5 with W_s = ones.
        let cfg = ModelConfig {
            num_layers: 1,
            dim: 1,
            k: 1,
            l_max: 1,
            path_encoder: PathEncoder::Cbow,
            cnn_window: 2,
            edge_dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::new(cfg.clone(), 1, &mut rng).unwrap();
        set_param(&mut model, "w_in", Array::zeros(4, 1));
        set_param(&mut model, "rel_emb", Array::from_rows(vec![vec![0.5], vec![0.0]]));
        set_param(&mut model, "layer0.w_rel", Array::zeros(2, 1));
        set_param(&mut model, "layer0.w_self", Array::scalar(0.0));
        let width = cfg.score_width();
        set_param(&mut model, "w_score", Array {
            rows: width,
            cols: 1,
            data: vec![1.0; width],
        });
        let g = KnowledgeGraph::from_named([("h", "r", "t")], RelationVocabMode::Fresh)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let sub = extract_enclosing_subgraph(&g, &Triple::new(0, 0, 1), 1, true).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let out = bound.score_triple(&sub, &[], 0, None).unwrap();
        assert!((tape.value_scalar(out.score) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_edges_masked_equals_self_transform() {
        let model = tiny_model(3, PathEncoder::Cbow);
        let (_, sub, r) = toy_sub();
        let mask = vec![false; sub.edges.len()];
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let masked = bound.gcn_forward(&sub, r, Some(&mask)).unwrap();
        // Expected: z' = relu(z @ w_self) iterated per layer.
        let w_in = model.params.get("w_in").unwrap();
        let feats = double_radius_features(&sub);
        let check_tape = Tape::new();
        let mut zs: Vec<TensorId> = feats
            .into_iter()
            .map(|row| {
                check_tape
                    .matmul(check_tape.leaf(Array::row(row)), check_tape.leaf(w_in.clone()))
                    .unwrap()
            })
            .collect();
        for l in 0..model.cfg.num_layers {
            let w_self = check_tape.leaf(model.params.get(&format!("layer{l}.w_self")).unwrap().clone());
            zs = zs
                .iter()
                .map(|&z| check_tape.relu(check_tape.matmul(z, w_self).unwrap()))
                .collect();
            for (i, &z) in zs.iter().enumerate() {
                assert_eq!(check_tape.value(z), tape.value(masked[l][i]));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let model = tiny_model(3, PathEncoder::Cbow);
        let restored = Model::from_json(&model.to_json()).unwrap();
        assert_eq!(restored.num_relations, model.num_relations);
        assert_eq!(restored.num_base_relations, model.num_base_relations);
        let (_, sub, r) = toy_sub();
        let score = |m: &Model| {
            let tape = Tape::new();
            let paths = [crate::paths::RelationalPath(vec![0, 1])];
            let out = m.bind(&tape).score_triple(&sub, &paths, r, None).unwrap();
            tape.value_scalar(out.score)
        };
        assert_eq!(score(&model), score(&restored));
    }

    #[test]
    fn checkpoint_version_mismatch_is_rejected() {
        let model = tiny_model(3, PathEncoder::Cbow);
        let mut doc: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        doc["format_version"] = serde_json::json!(9999);
        let err = Model::from_json(&doc.to_string()).unwrap_err();
        assert!(matches!(err, crate::error::Error::Compat(_)), "{err}");
    }
}
