//! Joint training: margin ranking over triples, path contrast, relation
//! supervision, Adam, and a deterministic single-threaded epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator;
use crate::kg::{KnowledgeGraph, RelationId, Triple};
use crate::model::{Model, ModelConfig};
use crate::paths::{enumerate_paths, generate_negative_paths, RelationalPath};
use crate::subgraph::{extract_enclosing_subgraph, EnclosingSubgraph};
use crate::tensor::{softplus, Array, ParamStore, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoPaths,
    NoContrasts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// 1-based epoch counts at which to snapshot the parameters into
    /// `TrainOutcome::snapshots` (e.g. for comparing epoch budgets without
    /// retraining).
    pub snapshot_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 10.0,
            lambda1: 1.0,
            lambda2: 1.0,
            learning_rate: 0.001,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            ablation: Ablation::Full,
            snapshot_epochs: Vec::new(),
        }
    }
}

/// Loss weights tuned per benchmark family; anything unrecognized gets the
/// neutral (1.0, 1.0).
pub fn default_lambdas(dataset_name: &str) -> (f64, f64) {
    let lower = dataset_name.to_lowercase();
    if lower.contains("wn18rr") {
        (1.0, 1.2)
    } else if lower.contains("fb15k-237") || lower.contains("fb15k237") {
        (0.8, 0.8)
    } else {
        (1.0, 1.0)
    }
}

/// Margin ranking loss max(0, eta + f_neg - f_pos).
pub fn loss_margin(f_pos: f64, f_neg: f64, eta: f64) -> f64 {
    (eta + f_neg - f_pos).max(0.0)
}

/// Path contrast: softplus of the negative path's affinity to the target
/// relation minus the positive's, i.e. -log sigmoid(d_plus - d_minus).
pub fn loss_path_contrast(p_plus: &[f64], p_minus: &[f64], r_t: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    softplus(dot(p_minus, r_t) - dot(p_plus, r_t))
}

/// Cross-entropy of the aggregated path representation against the target
/// relation, with logits = dots against every base relation embedding.
pub fn loss_supervised(p: &[f64], base_rel_rows: &[Vec<f64>], target: usize) -> f64 {
    let logits: Vec<f64> = base_rel_rows
        .iter()
        .map(|row| row.iter().zip(p).map(|(x, y)| x * y).sum())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Combine the three terms under an ablation: the contrastive terms are only
/// active for the full model.
pub fn total_loss(
    l_margin: f64,
    l_contrast: f64,
    l_supervised: f64,
    lambda1: f64,
    lambda2: f64,
    ablation: Ablation,
) -> f64 {
    match ablation {
        Ablation::Full => l_margin + lambda1 * l_contrast + lambda2 * l_supervised,
        Ablation::NoPaths | Ablation::NoContrasts => l_margin,
    }
}

/// Corrupt head or tail (uniformly) with a uniform entity, rejecting
/// corruptions present in the graph; <= 100 attempts.
pub fn sample_negative_triple<R: Rng>(
    g: &KnowledgeGraph,
    triple: &Triple,
    rng: &mut R,
) -> Result<Triple> {
    let n = g.entity_count();
    if n < 2 {
        return Err(Error::Sampling("graph has fewer than 2 entities".into()));
    }
    for _ in 0..100 {
        let corrupt_head: bool = rng.gen();
        let e = rng.gen_range(0..n);
        let cand = if corrupt_head {
            Triple::new(e, triple.relation, triple.tail)
        } else {
            Triple::new(triple.head, triple.relation, e)
        };
        if cand != *triple && !g.contains(&cand) {
            return Ok(cand);
        }
    }
    Err(Error::Sampling(format!(
        "no valid corruption found for ({}, {}, {}) after 100 attempts",
        triple.head, triple.relation, triple.tail
    )))
}

/// Everything random about one training example, fixed up front so the same
/// example can be replayed (e.g. for finite-difference checks).
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub relation: RelationId,
    pub sub_pos: EnclosingSubgraph,
    pub paths_pos: Vec<RelationalPath>,
    /// one corruption per positive path, for the contrast loss
    pub neg_paths_pos: Vec<RelationalPath>,
    pub sub_neg: EnclosingSubgraph,
    /// corruptions of the negative triple's own paths, used as its path input
    pub neg_paths_neg: Vec<RelationalPath>,
    pub mask_pos: Option<Vec<bool>>,
    pub mask_neg: Option<Vec<bool>>,
}

pub fn prepare_example<R: Rng>(
    g: &KnowledgeGraph,
    triple: &Triple,
    model_cfg: &ModelConfig,
    ablation: Ablation,
    rng: &mut R,
) -> Result<PreparedExample> {
    // Every randomness consumer gets its own stream derived from one draw, so
    // an example consumes the same amount of the caller's rng no matter which
    // ablation runs. Ablations then train on common random numbers (same
    // init, same batch order, same negative draws) and their comparison is
    // paired, not confounded by diverged sampling sequences.
    let example_seed: u64 = rng.gen();
    let sub_rng = |salt: u64| ChaCha8Rng::seed_from_u64(example_seed ^ salt);
    let mut triple_rng = sub_rng(0x7472);
    let mut path_rng = sub_rng(0x7061);
    let mut drop_rng = sub_rng(0x6472);
    let neg_triple = sample_negative_triple(g, triple, &mut triple_rng)?;
    let sub_pos = extract_enclosing_subgraph(g, triple, model_cfg.k, true)?;
    let sub_neg = extract_enclosing_subgraph(g, &neg_triple, model_cfg.k, true)?;
    let (paths_pos, neg_paths_pos, neg_paths_neg) = if ablation == Ablation::NoPaths {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        let paths_pos = enumerate_paths(&sub_pos, model_cfg.l_max);
        let neg_paths_pos = if paths_pos.is_empty() || ablation == Ablation::NoContrasts {
            Vec::new()
        } else {
            generate_negative_paths(&paths_pos, g.relation_count(), &mut path_rng)?
        };
        let paths_neg = enumerate_paths(&sub_neg, model_cfg.l_max);
        let neg_paths_neg = if paths_neg.is_empty() {
            Vec::new()
        } else {
            generate_negative_paths(&paths_neg, g.relation_count(), &mut path_rng)?
        };
        (paths_pos, neg_paths_pos, neg_paths_neg)
    };
    let mut mask = |edges: usize| {
        (model_cfg.edge_dropout > 0.0).then(|| {
            (0..edges)
                .map(|_| drop_rng.gen::<f64>() >= model_cfg.edge_dropout)
                .collect()
        })
    };
    let mask_pos = mask(sub_pos.edges.len());
    let mask_neg = mask(sub_neg.edges.len());
    Ok(PreparedExample {
        relation: triple.relation,
        sub_pos,
        paths_pos,
        neg_paths_pos,
        sub_neg,
        neg_paths_neg,
        mask_pos,
        mask_neg,
    })
}

/// Tape handle for the total loss plus the detached values of its terms.
pub struct LossParts {
    pub total: TensorId,
    pub margin: f64,
    pub contrast: f64,
    pub supervised: f64,
}

/// Build the joint loss for one prepared example on the tape backing `bm`.
pub fn example_loss(
    bm: &crate::model::BoundModel<'_>,
    ex: &PreparedExample,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let tape = bm.tape;
    let pos = bm.score_triple(&ex.sub_pos, &ex.paths_pos, ex.relation, ex.mask_pos.as_deref())?;
    let neg = bm.score_triple(&ex.sub_neg, &ex.neg_paths_neg, ex.relation, ex.mask_neg.as_deref())?;
    let l_margin = tape.relu(tape.add_const(tape.sub(neg.score, pos.score)?, cfg.margin));
    let mut total = l_margin;
    let mut contrast = 0.0;
    let mut supervised = 0.0;

    if cfg.ablation == Ablation::Full && !ex.paths_pos.is_empty() {
        let r_t = bm.relation_vec(ex.relation)?;
        // Contrast: the positive aggregation should align with r_T better
        // than the aggregation of corrupted paths.
        let neg_vecs: Vec<TensorId> = ex
            .neg_paths_pos
            .iter()
            .map(|p| bm.encode_path(p))
            .collect::<Result<_>>()?;
        let (p_minus, _) = bm.aggregate_paths(&neg_vecs, r_t)?;
        let d_plus = tape.dot(pos.path_repr, r_t)?;
        let d_minus = tape.dot(p_minus, r_t)?;
        let l_contrast = tape.softplus(tape.sub(d_minus, d_plus)?);
        contrast = tape.value_scalar(l_contrast);
        total = tape.add(total, tape.scale(l_contrast, cfg.lambda1))?;

        // Supervision: classify the aggregated paths as the target relation
        // among the base relations.
        if ex.relation >= bm.model.num_base_relations {
            return Err(Error::Contract(format!(
                "training target relation {} is not a base relation",
                ex.relation
            )));
        }
        let logits: Vec<TensorId> = (0..bm.model.num_base_relations)
            .map(|r| tape.dot(pos.path_repr, bm.relation_vec(r)?))
            .collect::<Result<_>>()?;
        let row = tape.concat_cols(&logits)?;
        let l_supervised = tape.sub(tape.logsumexp_row(row)?, logits[ex.relation])?;
        supervised = tape.value_scalar(l_supervised);
        total = tape.add(total, tape.scale(l_supervised, cfg.lambda2))?;
    }
    Ok(LossParts {
        total,
        margin: tape.value_scalar(l_margin),
        contrast,
        supervised,
    })
}

/// Adam with bias correction; state is index-aligned with the `ParamStore`.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(learning_rate: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Array> = (0..store.len())
            .map(|i| {
                let a = store.array(i);
                Array::zeros(a.rows, a.cols)
            })
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "adam got {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for idx in 0..store.len() {
            if !store.is_trainable(idx) {
                continue;
            }
            let g = &grads[idx];
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let p = store.array_mut(idx);
            for i in 0..p.data.len() {
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g.data[i];
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_margin: f64,
    pub mean_contrast: f64,
    pub mean_supervised: f64,
    pub valid_auc_pr: Option<f64>,
    /// wall-clock time; excluded from serialized logs so artifacts stay
    /// bitwise-reproducible
    #[serde(skip_serializing)]
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// the model carrying the best-validation (or final) parameters
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    /// (epochs trained, parameters) pairs requested via
    /// `TrainConfig::snapshot_epochs`
    pub snapshots: Vec<(usize, ParamStore)>,
}

/// Deterministic single-threaded training. Model selection keeps the
/// checkpoint with the best validation AUC-PR; without validation triples the
/// final parameters win.
pub fn train(
    g: &KnowledgeGraph,
    train_targets: &[Triple],
    valid_targets: &[Triple],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !g.has_inverses() {
        return Err(Error::Contract("train needs a graph with inverse relations".into()));
    }
    if train_targets.is_empty() {
        return Err(Error::Contract("train needs at least one target triple".into()));
    }
    if let Some(t) = train_targets
        .iter()
        .chain(valid_targets)
        .find(|t| t.relation >= g.num_base_relations())
    {
        return Err(Error::Contract(format!(
            "target relation {} is not a base relation",
            t.relation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(model_cfg, g.num_base_relations(), &mut rng)?;
    let mut adam = Adam::new(cfg.learning_rate, &model.params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..train_targets.len()).collect();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut grad_acc: Vec<Array> = (0..model.params.len())
                .map(|i| {
                    let a = model.params.array(i);
                    Array::zeros(a.rows, a.cols)
                })
                .collect();
            for &i in chunk {
                let triple = &train_targets[i];
                let ex = prepare_example(g, triple, &model.cfg, cfg.ablation, &mut rng)?;
                let tape = crate::tensor::Tape::new();
                let bm = model.bind(&tape);
                let parts = example_loss(&bm, &ex, cfg)?;
                let loss = tape.value_scalar(parts.total);
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at epoch {epoch} on triple \
                         ({}, {}, {}) [margin {} contrast {} supervised {}]",
                        triple.head,
                        triple.relation,
                        triple.tail,
                        parts.margin,
                        parts.contrast,
                        parts.supervised
                    )));
                }
                sums.0 += loss;
                sums.1 += parts.margin;
                sums.2 += parts.contrast;
                sums.3 += parts.supervised;
                let grads = tape.backward(parts.total)?;
                for (acc, g) in grad_acc.iter_mut().zip(bm.bound.grads_by_index(&model.params, &grads)) {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b / chunk.len() as f64;
                    }
                }
            }
            adam.step(&mut model.params, &grad_acc)?;
            if !model.params.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameter after update at epoch {epoch}"
                )));
            }
        }
        let n = train_targets.len() as f64;
        let valid_auc_pr = if valid_targets.is_empty() {
            None
        } else {
            Some(validation_auc(&model, g, valid_targets, cfg, epoch)?)
        };
        if let Some(auc) = valid_auc_pr {
            // Ties go to the later epoch: with a small validation set the AUC
            // plateaus early while the model is still improving.
            if best.as_ref().map_or(true, |(b, _, _)| auc >= *b) {
                best = Some((auc, epoch, model.params.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            mean_loss: sums.0 / n,
            mean_margin: sums.1 / n,
            mean_contrast: sums.2 / n,
            mean_supervised: sums.3 / n,
            valid_auc_pr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", serde_json::to_string(&entry).expect("serialize epoch log"));
        log.push(entry);
        if cfg.snapshot_epochs.contains(&(epoch + 1)) {
            snapshots.push((epoch + 1, model.params.clone()));
        }
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        snapshots,
    })
}

/// AUC-PR on the validation triples with one sampled corruption per positive.
fn validation_auc(
    model: &Model,
    g: &KnowledgeGraph,
    valid: &[Triple],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    evaluator::auc_with_sampled_negatives(
        model,
        g,
        valid,
        cfg.seed ^ 0x5eed ^ ((epoch as u64) << 17),
        cfg.ablation != Ablation::NoPaths,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationVocabMode;
    use crate::model::PathEncoder;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} !~ {b}");
    }

    #[test]
    fn margin_fixtures() {
        approx(loss_margin(5.0, 1.0, 10.0), 6.0, 1e-12);
        // Saturated: positive ahead by more than the margin.
        approx(loss_margin(20.0, 1.0, 10.0), 0.0, 1e-12);
        // Tie scores exactly the margin.
        approx(loss_margin(3.0, 3.0, 10.0), 10.0, 1e-12);
    }

    #[test]
    fn contrast_equal_affinities_is_ln2() {
        let p = vec![1.0, 2.0];
        let r = vec![0.5, -0.5];
        approx(loss_path_contrast(&p, &p, &r), 2.0f64.ln(), 1e-12);
    }

    #[test]
    fn contrast_vanishes_when_positive_dominates() {
        let r = vec![1.0];
        let well_separated = loss_path_contrast(&[40.0], &[0.0], &r);
        assert!(well_separated < 1e-12);
        // And grows as the negative overtakes.
        let bad = loss_path_contrast(&[0.0], &[5.0], &r);
        assert!(bad > loss_path_contrast(&[0.0], &[1.0], &r));
    }

    #[test]
    fn supervised_uniform_over_nine_is_ln9() {
        let rows = vec![vec![0.3, -0.7]; 9];
        let got = loss_supervised(&[1.0, 2.0], &rows, 4);
        approx(got, 9.0f64.ln(), 1e-12);
        approx(got, 2.1972245773362196, 1e-12);
    }

    #[test]
    fn supervised_single_relation_is_zero() {
        approx(loss_supervised(&[1.0], &[vec![2.0]], 0), 0.0, 1e-12);
    }

    #[test]
    fn supervised_fixture_three_way() {
        // logits (2, 0, 0), target 0: lse - 2 = ln(e^2 + 2) - 2.
        let rows = vec![vec![2.0], vec![0.0], vec![0.0]];
        let want = (2.0f64.exp() + 2.0).ln() - 2.0;
        approx(loss_supervised(&[1.0], &rows, 0), want, 1e-12);
    }

    #[test]
    fn total_loss_weighted_sum_fixture() {
        let got = total_loss(6.0, 0.7, 2.2, 1.0, 1.2, Ablation::Full);
        approx(got, 9.34, 1e-12);
        approx(total_loss(6.0, 0.7, 2.2, 1.0, 1.2, Ablation::NoContrasts), 6.0, 1e-12);
        approx(total_loss(6.0, 0.7, 2.2, 1.0, 1.2, Ablation::NoPaths), 6.0, 1e-12);
    }

    #[test]
    fn dataset_lambda_table() {
        assert_eq!(default_lambdas("WN18RR_v1"), (1.0, 1.2));
        assert_eq!(default_lambdas("fb15k-237_v3"), (0.8, 0.8));
        assert_eq!(default_lambdas("nell-995"), (1.0, 1.0));
    }

    fn toy_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_named(
            [
                ("a", "body_a", "m1"),
                ("m1", "body_b", "b"),
                ("a", "target", "b"),
                ("c", "body_a", "m2"),
                ("m2", "body_b", "d"),
                ("c", "target", "d"),
                ("b", "noise", "c"),
                ("d", "noise", "a"),
            ],
            RelationVocabMode::Fresh,
        )
        .unwrap()
        .add_inverse_relations()
        .unwrap()
    }

    fn toy_targets(g: &KnowledgeGraph) -> Vec<Triple> {
        let r = g.relation_vocab().get("target").unwrap();
        g.triples()
            .iter()
            .filter(|t| t.relation == r)
            .copied()
            .collect()
    }

    #[test]
    fn negative_triples_avoid_the_graph() {
        let g = toy_graph();
        let t = toy_targets(&g)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = sample_negative_triple(&g, &t, &mut rng).unwrap();
            assert!(!g.contains(&n));
            assert_ne!(n, t);
            assert_eq!(n.relation, t.relation);
            assert!(n.head == t.head || n.tail == t.tail);
        }
    }

    #[test]
    fn negative_sampling_on_two_entities() {
        let g = KnowledgeGraph::from_named([("a", "r", "b")], RelationVocabMode::Fresh).unwrap();
        let t = Triple::new(0, 0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = sample_negative_triple(&g, &t, &mut rng).unwrap();
            assert!(n == Triple::new(1, 0, 1) || n == Triple::new(0, 0, 0));
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Array::row(vec![5.0, -3.0]), true).unwrap();
        let mut adam = Adam::new(0.1, &store);
        let loss = |s: &ParamStore| s.get("x").unwrap().data.iter().map(|v| v * v).sum::<f64>();
        let before = loss(&store);
        for _ in 0..200 {
            let g = Array::row(store.get("x").unwrap().data.iter().map(|v| 2.0 * v).collect());
            adam.step(&mut store, &[g]).unwrap();
        }
        assert!(loss(&store) < before * 1e-3);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut store = ParamStore::new();
        store.add("x", Array::row(vec![1.0, 2.0]), true).unwrap();
        let snapshot = store.get("x").unwrap().clone();
        let mut adam = Adam::new(0.0, &store);
        adam.step(&mut store, &[Array::row(vec![10.0, -10.0])]).unwrap();
        assert_eq!(store.get("x").unwrap(), &snapshot);
    }

    fn tiny_cfg(ablation: Ablation, epochs: usize) -> (ModelConfig, TrainConfig) {
        let model_cfg = ModelConfig {
            num_layers: 2,
            dim: 4,
            k: 2,
            l_max: 3,
            path_encoder: PathEncoder::Cbow,
            cnn_window: 2,
            edge_dropout: 0.3,
            ..Default::default()
        };
        let train_cfg = TrainConfig {
            epochs,
            batch_size: 2,
            seed: 11,
            ablation,
            ..Default::default()
        };
        (model_cfg, train_cfg)
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let g = toy_graph();
        let targets = toy_targets(&g);
        let (mc, tc) = tiny_cfg(Ablation::Full, 0);
        let out = train(&g, &targets, &[], mc.clone(), &tc).unwrap();
        assert!(out.log.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let fresh = Model::new(mc, g.num_base_relations(), &mut rng).unwrap();
        assert_eq!(out.model.params.to_json(), fresh.params.to_json());
    }

    #[test]
    fn zero_learning_rate_training_is_a_no_op_on_params() {
        let g = toy_graph();
        let targets = toy_targets(&g);
        let (mc, mut tc) = tiny_cfg(Ablation::Full, 1);
        tc.learning_rate = 0.0;
        let out = train(&g, &targets, &[], mc.clone(), &tc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let fresh = Model::new(mc, g.num_base_relations(), &mut rng).unwrap();
        assert_eq!(out.model.params.to_json(), fresh.params.to_json());
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let g = toy_graph();
        let targets = toy_targets(&g);
        let valid = vec![targets[1]];
        let (mc, tc) = tiny_cfg(Ablation::Full, 2);
        let a = train(&g, &targets, &valid, mc.clone(), &tc).unwrap();
        let b = train(&g, &targets, &valid, mc, &tc).unwrap();
        assert_eq!(a.model.params.to_json(), b.model.params.to_json());
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn no_paths_training_ignores_the_path_budget() {
        // With the path branch ablated the walk bound must not matter: the
        // same seed yields bitwise-identical parameters for l_max 1 and 3.
        let g = toy_graph();
        let targets = toy_targets(&g);
        let (mut mc, tc) = tiny_cfg(Ablation::NoPaths, 2);
        mc.l_max = 1;
        let a = train(&g, &targets, &[], mc.clone(), &tc).unwrap();
        mc.l_max = 3;
        let b = train(&g, &targets, &[], mc, &tc).unwrap();
        assert_eq!(a.model.params.to_json(), b.model.params.to_json());
    }

    #[test]
    fn non_base_target_relation_is_rejected() {
        let g = toy_graph();
        let mut t = toy_targets(&g)[0];
        t.relation += g.num_base_relations();
        let (mc, tc) = tiny_cfg(Ablation::Full, 1);
        assert!(matches!(
            train(&g, &[t], &[], mc, &tc),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn example_loss_gradients_match_finite_differences() {
        // Small end-to-end gradient smoke test on one prepared example.
        let g = toy_graph();
        let t = toy_targets(&g)[0];
        let (mut mc, tc) = tiny_cfg(Ablation::Full, 1);
        mc.dim = 2;
        mc.edge_dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(mc.clone(), g.num_base_relations(), &mut rng).unwrap();
        let ex = prepare_example(&g, &t, &mc, Ablation::Full, &mut rng).unwrap();
        assert!(!ex.paths_pos.is_empty(), "fixture should have paths");
        let f = |p: &ParamStore| {
            let probe = Model {
                cfg: mc.clone(),
                params: p.clone(),
                num_relations: model.num_relations,
                num_base_relations: model.num_base_relations,
            };
            let tape = crate::tensor::Tape::new();
            let bm = probe.bind(&tape);
            let parts = example_loss(&bm, &ex, &tc).unwrap();
            let grads = tape.backward(parts.total).unwrap();
            (
                tape.value_scalar(parts.total),
                bm.bound.grads_by_name(&probe.params, &grads),
            )
        };
        let report = crate::tensor::gradient_check(&model.params, &f, 1e-5, 1e-4);
        assert!(report.pass(), "max rel err {}", report.max_rel_err());
    }
}
