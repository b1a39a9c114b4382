//! Triple store: vocabularies, adjacency indices and the fully-inductive
//! train / ind-test split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// Suffix appended to a relation name for its inverse in vocabulary dumps.
pub const INVERSE_SUFFIX: &str = "::inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Bidirectional string <-> dense id map; ids are assigned in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut v = Vocab::new();
        for n in names {
            v.intern(&n);
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// How relation ids are assigned while loading a triple file.
pub enum RelationVocabMode {
    /// Assign fresh ids in first-appearance order.
    Fresh,
    /// Start from an existing vocabulary; new relation names extend it.
    Extend(Vocab),
    /// Reuse an existing vocabulary; unknown relation names are an error.
    Frozen(Vocab),
}

/// Immutable triple store with per-entity adjacency indices.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    entity_vocab: Vocab,
    relation_vocab: Vocab,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    in_index: Vec<Vec<(RelationId, EntityId)>>,
    num_base_relations: usize,
    has_inverses: bool,
}

impl KnowledgeGraph {
    /// Load a TAB-separated triple file (head, relation, tail per line).
    /// Duplicate lines are deduplicated with a logged count.
    pub fn load(path: &Path, relations: RelationVocabMode) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, relations, path)
    }

    fn parse(text: &str, relations: RelationVocabMode, path: &Path) -> Result<Self> {
        let mut entity_vocab = Vocab::new();
        let (mut relation_vocab, frozen) = match relations {
            RelationVocabMode::Fresh => (Vocab::new(), false),
            RelationVocabMode::Extend(v) => (v, false),
            RelationVocabMode::Frozen(v) => (v, true),
        };
        let mut triples = Vec::new();
        let mut triple_set = HashSet::new();
        let mut duplicates = 0usize;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t), None) => (h, r, t),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        msg: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
                    })
                }
            };
            let relation = if frozen {
                relation_vocab.get(r).ok_or_else(|| {
                    Error::Vocab(format!(
                        "unknown relation {r:?} at {}:{} with frozen vocabulary",
                        path.display(),
                        line_no + 1
                    ))
                })?
            } else {
                relation_vocab.intern(r)
            };
            let triple = Triple::new(entity_vocab.intern(h), relation, entity_vocab.intern(t));
            if triple_set.insert(triple) {
                triples.push(triple);
            } else {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::info!("{}: deduplicated {duplicates} duplicate triples", path.display());
        }
        let num_base_relations = relation_vocab.len();
        Ok(Self::assemble(
            triples,
            triple_set,
            entity_vocab,
            relation_vocab,
            num_base_relations,
            false,
        ))
    }

    /// Build a graph from named triples; relation ids optionally seeded.
    pub fn from_named<'a, I>(triples: I, relations: RelationVocabMode) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut text = String::new();
        for (h, r, t) in triples {
            writeln!(text, "{h}\t{r}\t{t}").expect("write to string");
        }
        Self::parse(&text, relations, Path::new("<memory>"))
    }

    fn assemble(
        triples: Vec<Triple>,
        triple_set: HashSet<Triple>,
        entity_vocab: Vocab,
        relation_vocab: Vocab,
        num_base_relations: usize,
        has_inverses: bool,
    ) -> Self {
        let n = entity_vocab.len();
        let mut out_index = vec![Vec::new(); n];
        let mut in_index = vec![Vec::new(); n];
        for t in &triples {
            out_index[t.head].push((t.relation, t.tail));
            in_index[t.tail].push((t.relation, t.head));
        }
        KnowledgeGraph {
            triples,
            triple_set,
            entity_vocab,
            relation_vocab,
            out_index,
            in_index,
            num_base_relations,
            has_inverses,
        }
    }

    /// Add inverse relations: each (h, r, t) gains (t, r + num_base_relations, h).
    pub fn add_inverse_relations(&self) -> Result<Self> {
        if self.has_inverses {
            return Err(Error::State(
                "add_inverse_relations called on a graph that already has inverses".into(),
            ));
        }
        let nb = self.num_base_relations;
        let mut relation_vocab = self.relation_vocab.clone();
        for i in 0..nb {
            relation_vocab.intern(&format!("{}{}", self.relation_vocab.name(i), INVERSE_SUFFIX));
        }
        let mut triples = self.triples.clone();
        let mut triple_set = self.triple_set.clone();
        for t in &self.triples {
            let inv = Triple::new(t.tail, t.relation + nb, t.head);
            if triple_set.insert(inv) {
                triples.push(inv);
            }
        }
        Ok(Self::assemble(
            triples,
            triple_set,
            self.entity_vocab.clone(),
            relation_vocab,
            nb,
            true,
        ))
    }

    /// Restrict the triple set to base relations, undoing inverse augmentation.
    pub fn restrict_to_base(&self) -> Self {
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .copied()
            .filter(|t| t.relation < self.num_base_relations)
            .collect();
        let triple_set = triples.iter().copied().collect();
        let relation_vocab = Vocab::from_names(
            self.relation_vocab.names()[..self.num_base_relations]
                .iter()
                .cloned(),
        );
        Self::assemble(
            triples,
            triple_set,
            self.entity_vocab.clone(),
            relation_vocab,
            self.num_base_relations,
            false,
        )
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_vocab.len()
    }

    /// Total relation id space (doubled when inverses are present).
    pub fn relation_count(&self) -> usize {
        self.relation_vocab.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn has_inverses(&self) -> bool {
        self.has_inverses
    }

    pub fn entity_vocab(&self) -> &Vocab {
        &self.entity_vocab
    }

    pub fn relation_vocab(&self) -> &Vocab {
        &self.relation_vocab
    }

    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_index[e]
    }

    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_index[e]
    }

    /// Neighbors of `e` ignoring edge direction (may repeat on parallel edges).
    pub fn undirected_neighbors(&self, e: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.out_index[e]
            .iter()
            .map(|&(_, v)| v)
            .chain(self.in_index[e].iter().map(|&(_, v)| v))
    }

    /// Serialize back to the triple-file format (one TAB-separated line per triple).
    pub fn save_triples(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.triples {
            writeln!(
                text,
                "{}\t{}\t{}",
                self.entity_vocab.name(t.head),
                self.relation_vocab.name(t.relation),
                self.entity_vocab.name(t.tail)
            )
            .expect("write to string");
        }
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Vocabulary dump: two-column TSV (name, id).
    pub fn dump_vocab(vocab: &Vocab) -> String {
        let mut out = String::new();
        for (id, name) in vocab.names().iter().enumerate() {
            writeln!(out, "{name}\t{id}").expect("write to string");
        }
        out
    }

    /// Resolve a target-triple file against this graph's vocabularies.
    /// Triples mentioning unknown entities or relations are skipped with a warning.
    pub fn resolve_targets(&self, path: &Path) -> Result<Vec<Triple>> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = Vec::new();
        let mut skipped = 0usize;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t), None) => (h, r, t),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        msg: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
                    })
                }
            };
            match (
                self.entity_vocab.get(h),
                self.relation_vocab.get(r),
                self.entity_vocab.get(t),
            ) {
                (Some(h), Some(r), Some(t)) => out.push(Triple::new(h, r, t)),
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!(
                "{}: skipped {skipped} target triples with out-of-vocabulary names",
                path.display()
            );
        }
        Ok(out)
    }
}

/// A fully-inductive split: a train KG and an ind-test KG with disjoint
/// entity sets but shared relation ids.
#[derive(Debug, Clone)]
pub struct InductiveSplit {
    pub train_graph: KnowledgeGraph,
    pub ind_test_graph: KnowledgeGraph,
    pub train_targets: Vec<Triple>,
    pub valid_targets: Vec<Triple>,
    pub test_targets: Vec<Triple>,
}

impl InductiveSplit {
    /// Load `dir/{train,valid,test}.txt` plus the sibling ind-test directory
    /// (`<dir>_ind` by default) with the same layout. The ind-test graph is
    /// built from the ind directory's train.txt; its test.txt provides the
    /// evaluation targets.
    pub fn load(dataset_dir: &Path) -> Result<Self> {
        let ind_dir = sibling_ind_dir(dataset_dir);
        Self::load_pair(dataset_dir, &ind_dir)
    }

    pub fn load_pair(train_dir: &Path, ind_dir: &Path) -> Result<Self> {
        let train_graph =
            KnowledgeGraph::load(&train_dir.join("train.txt"), RelationVocabMode::Fresh)?;
        let ind_test_graph = KnowledgeGraph::load(
            &ind_dir.join("train.txt"),
            RelationVocabMode::Extend(train_graph.relation_vocab().clone()),
        )?;
        let train_targets = train_graph.triples().to_vec();
        let valid_targets = train_graph.resolve_targets(&train_dir.join("valid.txt"))?;
        let test_targets = ind_test_graph.resolve_targets(&ind_dir.join("test.txt"))?;
        Ok(InductiveSplit {
            train_graph,
            ind_test_graph,
            train_targets,
            valid_targets,
            test_targets,
        })
    }
}

pub fn sibling_ind_dir(dataset_dir: &Path) -> PathBuf {
    let name = dataset_dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    dataset_dir.with_file_name(format!("{name}_ind"))
}

/// Per-invariant outcome of `validate_inductive_split`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SplitReport {
    pub entities_disjoint: bool,
    pub shared_entities: Vec<String>,
    pub relations_subset: bool,
    pub novel_relations: Vec<String>,
}

impl SplitReport {
    pub fn pass(&self) -> bool {
        self.entities_disjoint && self.relations_subset
    }
}

/// Check the fully-inductive invariants: disjoint entity vocabularies and
/// ind-test base relations contained in the train relations.
pub fn validate_inductive_split(split: &InductiveSplit) -> SplitReport {
    let train_entities: HashSet<&str> = split
        .train_graph
        .entity_vocab()
        .names()
        .iter()
        .map(|s| s.as_str())
        .collect();
    let shared: BTreeSet<String> = split
        .ind_test_graph
        .entity_vocab()
        .names()
        .iter()
        .filter(|n| train_entities.contains(n.as_str()))
        .cloned()
        .collect();
    let train_relations: HashSet<&str> = split.train_graph.relation_vocab().names()
        [..split.train_graph.num_base_relations()]
        .iter()
        .map(|s| s.as_str())
        .collect();
    let novel: BTreeSet<String> = split.ind_test_graph.relation_vocab().names()
        [..split.ind_test_graph.num_base_relations()]
        .iter()
        .filter(|n| !train_relations.contains(n.as_str()))
        .cloned()
        .collect();
    SplitReport {
        entities_disjoint: shared.is_empty(),
        shared_entities: shared.into_iter().collect(),
        relations_subset: novel.is_empty(),
        novel_relations: novel.into_iter().collect(),
    }
}
