//! The full relation extraction network and its per-document preparation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, node_index, PairPrediction, TaskClassifier};
use crate::corpus::{
    enumerate_pairs, segment_document, CandidatePair, DocGraphs, Document, GraphFlavor, LabelScheme, RelType,
    RelationTuple, Window,
};
use crate::dynamic_graph::{head_forward, DynamicGraphHead, RetainedEdge, DEFAULT_THRESHOLDS};
use crate::embedding::{collect_mentions, EmbeddingBackend, FrozenEmbeddings, LookupEmbedding};
use crate::error::{Error, Result};
use crate::node_transformer::{node_transform, NodeTransformerLayer};
use crate::scalar::Scalar;
use crate::static_graph::{encode_graph, mix_embeddings, CompiledGraph, GatLayer};
use crate::tensor::{load_checkpoint, read_manifest, save_checkpoint, Activation, Graph, ParamStore, Var};

/// Module removals for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_static_graphs: bool,
    pub disable_dynamic_graphs: bool,
    pub disable_node_transformer: bool,
}

impl Ablation {
    pub fn is_full(&self) -> bool {
        *self == Ablation::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden size; ignored in favour of the file's width for frozen embeddings.
    pub dim: usize,
    pub head_count: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub beta: f64,
    /// Indexed like [`RelType::index`].
    pub thresholds: [f64; 4],
    pub gcn_depth: usize,
    pub activation: Activation,
    pub max_tokens: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            head_count: 4,
            dropout: 0.3,
            leaky_slope: 0.2,
            beta: 0.8,
            thresholds: DEFAULT_THRESHOLDS,
            gcn_depth: 1,
            activation: Activation::Relu,
            max_tokens: 512,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta {} not in [0, 1]", self.beta)));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::invalid(format!("threshold {t} not in [0, 1)")));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be positive"));
        }
        Ok(())
    }
}

/// A document with its windows, compiled static graphs and candidate pairs.
#[derive(Clone, Debug)]
pub struct PreparedDoc<T> {
    pub doc: Document,
    pub windows: Vec<Window>,
    pub amr: CompiledGraph<T>,
    pub ie: CompiledGraph<T>,
    /// Indexed like [`RelType::index`].
    pub pairs: [Vec<CandidatePair>; 4],
}

impl<T: Scalar> PreparedDoc<T> {
    /// Missing graphs are treated as empty.
    pub fn new(doc: Document, graphs: Option<&DocGraphs>, max_tokens: usize) -> Result<Self> {
        let windows = segment_document(&doc, max_tokens)?;
        let empty = DocGraphs::empty();
        let graphs = graphs.unwrap_or(&empty);
        let amr = CompiledGraph::compile(&graphs.amr, &doc);
        let ie = CompiledGraph::compile(&graphs.ie, &doc);
        let pairs = RelType::ALL.map(|r| enumerate_pairs(&doc, r));
        Ok(Self {
            doc,
            windows,
            amr,
            ie,
            pairs,
        })
    }

    pub fn pair_indices(&self, rel: RelType) -> Vec<(usize, usize)> {
        let p = self.doc.events.len();
        self.pairs[rel.index()]
            .iter()
            .map(|c| (node_index(c.source, p), node_index(c.target, p)))
            .collect()
    }

    pub fn labels(&self, rel: RelType) -> Vec<usize> {
        self.pairs[rel.index()].iter().map(|c| c.gold).collect()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug, Default)]
pub struct DocForward {
    /// Logits per task, `None` when the document has no candidate pairs.
    pub logits: [Option<Var>; 4],
    /// Retained dynamic edges per task (empty when the head is ablated).
    pub edges: [Vec<RetainedEdge>; 4],
}

/// How token embeddings are obtained; stored with checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Lookup { vocab: Vec<String> },
    Frozen { dim: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    labels: std::collections::BTreeMap<RelType, Vec<String>>,
    embedding: EmbeddingSpec,
}

#[derive(Clone, Debug)]
pub struct GraphEre<T> {
    pub config: ModelConfig,
    pub scheme: LabelScheme,
    pub store: ParamStore<T>,
    pub backend: EmbeddingBackend<T>,
    pub gat_amr: GatLayer,
    pub gat_ie: GatLayer,
    pub transformer: NodeTransformerLayer,
    pub heads: Vec<DynamicGraphHead>,
    pub classifiers: Vec<TaskClassifier>,
}

impl<T: Scalar> GraphEre<T> {
    /// Trainable lookup embeddings over the vocabulary of `docs`.
    pub fn with_lookup(config: ModelConfig, scheme: LabelScheme, docs: &[Document], seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lookup = LookupEmbedding::from_corpus(docs, config.dim, &mut store, &mut rng)?;
        Self::build(config, scheme, store, rng, EmbeddingBackend::Lookup(lookup))
    }

    pub fn with_frozen(
        mut config: ModelConfig,
        scheme: LabelScheme,
        frozen: FrozenEmbeddings<T>,
        seed: u64,
    ) -> Result<Self> {
        config.dim = frozen.dim();
        let store = ParamStore::new();
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, scheme, store, rng, EmbeddingBackend::Frozen(frozen))
    }

    fn build(
        config: ModelConfig,
        scheme: LabelScheme,
        mut store: ParamStore<T>,
        mut rng: ChaCha8Rng,
        backend: EmbeddingBackend<T>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let gat_amr = GatLayer::new(
            &mut store,
            &mut rng,
            GraphFlavor::Amr,
            d,
            config.leaky_slope,
            config.activation,
        )?;
        let gat_ie = GatLayer::new(
            &mut store,
            &mut rng,
            GraphFlavor::Ie,
            d,
            config.leaky_slope,
            config.activation,
        )?;
        let transformer = NodeTransformerLayer::new(&mut store, &mut rng, d, config.head_count, config.dropout)?;
        let heads = RelType::ALL
            .iter()
            .map(|&r| {
                DynamicGraphHead::new(
                    &mut store,
                    &mut rng,
                    r,
                    d,
                    config.thresholds[r.index()],
                    config.gcn_depth,
                    config.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let classifiers = RelType::ALL
            .iter()
            .map(|&r| TaskClassifier::new(&mut store, r, d, scheme.num_classes(r)))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self {
            config,
            scheme,
            store,
            backend,
            gat_amr,
            gat_ie,
            transformer,
            heads,
            classifiers,
        };
        model.apply_ablation(model.config.ablation);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Switches modules off and freezes the parameters they no longer use.
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        self.config.ablation = ablation;
        self.store.set_trainable(|name| !ablated_param(name, ablation));
    }

    /// Restricts training to the parameters of the given tasks plus the shared
    /// backbone; other task heads are frozen.
    pub fn restrict_to_tasks(&mut self, tasks: &[RelType]) {
        let ablation = self.config.ablation;
        self.store.set_trainable(|name| {
            if ablated_param(name, ablation) {
                return false;
            }
            match task_of_param(name) {
                Some(r) => tasks.contains(&r),
                None => true,
            }
        });
    }

    pub fn prepare(&self, doc: Document, graphs: Option<&DocGraphs>) -> Result<PreparedDoc<T>> {
        PreparedDoc::new(doc, graphs, self.config.max_tokens)
    }

    /// Mention-node features after the static graphs and node transformer,
    /// `(p + q) × dim`.
    pub fn node_features(&self, g: &mut Graph<T>, doc: &PreparedDoc<T>, training: bool, seed: u64) -> Result<Var> {
        let m = collect_mentions(g, &self.store, &self.backend, &doc.doc, &doc.windows)?;
        let ab = self.config.ablation;
        let gh = if ab.disable_static_graphs || doc.doc.events.is_empty() {
            m.events
        } else {
            let amr = encode_graph(g, &self.store, &self.gat_amr, &doc.amr, m.events, m.tokens)?;
            let ie = encode_graph(g, &self.store, &self.gat_ie, &doc.ie, m.events, m.tokens)?;
            mix_embeddings(g, m.events, amr, ie, self.config.beta)?
        };
        let x = if doc.doc.timexes.is_empty() {
            gh
        } else {
            g.concat_rows(&[gh, m.timexes])?
        };
        if ab.disable_node_transformer {
            Ok(x)
        } else {
            node_transform(g, &self.store, &self.transformer, x, training, seed)
        }
    }

    /// Full forward pass for the requested tasks.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        doc: &PreparedDoc<T>,
        tasks: &[RelType],
        training: bool,
        seed: u64,
    ) -> Result<DocForward> {
        let mut out = DocForward::default();
        if tasks.iter().all(|r| doc.pairs[r.index()].is_empty()) {
            return Ok(out);
        }
        let x = self.node_features(g, doc, training, seed)?;
        let p = doc.doc.events.len();
        for &r in tasks {
            if doc.pairs[r.index()].is_empty() {
                continue;
            }
            let head = &self.heads[r.index()];
            let feats = if self.config.ablation.disable_dynamic_graphs {
                if head.uses_timexes() || g.shape(x)[0] == p {
                    x
                } else {
                    g.gather_rows(x, &(0..p).collect::<Vec<_>>())?
                }
            } else {
                let h = head_forward(g, &self.store, head, x, p)?;
                out.edges[r.index()] = h.edges;
                h.refined
            };
            let logits = crate::classifier::pair_logits(
                g,
                &self.store,
                &self.classifiers[r.index()],
                feats,
                &doc.pair_indices(r),
            )?;
            out.logits[r.index()] = Some(logits);
        }
        Ok(out)
    }

    /// Eval-mode predictions for every candidate pair, NONE included.
    pub fn predict_pairs(&self, doc: &PreparedDoc<T>, tasks: &[RelType]) -> Result<Vec<PairPrediction>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, doc, tasks, false, 0)?;
        let mut out = Vec::new();
        for &r in tasks {
            let Some(logits) = fwd.logits[r.index()] else { continue };
            let probs = g.softmax_rows(logits)?;
            let pv = g.value(probs);
            for (k, c) in doc.pairs[r.index()].iter().enumerate() {
                let row: Vec<f64> = pv.row(k).iter().map(|v| v.as_f64()).collect();
                let label = argmax(&row);
                out.push(PairPrediction {
                    source: c.source,
                    target: c.target,
                    rel_type: r,
                    probs: row,
                    label,
                });
            }
        }
        Ok(out)
    }

    /// Predicted relations (NONE omitted).
    pub fn predict(&self, doc: &PreparedDoc<T>, tasks: &[RelType]) -> Result<Vec<RelationTuple>> {
        Ok(self
            .predict_pairs(doc, tasks)?
            .into_iter()
            .filter(|p| p.label != 0)
            .map(|p| RelationTuple {
                source: p.source,
                target: p.target,
                rel_type: p.rel_type,
                subtype: p.label,
            })
            .collect())
    }

    /// Retained dynamic edges for every head, eval mode.
    pub fn dynamic_edges(&self, doc: &PreparedDoc<T>) -> Result<[Vec<RetainedEdge>; 4]> {
        let mut g = Graph::new();
        Ok(self.forward(&mut g, doc, &RelType::ALL, false, 0)?.edges)
    }

    fn meta(&self) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            labels: self.scheme.to_map(),
            embedding: match &self.backend {
                EmbeddingBackend::Lookup(l) => EmbeddingSpec::Lookup {
                    vocab: l.words().to_vec(),
                },
                EmbeddingBackend::Frozen(f) => EmbeddingSpec::Frozen { dim: f.dim() },
            },
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::to_value(self.meta()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        save_checkpoint(&self.store, dir, meta)
    }

    /// Rebuilds a model from a checkpoint; frozen-embedding checkpoints need
    /// the embedding vectors again.
    pub fn load(dir: &Path, frozen: Option<FrozenEmbeddings<T>>) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let meta: ModelMeta =
            serde_json::from_value(manifest.model).map_err(|e| Error::Checkpoint(format!("model metadata: {e}")))?;
        let scheme = LabelScheme::new(meta.labels)?;
        let mut model = match meta.embedding {
            EmbeddingSpec::Lookup { vocab } => {
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let lookup = LookupEmbedding::from_words(vocab, meta.config.dim, &mut store, &mut rng)?;
                Self::build(meta.config, scheme, store, rng, EmbeddingBackend::Lookup(lookup))?
            }
            EmbeddingSpec::Frozen { dim } => {
                let frozen = frozen.ok_or_else(|| {
                    Error::Checkpoint("checkpoint was trained on frozen embeddings; provide them".into())
                })?;
                if frozen.dim() != dim {
                    return Err(Error::Checkpoint(format!(
                        "embedding width {} does not match checkpoint width {dim}",
                        frozen.dim()
                    )));
                }
                Self::with_frozen(meta.config, scheme, frozen, 0)?
            }
        };
        load_checkpoint(&mut model.store, dir)?;
        Ok(model)
    }
}

fn ablated_param(name: &str, ab: Ablation) -> bool {
    (ab.disable_static_graphs && name.starts_with("gat."))
        || (ab.disable_node_transformer && name.starts_with("transformer."))
        || (ab.disable_dynamic_graphs && name.starts_with("dynamic."))
}

fn task_of_param(name: &str) -> Option<RelType> {
    let mut parts = name.split('.');
    match parts.next() {
        Some("dynamic") | Some("classifier") => parts.next().and_then(|t| t.parse().ok()),
        _ => None,
    }
}
