//! Seeded synthetic corpora with planted relation structure.
//!
//! Every event carries four latent attributes, one per relation family:
//!
//! * an entity flag; flagged events of a document corefer with each other,
//! * a phase in `0..3`; `a` BEFORE `b` whenever `phase(a) < phase(b)`
//!   (timexes have phases too and act as temporal targets),
//! * a causal role (cause, precondition, effect); cause/precondition events
//!   point at every effect event with CAUSE/PRECONDITION,
//! * a containment role (parent, child); parents point at every child with
//!   SUBEVENT.
//!
//! Each rule only asks "does the source have property X and the target
//! property Y", which a classifier over concatenated pair features can
//! express exactly.
//!
//! A family's attribute can be visible in the trigger embeddings, as shared
//! argument nodes in the AMR graph, in the IE graph, or any mix. Argument
//! nodes are listed once per document in a leading inventory sentence so
//! their surface tokens have embeddings of their own. With overlap strength
//! `s < 1` an event links to its true argument node with probability `s`
//! and to a uniformly drawn value otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_corpus, save_graph_file, DocGraphs, Document, EventMention, GraphEdge, GraphFlavor, GraphNode, LabelScheme,
    MentionRef, RelType, RelationTuple, StaticEventGraph, TimexMention,
};
use crate::embedding::FrozenEmbeddings;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of values per family; value 0 means "no role" and has no node
/// except for phases, where every value is a real phase.
pub const FAMILY_VALUES: [usize; 4] = [2, 3, 4, 3];
const FAMILY_NAMES: [&str; 4] = ["entity", "phase", "cause", "part"];

pub const CAUSAL_NONE: usize = 0;
pub const CAUSAL_CAUSE: usize = 1;
pub const CAUSAL_PRECONDITION: usize = 2;
pub const CAUSAL_EFFECT: usize = 3;
pub const SUB_PARENT: usize = 1;
pub const SUB_CHILD: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Visibility {
    pub tokens: bool,
    pub amr: bool,
    pub ie: bool,
}

impl Visibility {
    pub const ALL: Visibility = Visibility {
        tokens: true,
        amr: true,
        ie: true,
    };
    pub const AMR: Visibility = Visibility {
        tokens: false,
        amr: true,
        ie: false,
    };
    pub const IE: Visibility = Visibility {
        tokens: false,
        amr: false,
        ie: true,
    };
    pub const GRAPHS: Visibility = Visibility {
        tokens: false,
        amr: true,
        ie: true,
    };

    fn in_flavor(&self, flavor: GraphFlavor) -> bool {
        match flavor {
            GraphFlavor::Amr => self.amr,
            GraphFlavor::Ie => self.ie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_docs: usize,
    /// Index of the first document; corpora with the same seed and disjoint
    /// index ranges share directions but not documents.
    pub first_doc: usize,
    pub events_min: usize,
    pub events_max: usize,
    pub timexes_max: usize,
    pub dim: usize,
    /// Distinct trigger words.
    pub trigger_vocab: usize,
    /// Distinct filler words.
    pub filler_vocab: usize,
    /// Norm of each planted attribute direction.
    pub signal: f64,
    /// Norm of the direction shared by events with the same token-visible
    /// values, a stand-in for an event type.
    pub kind_signal: f64,
    /// Norm of the identity/noise part of each token vector.
    pub noise: f64,
    /// Probability that an event links to its true argument node.
    pub argument_overlap_strength: f64,
    /// Where each family (indexed like [`RelType::index`]) is visible.
    pub visibility: [Visibility; 4],
    /// Probability that a document plants positives of each family.
    pub presence: [f64; 4],
    /// Whether subevent parents carry a visible role of their own.
    pub mark_parents: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_docs: 200,
            first_doc: 0,
            events_min: 6,
            events_max: 12,
            timexes_max: 2,
            dim: 64,
            trigger_vocab: 40,
            filler_vocab: 60,
            signal: 6.0,
            kind_signal: 16.0,
            noise: 2.0,
            argument_overlap_strength: 1.0,
            visibility: [Visibility::ALL; 4],
            presence: [1.0; 4],
            mark_parents: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.events_min < 2 || self.events_min > self.events_max {
            return Err(Error::invalid(format!(
                "event range {}..={} must start at 2 or more and be non-empty",
                self.events_min, self.events_max
            )));
        }
        if self.trigger_vocab <= self.events_max {
            return Err(Error::invalid("trigger vocabulary must exceed the maximum event count"));
        }
        if self.dim == 0 || self.filler_vocab == 0 {
            return Err(Error::invalid("dim and vocabularies must be positive"));
        }
        if !(0.0..=1.0).contains(&self.argument_overlap_strength) {
            return Err(Error::invalid("argument overlap strength must lie in [0, 1]"));
        }
        if self.presence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("presence rates must lie in [0, 1]"));
        }
        if !(self.signal >= 0.0 && self.noise >= 0.0 && self.kind_signal >= 0.0) {
            return Err(Error::invalid("signal and noise must be non-negative"));
        }
        for (r, v) in RelType::ALL.iter().zip(&self.visibility) {
            if !(v.tokens || v.amr || v.ie) {
                return Err(Error::invalid(format!("{r} attributes are visible nowhere")));
            }
        }
        Ok(())
    }

    /// Attributes reach the model only through both static graphs.
    pub fn argument_overlap(mut self, strength: f64) -> Self {
        self.visibility = [Visibility::GRAPHS; 4];
        self.argument_overlap_strength = strength;
        self
    }

    /// Coreference and causal attributes live only in AMR graphs, temporal
    /// and subevent attributes only in IE graphs.
    pub fn complementary(mut self) -> Self {
        self.visibility = [Visibility::AMR, Visibility::IE, Visibility::AMR, Visibility::IE];
        self
    }

    /// Subevent structure shows up in few documents and parents are not
    /// marked, so they can only be recognized as the coreferent mentions.
    pub fn subevent_scarce(mut self, presence: f64) -> Self {
        self.presence[RelType::Subevent.index()] = presence;
        self.mark_parents = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLatent {
    pub mention_id: String,
    /// True value per family.
    pub values: [usize; 4],
    /// Value each static graph links the event to (may differ from the true
    /// value when the overlap strength is below 1); `None` for no link.
    pub amr_links: [Option<usize>; 4],
    pub ie_links: [Option<usize>; 4],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimexLatent {
    pub mention_id: String,
    pub phase: usize,
}

/// One line of the answer key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub doc_id: String,
    pub events: Vec<EventLatent>,
    pub timexes: Vec<TimexLatent>,
}

pub struct SynthBundle<T> {
    pub docs: Vec<Document>,
    pub graphs: Vec<DocGraphs>,
    pub embeddings: FrozenEmbeddings<T>,
    pub answer_key: Vec<AnswerRecord>,
}

/// Relations implied by true attribute values, in a fixed order.
pub fn planted_relations(events: &[[usize; 4]], timex_phases: &[usize]) -> Vec<RelationTuple> {
    let mut out = Vec::new();
    let ev = MentionRef::Event;
    for (i, a) in events.iter().enumerate() {
        for (j, b) in events.iter().enumerate() {
            if i == j {
                continue;
            }
            if a[0] == 1 && b[0] == 1 {
                out.push(RelationTuple {
                    source: ev(i),
                    target: ev(j),
                    rel_type: RelType::Coreference,
                    subtype: 1,
                });
            }
            if a[1] < b[1] {
                out.push(RelationTuple {
                    source: ev(i),
                    target: ev(j),
                    rel_type: RelType::Temporal,
                    subtype: 1,
                });
            }
            if b[2] == CAUSAL_EFFECT && (a[2] == CAUSAL_CAUSE || a[2] == CAUSAL_PRECONDITION) {
                out.push(RelationTuple {
                    source: ev(i),
                    target: ev(j),
                    rel_type: RelType::Causal,
                    subtype: if a[2] == CAUSAL_CAUSE { 1 } else { 2 },
                });
            }
            if a[3] == SUB_PARENT && b[3] == SUB_CHILD {
                out.push(RelationTuple {
                    source: ev(i),
                    target: ev(j),
                    rel_type: RelType::Subevent,
                    subtype: 1,
                });
            }
        }
        for (k, &tp) in timex_phases.iter().enumerate() {
            if a[1] < tp {
                out.push(RelationTuple {
                    source: ev(i),
                    target: MentionRef::Timex(k),
                    rel_type: RelType::Temporal,
                    subtype: 1,
                });
            }
        }
    }
    out
}

/// Shared random vectors: attribute directions, trigger/filler identities.
struct Lexicon {
    attributes: Vec<Vec<Vec<f64>>>,
    timex_marker: Vec<f64>,
    /// One direction per combination of values, indexed by [`kind_index`].
    kinds: Vec<Vec<f64>>,
    /// One direction per timex phase.
    timex_kinds: Vec<Vec<f64>>,
    triggers: Vec<Vec<f64>>,
    fillers: Vec<Vec<f64>>,
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * norm / n).collect()
}

/// `n` directions of equal norm whose pairwise cosines are all `-1/(n-1)`.
fn simplex(rng: &mut ChaCha8Rng, dim: usize, n: usize, norm: f64) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..n).map(|_| random_direction(rng, dim, 1.0)).collect();
    let mean: Vec<f64> = (0..dim)
        .map(|k| raw.iter().map(|v| v[k]).sum::<f64>() / n as f64)
        .collect();
    raw.into_iter()
        .map(|v| {
            let c: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let len = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            c.into_iter().map(|x| x * norm / len).collect()
        })
        .collect()
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let attributes = FAMILY_VALUES
            .iter()
            .map(|&n| simplex(&mut rng, cfg.dim, n, cfg.signal))
            .collect();
        let timex_marker = random_direction(&mut rng, cfg.dim, cfg.signal);
        let kinds = (0..FAMILY_VALUES.iter().product())
            .map(|_| random_direction(&mut rng, cfg.dim, cfg.kind_signal))
            .collect();
        let timex_kinds = (0..FAMILY_VALUES[1])
            .map(|_| random_direction(&mut rng, cfg.dim, cfg.kind_signal))
            .collect();
        let triggers = (0..cfg.trigger_vocab)
            .map(|_| random_direction(&mut rng, cfg.dim, cfg.noise))
            .collect();
        let fillers = (0..cfg.filler_vocab)
            .map(|_| random_direction(&mut rng, cfg.dim, cfg.noise))
            .collect();
        Self {
            attributes,
            timex_marker,
            kinds,
            timex_kinds,
            triggers,
            fillers,
        }
    }
}

/// Mixed-radix index of a value combination.
fn kind_index(values: &[usize; 4]) -> usize {
    values.iter().zip(FAMILY_VALUES).fold(0, |acc, (&v, n)| acc * n + v)
}

fn argument_word(family: usize, value: usize) -> String {
    format!("arg_{}{}", FAMILY_NAMES[family], value)
}

/// Families that get a node for `value`; the "no role" value only has a node
/// for phases.
fn has_node(family: usize, value: usize) -> bool {
    family == 1 || value != 0
}

fn draw_values(cfg: &SynthConfig, rng: &mut ChaCha8Rng, p: usize) -> Vec<[usize; 4]> {
    let mut values = vec![[0usize; 4]; p];
    let mut order: Vec<usize> = (0..p).collect();
    if rng.random_bool(cfg.presence[0]) {
        order.shuffle(rng);
        let k = rng.random_range(2..=3.min(p));
        for &i in &order[..k] {
            values[i][0] = 1;
        }
    }
    if rng.random_bool(cfg.presence[1]) {
        for v in &mut values {
            v[1] = rng.random_range(0..3);
        }
    } else {
        let shared = rng.random_range(0..3);
        for v in &mut values {
            v[1] = shared;
        }
    }
    if rng.random_bool(cfg.presence[2]) {
        order.shuffle(rng);
        let mut roles = vec![CAUSAL_CAUSE, CAUSAL_PRECONDITION, CAUSAL_EFFECT];
        if rng.random_bool(0.5) {
            roles.push(CAUSAL_EFFECT);
        }
        for (&i, &r) in order.iter().zip(&roles) {
            values[i][2] = r;
        }
    }
    if rng.random_bool(cfg.presence[3]) {
        // Every mention of the main event contains the same children; with no
        // coreference cluster a single event plays the parent.
        let mut parents: Vec<usize> = (0..p).filter(|&i| values[i][0] == 1).collect();
        let mut rest: Vec<usize> = (0..p).filter(|&i| values[i][0] == 0).collect();
        rest.shuffle(rng);
        if parents.is_empty() {
            parents.push(rest.remove(0));
        }
        let children = rng.random_range(1..=2.min(rest.len()));
        for &i in &parents {
            values[i][3] = SUB_PARENT;
        }
        for &i in &rest[..children] {
            values[i][3] = SUB_CHILD;
        }
    }
    values
}

/// Values as they surface in tokens and graphs.
fn shown(cfg: &SynthConfig, v: &[usize; 4]) -> [usize; 4] {
    let mut out = *v;
    if !cfg.mark_parents && out[3] == SUB_PARENT {
        out[3] = 0;
    }
    out
}

fn observed(cfg: &SynthConfig, rng: &mut ChaCha8Rng, family: usize, truth: usize) -> Option<usize> {
    let v = if rng.random_bool(cfg.argument_overlap_strength) {
        truth
    } else {
        rng.random_range(0..FAMILY_VALUES[family])
    };
    has_node(family, v).then_some(v)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

struct DocOutput {
    doc: Document,
    graphs: DocGraphs,
    vectors: Vec<f64>,
    answer: AnswerRecord,
}

fn generate_doc(cfg: &SynthConfig, lex: &Lexicon, index: usize) -> DocOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let doc_id = format!("synth{index:05}");
    let p = rng.random_range(cfg.events_min..=cfg.events_max);
    let q = rng.random_range(0..=cfg.timexes_max);
    let values = draw_values(cfg, &mut rng, p);
    let timex_phases: Vec<usize> = (0..q).map(|_| rng.random_range(0..3)).collect();

    let mut links = [vec![[None; 4]; p], vec![[None; 4]; p]];
    for (f_idx, flavor) in [GraphFlavor::Amr, GraphFlavor::Ie].into_iter().enumerate() {
        for (i, v) in values.iter().enumerate() {
            let v = shown(cfg, v);
            for fam in 0..4 {
                if cfg.visibility[fam].in_flavor(flavor) {
                    links[f_idx][i][fam] = observed(cfg, &mut rng, fam, v[fam]);
                }
            }
        }
    }

    let mut tokens: Vec<String> = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut sentences = Vec::new();
    let filler = |rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, vectors: &mut Vec<Vec<f64>>| {
        let w = rng.random_range(0..cfg.filler_vocab);
        tokens.push(format!("w{w}"));
        vectors.push(lex.fillers[w].clone());
    };

    // Inventory sentence: one token per argument value any graph links to.
    let mut inventory: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for fl in &links {
        for ev in fl {
            for (fam, v) in ev.iter().enumerate() {
                if let Some(v) = v {
                    inventory.entry((fam, *v)).or_insert(0);
                }
            }
        }
    }
    if !inventory.is_empty() {
        let start = tokens.len();
        for ((fam, v), pos) in inventory.iter_mut() {
            *pos = tokens.len();
            tokens.push(argument_word(*fam, *v));
            vectors.push(lex.attributes[*fam][*v].clone());
        }
        sentences.push((start, tokens.len()));
    }

    // Distinct trigger words per event, except that coreferent mentions
    // share one.
    let mut pool: Vec<usize> = (0..cfg.trigger_vocab).collect();
    pool.shuffle(&mut rng);
    let shared = pool[0];
    let triggers: Vec<usize> = values
        .iter()
        .enumerate()
        .map(|(i, v)| if v[0] == 1 { shared } else { pool[1 + i] })
        .collect();

    let mut events = Vec::with_capacity(p);
    for (i, v) in values.iter().enumerate() {
        let start = tokens.len();
        for _ in 0..rng.random_range(1..=2) {
            filler(&mut rng, &mut tokens, &mut vectors);
        }
        let trig = triggers[i];
        let mut vec = lex.triggers[trig].clone();
        let mut visible = [0; 4];
        let v = shown(cfg, v);
        for fam in 0..4 {
            if cfg.visibility[fam].tokens {
                visible[fam] = v[fam];
                for (x, a) in vec.iter_mut().zip(&lex.attributes[fam][v[fam]]) {
                    *x += a;
                }
            }
        }
        if cfg.visibility.iter().any(|vis| vis.tokens) {
            for (x, a) in vec.iter_mut().zip(&lex.kinds[kind_index(&visible)]) {
                *x += a;
            }
        }
        let pos = tokens.len();
        tokens.push(format!("ev{trig}"));
        vectors.push(vec);
        for _ in 0..rng.random_range(1..=2) {
            filler(&mut rng, &mut tokens, &mut vectors);
        }
        sentences.push((start, tokens.len()));
        let event_id = if v[0] == 1 {
            format!("{doc_id}-E")
        } else {
            format!("{doc_id}-E{i}")
        };
        events.push(EventMention {
            mention_id: format!("e{i}"),
            span: (pos, pos + 1),
            event_id,
        });
    }
    let mut timexes = Vec::with_capacity(q);
    for (k, &phase) in timex_phases.iter().enumerate() {
        let start = tokens.len();
        filler(&mut rng, &mut tokens, &mut vectors);
        let pos = tokens.len();
        tokens.push(format!("time{phase}"));
        let mut vec = lex.timex_marker.clone();
        for (x, a) in vec.iter_mut().zip(&lex.attributes[1][phase]) {
            *x += a;
        }
        for (x, a) in vec.iter_mut().zip(&lex.timex_kinds[phase]) {
            *x += a;
        }
        vectors.push(vec);
        sentences.push((start, tokens.len()));
        timexes.push(TimexMention {
            mention_id: format!("t{k}"),
            span: (pos, pos + 1),
        });
    }

    let build_graph = |flavor: GraphFlavor, fl: &[[Option<usize>; 4]]| {
        let mut g = StaticEventGraph::empty(flavor);
        for (i, e) in events.iter().enumerate() {
            g.nodes.push(GraphNode {
                node_id: format!("n{i}"),
                text: tokens[e.span.0].clone(),
                span: Some([e.span.0, e.span.1]),
            });
            g.alignment.insert(i, i);
        }
        let mut arg_nodes = BTreeMap::new();
        for (i, ev) in fl.iter().enumerate() {
            for (fam, v) in ev.iter().enumerate() {
                let Some(v) = *v else { continue };
                let node = *arg_nodes.entry((fam, v)).or_insert_with(|| {
                    let pos = inventory[&(fam, v)];
                    g.nodes.push(GraphNode {
                        node_id: argument_word(fam, v),
                        text: tokens[pos].clone(),
                        span: Some([pos, pos + 1]),
                    });
                    g.nodes.len() - 1
                });
                g.edges.push(GraphEdge {
                    src: i,
                    dst: node,
                    label: format!("ARG{fam}"),
                });
            }
        }
        g
    };
    let graphs = DocGraphs {
        amr: build_graph(GraphFlavor::Amr, &links[0]),
        ie: build_graph(GraphFlavor::Ie, &links[1]),
    };

    let relations = planted_relations(&values, &timex_phases);
    let answer = AnswerRecord {
        doc_id: doc_id.clone(),
        events: values
            .iter()
            .enumerate()
            .map(|(i, v)| EventLatent {
                mention_id: format!("e{i}"),
                values: *v,
                amr_links: links[0][i],
                ie_links: links[1][i],
            })
            .collect(),
        timexes: timex_phases
            .iter()
            .enumerate()
            .map(|(k, &phase)| TimexLatent {
                mention_id: format!("t{k}"),
                phase,
            })
            .collect(),
    };
    let doc = Document {
        doc_id,
        tokens,
        sentences,
        events,
        timexes,
        relations,
    };
    DocOutput {
        doc,
        graphs,
        vectors: vectors.into_iter().flatten().map(round_f32).collect(),
        answer,
    }
}

pub fn generate<T: Scalar>(cfg: &SynthConfig) -> Result<SynthBundle<T>> {
    cfg.validate()?;
    let lex = Lexicon::new(cfg);
    let mut bundle = SynthBundle {
        docs: Vec::with_capacity(cfg.num_docs),
        graphs: Vec::with_capacity(cfg.num_docs),
        embeddings: FrozenEmbeddings::new(cfg.dim),
        answer_key: Vec::with_capacity(cfg.num_docs),
    };
    for i in cfg.first_doc..cfg.first_doc + cfg.num_docs {
        let out = generate_doc(cfg, &lex, i);
        let n = out.doc.tokens.len();
        let data = out.vectors.into_iter().map(T::lit).collect();
        bundle
            .embeddings
            .insert(&out.doc.doc_id, Tensor::matrix(n, cfg.dim, data)?)?;
        bundle.docs.push(out.doc);
        bundle.graphs.push(out.graphs);
        bundle.answer_key.push(out.answer);
    }
    Ok(bundle)
}

/// Argument-overlap variant of `cfg`, generated.
pub fn make_argument_overlap_task<T: Scalar>(cfg: &SynthConfig) -> Result<SynthBundle<T>> {
    generate(&cfg.clone().argument_overlap(cfg.argument_overlap_strength))
}

impl<T: Scalar> SynthBundle<T> {
    /// Writes `corpus.jsonl`, `graphs.jsonl`, `embeddings/` and
    /// `answer_key.jsonl` into `dir`.
    pub fn write(&self, dir: &Path, scheme: &LabelScheme) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_corpus(&dir.join("corpus.jsonl"), &self.docs, scheme)?;
        let records: Vec<_> = self
            .docs
            .iter()
            .zip(&self.graphs)
            .map(|(d, g)| g.to_record(d))
            .collect();
        save_graph_file(&dir.join("graphs.jsonl"), &records)?;
        self.embeddings.save(&dir.join("embeddings"))?;
        let path = dir.join("answer_key.jsonl");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for rec in &self.answer_key {
            let line = serde_json::to_string(rec).expect("answer key serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Relations a reader of the static graphs alone would infer: each event's
/// attributes are taken from the argument nodes it links to (AMR first, then
/// IE), with unlinked families read as "no role" / phase 0.
pub fn graph_rule_relations(graphs: &DocGraphs, n_events: usize, timex_phases: &[usize]) -> Vec<RelationTuple> {
    let mut values = vec![[0usize; 4]; n_events];
    for g in [&graphs.ie, &graphs.amr] {
        for e in &g.edges {
            let (ev, arg) = match (g.alignment.get(&e.src), g.alignment.get(&e.dst)) {
                (Some(&ev), None) => (ev, e.dst),
                (None, Some(&ev)) => (ev, e.src),
                _ => continue,
            };
            if let Some((fam, v)) = parse_argument(&g.nodes[arg].node_id) {
                values[ev][fam] = v;
            }
        }
    }
    planted_relations(&values, timex_phases)
}

fn parse_argument(id: &str) -> Option<(usize, usize)> {
    let rest = id.strip_prefix("arg_")?;
    let fam = FAMILY_NAMES.iter().position(|f| rest.starts_with(f))?;
    let v = rest[FAMILY_NAMES[fam].len()..].parse().ok()?;
    Some((fam, v))
}

/// Share of candidate pairs (all tasks) whose label `pred` gets right.
pub fn pair_accuracy(doc: &Document, pred: &[RelationTuple]) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in RelType::ALL {
        let label = |rels: &[RelationTuple], s, t| {
            rels.iter()
                .find(|x| x.rel_type == r && x.source == s && x.target == t)
                .map_or(0, |x| x.subtype)
        };
        for c in crate::corpus::enumerate_pairs(doc, r) {
            total += 1;
            if label(pred, c.source, c.target) == c.gold {
                correct += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

/// Always-NONE predictions, the majority-class baseline.
pub fn majority_baseline(_doc: &Document) -> Vec<RelationTuple> {
    Vec::new()
}
