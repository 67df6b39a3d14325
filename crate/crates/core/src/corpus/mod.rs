//! Documents, mentions, gold relations and their JSON Lines encoding.

mod graphs;
mod pairs;
mod window;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graphs::{
    load_graph_file, load_static_graphs, save_graph_file, CoverageReport, DocGraphs, GraphEdge, GraphFlavor, GraphNode,
    GraphRecord, StaticEventGraph, StaticGraphIndex,
};
pub use pairs::{enumerate_pairs, CandidatePair};
pub use window::{segment_document, Window};

/// The four relation families, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelType {
    #[serde(alias = "Coreference", alias = "COREFERENCE")]
    Coreference,
    #[serde(alias = "Temporal", alias = "TEMPORAL")]
    Temporal,
    #[serde(alias = "Causal", alias = "CAUSAL")]
    Causal,
    #[serde(alias = "Subevent", alias = "SUBEVENT", alias = "subevent_relation")]
    Subevent,
}

impl RelType {
    pub const ALL: [RelType; 4] = [
        RelType::Coreference,
        RelType::Temporal,
        RelType::Causal,
        RelType::Subevent,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelType::Coreference => "coreference",
            RelType::Temporal => "temporal",
            RelType::Causal => "causal",
            RelType::Subevent => "subevent",
        }
    }
}

impl fmt::Display for RelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coreference" | "coref" | "c" => Ok(RelType::Coreference),
            "temporal" | "t" => Ok(RelType::Temporal),
            "causal" | "ca" => Ok(RelType::Causal),
            "subevent" | "s" => Ok(RelType::Subevent),
            _ => Err(Error::invalid(format!("unknown relation type `{s}`"))),
        }
    }
}

pub const NONE_LABEL: &str = "NONE";

/// Subtype inventory per relation type; class 0 is always the implicit NONE.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    subtypes: [Vec<String>; 4],
}

impl Default for LabelScheme {
    /// Ten subtypes over four types.
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            subtypes: [
                s(&["COREF"]),
                s(&["BEFORE", "CONTAINS", "OVERLAP", "BEGINS-ON", "ENDS-ON", "SIMULTANEOUS"]),
                s(&["CAUSE", "PRECONDITION"]),
                s(&["SUBEVENT"]),
            ],
        }
    }
}

impl LabelScheme {
    pub fn new(map: BTreeMap<RelType, Vec<String>>) -> Result<Self> {
        let mut subtypes: [Vec<String>; 4] = Default::default();
        for rel in RelType::ALL {
            let list = map
                .get(&rel)
                .ok_or_else(|| Error::invalid(format!("label scheme lacks `{rel}`")))?;
            if list.is_empty() {
                return Err(Error::invalid(format!("label scheme: `{rel}` has no subtypes")));
            }
            let mut seen = HashSet::new();
            for s in list {
                if s == NONE_LABEL || !seen.insert(s) {
                    return Err(Error::invalid(format!(
                        "label scheme: `{rel}` has invalid or duplicate `{s}`"
                    )));
                }
            }
            subtypes[rel.index()] = list.clone();
        }
        Ok(Self { subtypes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<RelType, Vec<String>> = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: 1,
            source: e,
        })?;
        Self::new(map)
    }

    pub fn to_map(&self) -> BTreeMap<RelType, Vec<String>> {
        RelType::ALL
            .iter()
            .map(|&r| (r, self.subtypes[r.index()].clone()))
            .collect()
    }

    pub fn subtypes(&self, rel: RelType) -> &[String] {
        &self.subtypes[rel.index()]
    }

    /// Classifier width including NONE.
    pub fn num_classes(&self, rel: RelType) -> usize {
        self.subtypes[rel.index()].len() + 1
    }

    pub fn class_index(&self, rel: RelType, subtype: &str) -> Option<usize> {
        self.subtypes[rel.index()]
            .iter()
            .position(|s| s == subtype)
            .map(|i| i + 1)
    }

    pub fn class_name(&self, rel: RelType, class: usize) -> &str {
        if class == 0 {
            NONE_LABEL
        } else {
            &self.subtypes[rel.index()][class - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventMention {
    pub mention_id: String,
    pub span: (usize, usize),
    /// Coreference cluster identity.
    pub event_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimexMention {
    pub mention_id: String,
    pub span: (usize, usize),
}

/// Index into a document's events or timexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MentionRef {
    Event(usize),
    Timex(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationTuple {
    pub source: MentionRef,
    pub target: MentionRef,
    pub rel_type: RelType,
    /// Class index under the loading scheme (never 0).
    pub subtype: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentences: Vec<(usize, usize)>,
    pub events: Vec<EventMention>,
    pub timexes: Vec<TimexMention>,
    pub relations: Vec<RelationTuple>,
}

impl Document {
    pub fn mention_id(&self, m: MentionRef) -> &str {
        match m {
            MentionRef::Event(i) => &self.events[i].mention_id,
            MentionRef::Timex(i) => &self.timexes[i].mention_id,
        }
    }

    pub fn mention_span(&self, m: MentionRef) -> (usize, usize) {
        match m {
            MentionRef::Event(i) => self.events[i].span,
            MentionRef::Timex(i) => self.timexes[i].span,
        }
    }

    /// Every mention span, events first.
    pub fn mention_spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.events
            .iter()
            .map(|e| e.span)
            .chain(self.timexes.iter().map(|t| t.span))
    }

    pub fn mention_lookup(&self) -> HashMap<&str, MentionRef> {
        let mut map = HashMap::new();
        for (i, e) in self.events.iter().enumerate() {
            map.insert(e.mention_id.as_str(), MentionRef::Event(i));
        }
        for (i, t) in self.timexes.iter().enumerate() {
            map.insert(t.mention_id.as_str(), MentionRef::Timex(i));
        }
        map
    }

    pub fn from_record(rec: DocumentRecord, scheme: &LabelScheme) -> Result<Self> {
        let id = rec.doc_id.clone();
        let n = rec.tokens.len();
        let check_span = |field: &'static str, mid: &str, s: [usize; 2]| -> Result<(usize, usize)> {
            if s[0] >= s[1] || s[1] > n {
                return Err(Error::validation(
                    &id,
                    field,
                    format!("mention `{mid}` span [{}, {}) invalid for {n} tokens", s[0], s[1]),
                ));
            }
            Ok((s[0], s[1]))
        };

        let mut sentences = Vec::with_capacity(rec.sentences.len());
        let mut cursor = 0;
        for s in &rec.sentences {
            if s[0] != cursor || s[1] <= s[0] || s[1] > n {
                return Err(Error::validation(
                    &id,
                    "sentences",
                    format!("[{}, {}) does not continue a partition at {cursor}", s[0], s[1]),
                ));
            }
            cursor = s[1];
            sentences.push((s[0], s[1]));
        }
        if sentences.is_empty() && n > 0 {
            sentences.push((0, n));
        } else if cursor != n {
            return Err(Error::validation(
                &id,
                "sentences",
                format!("cover {cursor} of {n} tokens"),
            ));
        }

        let mut ids = HashSet::new();
        let mut events = Vec::with_capacity(rec.events.len());
        for e in rec.events {
            let span = check_span("events", &e.mention_id, e.span)?;
            if !ids.insert(e.mention_id.clone()) {
                return Err(Error::validation(
                    &id,
                    "events",
                    format!("duplicate mention `{}`", e.mention_id),
                ));
            }
            events.push(EventMention {
                mention_id: e.mention_id,
                span,
                event_id: e.event_id,
            });
        }
        let mut timexes = Vec::with_capacity(rec.timexes.len());
        for t in rec.timexes {
            let span = check_span("timexes", &t.mention_id, t.span)?;
            if !ids.insert(t.mention_id.clone()) {
                return Err(Error::validation(
                    &id,
                    "timexes",
                    format!("duplicate mention `{}`", t.mention_id),
                ));
            }
            timexes.push(TimexMention {
                mention_id: t.mention_id,
                span,
            });
        }
        if events.windows(2).any(|w| w[0].span.0 > w[1].span.0) {
            return Err(Error::validation(&id, "events", "not sorted by start offset"));
        }
        if timexes.windows(2).any(|w| w[0].span.0 > w[1].span.0) {
            return Err(Error::validation(&id, "timexes", "not sorted by start offset"));
        }

        let mut doc = Document {
            doc_id: rec.doc_id,
            tokens: rec.tokens,
            sentences,
            events,
            timexes,
            relations: Vec::new(),
        };
        let lookup: HashMap<String, MentionRef> = doc
            .mention_lookup()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut seen = HashSet::new();
        for r in rec.relations {
            let resolve = |mid: &str| {
                lookup
                    .get(mid)
                    .copied()
                    .ok_or_else(|| Error::validation(&id, "relations", format!("unknown mention `{mid}`")))
            };
            let source = resolve(&r.source)?;
            let target = resolve(&r.target)?;
            if source == target {
                return Err(Error::validation(
                    &id,
                    "relations",
                    format!("self relation on `{}`", r.source),
                ));
            }
            match (source, target) {
                (MentionRef::Event(_), MentionRef::Event(_)) => {}
                (MentionRef::Event(_), MentionRef::Timex(_)) if r.rel_type == RelType::Temporal => {}
                _ => {
                    return Err(Error::validation(
                        &id,
                        "relations",
                        format!(
                            "{} relation `{}` -> `{}`: timexes may only be temporal targets",
                            r.rel_type, r.source, r.target
                        ),
                    ))
                }
            }
            let subtype = scheme.class_index(r.rel_type, &r.subtype).ok_or_else(|| {
                Error::validation(
                    &id,
                    "relations",
                    format!("subtype `{}` not in `{}` labels", r.subtype, r.rel_type),
                )
            })?;
            if !seen.insert((source, target, r.rel_type)) {
                return Err(Error::validation(
                    &id,
                    "relations",
                    format!("duplicate {} relation `{}` -> `{}`", r.rel_type, r.source, r.target),
                ));
            }
            doc.relations.push(RelationTuple {
                source,
                target,
                rel_type: r.rel_type,
                subtype,
            });
        }
        Ok(doc)
    }

    pub fn to_record(&self, scheme: &LabelScheme) -> DocumentRecord {
        DocumentRecord {
            doc_id: self.doc_id.clone(),
            tokens: self.tokens.clone(),
            sentences: self.sentences.iter().map(|&(s, e)| [s, e]).collect(),
            events: self
                .events
                .iter()
                .map(|e| EventRecord {
                    mention_id: e.mention_id.clone(),
                    span: [e.span.0, e.span.1],
                    event_id: e.event_id.clone(),
                })
                .collect(),
            timexes: self
                .timexes
                .iter()
                .map(|t| TimexRecord {
                    mention_id: t.mention_id.clone(),
                    span: [t.span.0, t.span.1],
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| RelationRecord {
                    source: self.mention_id(r.source).to_string(),
                    target: self.mention_id(r.target).to_string(),
                    rel_type: r.rel_type,
                    subtype: scheme.class_name(r.rel_type, r.subtype).to_string(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventRecord {
    pub mention_id: String,
    pub span: [usize; 2],
    pub event_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimexRecord {
    pub mention_id: String,
    pub span: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelationRecord {
    pub source: String,
    pub target: String,
    #[serde(rename = "type")]
    pub rel_type: RelType,
    pub subtype: String,
}

/// One line of a corpus file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub sentences: Vec<[usize; 2]>,
    #[serde(default)]
    pub events: Vec<EventRecord>,
    #[serde(default)]
    pub timexes: Vec<TimexRecord>,
    #[serde(default)]
    pub relations: Vec<RelationRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub events: usize,
    pub timexes: usize,
    pub relations: BTreeMap<RelType, usize>,
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut stats = CorpusStats {
        documents: docs.len(),
        ..CorpusStats::default()
    };
    for d in docs {
        stats.events += d.events.len();
        stats.timexes += d.timexes.len();
        for r in &d.relations {
            *stats.relations.entry(r.rel_type).or_default() += 1;
        }
    }
    stats
}

/// Reads a JSON Lines corpus. Blank lines are skipped.
pub fn load_corpus(path: &Path, scheme: &LabelScheme) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        let doc = Document::from_record(rec, scheme)?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(Error::validation(&doc.doc_id, "doc_id", "duplicate document"));
        }
        docs.push(doc);
    }
    let stats = corpus_stats(&docs);
    log::info!(
        "loaded {} documents, {} events, {} timexes, relations {:?}",
        stats.documents,
        stats.events,
        stats.timexes,
        stats.relations
    );
    Ok(docs)
}

pub fn save_corpus(path: &Path, docs: &[Document], scheme: &LabelScheme) -> Result<()> {
    let mut out = Vec::new();
    for d in docs {
        serde_json::to_writer(&mut out, &d.to_record(scheme)).expect("record serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
