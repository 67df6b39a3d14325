//! Static event graphs (AMR and IE flavors) keyed by document.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, MentionRef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFlavor {
    Amr,
    Ie,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    #[serde(alias = "id")]
    pub node_id: String,
    #[serde(default)]
    pub text: String,
    /// Token span of the surface text, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub label: String,
}

/// A validated graph with node indices resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticEventGraph {
    pub flavor: GraphFlavor,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// node index -> event index
    pub alignment: BTreeMap<usize, usize>,
}

impl StaticEventGraph {
    pub fn empty(flavor: GraphFlavor) -> Self {
        Self {
            flavor,
            nodes: Vec::new(),
            edges: Vec::new(),
            alignment: BTreeMap::new(),
        }
    }

    /// Undirected neighbor lists without self loops, each sorted and deduplicated.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if e.src != e.dst {
                adj[e.src].push(e.dst);
                adj[e.dst].push(e.src);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Events (by index) with at least one aligned node.
    pub fn aligned_events(&self) -> Vec<usize> {
        let mut ev: Vec<usize> = self.alignment.values().copied().collect();
        ev.sort_unstable();
        ev.dedup();
        ev
    }

    fn from_record(rec: &FlavorRecord, flavor: GraphFlavor, doc: &Document) -> Result<Self> {
        let field = match flavor {
            GraphFlavor::Amr => "amr graph",
            GraphFlavor::Ie => "ie graph",
        };
        let err = |msg: String| Error::validation(&doc.doc_id, field, msg);
        let nodes: Vec<GraphNode> = rec.nodes.iter().cloned().map(NodeRecord::into_node).collect();
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.node_id.clone(), i).is_some() {
                return Err(err(format!("duplicate node `{}`", n.node_id)));
            }
            if let Some([s, e]) = n.span {
                if s >= e || e > doc.tokens.len() {
                    return Err(err(format!("node `{}` span [{s}, {e}) out of range", n.node_id)));
                }
            }
        }
        let mut edges = Vec::with_capacity(rec.edges.len());
        for (src, dst, label) in &rec.edges {
            let s = *index
                .get(src)
                .ok_or_else(|| err(format!("edge endpoint `{src}` is not a node")))?;
            let d = *index
                .get(dst)
                .ok_or_else(|| err(format!("edge endpoint `{dst}` is not a node")))?;
            edges.push(GraphEdge {
                src: s,
                dst: d,
                label: label.clone(),
            });
        }
        let mentions = doc.mention_lookup();
        let mut alignment = BTreeMap::new();
        for (node, mention) in &rec.alignment {
            let n = *index
                .get(node)
                .ok_or_else(|| err(format!("alignment of unknown node `{node}`")))?;
            match mentions.get(mention.as_str()) {
                Some(MentionRef::Event(e)) => {
                    alignment.insert(n, *e);
                }
                _ => {
                    return Err(err(format!(
                        "alignment target `{mention}` is not an event of the document"
                    )))
                }
            }
        }
        Ok(Self {
            flavor,
            nodes,
            edges,
            alignment,
        })
    }

    fn to_record(&self, doc: &Document) -> FlavorRecord {
        FlavorRecord {
            nodes: self.nodes.iter().cloned().map(NodeRecord::Full).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    (
                        self.nodes[e.src].node_id.clone(),
                        self.nodes[e.dst].node_id.clone(),
                        e.label.clone(),
                    )
                })
                .collect(),
            alignment: self
                .alignment
                .iter()
                .map(|(&n, &e)| (self.nodes[n].node_id.clone(), doc.events[e].mention_id.clone()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocGraphs {
    pub amr: StaticEventGraph,
    pub ie: StaticEventGraph,
}

impl DocGraphs {
    pub fn empty() -> Self {
        Self {
            amr: StaticEventGraph::empty(GraphFlavor::Amr),
            ie: StaticEventGraph::empty(GraphFlavor::Ie),
        }
    }

    pub fn to_record(&self, doc: &Document) -> GraphRecord {
        GraphRecord {
            doc_id: doc.doc_id.clone(),
            amr: self.amr.to_record(doc),
            ie: self.ie.to_record(doc),
        }
    }
}

/// Events without any aligned node, per flavor (mention ids).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub unaligned_amr: Vec<String>,
    pub unaligned_ie: Vec<String>,
}

impl CoverageReport {
    pub fn of(doc: &Document, graphs: &DocGraphs) -> Self {
        let missing = |g: &StaticEventGraph| {
            let aligned = g.aligned_events();
            doc.events
                .iter()
                .enumerate()
                .filter(|(i, _)| aligned.binary_search(i).is_err())
                .map(|(_, e)| e.mention_id.clone())
                .collect()
        };
        Self {
            unaligned_amr: missing(&graphs.amr),
            unaligned_ie: missing(&graphs.ie),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.unaligned_amr.is_empty() && self.unaligned_ie.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRecord {
    Full(GraphNode),
    Bare(String),
}

impl NodeRecord {
    fn into_node(self) -> GraphNode {
        match self {
            NodeRecord::Full(n) => n,
            NodeRecord::Bare(s) => GraphNode {
                node_id: s.clone(),
                text: s,
                span: None,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlavorRecord {
    #[serde(default)]
    nodes: Vec<NodeRecord>,
    #[serde(default)]
    edges: Vec<(String, String, String)>,
    #[serde(default)]
    alignment: BTreeMap<String, String>,
}

/// One line of a static graphs file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub doc_id: String,
    #[serde(default)]
    pub amr: FlavorRecord,
    #[serde(default)]
    pub ie: FlavorRecord,
}

impl GraphRecord {
    pub fn resolve(&self, doc: &Document) -> Result<(DocGraphs, CoverageReport)> {
        let graphs = DocGraphs {
            amr: StaticEventGraph::from_record(&self.amr, GraphFlavor::Amr, doc)?,
            ie: StaticEventGraph::from_record(&self.ie, GraphFlavor::Ie, doc)?,
        };
        let report = CoverageReport::of(doc, &graphs);
        Ok((graphs, report))
    }
}

/// Raw graph records of a whole file, keyed by document id.
#[derive(Clone, Debug, Default)]
pub struct StaticGraphIndex {
    records: HashMap<String, GraphRecord>,
}

impl StaticGraphIndex {
    pub fn for_doc(&self, doc: &Document) -> Result<(DocGraphs, CoverageReport)> {
        self.records
            .get(&doc.doc_id)
            .ok_or_else(|| Error::validation(&doc.doc_id, "graphs", "no static graph record"))?
            .resolve(doc)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_graph_file(path: &Path) -> Result<StaticGraphIndex> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        records.insert(rec.doc_id.clone(), rec);
    }
    Ok(StaticGraphIndex { records })
}

/// Loads and validates both graphs for one document.
pub fn load_static_graphs(path: &Path, doc: &Document) -> Result<(DocGraphs, CoverageReport)> {
    load_graph_file(path)?.for_doc(doc)
}

pub fn save_graph_file(path: &Path, records: &[GraphRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("graph record serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
