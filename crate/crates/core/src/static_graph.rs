//! Graph attention over the static AMR / IE event graphs and the mix of both
//! graph views into graph-enhanced event embeddings.
//!
//! Attention logits are raw inner products of the transformed node features,
//! passed through LeakyReLU and normalized over each node's neighbors. Edges
//! are treated as undirected, edge labels are ignored and no self loops are
//! added; the residual event embedding in the mix supplies self information.

use rand::Rng;

use crate::corpus::{Document, GraphFlavor, StaticEventGraph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GatLayer {
    pub flavor: GraphFlavor,
    /// `dim × dim`, applied as `X · W`.
    pub transform: ParamId,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl GatLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        flavor: GraphFlavor,
        dim: usize,
        leaky_slope: f64,
        activation: Activation,
    ) -> Result<Self> {
        if !(leaky_slope > 0.0 && leaky_slope < 1.0) {
            return Err(Error::invalid(format!("leaky slope {leaky_slope} not in (0, 1)")));
        }
        let name = match flavor {
            GraphFlavor::Amr => "gat.amr.weight",
            GraphFlavor::Ie => "gat.ie.weight",
        };
        let transform = store.register_uniform(name, &[dim, dim], dim, rng)?;
        Ok(Self {
            flavor,
            transform,
            leaky_slope,
            activation,
        })
    }
}

/// A static graph lowered to dense constant matrices for one document.
#[derive(Clone, Debug)]
pub struct CompiledGraph<T> {
    pub n_nodes: usize,
    /// Row-major `n_nodes × n_nodes` neighbor indicator.
    pub adjacency: Vec<bool>,
    /// `n_nodes × p`: picks the event embedding for aligned nodes.
    node_from_events: Tensor<T>,
    /// `n_nodes × n_tokens`: surface-token mean for the other nodes.
    node_from_tokens: Tensor<T>,
    /// `p × n_nodes`: mean over the nodes aligned to each event.
    event_from_nodes: Tensor<T>,
}

fn find_surface(tokens: &[String], text: &str) -> Option<(usize, usize)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - words.len())
        .find(|&s| words.iter().enumerate().all(|(k, w)| tokens[s + k] == *w))
        .map(|s| (s, s + words.len()))
}

impl<T: Scalar> CompiledGraph<T> {
    pub fn compile(graph: &StaticEventGraph, doc: &Document) -> Self {
        let v = graph.nodes.len();
        let p = doc.events.len();
        let n = doc.tokens.len();
        let mut adjacency = vec![false; v * v];
        for (i, list) in graph.neighbors().iter().enumerate() {
            for &j in list {
                adjacency[i * v + j] = true;
            }
        }
        let mut node_from_events = Tensor::zeros(&[v, p]);
        let mut node_from_tokens = Tensor::zeros(&[v, n]);
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Some(&e) = graph.alignment.get(&i) {
                node_from_events.data_mut()[i * p + e] = T::one();
                continue;
            }
            let span = node
                .span
                .map(|[s, e]| (s, e))
                .or_else(|| find_surface(&doc.tokens, &node.text));
            if let Some((s, e)) = span {
                let w = T::one() / T::lit((e - s) as f64);
                for t in s..e {
                    node_from_tokens.data_mut()[i * n + t] = w;
                }
            }
        }
        let mut event_from_nodes = Tensor::zeros(&[p, v]);
        for e in 0..p {
            let nodes: Vec<usize> = graph
                .alignment
                .iter()
                .filter(|&(_, &ev)| ev == e)
                .map(|(&node, _)| node)
                .collect();
            let w = T::one() / T::lit(nodes.len().max(1) as f64);
            for node in nodes {
                event_from_nodes.data_mut()[e * v + node] = w;
            }
        }
        Self {
            n_nodes: v,
            adjacency,
            node_from_events,
            node_from_tokens,
            event_from_nodes,
        }
    }

    /// Neighbor lists recovered from the adjacency indicator.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let v = self.n_nodes;
        (0..v)
            .map(|i| (0..v).filter(|&j| self.adjacency[i * v + j]).collect())
            .collect()
    }
}

/// Initial node features: event embeddings for aligned nodes, surface-token
/// means for the rest, zero when neither is available.
pub fn node_features<T: Scalar>(
    g: &mut Graph<T>,
    compiled: &CompiledGraph<T>,
    events: Var,
    tokens: Var,
) -> Result<Var> {
    let sel = g.constant(compiled.node_from_events.clone());
    let from_events = g.matmul(sel, events)?;
    let avg = g.constant(compiled.node_from_tokens.clone());
    let from_tokens = g.matmul(avg, tokens)?;
    g.add(from_events, from_tokens)
}

/// Attention weights `α` (dense, zero off the neighborhood) and the
/// transformed features `X · W`.
pub fn attention_coefficients<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &GatLayer,
    node_feats: Var,
    compiled: &CompiledGraph<T>,
) -> Result<(Var, Var)> {
    let w = g.param(store, layer.transform);
    let z = g.matmul(node_feats, w)?;
    let zt = g.transpose(z)?;
    let co = g.matmul(z, zt)?;
    let act = g.leaky_relu(co, T::lit(layer.leaky_slope));
    let alpha = g.masked_softmax_rows(act, &compiled.adjacency)?;
    Ok((alpha, z))
}

/// `σ(Σ_j α_ij W h_j)` for every node; isolated nodes aggregate to zero.
pub fn gat_node_update<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &GatLayer,
    node_feats: Var,
    compiled: &CompiledGraph<T>,
) -> Result<Var> {
    let (alpha, z) = attention_coefficients(g, store, layer, node_feats, compiled)?;
    let agg = g.matmul(alpha, z)?;
    Ok(g.activate(agg, layer.activation))
}

/// Graph view per event, `p × dim`; events without an aligned node get zero.
pub fn encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &GatLayer,
    compiled: &CompiledGraph<T>,
    events: Var,
    tokens: Var,
) -> Result<Var> {
    let (p, dim) = (g.shape(events)[0], g.shape(events)[1]);
    if compiled.n_nodes == 0 {
        return Ok(g.constant(Tensor::zeros(&[p, dim])));
    }
    let x = node_features(g, compiled, events, tokens)?;
    let h = gat_node_update(g, store, layer, x, compiled)?;
    let pool = g.constant(compiled.event_from_nodes.clone());
    g.matmul(pool, h)
}

/// `h + β·h_amr + (1-β)·h_ie`.
pub fn mix_embeddings<T: Scalar>(g: &mut Graph<T>, h_event: Var, h_amr: Var, h_ie: Var, beta: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("mix ratio {beta} not in [0, 1]")));
    }
    let a = g.scale(h_amr, T::lit(beta));
    let b = g.scale(h_ie, T::lit(1.0 - beta));
    let s = g.add(h_event, a)?;
    g.add(s, b)
}
