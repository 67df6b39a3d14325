//! Token and mention embeddings from a trainable lookup table or from
//! exported per-token vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Window};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

pub const UNK_TOKEN: &str = "<unk>";

/// Learnable table; row 0 is the shared UNK row.
#[derive(Clone, Debug)]
pub struct LookupEmbedding {
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    dim: usize,
    table: ParamId,
}

impl LookupEmbedding {
    /// Vocabulary is the sorted set of tokens in `docs`.
    pub fn from_corpus<T: Scalar>(
        docs: &[Document],
        dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let words: BTreeSet<&str> = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
        Self::from_words(words.into_iter().map(str::to_string).collect(), dim, store, rng)
    }

    /// Table rows drawn from a standard normal.
    pub fn from_words<T: Scalar>(
        words: Vec<String>,
        dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let rows = words.len() + 1;
        let data = (0..rows * dim)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let table = store.register(
            "embedding.table",
            Tensor::matrix(rows, dim, data)?,
            ParamGroup::Backbone,
        )?;
        let vocab = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Ok(Self {
            vocab,
            words,
            dim,
            table,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    /// Row index of a token; unknown tokens map to 0.
    pub fn token_id(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrozenManifestEntry {
    pub doc_id: String,
    pub n_tokens: usize,
    pub dim: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FrozenManifest {
    Entries(Vec<FrozenManifestEntry>),
    Wrapped { entries: Vec<FrozenManifestEntry> },
}

/// Per-document `n_tokens × dim` vectors, stored on disk as 32-bit floats.
#[derive(Clone, Debug)]
pub struct FrozenEmbeddings<T> {
    dim: usize,
    docs: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> FrozenEmbeddings<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            docs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, doc_id: &str, vectors: Tensor<T>) -> Result<()> {
        if !vectors.is_matrix() || vectors.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "frozen embeddings",
                left: vectors.shape().to_vec(),
                right: vec![self.dim],
            });
        }
        self.docs.insert(doc_id.to_string(), vectors);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Result<&Tensor<T>> {
        self.docs
            .get(doc_id)
            .ok_or_else(|| Error::validation(doc_id, "embeddings", "no frozen vectors for document"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: FrozenManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path,
            line: 1,
            source: e,
        })?;
        let entries = match manifest {
            FrozenManifest::Entries(e) | FrozenManifest::Wrapped { entries: e } => e,
        };
        let dim = entries.first().map_or(0, |e| e.dim);
        let mut out = Self::new(dim);
        for e in entries {
            if e.dim != dim {
                return Err(Error::validation(
                    &e.doc_id,
                    "embeddings",
                    format!("dim {} != {dim}", e.dim),
                ));
            }
            let path = dir.join(format!("{}.bin", e.doc_id));
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            if bytes.len() != e.n_tokens * e.dim * 4 {
                return Err(Error::validation(
                    &e.doc_id,
                    "embeddings",
                    format!("{} bytes for {}x{} f32 vectors", bytes.len(), e.n_tokens, e.dim),
                ));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            out.insert(&e.doc_id, Tensor::matrix(e.n_tokens, e.dim, data)?)?;
        }
        Ok(out)
    }

    /// Writes the manifest and one f32 binary per document (values are
    /// rounded to f32).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.docs.len());
        for (doc_id, t) in &self.docs {
            let mut bytes = Vec::with_capacity(t.numel() * 4);
            for &x in t.data() {
                bytes.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
            let path = dir.join(format!("{doc_id}.bin"));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(FrozenManifestEntry {
                doc_id: doc_id.clone(),
                n_tokens: t.rows(),
                dim: self.dim,
            });
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug)]
pub enum EmbeddingBackend<T> {
    Lookup(LookupEmbedding),
    Frozen(FrozenEmbeddings<T>),
}

impl<T: Scalar> EmbeddingBackend<T> {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingBackend::Lookup(l) => l.dim,
            EmbeddingBackend::Frozen(f) => f.dim,
        }
    }
}

/// Token embeddings of one window, `len × dim`.
pub fn embed_tokens<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    backend: &EmbeddingBackend<T>,
    doc: &Document,
    window: Window,
) -> Result<Var> {
    if window.end > doc.tokens.len() || window.start > window.end {
        return Err(Error::invalid(format!(
            "window [{}, {}) outside {} tokens",
            window.start,
            window.end,
            doc.tokens.len()
        )));
    }
    match backend {
        EmbeddingBackend::Lookup(l) => {
            let table = g.param(store, l.table);
            let ids: Vec<usize> = doc.tokens[window.start..window.end]
                .iter()
                .map(|t| l.token_id(t))
                .collect();
            g.gather_rows(table, &ids)
        }
        EmbeddingBackend::Frozen(f) => {
            let all = f.get(&doc.doc_id)?;
            if all.rows() != doc.tokens.len() {
                return Err(Error::validation(
                    &doc.doc_id,
                    "embeddings",
                    format!("{} vectors for {} tokens", all.rows(), doc.tokens.len()),
                ));
            }
            let rows: Vec<usize> = (window.start..window.end).collect();
            Ok(g.constant(all.gather_rows(&rows)?))
        }
    }
}

/// Mean of the token rows in `span` (relative to `token_embeds`), `1 × dim`.
pub fn mention_embedding<T: Scalar>(g: &mut Graph<T>, token_embeds: Var, span: (usize, usize)) -> Result<Var> {
    g.span_mean(token_embeds, &[span])
}

/// Embeddings for a whole document: the token matrix plus event and timex
/// rows in document order.
#[derive(Clone, Copy, Debug)]
pub struct MentionEmbeddings {
    pub tokens: Var,
    pub events: Var,
    pub timexes: Var,
}

pub fn collect_mentions<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    backend: &EmbeddingBackend<T>,
    doc: &Document,
    windows: &[Window],
) -> Result<MentionEmbeddings> {
    let dim = backend.dim();
    let locate = |span: (usize, usize), mid: &str| -> Result<usize> {
        let mut hits = windows.iter().enumerate().filter(|(_, w)| w.contains(span));
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::validation(
                &doc.doc_id,
                "windows",
                format!("mention `{mid}` is not inside exactly one window"),
            )),
        }
    };
    let mut event_spans = vec![Vec::new(); windows.len()];
    for e in &doc.events {
        let w = locate(e.span, &e.mention_id)?;
        event_spans[w].push((e.span.0 - windows[w].start, e.span.1 - windows[w].start));
    }
    let mut timex_spans = vec![Vec::new(); windows.len()];
    for t in &doc.timexes {
        let w = locate(t.span, &t.mention_id)?;
        timex_spans[w].push((t.span.0 - windows[w].start, t.span.1 - windows[w].start));
    }

    let mut token_parts = Vec::with_capacity(windows.len());
    let mut event_parts = Vec::new();
    let mut timex_parts = Vec::new();
    for (i, &w) in windows.iter().enumerate() {
        let tok = embed_tokens(g, store, backend, doc, w)?;
        token_parts.push(tok);
        if !event_spans[i].is_empty() {
            event_parts.push(g.span_mean(tok, &event_spans[i])?);
        }
        if !timex_spans[i].is_empty() {
            timex_parts.push(g.span_mean(tok, &timex_spans[i])?);
        }
    }
    let stack = |g: &mut Graph<T>, parts: Vec<Var>| -> Result<Var> {
        match parts.len() {
            0 => Ok(g.constant(Tensor::zeros(&[0, dim]))),
            1 => Ok(parts[0]),
            _ => g.concat_rows(&parts),
        }
    };
    Ok(MentionEmbeddings {
        tokens: stack(g, token_parts)?,
        events: stack(g, event_parts)?,
        timexes: stack(g, timex_parts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::segment_document;
    use crate::corpus::tests::toy_doc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lookup(docs: &[Document], dim: usize) -> (ParamStore<f64>, EmbeddingBackend<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = LookupEmbedding::from_corpus(docs, dim, &mut store, &mut rng).unwrap();
        (store, EmbeddingBackend::Lookup(l))
    }

    #[test]
    fn zero_table_gives_zero_matrix() {
        let doc = toy_doc();
        let (mut store, backend) = lookup(std::slice::from_ref(&doc), 4);
        let id = store.id("embedding.table").unwrap();
        let shape = store.value(id).shape().to_vec();
        store.get_mut(id).value = Tensor::zeros(&shape);
        let mut g = Graph::new();
        let t = embed_tokens(&mut g, &store, &backend, &doc, Window { start: 0, end: 6 }).unwrap();
        assert_eq!(g.value(t).shape(), &[6, 4]);
        assert!(g.value(t).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unknown_tokens_use_unk_row() {
        let doc = toy_doc();
        let (store, backend) = lookup(std::slice::from_ref(&doc), 3);
        let EmbeddingBackend::Lookup(l) = &backend else {
            unreachable!()
        };
        assert_eq!(l.token_id("never-seen"), 0);
        assert!(l.token_id("a") > 0);
        let mut other = doc.clone();
        other.tokens = vec!["zzz".into(); 6];
        let mut g = Graph::new();
        let t = embed_tokens(&mut g, &store, &backend, &other, Window { start: 0, end: 2 }).unwrap();
        assert_eq!(g.value(t).row(0), store.value(l.table()).row(0));
    }

    #[test]
    fn frozen_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = FrozenEmbeddings::<f64>::new(2);
        f.insert(
            "d1",
            Tensor::from_f64(&[3, 2], &[0.5, -1.25, 3.0, 0.0, 1e-3f32 as f64, 7.0]).unwrap(),
        )
        .unwrap();
        f.insert("empty", Tensor::zeros(&[0, 2])).unwrap();
        f.save(dir.path()).unwrap();
        let back = FrozenEmbeddings::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.get("d1").unwrap(), f.get("d1").unwrap());
        assert_eq!(back.get("empty").unwrap().shape(), &[0, 2]);
        assert!(back.get("missing").is_err());
    }

    #[test]
    fn frozen_missing_doc_is_error() {
        let doc = toy_doc();
        let backend = EmbeddingBackend::Frozen(FrozenEmbeddings::<f64>::new(2));
        let mut g = Graph::new();
        let store = ParamStore::new();
        assert!(embed_tokens(&mut g, &store, &backend, &doc, Window { start: 0, end: 1 }).is_err());
    }

    #[test]
    fn mention_embedding_examples() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(Tensor::from_f64(&[3, 2], &[1., 0., 0., 1., 1., 0.]).unwrap());
        let single = mention_embedding(&mut g, t, (1, 2)).unwrap();
        assert_eq!(g.value(single).data(), &[0., 1.]);
        let mean = mention_embedding(&mut g, t, (0, 2)).unwrap();
        assert_eq!(g.value(mean).data(), &[0.5, 0.5]);
        let same = mention_embedding(&mut g, t, (0, 1)).unwrap();
        let pair = g.constant(Tensor::from_f64(&[2, 2], &[1., 0., 1., 0.]).unwrap());
        let pm = mention_embedding(&mut g, pair, (0, 2)).unwrap();
        assert_eq!(g.value(pm), g.value(same));
        assert!(mention_embedding(&mut g, t, (1, 1)).is_err());
    }

    #[test]
    fn lookup_gradient_touches_only_window_rows() {
        let doc = toy_doc();
        let mut other = doc.clone();
        other.tokens = vec!["q".into(), "r".into(), "s".into(), "t".into(), "u".into(), "v".into()];
        let (mut store, backend) = lookup(&[doc.clone(), other], 3);
        let mut g = Graph::new();
        let t = embed_tokens(&mut g, &store, &backend, &doc, Window { start: 0, end: 3 }).unwrap();
        let sq = g.mul(t, t).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        store.accumulate(&g, &grads);
        let EmbeddingBackend::Lookup(l) = &backend else {
            unreachable!()
        };
        let grad = store.get(l.table()).grad.clone().unwrap();
        let touched: Vec<usize> = doc.tokens[..3].iter().map(|w| l.token_id(w)).collect();
        for r in 0..grad.rows() {
            let nonzero = grad.row(r).iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, touched.contains(&r), "row {r}");
        }
    }

    #[test]
    fn windowing_does_not_change_lookup_mentions() {
        let doc = toy_doc();
        let (store, backend) = lookup(std::slice::from_ref(&doc), 4);
        let mut g = Graph::new();
        let one = collect_mentions(&mut g, &store, &backend, &doc, &[Window { start: 0, end: 6 }]).unwrap();
        let windows = segment_document(&doc, 3).unwrap();
        assert_eq!(windows.len(), 2);
        let two = collect_mentions(&mut g, &store, &backend, &doc, &windows).unwrap();
        assert_eq!(g.value(one.events), g.value(two.events));
        assert_eq!(g.value(one.timexes), g.value(two.timexes));
        assert_eq!(g.value(one.tokens), g.value(two.tokens));
        assert_eq!(g.value(one.events).shape(), &[3, 4]);
    }

    #[test]
    fn no_events_gives_empty_matrix() {
        let mut doc = toy_doc();
        doc.events.clear();
        doc.relations.clear();
        let (store, backend) = lookup(std::slice::from_ref(&doc), 5);
        let mut g = Graph::new();
        let m = collect_mentions(&mut g, &store, &backend, &doc, &[Window { start: 0, end: 6 }]).unwrap();
        assert_eq!(g.value(m.events).shape(), &[0, 5]);
    }

    #[test]
    fn mention_outside_windows_is_error() {
        let doc = toy_doc();
        let (store, backend) = lookup(std::slice::from_ref(&doc), 2);
        let mut g = Graph::new();
        let r = collect_mentions(&mut g, &store, &backend, &doc, &[Window { start: 0, end: 3 }]);
        assert!(r.is_err());
    }
}
