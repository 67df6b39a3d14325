//! MUC coreference scoring, micro-averaged P/R/F1 and report formatting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, MentionRef, RelType, RelationTuple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    pub fn from_ratios(p_num: f64, p_den: f64, r_num: f64, r_den: f64) -> Self {
        let precision = ratio(p_num, p_den);
        let recall = ratio(r_num, r_den);
        Self {
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
        }
    }
}

/// Link counts behind a MUC score; they add across documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MucCounts {
    pub recall_num: usize,
    pub recall_den: usize,
    pub precision_num: usize,
    pub precision_den: usize,
}

impl MucCounts {
    pub fn add(&mut self, other: MucCounts) {
        self.recall_num += other.recall_num;
        self.recall_den += other.recall_den;
        self.precision_num += other.precision_num;
        self.precision_den += other.precision_den;
    }

    pub fn score(&self) -> Prf {
        Prf::from_ratios(
            self.precision_num as f64,
            self.precision_den as f64,
            self.recall_num as f64,
            self.recall_den as f64,
        )
    }
}

fn cluster_index<M: Eq + Hash + Clone>(clusters: &[Vec<M>]) -> Result<HashMap<M, usize>> {
    let mut index = HashMap::new();
    for (c, members) in clusters.iter().enumerate() {
        for m in members {
            if index.insert(m.clone(), c).is_some() {
                return Err(Error::invalid("clusters overlap"));
            }
        }
    }
    Ok(index)
}

// Σ_S (|S| - |p(S)|) and Σ_S (|S| - 1); mentions missing from `other` are
// singletons there.
fn links<M: Eq + Hash + Clone>(clusters: &[Vec<M>], other: &HashMap<M, usize>) -> (usize, usize) {
    let mut num = 0;
    let mut den = 0;
    for s in clusters.iter().filter(|s| !s.is_empty()) {
        let mut parts = HashSet::new();
        let mut singles = 0;
        for m in s {
            match other.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => singles += 1,
            }
        }
        num += s.len() - (parts.len() + singles);
        den += s.len() - 1;
    }
    (num, den)
}

pub fn muc_counts<M: Eq + Hash + Clone>(key: &[Vec<M>], response: &[Vec<M>]) -> Result<MucCounts> {
    let key_index = cluster_index(key)?;
    let response_index = cluster_index(response)?;
    let (recall_num, recall_den) = links(key, &response_index);
    let (precision_num, precision_den) = links(response, &key_index);
    Ok(MucCounts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    })
}

/// Link-based MUC score; 0/0 is scored as 0.
pub fn muc_score<M: Eq + Hash + Clone>(key: &[Vec<M>], response: &[Vec<M>]) -> Result<Prf> {
    Ok(muc_counts(key, response)?.score())
}

/// Connected components of `n` items under `links` (union-find).
pub fn clusters_from_links(n: usize, links: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in links {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Gold event clusters by `event_id`, as event indices.
pub fn key_clusters(doc: &Document) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in doc.events.iter().enumerate() {
        groups.entry(&e.event_id).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Transitive closure of predicted coreference links.
pub fn response_clusters(doc: &Document, predicted: &[RelationTuple]) -> Vec<Vec<usize>> {
    let links: Vec<(usize, usize)> = predicted
        .iter()
        .filter(|r| r.rel_type == RelType::Coreference && r.subtype != 0)
        .filter_map(|r| match (r.source, r.target) {
            (MentionRef::Event(a), MentionRef::Event(b)) => Some((a, b)),
            _ => None,
        })
        .collect();
    clusters_from_links(doc.events.len(), &links)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MicroCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl MicroCounts {
    pub fn add(&mut self, other: MicroCounts) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
    }

    pub fn score(&self) -> Prf {
        let tp = self.true_positive as f64;
        Prf::from_ratios(tp, tp + self.false_positive as f64, tp, tp + self.false_negative as f64)
    }
}

/// Exact-match counts over `(source, target, subtype)` triples, NONE excluded.
pub fn micro_counts<I: Eq + Hash>(gold: &HashSet<I>, pred: &HashSet<I>) -> MicroCounts {
    let tp = gold.intersection(pred).count();
    MicroCounts {
        true_positive: tp,
        false_positive: pred.len() - tp,
        false_negative: gold.len() - tp,
    }
}

pub fn micro_prf<I: Eq + Hash>(gold: &HashSet<I>, pred: &HashSet<I>) -> Prf {
    micro_counts(gold, pred).score()
}

fn triples(rels: &[RelationTuple], rel: RelType) -> HashSet<(MentionRef, MentionRef, usize)> {
    rels.iter()
        .filter(|r| r.rel_type == rel && r.subtype != 0)
        .map(|r| (r.source, r.target, r.subtype))
        .collect()
}

/// Scores per task; coreference uses MUC, the rest micro P/R/F1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: BTreeMap<RelType, Prf>,
}

impl EvalReport {
    pub fn get(&self, rel: RelType) -> Prf {
        self.scores.get(&rel).copied().unwrap_or_default()
    }

    /// Mean F1 over the scored tasks.
    pub fn mean_f1(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.values().map(|s| s.f1).sum::<f64>() / self.scores.len() as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.scores).expect("scores serialize")
    }

    /// Plain-text table: one P/R/F1 column group per task, as percentages.
    pub fn table(&self, label: &str) -> String {
        let tasks: Vec<RelType> = self.scores.keys().copied().collect();
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "");
        for r in &tasks {
            let _ = write!(out, " | {:^20}", r.name());
        }
        out.push('\n');
        let _ = write!(out, "{:<16}", "Model");
        for _ in &tasks {
            let _ = write!(out, " | {:>6} {:>6} {:>6}", "P", "R", "F1");
        }
        out.push('\n');
        let _ = write!(out, "{label:<16}");
        for r in &tasks {
            let s = self.scores[r];
            let _ = write!(
                out,
                " | {:>6.2} {:>6.2} {:>6.2}",
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            );
        }
        out.push('\n');
        out
    }
}

/// Scores predictions against the documents' gold relations, pooled over
/// documents. `predictions[i]` belongs to `docs[i]`.
pub fn evaluate(docs: &[Document], predictions: &[Vec<RelationTuple>], tasks: &[RelType]) -> Result<EvalReport> {
    if docs.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} documents but {} prediction lists",
            docs.len(),
            predictions.len()
        )));
    }
    let mut muc = MucCounts::default();
    let mut micro: BTreeMap<RelType, MicroCounts> = BTreeMap::new();
    for (doc, pred) in docs.iter().zip(predictions) {
        for &r in tasks {
            if r == RelType::Coreference {
                muc.add(muc_counts(&key_clusters(doc), &response_clusters(doc, pred))?);
            } else {
                micro
                    .entry(r)
                    .or_default()
                    .add(micro_counts(&triples(&doc.relations, r), &triples(pred, r)));
            }
        }
    }
    let mut scores = BTreeMap::new();
    for &r in tasks {
        let s = if r == RelType::Coreference {
            muc.score()
        } else {
            micro.get(&r).copied().unwrap_or_default().score()
        };
        scores.insert(r, s);
    }
    Ok(EvalReport { scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::toy_doc;
    use proptest::prelude::*;

    fn parts(p: &[&[char]]) -> Vec<Vec<char>> {
        p.iter().map(|s| s.to_vec()).collect()
    }

    #[test]
    fn muc_examples() {
        let key = parts(&[&['a', 'b', 'c']]);
        assert_eq!(
            muc_score(&key, &key).unwrap(),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let s = muc_score(&key, &parts(&[&['a', 'b'], &['c']])).unwrap();
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.precision, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let singles = parts(&[&['a'], &['b']]);
        assert_eq!(muc_score(&singles, &singles).unwrap(), Prf::default());
        assert!(muc_score(&parts(&[&['a', 'b'], &['b']]), &singles).is_err());
    }

    #[test]
    fn micro_examples() {
        let g: HashSet<&str> = ["A", "B"].into_iter().collect();
        assert_eq!(micro_prf(&g, &g).f1, 1.0);
        assert_eq!(micro_prf(&g, &HashSet::new()), Prf::default());
        let p: HashSet<&str> = ["A", "C"].into_iter().collect();
        let s = micro_prf(&g, &p);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn union_find_closure() {
        let c = clusters_from_links(5, &[(0, 2), (2, 4), (3, 3)]);
        assert_eq!(c, vec![vec![0, 2, 4], vec![1], vec![3]]);
    }

    #[test]
    fn gold_predictions_score_perfectly() {
        let doc = toy_doc();
        let r = evaluate(
            std::slice::from_ref(&doc),
            std::slice::from_ref(&doc.relations),
            &RelType::ALL,
        )
        .unwrap();
        // toy_doc has no subevent gold, so that task scores 0/0.
        for rel in [RelType::Coreference, RelType::Temporal, RelType::Causal] {
            assert_eq!(r.get(rel).f1, 1.0, "{rel}");
        }
        assert_eq!(r.get(RelType::Subevent), Prf::default());
        let json = r.to_json();
        assert_eq!(json["coreference"]["F1"], 1.0);
        assert!(r.table("GraphERE").contains("100.00"));
    }

    /// All set partitions of `0..n`, as restricted growth strings.
    fn partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
        fn rec(i: usize, n: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<Vec<usize>>>) {
            if i == n {
                let k = labels.iter().max().map_or(0, |m| m + 1);
                let mut p = vec![Vec::new(); k];
                for (x, &l) in labels.iter().enumerate() {
                    p[l].push(x);
                }
                out.push(p);
                return;
            }
            let next = labels.iter().max().map_or(0, |m| m + 1);
            for l in 0..=next {
                labels.push(l);
                rec(i + 1, n, labels, out);
                labels.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, &mut Vec::new(), &mut out);
        out
    }

    // Direct reading of the formula: |p(S)| counts response clusters that
    // intersect S plus one per mention of S that no response cluster covers.
    fn brute_side(key: &[Vec<usize>], resp: &[Vec<usize>]) -> (usize, usize) {
        let mut num = 0;
        let mut den = 0;
        for s in key {
            let touched = resp.iter().filter(|r| r.iter().any(|m| s.contains(m))).count();
            let uncovered = s.iter().filter(|m| !resp.iter().any(|r| r.contains(m))).count();
            num += s.len() - (touched + uncovered);
            den += s.len() - 1;
        }
        (num, den)
    }

    #[test]
    fn muc_matches_exhaustive_oracle() {
        let mut checked = 0;
        for n in 1..=6 {
            let all = partitions(n);
            for key in &all {
                for resp in &all {
                    let (rn, rd) = brute_side(key, resp);
                    let (pn, pd) = brute_side(resp, key);
                    let expect = Prf::from_ratios(pn as f64, pd as f64, rn as f64, rd as f64);
                    assert_eq!(muc_score(key, resp).unwrap(), expect);
                    checked += 1;
                }
            }
        }
        // Bell numbers 1, 2, 5, 15, 52, 203 squared.
        assert_eq!(checked, 1 + 4 + 25 + 225 + 2704 + 41209);
    }

    proptest! {
        #[test]
        fn f1_between_p_and_r(tp in 0usize..50, fp in 0usize..50, fneg in 0usize..50) {
            let s = MicroCounts { true_positive: tp, false_positive: fp, false_negative: fneg }.score();
            if s.precision > 0.0 && s.recall > 0.0 {
                prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-15);
                prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
            }
        }

        #[test]
        fn document_order_does_not_matter(rot in 0usize..3) {
            let mut docs = Vec::new();
            let mut preds = Vec::new();
            for k in 0..3 {
                let mut d = toy_doc();
                d.doc_id = format!("d{k}");
                let mut p = d.relations.clone();
                p.truncate(k);
                docs.push(d);
                preds.push(p);
            }
            let base = evaluate(&docs, &preds, &RelType::ALL).unwrap();
            docs.rotate_left(rot);
            preds.rotate_left(rot);
            prop_assert_eq!(evaluate(&docs, &preds, &RelType::ALL).unwrap(), base);
        }
    }
}
