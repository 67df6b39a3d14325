use std::collections::HashMap;

use super::{Document, MentionRef, RelType};

/// Ordered candidate pair with its gold class (0 = NONE).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidatePair {
    pub source: MentionRef,
    pub target: MentionRef,
    pub gold: usize,
}

/// All ordered event-event pairs, plus event->timex pairs for temporal.
pub fn enumerate_pairs(doc: &Document, rel: RelType) -> Vec<CandidatePair> {
    let gold: HashMap<(MentionRef, MentionRef), usize> = doc
        .relations
        .iter()
        .filter(|r| r.rel_type == rel)
        .map(|r| ((r.source, r.target), r.subtype))
        .collect();
    let p = doc.events.len();
    let q = if rel == RelType::Temporal { doc.timexes.len() } else { 0 };
    let mut out = Vec::with_capacity(p * p.saturating_sub(1) + p * q);
    let mut push = |source, target| {
        out.push(CandidatePair {
            source,
            target,
            gold: gold.get(&(source, target)).copied().unwrap_or(0),
        })
    };
    for i in 0..p {
        for j in 0..p {
            if i != j {
                push(MentionRef::Event(i), MentionRef::Event(j));
            }
        }
    }
    for i in 0..p {
        for k in 0..q {
            push(MentionRef::Event(i), MentionRef::Timex(k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::toy_doc;
    use crate::corpus::{EventMention, TimexMention};

    fn sized(p: usize, q: usize) -> Document {
        let mut d = toy_doc();
        d.tokens = vec!["x".into(); p + q];
        d.sentences = vec![(0, p + q)];
        d.events = (0..p)
            .map(|i| EventMention {
                mention_id: format!("e{i}"),
                span: (i, i + 1),
                event_id: format!("E{i}"),
            })
            .collect();
        d.timexes = (0..q)
            .map(|k| TimexMention {
                mention_id: format!("t{k}"),
                span: (p + k, p + k + 1),
            })
            .collect();
        d.relations.clear();
        d
    }

    #[test]
    fn counts_follow_ordered_policy() {
        assert_eq!(enumerate_pairs(&sized(3, 0), RelType::Causal).len(), 6);
        // 2 event-event + 2 event->timex
        assert_eq!(enumerate_pairs(&sized(2, 1), RelType::Temporal).len(), 4);
        assert_eq!(enumerate_pairs(&sized(2, 1), RelType::Causal).len(), 2);
        for rel in RelType::ALL {
            assert!(enumerate_pairs(&sized(1, 0), rel).is_empty());
        }
        for (p, q) in [(5, 2), (7, 0), (4, 3)] {
            let d = sized(p, q);
            assert_eq!(enumerate_pairs(&d, RelType::Temporal).len(), p * (p - 1) + p * q);
            assert_eq!(enumerate_pairs(&d, RelType::Subevent).len(), p * (p - 1));
        }
    }

    #[test]
    fn every_gold_tuple_fills_exactly_one_slot() {
        let d = toy_doc();
        for r in &d.relations {
            let pairs = enumerate_pairs(&d, r.rel_type);
            let hits = pairs
                .iter()
                .filter(|c| c.source == r.source && c.target == r.target)
                .collect::<Vec<_>>();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].gold, r.subtype);
        }
        let positives: usize = RelType::ALL
            .iter()
            .map(|&r| enumerate_pairs(&d, r).iter().filter(|c| c.gold != 0).count())
            .sum();
        assert_eq!(positives, d.relations.len());
    }
}
