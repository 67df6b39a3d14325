use super::Document;
use crate::error::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, span: (usize, usize)) -> bool {
        self.start <= span.0 && span.1 <= self.end
    }
}

/// Splits a document into disjoint windows of at most `max_tokens`.
///
/// Greedy left to right: each window ends at the furthest sentence boundary
/// that fits, falling back to the furthest position that does not cut through
/// a mention.
pub fn segment_document(doc: &Document, max_tokens: usize) -> Result<Vec<Window>> {
    let n = doc.tokens.len();
    if max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be positive"));
    }
    if let Some((s, e)) = doc.mention_spans().find(|(s, e)| e - s > max_tokens) {
        return Err(Error::validation(
            &doc.doc_id,
            "windowing",
            format!("mention [{s}, {e}) is longer than {max_tokens} tokens"),
        ));
    }
    // cut_ok[p]: no mention strictly straddles position p.
    let mut cut_ok = vec![true; n + 1];
    for (s, e) in doc.mention_spans() {
        for c in &mut cut_ok[s + 1..e] {
            *c = false;
        }
    }
    let mut is_boundary = vec![false; n + 1];
    is_boundary[n] = true;
    for &(_, e) in &doc.sentences {
        is_boundary[e] = true;
    }

    let mut windows = Vec::new();
    let mut start = 0;
    while start < n {
        let limit = (start + max_tokens).min(n);
        let end = if limit == n {
            n
        } else {
            let sentence_cut = (start + 1..=limit).rev().find(|&p| is_boundary[p] && cut_ok[p]);
            match sentence_cut.or_else(|| (start + 1..=limit).rev().find(|&p| cut_ok[p])) {
                Some(p) => p,
                None => {
                    return Err(Error::validation(
                        &doc.doc_id,
                        "windowing",
                        format!("no admissible cut in [{start}, {limit}]"),
                    ))
                }
            }
        };
        windows.push(Window { start, end });
        start = end;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EventMention, TimexMention};
    use proptest::prelude::*;

    fn doc(n: usize, sentences: Vec<(usize, usize)>, spans: Vec<(usize, usize)>) -> Document {
        Document {
            doc_id: "w".into(),
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            sentences,
            events: spans
                .into_iter()
                .enumerate()
                .map(|(i, span)| EventMention {
                    mention_id: format!("e{i}"),
                    span,
                    event_id: format!("E{i}"),
                })
                .collect(),
            timexes: Vec::<TimexMention>::new(),
            relations: Vec::new(),
        }
    }

    #[test]
    fn short_document_is_one_window() {
        let d = doc(50, vec![(0, 50)], vec![(3, 4)]);
        assert_eq!(segment_document(&d, 512).unwrap(), vec![Window { start: 0, end: 50 }]);
    }

    #[test]
    fn splits_at_sentence_boundary() {
        let d = doc(20, vec![(0, 10), (10, 20)], vec![]);
        let w = segment_document(&d, 10).unwrap();
        assert_eq!(w, vec![Window { start: 0, end: 10 }, Window { start: 10, end: 20 }]);
    }

    #[test]
    fn long_sentence_is_cut_outside_mentions() {
        let d = doc(12, vec![(0, 12)], vec![(4, 7)]);
        let w = segment_document(&d, 5).unwrap();
        assert_eq!(w[0], Window { start: 0, end: 4 });
        assert!(w.iter().any(|x| x.contains((4, 7))));
    }

    #[test]
    fn overlong_mention_is_an_error() {
        let d = doc(10, vec![(0, 10)], vec![(0, 6)]);
        assert!(segment_document(&d, 5).is_err());
    }

    fn arb_doc() -> impl Strategy<Value = (Document, usize)> {
        (1usize..60, 1usize..8, 3usize..20)
            .prop_flat_map(|(n, sent_len, max)| {
                let spans = prop::collection::vec((0..n, 1usize..=3), 0..8);
                (Just(n), Just(sent_len), Just(max), spans)
            })
            .prop_map(|(n, sent_len, max, raw)| {
                let sentences = (0..n).step_by(sent_len).map(|s| (s, (s + sent_len).min(n))).collect();
                let mut spans: Vec<(usize, usize)> = raw.into_iter().map(|(s, l)| (s, (s + l).min(n))).collect();
                spans.sort();
                (doc(n, sentences, spans), max)
            })
    }

    proptest! {
        #[test]
        fn windows_partition_tokens_and_keep_mentions_whole((d, max) in arb_doc()) {
            if let Ok(windows) = segment_document(&d, max) {
                let mut cursor = 0;
                for w in &windows {
                    prop_assert_eq!(w.start, cursor);
                    prop_assert!(!w.is_empty() && w.len() <= max);
                    cursor = w.end;
                }
                prop_assert_eq!(cursor, d.tokens.len());
                for s in d.mention_spans() {
                    prop_assert_eq!(windows.iter().filter(|w| w.contains(s)).count(), 1);
                }
            }
        }
    }
}
