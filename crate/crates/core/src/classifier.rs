//! Linear classifiers over ordered mention pairs.

use crate::corpus::{MentionRef, RelType};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct TaskClassifier {
    pub rel_type: RelType,
    /// `2·dim × classes`, zero at initialization.
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
}

impl TaskClassifier {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rel_type: RelType, dim: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "{rel_type} needs at least 2 classes, got {classes}"
            )));
        }
        let prefix = format!("classifier.{}", rel_type.name());
        let weight = store.register(
            &format!("{prefix}.weight"),
            Tensor::zeros(&[2 * dim, classes]),
            ParamGroup::Other,
        )?;
        let bias = store.register(&format!("{prefix}.bias"), Tensor::zeros(&[classes]), ParamGroup::Other)?;
        Ok(Self {
            rel_type,
            weight,
            bias,
            classes,
        })
    }
}

/// Row of a mention in a head's node list (events, then timexes).
pub fn node_index(m: MentionRef, n_events: usize) -> usize {
    match m {
        MentionRef::Event(i) => i,
        MentionRef::Timex(k) => n_events + k,
    }
}

/// `[h_src ; h_tgt] · W + b` for each `(src, tgt)` row pair.
pub fn pair_logits<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    clf: &TaskClassifier,
    features: Var,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let tgt: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let hs = g.gather_rows(features, &src)?;
    let ht = g.gather_rows(features, &tgt)?;
    let cat = g.concat_cols(&[hs, ht])?;
    let w = g.param(store, clf.weight);
    let b = g.param(store, clf.bias);
    let logits = g.matmul(cat, w)?;
    g.add_row(logits, b)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub source: MentionRef,
    pub target: MentionRef,
    pub rel_type: RelType,
    pub probs: Vec<f64>,
    pub label: usize,
}

impl PairPrediction {
    pub fn prob(&self) -> f64 {
        self.probs[self.label]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_classifier_is_uniform_and_decodes_none() {
        let mut store = ParamStore::<f64>::new();
        let clf = TaskClassifier::new(&mut store, RelType::Temporal, 3, 7).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = g.constant(random(&mut rng, &[4, 3]));
        let logits = pair_logits(&mut g, &store, &clf, h, &[(0, 1), (3, 2)]).unwrap();
        let p = g.softmax_rows(logits).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = g.value(p).row(i).to_vec();
            assert!(row.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
            assert_eq!(argmax(&row), 0);
        }
    }

    #[test]
    fn direction_matters_unless_halves_match() {
        let mut store = ParamStore::<f64>::new();
        let clf = TaskClassifier::new(&mut store, RelType::Causal, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        store.get_mut(clf.weight).value = random(&mut rng, &[4, 3]);
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let l = pair_logits(&mut g, &store, &clf, h, &[(0, 1), (1, 0)]).unwrap();
        assert_ne!(g.value(l).row(0), g.value(l).row(1));

        let half = random(&mut rng, &[2, 3]);
        let mut both = half.data().to_vec();
        both.extend_from_slice(half.data());
        store.get_mut(clf.weight).value = Tensor::new(vec![4, 3], both).unwrap();
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let l = pair_logits(&mut g, &store, &clf, h, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.value(l).row(0), g.value(l).row(1));
    }

    #[test]
    fn matches_per_pair_loop() {
        let mut store = ParamStore::<f64>::new();
        let clf = TaskClassifier::new(&mut store, RelType::Subevent, 5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        store.get_mut(clf.weight).value = random(&mut rng, &[10, 2]);
        store.get_mut(clf.bias).value = random(&mut rng, &[2]);
        let hs = random(&mut rng, &[6, 5]);
        let pairs: Vec<(usize, usize)> = (0..6)
            .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let mut g = Graph::new();
        let h = g.constant(hs.clone());
        let l = pair_logits(&mut g, &store, &clf, h, &pairs).unwrap();
        let (w, b) = (store.value(clf.weight), store.value(clf.bias));
        for (r, &(i, j)) in pairs.iter().enumerate() {
            for c in 0..2 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += hs.at(i, k) * w.at(k, c);
                }
                for k in 0..5 {
                    acc += hs.at(j, k) * w.at(5 + k, c);
                }
                acc += b.data()[c];
                assert!((g.value(l).at(r, c) - acc).abs() < 1e-12);
            }
        }
        assert!(pair_logits(&mut g, &store, &clf, h, &[(0, 6)]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[0.3, 0.3, 0.4]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
