//! Multi-head self-attention over the mention nodes (events, then timexes).

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct NodeTransformerLayer {
    pub dim: usize,
    pub head_count: usize,
    /// One `dim × dim/head_count` projection per head.
    pub projections: Vec<ParamId>,
    /// `dim × dim`.
    pub output: ParamId,
    pub dropout_rate: f64,
}

impl NodeTransformerLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        dim: usize,
        head_count: usize,
        dropout_rate: f64,
    ) -> Result<Self> {
        if head_count == 0 || !dim.is_multiple_of(head_count) {
            return Err(Error::invalid(format!(
                "hidden size {dim} is not divisible by head count {head_count}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        let dh = dim / head_count;
        let projections = (0..head_count)
            .map(|h| store.register_uniform(&format!("transformer.head{h}.proj"), &[dim, dh], dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = store.register_uniform("transformer.output", &[dim, dim], dim, rng)?;
        Ok(Self {
            dim,
            head_count,
            projections,
            output,
            dropout_rate,
        })
    }

    /// `1/sqrt(dim)`, shared by every head.
    pub fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }
}

/// Attention matrix of one head: `softmax(P Pᵀ / sqrt(dim))` with `P = X·W_h`.
pub fn head_attention<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &NodeTransformerLayer,
    x: Var,
    head: usize,
) -> Result<(Var, Var)> {
    let w = g.param(store, layer.projections[head]);
    let p = g.matmul(x, w)?;
    let pt = g.transpose(p)?;
    let scores = g.matmul(p, pt)?;
    let scaled = g.scale(scores, T::lit(layer.scale()));
    Ok((g.softmax_rows(scaled)?, p))
}

/// Output of one head, `N × dim/head_count`.
pub fn self_attention_head<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &NodeTransformerLayer,
    x: Var,
    head: usize,
) -> Result<Var> {
    let (attn, p) = head_attention(g, store, layer, x, head)?;
    g.matmul(attn, p)
}

/// `concat(heads) · W`, followed by dropout while training.
pub fn node_transform<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &NodeTransformerLayer,
    x: Var,
    training: bool,
    seed: u64,
) -> Result<Var> {
    if g.shape(x)[0] == 0 {
        return Ok(x);
    }
    let heads = (0..layer.head_count)
        .map(|h| self_attention_head(g, store, layer, x, h))
        .collect::<Result<Vec<_>>>()?;
    let cat = g.concat_cols(&heads)?;
    let w = g.param(store, layer.output);
    let out = g.matmul(cat, w)?;
    g.dropout(out, layer.dropout_rate, training, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, heads: usize, seed: u64) -> (ParamStore<f64>, NodeTransformerLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = NodeTransformerLayer::new(&mut store, &mut rng, dim, heads, 0.3).unwrap();
        (store, layer)
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(NodeTransformerLayer::new(&mut store, &mut rng, 6, 4, 0.3).is_err());
    }

    #[test]
    fn single_node_returns_projection() {
        let (store, layer) = setup(4, 2, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[1, 4], &[0.5, -1., 2., 0.25]).unwrap());
        let out = self_attention_head(&mut g, &store, &layer, x, 1).unwrap();
        let proj = g.value(x).matmul(store.value(layer.projections[1])).unwrap();
        assert!(g.value(out).max_abs_diff(&proj) < 1e-15);
    }

    #[test]
    fn identical_rows_stay_identical() {
        let (store, layer) = setup(4, 4, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[3, 4], &[1., 2., 3., 4., 1., 2., 3., 4., -1., 0., 1., 0.]).unwrap());
        let out = node_transform(&mut g, &store, &layer, x, false, 0).unwrap();
        let v = g.value(out);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn identity_projection_matches_formula() {
        let (mut store, layer) = setup(3, 1, 3);
        store.get_mut(layer.projections[0]).value = Tensor::identity(3);
        store.get_mut(layer.output).value = Tensor::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = random(&mut rng, 3, 3);
        let mut g = Graph::new();
        let x = g.constant(xs.clone());
        let head = self_attention_head(&mut g, &store, &layer, x, 0).unwrap();
        let full = node_transform(&mut g, &store, &layer, x, false, 0).unwrap();
        assert_eq!(g.value(head).data(), g.value(full).data());

        let scale = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (0..3).map(|k| xs.at(i, k) * xs.at(j, k)).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for k in 0..3 {
                let expect: f64 = (0..3).map(|j| (logits[j] - m).exp() / z * xs.at(j, k)).sum();
                assert!((g.value(head).at(i, k) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_training_drops() {
        let (store, layer) = setup(8, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = random(&mut rng, 5, 8);
        let mut g = Graph::new();
        let x = g.constant(xs);
        let a = node_transform(&mut g, &store, &layer, x, false, 1).unwrap();
        let b = node_transform(&mut g, &store, &layer, x, false, 2).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
        let t = node_transform(&mut g, &store, &layer, x, true, 1).unwrap();
        assert!(g.value(t).data().contains(&0.0));
        assert_eq!(g.value(t).shape(), &[5, 8]);
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_permutation_equivariant(seed in 0u64..200, n in 1usize..7) {
            let (store, layer) = setup(8, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let xs = random(&mut rng, n, 8);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);

            let mut g = Graph::new();
            let x = g.constant(xs.clone());
            for h in 0..4 {
                let (attn, _) = head_attention(&mut g, &store, &layer, x, h).unwrap();
                for i in 0..n {
                    let s: f64 = g.value(attn).row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
            }
            let out = node_transform(&mut g, &store, &layer, x, false, 0).unwrap();
            let xp = g.constant(xs.gather_rows(&perm).unwrap());
            let outp = node_transform(&mut g, &store, &layer, xp, false, 0).unwrap();
            let expect = g.value(out).gather_rows(&perm).unwrap();
            prop_assert!(g.value(outp).max_abs_diff(&expect) < 1e-12);
            prop_assert_eq!(g.value(out).shape(), &[n, 8]);
        }
    }
}
