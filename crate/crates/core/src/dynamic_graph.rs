//! Per-relation dynamic graphs: weighted cosine similarity, threshold
//! sparsification and degree-normalized GCN refinement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RelType;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

/// Default thresholds for coreference, temporal, causal, subevent.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.6, 0.4, 0.6, 0.8];

#[derive(Clone, Debug)]
pub struct DynamicGraphHead {
    pub rel_type: RelType,
    /// Feature weighting `w_r`, length `dim`.
    pub weight: ParamId,
    pub threshold: f64,
    /// One `(W, b)` pair per propagation layer.
    pub layers: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
}

impl DynamicGraphHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        rel_type: RelType,
        dim: usize,
        threshold: f64,
        depth: usize,
        activation: Activation,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} not in [0, 1)")));
        }
        if depth == 0 {
            return Err(Error::invalid("gcn depth must be at least 1"));
        }
        let prefix = format!("dynamic.{}", rel_type.name());
        let weight = store.register(
            &format!("{prefix}.w_r"),
            Tensor::full(&[dim], T::one()),
            ParamGroup::Other,
        )?;
        let layers = (0..depth)
            .map(|l| {
                let w = store.register_uniform(&format!("{prefix}.gcn{l}.weight"), &[dim, dim], dim, rng)?;
                let b = store.register(
                    &format!("{prefix}.gcn{l}.bias"),
                    Tensor::zeros(&[dim]),
                    ParamGroup::Other,
                )?;
                Ok((w, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rel_type,
            weight,
            threshold,
            layers,
            activation,
        })
    }

    /// Timex nodes only join the temporal graph.
    pub fn uses_timexes(&self) -> bool {
        self.rel_type == RelType::Temporal
    }
}

/// `S_ij = cos(w∘x_i, w∘x_j)`. Rows whose weighted norm vanishes get a unit
/// diagonal and zero elsewhere; their indices are returned.
pub fn weighted_cosine<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var) -> Result<(Var, Vec<usize>)> {
    let weighted = g.mul_row(x, w)?;
    let zero_rows: Vec<usize> = {
        let v = g.value(weighted);
        (0..v.rows())
            .filter(|&i| v.row(i).iter().all(|&a| a == T::zero()))
            .collect()
    };
    let u = g.row_normalize(weighted)?;
    let ut = g.transpose(u)?;
    let s = g.matmul(u, ut)?;
    if zero_rows.is_empty() {
        return Ok((s, zero_rows));
    }
    log::warn!("{} node(s) have a zero weighted feature vector", zero_rows.len());
    let n = g.shape(s)[0];
    let mut fix = Tensor::zeros(&[n, n]);
    for &i in &zero_rows {
        fix.data_mut()[i * n + i] = T::one();
    }
    let fix = g.constant(fix);
    Ok((g.add(s, fix)?, zero_rows))
}

/// Neighbor indicator: `s_ij > threshold`, with the diagonal always kept so
/// rounding in `s_ii` cannot drop a self loop.
pub fn threshold_mask<T: Scalar>(s: &Tensor<T>, threshold: f64) -> Vec<bool> {
    let n = s.cols();
    s.data()
        .iter()
        .enumerate()
        .map(|(k, &v)| k / n == k % n || v.as_f64() > threshold)
        .collect()
}

/// `A = mask ∘ S`; the mask is a constant for the backward pass.
pub fn sparsify<T: Scalar>(g: &mut Graph<T>, s: Var, threshold: f64) -> Result<(Var, Vec<bool>)> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} not in [0, 1)")));
    }
    let mask = threshold_mask(g.value(s), threshold);
    let c = Tensor::new(
        g.shape(s).to_vec(),
        mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
    )?;
    Ok((g.mul_const(s, c)?, mask))
}

/// `1 / sqrt(|A(i)| |A(j)|)` on retained entries, zero elsewhere.
pub fn propagation_matrix<T: Scalar>(mask: &[bool], n: usize) -> Tensor<T> {
    let deg: Vec<f64> = (0..n)
        .map(|i| mask[i * n..(i + 1) * n].iter().filter(|&&m| m).count() as f64)
        .collect();
    let mut c = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if mask[i * n + j] {
                c.data_mut()[i * n + j] = T::lit(1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    c
}

/// One propagation: `σ(C · X · W + b)`.
pub fn gcn_layer<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    (w, b): (ParamId, ParamId),
    activation: Activation,
    x: Var,
    propagation: &Tensor<T>,
) -> Result<Var> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let xw = g.matmul(x, w)?;
    let c = g.constant(propagation.clone());
    let msg = g.matmul(c, xw)?;
    let out = g.add_row(msg, b)?;
    Ok(g.activate(out, activation))
}

/// Stacked propagation over the neighbor sets given by `mask`.
pub fn gcn_refine<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &DynamicGraphHead,
    x: Var,
    mask: &[bool],
) -> Result<Var> {
    let n = g.shape(x)[0];
    if mask.len() != n * n {
        return Err(Error::ShapeMismatch {
            op: "gcn_refine",
            left: vec![n, n],
            right: vec![mask.len()],
        });
    }
    let c = propagation_matrix(mask, n);
    let mut h = x;
    for &layer in &head.layers {
        h = gcn_layer(g, store, layer, head.activation, h, &c)?;
    }
    Ok(h)
}

/// Retained edge of a dynamic graph, indices into the head's node list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainedEdge {
    pub i: usize,
    pub j: usize,
    pub s: f64,
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// Refined features for the head's nodes (events, then timexes if used).
    pub refined: Var,
    pub edges: Vec<RetainedEdge>,
    pub zero_rows: Vec<usize>,
}

/// Runs one head on the transformer output `x` whose first `n_events` rows
/// are events.
pub fn head_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &DynamicGraphHead,
    x: Var,
    n_events: usize,
) -> Result<HeadOutput> {
    let n_all = g.shape(x)[0];
    let nodes = if head.uses_timexes() || n_events == n_all {
        x
    } else {
        let idx: Vec<usize> = (0..n_events).collect();
        g.gather_rows(x, &idx)?
    };
    let n = g.shape(nodes)[0];
    if n == 0 {
        return Ok(HeadOutput {
            refined: nodes,
            edges: Vec::new(),
            zero_rows: Vec::new(),
        });
    }
    let w = g.param(store, head.weight);
    let (s, zero_rows) = weighted_cosine(g, nodes, w)?;
    let (a, mask) = sparsify(g, s, head.threshold)?;
    let av = g.value(a);
    let edges = (0..n * n)
        .filter(|&k| mask[k])
        .map(|k| RetainedEdge {
            i: k / n,
            j: k % n,
            s: av.data()[k].as_f64(),
        })
        .collect();
    let refined = gcn_refine(g, store, head, nodes, &mask)?;
    Ok(HeadOutput {
        refined,
        edges,
        zero_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head(dim: usize, act: Activation, seed: u64) -> (ParamStore<f64>, DynamicGraphHead) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DynamicGraphHead::new(&mut store, &mut rng, RelType::Causal, dim, 0.6, 1, act).unwrap();
        (store, h)
    }

    fn cosine(rows: &[f64], w: &[f64], n: usize) -> Tensor<f64> {
        let mut g = Graph::new();
        let d = w.len();
        let x = g.constant(Tensor::from_f64(&[n, d], rows).unwrap());
        let wv = g.constant(Tensor::vector(w.to_vec()));
        let (s, _) = weighted_cosine(&mut g, x, wv).unwrap();
        g.value(s).clone()
    }

    #[test]
    fn cosine_examples() {
        let s = cosine(&[1., 2., 1., 2.], &[1., 1.], 2);
        assert!((s.at(0, 1) - 1.0).abs() < 1e-15);
        let s = cosine(&[1., 0., 0., 1.], &[1., 1.], 2);
        assert_eq!(s.at(0, 1), 0.0);
        let s = cosine(&[1., 1., 1., 0.], &[1., 2.], 2);
        assert!((s.at(0, 1) - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_row_gets_unit_diagonal_only() {
        let s = cosine(&[1., 2., 0., 0., 3., 1.], &[1., 1.], 3);
        assert_eq!(s.row(1), &[0., 1., 0.]);
        assert_eq!(s.at(0, 1), 0.0);
        assert_eq!(s.at(2, 1), 0.0);
    }

    #[test]
    fn sparsify_boundary() {
        let mut g = Graph::<f64>::new();
        let vals = [1.0, 0.55, 0.6, 0.55, 0.5, 0.61, 0.6, 0.61, 1.0];
        let s = g.constant(Tensor::from_f64(&[3, 3], &vals).unwrap());
        let (a, mask) = sparsify(&mut g, s, 0.6).unwrap();
        // strict comparison off the diagonal; the diagonal is always kept
        assert_eq!(mask, vec![true, false, false, false, true, true, false, true, true]);
        assert_eq!(g.value(a).data(), &[1.0, 0., 0., 0., 0.5, 0.61, 0., 0.61, 1.0]);
        assert!(sparsify(&mut g, s, 1.0).is_err());
    }

    #[test]
    fn default_thresholds() {
        let by_type: Vec<f64> = RelType::ALL.iter().map(|r| DEFAULT_THRESHOLDS[r.index()]).collect();
        assert_eq!(by_type, vec![0.6, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn isolated_node_passes_through() {
        let (mut store, h) = head(2, Activation::Identity, 0);
        store.get_mut(h.layers[0].0).value = Tensor::identity(2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let mask = vec![true, false, false, true];
        let out = gcn_refine(&mut g, &store, &h, x, &mask).unwrap();
        assert_eq!(g.value(out).data(), &[1., 0., 0., 1.]);
    }

    #[test]
    fn two_connected_nodes_by_hand() {
        let (mut store, h) = head(2, Activation::Identity, 0);
        store.get_mut(h.layers[0].0).value = Tensor::from_f64(&[2, 2], &[2., 0., 1., 1.]).unwrap();
        store.get_mut(h.layers[0].1).value = Tensor::vector(vec![0.5, -0.5]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., -1.]).unwrap());
        let out = gcn_refine(&mut g, &store, &h, x, &[true; 4]).unwrap();
        // x·W: [4, 2], [5, -1]; every c_ij = 2.
        let expect = [(4. + 5.) / 2. + 0.5, (2. - 1.) / 2. - 0.5];
        let v = g.value(out);
        for i in 0..2 {
            assert!((v.at(i, 0) - expect[0]).abs() < 1e-10);
            assert!((v.at(i, 1) - expect[1]).abs() < 1e-10);
        }
    }

    fn oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], mask: &[bool], relu: bool) -> Vec<f64> {
        let (n, d) = (x.rows(), x.cols());
        let deg = |i: usize| (0..n).filter(|&j| mask[i * n + j]).count() as f64;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                let mut acc = b[k];
                for j in 0..n {
                    if mask[i * n + j] {
                        let wx: f64 = (0..d).map(|m| x.at(j, m) * w.at(m, k)).sum();
                        acc += wx / (deg(i).sqrt() * deg(j).sqrt());
                    }
                }
                out[i * d + k] = if relu { acc.max(0.0) } else { acc };
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn gcn_matches_double_loop(seed in 0u64..500, n in 1usize..=10) {
            let (mut store, h) = head(4, Activation::Relu, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.get_mut(h.layers[0].1).value = random(&mut rng, &[4]);
            let xs = random(&mut rng, &[n, 4]);
            let mut mask = vec![false; n * n];
            for i in 0..n {
                mask[i * n + i] = true;
                for j in 0..i {
                    let on = rng.random_bool(0.4);
                    mask[i * n + j] = on;
                    mask[j * n + i] = on;
                }
            }
            let mut g = Graph::new();
            let x = g.constant(xs.clone());
            let out = gcn_refine(&mut g, &store, &h, x, &mask).unwrap();
            let expect = oracle(&xs, store.value(h.layers[0].0), store.value(h.layers[0].1).data(), &mask, true);
            for (a, b) in g.value(out).data().iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn similarity_is_symmetric_scale_invariant_and_keeps_self_loops(seed in 0u64..500, n in 1usize..8, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = random(&mut rng, &[n, 5]);
            let w = random(&mut rng, &[5]);
            let s = cosine(xs.data(), w.data(), n);
            let scaled = cosine(&xs.data().iter().map(|v| v * c).collect::<Vec<_>>(), w.data(), n);
            prop_assert!(s.max_abs_diff(&scaled) < 1e-12);
            for i in 0..n {
                prop_assert!((s.at(i, i) - 1.0).abs() < 1e-12);
                for j in 0..n {
                    prop_assert!((s.at(i, j) - s.at(j, i)).abs() < 1e-9);
                    prop_assert!(s.at(i, j) <= 1.0 + 1e-12 && s.at(i, j) >= -1.0 - 1e-12);
                }
            }
            let mut last = usize::MAX;
            for k in 0..10 {
                let eps = k as f64 / 10.0;
                let mask = threshold_mask(&s, eps);
                let count = mask.iter().filter(|&&m| m).count();
                prop_assert!(count <= last);
                last = count;
                for i in 0..n {
                    prop_assert!(mask[i * n + i]);
                }
            }
        }
    }

    #[test]
    fn head_selects_nodes_by_relation() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let temporal =
            DynamicGraphHead::new(&mut store, &mut rng, RelType::Temporal, 3, 0.4, 1, Activation::Relu).unwrap();
        let causal = DynamicGraphHead::new(&mut store, &mut rng, RelType::Causal, 3, 0.6, 1, Activation::Relu).unwrap();
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[5, 3]));
        let t = head_forward(&mut g, &store, &temporal, x, 3).unwrap();
        let c = head_forward(&mut g, &store, &causal, x, 3).unwrap();
        assert_eq!(g.shape(t.refined), &[5, 3]);
        assert_eq!(g.shape(c.refined), &[3, 3]);
        assert!(c.edges.iter().all(|e| e.s > 0.6));
        assert_eq!(c.edges.iter().filter(|e| e.i == e.j).count(), 3);
    }
}
