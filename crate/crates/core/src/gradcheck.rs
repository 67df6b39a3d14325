//! Central finite-difference checks of the reverse-mode gradients.
//!
//! Each check builds a scalar from a function of one or more tracked inputs,
//! compares the tape gradient of every input with
//! `(f(x + h·e_k) − f(x − h·e_k)) / 2h`, and reports the norm-wise relative
//! error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-8)` of the worst input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{LabelScheme, RelType};
use crate::error::{Error, Result};
use crate::model::{GraphEre, ModelConfig};
use crate::synthetic::{generate, SynthConfig};
use crate::tensor::{Activation, Graph, ParamId, Tensor, Var};
use crate::trainer::{batch_loss, DEFAULT_LAMBDAS};

pub const OP_TOLERANCE: f64 = 1e-6;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: &str, rel_err: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            rel_err,
            tolerance,
            passed: rel_err <= tolerance,
        }
    }
}

/// Plain-text table of `rows`.
pub fn format_table(rows: &[CheckRow]) -> String {
    let mut out = format!("{:<28} {:>12} {:>10}  result\n", "check", "rel err", "tol");
    for r in rows {
        out.push_str(&format!(
            "{:<28} {:>12.3e} {:>10.0e}  {}\n",
            r.name,
            r.rel_err,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8);
    diff / scale
}

/// Worst relative error over `inputs` for the scalar `f`.
pub fn check_function<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = x0 - STEP;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Entries bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    random(rng, shape).map(|x| if x < 0.0 { x - 0.1 } else { x + 0.1 })
}

/// Reduces any output to a scalar with fixed random weights.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(out));
    let weighted = g.mul_const(out, w)?;
    Ok(g.sum(weighted))
}

type OpCase = (
    &'static str,
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
);

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mask: Vec<bool> = vec![
        true, false, true, true, //
        false, false, false, false, //
        true, true, false, true,
    ];
    let labels = vec![2usize, 0, 3];
    vec![
        (
            "matmul",
            vec![random(r, &[3, 4]), random(r, &[4, 2])],
            Box::new(|g, v| {
                let o = g.matmul(v[0], v[1])?;
                project(g, o, 1)
            }),
        ),
        (
            "transpose",
            vec![random(r, &[3, 4])],
            Box::new(|g, v| {
                let o = g.transpose(v[0])?;
                project(g, o, 2)
            }),
        ),
        (
            "add",
            vec![random(r, &[2, 3]), random(r, &[2, 3])],
            Box::new(|g, v| {
                let o = g.add(v[0], v[1])?;
                project(g, o, 3)
            }),
        ),
        (
            "sub",
            vec![random(r, &[2, 3]), random(r, &[2, 3])],
            Box::new(|g, v| {
                let o = g.sub(v[0], v[1])?;
                project(g, o, 4)
            }),
        ),
        (
            "mul",
            vec![random(r, &[2, 3]), random(r, &[2, 3])],
            Box::new(|g, v| {
                let o = g.mul(v[0], v[1])?;
                project(g, o, 5)
            }),
        ),
        (
            "scale",
            vec![random(r, &[2, 3])],
            Box::new(|g, v| {
                let o = g.scale(v[0], -1.7);
                project(g, o, 6)
            }),
        ),
        (
            "add_row",
            vec![random(r, &[3, 4]), random(r, &[4])],
            Box::new(|g, v| {
                let o = g.add_row(v[0], v[1])?;
                project(g, o, 7)
            }),
        ),
        (
            "mul_row",
            vec![random(r, &[3, 4]), random(r, &[4])],
            Box::new(|g, v| {
                let o = g.mul_row(v[0], v[1])?;
                project(g, o, 8)
            }),
        ),
        (
            "relu",
            vec![away_from_zero(r, &[3, 4])],
            Box::new(|g, v| {
                let o = g.relu(v[0]);
                project(g, o, 9)
            }),
        ),
        (
            "leaky_relu",
            vec![away_from_zero(r, &[3, 4])],
            Box::new(|g, v| {
                let o = g.leaky_relu(v[0], 0.2);
                project(g, o, 10)
            }),
        ),
        (
            "activate(identity)",
            vec![random(r, &[2, 2])],
            Box::new(|g, v| {
                let o = g.activate(v[0], Activation::Identity);
                project(g, o, 11)
            }),
        ),
        (
            "softmax_rows",
            vec![random(r, &[3, 4])],
            Box::new(|g, v| {
                let o = g.softmax_rows(v[0])?;
                project(g, o, 12)
            }),
        ),
        (
            "masked_softmax_rows",
            vec![random(r, &[3, 4])],
            Box::new(move |g, v| {
                let o = g.masked_softmax_rows(v[0], &mask)?;
                project(g, o, 13)
            }),
        ),
        (
            "cross_entropy",
            vec![random(r, &[3, 4])],
            Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
        ),
        (
            "sum",
            vec![random(r, &[3, 2])],
            Box::new(|g, v| {
                let o = g.sum(v[0]);
                g.mul(o, o)
            }),
        ),
        (
            "mean",
            vec![random(r, &[3, 2])],
            Box::new(|g, v| {
                let o = g.mean(v[0]);
                g.mul(o, o)
            }),
        ),
        (
            "gather_rows",
            vec![random(r, &[4, 3])],
            Box::new(|g, v| {
                let o = g.gather_rows(v[0], &[2, 0, 2, 3])?;
                project(g, o, 14)
            }),
        ),
        (
            "concat_cols",
            vec![random(r, &[3, 2]), random(r, &[3, 1])],
            Box::new(|g, v| {
                let o = g.concat_cols(&[v[0], v[1], v[0]])?;
                project(g, o, 15)
            }),
        ),
        (
            "concat_rows",
            vec![random(r, &[2, 3]), random(r, &[1, 3])],
            Box::new(|g, v| {
                let o = g.concat_rows(&[v[1], v[0]])?;
                project(g, o, 16)
            }),
        ),
        (
            "row_normalize",
            vec![away_from_zero(r, &[3, 4])],
            Box::new(|g, v| {
                let o = g.row_normalize(v[0])?;
                project(g, o, 17)
            }),
        ),
        (
            "span_mean",
            vec![random(r, &[5, 3])],
            Box::new(|g, v| {
                let o = g.span_mean(v[0], &[(0, 2), (1, 5), (4, 5)])?;
                project(g, o, 18)
            }),
        ),
        (
            "mul_const",
            vec![random(r, &[2, 3])],
            Box::new(|g, v| {
                let c = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.25])?;
                let o = g.mul_const(v[0], c)?;
                project(g, o, 19)
            }),
        ),
        (
            "dropout(training)",
            vec![random(r, &[4, 4])],
            Box::new(|g, v| {
                let o = g.dropout(v[0], 0.3, true, 7)?;
                project(g, o, 20)
            }),
        ),
    ]
}

/// One row per differentiable op.
pub fn check_ops(seed: u64) -> Result<Vec<CheckRow>> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| Ok(CheckRow::new(name, check_function(&inputs, f)?, OP_TOLERANCE)))
        .collect()
}

/// Finite differences of the joint training loss of a 6-event synthetic
/// document with respect to every parameter entry. Classifier weights are
/// randomized first, since zero classifiers block all upstream gradients.
pub fn check_end_to_end(seed: u64) -> Result<CheckRow> {
    let synth = SynthConfig {
        seed,
        num_docs: 1,
        events_min: 6,
        events_max: 6,
        dim: 8,
        ..SynthConfig::default()
    };
    let bundle = generate::<f64>(&synth)?;
    let config = ModelConfig {
        head_count: 2,
        ..ModelConfig::default()
    };
    let mut model = GraphEre::with_frozen(config, LabelScheme::default(), bundle.embeddings, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in model.classifiers.clone() {
        for id in [c.weight, c.bias] {
            let shape = model.store.value(id).shape().to_vec();
            model.store.get_mut(id).value = random(&mut rng, &shape).map(|x| 0.5 * x);
        }
    }
    let doc = model.prepare(bundle.docs[0].clone(), Some(&bundle.graphs[0]))?;
    if doc.doc.events.len() != 6 {
        return Err(Error::invalid("end-to-end check needs a 6-event document"));
    }
    let loss = |m: &GraphEre<f64>| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::new();
        let (total, _) = batch_loss(&mut g, m, &[&doc], &RelType::ALL, &DEFAULT_LAMBDAS, true, &[seed])?;
        Ok((g, total))
    };

    let (g, total) = loss(&model)?;
    let grads = g.backward(total)?;
    model.store.zero_grad();
    model.store.accumulate(&g, &grads);
    let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in ids {
        let grad = model.store.get(id).grad.clone().expect("accumulated");
        analytic.extend_from_slice(grad.data());
        for i in 0..grad.numel() {
            let x0 = model.store.value(id).data()[i];
            model.store.get_mut(id).value.data_mut()[i] = x0 + STEP;
            let (g, t) = loss(&model)?;
            let up = g.value(t).item();
            model.store.get_mut(id).value.data_mut()[i] = x0 - STEP;
            let (g, t) = loss(&model)?;
            let down = g.value(t).item();
            model.store.get_mut(id).value.data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    model.store.clear_grad();
    Ok(CheckRow::new(
        "end-to-end (all params)",
        rel_err(&analytic, &numeric),
        END_TO_END_TOLERANCE,
    ))
}

/// Every op check followed by the end-to-end check.
pub fn run_all(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = check_ops(seed)?;
    rows.push(check_end_to_end(seed)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for row in check_ops(0).unwrap() {
            assert!(row.passed, "{row:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // sum(relu(x)) has gradient 1 on positives; checking it against
        // sum(x) on a mixed-sign input must disagree.
        let x = Tensor::from_f64(&[1, 4], &[0.5, -0.5, 1.0, -1.0]).unwrap();
        let err = check_function(std::slice::from_ref(&x), |g, v| {
            let r = g.relu(v[0]);
            Ok(g.sum(r))
        })
        .unwrap();
        assert!(err < 1e-8);
        let stopped = check_function(&[x], |g, v| {
            let c = g.constant(g.value(v[0]).clone());
            let o = g.add(v[0], c)?;
            // The copy moves with x numerically but is invisible to the tape.
            Ok(g.sum(o))
        })
        .unwrap();
        assert!(stopped > 0.1);
    }

    #[test]
    fn end_to_end_passes() {
        let row = check_end_to_end(0).unwrap();
        assert!(row.passed, "{row:?}");
    }

    #[test]
    fn table_lists_each_row() {
        let rows = vec![CheckRow::new("a", 1e-9, 1e-6), CheckRow::new("b", 1.0, 1e-6)];
        let t = format_table(&rows);
        assert!(t.contains("PASS") && t.contains("FAIL"));
        assert_eq!(t.lines().count(), 3);
    }
}
