//! Joint and single-task training with best-on-dev parameter selection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, RelType};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{GraphEre, PreparedDoc};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, Graph, Tensor, Var};

pub const DEFAULT_LAMBDAS: [f64; 4] = [0.5, 1.0, 5.0, 5.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Joint,
    Split(RelType),
}

impl TrainMode {
    pub fn tasks(self) -> Vec<RelType> {
        match self {
            TrainMode::Joint => RelType::ALL.to_vec(),
            TrainMode::Split(r) => vec![r],
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Joint => f.write_str("joint"),
            TrainMode::Split(r) => write!(f, "split:{}", r.name()),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "joint" => Ok(TrainMode::Joint),
            Some(("split", task)) => Ok(TrainMode::Split(task.parse()?)),
            _ => Err(Error::invalid(format!(
                "unknown mode `{s}`; expected joint or split:<task>"
            ))),
        }
    }
}

impl Serialize for TrainMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Loss weights indexed like [`RelType::index`].
    pub lambdas: [f64; 4],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Share of training documents held out for selection when no dev set
    /// is given.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            lambdas: DEFAULT_LAMBDAS,
            epochs: 30,
            batch_size: 8,
            lr_backbone: 2e-5,
            lr_other: 5e-4,
            weight_decay: 0.01,
            seed: 0,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if let Some(l) = self.lambdas.iter().find(|&&l| l.is_nan() || l <= 0.0) {
            return Err(Error::invalid(format!("loss weight {l} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::invalid(format!(
                "dev fraction {} not in [0, 1)",
                self.dev_fraction
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.lr_other,
            backbone_learning_rate: Some(self.lr_backbone),
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Mean cross-entropy over pooled pairs; a constant zero without pairs.
pub fn task_loss<T: Scalar>(g: &mut Graph<T>, logits: Option<Var>, labels: &[usize]) -> Result<Var> {
    match logits {
        Some(l) if !labels.is_empty() => g.cross_entropy(l, labels),
        _ => Ok(g.constant(Tensor::scalar(T::zero()))),
    }
}

/// `Σ λ_r · loss_r` in the order given.
pub fn joint_loss<T: Scalar>(g: &mut Graph<T>, losses: &[(Var, f64)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(l, lambda) in losses {
        let term = g.scale(l, T::lit(lambda));
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero()))))
}

/// Seeded split into `(train, dev)` index lists.
pub fn split_dev(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de70);
    idx.shuffle(&mut rng);
    let n_dev = if n >= 2 {
        ((n as f64) * fraction).round() as usize
    } else {
        0
    };
    let mut dev = idx[..n_dev].to_vec();
    let mut train = idx[n_dev..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    (train, dev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    /// Mean per-task loss over the epoch's batches, by task name.
    pub task_loss: std::collections::BTreeMap<RelType, f64>,
    pub total_loss: f64,
    pub dev: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub checkpoint: Option<String>,
}

/// Predictions for every document, eval mode.
pub fn predict_all<T: Scalar>(
    model: &GraphEre<T>,
    docs: &[PreparedDoc<T>],
    tasks: &[RelType],
) -> Result<Vec<Vec<crate::corpus::RelationTuple>>> {
    docs.iter().map(|d| model.predict(d, tasks)).collect()
}

pub fn evaluate_model<T: Scalar>(
    model: &GraphEre<T>,
    docs: &[PreparedDoc<T>],
    tasks: &[RelType],
) -> Result<EvalReport> {
    let preds = predict_all(model, docs, tasks)?;
    let gold: Vec<Document> = docs.iter().map(|d| d.doc.clone()).collect();
    evaluate(&gold, &preds, tasks)
}

/// Joint loss of `batch` built on `g`, with the per-task terms. `seeds`
/// drives dropout, one per document.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &GraphEre<T>,
    batch: &[&PreparedDoc<T>],
    tasks: &[RelType],
    lambdas: &[f64; 4],
    training: bool,
    seeds: &[u64],
) -> Result<(Var, Vec<(RelType, Var)>)> {
    let mut per_task: [Vec<Var>; 4] = Default::default();
    let mut labels: [Vec<usize>; 4] = Default::default();
    for (doc, &seed) in batch.iter().zip(seeds) {
        let fwd = model.forward(g, doc, tasks, training, seed)?;
        for &r in tasks {
            if let Some(l) = fwd.logits[r.index()] {
                per_task[r.index()].push(l);
                labels[r.index()].extend(doc.labels(r));
            }
        }
    }
    let mut terms = Vec::with_capacity(tasks.len());
    let mut weighted = Vec::with_capacity(tasks.len());
    for &r in tasks {
        let parts = &per_task[r.index()];
        let logits = match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(g.concat_rows(parts)?),
        };
        let l = task_loss(g, logits, &labels[r.index()])?;
        terms.push((r, l));
        weighted.push((l, lambdas[r.index()]));
    }
    Ok((joint_loss(g, &weighted)?, terms))
}

/// One optimizer step on `batch`; returns the per-task losses and the total.
pub fn train_step<T: Scalar>(
    model: &mut GraphEre<T>,
    opt: &mut AdamW<T>,
    batch: &[&PreparedDoc<T>],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<([f64; 4], f64)> {
    let tasks = config.mode.tasks();
    let mut g = Graph::new();
    let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
    let (total, losses) = batch_loss(&mut g, model, batch, &tasks, &config.lambdas, true, &seeds)?;
    let total_value = g.value(total).item().as_f64();
    let mut values = [0.0; 4];
    for &(r, l) in &losses {
        values[r.index()] = g.value(l).item().as_f64();
    }
    if !total_value.is_finite() {
        return Err(Error::NonFiniteLoss {
            docs: batch.iter().map(|d| d.doc.doc_id.clone()).collect(),
            detail: format!("task losses {values:?}"),
        });
    }
    let grads = g.backward(total)?;
    model.store.zero_grad();
    model.store.accumulate(&g, &grads);
    opt.step(&mut model.store)?;
    Ok((values, total_value))
}

/// Trains `model` in place. With a non-empty `dev` set the parameters of the
/// best epoch (mean dev F1, earliest on ties) are restored at the end.
pub fn fit<T: Scalar>(
    model: &mut GraphEre<T>,
    train: &[PreparedDoc<T>],
    dev: &[PreparedDoc<T>],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let tasks = config.mode.tasks();
    model.restrict_to_tasks(&tasks);
    let mut opt = AdamW::new(config.optimizer())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        mode: config.mode,
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: None,
        best_dev_f1: None,
        checkpoint: None,
    };
    let mut best_params = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedDoc<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let (values, t) = train_step(model, &mut opt, &batch, config, &mut rng)?;
            for k in 0..4 {
                sums[k] += values[k];
            }
            total += t;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        let task_loss = tasks.iter().map(|&r| (r, sums[r.index()] / denom)).collect();
        let dev_report = if dev.is_empty() {
            None
        } else {
            Some(evaluate_model(model, dev, &tasks)?)
        };
        if let Some(rep) = &dev_report {
            let f1 = rep.mean_f1();
            log::info!("epoch {epoch}: loss {:.4}, dev mean F1 {:.4}", total / denom, f1);
            if report.best_dev_f1.is_none_or(|b| f1 > b) {
                report.best_dev_f1 = Some(f1);
                report.best_epoch = Some(epoch);
                best_params = Some(model.store.flatten_values());
            }
        } else {
            log::info!("epoch {epoch}: loss {:.4}", total / denom);
        }
        report.epochs.push(EpochRecord {
            epoch,
            batches,
            task_loss,
            total_loss: total / denom,
            dev: dev_report,
        });
    }
    if let Some(values) = best_params {
        restore_values(model, &values);
    }
    model.store.clear_grad();
    Ok(report)
}

fn restore_values<T: Scalar>(model: &mut GraphEre<T>, values: &[T]) {
    let mut offset = 0;
    for p in model.store.iter_mut() {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::toy_doc;
    use crate::corpus::LabelScheme;
    use crate::model::tests::{small_config, toy_graphs};

    #[test]
    fn mode_parsing() {
        assert_eq!("joint".parse::<TrainMode>().unwrap(), TrainMode::Joint);
        assert_eq!(
            "split:causal".parse::<TrainMode>().unwrap(),
            TrainMode::Split(RelType::Causal)
        );
        assert!("split".parse::<TrainMode>().is_err());
        assert!("split:bogus".parse::<TrainMode>().is_err());
        assert_eq!(TrainMode::Split(RelType::Subevent).to_string(), "split:subevent");
    }

    #[test]
    fn task_loss_examples() {
        let mut g = Graph::<f64>::new();
        let uniform = g.constant(Tensor::zeros(&[3, 4]));
        let l = task_loss(&mut g, Some(uniform), &[0, 1, 3]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let onehot = g.constant(Tensor::from_f64(&[2, 2], &[60., 0., 0., 60.]).unwrap());
        let l = task_loss(&mut g, Some(onehot), &[0, 1]).unwrap();
        assert!(g.value(l).item() < 1e-20);
        let l = task_loss(&mut g, None, &[]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let logits = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0]];
        let labels = [1, 2, 0];
        let lv = g.constant(Tensor::from_rows(&logits.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let l = task_loss(&mut g, Some(lv), &labels).unwrap();
        let expect: f64 = logits
            .iter()
            .zip(labels)
            .map(|(row, y)| row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[y])
            .sum::<f64>()
            / 3.0;
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_examples() {
        let mut g = Graph::<f64>::new();
        let ones: Vec<(Var, f64)> = DEFAULT_LAMBDAS
            .iter()
            .map(|&l| (g.constant(Tensor::scalar(1.0)), l))
            .collect();
        let j = joint_loss(&mut g, &ones).unwrap();
        assert_eq!(g.value(j).item(), 11.5);
        let single = g.constant(Tensor::scalar(0.7));
        let j = joint_loss(&mut g, &[(single, 5.0)]).unwrap();
        assert_eq!(g.value(j).item(), 0.7 * 5.0);
        let zeros: Vec<(Var, f64)> = (0..4).map(|_| (g.constant(Tensor::scalar(0.0)), 2.0)).collect();
        let j = joint_loss(&mut g, &zeros).unwrap();
        assert_eq!(g.value(j).item(), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambdas[2] = 0.0;
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
        let partial: TrainConfig = serde_json::from_str(r#"{"mode":"split:temporal","epochs":3}"#).unwrap();
        assert_eq!(partial.mode, TrainMode::Split(RelType::Temporal));
        assert_eq!(partial.batch_size, 8);
    }

    #[test]
    fn dev_split_is_seeded_and_disjoint() {
        let (t, d) = split_dev(50, 0.1, 4);
        assert_eq!(d.len(), 5);
        assert_eq!(t.len(), 45);
        assert!(d.iter().all(|i| !t.contains(i)));
        assert_eq!(split_dev(50, 0.1, 4), (t, d));
        assert_eq!(split_dev(1, 0.1, 4), (vec![0], vec![]));
    }

    fn model() -> GraphEre<f64> {
        GraphEre::with_lookup(small_config(), LabelScheme::default(), &[toy_doc()], 1).unwrap()
    }

    #[test]
    fn empty_corpus_runs_zero_batches() {
        let mut m = model();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let r = fit(&mut m, &[], &[], &cfg).unwrap();
        assert_eq!(r.epochs.len(), 1);
        assert_eq!(r.epochs[0].batches, 0);
    }

    #[test]
    fn overfits_one_batch() {
        let mut m = model();
        let doc = m.prepare(toy_doc(), Some(&toy_graphs())).unwrap();
        let cfg = TrainConfig {
            lr_other: 1e-2,
            ..TrainConfig::default()
        };
        m.restrict_to_tasks(&RelType::ALL);
        let mut opt = AdamW::new(cfg.optimizer()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut losses = Vec::new();
        for _ in 0..50 {
            losses.push(train_step(&mut m, &mut opt, &[&doc], &cfg, &mut rng).unwrap().1);
        }
        assert!(losses[49] < 0.5 * losses[0], "{losses:?}");
    }

    #[test]
    fn split_mode_leaves_other_heads_untouched() {
        let mut m = model();
        let doc = m.prepare(toy_doc(), Some(&toy_graphs())).unwrap();
        let before = m.store.clone();
        let cfg = TrainConfig {
            mode: TrainMode::Split(RelType::Temporal),
            epochs: 3,
            ..TrainConfig::default()
        };
        fit(&mut m, &[doc.clone(), doc], &[], &cfg).unwrap();
        for ((_, a), (_, b)) in m.store.iter().zip(before.iter()) {
            let other_head =
                (a.name.starts_with("dynamic.") || a.name.starts_with("classifier.")) && !a.name.contains(".temporal.");
            if other_head {
                assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
            }
        }
        assert_ne!(
            m.store.value(m.classifiers[1].weight).data(),
            before.value(m.classifiers[1].weight).data()
        );
    }

    #[test]
    fn split_mode_gradients_are_zero_for_other_heads() {
        let mut m = model();
        let doc = m.prepare(toy_doc(), Some(&toy_graphs())).unwrap();
        let mut g = Graph::new();
        let fwd = m.forward(&mut g, &doc, &[RelType::Causal], true, 1).unwrap();
        let l = task_loss(&mut g, fwd.logits[2], &doc.labels(RelType::Causal)).unwrap();
        let grads = g.backward(l).unwrap();
        m.store.zero_grad();
        m.store.accumulate(&g, &grads);
        for (_, p) in m.store.iter() {
            if (p.name.starts_with("classifier.") || p.name.starts_with("dynamic.")) && !p.name.contains(".causal.") {
                assert!(p.grad.as_ref().unwrap().data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn gradient_scales_with_task_weight() {
        let m = model();
        let doc = m.prepare(toy_doc(), Some(&toy_graphs())).unwrap();
        let grad_at = |lambda: f64| {
            let mut m = m.clone();
            let mut g = Graph::new();
            let fwd = m.forward(&mut g, &doc, &RelType::ALL, false, 0).unwrap();
            let losses: Vec<(Var, f64)> = RelType::ALL
                .iter()
                .map(|r| {
                    let l = task_loss(&mut g, fwd.logits[r.index()], &doc.labels(*r)).unwrap();
                    (l, if *r == RelType::Causal { lambda } else { 1.0 })
                })
                .collect();
            let j = joint_loss(&mut g, &losses).unwrap();
            let grads = g.backward(j).unwrap();
            m.store.zero_grad();
            m.store.accumulate(&g, &grads);
            m.store.get(m.classifiers[2].bias).grad.clone().unwrap()
        };
        let (a, b) = (grad_at(1.0), grad_at(3.0));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }
}
