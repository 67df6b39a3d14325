//! Command-line front end: training, evaluation, prediction, synthetic data,
//! gradient checks and parameter sweeps.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graphere::corpus::{load_corpus, load_graph_file, save_corpus, DocGraphs, Document, LabelScheme, RelType};
use graphere::embedding::FrozenEmbeddings;
use graphere::eval::{evaluate, EvalReport};
use graphere::gradcheck::{format_table, run_all};
use graphere::model::{GraphEre, ModelConfig, PreparedDoc};
use graphere::synthetic::{generate, SynthConfig};
use graphere::trainer::{evaluate_model, fit, split_dev, TrainConfig};

/// Exit code for bad input: flags, configs, corpus validation.
pub const EXIT_INVALID: i32 = 1;
/// Exit code for failures while running: I/O, non-finite values.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "graphere",
    version,
    about = "Joint event relation extraction with event graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a training report.
    Train(TrainArgs),
    /// Score predictions, or a checkpoint's predictions, against a corpus.
    Eval(EvalArgs),
    /// Write predicted relations for a corpus.
    Predict(PredictArgs),
    /// Generate a synthetic corpus bundle.
    GenSynthetic(SynthArgs),
    /// Finite-difference gradient checks for every op and the full model.
    GradCheck(GradArgs),
    /// Train over a grid of mix ratios or data fractions and print a CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Corpus JSONL file, or a directory holding corpus.jsonl, graphs.jsonl
    /// and embeddings/.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Static graphs JSONL file.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Frozen embedding directory; without it a trainable lookup is used.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Label scheme JSON; defaults to the built-in ten subtypes.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateArg {
    Static,
    Dynamic,
    Transformer,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `joint` or `split:<task>`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Mix ratio between the AMR and IE graph views.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Dynamic graph thresholds: coreference,temporal,causal,subevent.
    #[arg(long, value_parser = parse_four)]
    pub epsilons: Option<[f64; 4]>,
    /// Loss weights: coreference,temporal,causal,subevent.
    #[arg(long, value_parser = parse_four)]
    pub lambdas: Option<[f64; 4]>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate for everything but the embedding table.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Remove a module; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<AblateArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint directory to write.
    #[arg(long, default_value = "checkpoint")]
    pub checkpoint: PathBuf,
    /// Training report path; defaults to report.json in the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions in corpus format.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON report path; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predictions file, corpus format.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each document's retained dynamic edges as JSONL.
    #[arg(long)]
    pub dump_dynamic_edges: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    ArgumentOverlap,
    Complementary,
    SubeventScarce,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Overlap strength for the argument-overlap preset.
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// Share of documents with subevents for the subevent-scarce preset.
    #[arg(long, default_value_t = 0.1)]
    pub presence: f64,
    #[arg(long)]
    pub docs: Option<usize>,
    /// Index of the first document, to draw disjoint splits.
    #[arg(long)]
    pub first_doc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Beta,
    Data,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub kind: SweepKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Evaluation corpus; defaults to the held-out dev split.
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    #[arg(long)]
    pub eval_graphs: Option<PathBuf>,
    /// Grid points, comma separated; defaults to 0.0..1.0 for beta and
    /// 0.1..1.0 for data.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_four(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated values, got {}", v.len()))
}

/// Configuration file layout.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Bad user input detected by the front end.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

impl ModelArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.mode {
            cfg.train.mode = m.parse().map_err(|e: graphere::Error| usage(e.to_string()))?;
        }
        if let Some(b) = self.beta {
            cfg.model.beta = b;
        }
        if let Some(e) = self.epsilons {
            cfg.model.thresholds = e;
        }
        if let Some(l) = self.lambdas {
            cfg.train.lambdas = l;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr_other = lr;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        for a in &self.ablate {
            match a {
                AblateArg::Static => cfg.model.ablation.disable_static_graphs = true,
                AblateArg::Dynamic => cfg.model.ablation.disable_dynamic_graphs = true,
                AblateArg::Transformer => cfg.model.ablation.disable_node_transformer = true,
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Documents with their static graphs and optional frozen embeddings.
struct Data {
    scheme: LabelScheme,
    docs: Vec<Document>,
    graphs: Vec<Option<DocGraphs>>,
    embeddings: Option<FrozenEmbeddings<f64>>,
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn load_docs(
    corpus: &Path,
    graphs: Option<&Path>,
    scheme: &LabelScheme,
) -> anyhow::Result<(Vec<Document>, Vec<Option<DocGraphs>>)> {
    let (file, default_graphs) = if corpus.is_dir() {
        (corpus.join("corpus.jsonl"), existing(corpus.join("graphs.jsonl")))
    } else {
        (corpus.to_path_buf(), None)
    };
    let docs = load_corpus(&file, scheme)?;
    let graph_file = graphs.map(Path::to_path_buf).or(default_graphs);
    let graphs = match graph_file {
        None => vec![None; docs.len()],
        Some(path) => {
            let index = load_graph_file(&path)?;
            docs.iter()
                .map(|d| {
                    let (g, coverage) = index.for_doc(d)?;
                    if !coverage.is_complete() {
                        log::warn!("{}: static graph alignment incomplete", d.doc_id);
                    }
                    Ok(Some(g))
                })
                .collect::<graphere::Result<Vec<_>>>()?
        }
    };
    Ok((docs, graphs))
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Data> {
        let scheme = match &self.labels {
            Some(p) => LabelScheme::load(p)?,
            None => LabelScheme::default(),
        };
        let (docs, graphs) = load_docs(&self.corpus, self.graphs.as_deref(), &scheme)?;
        let emb_dir = self.embeddings.clone().or_else(|| {
            self.corpus
                .is_dir()
                .then(|| self.corpus.join("embeddings"))
                .and_then(existing)
        });
        let embeddings = emb_dir.map(|d| FrozenEmbeddings::load(&d)).transpose()?;
        Ok(Data {
            scheme,
            docs,
            graphs,
            embeddings,
        })
    }
}

fn build_model(cfg: &RunConfig, data: &Data) -> anyhow::Result<GraphEre<f64>> {
    let seed = cfg.train.seed;
    Ok(match &data.embeddings {
        Some(e) => GraphEre::with_frozen(cfg.model.clone(), data.scheme.clone(), e.clone(), seed)?,
        None => GraphEre::with_lookup(cfg.model.clone(), data.scheme.clone(), &data.docs, seed)?,
    })
}

fn prepare(
    model: &GraphEre<f64>,
    docs: &[Document],
    graphs: &[Option<DocGraphs>],
) -> anyhow::Result<Vec<PreparedDoc<f64>>> {
    docs.iter()
        .zip(graphs)
        .map(|(d, g)| Ok(model.prepare(d.clone(), g.as_ref())?))
        .collect()
}

fn split(prepared: Vec<PreparedDoc<f64>>, cfg: &TrainConfig) -> (Vec<PreparedDoc<f64>>, Vec<PreparedDoc<f64>>) {
    let (train_idx, dev_idx) = split_dev(prepared.len(), cfg.dev_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| prepared[i].clone()).collect();
    (pick(&train_idx), pick(&dev_idx))
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg = args.model.resolve()?;
    let data = args.data.load()?;
    let mut model = build_model(&cfg, &data)?;
    let prepared = prepare(&model, &data.docs, &data.graphs)?;
    let (train, dev) = split(prepared, &cfg.train);
    let start = Instant::now();
    let mut report = fit(&mut model, &train, &dev, &cfg.train)?;
    log::info!("trained {} epochs in {:.1?}", cfg.train.epochs, start.elapsed());
    model.save(&args.checkpoint)?;
    report.checkpoint = Some(args.checkpoint.display().to_string());
    let out = args.out.clone().unwrap_or_else(|| args.checkpoint.join("report.json"));
    write_file(&out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if let Some(last) = report.epochs.last() {
        println!("epoch {} loss {:.4}", last.epoch, last.total_loss);
    }
    if let (Some(epoch), Some(f1)) = (report.best_epoch, report.best_dev_f1) {
        println!("best dev mean F1 {f1:.4} at epoch {epoch}");
    }
    println!("checkpoint written to {}", args.checkpoint.display());
    Ok(())
}

fn load_checkpoint(dir: &Path, data: &Data) -> anyhow::Result<GraphEre<f64>> {
    let model = GraphEre::load(dir, data.embeddings.clone())?;
    Ok(model)
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", report.table("eval"));
    if let Some(p) = out {
        write_file(p, &(serde_json::to_string_pretty(&report.to_json())? + "\n"))?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let preds = match (&args.predictions, &args.checkpoint) {
        (Some(p), _) => {
            let predicted = load_corpus(p, &data.scheme)?;
            let mut by_id: HashMap<String, Document> = predicted.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
            data.docs
                .iter()
                .map(|d| {
                    let pd = by_id
                        .remove(&d.doc_id)
                        .ok_or_else(|| usage(format!("no predictions for document `{}`", d.doc_id)))?;
                    if pd.events.len() != d.events.len() || pd.timexes.len() != d.timexes.len() {
                        return Err(usage(format!(
                            "`{}`: predicted mentions differ from the corpus",
                            d.doc_id
                        )));
                    }
                    Ok(pd.relations)
                })
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        (None, Some(dir)) => {
            let model = load_checkpoint(dir, &data)?;
            let prepared = prepare(&model, &data.docs, &data.graphs)?;
            prepared
                .iter()
                .map(|d| Ok(model.predict(d, &RelType::ALL)?))
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        (None, None) => return Err(usage("either --predictions or --checkpoint is required")),
    };
    let report = evaluate(&data.docs, &preds, &RelType::ALL)?;
    emit_report(&report, args.out.as_deref())
}

#[derive(Serialize)]
struct EdgeDump<'a> {
    doc_id: &'a str,
    edges: HashMap<&'static str, &'a [graphere::dynamic_graph::RetainedEdge]>,
}

fn cmd_predict(args: &PredictArgs) -> anyhow::Result<()> {
    let data = args.data.load()?;
    let model = load_checkpoint(&args.checkpoint, &data)?;
    let prepared = prepare(&model, &data.docs, &data.graphs)?;
    let mut out_docs = Vec::with_capacity(prepared.len());
    let mut dump = String::new();
    for d in &prepared {
        let mut doc = d.doc.clone();
        doc.relations = model.predict(d, &RelType::ALL)?;
        out_docs.push(doc);
        if args.dump_dynamic_edges.is_some() {
            let edges = model.dynamic_edges(d)?;
            let rec = EdgeDump {
                doc_id: &d.doc.doc_id,
                edges: RelType::ALL
                    .iter()
                    .map(|r| (r.name(), edges[r.index()].as_slice()))
                    .collect(),
            };
            dump.push_str(&serde_json::to_string(&rec)?);
            dump.push('\n');
        }
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_corpus(&args.out, &out_docs, &data.scheme)?;
    if let Some(p) = &args.dump_dynamic_edges {
        write_file(p, &dump)?;
    }
    println!(
        "wrote predictions for {} documents to {}",
        out_docs.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<SynthConfig>(p)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = args.docs {
        cfg.num_docs = n;
    }
    if let Some(f) = args.first_doc {
        cfg.first_doc = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg = match args.preset {
        Preset::Default => cfg,
        Preset::ArgumentOverlap => cfg.argument_overlap(args.strength),
        Preset::Complementary => cfg.complementary(),
        Preset::SubeventScarce => cfg.subevent_scarce(args.presence),
    };
    let bundle = generate::<f64>(&cfg)?;
    bundle.write(&args.out, &LabelScheme::default())?;
    write_file(
        &args.out.join("synth_config.json"),
        &(serde_json::to_string_pretty(&cfg)? + "\n"),
    )?;
    println!("wrote {} documents to {}", bundle.docs.len(), args.out.display());
    Ok(())
}

fn cmd_grad(args: &GradArgs) -> anyhow::Result<bool> {
    let rows = run_all(args.seed)?;
    print!("{}", format_table(&rows));
    Ok(rows.iter().all(|r| r.passed))
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let base = args.model.resolve()?;
    let data = args.data.load()?;
    let grid: Vec<f64> = if !args.grid.is_empty() {
        args.grid.clone()
    } else {
        match args.kind {
            SweepKind::Beta => (0..=10).map(|k| k as f64 / 10.0).collect(),
            SweepKind::Data => (1..=10).map(|k| k as f64 / 10.0).collect(),
        }
    };
    if let Some(bad) = grid.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(usage(format!("grid point {bad} not in [0, 1]")));
    }
    let eval_set = match &args.eval_corpus {
        Some(p) => Some(load_docs(p, args.eval_graphs.as_deref(), &data.scheme)?),
        None => None,
    };
    let tasks = base.train.mode.tasks();
    let mut csv = format!(
        "{},{},mean_f1\n",
        match args.kind {
            SweepKind::Beta => "beta",
            SweepKind::Data => "fraction",
        },
        tasks.iter().map(|r| r.name()).collect::<Vec<_>>().join(",")
    );
    for &x in &grid {
        let mut cfg = base.clone();
        if args.kind == SweepKind::Beta {
            cfg.model.beta = x;
        }
        let mut model = build_model(&cfg, &data)?;
        let prepared = prepare(&model, &data.docs, &data.graphs)?;
        let (mut train, dev) = split(prepared, &cfg.train);
        if args.kind == SweepKind::Data {
            let keep = ((train.len() as f64 * x).round() as usize).max(1).min(train.len());
            train.truncate(keep);
        }
        fit(&mut model, &train, &dev, &cfg.train)?;
        let report = match &eval_set {
            Some((docs, graphs)) => evaluate_model(&model, &prepare(&model, docs, graphs)?, &tasks)?,
            None => evaluate_model(&model, &dev, &tasks)?,
        };
        let cols: Vec<String> = tasks.iter().map(|&r| format!("{:.4}", report.get(r).f1)).collect();
        csv.push_str(&format!("{x:.2},{},{:.4}\n", cols.join(","), report.mean_f1()));
        log::info!("sweep point {x:.2}: mean F1 {:.4}", report.mean_f1());
    }
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_INVALID;
    }
    match err.downcast_ref::<graphere::Error>() {
        Some(
            graphere::Error::InvalidArgument(_)
            | graphere::Error::Validation { .. }
            | graphere::Error::Json { .. }
            | graphere::Error::LabelOutOfRange { .. }
            | graphere::Error::Checkpoint(_),
        ) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::GenSynthetic(a) => cmd_synth(a),
        Command::GradCheck(a) => cmd_grad(a).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("gradient check failed"))
            }
        }),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
