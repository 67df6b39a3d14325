use std::fs;
use std::path::Path;

use clap::CommandFactory;
use graphere_cli::{run, Cli, EXIT_INVALID, EXIT_RUNTIME};

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("graphere")
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn call(args: &[&str]) -> i32 {
    run(argv(args))
}

fn gen(dir: &Path, docs: usize) {
    let out = dir.to_str().unwrap();
    let n = docs.to_string();
    assert_eq!(call(&["gen-synthetic", "--seed", "7", "--docs", &n, "--out", out]), 0);
}

fn train(corpus: &Path, ckpt: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--epochs",
        "2",
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    call(&args)
}

#[test]
fn synthetic_then_train_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 12);
    for f in ["corpus.jsonl", "graphs.jsonl", "answer_key.jsonl", "synth_config.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let ckpt = tmp.path().join("ckpt");
    assert_eq!(train(&data, &ckpt, &["--mode", "joint"]), 0);
    assert!(ckpt.join("report.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ckpt.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["mode"], "joint");
    assert!(report["best_dev_f1"].is_number());
}

#[test]
fn training_is_deterministic_under_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 10);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (ra, rb) = (tmp.path().join("ra.json"), tmp.path().join("rb.json"));
    assert_eq!(train(&data, &a, &["--out", ra.to_str().unwrap()]), 0);
    assert_eq!(train(&data, &b, &["--out", rb.to_str().unwrap()]), 0);
    let files = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(files(&a), files(&b));
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["checkpoint"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&ra), strip(&rb));
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 5);
    let out = tmp.path().join("eval.json");
    let corpus = data.join("corpus.jsonl");
    let code = call(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--predictions",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for task in ["coreference", "temporal", "causal", "subevent"] {
        assert_eq!(rep[task]["F1"], 1.0, "{task}: {rep}");
    }
}

#[test]
fn predict_and_eval_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 8);
    let ckpt = tmp.path().join("ckpt");
    assert_eq!(train(&data, &ckpt, &["--ablate", "transformer"]), 0);
    let preds = tmp.path().join("out/preds.jsonl");
    let edges = tmp.path().join("out/edges.jsonl");
    let code = call(&[
        "predict",
        "--corpus",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
        "--dump-dynamic-edges",
        edges.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 8);
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&edges).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["edges"]["temporal"].is_array());

    let from_file = tmp.path().join("a.json");
    let from_ckpt = tmp.path().join("b.json");
    let corpus = data.to_str().unwrap();
    assert_eq!(
        call(&[
            "eval",
            "--corpus",
            corpus,
            "--predictions",
            preds.to_str().unwrap(),
            "--out",
            from_file.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        call(&[
            "eval",
            "--corpus",
            corpus,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            from_ckpt.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        fs::read_to_string(&from_file).unwrap(),
        fs::read_to_string(&from_ckpt).unwrap()
    );
}

#[test]
fn sweep_emits_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 10);
    let csv = tmp.path().join("beta.csv");
    let code = call(&[
        "sweep",
        "beta",
        "--corpus",
        data.to_str().unwrap(),
        "--epochs",
        "1",
        "--grid",
        "0,0.5,1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "beta,coreference,temporal,causal,subevent,mean_f1");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0.50,"));

    let csv = tmp.path().join("data.csv");
    let corpus = data.to_str().unwrap();
    let code = call(&[
        "sweep",
        "data",
        "--corpus",
        corpus,
        "--epochs",
        "1",
        "--grid",
        "0.5,1",
        "--mode",
        "split:causal",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "fraction,causal,mean_f1");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn grad_check_passes() {
    assert_eq!(call(&["grad-check"]), 0);
}

#[test]
fn exit_codes() {
    assert_eq!(call(&["--help"]), 0);
    assert_eq!(call(&["train", "--no-such-flag"]), EXIT_INVALID);
    assert_eq!(call(&[]), EXIT_INVALID);

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, 3);
    let ckpt = tmp.path().join("c");
    assert_eq!(train(&data, &ckpt, &["--epsilons", "0.5,0.5"]), EXIT_INVALID);
    assert_eq!(train(&data, &ckpt, &["--beta", "1.5"]), EXIT_INVALID);
    assert_eq!(train(&data, &ckpt, &["--mode", "split:nothing"]), EXIT_INVALID);
    assert_eq!(train(&data, &ckpt, &["--lambdas", "1,1,0,1"]), EXIT_INVALID);

    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(train(&bad, &ckpt, &[]), EXIT_INVALID);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"dim": 10, "head_count": 4}}"#).unwrap();
    assert_eq!(
        train(&data.join("corpus.jsonl"), &ckpt, &["--config", cfg.to_str().unwrap()]),
        EXIT_INVALID
    );

    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(train(&missing, &ckpt, &[]), EXIT_RUNTIME);
}

#[test]
fn help_lists_every_flag() {
    let mut cmd = Cli::command();
    let train = cmd.find_subcommand_mut("train").unwrap();
    let help = train.render_long_help().to_string();
    for flag in [
        "--config",
        "--corpus",
        "--graphs",
        "--embeddings",
        "--mode",
        "--beta",
        "--epsilons",
        "--lambdas",
        "--epochs",
        "--batch-size",
        "--seed",
        "--checkpoint",
        "--out",
        "--ablate",
    ] {
        assert!(help.contains(flag), "train help lacks {flag}");
    }
    let predict = cmd
        .find_subcommand_mut("predict")
        .unwrap()
        .render_long_help()
        .to_string();
    assert!(predict.contains("--dump-dynamic-edges"));
}
