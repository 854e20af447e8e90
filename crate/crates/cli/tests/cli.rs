mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use alphamerge::harness::read_run_file;
use alphamerge::prompt::EvalSample;
use alphamerge::report::format_number;
use alphamerge::scoring::{Category, MetricsReport, TaskKind};
use alphamerge::stub::{StubReply, StubRequest, StubServer};
use alphamerge::tensorstore::{Checkpoint, DType, EncodedTensor, Tensor};
use common::*;

#[test]
fn inspect_prints_one_row_per_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.safetensors");
    let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
    write_ckpt(&path, &[EncodedTensor::encode("embed.weight", &t, DType::BF16).unwrap()], &BTreeMap::new());
    let o = alphamerge(["inspect", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("embed.weight")).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].contains("BF16") && rows[0].contains("[2, 3]") && rows[0].trim_end().ends_with("12"));
    assert!(text.contains("1 tensor(s), 6 element(s), 12 payload byte(s)"));
}

#[test]
fn corrupt_header_length_names_the_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.safetensors");
    let mut bytes = u64::MAX.to_le_bytes().to_vec();
    bytes.extend_from_slice(b"{}");
    std::fs::write(&path, bytes).unwrap();
    let o = alphamerge(["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("0..8"), "{}", stderr(&o));

    std::fs::write(&path, [1u8, 2, 3]).unwrap();
    let o = alphamerge(["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("0..8"), "{}", stderr(&o));
}

#[test]
fn inspect_diff_lists_layout_changes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
    let t = |shape: Vec<usize>| Tensor::zeros(shape);
    write_ckpt(
        &a,
        &[
            EncodedTensor::encode("shared", &t(vec![2, 2]), DType::F32).unwrap(),
            EncodedTensor::encode("gone", &t(vec![1]), DType::F32).unwrap(),
            EncodedTensor::encode("reshaped", &t(vec![4]), DType::F32).unwrap(),
        ],
        &BTreeMap::new(),
    );
    write_ckpt(
        &b,
        &[
            EncodedTensor::encode("shared", &t(vec![2, 2]), DType::F32).unwrap(),
            EncodedTensor::encode("added", &t(vec![1]), DType::F16).unwrap(),
            EncodedTensor::encode("reshaped", &t(vec![2, 2]), DType::BF16).unwrap(),
        ],
        &BTreeMap::new(),
    );
    let o = alphamerge(["inspect", a.to_str().unwrap(), "--diff", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(
        lines,
        [
            "+ added (only in second)",
            "- gone (only in first)",
            "~ reshaped shape [4] vs [2, 2]",
            "~ reshaped dtype F32 vs BF16",
        ]
    );
    let o = alphamerge(["inspect", a.to_str().unwrap(), "--diff", a.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), "layouts match (3 tensor(s))");
}

#[test]
fn sweep_writes_one_file_per_alpha_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = model_files(dir.path(), 1, 2, 8);
    let out = dir.path().join("sweep");
    let o = alphamerge([
        "sweep",
        "--base",
        m.base.to_str().unwrap(),
        "--fine-tuned",
        m.fine_tuned.to_str().unwrap(),
        "--alphas",
        "0,0.5,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for a in ["0", "0.5", "1"] {
        assert!(out.join(format!("merged_{a}.safetensors")).exists());
    }
    let manifest = std::fs::read_to_string(out.join("sweep_manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "sweep");
    assert_eq!(cfg["mode"], "interp");
    assert_eq!(cfg["alphas"], serde_json::json!([0.0, 0.5, 1.0]));

    let base = Checkpoint::open(&m.base).unwrap();
    let zero = Checkpoint::open(out.join("merged_0.safetensors")).unwrap();
    for name in base.index.names() {
        assert_eq!(base.read_raw(name).unwrap(), zero.read_raw(name).unwrap());
    }
    assert_eq!(zero.index.metadata["merge.alpha"], "0");

    // Existing outputs are kept unless --overwrite is given.
    let again = |extra: &[&str]| {
        let mut args = vec![
            "sweep",
            "--base",
            m.base.to_str().unwrap(),
            "--fine-tuned",
            m.fine_tuned.to_str().unwrap(),
            "--alphas",
            "0,0.5,1",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        alphamerge(args)
    };
    assert_eq!(again(&[]).status.code(), Some(4));
    assert!(again(&["--overwrite"]).status.success());
}

#[test]
fn merge_with_adapter_infers_lora_mode() {
    let dir = tempfile::tempdir().unwrap();
    let m = model_files(dir.path(), 2, 1, 6);
    let out = dir.path().join("merged.safetensors");
    let o = alphamerge([
        "merge",
        "--base",
        m.base.to_str().unwrap(),
        "--adapter",
        m.adapter.to_str().unwrap(),
        "--alpha",
        "0.4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = Checkpoint::open(&out).unwrap();
    assert_eq!(merged.index.metadata["merge.mode"], "lora");
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("merged.safetensors.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["mode"], "lora");
    assert_eq!(cfg["sha256"].as_str().unwrap().len(), 64);
    assert!(stdout(&o).starts_with(cfg["sha256"].as_str().unwrap()));

    // Untargeted tensors are copied.
    let base = Checkpoint::open(&m.base).unwrap();
    let norm = "model.layers.0.norm.weight";
    assert_eq!(base.read_raw(norm).unwrap(), merged.read_raw(norm).unwrap());
}

#[test]
fn merge_errors_have_the_merge_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let m = model_files(dir.path(), 3, 1, 4);
    let out = dir.path().join("x.safetensors");
    let run = |alpha: &str, extra: &[&str]| {
        let mut args = vec![
            "merge",
            "--base",
            m.base.to_str().unwrap(),
            "--fine-tuned",
            m.fine_tuned.to_str().unwrap(),
            "--alpha",
            alpha,
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        alphamerge(args)
    };
    assert_eq!(run("1.5", &[]).status.code(), Some(4));
    assert!(run("1.5", &["--extrapolate"]).status.success());
    assert_eq!(run("0.5", &[]).status.code(), Some(4));
    let o = alphamerge([
        "merge",
        "--base",
        m.base.to_str().unwrap(),
        "--fine-tuned",
        m.fine_tuned.to_str().unwrap(),
        "--mode",
        "lora",
        "--alpha",
        "0.5",
        "--out",
        dir.path().join("y.safetensors").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

fn walrus_rows(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("rows.jsonl");
    let rows = [
        ("a", "Walrus", "Walrus"),
        ("b", "Walrsu", "Walrus"),
        ("c", "Orca", "Walrus"),
        ("d", "Orca", "Orca"),
    ];
    let rows: Vec<_> = rows
        .iter()
        .map(|(id, out, truth)| {
            serde_json::json!({"sample_id": id, "output_text": out, "truth": truth, "alpha": 0.5, "task_kind": "common", "dataset": "watkins"})
        })
        .collect();
    write_jsonl(&path, &rows);
    path
}

#[test]
fn config_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    walrus_rows(dir.path());
    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "[score]\ninput = [\"rows.jsonl\"]\nthreshold = 1\nout = \"scores\"\n").unwrap();

    let o = alphamerge(["--config", cfg.to_str().unwrap(), "score"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = dir.path().join("scores");
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scores.join("score_config.json")).unwrap()).unwrap();
    assert_eq!(echo["threshold"], 1);
    let metrics: Vec<MetricsReport> = serde_json::from_str(&std::fs::read_to_string(scores.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics[0].category_counts[&Category::Correct], 2);

    let o = alphamerge(["--config", cfg.to_str().unwrap(), "score", "--threshold", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scores.join("score_config.json")).unwrap()).unwrap();
    assert_eq!(echo["threshold"], 5);
    let metrics: Vec<MetricsReport> = serde_json::from_str(&std::fs::read_to_string(scores.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics[0].category_counts[&Category::Correct], 3);
}

#[test]
fn config_problems_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[score]\nthreshold = \"five\"\n").unwrap();
    assert_eq!(alphamerge(["--config", cfg.to_str().unwrap(), "score"]).status.code(), Some(9));
    assert_eq!(alphamerge(["score", "--out", dir.path().to_str().unwrap()]).status.code(), Some(9));
    let rows = walrus_rows(dir.path());
    let o = alphamerge(["score", "--input", rows.to_str().unwrap(), "--threshold", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn report_with_a_single_alpha_degenerates_to_points() {
    let dir = tempfile::tempdir().unwrap();
    let rows = walrus_rows(dir.path());
    let scores = dir.path().join("scores");
    let o = alphamerge(["score", "--input", rows.to_str().unwrap(), "--out", scores.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report");
    let o = alphamerge([
        "report",
        "--metrics",
        scores.join("metrics.json").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read_csv(&report.join("accuracy_vs_alpha.csv"));
    assert_eq!(csv.len(), 1);
    assert_eq!(csv[0]["accuracy"], "0.75");
    let svg = std::fs::read_to_string(report.join("accuracy_vs_alpha.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(!svg.contains("<polyline"));
    assert_eq!(alphamerge(["report", "--metrics", scores.join("metrics.json").to_str().unwrap(), "--compare", "0.5,0.9", "--out", report.to_str().unwrap()]).status.code(), Some(8));
}

fn manifest(dir: &std::path::Path) -> std::path::PathBuf {
    let samples: Vec<EvalSample> = [("s1", "Walrus"), ("s2", "Orca"), ("s3", "Sperm Whale")]
        .iter()
        .map(|(id, c)| EvalSample {
            sample_id: id.to_string(),
            dataset: "watkins".into(),
            common_name: Some(c.to_string()),
            scientific_name: None,
            audio_ref: format!("{id}.wav"),
            extra_labels: Default::default(),
        })
        .collect();
    let path = dir.join("manifest.jsonl");
    write_jsonl(&path, &samples);
    path
}

#[test]
fn partial_endpoint_failure_has_its_own_exit_code_and_resumes() {
    let rt = runtime();
    let failing = rt
        .block_on(StubServer::start(Arc::new(|req: &StubRequest| match req.sample_id.as_deref() {
            Some("s2") => StubReply::Status(400),
            _ => StubReply::Text("Walrus".into()),
        })))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path());
    let out = dir.path().join("runs");
    let args = |url: String| {
        vec![
            "run".to_string(),
            "--manifest".into(),
            manifest.display().to_string(),
            "--alpha".into(),
            "0.5".into(),
            "--endpoint".into(),
            url,
            "--backoff-ms".into(),
            "1".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let o = alphamerge(args(failing.base_url()));
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
    let ids: Vec<String> = read_run_file(&out.join("run.jsonl")).unwrap().into_iter().map(|r| r.sample_id).collect();
    assert_eq!(ids, ["s1", "s3"]);
    let errors = std::fs::read_to_string(out.join("errors.jsonl")).unwrap();
    assert!(errors.contains("\"sample_id\":\"s2\""));

    let healthy = rt
        .block_on(StubServer::start(Arc::new(|_: &StubRequest| StubReply::Text("Orca".into()))))
        .unwrap();
    let o = alphamerge(args(healthy.base_url()));
    assert!(o.status.success(), "{}", stderr(&o));
    let asked: Vec<_> = healthy.requests().into_iter().map(|r| r.sample_id.unwrap()).collect();
    assert_eq!(asked, ["s2"]);
    assert!(!out.join("errors.jsonl").exists());

    let scores = dir.path().join("scores");
    let o = alphamerge([
        "score",
        "--run",
        out.join("run.jsonl").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: Vec<MetricsReport> = serde_json::from_str(&std::fs::read_to_string(scores.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.len(), 1);
    assert_eq!(metrics[0].task_kind, TaskKind::Common);
    assert_eq!(format_number(metrics[0].accuracy), format_number(2.0 / 3.0));
}

#[test]
fn closed_set_run_records_species_order() {
    let rt = runtime();
    let server = rt
        .block_on(StubServer::start(Arc::new(|req: &StubRequest| StubReply::Text(req.prompt.clone()))))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path());
    let out = dir.path().join("runs");
    let o = alphamerge([
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--kind",
        "closed_set",
        "--alpha",
        "1",
        "--endpoint",
        &server.base_url(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = read_run_file(&out.join("run.jsonl")).unwrap();
    assert!(records[0]
        .prompt_text
        .ends_with("Output exactly one of: Walrus, Orca, Sperm Whale"));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echo["species_order"], serde_json::json!(["Walrus", "Orca", "Sperm Whale"]));
    assert_eq!(echo["endpoints"][0]["temperature"], 0.0);
    assert_eq!(echo["endpoints"][0]["max_tokens"], 64);
    assert!(echo["seed_derivation"].as_str().unwrap().contains("fnv1a64"));
}
