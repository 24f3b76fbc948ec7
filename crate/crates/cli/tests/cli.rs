use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emoreward::batch::{BatchItem, BatchRequest, BatchResult, ScoringEngine, REQUEST_SCHEMA};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

fn emoreward(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoreward"))
        .arg("--config")
        .arg(fixture("pipeline.toml"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn map_labels_reports_rejects_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("mikels.jsonl");
    let o = emoreward(dir.path(), &["map-labels", arg(&input)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("rejected 1"));
    let mapped = jsonl(&dir.path().join("mapped.jsonl"));
    assert_eq!(mapped.len(), 12);
    assert!(mapped.iter().all(|r| r["set"] == "ekman7"));
    let rejects = jsonl(&dir.path().join("rejections.jsonl"));
    assert_eq!(rejects.len(), 1);
    assert_eq!(rejects[0]["line"], 13);
    assert_eq!(rejects[0]["image_id"], "m12");

    let strict = emoreward(dir.path(), &["--strict", "map-labels", arg(&input)]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("out");
    let o = emoreward(&out, &["map-labels", arg(&empty)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("mapped.jsonl")).unwrap(), "");
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn fit_vad_recovers_known_centroids() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoreward(dir.path(), &["fit-vad", arg(&fixture("emotic.jsonl"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth: serde_json::Map<String, Value> =
        serde_json::from_str(&fs::read_to_string(fixture("emotic_centroids.json")).unwrap())
            .unwrap();
    let tsv = fs::read_to_string(dir.path().join("projection.tsv")).unwrap();
    let mut rows = 0;
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let expected = truth[cols[0]].as_array().unwrap();
        for d in 0..3 {
            let got: f64 = cols[d + 1].parse().unwrap();
            assert!((got - expected[d].as_f64().unwrap()).abs() < 1e-6, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 26);
    let assignment: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("assignment.json")).unwrap())
            .unwrap();
    assert_eq!(assignment["entries"].as_array().unwrap().len(), 26);
}

#[test]
fn fit_vad_with_too_many_folds_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoreward(
        dir.path(),
        &["fit-vad", "--k", "500", arg(&fixture("emotic.jsonl"))],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fold"), "{}", stderr(&o));
}

#[test]
fn score_fixture_totals_and_missing_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (resp, gt) = (fixture("responses.jsonl"), fixture("gt.jsonl"));
    let args = ["score", arg(&resp), arg(&gt)];
    let o = emoreward(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = jsonl(&dir.path().join("scores.jsonl"));
    let total = |i: usize| rows[i]["total"].as_f64().unwrap();
    assert!((total(0) - 1.2).abs() < 1e-12);
    assert_eq!(total(1), 0.0);
    assert!((total(2) - 0.4).abs() < 1e-9);
    assert!(rows[4]["error"].as_str().unwrap().contains("p-missing"));
    assert!(rows[4].get("total").is_none());

    let mut strict = vec!["--strict"];
    strict.extend(&args);
    assert_eq!(emoreward(dir.path(), &strict).status.code(), Some(2));
}

#[test]
fn score_group_mode_appends_advantages() {
    let dir = tempfile::tempdir().unwrap();
    let resp = dir.path().join("resp.jsonl");
    let gt = dir.path().join("gt.jsonl");
    let payloads = [
        "joy, surprise, neutral",
        "joy",
        "fear, joy",
        "surprise, joy, neutral",
    ];
    let mut lines = String::new();
    for i in 0..16 {
        let response = format!(
            "<think>t</think>\n<answer>task: ranking\n{}</answer>",
            payloads[i % 4]
        );
        lines.push_str(&serde_json::json!({"schema": "response/1", "id": format!("s{i}"), "prompt_id": "p", "response": response}).to_string());
        lines.push('\n');
    }
    fs::write(&resp, lines).unwrap();
    fs::write(
        &gt,
        r#"{"schema":"gt/1","id":"p","task":"ranking","ranking":["joy","surprise","neutral"]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = emoreward(&out, &["score", "--group-size", "8", arg(&resp), arg(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = jsonl(&out.join("scores.jsonl"));
    for (g, chunk) in rows.chunks(8).enumerate() {
        let adv: Vec<f64> = chunk
            .iter()
            .map(|r| r["advantage"].as_f64().unwrap())
            .collect();
        assert!(chunk.iter().all(|r| r["group"] == g));
        assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn evaluate_self_and_known_swaps() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture("bench_gt.jsonl");
    let preds = dir.path().join("self.jsonl");
    let mut lines = String::new();
    for item in jsonl(&gt) {
        let response = match item["kind"].as_str().unwrap() {
            "choice" => format!("({})", item["answer"].as_str().unwrap()),
            "yesno" => if item["answer"].as_bool().unwrap() {
                "yes"
            } else {
                "no"
            }
            .to_string(),
            "ranking" => item["ranking"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap())
                .collect::<Vec<_>>()
                .join(", "),
            "score" => item["score"].to_string(),
            "label" => item["label"].as_str().unwrap().to_string(),
            _ => item["golden"].as_str().unwrap().to_string(),
        };
        lines.push_str(
            &serde_json::json!({"schema": "prediction/1", "id": item["id"], "response": response})
                .to_string(),
        );
        lines.push('\n');
    }
    fs::write(&preds, lines).unwrap();
    let out = dir.path().join("self");
    let o = emoreward(&out, &["evaluate", arg(&preds), arg(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let agg = &report["aggregates"];
    assert_eq!(agg["ranking.mean_score"], 100.0);
    assert!((agg["score.srcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((agg["score.plcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    for key in ["choice.accuracy", "yesno.accuracy", "label.accuracy"] {
        assert_eq!(agg[key], 1.0, "{key}");
    }

    let out = dir.path().join("fixture");
    let o = emoreward(
        &out,
        &["evaluate", arg(&fixture("predictions.jsonl")), arg(&gt)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(
        (report["aggregates"]["ranking.mean_score"].as_f64().unwrap() - 250.0 / 3.0).abs() < 1e-9
    );
    let failed: Vec<&Value> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["value"] == 0.0)
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["id"], "q7");
    assert!(fs::read_to_string(out.join("report.txt"))
        .unwrap()
        .contains("ranking.mean_score"));
}

#[test]
fn simulate_converges_on_the_fixture_pool() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoreward(
        dir.path(),
        &["simulate", "--runs", "3", arg(&fixture("pool.json"))],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summaries: Vec<Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summaries.len(), 3);
    assert!(summaries.iter().all(|s| s["converged"] == true));
    assert_eq!(jsonl(&dir.path().join("trace.jsonl")).len(), 400);
}

#[test]
fn environment_overrides_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_emoreward"))
        .args([
            "--config",
            arg(&fixture("pipeline.toml")),
            "--out",
            arg(dir.path()),
        ])
        .args([
            "score",
            arg(&fixture("responses.jsonl")),
            arg(&fixture("gt.jsonl")),
        ])
        .env("EMOREWARD_REWARD__FORMAT_WEIGHT", "0.5")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = jsonl(&dir.path().join("scores.jsonl"));
    assert!((rows[0]["total"].as_f64().unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoreward(
        dir.path(),
        &["derive-rankings", arg(&fixture("rankings.jsonl"))],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["command"], "derive-rankings");
    assert_eq!(m["started_at"], 1_700_000_000u64);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["input_digests"]
        .as_object()
        .unwrap()
        .keys()
        .any(|k| k.ends_with("rankings.jsonl")));
    for name in ["rankings.jsonl", "labels.jsonl", "rejections.jsonl"] {
        assert!(m["output_digests"][name].is_string(), "{name}");
    }
}

#[test]
fn bad_config_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[paths]\nlexicon = \"missing.tsv\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_emoreward"))
        .args(["--config", arg(&cfg), "--out", arg(dir.path())])
        .args(["derive-rankings", arg(&fixture("rankings.jsonl"))])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.tsv"));
}

/// Random responses over every task, scored by the CLI and by the batch
/// entry point; the rows must agree field for field.
#[test]
fn batch_entry_point_matches_cli_scores() {
    use rand::{Rng, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000);
    let ek = [
        "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
    ];
    let mut responses = String::new();
    let mut truths = String::new();
    let mut items = Vec::new();
    for i in 0..1000 {
        let task = rng.random_range(0..3);
        let (gt, payload_task, payload) = match task {
            0 => {
                let mut labels = ek.to_vec();
                for j in 0..3 {
                    let k = rng.random_range(j..7);
                    labels.swap(j, k);
                }
                let n = rng.random_range(1..=3);
                let pred: Vec<&str> = (0..n).map(|_| ek[rng.random_range(0..7)]).collect();
                (
                    serde_json::json!({"task": "ranking", "ranking": &labels[..3]}),
                    "ranking",
                    pred.join(", "),
                )
            }
            1 => (
                serde_json::json!({"task": "regression", "dimension": "arousal", "score": rng.random::<f64>()}),
                "vad",
                format!("{:.3}", rng.random::<f64>()),
            ),
            _ => (
                serde_json::json!({"task": "classification", "label": ek[rng.random_range(0..7)], "set": "ekman7"}),
                "dec",
                ek[rng.random_range(0..7)].to_string(),
            ),
        };
        let task_tag = if rng.random_bool(0.9) {
            payload_task
        } else {
            "vad"
        };
        let response = if rng.random_bool(0.95) {
            format!("<think>step {i}</think>\n<answer>task: {task_tag}\n{payload}</answer>")
        } else {
            payload.clone()
        };
        let id = format!("item{i:04}");
        responses.push_str(
            &serde_json::json!({"schema": "response/1", "id": id, "response": response})
                .to_string(),
        );
        responses.push('\n');
        let mut gt_record = gt.clone();
        gt_record["schema"] = "gt/1".into();
        gt_record["id"] = id.clone().into();
        truths.push_str(&gt_record.to_string());
        truths.push('\n');
        items.push(BatchItem {
            id,
            prompt_id: None,
            response,
            ground_truth: Some(serde_json::from_value(gt).unwrap()),
        });
    }
    let resp_path = dir.path().join("responses.jsonl");
    let gt_path = dir.path().join("gt.jsonl");
    fs::write(&resp_path, responses).unwrap();
    fs::write(&gt_path, truths).unwrap();
    let out = dir.path().join("out");
    let o = emoreward(
        &out,
        &["score", "--group-size", "8", arg(&resp_path), arg(&gt_path)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cli_lines: Vec<String> = fs::read_to_string(out.join("scores.jsonl"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();

    let engine = ScoringEngine::from_config_path(fixture("pipeline.toml")).unwrap();
    let request = BatchRequest {
        schema: REQUEST_SCHEMA.into(),
        items,
        group_size: Some(8),
        reward_overrides: Default::default(),
    };
    let result: BatchResult = serde_json::from_str(
        &engine
            .score_batch_json(&serde_json::to_string(&request).unwrap())
            .unwrap(),
    )
    .unwrap();
    assert_eq!(result.rows.len(), cli_lines.len());
    for (row, line) in result.rows.iter().zip(&cli_lines) {
        assert_eq!(&serde_json::to_string(row).unwrap(), line);
    }
}
