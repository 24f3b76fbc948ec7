use std::fs;
use std::path::Path;
use std::thread;

use emoreward::batch::{
    join_records, score_items, BatchError, BatchItem, BatchRequest, BatchResult, GroundTruthRecord,
    ResponseRecord, ScoringEngine, REQUEST_SCHEMA,
};
use emoreward::exec::Exec;
use emoreward::reward::{render_response, GroundTruth, RewardConfig, ScoringContext, TaskKind};
use emoreward::taxonomy::VadDimension;

const EKMAN_CSV: &str = "label,anger,disgust,fear,joy,neutral,sadness,surprise
anger,1,0.6,0.5,0.1,0.2,0.4,0.3
disgust,0.6,1,0.4,0.1,0.2,0.4,0.2
fear,0.5,0.4,1,0.1,0.2,0.5,0.4
joy,0.1,0.1,0.1,1,0.3,0.1,0.5
neutral,0.2,0.2,0.2,0.3,1,0.2,0.2
sadness,0.4,0.4,0.5,0.1,0.2,1,0.2
surprise,0.3,0.2,0.4,0.5,0.2,0.2,1
";

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    fs::write(dir.join("ekman7_emb.csv"), EKMAN_CSV).unwrap();
    let path = dir.join("pipeline.toml");
    fs::write(
        &path,
        format!("seed = 3\n{extra}\n[paths.embedding_matrices]\nekman7 = \"ekman7_emb.csv\"\n"),
    )
    .unwrap();
    path
}

fn ranking_item(id: &str, payload: &str) -> BatchItem {
    BatchItem {
        id: id.into(),
        prompt_id: None,
        response: render_response("looking", TaskKind::Ranking, payload),
        ground_truth: Some(GroundTruth::ranking(["joy", "surprise", "neutral"])),
    }
}

#[test]
fn engine_from_config_path_scores_all_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let engine = ScoringEngine::from_config_path(write_config(dir.path(), "")).unwrap();
    let items = vec![
        ranking_item("r", "joy, surprise, neutral"),
        BatchItem {
            id: "v".into(),
            prompt_id: None,
            response: render_response("calm", TaskKind::Vad, "0.2"),
            ground_truth: Some(GroundTruth::Regression {
                dimension: VadDimension::Valence,
                score: 0.7,
            }),
        },
        BatchItem {
            id: "c".into(),
            prompt_id: None,
            response: render_response("smile", TaskKind::Dec, "joy"),
            ground_truth: Some(GroundTruth::Classification {
                label: "joy".into(),
                set: "ekman7".into(),
            }),
        },
        BatchItem {
            id: "m".into(),
            prompt_id: None,
            response: "anything".into(),
            ground_truth: None,
        },
    ];
    let rows = engine.score_items(&items, None).unwrap();
    assert!((rows[0].total.unwrap() - 1.2).abs() < 1e-12);
    assert!((rows[1].total.unwrap() - 0.4).abs() < 1e-9);
    assert!((rows[2].total.unwrap() - 1.2).abs() < 1e-12);
    assert!(rows[3].is_error() && rows[3].total.is_none());
    assert!(rows.iter().all(|r| r.advantage.is_none()));
}

#[test]
fn missing_config_file_fails_initialization() {
    assert!(ScoringEngine::from_config_path("/no/such/pipeline.toml").is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[paths]\nlexicon = \"absent.tsv\"\n").unwrap();
    assert!(ScoringEngine::from_config_path(&path).is_err());
}

#[test]
fn group_mode_normalizes_within_chunks() {
    let mut items: Vec<BatchItem> = (0..8)
        .map(|i| {
            ranking_item(
                &format!("g{i}"),
                if i % 2 == 0 {
                    "joy, surprise, neutral"
                } else {
                    "fear"
                },
            )
        })
        .collect();
    items[7].ground_truth = None;
    items.push(ranking_item("tail", "joy"));
    let rows = score_items(
        &items,
        &ScoringContext::new(),
        &RewardConfig::default(),
        Some(8),
        Exec::Sequential,
    )
    .unwrap();
    let adv: Vec<f64> = rows[..7].iter().map(|r| r.advantage.unwrap()).collect();
    assert!(adv.iter().sum::<f64>().abs() < 1e-12);
    let var = adv.iter().map(|a| a * a).sum::<f64>() / 7.0;
    assert!((var - 1.0).abs() < 1e-12);
    assert!(rows[7].advantage.is_none() && rows[7].is_error());
    assert_eq!(rows[8].group, Some(1));
    assert!(rows[8].advantage.is_none() && rows[8].is_error());
}

#[test]
fn json_entry_point_matches_record_path() {
    let dir = tempfile::tempdir().unwrap();
    let engine = ScoringEngine::from_config_path(write_config(dir.path(), "")).unwrap();
    let responses: Vec<ResponseRecord> = (0..16)
        .map(|i| {
            let mut r = ResponseRecord::new(
                format!("s{i}"),
                render_response(
                    "t",
                    TaskKind::Ranking,
                    ["joy, fear", "surprise, joy, neutral", "joy"][i % 3],
                ),
            );
            r.prompt_id = Some(format!("p{}", i / 8));
            r
        })
        .collect();
    let truths = vec![
        GroundTruthRecord::new("p0", GroundTruth::ranking(["joy", "surprise", "neutral"])),
        GroundTruthRecord::new("p1", GroundTruth::ranking(["fear", "joy", "anger"])),
    ];
    let items = join_records(responses, truths).unwrap();
    let direct = engine.score_items(&items, Some(8)).unwrap();
    let request = BatchRequest {
        schema: REQUEST_SCHEMA.into(),
        items,
        group_size: Some(8),
        reward_overrides: Default::default(),
    };
    let json = engine
        .score_batch_json(&serde_json::to_string(&request).unwrap())
        .unwrap();
    let result: BatchResult = serde_json::from_str(&json).unwrap();
    assert_eq!(result.rows.len(), direct.len());
    for (row, expected) in result.rows.iter().zip(&direct) {
        assert_eq!(
            serde_json::to_string(row).unwrap(),
            serde_json::to_string(expected).unwrap()
        );
        assert_eq!(
            row.total.map(f64::to_bits),
            expected.total.map(f64::to_bits)
        );
    }
}

#[test]
fn request_validation() {
    let engine = ScoringEngine::new(Default::default()).unwrap();
    let empty = format!(r#"{{"schema":"{REQUEST_SCHEMA}","items":[]}}"#);
    assert!(matches!(
        engine.score_batch_json(&empty),
        Err(BatchError::Empty)
    ));
    assert!(matches!(
        engine.score_batch_json("{"),
        Err(BatchError::Malformed(_))
    ));
    let dup = BatchRequest {
        schema: REQUEST_SCHEMA.into(),
        items: vec![ranking_item("x", "joy"), ranking_item("x", "joy")],
        group_size: None,
        reward_overrides: Default::default(),
    };
    assert!(matches!(
        engine.score_batch(&dup),
        Err(BatchError::DuplicateId(_))
    ));
}

#[test]
fn reward_overrides_apply_per_request() {
    let engine = ScoringEngine::new(Default::default()).unwrap();
    let mut request = BatchRequest {
        schema: REQUEST_SCHEMA.into(),
        items: vec![ranking_item("x", "joy, surprise, neutral")],
        group_size: None,
        reward_overrides: [("format_weight".to_string(), serde_json::json!(0.5))]
            .into_iter()
            .collect(),
    };
    assert_eq!(
        engine.score_batch(&request).unwrap().rows[0].total,
        Some(1.5)
    );
    request.reward_overrides = [("no_such_key".to_string(), serde_json::json!(1))]
        .into_iter()
        .collect();
    assert!(matches!(
        engine.score_batch(&request),
        Err(BatchError::Malformed(_))
    ));
    request.reward_overrides.clear();
    assert!((engine.score_batch(&request).unwrap().rows[0].total.unwrap() - 1.2).abs() < 1e-12);
}

#[test]
fn engines_are_independent_and_thread_safe() {
    let a = ScoringEngine::new(Default::default()).unwrap();
    let mut cfg = emoreward::pipeline::PipelineConfig::default();
    cfg.reward.format_weight = 0.0;
    let b = ScoringEngine::new(cfg).unwrap();
    let items = vec![ranking_item("x", "joy, surprise, neutral")];
    thread::scope(|s| {
        let ha = s.spawn(|| a.score_items(&items, None).unwrap());
        let hb = s.spawn(|| b.score_items(&items, None).unwrap());
        assert!((ha.join().unwrap()[0].total.unwrap() - 1.2).abs() < 1e-12);
        assert!((hb.join().unwrap()[0].total.unwrap() - 1.0).abs() < 1e-12);
    });
}

#[test]
fn sequential_and_parallel_rows_are_identical() {
    let items: Vec<BatchItem> = (0..200)
        .map(|i| {
            ranking_item(
                &format!("i{i}"),
                ["joy, fear", "surprise, joy, neutral", "joy", "neutral, joy"][i % 4],
            )
        })
        .collect();
    let ctx = ScoringContext::new();
    let cfg = RewardConfig::default();
    let seq = score_items(&items, &ctx, &cfg, Some(8), Exec::Sequential).unwrap();
    let par = score_items(&items, &ctx, &cfg, Some(8), Exec::Parallel).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn record_schemas_round_trip() {
    let gt = GroundTruthRecord::new("p", GroundTruth::ranking(["joy", "fear", "anger"]));
    let line = serde_json::to_string(&gt).unwrap();
    assert_eq!(
        line,
        r#"{"schema":"gt/1","id":"p","task":"ranking","ranking":["joy","fear","anger"]}"#
    );
    assert_eq!(
        serde_json::from_str::<GroundTruthRecord>(&line).unwrap(),
        gt
    );
    let bad = GroundTruthRecord {
        schema: "gt/0".into(),
        ..gt
    };
    assert!(join_records(vec![], vec![bad]).is_err());
}
