//! Subcommand implementations. Each command reads its inputs, writes its
//! outputs and a manifest into the output directory, and reports counts.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emoreward::batch::{join_records, score_items, GroundTruthRecord, ResponseRecord};
use emoreward::clustering::{
    cluster_to_anchors, repeated_kfold_centroids, uniform_mass, ProbabilityVector, Radius,
    RegressionSample,
};
use emoreward::exec::Exec;
use emoreward::grpo::{run_seeds, run_simulation, CandidatePool, POOL_SCHEMA};
use emoreward::metrics::{
    evaluate, BenchItem, BenchPrediction, EvalOptions, JudgeProvider, ReplayJudge,
};
use emoreward::pipeline::PipelineConfig;
use emoreward::refinement::{
    balance_by_class, balance_by_vad, default_templates, derive_ranking, generate_vad_label,
    instantiate_templates, normalize_corpus_vad, AnnotationRecord, QaTemplate, Rejection,
    VadLexicon, VadSignal, ANNOTATION_SCHEMA,
};
use emoreward::taxonomy::{VadDimension, VadVector};
use serde::{Deserialize, Serialize};

use crate::io::{read_json, read_jsonl, read_text, to_jsonl, to_pretty_json, Numbered};
use crate::manifest::RunOutput;

pub const REJECTION_SCHEMA: &str = "rejection/1";

/// Settings shared by every command.
pub struct Run {
    pub config: PipelineConfig,
    pub seed: u64,
    pub exec: Exec,
    pub out: PathBuf,
}

/// What a command did, for the standard-error summary and the exit code.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Counts {
    pub read: usize,
    pub written: usize,
    pub rejected: usize,
    /// Per-item errors that fail the run under `--strict`.
    pub item_errors: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RejectionRow {
    schema: String,
    line: usize,
    #[serde(flatten)]
    rejection: Rejection,
}

fn rejection_row(line: usize, rejection: Rejection) -> RejectionRow {
    RejectionRow {
        schema: REJECTION_SCHEMA.into(),
        line,
        rejection,
    }
}

fn annotations(path: &Path) -> Result<Vec<Numbered<AnnotationRecord>>> {
    let records: Vec<Numbered<AnnotationRecord>> = read_jsonl(path)?;
    for r in &records {
        if r.value.schema != ANNOTATION_SCHEMA {
            bail!(
                "{}:{}: unsupported schema `{}`, expected `{ANNOTATION_SCHEMA}`",
                path.display(),
                r.line,
                r.value.schema
            );
        }
    }
    Ok(records)
}

fn finish(run: &Run, mut output: RunOutput, inputs: &[&Path], counts: Counts) -> Result<Counts> {
    for p in inputs {
        output.input(p)?;
    }
    for p in run.config.referenced_files() {
        output.input(p)?;
    }
    output.write(&run.out)?;
    Ok(counts)
}

pub fn map_labels(run: &Run, input: &Path) -> Result<Counts> {
    let cfg = &run.config;
    let table = cfg.mapping_table()?;
    let source = cfg.emotion_set(table.source())?;
    let records = annotations(input)?;
    let results = run.exec.map(&records, |r| {
        r.value
            .validate(&source)
            .map_err(|e| Rejection::new(&r.value.image_id, "validate", e.to_string()))
            .and_then(|()| r.value.map_labels(&table))
    });
    let mut mapped = Vec::new();
    let mut rejects = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(m) => mapped.push(m),
            Err(rej) => rejects.push(rejection_row(r.line, rej)),
        }
    }
    let counts = Counts {
        read: records.len(),
        written: mapped.len(),
        rejected: rejects.len(),
        item_errors: 0,
    };
    let mut out = RunOutput::new("map-labels", cfg, run.seed);
    out.file("mapped.jsonl", to_jsonl(&mapped));
    out.file("rejections.jsonl", to_jsonl(&rejects));
    finish(run, out, &[input], counts)
}

fn sample_probabilities(
    record: &AnnotationRecord,
    set: &emoreward::taxonomy::EmotionSet,
) -> std::result::Result<ProbabilityVector, String> {
    if let Some(dist) = &record.distribution {
        let values = set
            .ids()
            .map(|id| dist.get(id).copied().unwrap_or(0.0))
            .collect();
        return ProbabilityVector::new(values).map_err(|e| e.to_string());
    }
    let selected: BTreeSet<&str> = record
        .selections
        .iter()
        .flatten()
        .map(String::as_str)
        .collect();
    let selected: Vec<&str> = selected.into_iter().collect();
    uniform_mass(&selected, set).map_err(|e| e.to_string())
}

fn read_overrides(path: &Path) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (category, anchor) = line.split_once('\t').ok_or_else(|| {
            anyhow!(
                "{}:{}: expected `category<TAB>anchor`",
                path.display(),
                i + 1
            )
        })?;
        map.insert(category.trim().to_string(), anchor.trim().to_string());
    }
    Ok(map)
}

pub fn fit_vad(
    run: &Run,
    input: &Path,
    folds: Option<usize>,
    repeats: Option<usize>,
) -> Result<Counts> {
    let cfg = &run.config;
    let ccfg = &cfg.clustering;
    let source = cfg.emotion_set(&ccfg.source_set)?;
    let anchors = cfg.emotion_set(&ccfg.anchor_set)?;
    let records = annotations(input)?;
    let mut samples = Vec::new();
    let mut rejects = Vec::new();
    for r in &records {
        let rec = &r.value;
        let sample = rec
            .vad
            .ok_or_else(|| "record has no VAD rating".to_string())
            .and_then(|v| VadVector::new(v[0], v[1], v[2]).map_err(|e| e.to_string()))
            .and_then(|target| {
                rec.validate(&source).map_err(|e| e.to_string())?;
                Ok(RegressionSample {
                    probabilities: sample_probabilities(rec, &source)?,
                    target,
                })
            });
        match sample {
            Ok(s) => samples.push(s),
            Err(reason) => rejects.push(rejection_row(
                r.line,
                Rejection::new(&rec.image_id, "fit-vad", reason),
            )),
        }
    }
    let categories: Vec<String> = source.ids().map(str::to_string).collect();
    let folds = folds.unwrap_or(ccfg.folds);
    let repeats = repeats.unwrap_or(ccfg.repeats);
    let centroids =
        repeated_kfold_centroids(&categories, &samples, folds, repeats, run.seed, run.exec)
            .context("fitting the projection")?;
    let radius = ccfg.radius.map_or(Radius::Auto, Radius::Fixed);
    let mut assignment = cluster_to_anchors(&centroids, &anchors, radius)?;
    if let Some(path) = &cfg.paths.cluster_overrides {
        assignment.apply_overrides(&read_overrides(path)?, &centroids, &anchors)?;
    }
    if centroids.rank_deficient() {
        eprintln!("fit-vad: warning: design matrix is rank deficient; minimum-norm solution used");
    }
    let counts = Counts {
        read: records.len(),
        written: samples.len(),
        rejected: rejects.len(),
        item_errors: 0,
    };
    let mut out = RunOutput::new("fit-vad", cfg, run.seed);
    out.file("projection.tsv", centroids.to_tsv());
    out.file("assignment.tsv", assignment.to_tsv());
    out.file("assignment.json", to_pretty_json(&assignment));
    out.file("rejections.jsonl", to_jsonl(&rejects));
    finish(run, out, &[input], counts)
}

pub fn gen_vad(run: &Run, input: &Path) -> Result<Counts> {
    let cfg = &run.config;
    let lex_path = cfg
        .paths
        .lexicon
        .as_ref()
        .ok_or_else(|| anyhow!("gen-vad needs `paths.lexicon` in the configuration"))?;
    let lexicon = VadLexicon::parse(&read_text(lex_path)?)?;
    let records = annotations(input)?;
    let signals = run.exec.map(&records, |r| {
        generate_vad_label(&r.value.comments, &lexicon)
    });
    let mut kept = Vec::new();
    let mut raw = Vec::new();
    let mut rejects = Vec::new();
    for (r, signal) in records.iter().zip(signals) {
        match signal {
            VadSignal::Signal {
                raw: v,
                keyword_count,
            } => {
                let mut rec = r.value.clone();
                rec.keyword_count = Some(keyword_count);
                kept.push(rec);
                raw.push(v);
            }
            VadSignal::NoSignal => rejects.push(rejection_row(
                r.line,
                Rejection::new(
                    &r.value.image_id,
                    "gen-vad",
                    "no lexicon keywords in comments",
                ),
            )),
        }
    }
    let mut out = RunOutput::new("gen-vad", cfg, run.seed);
    if !raw.is_empty() {
        let (normalized, bounds) = normalize_corpus_vad(&raw)?;
        for (rec, v) in kept.iter_mut().zip(normalized) {
            rec.vad = Some(v.as_array());
        }
        out.file("bounds.json", to_pretty_json(&bounds));
    }
    let counts = Counts {
        read: records.len(),
        written: kept.len(),
        rejected: rejects.len(),
        item_errors: 0,
    };
    out.file("vad.jsonl", to_jsonl(&kept));
    out.file("rejections.jsonl", to_jsonl(&rejects));
    finish(run, out, &[input], counts)
}

pub fn derive_rankings(run: &Run, input: &Path) -> Result<Counts> {
    let cfg = &run.config;
    let records = annotations(input)?;
    let threshold = cfg.refinement.ranking_threshold;
    let results = run
        .exec
        .map(&records, |r| derive_ranking(&r.value, threshold));
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    let mut rejects = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(label) => {
                let mut rec = r.value.clone();
                rec.ranking = Some(label.top3.clone());
                kept.push(rec);
                labels.push(label);
            }
            Err(rej) => rejects.push(rejection_row(r.line, rej)),
        }
    }
    let counts = Counts {
        read: records.len(),
        written: kept.len(),
        rejected: rejects.len(),
        item_errors: 0,
    };
    let mut out = RunOutput::new("derive-rankings", cfg, run.seed);
    out.file("rankings.jsonl", to_jsonl(&kept));
    out.file("labels.jsonl", to_jsonl(&labels));
    out.file("rejections.jsonl", to_jsonl(&rejects));
    finish(run, out, &[input], counts)
}

/// Balancing key for the `balance` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BalanceKey {
    /// Dominant emotion category.
    Dec,
    Valence,
    Arousal,
    Dominance,
}

pub fn balance(run: &Run, input: &Path, by: BalanceKey) -> Result<Counts> {
    let cfg = &run.config;
    let records: Vec<AnnotationRecord> = annotations(input)?.into_iter().map(|n| n.value).collect();
    let keep = if records.is_empty() {
        Vec::new()
    } else {
        match by {
            BalanceKey::Dec => {
                balance_by_class(&records, |r| r.dec.as_deref(), &cfg.balance, run.seed)?
            }
            key => {
                let dim = match key {
                    BalanceKey::Valence => VadDimension::Valence,
                    BalanceKey::Arousal => VadDimension::Arousal,
                    _ => VadDimension::Dominance,
                };
                balance_by_vad(
                    &records,
                    |r| r.vad.map(|v| v[dim.index()]),
                    |r| r.keyword_count.unwrap_or(0),
                    &cfg.balance,
                )?
            }
        }
    };
    let counts = Counts {
        read: records.len(),
        written: keep.len(),
        rejected: records.len() - keep.len(),
        item_errors: 0,
    };
    let mut out = RunOutput::new("balance", cfg, run.seed);
    out.file(
        "balanced.jsonl",
        to_jsonl(keep.iter().map(|i| &records[*i])),
    );
    finish(run, out, &[input], counts)
}

pub fn instantiate_qa(run: &Run, input: &Path) -> Result<Counts> {
    let cfg = &run.config;
    let templates: Vec<QaTemplate> = match &cfg.paths.templates {
        Some(path) => read_json(path)?,
        None => default_templates(),
    };
    let set = cfg.emotion_set(&cfg.refinement.target_set)?;
    let records: Vec<AnnotationRecord> = annotations(input)?.into_iter().map(|n| n.value).collect();
    let instructions = if records.is_empty() {
        Vec::new()
    } else {
        instantiate_templates(&records, &templates, &set, run.seed)?
    };
    let counts = Counts {
        read: records.len(),
        written: instructions.len(),
        ..Counts::default()
    };
    let mut out = RunOutput::new("instantiate-qa", cfg, run.seed);
    out.file("instructions.jsonl", to_jsonl(&instructions));
    finish(run, out, &[input], counts)
}

pub fn score(
    run: &Run,
    responses: &Path,
    truths: &Path,
    group_size: Option<usize>,
) -> Result<Counts> {
    let cfg = &run.config;
    let ctx = cfg.scoring_context()?;
    let resp: Vec<ResponseRecord> = read_jsonl(responses)?
        .into_iter()
        .map(|n| n.value)
        .collect();
    let gts: Vec<GroundTruthRecord> = read_jsonl(truths)?.into_iter().map(|n| n.value).collect();
    let items = join_records(resp, gts)?;
    let rows = score_items(&items, &ctx, &cfg.reward, group_size, run.exec)?;
    let errors = rows.iter().filter(|r| r.is_error()).count();
    let counts = Counts {
        read: items.len(),
        written: rows.len(),
        rejected: 0,
        item_errors: errors,
    };
    let mut out = RunOutput::new("score", cfg, run.seed);
    out.file("scores.jsonl", to_jsonl(&rows));
    finish(run, out, &[responses, truths], counts)
}

pub fn evaluate_cmd(run: &Run, predictions: &Path, truths: &Path) -> Result<Counts> {
    let cfg = &run.config;
    let items: Vec<BenchItem> = read_jsonl(truths)?.into_iter().map(|n| n.value).collect();
    let preds: Vec<BenchPrediction> = read_jsonl(predictions)?
        .into_iter()
        .map(|n| n.value)
        .collect();
    let set = cfg
        .metrics
        .label_set
        .as_deref()
        .map(|s| cfg.emotion_set(s))
        .transpose()?;
    let judge = cfg
        .paths
        .judge_replay
        .as_ref()
        .map(|p| ReplayJudge::parse_jsonl(&read_text(p)?).map_err(anyhow::Error::from))
        .transpose()?;
    let opts = EvalOptions {
        set: set.as_ref(),
        judge: judge.as_ref().map(|j| j as &dyn JudgeProvider),
        judge_rounds: cfg.metrics.judge_rounds,
        level_weights: cfg.metrics.level_weights,
        position_weights: cfg.reward.position_weights,
    };
    let report = evaluate(&items, &preds, &opts, run.exec)?;
    let errors = report.rows.iter().filter(|r| r.error.is_some()).count();
    let table = report.to_table();
    print!("{table}");
    let counts = Counts {
        read: items.len(),
        written: report.rows.len(),
        rejected: 0,
        item_errors: errors,
    };
    let mut out = RunOutput::new("evaluate", cfg, run.seed);
    out.file("report.json", to_pretty_json(&report));
    out.file("report.txt", table);
    finish(run, out, &[predictions, truths], counts)
}

pub fn simulate(
    run: &Run,
    pool_path: &Path,
    steps: Option<usize>,
    runs: usize,
    group_size: Option<usize>,
) -> Result<Counts> {
    let cfg = &run.config;
    let pool: CandidatePool = read_json(pool_path)?;
    if pool.schema != POOL_SCHEMA {
        bail!(
            "unsupported pool schema `{}`, expected `{POOL_SCHEMA}`",
            pool.schema
        );
    }
    let mut sim = cfg.simulation;
    if let Some(s) = steps {
        sim.steps = s;
    }
    let mut reward = cfg.reward.clone();
    if let Some(g) = group_size {
        reward.group_size = g;
    }
    let rewards = pool.rewards(&cfg.scoring_context()?, &reward)?;
    let (trace, first, _) = run_simulation(&rewards, &reward, &sim, run.seed)?;
    let seeds: Vec<u64> = (1..runs as u64).map(|i| run.seed.wrapping_add(i)).collect();
    let mut summaries = vec![first];
    summaries.extend(run_seeds(&rewards, &reward, &sim, &seeds, run.exec)?);
    let converged = summaries.iter().filter(|s| s.converged).count();
    eprintln!(
        "simulate: {converged}/{} runs reached the target mass",
        summaries.len()
    );
    let counts = Counts {
        read: pool.candidates.len(),
        written: trace.len(),
        ..Counts::default()
    };
    let mut out = RunOutput::new("simulate", cfg, run.seed);
    out.file("rewards.json", to_pretty_json(&rewards));
    out.file("trace.jsonl", to_jsonl(&trace));
    out.file("summary.json", to_pretty_json(&summaries));
    finish(run, out, &[pool_path], counts)
}
