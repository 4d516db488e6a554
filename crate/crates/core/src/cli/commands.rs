//! Implementations behind the CLI subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::ManifestRecorder;
use super::{
    AggregateArgs, CliError, EmbedArgs, EvalArgs, FilterArgs, StatsArgs, ThresholdsArgs, TrainArgs,
};
use crate::annotations::{self, aggregate as aggregate_votes, agreement_report, ScoreVotes};
use crate::corpus::ShardReader;
use crate::embeddings::{
    provider_from_uri, remote::RemoteOptions, store::StoreWriter, EmbeddingStore,
};
use crate::metrics::{self, ConfusionMatrix};
use crate::pipeline::{
    read_annotated_scores, run_pipeline, score_distribution_report, EnsembleConfig,
    PipelineOptions,
};
use crate::regressor::{train_head, RegressionHead, TrainConfig};
use crate::thresholds::{compute_thresholds, ThresholdSpec};

/// Writes via a temp file and renames, so failures never leave a partial
/// output at the target path.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn to_pretty_json(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Expands files and directories (non-recursively, *.jsonl) into a sorted
/// shard list.
fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut shards = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(path)? {
                let entry = entry?.path();
                if entry.extension().is_some_and(|e| e == "jsonl") {
                    found.push(entry);
                }
            }
            found.sort();
            shards.extend(found);
        } else if path.exists() {
            shards.push(path.clone());
        } else {
            return Err(CliError::Io(format!("input not found: {}", path.display())));
        }
    }
    Ok(shards)
}

fn load_heads(paths: &[PathBuf]) -> Result<Vec<RegressionHead>, CliError> {
    let mut heads = Vec::with_capacity(paths.len());
    let mut seen = std::collections::HashSet::new();
    for path in paths {
        let head = RegressionHead::load(path)?;
        if !seen.insert(head.head_id().to_string()) {
            return Err(CliError::Data(format!(
                "duplicate head id '{}' in {}",
                head.head_id(),
                path.display()
            )));
        }
        heads.push(head);
    }
    Ok(heads)
}

#[derive(Serialize)]
struct AggregateReport {
    documents: usize,
    invalid_records: usize,
    majority_share: f64,
    label_std: f64,
    spread_cdf: [f64; 6],
}

pub fn aggregate(args: &AggregateArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    rec.add_input(&args.votes);
    rec.set_config(serde_json::json!({ "votes": args.votes.display().to_string() }));
    let records = annotations::read_vote_records(BufReader::new(File::open(&args.votes)?))?;
    let (valid, invalid): (Vec<ScoreVotes>, Vec<ScoreVotes>) =
        records.into_iter().partition(|r| !r.votes.is_empty());
    for record in &invalid {
        log::warn!("record '{}' has no valid votes; skipped", record.doc_id);
    }
    if valid.is_empty() {
        return Err(CliError::Data("empty dataset: no valid vote records".into()));
    }

    let mut lines = Vec::new();
    for record in &valid {
        let label = aggregate_votes(record.doc_id.clone(), &record.votes)?;
        serde_json::to_writer(&mut lines, &label)?;
        lines.push(b'\n');
    }
    write_atomic(&args.out, &lines)?;
    rec.add_output(&args.out);

    let agreement = agreement_report(&valid)?;
    let report = AggregateReport {
        documents: valid.len(),
        invalid_records: invalid.len(),
        majority_share: agreement.majority_share,
        label_std: agreement.label_std,
        spread_cdf: agreement.spread_cdf,
    };
    let report_bytes = to_pretty_json(&report)?;
    std::io::stdout().write_all(&report_bytes)?;
    if let Some(path) = &args.report {
        write_atomic(path, &report_bytes)?;
        rec.add_output(path);
    }
    Ok(())
}

pub fn embed(args: &EmbedArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    let shards = expand_inputs(&args.input)?;
    for shard in &shards {
        rec.add_input(shard);
    }
    rec.set_config(serde_json::json!({
        "provider": args.provider,
        "batch_size": args.batch_size,
    }));
    let provider = provider_from_uri(
        &args.provider,
        RemoteOptions {
            batch_size: args.batch_size,
            backbone_id: args.backbone_id.clone(),
            ..RemoteOptions::default()
        },
    )?;

    let tmp = args.out.with_extension("tmp");
    let mut writer: Option<StoreWriter> = None;
    let mut invalid = 0u64;
    for shard in &shards {
        let mut reader = ShardReader::new(BufReader::new(File::open(shard)?));
        let mut batch = Vec::with_capacity(args.batch_size);
        loop {
            batch.clear();
            let mut exhausted = true;
            for item in &mut reader {
                match item {
                    Ok(doc) => {
                        batch.push(doc);
                        if batch.len() == args.batch_size.max(1) {
                            exhausted = false;
                            break;
                        }
                    }
                    Err(e) if e.is_fatal() => return Err(e.into()),
                    Err(e) => {
                        log::warn!("{}: {e}", shard.display());
                        invalid += 1;
                    }
                }
            }
            if !batch.is_empty() {
                let vectors = provider.embed_batch(&batch)?;
                let writer = match writer.as_mut() {
                    Some(w) => w,
                    None => {
                        let dim = vectors.first().map(Vec::len).unwrap_or(0);
                        let backbone = args
                            .backbone_id
                            .clone()
                            .unwrap_or_else(|| provider.backbone_id().to_string());
                        writer.insert(StoreWriter::create(&tmp, &backbone, dim)?)
                    }
                };
                for (doc, values) in batch.iter().zip(&vectors) {
                    writer.add(&doc.id, values)?;
                }
            }
            if exhausted {
                break;
            }
        }
    }
    let Some(writer) = writer else {
        return Err(CliError::Data("no documents to embed".into()));
    };
    let count = writer.len();
    writer.finish()?;
    std::fs::rename(&tmp, &args.out)?;
    rec.add_output(&args.out);
    println!("embedded {count} documents ({invalid} invalid records skipped)");
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.label_source {
        config.label_source = v.clone();
    } else if args.config.is_none() || config.label_source == TrainConfig::default().label_source {
        if let Some(stem) = args.labels.file_stem() {
            config.label_source = stem.to_string_lossy().into_owned();
        }
    }
    if let Some(v) = args.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = args.lr_peak {
        config.lr_peak = v;
    }
    if let Some(v) = args.lr_min {
        config.lr_min = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.val_fraction {
        config.val_fraction = v;
    }
    if let Some(v) = args.early_stop_delta {
        config.early_stop_delta = v;
    }
    if let Some(v) = args.early_stop_patience {
        config.early_stop_patience = v;
    }
    if let Some(v) = args.weight_decay {
        config.weight_decay = v;
    }
    Ok(config)
}

pub fn train(args: &TrainArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    rec.add_input(&args.store);
    rec.add_input(&args.labels);
    let config = resolve_train_config(args)?;
    rec.set_config(&config);
    rec.set_seed(config.seed);

    let store = EmbeddingStore::open(&args.store)?;
    let labels = annotations::read_aggregated_labels(BufReader::new(File::open(&args.labels)?))?;
    let (head, history) = train_head(&store, &labels, &config)?;

    let tmp = args.out.with_extension("tmp");
    head.save(&tmp)?;
    std::fs::rename(&tmp, &args.out)?;
    rec.add_output(&args.out);
    rec.hash_artifact(&args.out)?;

    let history_path = args.history.clone().unwrap_or_else(|| {
        let mut name = args.out.file_stem().unwrap_or_default().to_os_string();
        name.push(".history.json");
        args.out.with_file_name(name)
    });
    write_atomic(&history_path, &to_pretty_json(&history)?)?;
    rec.add_output(&history_path);

    println!(
        "trained head '{}': best_val_spearman={:.6} epochs_run={}",
        head.head_id(),
        head.meta.best_val_spearman,
        head.meta.epochs_run
    );
    Ok(())
}

#[derive(Serialize)]
struct HeadEvalReport {
    n: usize,
    spearman: f64,
    /// Two-sided t-test p-value; null when n < 4.
    p_value: Option<f64>,
    macro_f1: f64,
    confusion: ConfusionMatrix,
    macro_f1_convention: &'static str,
}

fn round_to_class(score: f64) -> u8 {
    score.round().clamp(0.0, 5.0) as u8
}

pub fn eval(args: &EvalArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    rec.add_input(&args.store);
    rec.add_input(&args.gt);
    for head in &args.heads {
        rec.hash_artifact(head)?;
    }
    let heads = load_heads(&args.heads)?;
    let store = EmbeddingStore::open(&args.store)?;
    let gt = annotations::read_aggregated_labels(BufReader::new(File::open(&args.gt)?))?;
    rec.set_config(serde_json::json!({ "heads": args.heads.len(), "gt_documents": gt.len() }));

    let mut vectors = Vec::with_capacity(gt.len());
    let mut missing = Vec::new();
    for label in &gt {
        match store.get(&label.doc_id)? {
            Some(values) => vectors.push(values),
            None => missing.push(label.doc_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "no embeddings for ground-truth ids: [{}]",
            missing.join(", ")
        )));
    }
    let truth_scores: Vec<f64> = gt.iter().map(|l| l.score).collect();
    let truth_classes: Vec<u8> = truth_scores.iter().map(|&s| round_to_class(s)).collect();

    let mut reports = BTreeMap::new();
    for head in &heads {
        let preds = head.predict_batch(&vectors)?;
        let rho = metrics::spearman(&preds, &truth_scores)?;
        let p_value = metrics::spearman_pvalue(rho, preds.len()).ok();
        let pred_classes: Vec<u8> = preds.iter().map(|&s| round_to_class(s)).collect();
        let macro_f1 = metrics::macro_f1(&truth_classes, &pred_classes)?;
        let confusion = metrics::confusion(&truth_classes, &pred_classes)?;
        reports.insert(
            head.head_id().to_string(),
            HeadEvalReport {
                n: preds.len(),
                spearman: rho,
                p_value,
                macro_f1,
                confusion,
                macro_f1_convention: "averaged over classes present in the true labels",
            },
        );
    }
    let bytes = to_pretty_json(&reports)?;
    std::io::stdout().write_all(&bytes)?;
    write_atomic(&args.out, &bytes)?;
    rec.add_output(&args.out);
    Ok(())
}

pub fn thresholds(args: &ThresholdsArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.percentile) || args.percentile.is_nan() {
        return Err(CliError::Usage(format!(
            "--percentile must lie in [0, 1], got {}",
            args.percentile
        )));
    }
    rec.set_config(serde_json::json!({ "percentile": args.percentile }));

    let mut scores_per_head: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    match (&args.store, args.heads.is_empty(), args.scores.is_empty()) {
        (Some(store_path), false, true) => {
            rec.add_input(store_path);
            for path in &args.heads {
                rec.hash_artifact(path)?;
            }
            let heads = load_heads(&args.heads)?;
            let store = EmbeddingStore::open(store_path)?;
            let mut all: Vec<(String, Vec<f32>)> = Vec::with_capacity(store.len());
            for record in store.iter() {
                all.push(record?);
            }
            for head in &heads {
                let mut scores = Vec::with_capacity(all.len());
                for (_, values) in &all {
                    scores.push(head.forward(values)?);
                }
                scores_per_head.insert(head.head_id().to_string(), scores);
            }
        }
        (None, true, false) => {
            for path in &args.scores {
                rec.add_input(path);
                let (per_head, _) = read_annotated_scores(BufReader::new(File::open(path)?))?;
                for (head, mut scores) in per_head {
                    scores_per_head.entry(head).or_default().append(&mut scores);
                }
            }
        }
        _ => {
            return Err(CliError::Usage(
                "pass either --head ... --store <path>, or --scores <file>...".into(),
            ))
        }
    }
    if scores_per_head.is_empty() {
        return Err(CliError::Data("no scores found".into()));
    }

    let specs = compute_thresholds(&scores_per_head, args.percentile)?;
    let bytes = to_pretty_json(&specs)?;
    std::io::stdout().write_all(&bytes)?;
    write_atomic(&args.out, &bytes)?;
    rec.add_output(&args.out);
    Ok(())
}

pub fn filter(args: &FilterArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    let shards = expand_inputs(&args.input)?;
    for shard in &shards {
        rec.add_input(shard);
    }
    for path in &args.heads {
        rec.hash_artifact(path)?;
    }
    rec.hash_artifact(&args.thresholds)?;
    rec.set_config(serde_json::json!({
        "provider": args.provider,
        "workers": args.workers,
        "batch_size": args.batch_size,
        "keep_rejects": args.keep_rejects,
    }));

    let heads = load_heads(&args.heads)?;
    let specs: Vec<ThresholdSpec> =
        serde_json::from_str(&std::fs::read_to_string(&args.thresholds)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", args.thresholds.display())))?;
    let mut pairs = Vec::with_capacity(heads.len());
    for head in heads {
        let spec = specs
            .iter()
            .find(|s| s.head_id == head.head_id())
            .cloned()
            .ok_or_else(|| {
                CliError::Data(format!("no threshold spec for head '{}'", head.head_id()))
            })?;
        pairs.push((head, spec));
    }
    let ensemble = EnsembleConfig::new(pairs)?;
    let provider = provider_from_uri(
        &args.provider,
        RemoteOptions {
            batch_size: args.batch_size,
            ..RemoteOptions::default()
        },
    )?;

    let options = PipelineOptions {
        out_dir: args.out_dir.clone(),
        keep_rejects: args.keep_rejects,
        workers: args.workers,
        embed_batch: args.batch_size,
    };
    let stats = run_pipeline(&shards, provider.as_ref(), &ensemble, &options)?;

    let stats_path = args
        .stats
        .clone()
        .unwrap_or_else(|| args.out_dir.join("stats.json"));
    let bytes = to_pretty_json(&stats)?;
    std::io::stdout().write_all(&bytes)?;
    write_atomic(&stats_path, &bytes)?;
    rec.add_output(&args.out_dir);
    rec.add_output(&stats_path);

    if !stats.shards_failed.is_empty() {
        return Err(CliError::Data(format!(
            "{} shard(s) failed: [{}]",
            stats.shards_failed.len(),
            stats.shards_failed.join(", ")
        )));
    }
    Ok(())
}

pub fn stats(args: &StatsArgs, rec: &mut ManifestRecorder) -> Result<(), CliError> {
    let inputs = expand_inputs(&args.input)?;
    let mut scores_per_head: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut partition = Vec::new();
    for path in &inputs {
        rec.add_input(path);
        let (per_head, mut kept) = read_annotated_scores(BufReader::new(File::open(path)?))?;
        for (head, mut scores) in per_head {
            scores_per_head.entry(head).or_default().append(&mut scores);
        }
        partition.append(&mut kept);
    }
    rec.set_config(serde_json::json!({ "inputs": inputs.len() }));
    if scores_per_head.is_empty() {
        return Err(CliError::Data("no scores found in the inputs".into()));
    }
    let report = score_distribution_report(&scores_per_head, Some(&partition))?;
    let bytes = to_pretty_json(&report)?;
    std::io::stdout().write_all(&bytes)?;
    write_atomic(&args.out, &bytes)?;
    rec.add_output(&args.out);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_inputs_sorts_directory_shards() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.jsonl", "a.jsonl", "ignore.txt"] {
            std::fs::write(dir.path().join(name), b"").unwrap();
        }
        let shards = expand_inputs(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = shards
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a.jsonl", "b.jsonl"]);
        assert!(expand_inputs(&[dir.path().join("missing.jsonl")]).is_err());
    }

    #[test]
    fn round_to_class_clamps_and_rounds_half_away() {
        assert_eq!(round_to_class(2.5), 3);
        assert_eq!(round_to_class(2.4), 2);
        assert_eq!(round_to_class(-1.0), 0);
        assert_eq!(round_to_class(9.7), 5);
    }

    #[test]
    fn train_config_resolution_order() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("config.json");
        std::fs::write(
            &config_path,
            r#"{"batch_size": 64, "max_epochs": 7, "label_source": "teacher-x"}"#,
        )
        .unwrap();
        let args = TrainArgs {
            store: "s".into(),
            labels: "teacher_a_labels.jsonl".into(),
            out: "h".into(),
            history: None,
            config: Some(config_path),
            seed: Some(9),
            label_source: None,
            hidden_dim: None,
            lr_peak: None,
            lr_min: None,
            batch_size: Some(128), // flag beats file
            max_epochs: None,
            val_fraction: None,
            early_stop_delta: None,
            early_stop_patience: None,
            weight_decay: None,
        };
        let config = resolve_train_config(&args).unwrap();
        assert_eq!(config.batch_size, 128);
        assert_eq!(config.max_epochs, 7);
        assert_eq!(config.seed, 9);
        assert_eq!(config.label_source, "teacher-x");
        assert_eq!(config.lr_peak, 5e-4); // untouched default

        // without a file or flag, the labels stem names the head
        let args = TrainArgs {
            config: None,
            batch_size: None,
            seed: None,
            ..args
        };
        let config = resolve_train_config(&args).unwrap();
        assert_eq!(config.label_source, "teacher_a_labels");
    }
}
