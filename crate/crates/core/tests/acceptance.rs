//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Expected values come from independent oracles implemented in this file
//! (brute-force ranking, finite differences, exhaustive enumeration,
//! quantile retention arithmetic), never from the code paths under test.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use curator_core::annotations::{self, AggregatedLabel, AggregationMethod, ScoreVotes};
use curator_core::corpus::{write_document, Document};
use curator_core::embeddings::{mock_embed, store::write_store, EmbeddingStore, MockProvider};
use curator_core::metrics;
use curator_core::pipeline::{run_pipeline, EnsembleConfig, PipelineOptions};
use curator_core::regressor::{
    backward, mse_loss, train_head, train_with_metric, HeadParams, RegressionHead, TrainConfig,
    TrainingMeta,
};
use curator_core::rng::SeededRng;
use curator_core::thresholds::{quantile, ThresholdSpec};

/// Serializes the wall-clock-sensitive criteria so they never compete for
/// cores.
static TIMING_GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    TIMING_GATE.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------
// criterion 1: Spearman oracle equivalence
// ---------------------------------------------------------------------

/// O(n^2) average ranks: rank(v) = #less + (#equal + 1) / 2.
fn oracle_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&o| o < v).count() as f64;
            let equal = values.iter().filter(|&&o| o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    oracle_pearson(&oracle_ranks(x), &oracle_ranks(y))
}

fn non_constant(values: &[f64]) -> bool {
    values.iter().any(|&v| v != values[0])
}

#[test]
fn criterion_01_spearman_matches_brute_force_oracle() {
    let _gate = gate();
    let start = Instant::now();
    let mut rng = SeededRng::new(1001);
    let mut checked = 0;
    while checked < 1000 {
        let n = 3 + rng.index(48); // 3..=50
        let with_ties = rng.index(2) == 0;
        let draw = |rng: &mut SeededRng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if with_ties {
                        // half-integer grid forces ties
                        rng.index(11) as f64 / 2.0
                    } else {
                        rng.uniform_in(-100.0, 100.0)
                    }
                })
                .collect()
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        if !non_constant(&x) || !non_constant(&y) {
            continue;
        }
        let got = metrics::spearman(&x, &y).unwrap();
        let expected = oracle_spearman(&x, &y);
        assert!(
            (got - expected).abs() <= 1e-12,
            "case {checked} (n={n}, ties={with_ties}): {got} vs {expected}"
        );
        checked += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("[criterion 1] PASS: 1000 spearman cases match the brute-force oracle to 1e-12 in {elapsed:?}");
}

// ---------------------------------------------------------------------
// criterion 2: tie-free closed form
// ---------------------------------------------------------------------

#[test]
fn criterion_02_tie_free_closed_form() {
    // worked case: sum d^2 = 4, n = 5 -> 1 - 24/120 = 0.8
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [1.0, 3.0, 2.0, 5.0, 4.0];
    let got = metrics::spearman(&x, &y).unwrap();
    assert!((got - 0.8).abs() <= 1e-12, "worked case: {got}");

    let mut rng = SeededRng::new(1002);
    for case in 0..1000 {
        let n = 3 + rng.index(48);
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1e3, 1e3)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1e3, 1e3)).collect();
        let distinct = |v: &[f64]| {
            let mut sorted = v.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.windows(2).all(|w| w[0] != w[1])
        };
        if !distinct(&x) || !distinct(&y) {
            continue;
        }
        let rx = oracle_ranks(&x);
        let ry = oracle_ranks(&y);
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let nf = n as f64;
        let closed_form = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        let got = metrics::spearman(&x, &y).unwrap();
        assert!(
            (got - closed_form).abs() <= 1e-12,
            "case {case}: {got} vs {closed_form}"
        );
    }
    println!("[criterion 2] PASS: tie-free spearman equals 1 - 6*sum(d^2)/(n(n^2-1)) to 1e-12");
}

// ---------------------------------------------------------------------
// criterion 3: gradient check against central finite differences
// ---------------------------------------------------------------------

fn loss_for(params: &HeadParams, xs: &[f64], targets: &[f64]) -> f64 {
    let preds: Vec<f64> = xs
        .chunks_exact(params.input_dim)
        .map(|x| params.forward(x))
        .collect();
    mse_loss(&preds, targets).unwrap()
}

/// Central finite differences with h = 1e-4 over every parameter, visited
/// through mutation closures.
fn fd_gradient(params: &HeadParams, xs: &[f64], targets: &[f64]) -> Vec<f64> {
    const H: f64 = 1e-4;
    let mut flat = Vec::new();
    let mut probe = params.clone();
    let param_count = probe.w1.len() + probe.b1.len() + probe.w2.len() + 1;
    for k in 0..param_count {
        let read = |p: &HeadParams, k: usize| -> f64 {
            if k < p.w1.len() {
                p.w1[k]
            } else if k < p.w1.len() + p.b1.len() {
                p.b1[k - p.w1.len()]
            } else if k < p.w1.len() + p.b1.len() + p.w2.len() {
                p.w2[k - p.w1.len() - p.b1.len()]
            } else {
                p.b2
            }
        };
        let write = |p: &mut HeadParams, k: usize, v: f64| {
            if k < p.w1.len() {
                p.w1[k] = v;
            } else if k < p.w1.len() + p.b1.len() {
                let off = p.w1.len();
                p.b1[k - off] = v;
            } else if k < p.w1.len() + p.b1.len() + p.w2.len() {
                let off = p.w1.len() + p.b1.len();
                p.w2[k - off] = v;
            } else {
                p.b2 = v;
            }
        };
        let orig = read(params, k);
        write(&mut probe, k, orig + H);
        let up = loss_for(&probe, xs, targets);
        write(&mut probe, k, orig - H);
        let down = loss_for(&probe, xs, targets);
        write(&mut probe, k, orig);
        flat.push((up - down) / (2.0 * H));
    }
    flat
}

fn flatten_grads(g: &HeadParams) -> Vec<f64> {
    let mut flat = g.w1.clone();
    flat.extend_from_slice(&g.b1);
    flat.extend_from_slice(&g.w2);
    flat.push(g.b2);
    flat
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let _gate = gate();
    let start = Instant::now();
    let mut rng = SeededRng::new(1003);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let input_dim = 2 + rng.index(15); // <= 16
        let hidden_dim = 1 + rng.index(8); // <= 8
        let batch = 1 + rng.index(4);
        let mut params = HeadParams::init(input_dim, hidden_dim, &mut rng);
        params.b2 = rng.uniform_in(-1.0, 1.0);
        let xs: Vec<f64> = (0..batch * input_dim)
            .map(|_| rng.uniform_in(-1.5, 1.5))
            .collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.uniform_in(0.0, 5.0)).collect();
        // finite differences are meaningless across the ReLU kink; skip
        // instances with pre-activations inside the probe radius
        let near_kink = xs.chunks_exact(input_dim).any(|x| {
            params
                .w1
                .chunks_exact(input_dim)
                .enumerate()
                .any(|(j, row)| {
                    let pre: f64 =
                        params.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    pre.abs() < 1e-3
                })
        });
        if near_kink {
            continue;
        }
        let (analytic, _) = backward(&params, &xs, &targets).unwrap();
        let analytic = flatten_grads(&analytic);
        let fd = fd_gradient(&params, &xs, &targets);
        for (a, f) in analytic.iter().zip(&fd) {
            let scale = a.abs().max(f.abs());
            let rel = if scale < 1e-8 {
                0.0
            } else {
                (a - f).abs() / scale.max(1e-6)
            };
            worst = worst.max(rel);
        }
        checked += 1;
    }
    assert!(worst < 1e-4, "max relative error {worst}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "[criterion 3] PASS: 100 gradient checks, max relative error {worst:.2e} in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------
// criterion 4: distillation fidelity on a synthetic monotone teacher
// ---------------------------------------------------------------------

#[test]
fn criterion_04_distillation_reaches_val_spearman_095() {
    let _gate = gate();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let dim = 64;
    let n = 10_000;
    let mut rng = SeededRng::new(2024);
    let raw_w: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();

    // embeddings first, then rescale the teacher direction so w.x has unit
    // standard deviation across the sample
    let vectors: Vec<Vec<f32>> = (0..n)
        .map(|i| mock_embed(&format!("teacher doc {i}"), dim, 7))
        .collect();
    let raw_wx: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().zip(&raw_w).map(|(&x, w)| x as f64 * w).sum())
        .collect();
    let mean = raw_wx.iter().sum::<f64>() / n as f64;
    let std = (raw_wx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();

    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n);
    for (i, (vector, wx)) in vectors.into_iter().zip(&raw_wx).enumerate() {
        let signal = (wx - mean) / std;
        let score = (2.5 + signal + rng.normal_scaled(0.0, 0.1)).clamp(0.0, 5.0);
        let id = format!("t{i:05}");
        labels.push(AggregatedLabel {
            doc_id: id.clone(),
            score,
            method: AggregationMethod::Mean,
            votes: Vec::new(),
        });
        data.push((id, vector));
    }
    let store_path = dir.path().join("teacher.jqle");
    write_store(&store_path, "mock", dim, data).unwrap();
    let store = EmbeddingStore::open(&store_path).unwrap();

    let config = TrainConfig {
        seed: 42,
        label_source: "synthetic-teacher".into(),
        ..TrainConfig::default()
    };
    let (head, history) = train_head(&store, &labels, &config).unwrap();
    let elapsed = start.elapsed();
    assert!(head.meta.epochs_run <= 20);
    assert!(
        head.meta.best_val_spearman >= 0.95,
        "best_val_spearman {} after {} epochs (curve: {:?})",
        head.meta.best_val_spearman,
        head.meta.epochs_run,
        history
            .epochs
            .iter()
            .map(|e| e.val_spearman)
            .collect::<Vec<_>>()
    );
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "[criterion 4] PASS: best_val_spearman {:.4} within {} epochs in {elapsed:?}",
        head.meta.best_val_spearman, head.meta.epochs_run
    );
}

// ---------------------------------------------------------------------
// criterion 5: early-stopping exactness with a stubbed validation curve
// ---------------------------------------------------------------------

#[test]
fn criterion_05_early_stopping_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let dim = 8;
    let mut rng = SeededRng::new(55);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for i in 0..120 {
        let id = format!("d{i:03}");
        labels.push(AggregatedLabel {
            doc_id: id.clone(),
            score: rng.uniform_in(0.0, 5.0),
            method: AggregationMethod::Mean,
            votes: Vec::new(),
        });
        data.push((id, mock_embed(&format!("es doc {i}"), dim, 3)));
    }
    let store_path = dir.path().join("es.jqle");
    write_store(&store_path, "mock", dim, data).unwrap();
    let store = EmbeddingStore::open(&store_path).unwrap();
    let config = TrainConfig {
        hidden_dim: 8,
        batch_size: 32,
        max_epochs: 20,
        seed: 4,
        label_source: "stub".into(),
        ..TrainConfig::default()
    };

    // the fixture curve: epoch 1 is the only >= 1e-3 improvement, so five
    // consecutive sub-delta epochs halt training after epoch 6
    let curve = [0.50, 0.5005, 0.5008, 0.5003, 0.5006, 0.5009];
    let mut i = 0;
    let (head, history) = train_with_metric(&store, &labels, &config, &mut |_, _| {
        let v = curve[i];
        i += 1;
        Some(v)
    })
    .unwrap();
    assert_eq!(history.epochs.len(), 6, "stopped after epoch 6");
    assert_eq!(head.meta.epochs_run, 6);
    assert_eq!(head.meta.best_val_spearman, 0.50);

    // restored weights are epoch 1's: identical to a run whose epoch-1
    // value is unambiguously the best (the stub never affects the weight
    // trajectory, only selection)
    let reference_curve = [0.9, 0.1, 0.1, 0.1, 0.1, 0.1];
    let mut j = 0;
    let (reference, _) = train_with_metric(&store, &labels, &config, &mut |_, _| {
        let v = reference_curve[j];
        j += 1;
        Some(v)
    })
    .unwrap();
    assert_eq!(head.w1, reference.w1);
    assert_eq!(head.b1, reference.b1);
    assert_eq!(head.w2, reference.w2);
    assert_eq!(head.b2, reference.b2);
    println!("[criterion 5] PASS: fixture curve halts after epoch 6 and restores the epoch-1 best");
}

// ---------------------------------------------------------------------
// criterion 6: retention law under percentile thresholds
// ---------------------------------------------------------------------

fn random_head(head_id: &str, input_dim: usize, hidden: usize, seed: u64) -> RegressionHead {
    let mut rng = SeededRng::new(seed);
    RegressionHead {
        input_dim,
        hidden_dim: hidden,
        w1: (0..hidden * input_dim)
            .map(|_| rng.normal_scaled(0.0, (2.0 / input_dim as f64).sqrt()) as f32)
            .collect(),
        // positive unit biases keep the units generically active, so two
        // documents almost surely score differently (criterion 6 requires
        // distinct scores)
        b1: vec![1.0; hidden],
        w2: (0..hidden)
            .map(|_| rng.normal_scaled(0.0, (1.0 / hidden as f64).sqrt()) as f32)
            .collect(),
        b2: 0.0,
        backbone_id: "mock".into(),
        meta: TrainingMeta {
            seed,
            epochs_run: 0,
            best_val_spearman: 0.0,
            label_source: head_id.into(),
        },
    }
}

fn spec_for(head_id: &str, threshold: f64, p: f64) -> ThresholdSpec {
    ThresholdSpec {
        head_id: head_id.into(),
        percentile: p,
        threshold_value: threshold,
        reference_sample_size: 0,
        computed_at: "acceptance".into(),
    }
}

fn kept_ids(out_dir: &Path, stem: &str) -> Vec<String> {
    let mut ids = Vec::new();
    let file = out_dir.join(format!("{stem}.kept.jsonl"));
    for line in BufReader::new(File::open(file).unwrap()).lines() {
        let v: serde_json::Value = serde_json::from_str(&line.unwrap()).unwrap();
        ids.push(v["id"].as_str().unwrap().to_string());
    }
    ids
}

#[test]
fn criterion_06_retention_law_and_ensemble_monotonicity() {
    let _gate = gate();
    let dir = tempfile::tempdir().unwrap();
    let dim = 16;
    let n_docs = 100_000;
    let n_shards = 4;
    let provider = MockProvider::new(dim, 11);
    let head = random_head("h1", dim, 8, 21);
    let independent = random_head("h9", dim, 8, 99);

    // build the corpus and collect each head's score distribution over it
    let mut shards = Vec::new();
    let mut scores_h1 = Vec::with_capacity(n_docs);
    let mut scores_h9 = Vec::with_capacity(n_docs);
    for s in 0..n_shards {
        let path = dir.path().join(format!("shard{s}.jsonl"));
        let mut out = BufWriter::new(File::create(&path).unwrap());
        for i in 0..n_docs / n_shards {
            let id = format!("s{s}-{i:05}");
            let text = format!("synthetic body {s} {i}");
            let values = mock_embed(&text, dim, 11);
            scores_h1.push(head.forward(&values).unwrap());
            scores_h9.push(independent.forward(&values).unwrap());
            write_document(&mut out, &Document::new(id, text, "en")).unwrap();
        }
        out.flush().unwrap();
        shards.push(path);
    }
    // the retention law presumes distinct scores
    let mut sorted = scores_h1.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    assert_eq!(sorted.len(), n_docs, "scores must be distinct");

    let mut single_kept_at_07 = Vec::new();
    for p in [0.6, 0.7] {
        let threshold = quantile(&scores_h1, p).unwrap();
        let ensemble =
            EnsembleConfig::new(vec![(head.clone(), spec_for("h1", threshold, p))]).unwrap();
        let out_dir = dir.path().join(format!("single-{p}"));
        let options = PipelineOptions::new(&out_dir);
        let stats = run_pipeline(&shards, &provider, &ensemble, &options).unwrap();
        assert_eq!(stats.docs_in, n_docs as u64);
        let retention = stats.retention_docs;
        assert!(
            (retention - (1.0 - p)).abs() <= 0.01,
            "retention {retention} at p={p}"
        );
        if p == 0.7 {
            for s in 0..n_shards {
                single_kept_at_07.extend(kept_ids(&out_dir, &format!("shard{s}")));
            }
        }
        println!("  single head at p={p}: retention_docs={retention:.4}");
    }

    // three identical heads (distinct ids, same weights and thresholds)
    // keep exactly the single-head set
    let threshold = quantile(&scores_h1, 0.7).unwrap();
    let mut members = Vec::new();
    for id in ["e1", "e2", "e3"] {
        let mut clone = head.clone();
        clone.meta.label_source = id.into();
        members.push((clone, spec_for(id, threshold, 0.7)));
    }
    let triple = EnsembleConfig::new(members).unwrap();
    let out_dir = dir.path().join("triple");
    let stats_triple =
        run_pipeline(&shards, &provider, &triple, &PipelineOptions::new(&out_dir)).unwrap();
    let mut triple_kept = Vec::new();
    for s in 0..n_shards {
        triple_kept.extend(kept_ids(&out_dir, &format!("shard{s}")));
    }
    assert_eq!(single_kept_at_07, triple_kept, "identical ensemble differs");

    // adding an independent head never increases retention
    let threshold_h9 = quantile(&scores_h9, 0.6).unwrap();
    let two = EnsembleConfig::new(vec![
        (head.clone(), spec_for("h1", threshold, 0.7)),
        (independent.clone(), spec_for("h9", threshold_h9, 0.6)),
    ])
    .unwrap();
    let stats_two = run_pipeline(
        &shards,
        &provider,
        &two,
        &PipelineOptions::new(dir.path().join("two")),
    )
    .unwrap();
    assert!(stats_two.docs_kept <= stats_triple.docs_kept);
    println!(
        "[criterion 6] PASS: retention tracks 1-p, identical ensemble is exact, extra head kept {} <= {}",
        stats_two.docs_kept, stats_triple.docs_kept
    );
}

// ---------------------------------------------------------------------
// criterion 7: scale-shift neutrality of percentile thresholds
// ---------------------------------------------------------------------

#[test]
fn criterion_07_scale_shift_neutrality() {
    let mut rng = SeededRng::new(1007);
    let n = 10_000;
    let base: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 8.0)).collect();
    for (a, b) in [(1.7, 3.2), (0.25, -40.0), (1000.0, 0.0)] {
        let transformed: Vec<f64> = base.iter().map(|v| a * v + b).collect();
        for p in [0.6, 0.7] {
            let t_base = quantile(&base, p).unwrap();
            let t_transformed = quantile(&transformed, p).unwrap();
            let kept_base: Vec<usize> = (0..n).filter(|&i| base[i] > t_base).collect();
            let kept_transformed: Vec<usize> =
                (0..n).filter(|&i| transformed[i] > t_transformed).collect();
            assert_eq!(
                kept_base, kept_transformed,
                "kept sets differ at p={p}, a={a}, b={b}"
            );
        }
    }
    println!("[criterion 7] PASS: per-head percentile thresholds keep identical sets under y -> a*y + b");
}

// ---------------------------------------------------------------------
// criterion 8: exhaustive aggregation oracle
// ---------------------------------------------------------------------

/// Independent mode detection: sort, then compare run lengths.
fn oracle_aggregate(votes: &[u8]) -> (f64, &'static str) {
    let mut sorted = votes.to_vec();
    sorted.sort_unstable();
    let mut runs: Vec<(u8, usize)> = Vec::new();
    for &v in &sorted {
        match runs.last_mut() {
            Some((value, count)) if *value == v => *count += 1,
            _ => runs.push((v, 1)),
        }
    }
    let max_run = runs.iter().map(|(_, c)| *c).max().unwrap();
    let modal: Vec<u8> = runs
        .iter()
        .filter(|(_, c)| *c == max_run)
        .map(|(v, _)| *v)
        .collect();
    if modal.len() == 1 {
        (modal[0] as f64, "majority")
    } else {
        (
            votes.iter().map(|&v| v as f64).sum::<f64>() / votes.len() as f64,
            "mean",
        )
    }
}

#[test]
fn criterion_08_aggregation_exhaustive_oracle() {
    let mut cases = 0;
    for a in 0..=5u8 {
        for b in 0..=5u8 {
            for c in 0..=5u8 {
                let votes = [a, b, c];
                let got = annotations::aggregate("x", &votes).unwrap();
                let (expected_score, expected_method) = oracle_aggregate(&votes);
                let got_method = match got.method {
                    AggregationMethod::Majority => "majority",
                    AggregationMethod::Mean => "mean",
                };
                assert_eq!(got_method, expected_method, "votes {votes:?}");
                assert!(
                    (got.score - expected_score).abs() < 1e-15,
                    "votes {votes:?}: {} vs {expected_score}",
                    got.score
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 216);
    println!("[criterion 8] PASS: all 216 three-vote combinations match the mode/mean oracle");
}

// ---------------------------------------------------------------------
// criterion 9: determinism and bitwise round-trips
// ---------------------------------------------------------------------

fn criterion_09_fixture(dir: &Path) -> (EmbeddingStore, Vec<AggregatedLabel>) {
    let dim = 16;
    let mut rng = SeededRng::new(900);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for i in 0..400 {
        let id = format!("d{i:03}");
        labels.push(AggregatedLabel {
            doc_id: id.clone(),
            score: rng.uniform_in(0.0, 5.0),
            method: AggregationMethod::Mean,
            votes: Vec::new(),
        });
        data.push((id, mock_embed(&format!("det doc {i}"), dim, 5)));
    }
    let path = dir.join("det.jqle");
    write_store(&path, "mock", dim, data).unwrap();
    (EmbeddingStore::open(&path).unwrap(), labels)
}

#[test]
fn criterion_09_determinism_and_round_trips() {
    let _gate = gate();
    let dir = tempfile::tempdir().unwrap();

    // (a) training twice with a fixed seed yields byte-identical head files
    let (store, labels) = criterion_09_fixture(dir.path());
    let config = TrainConfig {
        hidden_dim: 32,
        batch_size: 64,
        max_epochs: 3,
        seed: 77,
        label_source: "det".into(),
        ..TrainConfig::default()
    };
    let mut head_bytes = Vec::new();
    for name in ["a.json", "b.json"] {
        let (head, _) = train_head(&store, &labels, &config).unwrap();
        let path = dir.path().join(name);
        head.save(&path).unwrap();
        head_bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(head_bytes[0], head_bytes[1], "head files differ across runs");

    // (b) store and head file round-trips are bitwise
    let mut rng = SeededRng::new(901);
    let mut vectors: Vec<(String, Vec<f32>)> = (0..50)
        .map(|i| {
            (
                format!("v{i}"),
                (0..24).map(|_| rng.uniform_in(-4.0, 4.0) as f32).collect(),
            )
        })
        .collect();
    // negative zero and a subnormal must survive untouched
    vectors[0].1[0] = -0.0;
    vectors[0].1[1] = 1.0e-40;
    let store_path = dir.path().join("roundtrip.jqle");
    write_store(&store_path, "mock", 24, vectors.clone()).unwrap();
    let reread = EmbeddingStore::open(&store_path).unwrap();
    for (id, values) in &vectors {
        let got = reread.get(id).unwrap().unwrap();
        let got_bits: Vec<u32> = got.iter().map(|v| v.to_bits()).collect();
        let want_bits: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got_bits, want_bits, "vector {id} changed");
    }
    let head_path = dir.path().join("a.json");
    let loaded = RegressionHead::load(&head_path).unwrap();
    let resaved = dir.path().join("resaved.json");
    loaded.save(&resaved).unwrap();
    assert_eq!(
        std::fs::read(&head_path).unwrap(),
        std::fs::read(&resaved).unwrap(),
        "head file not byte-stable through load/save"
    );

    // (c) pipeline stats are identical under 1 and 8 workers
    let dim = 16;
    let provider = MockProvider::new(dim, 31);
    let head = random_head("w", dim, 8, 41);
    let mut scores = Vec::new();
    let mut shards = Vec::new();
    for s in 0..8 {
        let path = dir.path().join(format!("w{s}.jsonl"));
        let mut out = BufWriter::new(File::create(&path).unwrap());
        for i in 0..2000 {
            let text = format!("worker doc {s} {i}");
            scores.push(head.forward(&mock_embed(&text, dim, 31)).unwrap());
            write_document(
                &mut out,
                &Document::new(format!("w{s}-{i:04}"), text, "en"),
            )
            .unwrap();
        }
        out.flush().unwrap();
        shards.push(path);
    }
    let threshold = quantile(&scores, 0.6).unwrap();
    let ensemble = EnsembleConfig::new(vec![(head, spec_for("w", threshold, 0.6))]).unwrap();
    let mut opts1 = PipelineOptions::new(dir.path().join("w1"));
    opts1.workers = 1;
    let mut opts8 = PipelineOptions::new(dir.path().join("w8"));
    opts8.workers = 8;
    let s1 = run_pipeline(&shards, &provider, &ensemble, &opts1).unwrap();
    let s8 = run_pipeline(&shards, &provider, &ensemble, &opts8).unwrap();
    assert_eq!(s1, s8, "stats depend on worker count");
    println!("[criterion 9] PASS: seeded training, store and head files, and worker counts are all reproducible");
}

// ---------------------------------------------------------------------
// criterion 10: throughput floor with the mock provider
// ---------------------------------------------------------------------

#[test]
fn criterion_10_throughput_floor() {
    let _gate = gate();
    let dir = tempfile::tempdir().unwrap();
    let dim = 256;
    let n_docs = 15_000;

    // ~700-token documents (~2800 characters)
    let mut shard_path = PathBuf::new();
    let word = "curation ";
    let body: String = word.repeat(2800 / word.len());
    for s in 0..1 {
        shard_path = dir.path().join(format!("tp{s}.jsonl"));
        let mut out = BufWriter::new(File::create(&shard_path).unwrap());
        for i in 0..n_docs {
            let mut doc = Document::new(
                format!("tp-{i:05}"),
                format!("{body} tail {i}"),
                "en",
            );
            doc.token_count = Some(700);
            write_document(&mut out, &doc).unwrap();
        }
        out.flush().unwrap();
    }

    let provider = MockProvider::new(dim, 17);
    let head = random_head("tp", dim, 1000, 3);
    // calibrate a mid-range threshold from a small sample
    let sample: Vec<f64> = (0..500)
        .map(|i| {
            head.forward(&mock_embed(&format!("{body} tail {i}"), dim, 17))
                .unwrap()
        })
        .collect();
    let threshold = quantile(&sample, 0.5).unwrap();
    let ensemble = EnsembleConfig::new(vec![(head, spec_for("tp", threshold, 0.5))]).unwrap();
    let mut options = PipelineOptions::new(dir.path().join("out"));
    options.workers = 1;

    let start = Instant::now();
    let stats = run_pipeline(
        std::slice::from_ref(&shard_path),
        &provider,
        &ensemble,
        &options,
    )
    .unwrap();
    let elapsed = start.elapsed();

    assert_eq!(stats.docs_in, n_docs as u64);
    assert_eq!(
        stats.docs_kept + stats.docs_dropped + stats.docs_errored,
        stats.docs_in,
        "stats not conserved"
    );
    assert_eq!(
        stats.tokens_kept + stats.tokens_dropped + stats.tokens_errored,
        stats.tokens_in
    );
    let docs_per_minute = n_docs as f64 / elapsed.as_secs_f64() * 60.0;
    assert!(
        docs_per_minute >= 50_000.0,
        "throughput {docs_per_minute:.0} docs/min below the 50k floor ({elapsed:?})"
    );
    println!(
        "[criterion 10] PASS: {docs_per_minute:.0} docs/min (~700-token docs, dim 256, one head, single worker)"
    );
}

// ---------------------------------------------------------------------
// criterion 11 (optional): reproduce the human ground-truth statistics
// ---------------------------------------------------------------------

/// Requires the released 511-document English ground-truth votes as JSONL
/// ({"doc_id": ..., "votes": [...]} per line); point CURATOR_HUMAN_GT at
/// the file and run with --ignored.
#[test]
#[ignore = "requires the released human ground-truth dataset (set CURATOR_HUMAN_GT)"]
fn criterion_11_human_ground_truth_statistics() {
    let path = std::env::var("CURATOR_HUMAN_GT")
        .expect("set CURATOR_HUMAN_GT to the ground-truth votes JSONL");
    let records = annotations::read_vote_records(BufReader::new(File::open(path).unwrap()))
        .unwrap();
    let valid: Vec<ScoreVotes> = records.into_iter().filter(|r| !r.votes.is_empty()).collect();
    let report = annotations::agreement_report(&valid).unwrap();
    assert!(
        (report.majority_share - 0.785).abs() <= 0.005,
        "majority_share {}",
        report.majority_share
    );
    assert!(
        (report.label_std - 0.56).abs() <= 0.02,
        "label_std {}",
        report.label_std
    );
    assert!(
        (report.spread_cdf[2] - 0.86).abs() <= 0.01,
        "spread_cdf(2) {}",
        report.spread_cdf[2]
    );
    println!(
        "[criterion 11] PASS: majority_share={:.3} label_std={:.3} spread_cdf(2)={:.3}",
        report.majority_share, report.label_std, report.spread_cdf[2]
    );
}

// ---------------------------------------------------------------------

/// The per-head score maps used across criteria serialize deterministically.
#[test]
fn report_serialization_is_deterministic() {
    let mut scores = BTreeMap::new();
    scores.insert("b".to_string(), vec![1.0, 2.0, 3.0]);
    scores.insert("a".to_string(), vec![3.0, 2.0, 1.0]);
    let report =
        curator_core::pipeline::score_distribution_report(&scores, Some(&[true, false, true]))
            .unwrap();
    let one = serde_json::to_string(&report).unwrap();
    let two = serde_json::to_string(&report).unwrap();
    assert_eq!(one, two);
    assert!(one.find("\"a\"").unwrap() < one.find("\"b\"").unwrap());
}
