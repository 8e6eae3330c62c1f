//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.
//!
//! Reference values are computed by independent oracles written here (naive
//! silhouettes, brute-force set arithmetic, explicit per-patient means) and
//! never by calling the implementation under test a second time.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use shorttopic::analysis::{patient_clustering, patient_mixtures, PatientProfile, ProfileSpace};
use shorttopic::corpus::{build_vocabulary, drop_empty, fragment_interviews, standardize_all, Document, Lexicon};
use shorttopic::factorization::{fit_nmf, fit_nmf_dense, Init, NmfOptions};
use shorttopic::io::read_topic_table;
use shorttopic::metrics::{silhouette_samples, topic_modularity};
use shorttopic::pipeline::{run_pipeline, Manifest, RunConfig, MANIFEST_FILE};
use shorttopic::representations::{build_cluwords, cluwords_matrix, tfidf_matrix, EmbeddingTable, Scheme};
use shorttopic::synthetic;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

fn nmf_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = uniform_matrix(&mut rng, 100, 50);
    let opts = NmfOptions {
        max_iter: 500,
        tol: 0.0,
        seed: 7,
        init: Init::Nndsvd,
    };
    let start = Instant::now();
    let model = fit_nmf_dense(&x, 12, &opts).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(model.n_iter == 500, || format!("stopped after {} iterations", model.n_iter))?;
    let trace = &model.loss_trace;
    for (i, pair) in trace.windows(2).enumerate() {
        ensure(pair[1] <= pair[0] * (1.0 + 1e-10), || {
            format!("loss rose at iteration {}: {} -> {}", i + 1, pair[0], pair[1])
        })?;
    }
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{} losses non-increasing, {:.3} -> {:.3}, {secs:.2} s", trace.len(), trace[0], trace[trace.len() - 1]))
}

fn nmf_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, m, k) = (200, 100, 4);
    let w_true = uniform_matrix(&mut rng, n, k);
    // Each planted topic owns a disjoint block of 25 columns.
    let h_true = Array2::from_shape_fn((k, m), |(t, j)| if j / (m / k) == t { 0.5 + rng.random::<f64>() } else { 0.0 });
    let x = w_true.dot(&h_true);
    let opts = NmfOptions {
        max_iter: 500,
        ..Default::default()
    };
    let model = fit_nmf_dense(&x, k, &opts).map_err(|e| e.to_string())?;
    // Oracle: explicit Frobenius norms.
    let resid = &x - &model.w.dot(&model.h);
    let rel = resid.mapv(|v| v * v).sum().sqrt() / x.mapv(|v| v * v).sum().sqrt();
    ensure(model.n_iter <= 500, || format!("{} iterations", model.n_iter))?;
    ensure(rel < 0.05, || format!("relative error {rel:.4}"))?;
    Ok(format!("relative error {rel:.2e} after {} iterations", model.n_iter))
}

fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, n_words: usize) -> Vec<Document> {
    (0..n_docs)
        .map(|d| {
            let len = rng.random_range(1..9);
            Document {
                patient_id: format!("R{:03}", d / 7),
                question_id: (d % 7 + 1) as u8,
                raw_text: String::new(),
                tokens: (0..len).map(|_| format!("w{}", rng.random_range(0..n_words))).collect(),
            }
        })
        .collect()
}

fn cluwords_identity() -> Outcome {
    let mut corpora: Vec<Vec<Document>> = Vec::new();
    for seed in 1..=3 {
        let synth = synthetic::generate(20 + 15 * seed as usize, seed);
        corpora.push(drop_empty(standardize_all(&fragment_interviews(&synth.interviews), &Lexicon::default())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        corpora.push(random_corpus(&mut rng, 120, 60));
    }
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut worst = 0.0f64;
    for docs in &corpora {
        let vocab = build_vocabulary(docs, 1).map_err(|e| e.to_string())?;
        let map: HashMap<String, Vec<f64>> = vocab
            .terms()
            .iter()
            .map(|t| (t.clone(), (0..8).map(|_| normal.sample(&mut rng)).collect()))
            .collect();
        let emb = EmbeddingTable::from_map(8, &vocab, &map);
        let clusters = build_cluwords(&emb, 1.0).map_err(|e| e.to_string())?;
        let clu = cluwords_matrix(docs, &vocab, &clusters).map_err(|e| e.to_string())?.to_dense();
        let tfidf = tfidf_matrix(docs, &vocab).to_dense();
        ensure(clu.dim() == tfidf.dim(), || "shape mismatch".into())?;
        let diff = (&clu - &tfidf).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("{} corpora, max deviation {worst:.1e}", corpora.len()))
}

/// Direct evaluation of s = (b - a) / max(a, b) with Euclidean distances.
fn naive_silhouette(points: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    let n = points.nrows();
    let dist = |i: usize, j: usize| {
        let d = &points.row(i) - &points.row(j);
        d.dot(&d).sqrt()
    };
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    (0..n)
        .map(|i| {
            let mut sums = vec![0.0; n_clusters];
            let mut counts = vec![0usize; n_clusters];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist(i, j);
                    counts[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if counts[own] == 0 {
                return 0.0;
            }
            let a = sums[own] / counts[own] as f64;
            let b = (0..n_clusters)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect()
}

fn silhouette_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = Array2::from_shape_fn((200, 2), |_| rng.random_range(-10.0..10.0));
    let labels: Vec<usize> = (0..200).map(|i| if i < 4 { i } else { rng.random_range(0..4) }).collect();
    let got = silhouette_samples(points.view(), &labels).map_err(|e| e.to_string())?;
    let want = naive_silhouette(&points, &labels);
    let diff = got.iter().zip(&want).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    ensure(diff <= 1e-9, || format!("max deviation {diff:.3e}"))?;

    let fixture = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 10.0, 11.0]).expect("shape");
    let s = silhouette_samples(fixture.view(), &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    // a = 1, b = (10 + 11) / 2 = 10.5, s = 9.5 / 10.5
    let expected = 0.904_761_904_761_904_8;
    ensure((s[0] - expected).abs() <= 1e-6, || format!("s(0.0) = {}", s[0]))?;
    Ok(format!("200 points max deviation {diff:.1e}; s(0.0) = {:.6}", s[0]))
}

/// Brute force: a word of topic i is unique when no other column contains it.
fn brute_force_modularity(columns: &[Vec<String>]) -> Vec<f64> {
    columns
        .iter()
        .enumerate()
        .map(|(i, col)| {
            let mut seen: Vec<&String> = Vec::new();
            let mut unique = 0usize;
            for w in col {
                if seen.contains(&w) {
                    continue;
                }
                seen.push(w);
                let shared = columns.iter().enumerate().any(|(j, other)| j != i && other.contains(w));
                if !shared {
                    unique += 1;
                }
            }
            unique as f64 / col.len() as f64
        })
        .collect()
}

/// Reads a wide fixture directly, independently of the library parser.
fn raw_columns(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).expect("fixture readable");
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(|c| c.trim().to_string()).collect())
        .collect();
    (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].clone()).collect()).collect()
}

fn modularity_fixtures() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut details = Vec::new();
    for name in ["lda", "nmf", "seanmf", "cluwords_bert", "cluwords_fasttext"] {
        let path = dir.join(format!("{name}.tsv"));
        let summary = read_topic_table(&path).map_err(|e| e.to_string())?;
        let report = topic_modularity(&summary).map_err(|e| e.to_string())?;
        let columns = raw_columns(&path);
        ensure(columns.len() == 12 && columns.iter().all(|c| c.len() == 10), || format!("{name}: not 12x10"))?;
        let oracle = brute_force_modularity(&columns);
        ensure(report.per_topic == oracle, || format!("{name}: {:?} != {:?}", report.per_topic, oracle))?;
        details.push(format!("{name} {:.3}", report.mean));
        if name == "cluwords_fasttext" {
            let holders: Vec<usize> = (0..12).filter(|&c| columns[c].iter().any(|w| w == "reumatismo")).collect();
            ensure(holders.len() >= 2, || format!("reumatismo found in {holders:?}"))?;
            for &c in &holders {
                // Its topic loses the word: the unique count excludes it.
                let without: Vec<String> = columns[c].iter().filter(|w| *w != "reumatismo").cloned().collect();
                let others: Vec<&Vec<String>> = columns.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, v)| v).collect();
                let unique = without
                    .iter()
                    .enumerate()
                    .filter(|(i, w)| !without[..*i].contains(w) && !others.iter().any(|o| o.contains(w)))
                    .count();
                ensure(report.per_topic[c] == unique as f64 / 10.0, || format!("topic {c} counts reumatismo"))?;
            }
        }
    }
    Ok(details.join(", "))
}

fn full_size_files(dir: &Path) -> synthetic::SyntheticFiles {
    synthetic::generate(94, 1).write_to(dir, 1).expect("synthetic files written")
}

fn config_for(files: &synthetic::SyntheticFiles, out: &Path) -> RunConfig {
    RunConfig {
        corpus: Some(files.corpus.clone()),
        lemmas: Some(files.lemmas.clone()),
        stopwords: Some(files.stopwords.clone()),
        mwe: Some(files.mwes.clone()),
        embeddings: Some(files.embeddings.clone()),
        out: out.to_path_buf(),
        ..Default::default()
    }
}

fn patient_aggregation() -> Outcome {
    let synth = synthetic::generate(94, 1);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = synth.write_to(tmp.path(), 1).map_err(|e| e.to_string())?;
    let lex = Lexicon::load(Some(&files.lemmas), Some(&files.stopwords), Some(&files.mwes)).map_err(|e| e.to_string())?;
    let docs = drop_empty(standardize_all(&fragment_interviews(&synth.interviews), &lex));
    let vocab = build_vocabulary(&docs, 1).map_err(|e| e.to_string())?;
    let x = tfidf_matrix(&docs, &vocab);
    let k = 12;
    let model = fit_nmf(&x, k, &NmfOptions::default()).map_err(|e| e.to_string())?;
    ensure(model.w.dim() == (656, k), || format!("fragment matrix {:?}", model.w.dim()))?;
    let profiles = patient_mixtures(model.w.view(), x.row_index()).map_err(|e| e.to_string())?;
    ensure(profiles.len() == 94 && profiles.iter().all(|p| p.mixture.len() == k), || {
        format!("patient matrix {}x{}", profiles.len(), profiles[0].mixture.len())
    })?;

    // Oracle: accumulate rows per patient and divide by the fragment count.
    let mut sums: HashMap<&str, (Array1<f64>, usize)> = HashMap::new();
    for (r, (pid, _)) in x.row_index().iter().enumerate() {
        let e = sums.entry(pid.as_str()).or_insert_with(|| (Array1::zeros(k), 0));
        e.0 += &model.w.row(r);
        e.1 += 1;
    }
    let mut worst_mean = 0.0f64;
    let mut worst_sum = 0.0f64;
    for p in &profiles {
        let (s, c) = &sums[p.patient_id.as_str()];
        for (t, v) in p.mixture.iter().enumerate() {
            worst_mean = worst_mean.max((v - s[t] / *c as f64).abs());
        }
        worst_sum = worst_sum.max((p.importance.iter().sum::<f64>() - 100.0).abs());
    }
    ensure(worst_mean <= 1e-12, || format!("mean deviation {worst_mean:.3e}"))?;
    ensure(worst_sum <= 1e-6, || format!("importance sum deviation {worst_sum:.3e}"))?;
    Ok(format!("656x{k} -> 94x{k}, mean dev {worst_mean:.1e}, sum dev {worst_sum:.1e}"))
}

fn purity(assignments: &[usize], truth: &[usize], c: usize) -> f64 {
    let mut table = vec![vec![0usize; c]; c];
    for (&a, &t) in assignments.iter().zip(truth) {
        table[a][t] += 1;
    }
    table.iter().map(|row| *row.iter().max().unwrap_or(&0)).sum::<usize>() as f64 / assignments.len() as f64
}

fn clustering_recovery() -> Outcome {
    let (c, dim, per_blob) = (7, 12, 14);
    let mut purities = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let noise = Normal::new(0.0, 0.03).expect("valid normal");
        let mut profiles = Vec::new();
        let mut truth = Vec::new();
        for blob in 0..c {
            // Each blob concentrates on two topics of its own.
            let mut centre = vec![0.02f64; dim];
            centre[blob] = 0.6;
            centre[(blob + 7) % dim] += 0.3;
            for i in 0..per_blob {
                let mix: Vec<f64> = centre.iter().map(|v| (v + noise.sample(&mut rng)).max(1e-3_f64)).collect();
                profiles.push(PatientProfile::from_mixture(format!("B{blob}-{i:02}"), mix).map_err(|e| e.to_string())?);
                truth.push(blob);
            }
        }
        let cl = patient_clustering(&profiles, c, seed, ProfileSpace::Importance).map_err(|e| e.to_string())?;
        purities.push(purity(&cl.assignments, &truth, c));
    }
    let min = purities.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(min >= 0.9, || format!("purities {purities:?}"))?;
    Ok(format!("min purity over 10 seeds {min:.3}"))
}

fn read_manifest(out: &Path) -> Result<(String, serde_json::Value), String> {
    let text = std::fs::read_to_string(out.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let json = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok((text, json))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = full_size_files(&tmp.path().join("data"));
    let mut manifests: Vec<(Manifest, String)> = Vec::new();
    let mut times = Vec::new();
    for run in ["a", "b"] {
        let cfg = config_for(&files, &tmp.path().join(run));
        let start = Instant::now();
        let manifest = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        times.push(start.elapsed().as_secs_f64());
        let (text, _) = read_manifest(&cfg.out)?;
        manifests.push((manifest, text));
    }
    ensure(manifests[0].1 == manifests[1].1, || "manifest files differ".into())?;
    for (a, b) in manifests[0].0.artifacts.iter().zip(&manifests[1].0.artifacts) {
        let fa = std::fs::read(tmp.path().join("a").join(&a.file)).map_err(|e| e.to_string())?;
        let fb = std::fs::read(tmp.path().join("b").join(&b.file)).map_err(|e| e.to_string())?;
        ensure(fa == fb, || format!("{} differs", a.file))?;
    }
    let slowest = times.iter().copied().fold(0.0, f64::max);
    ensure(slowest < 60.0, || format!("run took {slowest:.1} s"))?;
    Ok(format!("{} artifacts bit-identical, slowest run {slowest:.2} s", manifests[0].0.artifacts.len()))
}

fn protocol_defaults() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = full_size_files(&tmp.path().join("data"));
    let cfg = config_for(&files, &tmp.path().join("out"));
    ensure(cfg.scheme == Scheme::CluWords, || "default scheme changed".into())?;
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (_, json) = read_manifest(&cfg.out)?;
    let p = &json["protocol"];
    let got = [&p["k"], &p["top_words"], &p["clusters_fragments"], &p["clusters_patients"]].map(|v| v.as_u64());
    ensure(got == [Some(12), Some(10), Some(12), Some(7)], || format!("protocol {p}"))?;
    let n = json["artifacts"].as_array().map_or(0, Vec::len);
    ensure(n == 10, || format!("{n} artifacts listed"))?;
    ensure(json["status"] == "complete", || format!("status {}", json["status"]))?;
    Ok(format!("k=12 T=10 c_fragments=12 c_patients=7, {n} artifacts"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("nmf monotonicity", nmf_monotonicity),
        ("nmf recovery", nmf_recovery),
        ("cluwords identity", cluwords_identity),
        ("silhouette oracle", silhouette_oracle),
        ("modularity fixtures", modularity_fixtures),
        ("patient aggregation", patient_aggregation),
        ("clustering recovery", clustering_recovery),
        ("determinism", determinism),
        ("protocol defaults", protocol_defaults),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name:<22} {reason}");
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
