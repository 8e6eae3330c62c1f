use std::path::Path;
use std::process::{Command, Output};

fn shorttopic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shorttopic"))
        .args(args)
        .env_remove("SHORTTOPIC_CONFIG")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, patients: &str) {
    let out = shorttopic(&["synth", "--dir", dir.to_str().unwrap(), "--patients", patients]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_from_config_file_with_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("data"), "30");
    let config = tmp.path().join("run.conf");
    std::fs::write(
        &config,
        "# demo\ncorpus = data/corpus.tsv\nlemmas = data/lemmas.tsv\nstopwords = data/stopwords.txt\n\
         mwe = data/mwe.txt\nembeddings = data/embeddings.vec\nout = out\nk = 6\n",
    )
    .unwrap();
    // Flags override the file.
    let out = Command::new(env!("CARGO_BIN_EXE_shorttopic"))
        .args(["run", "--top-words", "5"])
        .env("SHORTTOPIC_CONFIG", &config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: String = std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"k\": 6"));
    assert!(manifest.contains("\"top_words\": 5"));
    assert!(manifest.contains("\"status\": \"complete\""));
}

#[test]
fn evaluate_hand_written_table_without_a_model() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("topics.tsv");
    std::fs::write(&table, "topic_id\trank\tterm\n0\t1\ta\n0\t2\tb\n0\t3\tc\n1\t1\tc\n1\t2\td\n1\t3\te\n").unwrap();
    let out_dir = tmp.path().join("eval");
    let out = shorttopic(&["evaluate", "--topics", s(&table), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("modularity.tsv")).unwrap();
    let mean_line = text.lines().find(|l| l.starts_with("# mean")).unwrap();
    let mean: f64 = mean_line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((mean - 2.0 / 3.0).abs() < 1e-15);
    assert!(!out_dir.join("model.tsv").exists());
}

#[test]
fn fit_then_profiles_propagates_k() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "12");
    let out_dir = tmp.path().join("out");
    let common = [
        "--corpus",
        &format!("{}/corpus.tsv", s(&data)),
        "--stopwords",
        &format!("{}/stopwords.txt", s(&data)),
        "--scheme",
        "tfidf",
        "--k",
        "4",
        "--clusters-patients",
        "3",
        "--out",
        s(&out_dir),
    ]
    .map(|a| a.to_string());
    for cmd in ["stats", "fit", "profiles", "cluster", "project"] {
        let mut args = vec![cmd.to_string()];
        args.extend(common.iter().cloned());
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = shorttopic(&args);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let profiles = std::fs::read_to_string(out_dir.join("profiles.tsv")).unwrap();
    let header: Vec<&str> = profiles.lines().next().unwrap().split('\t').collect();
    assert_eq!(header.iter().filter(|h| h.starts_with("importance_")).count(), 4);
    assert_eq!(header.iter().filter(|h| h.starts_with("mixture_")).count(), 4);
    let stats = std::fs::read_to_string(out_dir.join("stats.tsv")).unwrap();
    assert!(stats.starts_with("number of patients\t12\n"));
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.tsv");
    let out = shorttopic(&["stats", "--corpus", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));

    let out = shorttopic(&["fit", "--k", "many"]);
    assert_eq!(out.status.code(), Some(1));

    let out = shorttopic(&["profiles", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.tsv"));

    let out = shorttopic(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_with_two() {
    // A patient whose fragments all project to zero has no topic mixture.
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("model.tsv"),
        "# k\t2\n# scheme\ttfidf\n# seed\t0\n# n_iter\t1\n# final_loss\t0\n[W]\n\
         patient_id\tquestion_id\ttopic_0\ttopic_1\nP1\t1\t1\t0\nP2\t1\t0\t0\n\
         [H]\ntopic_id\ta\tb\n0\t1\t0\n1\t0\t1\n",
    )
    .unwrap();
    let out = shorttopic(&["profiles", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
