//! Plain-text artifact formats (TSV) for every pipeline stage.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the one written.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::analysis::{ImportanceStats, PatientProfile, Projection};
use crate::corpus::{CorpusStats, Vocabulary};
use crate::factorization::{Topic, TopicModel, TopicSummary};
use crate::metrics::{Clustering, ModularityReport};
use crate::representations::{DocTermMatrix, Scheme};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, ArtifactError>;

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest round-trip rendering of a float that switches to exponent
/// notation for very small or very large magnitudes, so near-zero factor
/// entries do not expand into hundreds of digits.
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> ArtifactError {
    ArtifactError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {s:?}")))
}

/// Corpus summary (patients, documents, vocabulary, tokens, mean length) followed by the document length histogram.
pub fn format_stats(stats: &CorpusStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "number of patients\t{}", stats.n_patients);
    let _ = writeln!(s, "number of documents\t{}", stats.n_documents);
    let _ = writeln!(s, "vocabulary size\t{}", stats.vocab_size);
    let _ = writeln!(s, "total number of tokens\t{}", stats.total_tokens);
    let _ = writeln!(s, "mean number of tokens per document\t{:.1}", stats.mean_tokens_per_doc);
    let _ = writeln!(s, "\ndocument_length\tdocuments");
    for (len, count) in &stats.length_histogram {
        let _ = writeln!(s, "{len}\t{count}");
    }
    s
}

pub fn format_matrix(m: &DocTermMatrix, vocab: &Vocabulary) -> String {
    let mut s = format!("# scheme\t{}\n# shape\t{}\t{}\ndoc_index\tterm\tweight\n", m.scheme, m.n_docs(), m.n_terms());
    for (d, t, w) in m.triples() {
        let _ = writeln!(s, "{d}\t{}\t{}", vocab.term(t), Num(w));
    }
    s
}

/// A fitted model together with the labels needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: TopicModel,
    pub row_index: Vec<(String, u8)>,
    pub terms: Vec<String>,
}

pub fn format_model(model: &TopicModel, row_index: &[(String, u8)], terms: &[String]) -> String {
    let mut s = String::new();
    let scheme = model.scheme.map_or_else(|| "dense".to_string(), |sc| sc.to_string());
    let _ = writeln!(s, "# k\t{}", model.k);
    let _ = writeln!(s, "# scheme\t{scheme}");
    let _ = writeln!(s, "# seed\t{}", model.seed);
    let _ = writeln!(s, "# n_iter\t{}", model.n_iter);
    let _ = writeln!(s, "# final_loss\t{}", Num(model.final_loss()));
    s.push_str("[W]\npatient_id\tquestion_id");
    for t in 0..model.k {
        let _ = write!(s, "\ttopic_{t}");
    }
    s.push('\n');
    for (r, (pid, q)) in row_index.iter().enumerate() {
        let _ = write!(s, "{pid}\t{q}");
        for v in model.w.row(r) {
            let _ = write!(s, "\t{}", Num(*v));
        }
        s.push('\n');
    }
    s.push_str("[H]\ntopic_id");
    for term in terms {
        let _ = write!(s, "\t{term}");
    }
    s.push('\n');
    for (t, row) in model.h.rows().into_iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, "\t{}", Num(*v));
        }
        s.push('\n');
    }
    s
}

pub fn read_model(path: &Path) -> Result<ModelArtifact> {
    let text = read_text(path)?;
    let mut header = std::collections::HashMap::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((_, line)) = lines.peek() {
        let Some(rest) = line.strip_prefix("# ") else { break };
        if let Some((k, v)) = rest.split_once('\t') {
            header.insert(k.to_string(), v.to_string());
        }
        lines.next();
    }
    let get = |key: &str| {
        header
            .get(key)
            .cloned()
            .ok_or_else(|| parse_err(path, 1, format!("missing header field {key}")))
    };
    let k: usize = get("k")?.parse().map_err(|_| parse_err(path, 1, "bad k"))?;
    let seed: u64 = get("seed")?.parse().map_err(|_| parse_err(path, 1, "bad seed"))?;
    let n_iter: usize = get("n_iter")?.parse().map_err(|_| parse_err(path, 1, "bad n_iter"))?;
    let final_loss: f64 = get("final_loss")?.parse().map_err(|_| parse_err(path, 1, "bad final_loss"))?;
    let scheme = get("scheme")?.parse::<Scheme>().ok();

    let expect = |lines: &mut dyn Iterator<Item = (usize, &str)>, want: &str| -> Result<()> {
        match lines.next() {
            Some((_, l)) if l == want => Ok(()),
            Some((i, l)) => Err(parse_err(path, i + 1, format!("expected {want:?}, found {l:?}"))),
            None => Err(parse_err(path, 0, format!("missing {want:?} block"))),
        }
    };
    expect(&mut lines, "[W]")?;
    lines.next(); // column header

    let mut row_index = Vec::new();
    let mut w_vals = Vec::new();
    let mut terms = Vec::new();
    for (i, line) in lines.by_ref() {
        if line == "[H]" {
            break;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != k + 2 {
            return Err(parse_err(path, i + 1, format!("expected {} fields", k + 2)));
        }
        let q: u8 = fields[1].parse().map_err(|_| parse_err(path, i + 1, "bad question_id"))?;
        row_index.push((fields[0].to_string(), q));
        for f in &fields[2..] {
            w_vals.push(parse_f64(path, i + 1, f)?);
        }
    }
    if let Some((_, head)) = lines.next() {
        terms = head.split('\t').skip(1).map(str::to_string).collect();
    }
    let mut h_vals = Vec::new();
    let mut h_rows = 0;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != terms.len() + 1 {
            return Err(parse_err(path, i + 1, format!("expected {} fields", terms.len() + 1)));
        }
        for f in &fields[1..] {
            h_vals.push(parse_f64(path, i + 1, f)?);
        }
        h_rows += 1;
    }
    if h_rows != k {
        return Err(parse_err(path, 0, format!("H block has {h_rows} rows, expected {k}")));
    }
    let w = Array2::from_shape_vec((row_index.len(), k), w_vals).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let h = Array2::from_shape_vec((k, terms.len()), h_vals).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(ModelArtifact {
        model: TopicModel {
            k,
            w,
            h,
            loss_trace: vec![final_loss],
            seed,
            n_iter,
            scheme,
        },
        row_index,
        terms,
    })
}

pub const SUMMARY_HEADER: &str = "topic_id\trank\tterm\tweight";

pub fn format_summary(summary: &TopicSummary) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for (t, topic) in summary.topics.iter().enumerate() {
        for (r, (term, w)) in topic.words.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{}\t{term}\t{}", r + 1, Num(*w));
        }
    }
    s
}

/// Reads a topic table in either layout:
///
/// * long: the `topic_id rank term weight` layout written by [`format_summary`]
///   (the weight column may be omitted);
/// * wide: one column per topic, one row per rank, as topic tables are usually
///   printed. An optional first line starting with `#` holds column labels.
///
/// Wide tables get reverse-rank weights.
pub fn read_topic_table(path: &Path) -> Result<TopicSummary> {
    let text = read_text(path)?;
    parse_topic_table(&text).map_err(|(line, reason)| parse_err(path, line, reason))
}

pub fn parse_topic_table(text: &str) -> std::result::Result<TopicSummary, (usize, String)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let first = lines.peek().map(|(_, l)| *l).unwrap_or_default();
    if first.starts_with("topic_id\trank\tterm") {
        lines.next();
        let mut topics: Vec<Topic> = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 3 {
                return Err((i + 1, "expected topic_id, rank, term[, weight]".into()));
            }
            let t: usize = f[0].parse().map_err(|_| (i + 1, "bad topic_id".to_string()))?;
            let rank: usize = f[1].parse().map_err(|_| (i + 1, "bad rank".to_string()))?;
            let weight = match f.get(3) {
                Some(w) => w.parse().map_err(|_| (i + 1, "bad weight".to_string()))?,
                None => -(rank as f64),
            };
            while topics.len() <= t {
                topics.push(Topic { label: None, words: Vec::new() });
            }
            topics[t].words.push((f[2].trim().to_string(), weight));
        }
        return Ok(TopicSummary { topics });
    }

    let mut labels: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, line) in lines {
        if let Some(rest) = line.strip_prefix('#') {
            if rows.is_empty() && labels.is_none() {
                labels = Some(rest.split('\t').map(|s| s.trim().to_string()).collect());
            }
            continue;
        }
        let row: Vec<String> = line.split('\t').map(|s| s.trim().to_string()).collect();
        if let Some(prev) = rows.first() {
            if prev.len() != row.len() {
                return Err((i + 1, format!("expected {} columns, found {}", prev.len(), row.len())));
            }
        }
        rows.push(row);
    }
    let n_topics = rows.first().map_or(0, Vec::len);
    let depth = rows.len();
    let topics = (0..n_topics)
        .map(|c| Topic {
            label: labels.as_ref().and_then(|l| l.get(c).cloned()),
            words: rows
                .iter()
                .enumerate()
                .filter(|(_, r)| !r[c].is_empty())
                .map(|(r, row)| (row[c].clone(), (depth - r) as f64))
                .collect(),
        })
        .collect();
    Ok(TopicSummary { topics })
}

pub fn format_modularity(report: &ModularityReport) -> String {
    let mut s = format!("# depth\t{}\n# mean\t{}\ntopic_id\tunique_fraction\n", report.depth, Num(report.mean));
    for (t, v) in report.per_topic.iter().enumerate() {
        let _ = writeln!(s, "{t}\t{}", Num(*v));
    }
    s
}

pub fn format_pmi(pmi: &[f64]) -> String {
    let mut s = String::from("topic_id\tpmi\n");
    for (t, v) in pmi.iter().enumerate() {
        let _ = writeln!(s, "{t}\t{}", Num(*v));
    }
    s
}

/// Fragment silhouettes for one or more labelled topic spaces.
pub fn format_silhouettes(spaces: &[(&str, &Clustering)], row_index: &[(String, u8)]) -> String {
    let mut s = String::new();
    for (name, cl) in spaces {
        let _ = writeln!(s, "# {name}\tc={}\tinertia={}\tmean_silhouette={}", cl.c, Num(cl.inertia), Num(crate::metrics::mean_silhouette(cl)));
    }
    s.push_str("space\tsample_id\tpatient_id\tquestion_id\tcluster_id\tscore\n");
    for (name, cl) in spaces {
        for (i, (&c, &score)) in cl.assignments.iter().zip(&cl.silhouettes).enumerate() {
            let (pid, q) = &row_index[i];
            let _ = writeln!(s, "{name}\t{i}\t{pid}\t{q}\t{c}\t{}", Num(score));
        }
    }
    s
}

pub fn format_profiles(profiles: &[PatientProfile]) -> String {
    let k = profiles.first().map_or(0, |p| p.importance.len());
    let mut s = String::from("patient_id");
    for t in 0..k {
        let _ = write!(s, "\timportance_{t}");
    }
    for t in 0..k {
        let _ = write!(s, "\tmixture_{t}");
    }
    s.push('\n');
    for p in profiles {
        s.push_str(&p.patient_id);
        for v in p.importance.iter().chain(&p.mixture) {
            let _ = write!(s, "\t{}", Num(*v));
        }
        s.push('\n');
    }
    s
}

pub fn read_profiles(path: &Path) -> Result<Vec<PatientProfile>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let cols = header.split('\t').count();
    if cols < 3 || (cols - 1) % 2 != 0 {
        return Err(parse_err(path, 1, "expected patient_id plus importance and mixture columns"));
    }
    let k = (cols - 1) / 2;
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols {
            return Err(parse_err(path, i + 1, format!("expected {cols} fields")));
        }
        let vals = f[1..]
            .iter()
            .map(|v| parse_f64(path, i + 1, v))
            .collect::<Result<Vec<f64>>>()?;
        out.push(PatientProfile {
            patient_id: f[0].to_string(),
            importance: vals[..k].to_vec(),
            mixture: vals[k..].to_vec(),
        });
    }
    Ok(out)
}

pub fn format_importance(stats: &ImportanceStats) -> String {
    let mut s = String::from("topic_id\tq1\tmedian\tq3\tmean\tmax\tmax_above_50\n");
    for (t, ti) in stats.per_topic.iter().enumerate() {
        let _ = writeln!(
            s,
            "{t}\t{}\t{}\t{}\t{}\t{}\t{}",
            Num(ti.q1),
            Num(ti.median),
            Num(ti.q3),
            Num(ti.mean),
            Num(ti.max),
            ti.max > 50.0
        );
    }
    s
}

pub fn format_patient_clusters(profiles: &[PatientProfile], cl: &Clustering) -> String {
    let mut s = format!(
        "# c\t{}\n# inertia\t{}\n# mean_silhouette\t{}\npatient_id\tcluster_id\tsilhouette\n",
        cl.c,
        Num(cl.inertia),
        Num(crate::metrics::mean_silhouette(cl))
    );
    for (p, (c, sil)) in profiles.iter().zip(cl.assignments.iter().zip(&cl.silhouettes)) {
        let _ = writeln!(s, "{}\t{c}\t{}", p.patient_id, Num(*sil));
    }
    s
}

/// Reads `patient_id -> cluster_id` from a patient clustering artifact.
pub fn read_patient_clusters(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("patient_id\t") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 2 {
            return Err(parse_err(path, i + 1, "expected patient_id, cluster_id"));
        }
        let c = f[1].parse().map_err(|_| parse_err(path, i + 1, "bad cluster_id"))?;
        out.push((f[0].to_string(), c));
    }
    Ok(out)
}

pub fn format_projection(profiles: &[PatientProfile], proj: &Projection, clusters: Option<&[usize]>) -> String {
    let mut s = format!("# rank_deficient\t{}\npatient_id\tx\ty\tcluster_id\n", proj.rank_deficient);
    for (i, p) in profiles.iter().enumerate() {
        let c = clusters.map_or_else(|| "NA".to_string(), |cs| cs[i].to_string());
        let _ = writeln!(s, "{}\t{}\t{}\t{c}", p.patient_id, Num(proj.coords[[i, 0]]), Num(proj.coords[[i, 1]]));
    }
    s
}

pub fn format_similarity(profiles: &[PatientProfile], m: &Array2<f64>) -> String {
    let mut s = String::from("patient_id");
    for p in profiles {
        let _ = write!(s, "\t{}", p.patient_id);
    }
    s.push('\n');
    for (p, row) in profiles.iter().zip(m.rows()) {
        s.push_str(&p.patient_id);
        for v in row {
            let _ = write!(s, "\t{}", Num(*v));
        }
        s.push('\n');
    }
    s
}
