//! Document-term matrices: bag-of-words, TFIDF and embedding-enhanced
//! CluWords.
//!
//! A CluWord is a meta-word anchored on a vocabulary term `t` that stands for
//! every term whose embedding has cosine similarity `>= alpha` with `t`. Its
//! term frequency in a document is the similarity-weighted count of its
//! members, and its idf is computed over meta-word activations.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::corpus::{Document, Vocabulary};

pub const DEFAULT_ALPHA: f64 = 0.4;

#[derive(Debug, Error)]
pub enum RepresentationError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding header malformed: {0}")]
    MalformedHeader(String),
    #[error("embedding line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("no vocabulary term has an embedding vector")]
    ZeroCoverage,
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("cluster map covers {clusters} terms but vocabulary has {vocab}")]
    DimensionMismatch { clusters: usize, vocab: usize },
    #[error("unknown weighting scheme {0:?} (expected bow, tfidf or cluwords)")]
    UnknownScheme(String),
}

pub type Result<T> = std::result::Result<T, RepresentationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Bow,
    Tfidf,
    CluWords,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bow => "bow",
            Scheme::Tfidf => "tfidf",
            Scheme::CluWords => "cluwords",
        })
    }
}

impl FromStr for Scheme {
    type Err = RepresentationError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(Scheme::Bow),
            "tfidf" => Ok(Scheme::Tfidf),
            "cluwords" => Ok(Scheme::CluWords),
            _ => Err(RepresentationError::UnknownScheme(s.to_string())),
        }
    }
}

/// Sparse documents x terms matrix. Rows store `(term, weight)` pairs sorted
/// by term index, without explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    pub scheme: Scheme,
    n_terms: usize,
    rows: Vec<Vec<(usize, f64)>>,
    row_index: Vec<(String, u8)>,
}

impl DocTermMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn row(&self, d: usize) -> &[(usize, f64)] {
        &self.rows[d]
    }

    /// `(patient_id, question_id)` for each row.
    pub fn row_index(&self) -> &[(String, u8)] {
        &self.row_index
    }

    pub fn get(&self, d: usize, t: usize) -> f64 {
        self.rows[d]
            .binary_search_by_key(&t, |&(j, _)| j)
            .map(|pos| self.rows[d][pos].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Iterates `(doc, term, weight)` triples in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(d, row)| row.iter().map(move |&(t, w)| (d, t, w)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.n_docs(), self.n_terms));
        for (d, t, w) in self.triples() {
            x[[d, t]] = w;
        }
        x
    }

    /// Builds a matrix from dense rows, dropping zeros.
    pub fn from_dense(scheme: Scheme, dense: &Array2<f64>, row_index: Vec<(String, u8)>) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(t, &w)| (t, w))
                    .collect()
            })
            .collect();
        DocTermMatrix {
            scheme,
            n_terms: dense.ncols(),
            rows,
            row_index,
        }
    }
}

fn row_index(docs: &[Document]) -> Vec<(String, u8)> {
    docs.iter()
        .map(|d| (d.patient_id.clone(), d.question_id))
        .collect()
}

/// Raw in-vocabulary counts per document, sorted by term index.
fn counts(doc: &Document, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let mut c: HashMap<usize, f64> = HashMap::new();
    for t in doc.tokens.iter().filter_map(|t| vocab.index_of(t)) {
        *c.entry(t).or_default() += 1.0;
    }
    let mut row: Vec<_> = c.into_iter().collect();
    row.sort_unstable_by_key(|&(t, _)| t);
    row
}

/// Smoothed inverse document frequency: `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn bow_matrix(docs: &[Document], vocab: &Vocabulary) -> DocTermMatrix {
    DocTermMatrix {
        scheme: Scheme::Bow,
        n_terms: vocab.len(),
        rows: docs.iter().map(|d| counts(d, vocab)).collect(),
        row_index: row_index(docs),
    }
}

/// Applies smoothed idf to raw term-frequency rows, with df counted over
/// the rows themselves.
fn apply_idf(rows: &mut [Vec<(usize, f64)>], n_terms: usize) {
    let mut df = vec![0usize; n_terms];
    for row in rows.iter() {
        for &(t, w) in row {
            if w > 0.0 {
                df[t] += 1;
            }
        }
    }
    let n = rows.len();
    let idf: Vec<f64> = df.iter().map(|&f| smoothed_idf(n, f)).collect();
    for row in rows.iter_mut() {
        for (t, w) in row.iter_mut() {
            *w *= idf[*t];
        }
    }
}

pub fn tfidf_matrix(docs: &[Document], vocab: &Vocabulary) -> DocTermMatrix {
    let mut m = bow_matrix(docs, vocab);
    apply_idf(&mut m.rows, m.n_terms);
    m.scheme = Scheme::Tfidf;
    m
}

/// Static word vectors aligned with a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// `vectors[i]` is the vector of vocabulary term `i`, if any.
    vectors: Vec<Option<Vec<f64>>>,
}

impl EmbeddingTable {
    /// Builds a table from `term -> vector` pairs; terms outside `vocab` are
    /// ignored.
    pub fn from_map(dim: usize, vocab: &Vocabulary, map: &HashMap<String, Vec<f64>>) -> Self {
        let vectors = vocab
            .terms()
            .iter()
            .map(|t| map.get(t).filter(|v| v.len() == dim).cloned())
            .collect();
        EmbeddingTable { dim, vectors }
    }

    pub fn vector(&self, term: usize) -> Option<&[f64]> {
        self.vectors.get(term).and_then(|v| v.as_deref())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn covered(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.vectors.is_empty() {
            0.0
        } else {
            self.covered() as f64 / self.vectors.len() as f64
        }
    }
}

/// Loads word2vec text-format vectors for the terms of `vocab`.
///
/// A multi-word term absent from the file gets the mean of its member words'
/// vectors, provided every member has one. An underscore-joined spelling
/// (`artrite_reumatóide`) is also accepted for a multi-word term.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|source| RepresentationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_embeddings(BufReader::new(file), vocab)
}

pub fn read_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut wanted: HashSet<String> = HashSet::new();
    for t in vocab.terms() {
        wanted.insert(t.clone());
        if t.contains(' ') {
            wanted.insert(t.replace(' ', "_"));
            wanted.extend(t.split(' ').map(str::to_string));
        }
    }

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| RepresentationError::MalformedHeader(e.to_string()))?,
        None => return Err(RepresentationError::MalformedHeader("empty file".into())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dim = match fields.as_slice() {
        [_, dim] => dim
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| RepresentationError::MalformedHeader(header.clone()))?,
        _ => return Err(RepresentationError::MalformedHeader(header.clone())),
    };
    fields[0]
        .parse::<usize>()
        .map_err(|_| RepresentationError::MalformedHeader(header.clone()))?;

    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| RepresentationError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(RepresentationError::MalformedLine {
                line: line_no,
                reason: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if !wanted.contains(token) {
            continue;
        }
        let v = values
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| RepresentationError::MalformedLine {
                line: line_no,
                reason: "non-numeric or non-finite value".into(),
            })?;
        found.entry(token.to_string()).or_insert(v);
    }

    let vectors: Vec<Option<Vec<f64>>> = vocab
        .terms()
        .iter()
        .map(|t| {
            if let Some(v) = found.get(t) {
                return Some(v.clone());
            }
            if !t.contains(' ') {
                return None;
            }
            if let Some(v) = found.get(&t.replace(' ', "_")) {
                return Some(v.clone());
            }
            let members: Option<Vec<&Vec<f64>>> = t.split(' ').map(|w| found.get(w)).collect();
            members.map(|ms| mean_vector(&ms, dim))
        })
        .collect();
    let table = EmbeddingTable { dim, vectors };
    if table.covered() == 0 {
        return Err(RepresentationError::ZeroCoverage);
    }
    Ok(table)
}

fn mean_vector(vs: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        // sqrt(x * x) == x in IEEE arithmetic, so cos(u, u) is exactly 1.
        Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Per-term similarity clusters over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub alpha: f64,
    /// `clusters[t]` lists `(member, similarity)` sorted by member index.
    clusters: Vec<Vec<(usize, f64)>>,
}

impl ClusterMap {
    pub fn cluster(&self, term: usize) -> &[(usize, f64)] {
        &self.clusters[term]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

pub fn build_cluwords(emb: &EmbeddingTable, alpha: f64) -> Result<ClusterMap> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(RepresentationError::InvalidAlpha(alpha));
    }
    let n = emb.len();
    let clusters = (0..n)
        .map(|t| {
            let Some(et) = emb.vector(t) else {
                return vec![(t, 1.0)];
            };
            (0..n)
                .filter_map(|u| {
                    if u == t {
                        return Some((u, 1.0));
                    }
                    let sim = cosine(et, emb.vector(u)?)?;
                    (sim >= alpha).then_some((u, sim))
                })
                .collect()
        })
        .collect();
    Ok(ClusterMap { alpha, clusters })
}

/// CluWords-weighted matrix: `tf'(t,d) = sum_{u in cluster(t)} sim(t,u) * count(u,d)`
/// times the smoothed idf over documents where `tf' > 0`.
pub fn cluwords_matrix(
    docs: &[Document],
    vocab: &Vocabulary,
    clusters: &ClusterMap,
) -> Result<DocTermMatrix> {
    if clusters.len() != vocab.len() {
        return Err(RepresentationError::DimensionMismatch {
            clusters: clusters.len(),
            vocab: vocab.len(),
        });
    }
    // Invert: a document containing u activates every t whose cluster holds u.
    let mut reverse: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vocab.len()];
    for (t, members) in clusters.clusters.iter().enumerate() {
        for &(u, sim) in members {
            reverse[u].push((t, sim));
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = docs
        .iter()
        .map(|d| {
            let mut acc: HashMap<usize, f64> = HashMap::new();
            for (u, c) in counts(d, vocab) {
                for &(t, sim) in &reverse[u] {
                    *acc.entry(t).or_default() += sim * c;
                }
            }
            let mut row: Vec<_> = acc.into_iter().filter(|&(_, w)| w > 0.0).collect();
            row.sort_unstable_by_key(|&(t, _)| t);
            row
        })
        .collect();
    apply_idf(&mut rows, vocab.len());
    Ok(DocTermMatrix {
        scheme: Scheme::CluWords,
        n_terms: vocab.len(),
        rows,
        row_index: row_index(docs),
    })
}
