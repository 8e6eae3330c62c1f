//! Interview ingestion, fragmentation and text standardization.
//!
//! An interview is a fixed set of seven answers. Each non-empty answer becomes
//! an independent short document ("fragment"), which is then lowercased,
//! tokenized, MWE-joined, lemmatized and stopword-filtered.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

/// Number of questions in the interview script.
pub const N_QUESTIONS: usize = 7;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: question_id {question_id} out of range 1..=7")]
    QuestionOutOfRange { line: usize, question_id: i64 },
    #[error("line {line}: duplicate record for patient {patient_id:?}, question {question_id}")]
    Duplicate {
        line: usize,
        patient_id: String,
        question_id: u8,
    },
    #[error("empty corpus: no documents or no terms survive the min_df threshold")]
    EmptyCorpus,
    #[error("min_df must be at least 1")]
    InvalidMinDf,
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension; anything not `.jsonl`/`.json` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInterview {
    pub patient_id: String,
    /// `answers[q - 1]` holds the answer to question `q`.
    pub answers: [String; N_QUESTIONS],
}

impl RawInterview {
    pub fn new(patient_id: impl Into<String>) -> Self {
        RawInterview {
            patient_id: patient_id.into(),
            answers: Default::default(),
        }
    }
}

/// One answer fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub patient_id: String,
    /// 1-based question index.
    pub question_id: u8,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

#[derive(Deserialize)]
struct JsonRecord {
    patient_id: String,
    question_id: i64,
    text: String,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads interview records and groups them per patient.
///
/// Patients keep the order of their first appearance in the file. Blank lines
/// are skipped. Missing questions become empty answers.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawInterview>> {
    let content = read_to_string(path)?;
    parse_corpus(&content, format)
}

pub fn parse_corpus(content: &str, format: CorpusFormat) -> Result<Vec<RawInterview>> {
    let mut interviews: Vec<RawInterview> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(String, u8)> = HashSet::new();

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (patient_id, qid, text) = match format {
            CorpusFormat::Tsv => {
                let mut fields = line.splitn(3, '\t');
                let pid = fields.next().unwrap_or_default();
                let qid = fields.next().ok_or_else(|| CorpusError::Malformed {
                    line: line_no,
                    reason: "expected 3 tab-separated fields".into(),
                })?;
                let text = fields.next().ok_or_else(|| CorpusError::Malformed {
                    line: line_no,
                    reason: "expected 3 tab-separated fields".into(),
                })?;
                let qid: i64 = qid.trim().parse().map_err(|_| CorpusError::Malformed {
                    line: line_no,
                    reason: format!("question_id {qid:?} is not an integer"),
                })?;
                (pid.trim().to_string(), qid, text.to_string())
            }
            CorpusFormat::Jsonl => {
                let rec: JsonRecord =
                    serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                (rec.patient_id, rec.question_id, rec.text)
            }
        };
        if patient_id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                reason: "empty patient_id".into(),
            });
        }
        if !(1..=N_QUESTIONS as i64).contains(&qid) {
            return Err(CorpusError::QuestionOutOfRange {
                line: line_no,
                question_id: qid,
            });
        }
        let qid = qid as u8;
        if !seen.insert((patient_id.clone(), qid)) {
            return Err(CorpusError::Duplicate {
                line: line_no,
                patient_id,
                question_id: qid,
            });
        }
        let slot = *position.entry(patient_id.clone()).or_insert_with(|| {
            interviews.push(RawInterview::new(patient_id.clone()));
            interviews.len() - 1
        });
        interviews[slot].answers[qid as usize - 1] = text;
    }
    Ok(interviews)
}

/// Splits every interview into one document per non-empty answer slot.
pub fn fragment_interviews(interviews: &[RawInterview]) -> Vec<Document> {
    interviews
        .iter()
        .flat_map(|iv| {
            iv.answers
                .iter()
                .enumerate()
                .filter(|(_, text)| !text.trim().is_empty())
                .map(|(q, text)| Document {
                    patient_id: iv.patient_id.clone(),
                    question_id: q as u8 + 1,
                    raw_text: text.clone(),
                    tokens: Vec::new(),
                })
        })
        .collect()
}

/// Lemma table, stopword set and multi-word expression lexicon.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    lemmas: HashMap<String, String>,
    stopwords: HashSet<String>,
    /// MWEs keyed by first word; each entry is the token sequence.
    mwes: HashMap<String, Vec<Vec<String>>>,
    max_mwe_len: usize,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_lemma(mut self, surface: &str, lemma: &str) -> Self {
        self.add_lemma(surface, lemma);
        self
    }

    pub fn with_stopwords<'a>(mut self, words: impl IntoIterator<Item = &'a str>) -> Self {
        for w in words {
            self.add_stopword(w);
        }
        self
    }

    pub fn with_mwe(mut self, expr: &str) -> Self {
        self.add_mwe(expr);
        self
    }

    pub fn add_lemma(&mut self, surface: &str, lemma: &str) {
        let surface = surface.trim().to_lowercase();
        let lemma = lemma.trim().to_lowercase();
        if !surface.is_empty() && !lemma.is_empty() {
            self.lemmas.insert(surface, lemma);
        }
    }

    pub fn add_stopword(&mut self, word: &str) {
        let w = word.trim().to_lowercase();
        if !w.is_empty() {
            self.stopwords.insert(w);
        }
    }

    /// Registers a multi-word expression. Entries are tokenized with the same
    /// rules as documents, so `"De vez em quando"` matches `de vez em quando`.
    pub fn add_mwe(&mut self, expr: &str) {
        let words = tokenize(expr);
        if words.len() < 2 {
            return;
        }
        self.max_mwe_len = self.max_mwe_len.max(words.len());
        let bucket = self.mwes.entry(words[0].clone()).or_default();
        if !bucket.contains(&words) {
            bucket.push(words);
        }
    }

    pub fn lemma<'a>(&'a self, token: &'a str) -> &'a str {
        self.lemmas.get(token).map(String::as_str).unwrap_or(token)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Loads the lexicon files. Any of them may be absent.
    pub fn load(
        lemma_path: Option<&Path>,
        stopword_path: Option<&Path>,
        mwe_path: Option<&Path>,
    ) -> Result<Self> {
        let mut lex = Lexicon::new();
        if let Some(p) = lemma_path {
            for (i, line) in read_to_string(p)?.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut parts = line.split('\t');
                match (parts.next(), parts.next()) {
                    (Some(surface), Some(lemma)) => lex.add_lemma(surface, lemma),
                    _ => {
                        return Err(CorpusError::Malformed {
                            line: i + 1,
                            reason: format!("lemma map {}: expected surface<TAB>lemma", p.display()),
                        })
                    }
                }
            }
        }
        if let Some(p) = stopword_path {
            for line in read_to_string(p)?.lines() {
                if !line.starts_with('#') {
                    lex.add_stopword(line);
                }
            }
        }
        if let Some(p) = mwe_path {
            for line in read_to_string(p)?.lines() {
                if !line.starts_with('#') {
                    lex.add_mwe(line);
                }
            }
        }
        Ok(lex)
    }

    /// Longest-match MWE joining over a token stream.
    fn join_mwes(&self, words: Vec<String>) -> Vec<String> {
        if self.mwes.is_empty() {
            return words;
        }
        let mut out = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let best = self.mwes.get(&words[i]).and_then(|cands| {
                cands
                    .iter()
                    .filter(|c| words[i..].starts_with(c))
                    .max_by_key(|c| c.len())
            });
            match best {
                Some(expr) => {
                    out.push(expr.join(" "));
                    i += expr.len();
                }
                None => {
                    out.push(words[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

/// Lowercased unicode words with pure-digit tokens dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .unicode_words()
        .filter(|w| !w.chars().all(|c| c.is_numeric()))
        .map(str::to_string)
        .collect()
}

/// Standardizes the raw text of `doc` into its token list.
///
/// Tokens are derived from `raw_text` only, so repeated application is a no-op.
pub fn standardize(doc: &Document, lex: &Lexicon) -> Document {
    let words = lex.join_mwes(tokenize(&doc.raw_text));
    let tokens = words
        .iter()
        .map(|w| lex.lemma(w))
        .filter(|w| !lex.is_stopword(w))
        .map(str::to_string)
        .collect();
    Document {
        tokens,
        ..doc.clone()
    }
}

pub fn standardize_all(docs: &[Document], lex: &Lexicon) -> Vec<Document> {
    docs.iter().map(|d| standardize(d, lex)).collect()
}

/// Removes documents left without tokens after standardization.
pub fn drop_empty(docs: Vec<Document>) -> Vec<Document> {
    docs.into_iter().filter(|d| !d.tokens.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index_of: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index_of.get(term).copied()
    }

    pub fn term(&self, idx: usize) -> &str {
        &self.terms[idx]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Builds a vocabulary from an explicit term list (sorted, deduplicated),
    /// with unknown document frequencies set to zero.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        terms.sort();
        terms.dedup();
        let index_of = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let doc_freq = vec![0; terms.len()];
        Vocabulary {
            terms,
            index_of,
            doc_freq,
        }
    }
}

/// Counts document frequencies and keeps terms with `df >= min_df`, sorted
/// lexicographically.
pub fn build_vocabulary(docs: &[Document], min_df: usize) -> Result<Vocabulary> {
    if min_df == 0 {
        return Err(CorpusError::InvalidMinDf);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let (terms, doc_freq): (Vec<String>, Vec<usize>) = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df)
        .map(|(t, n)| (t.to_string(), n))
        .unzip();
    if terms.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let index_of = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary {
        terms,
        index_of,
        doc_freq,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_patients: usize,
    pub n_documents: usize,
    pub vocab_size: usize,
    pub total_tokens: usize,
    pub mean_tokens_per_doc: f64,
    /// token count -> number of documents of that length
    pub length_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(docs: &[Document], vocab: &Vocabulary) -> CorpusStats {
    let patients: HashSet<&str> = docs.iter().map(|d| d.patient_id.as_str()).collect();
    let mut hist = BTreeMap::new();
    let mut total = 0;
    for d in docs {
        total += d.tokens.len();
        *hist.entry(d.tokens.len()).or_default() += 1;
    }
    let mean = if docs.is_empty() {
        0.0
    } else {
        total as f64 / docs.len() as f64
    };
    CorpusStats {
        n_patients: patients.len(),
        n_documents: docs.len(),
        vocab_size: vocab.len(),
        total_tokens: total,
        mean_tokens_per_doc: mean,
        length_histogram: hist,
    }
}
