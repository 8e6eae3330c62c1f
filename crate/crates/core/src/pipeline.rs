//! Config-driven orchestration of the full pipeline and of its individually
//! re-runnable segments.
//!
//! Every artifact is written as text and hashed into `manifest.json`, so two
//! runs with the same configuration can be compared byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    patient_clustering, patient_mixtures, patient_similarity, project_2d, topic_importance, AnalysisError,
    PatientProfile, ProfileSpace, SimilarityMetric, DEFAULT_PATIENT_CLUSTERS,
};
use crate::corpus::{
    build_vocabulary, corpus_stats, drop_empty, fragment_interviews, load_corpus, standardize_all, CorpusError,
    CorpusFormat, CorpusStats, Document, Lexicon, Vocabulary,
};
use crate::factorization::{fit_nmf, top_words, FactorizationError, Init, NmfOptions, TopicModel};
use crate::io::{self, ArtifactError};
use crate::metrics::{kmeans, mean_silhouette, pmi_coherence, topic_modularity, Clustering, KMeansOptions, MetricsError, PMI_EPSILON};
use crate::representations::{
    bow_matrix, build_cluwords, cluwords_matrix, load_embeddings, tfidf_matrix, DocTermMatrix, RepresentationError,
    Scheme, DEFAULT_ALPHA,
};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SHORTTOPIC_CONFIG";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const STATS_FILE: &str = "stats.tsv";
pub const MATRIX_FILE: &str = "matrix.tsv";
pub const MODEL_FILE: &str = "model.tsv";
pub const TOPICS_FILE: &str = "topics.tsv";
pub const MODULARITY_FILE: &str = "modularity.tsv";
pub const PMI_FILE: &str = "pmi.tsv";
pub const FRAGMENT_CLUSTERS_FILE: &str = "fragment_clusters.tsv";
pub const PROFILES_FILE: &str = "profiles.tsv";
pub const IMPORTANCE_FILE: &str = "importance.tsv";
pub const SIMILARITY_FILE: &str = "similarity.tsv";
pub const PATIENT_CLUSTERS_FILE: &str = "patient_clusters.tsv";
pub const PROJECTION_FILE: &str = "projection.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Standardize,
    Vocabulary,
    Representation,
    Fit,
    TopWords,
    Modularity,
    Coherence,
    FragmentClustering,
    PatientMixtures,
    Importance,
    Similarity,
    PatientClustering,
    Projection,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string));
        f.write_str(s.as_deref().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad configuration, missing or malformed input.
    Input,
    /// The numerics broke down (non-finite values, degenerate mixtures).
    Numerical,
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn input(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        PipelineError {
            stage,
            kind: FailureKind::Input,
            source: source.into(),
        }
    }

    pub fn numerical(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        PipelineError {
            stage,
            kind: FailureKind::Numerical,
            source: source.into(),
        }
    }

    /// 1 for input errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Input => 1,
            FailureKind::Numerical => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("missing prerequisite artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub lemmas: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub mwe: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
    pub scheme: Scheme,
    pub alpha: f64,
    pub k: usize,
    pub top_words: usize,
    /// Defaults to `k` when unset.
    pub clusters_fragments: Option<usize>,
    pub clusters_patients: usize,
    pub seed: u64,
    pub min_df: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub init: Init,
    pub profile_space: ProfileSpace,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            lemmas: None,
            stopwords: None,
            mwe: None,
            embeddings: None,
            out: PathBuf::from("out"),
            scheme: Scheme::CluWords,
            alpha: DEFAULT_ALPHA,
            k: 12,
            top_words: 10,
            clusters_fragments: None,
            clusters_patients: DEFAULT_PATIENT_CLUSTERS,
            seed: 42,
            min_df: 1,
            max_iter: 500,
            tol: 1e-5,
            init: Init::Nndsvd,
            profile_space: ProfileSpace::Importance,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl RunConfig {
    pub fn clusters_fragments(&self) -> usize {
        self.clusters_fragments.unwrap_or(self.k)
    }

    /// Sets one key. Path values are taken relative to `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "corpus" => self.corpus = Some(path(value)),
            "lemmas" | "lemma_map" => self.lemmas = Some(path(value)),
            "stopwords" => self.stopwords = Some(path(value)),
            "mwe" | "mwe_lexicon" => self.mwe = Some(path(value)),
            "embeddings" => self.embeddings = Some(path(value)),
            "out" => self.out = path(value),
            "scheme" => self.scheme = parse_value(&key, value)?,
            "alpha" => self.alpha = parse_value(&key, value)?,
            "k" => self.k = parse_value(&key, value)?,
            "top_words" | "t" => self.top_words = parse_value(&key, value)?,
            "clusters_fragments" => self.clusters_fragments = Some(parse_value(&key, value)?),
            "clusters_patients" => self.clusters_patients = parse_value(&key, value)?,
            "seed" => self.seed = parse_value(&key, value)?,
            "min_df" => self.min_df = parse_value(&key, value)?,
            "max_iter" => self.max_iter = parse_value(&key, value)?,
            "tol" => self.tol = parse_value(&key, value)?,
            "init" => self.init = parse_value(&key, value)?,
            "profile_space" => {
                self.profile_space = match value {
                    "importance" => ProfileSpace::Importance,
                    "mixture" => ProfileSpace::Mixture,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key,
                            value: value.to_string(),
                        })
                    }
                }
            }
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v, base)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_str(&text, path.parent())?;
        Ok(cfg)
    }

    /// Checks numeric ranges and that every configured input file exists.
    pub fn validate(&self, need_corpus: bool) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.top_words == 0 {
            return Err(ConfigError::Invalid("top_words must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError::Invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.clusters_fragments() < 2 || self.clusters_patients < 2 {
            return Err(ConfigError::Invalid("cluster counts must be at least 2".into()));
        }
        if self.min_df == 0 {
            return Err(ConfigError::Invalid("min_df must be at least 1".into()));
        }
        if need_corpus {
            match &self.corpus {
                None => return Err(ConfigError::Invalid("no corpus configured".into())),
                Some(p) if !p.is_file() => return Err(ConfigError::MissingArtifact(p.clone())),
                _ => {}
            }
            if self.scheme == Scheme::CluWords && self.embeddings.is_none() {
                return Err(ConfigError::Invalid("scheme cluwords requires an embeddings file".into()));
            }
        }
        for p in [&self.lemmas, &self.stopwords, &self.mwe, &self.embeddings].into_iter().flatten() {
            if !p.is_file() {
                return Err(ConfigError::MissingArtifact(p.clone()));
            }
        }
        Ok(())
    }

    /// Config echo for the manifest. The output directory is left out so runs
    /// into different directories stay comparable.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        BTreeMap::from([
            ("corpus".into(), p(&self.corpus)),
            ("lemmas".into(), p(&self.lemmas)),
            ("stopwords".into(), p(&self.stopwords)),
            ("mwe".into(), p(&self.mwe)),
            ("embeddings".into(), p(&self.embeddings)),
            ("scheme".into(), self.scheme.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("k".into(), self.k.to_string()),
            ("top_words".into(), self.top_words.to_string()),
            ("clusters_fragments".into(), self.clusters_fragments().to_string()),
            ("clusters_patients".into(), self.clusters_patients.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("min_df".into(), self.min_df.to_string()),
            ("max_iter".into(), self.max_iter.to_string()),
            ("tol".into(), self.tol.to_string()),
            ("init".into(), self.init.to_string()),
            (
                "profile_space".into(),
                match self.profile_space {
                    ProfileSpace::Importance => "importance",
                    ProfileSpace::Mixture => "mixture",
                }
                .into(),
            ),
        ])
    }

    fn nmf_options(&self) -> NmfOptions {
        NmfOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Protocol {
    pub k: usize,
    pub top_words: usize,
    pub clusters_fragments: usize,
    pub clusters_patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    /// `complete`, or `partial` when a stage failed.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config: BTreeMap<String, String>,
    pub protocol: Protocol,
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn sha256_hex(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

/// Writes artifacts into the output directory and remembers their hashes.
struct Recorder<'a> {
    out: &'a Path,
    artifacts: Vec<ArtifactEntry>,
}

impl<'a> Recorder<'a> {
    fn new(out: &'a Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(out).map_err(|e| {
            PipelineError::input(
                Stage::Export,
                ArtifactError::Io {
                    path: out.display().to_string(),
                    source: e,
                },
            )
        })?;
        Ok(Recorder {
            out,
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, file: &str, content: &str) -> Result<(), PipelineError> {
        io::write_text(&self.out.join(file), content).map_err(|e| PipelineError::input(Stage::Export, e))?;
        self.artifacts.push(ArtifactEntry {
            name: name.to_string(),
            file: file.to_string(),
            sha256: sha256_hex(content),
        });
        Ok(())
    }
}

fn corpus_err(stage: Stage) -> impl Fn(CorpusError) -> PipelineError {
    move |e| PipelineError::input(stage, e)
}

fn representation_err(e: RepresentationError) -> PipelineError {
    PipelineError::input(Stage::Representation, e)
}

fn factorization_err(e: FactorizationError) -> PipelineError {
    match e {
        FactorizationError::NonFinite => PipelineError::numerical(Stage::Fit, e),
        _ => PipelineError::input(Stage::Fit, e),
    }
}

fn metrics_err(stage: Stage) -> impl Fn(MetricsError) -> PipelineError {
    move |e| match e {
        MetricsError::NonFinite => PipelineError::numerical(stage, e),
        _ => PipelineError::input(stage, e),
    }
}

fn analysis_err(stage: Stage) -> impl Fn(AnalysisError) -> PipelineError {
    move |e| match e {
        AnalysisError::ZeroMixture(_) => PipelineError::numerical(stage, e),
        AnalysisError::Clustering(MetricsError::NonFinite) => PipelineError::numerical(stage, e),
        _ => PipelineError::input(stage, e),
    }
}

/// Standardized, non-empty documents with their vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub stats: CorpusStats,
    /// Fragments before the drop-empty pass.
    pub n_fragments: usize,
}

pub fn prepare_corpus(cfg: &RunConfig) -> Result<PreparedCorpus, PipelineError> {
    let path = cfg
        .corpus
        .as_deref()
        .ok_or_else(|| PipelineError::input(Stage::Config, ConfigError::Invalid("no corpus configured".into())))?;
    let interviews = load_corpus(path, CorpusFormat::from_path(path)).map_err(corpus_err(Stage::Load))?;
    let fragments = fragment_interviews(&interviews);
    let lex = Lexicon::load(cfg.lemmas.as_deref(), cfg.stopwords.as_deref(), cfg.mwe.as_deref())
        .map_err(corpus_err(Stage::Standardize))?;
    let n_fragments = fragments.len();
    let docs = drop_empty(standardize_all(&fragments, &lex));
    log::info!(
        "{} interviews, {} fragments, {} non-empty after standardization",
        interviews.len(),
        n_fragments,
        docs.len()
    );
    let vocab = build_vocabulary(&docs, cfg.min_df).map_err(corpus_err(Stage::Vocabulary))?;
    let stats = corpus_stats(&docs, &vocab);
    Ok(PreparedCorpus {
        docs,
        vocab,
        stats,
        n_fragments,
    })
}

/// Builds the configured representation. Also returns embedding coverage
/// for CluWords.
pub fn build_matrix(cfg: &RunConfig, prepared: &PreparedCorpus) -> Result<(DocTermMatrix, Option<f64>), PipelineError> {
    let (docs, vocab) = (&prepared.docs, &prepared.vocab);
    Ok(match cfg.scheme {
        Scheme::Bow => (bow_matrix(docs, vocab), None),
        Scheme::Tfidf => (tfidf_matrix(docs, vocab), None),
        Scheme::CluWords => {
            let path = cfg.embeddings.as_deref().ok_or_else(|| {
                PipelineError::input(
                    Stage::Representation,
                    ConfigError::Invalid("scheme cluwords requires an embeddings file".into()),
                )
            })?;
            let emb = load_embeddings(path, vocab).map_err(representation_err)?;
            log::info!("embedding coverage {:.3}", emb.coverage());
            let clusters = build_cluwords(&emb, cfg.alpha).map_err(representation_err)?;
            (cluwords_matrix(docs, vocab, &clusters).map_err(representation_err)?, Some(emb.coverage()))
        }
    })
}

/// Row-normalizes `w` to unit sums; all-zero rows stay zero.
pub fn normalize_rows(w: &Array2<f64>) -> Array2<f64> {
    let mut out = w.clone();
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
    out
}

/// k-means over raw fragment projections and over unit-sum mixtures.
pub fn cluster_fragments(cfg: &RunConfig, w: &Array2<f64>) -> Result<(Clustering, Clustering), PipelineError> {
    let c = cfg.clusters_fragments();
    let opts = KMeansOptions::default();
    let raw = kmeans(w.view(), c, cfg.seed, &opts).map_err(metrics_err(Stage::FragmentClustering))?;
    let norm = kmeans(normalize_rows(w).view(), c, cfg.seed, &opts).map_err(metrics_err(Stage::FragmentClustering))?;
    Ok((raw, norm))
}

fn f(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn protocol(cfg: &RunConfig) -> Protocol {
    Protocol {
        k: cfg.k,
        top_words: cfg.top_words,
        clusters_fragments: cfg.clusters_fragments(),
        clusters_patients: cfg.clusters_patients,
    }
}

/// Runs every stage and writes the ten stage artifacts plus `manifest.json`.
///
/// On failure the manifest is still written with status `partial`, listing
/// the artifacts produced before the failing stage.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    cfg.validate(true).map_err(|e| PipelineError::input(Stage::Config, e))?;
    let mut rec = Recorder::new(&cfg.out)?;
    let mut summary = BTreeMap::new();
    let result = run_stages(cfg, &mut rec, &mut summary);
    let manifest = Manifest {
        status: if result.is_ok() { "complete" } else { "partial" }.to_string(),
        failed_stage: result.as_ref().err().map(|e| e.stage.to_string()),
        error: result.as_ref().err().map(|e| e.to_string()),
        config: cfg.echo(),
        protocol: protocol(cfg),
        artifacts: rec.artifacts.clone(),
        summary,
    };
    io::write_text(&cfg.out.join(MANIFEST_FILE), &manifest.to_json()).map_err(|e| PipelineError::input(Stage::Export, e))?;
    result.map(|_| manifest)
}

fn run_stages(
    cfg: &RunConfig,
    rec: &mut Recorder<'_>,
    summary: &mut BTreeMap<String, serde_json::Value>,
) -> Result<(), PipelineError> {
    let prepared = prepare_corpus(cfg)?;
    summary.insert("n_fragments".into(), prepared.n_fragments.into());
    summary.insert("n_documents".into(), prepared.stats.n_documents.into());
    summary.insert("vocab_size".into(), prepared.stats.vocab_size.into());
    rec.write("stats", STATS_FILE, &io::format_stats(&prepared.stats))?;

    let (matrix, coverage) = build_matrix(cfg, &prepared)?;
    if let Some(c) = coverage {
        summary.insert("embedding_coverage".into(), f(c));
    }
    rec.write("matrix", MATRIX_FILE, &io::format_matrix(&matrix, &prepared.vocab))?;

    let model = fit_nmf(&matrix, cfg.k, &cfg.nmf_options()).map_err(factorization_err)?;
    summary.insert("n_iter".into(), model.n_iter.into());
    summary.insert("final_loss".into(), f(model.final_loss()));
    rec.write(
        "model",
        MODEL_FILE,
        &io::format_model(&model, matrix.row_index(), prepared.vocab.terms()),
    )?;

    let topics = top_words(&model, &prepared.vocab, cfg.top_words);
    rec.write("summary", TOPICS_FILE, &io::format_summary(&topics))?;

    let modularity = topic_modularity(&topics).map_err(metrics_err(Stage::Modularity))?;
    summary.insert("mean_modularity".into(), f(modularity.mean));
    rec.write("modularity", MODULARITY_FILE, &io::format_modularity(&modularity))?;

    let (raw, norm) = cluster_fragments(cfg, &model.w)?;
    summary.insert("mean_silhouette_fragments_raw".into(), f(mean_silhouette(&raw)));
    summary.insert("mean_silhouette_fragments_normalized".into(), f(mean_silhouette(&norm)));
    rec.write(
        "fragment_clustering",
        FRAGMENT_CLUSTERS_FILE,
        &io::format_silhouettes(&[("raw", &raw), ("normalized", &norm)], matrix.row_index()),
    )?;

    let profiles = patient_mixtures(model.w.view(), matrix.row_index()).map_err(analysis_err(Stage::PatientMixtures))?;
    summary.insert("n_patients".into(), profiles.len().into());
    rec.write("profiles", PROFILES_FILE, &io::format_profiles(&profiles))?;

    let importance = topic_importance(&profiles).map_err(analysis_err(Stage::Importance))?;
    rec.write("importance", IMPORTANCE_FILE, &io::format_importance(&importance))?;

    let patients = patient_clustering(&profiles, cfg.clusters_patients, cfg.seed, cfg.profile_space)
        .map_err(analysis_err(Stage::PatientClustering))?;
    summary.insert("mean_silhouette_patients".into(), f(mean_silhouette(&patients)));
    rec.write(
        "patient_clustering",
        PATIENT_CLUSTERS_FILE,
        &io::format_patient_clusters(&profiles, &patients),
    )?;

    let projection = project_2d(&profiles, cfg.profile_space).map_err(analysis_err(Stage::Projection))?;
    rec.write(
        "projection",
        PROJECTION_FILE,
        &io::format_projection(&profiles, &projection, Some(&patients.assignments)),
    )?;
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::input(Stage::Config, ConfigError::MissingArtifact(path)))
    }
}

fn artifact_err(stage: Stage) -> impl Fn(ArtifactError) -> PipelineError {
    move |e| PipelineError::input(stage, e)
}

/// `stats`: corpus statistics only.
pub fn segment_stats(cfg: &RunConfig) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let mut c = cfg.clone();
    c.scheme = Scheme::Tfidf; // embeddings are irrelevant here
    c.validate(true).map_err(|e| PipelineError::input(Stage::Config, e))?;
    let prepared = prepare_corpus(cfg)?;
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("stats", STATS_FILE, &io::format_stats(&prepared.stats))?;
    Ok(rec.artifacts)
}

/// `fit`: representation, NMF and top words.
pub fn segment_fit(cfg: &RunConfig) -> Result<(Vec<ArtifactEntry>, TopicModel), PipelineError> {
    cfg.validate(true).map_err(|e| PipelineError::input(Stage::Config, e))?;
    let prepared = prepare_corpus(cfg)?;
    let (matrix, _) = build_matrix(cfg, &prepared)?;
    let model = fit_nmf(&matrix, cfg.k, &cfg.nmf_options()).map_err(factorization_err)?;
    let topics = top_words(&model, &prepared.vocab, cfg.top_words);
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("matrix", MATRIX_FILE, &io::format_matrix(&matrix, &prepared.vocab))?;
    rec.write("model", MODEL_FILE, &io::format_model(&model, matrix.row_index(), prepared.vocab.terms()))?;
    rec.write("summary", TOPICS_FILE, &io::format_summary(&topics))?;
    Ok((rec.artifacts, model))
}

/// `evaluate`: modularity of a topic table (the fitted one, or an external
/// table), optional PMI coherence against the corpus, and fragment
/// silhouettes when a fitted model is present and no external table is given.
pub fn segment_evaluate(
    cfg: &RunConfig,
    external_topics: Option<&Path>,
    with_pmi: bool,
) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let topics_path = match external_topics {
        Some(p) => require(p.to_path_buf())?,
        None => require(cfg.out.join(TOPICS_FILE))?,
    };
    let topics = io::read_topic_table(&topics_path).map_err(artifact_err(Stage::Modularity))?;
    let report = topic_modularity(&topics).map_err(metrics_err(Stage::Modularity))?;
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("modularity", MODULARITY_FILE, &io::format_modularity(&report))?;
    if with_pmi {
        let mut c = cfg.clone();
        c.scheme = Scheme::Tfidf;
        c.validate(true).map_err(|e| PipelineError::input(Stage::Config, e))?;
        let prepared = prepare_corpus(cfg)?;
        let pmi = pmi_coherence(&topics, &prepared.docs, PMI_EPSILON).map_err(metrics_err(Stage::Coherence))?;
        rec.write("coherence", PMI_FILE, &io::format_pmi(&pmi))?;
    }
    if external_topics.is_none() {
        let model = io::read_model(&require(cfg.out.join(MODEL_FILE))?).map_err(artifact_err(Stage::FragmentClustering))?;
        let (raw, norm) = cluster_fragments(cfg, &model.model.w)?;
        rec.write(
            "fragment_clustering",
            FRAGMENT_CLUSTERS_FILE,
            &io::format_silhouettes(&[("raw", &raw), ("normalized", &norm)], &model.row_index),
        )?;
    }
    Ok(rec.artifacts)
}

/// `profiles`: patient mixtures and importance statistics from a fitted model.
pub fn segment_profiles(
    cfg: &RunConfig,
    similarity: Option<SimilarityMetric>,
) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let model = io::read_model(&require(cfg.out.join(MODEL_FILE))?).map_err(artifact_err(Stage::PatientMixtures))?;
    let profiles =
        patient_mixtures(model.model.w.view(), &model.row_index).map_err(analysis_err(Stage::PatientMixtures))?;
    let importance = topic_importance(&profiles).map_err(analysis_err(Stage::Importance))?;
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("profiles", PROFILES_FILE, &io::format_profiles(&profiles))?;
    rec.write("importance", IMPORTANCE_FILE, &io::format_importance(&importance))?;
    if let Some(metric) = similarity {
        let m = patient_similarity(&profiles, metric, cfg.profile_space).map_err(analysis_err(Stage::Similarity))?;
        rec.write("similarity", SIMILARITY_FILE, &io::format_similarity(&profiles, &m))?;
    }
    Ok(rec.artifacts)
}

fn load_profiles(cfg: &RunConfig, stage: Stage) -> Result<Vec<PatientProfile>, PipelineError> {
    io::read_profiles(&require(cfg.out.join(PROFILES_FILE))?).map_err(artifact_err(stage))
}

/// `cluster`: patient similarity grouping.
pub fn segment_cluster(cfg: &RunConfig) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let profiles = load_profiles(cfg, Stage::PatientClustering)?;
    let cl = patient_clustering(&profiles, cfg.clusters_patients, cfg.seed, cfg.profile_space)
        .map_err(analysis_err(Stage::PatientClustering))?;
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("patient_clustering", PATIENT_CLUSTERS_FILE, &io::format_patient_clusters(&profiles, &cl))?;
    Ok(rec.artifacts)
}

/// `project`: 2-D coordinates, labelled with patient clusters when available.
pub fn segment_project(cfg: &RunConfig) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let profiles = load_profiles(cfg, Stage::Projection)?;
    let proj = project_2d(&profiles, cfg.profile_space).map_err(analysis_err(Stage::Projection))?;
    let clusters_path = cfg.out.join(PATIENT_CLUSTERS_FILE);
    let clusters = if clusters_path.is_file() {
        let by_id: BTreeMap<String, usize> = io::read_patient_clusters(&clusters_path)
            .map_err(artifact_err(Stage::Projection))?
            .into_iter()
            .collect();
        profiles.iter().map(|p| by_id.get(&p.patient_id).copied()).collect::<Option<Vec<usize>>>()
    } else {
        None
    };
    let mut rec = Recorder::new(&cfg.out)?;
    rec.write("projection", PROJECTION_FILE, &io::format_projection(&profiles, &proj, clusters.as_deref()))?;
    Ok(rec.artifacts)
}
