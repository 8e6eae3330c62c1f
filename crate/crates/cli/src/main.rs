//! Command-line front end for the short-text topic modelling pipeline.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when a
//! numerical stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shorttopic::analysis::SimilarityMetric;
use shorttopic::pipeline::{self, ArtifactEntry, PipelineError, RunConfig, Stage, CONFIG_ENV, MANIFEST_FILE};
use shorttopic::synthetic;

#[derive(Debug, Parser)]
#[command(name = "shorttopic", version, about = "Topic modelling for short interview fragments")]
struct Cli {
    /// Config file of `key = value` lines; command-line flags override it.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write all artifacts plus manifest.json.
    Run(Overrides),
    /// Corpus statistics only.
    Stats(Overrides),
    /// Build the representation, factorize and extract top words.
    Fit(Overrides),
    /// Topic modularity (and optionally PMI) plus fragment silhouettes.
    Evaluate {
        #[command(flatten)]
        o: Overrides,
        /// Evaluate an external topic table instead of the fitted one.
        #[arg(long)]
        topics: Option<PathBuf>,
        /// Also compute PMI coherence against the configured corpus.
        #[arg(long)]
        pmi: bool,
    },
    /// Patient topic mixtures and importance statistics from a fitted model.
    Profiles {
        #[command(flatten)]
        o: Overrides,
        /// Also write a patient-by-patient similarity matrix.
        #[arg(long, value_enum)]
        similarity: Option<Metric>,
    },
    /// Group patients by their profiles.
    Cluster(Overrides),
    /// Project patient profiles to two dimensions.
    Project(Overrides),
    /// Write a seeded synthetic corpus with lexicons and embeddings.
    Synth {
        /// Output directory for the generated files.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 94)]
        patients: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Euclidean,
    Cosine,
}

/// Flags shared by all pipeline commands. Values are kept as strings and
/// parsed by the config layer so both sources report errors the same way.
#[derive(Debug, Default, Args)]
struct Overrides {
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    lemmas: Option<String>,
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    mwe: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    /// bow, tfidf or cluwords.
    #[arg(long)]
    scheme: Option<String>,
    /// CluWords similarity threshold in (0, 1].
    #[arg(long)]
    alpha: Option<String>,
    /// Number of topics.
    #[arg(long)]
    k: Option<String>,
    /// Words per topic in the summary.
    #[arg(long)]
    top_words: Option<String>,
    #[arg(long)]
    clusters_fragments: Option<String>,
    #[arg(long)]
    clusters_patients: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    min_df: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// nndsvd or random.
    #[arg(long)]
    init: Option<String>,
    /// importance or mixture.
    #[arg(long)]
    profile_space: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("corpus", &self.corpus),
            ("lemmas", &self.lemmas),
            ("stopwords", &self.stopwords),
            ("mwe", &self.mwe),
            ("embeddings", &self.embeddings),
            ("scheme", &self.scheme),
            ("alpha", &self.alpha),
            ("k", &self.k),
            ("top_words", &self.top_words),
            ("clusters_fragments", &self.clusters_fragments),
            ("clusters_patients", &self.clusters_patients),
            ("seed", &self.seed),
            ("min_df", &self.min_df),
            ("max_iter", &self.max_iter),
            ("tol", &self.tol),
            ("init", &self.init),
            ("profile_space", &self.profile_space),
            ("out", &self.out),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

fn build_config(file: Option<&Path>, o: &Overrides) -> Result<RunConfig, PipelineError> {
    let mut cfg = match file {
        Some(p) => RunConfig::from_file(p).map_err(|e| PipelineError::input(Stage::Config, e))?,
        None => RunConfig::default(),
    };
    for (k, v) in o.pairs() {
        cfg.set(k, v, None).map_err(|e| PipelineError::input(Stage::Config, e))?;
    }
    Ok(cfg)
}

fn report(artifacts: &[ArtifactEntry], out: &Path) {
    for a in artifacts {
        println!("{}\t{}\t{}", a.name, out.join(&a.file).display(), a.sha256);
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Run(o) => {
            let cfg = build_config(file, &o)?;
            let manifest = pipeline::run_pipeline(&cfg)?;
            report(&manifest.artifacts, &cfg.out);
            println!("manifest\t{}", cfg.out.join(MANIFEST_FILE).display());
        }
        Command::Stats(o) => {
            let cfg = build_config(file, &o)?;
            report(&pipeline::segment_stats(&cfg)?, &cfg.out);
        }
        Command::Fit(o) => {
            let cfg = build_config(file, &o)?;
            let (artifacts, model) = pipeline::segment_fit(&cfg)?;
            log::info!("converged after {} iterations, loss {:.6}", model.n_iter, model.final_loss());
            report(&artifacts, &cfg.out);
        }
        Command::Evaluate { o, topics, pmi } => {
            let cfg = build_config(file, &o)?;
            report(&pipeline::segment_evaluate(&cfg, topics.as_deref(), pmi)?, &cfg.out);
        }
        Command::Profiles { o, similarity } => {
            let cfg = build_config(file, &o)?;
            let metric = similarity.map(|m| match m {
                Metric::Euclidean => SimilarityMetric::Euclidean,
                Metric::Cosine => SimilarityMetric::Cosine,
            });
            report(&pipeline::segment_profiles(&cfg, metric)?, &cfg.out);
        }
        Command::Cluster(o) => {
            let cfg = build_config(file, &o)?;
            report(&pipeline::segment_cluster(&cfg)?, &cfg.out);
        }
        Command::Project(o) => {
            let cfg = build_config(file, &o)?;
            report(&pipeline::segment_project(&cfg)?, &cfg.out);
        }
        Command::Synth { dir, patients, seed } => {
            let files = synthetic::generate(patients, seed)
                .write_to(&dir, seed)
                .map_err(|e| PipelineError::input(Stage::Export, e))?;
            for (name, p) in [
                ("corpus", &files.corpus),
                ("lemmas", &files.lemmas),
                ("stopwords", &files.stopwords),
                ("mwe", &files.mwes),
                ("embeddings", &files.embeddings),
            ] {
                println!("{name}\t{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
