//! Seeded synthetic interview corpus with matching lexicon and embedding
//! files, for demos and end-to-end tests.
//!
//! Each question has its own theme vocabulary. Patients belong to one of
//! seven groups and each group favours a different slice of every theme, so
//! both the fragment and the patient level carry recoverable structure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{RawInterview, N_QUESTIONS};
use crate::io::{write_text, ArtifactError};

/// Per-question theme words. Surface forms listed in [`LEMMAS`] are mapped
/// back to their lemma during standardization.
const THEMES: [&[&str]; N_QUESTIONS] = [
    &["joelho", "mão", "ombro", "anca", "pé", "costa", "perna", "pulso", "cotovelo", "pescoço", "dedo", "tornozelo"],
    &["picada", "queimar", "aperto", "pontada", "formigueiro", "latejar", "pressão", "choque", "peso", "ardor", "rigidez", "cãibra"],
    &["piorar", "aumentar", "igual", "estável", "diminuir", "variar", "forte", "fraco", "intenso", "leve", "constante", "oscilar"],
    &["trabalho", "casa", "dormir", "andar", "sair", "conduzir", "cozinhar", "família", "tristeza", "ansiedade", "cansaço", "isolamento"],
    &["artrite reumatóide", "doença", "osso", "inflamação", "reumatismo", "genética", "idade", "acidente", "esforço", "desgaste", "infeção", "queda"],
    &["medicação", "fisioterapia", "metotrexato", "pomada", "cortisona", "injeção", "tratamento", "melhoria", "alívio", "efeito", "dose", "consulta"],
    &["esperança", "melhorar", "piorar", "futuro", "medo", "de vez em quando", "controlar", "aguentar", "otimista", "incerto", "cirurgia", "esperar"],
];

const FILLER: &[&str] = &["o", "a", "de", "que", "me", "muito", "é", "um", "uma", "com", "não", "sei", "senhor", "doutor"];

const STOPWORDS: &[&str] = &[
    "o", "a", "os", "as", "de", "que", "me", "muito", "é", "um", "uma", "com", "não", "sei", "senhor", "doutor", "senhor doutor", "e", "em",
];

const LEMMAS: &[(&str, &str)] = &[
    ("joelhos", "joelho"),
    ("mãos", "mão"),
    ("ombros", "ombro"),
    ("pés", "pé"),
    ("costas", "costa"),
    ("pernas", "perna"),
    ("dedos", "dedo"),
    ("piorou", "piorar"),
    ("aumentou", "aumentar"),
    ("diminuiu", "diminuir"),
    ("ossos", "osso"),
    ("doenças", "doença"),
    ("tratamentos", "tratamento"),
    ("melhorou", "melhorar"),
    ("espero", "esperar"),
    ("dói", "doer"),
];

const MWES: &[&str] = &["artrite reumatóide", "de vez em quando", "senhor doutor"];

pub const N_GROUPS: usize = 7;
pub const EMBEDDING_DIM: usize = 16;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub interviews: Vec<RawInterview>,
    /// Generating group of every patient, aligned with `interviews`.
    pub groups: Vec<usize>,
}

/// Paths of a corpus written by [`SyntheticCorpus::write_to`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub corpus: PathBuf,
    pub lemmas: PathBuf,
    pub stopwords: PathBuf,
    pub mwes: PathBuf,
    pub embeddings: PathBuf,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn surface<'a>(rng: &mut ChaCha8Rng, lemma: &'a str) -> &'a str {
    // Occasionally emit an inflected form so lemmatization has work to do.
    if rng.random::<f64>() < 0.3 {
        if let Some((s, _)) = LEMMAS.iter().find(|(_, l)| *l == lemma) {
            return s;
        }
    }
    lemma
}

/// Generates `n_patients` interviews. Two answers (when there are enough
/// patients) consist of stopwords only, so standardization empties them and
/// the drop-empty pass removes them: 94 patients give 658 fragments and 656
/// documents.
pub fn generate(n_patients: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interviews = Vec::with_capacity(n_patients);
    let mut groups = Vec::with_capacity(n_patients);
    for p in 0..n_patients {
        let group = p % N_GROUPS;
        let mut iv = RawInterview::new(format!("P{p:03}"));
        for (q, theme) in THEMES.iter().enumerate() {
            if (p == 5 && q == 6) || (p == 40 && q == 2) {
                iv.answers[q] = "Não sei, senhor doutor.".to_string();
                continue;
            }
            // Group g favours a window of four words in each theme.
            let start = (group * 12 / N_GROUPS) % theme.len();
            let favoured: Vec<&str> = (0..4).map(|i| theme[(start + i) % theme.len()]).collect();
            let n_words = rng.random_range(3..9);
            let mut words = Vec::with_capacity(n_words * 2);
            for _ in 0..n_words {
                let lemma = if rng.random::<f64>() < 0.75 {
                    *favoured.choose(&mut rng).expect("non-empty")
                } else {
                    *theme.choose(&mut rng).expect("non-empty")
                };
                words.push(surface(&mut rng, lemma).to_string());
                if rng.random::<f64>() < 0.5 {
                    words.push(FILLER.choose(&mut rng).expect("non-empty").to_string());
                }
            }
            if rng.random::<f64>() < 0.2 {
                words.push(format!("{}", rng.random_range(1..30)));
            }
            let mut text = words.join(" ");
            if let Some(first) = text.get(..1) {
                text = first.to_uppercase() + &text[1..];
            }
            text.push('.');
            iv.answers[q] = text;
        }
        interviews.push(iv);
        groups.push(group);
    }
    SyntheticCorpus { interviews, groups }
}

impl SyntheticCorpus {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for iv in &self.interviews {
            for (q, a) in iv.answers.iter().enumerate() {
                if !a.is_empty() {
                    let _ = writeln!(s, "{}\t{}\t{a}", iv.patient_id, q + 1);
                }
            }
        }
        s
    }

    /// Writes corpus, lexicons and a word2vec-format embedding file to `dir`.
    pub fn write_to(&self, dir: &Path, seed: u64) -> Result<SyntheticFiles, ArtifactError> {
        std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let files = SyntheticFiles {
            corpus: dir.join("corpus.tsv"),
            lemmas: dir.join("lemmas.tsv"),
            stopwords: dir.join("stopwords.txt"),
            mwes: dir.join("mwe.txt"),
            embeddings: dir.join("embeddings.vec"),
        };
        write_text(&files.corpus, &self.to_tsv())?;
        let lemmas: String = LEMMAS.iter().map(|(s, l)| format!("{s}\t{l}\n")).collect();
        write_text(&files.lemmas, &lemmas)?;
        write_text(&files.stopwords, &(STOPWORDS.join("\n") + "\n"))?;
        write_text(&files.mwes, &(MWES.join("\n") + "\n"))?;
        write_text(&files.embeddings, &embedding_file(seed))?;
        Ok(files)
    }
}

/// Word vectors clustered by theme: each theme has a random centre and its
/// words are small perturbations of it. Multi-word terms are written as their
/// member words only, exercising the mean-of-members fallback.
pub fn embedding_file(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    for theme in THEMES.iter() {
        let centre: Vec<f64> = (0..EMBEDDING_DIM).map(|_| normal(&mut rng)).collect();
        for word in theme.iter() {
            for part in word.split(' ') {
                if entries.iter().any(|(w, _)| w == part) {
                    continue;
                }
                let v = centre.iter().map(|c| c + 0.45 * normal(&mut rng)).collect();
                entries.push((part.to_string(), v));
            }
        }
    }
    let mut s = format!("{} {EMBEDDING_DIM}\n", entries.len());
    for (w, v) in entries {
        s.push_str(&w);
        for x in v {
            let _ = write!(s, " {x:.6}");
        }
        s.push('\n');
    }
    s
}
