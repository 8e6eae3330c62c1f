//! Topic modularity, silhouette coefficients, k-means and PMI coherence.

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Document;
use crate::factorization::TopicSummary;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("modularity needs at least two topics, got {0}")]
    TooFewTopics(usize),
    #[error("topic {0} has no words")]
    EmptyTopic(usize),
    #[error("silhouette needs at least two samples and two non-empty clusters")]
    SingleCluster,
    #[error("{samples} samples but {clusters} clusters requested")]
    TooFewSamples { samples: usize, clusters: usize },
    #[error("cluster count must be at least 2, got {0}")]
    InvalidClusterCount(usize),
    #[error("{points} points but {labels} assignments")]
    LengthMismatch { points: usize, labels: usize },
    #[error("coherence needs at least two words per topic")]
    TooFewWords,
    #[error("non-finite coordinate in input points")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModularityReport {
    /// Fraction of each topic's top words that no other topic lists.
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub depth: usize,
}

/// Unique-word fraction per topic. Terms (including multi-word ones) are
/// compared as whole strings; a term repeated inside one list counts once.
pub fn topic_modularity(summary: &TopicSummary) -> Result<ModularityReport> {
    let n = summary.topics.len();
    if n < 2 {
        return Err(MetricsError::TooFewTopics(n));
    }
    let sets: Vec<HashSet<&str>> = summary.topics.iter().map(|t| t.terms().collect()).collect();
    let mut owners: HashMap<&str, usize> = HashMap::new();
    for set in &sets {
        for &w in set {
            *owners.entry(w).or_default() += 1;
        }
    }
    let per_topic = summary
        .topics
        .iter()
        .zip(&sets)
        .enumerate()
        .map(|(i, (topic, set))| {
            let depth = topic.words.len();
            if depth == 0 {
                return Err(MetricsError::EmptyTopic(i));
            }
            let unique = set.iter().filter(|w| owners[*w] == 1).count();
            Ok(unique as f64 / depth as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_topic.iter().sum::<f64>() / n as f64;
    Ok(ModularityReport {
        per_topic,
        mean,
        depth: summary.topics[0].words.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; zero vectors are at distance 1 from everything.
    Cosine,
}

impl Distance {
    pub fn between(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Distance::Cosine => {
                let dot = a.dot(&b);
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
                }
            }
        }
    }
}

/// Per-sample silhouette `(b - a) / max(a, b)` under Euclidean distance.
pub fn silhouette_samples(points: ArrayView2<f64>, assignments: &[usize]) -> Result<Vec<f64>> {
    silhouette_samples_with(points, assignments, Distance::Euclidean)
}

pub fn silhouette_samples_with(
    points: ArrayView2<f64>,
    assignments: &[usize],
    metric: Distance,
) -> Result<Vec<f64>> {
    let n = points.nrows();
    if n != assignments.len() {
        return Err(MetricsError::LengthMismatch {
            points: n,
            labels: assignments.len(),
        });
    }
    // Compact arbitrary labels into 0..c.
    let labels: BTreeSet<usize> = assignments.iter().copied().collect();
    if n < 2 || labels.len() < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let remap: HashMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let ids: Vec<usize> = assignments.iter().map(|l| remap[l]).collect();
    let c = labels.len();
    let mut sizes = vec![0usize; c];
    for &id in &ids {
        sizes[id] += 1;
    }

    let mut scores = Vec::with_capacity(n);
    let mut sums = vec![0.0; c];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = points.row(i);
        for j in 0..n {
            if i != j {
                sums[ids[j]] += metric.between(pi, points.row(j));
            }
        }
        let own = ids[i];
        if sizes[own] == 1 {
            scores.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|&k| k != own && sizes[k] > 0)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        scores.push(if denom == 0.0 { 0.0 } else { (b - a) / denom });
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub c: usize,
    pub assignments: Vec<usize>,
    /// c x dim
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub silhouettes: Vec<f64>,
    pub n_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub n_restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            n_restarts: 10,
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn seed_centroids(points: ArrayView2<f64>, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(c);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            // Guard against rounding landing on a zero-weight tail.
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((c, points.ncols()));
    for (k, &i) in chosen.iter().enumerate() {
        centroids.row_mut(k).assign(&points.row(i));
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..points.nrows())
        .map(|i| {
            let p = points.row(i);
            centroids
                .rows()
                .into_iter()
                .enumerate()
                .map(|(k, c)| (k, sq_dist(p, c)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .unzip()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(labels: &mut [usize], d2: &mut [f64], c: usize) {
    loop {
        let mut sizes = vec![0usize; c];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
            .expect("n >= c guarantees a donor cluster");
        labels[far] = empty;
        d2[far] = 0.0;
    }
}

fn update_centroids(points: ArrayView2<f64>, labels: &[usize], c: usize) -> Array2<f64> {
    let mut centroids = Array2::zeros((c, points.ncols()));
    let mut sizes = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        let mut row = centroids.row_mut(l);
        row += &points.row(i);
    }
    for (k, &s) in sizes.iter().enumerate() {
        if s > 0 {
            centroids.row_mut(k).mapv_inplace(|v| v / s as f64);
        }
    }
    centroids
}

fn inertia_of(points: ArrayView2<f64>, labels: &[usize], centroids: &Array2<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centroids.row(l)))
        .sum()
}

pub(crate) struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia_trace: Vec<f64>,
}

/// Lloyd iterations from the given centroids until the assignment is a fixed
/// point. The trace records the inertia after every centroid update.
pub(crate) fn lloyd(points: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> LloydRun {
    let c = centroids.nrows();
    let (mut labels, mut d2) = assign(points, &centroids);
    repair_empty(&mut labels, &mut d2, c);
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        centroids = update_centroids(points, &labels, c);
        trace.push(inertia_of(points, &labels, &centroids));
        let (mut next, mut nd2) = assign(points, &centroids);
        // Keep the current label on exact ties so a fixed point is reachable.
        for i in 0..next.len() {
            if sq_dist(points.row(i), centroids.row(labels[i])) <= nd2[i] {
                next[i] = labels[i];
                nd2[i] = sq_dist(points.row(i), centroids.row(labels[i]));
            }
        }
        repair_empty(&mut next, &mut nd2, c);
        if next == labels {
            break;
        }
        labels = next;
    }
    centroids = update_centroids(points, &labels, c);
    LloydRun {
        labels,
        centroids,
        inertia_trace: trace,
    }
}

/// Best-of-`n_restarts` Lloyd clustering with k-means++ seeding.
pub fn kmeans(points: ArrayView2<f64>, c: usize, seed: u64, opts: &KMeansOptions) -> Result<Clustering> {
    let n = points.nrows();
    if c < 2 {
        return Err(MetricsError::InvalidClusterCount(c));
    }
    if c > n {
        return Err(MetricsError::TooFewSamples { samples: n, clusters: c });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, LloydRun)> = None;
    for _ in 0..opts.n_restarts.max(1) {
        let mut restart_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let init = seed_centroids(points, c, &mut restart_rng);
        let run = lloyd(points, init, opts.max_iter);
        let inertia = inertia_of(points, &run.labels, &run.centroids);
        // Strict comparison keeps the lowest restart index on ties.
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, run));
        }
    }
    let (inertia, run) = best.expect("at least one restart");
    let silhouettes = silhouette_samples(points, &run.labels)?;
    Ok(Clustering {
        c,
        n_iter: run.inertia_trace.len(),
        assignments: run.labels,
        centroids: run.centroids,
        inertia,
        silhouettes,
    })
}

pub fn mean_silhouette(clustering: &Clustering) -> f64 {
    mean(&clustering.silhouettes)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub const PMI_EPSILON: f64 = 1e-12;

/// Mean pairwise PMI per topic with document-level occurrence probabilities.
///
/// A word absent from the reference corpus has `p(w) = 0`; the product of
/// marginals is floored at `epsilon` so such pairs stay finite.
pub fn pmi_coherence(summary: &TopicSummary, docs: &[Document], epsilon: f64) -> Result<Vec<f64>> {
    let n = docs.len() as f64;
    let sets: Vec<HashSet<&str>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(String::as_str).collect())
        .collect();
    let occurs = |w: &str| sets.iter().filter(|s| s.contains(w)).count() as f64 / n;
    let co = |a: &str, b: &str| {
        sets.iter().filter(|s| s.contains(a) && s.contains(b)).count() as f64 / n
    };
    summary
        .topics
        .iter()
        .map(|topic| {
            let words: Vec<&str> = topic.terms().collect();
            if words.len() < 2 {
                return Err(MetricsError::TooFewWords);
            }
            let p: Vec<f64> = words.iter().map(|w| occurs(w)).collect();
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..words.len() {
                for j in i + 1..words.len() {
                    let joint = co(words[i], words[j]);
                    total += ((joint + epsilon) / (p[i] * p[j]).max(epsilon)).ln();
                    pairs += 1;
                }
            }
            Ok(total / pairs as f64)
        })
        .collect()
}
