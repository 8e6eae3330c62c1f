//! Patient-level topic profiles: mixture aggregation, importance statistics,
//! similarity grouping and a 2-D projection for plotting.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::metrics::{kmeans, Clustering, KMeansOptions, MetricsError};

pub const DEFAULT_PATIENT_CLUSTERS: usize = 7;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("W has {rows} rows but the row index has {index} entries")]
    DimensionMismatch { rows: usize, index: usize },
    #[error("patient {0:?} has no fragments")]
    NoFragments(String),
    #[error("patient {0:?} has an all-zero topic mixture; importance is undefined")]
    ZeroMixture(String),
    #[error("need at least {needed} profiles, got {got}")]
    TooFewProfiles { needed: usize, got: usize },
    #[error("profiles disagree on topic count")]
    RaggedProfiles,
    #[error("profile {0:?} is a zero vector under cosine similarity")]
    ZeroVector(String),
    #[error("projection needs k >= 2 topics")]
    TooFewTopics,
    #[error(transparent)]
    Clustering(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PatientProfile {
    pub patient_id: String,
    /// Mean of the patient's fragment rows of W.
    pub mixture: Vec<f64>,
    /// `100 * mixture / sum(mixture)`.
    pub importance: Vec<f64>,
}

impl PatientProfile {
    pub fn from_mixture(patient_id: impl Into<String>, mixture: Vec<f64>) -> Result<Self> {
        let patient_id = patient_id.into();
        let total: f64 = mixture.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(AnalysisError::ZeroMixture(patient_id));
        }
        let importance = mixture.iter().map(|m| 100.0 * m / total).collect();
        Ok(PatientProfile {
            patient_id,
            mixture,
            importance,
        })
    }
}

/// Averages fragment projections per patient.
///
/// Patients come out sorted by id, and each patient's rows are summed in
/// question order, so the result does not depend on row order.
pub fn patient_mixtures(w: ArrayView2<f64>, row_index: &[(String, u8)]) -> Result<Vec<PatientProfile>> {
    if w.nrows() != row_index.len() {
        return Err(AnalysisError::DimensionMismatch {
            rows: w.nrows(),
            index: row_index.len(),
        });
    }
    let mut groups: BTreeMap<&str, Vec<(u8, usize)>> = BTreeMap::new();
    for (r, (pid, q)) in row_index.iter().enumerate() {
        groups.entry(pid.as_str()).or_default().push((*q, r));
    }
    groups
        .into_iter()
        .map(|(pid, mut rows)| {
            if rows.is_empty() {
                return Err(AnalysisError::NoFragments(pid.to_string()));
            }
            rows.sort_unstable();
            let mut mixture = vec![0.0; w.ncols()];
            for &(_, r) in &rows {
                for (m, v) in mixture.iter_mut().zip(w.row(r)) {
                    *m += v;
                }
            }
            let n = rows.len() as f64;
            mixture.iter_mut().for_each(|m| *m /= n);
            PatientProfile::from_mixture(pid, mixture)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicImportance {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceStats {
    pub per_topic: Vec<TopicImportance>,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_profiles(profiles: &[PatientProfile], needed: usize) -> Result<usize> {
    if profiles.len() < needed {
        return Err(AnalysisError::TooFewProfiles {
            needed,
            got: profiles.len(),
        });
    }
    let k = profiles[0].importance.len();
    if profiles.iter().any(|p| p.importance.len() != k || p.mixture.len() != k) {
        return Err(AnalysisError::RaggedProfiles);
    }
    Ok(k)
}

pub fn topic_importance(profiles: &[PatientProfile]) -> Result<ImportanceStats> {
    let k = check_profiles(profiles, 1)?;
    let per_topic = (0..k)
        .map(|t| {
            let mut col: Vec<f64> = profiles.iter().map(|p| p.importance[t]).collect();
            col.sort_by(f64::total_cmp);
            TopicImportance {
                q1: quantile_sorted(&col, 0.25),
                median: quantile_sorted(&col, 0.5),
                q3: quantile_sorted(&col, 0.75),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                max: *col.last().expect("non-empty"),
            }
        })
        .collect();
    Ok(ImportanceStats { per_topic })
}

/// Which per-patient vector feeds clustering, similarity and projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileSpace {
    #[default]
    Importance,
    Mixture,
}

pub fn profile_matrix(profiles: &[PatientProfile], space: ProfileSpace) -> Array2<f64> {
    let k = profiles.first().map_or(0, |p| p.importance.len());
    Array2::from_shape_fn((profiles.len(), k), |(i, t)| match space {
        ProfileSpace::Importance => profiles[i].importance[t],
        ProfileSpace::Mixture => profiles[i].mixture[t],
    })
}

pub fn patient_clustering(
    profiles: &[PatientProfile],
    c: usize,
    seed: u64,
    space: ProfileSpace,
) -> Result<Clustering> {
    check_profiles(profiles, 1)?;
    let x = profile_matrix(profiles, space);
    Ok(kmeans(x.view(), c, seed, &KMeansOptions::default())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMetric {
    /// Distance; zero on the diagonal.
    #[default]
    Euclidean,
    /// Similarity; one on the diagonal.
    Cosine,
}

pub fn patient_similarity(
    profiles: &[PatientProfile],
    metric: SimilarityMetric,
    space: ProfileSpace,
) -> Result<Array2<f64>> {
    check_profiles(profiles, 2)?;
    let x = profile_matrix(profiles, space);
    let n = x.nrows();
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if metric == SimilarityMetric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(AnalysisError::ZeroVector(profiles[i].patient_id.clone()));
        }
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = match metric {
            SimilarityMetric::Euclidean => 0.0,
            SimilarityMetric::Cosine => 1.0,
        };
        for j in i + 1..n {
            let v = match metric {
                SimilarityMetric::Euclidean => x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                SimilarityMetric::Cosine => (x.row(i).dot(&x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0),
            };
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// n x 2 principal-component scores.
    pub coords: Array2<f64>,
    /// Set when the centered data has rank < 2 and the second column is zero.
    pub rank_deficient: bool,
}

/// Relative eigenvalue threshold below which a component counts as absent.
const RANK_TOL: f64 = 1e-10;

/// PCA onto the first two components of the mean-centered profile vectors.
/// Each component's sign makes its largest-magnitude loading positive.
pub fn project_2d(profiles: &[PatientProfile], space: ProfileSpace) -> Result<Projection> {
    let k = check_profiles(profiles, 2)?;
    if k < 2 {
        return Err(AnalysisError::TooFewTopics);
    }
    let x = profile_matrix(profiles, space);
    Ok(pca_2d(x.view()))
}

pub fn pca_2d(x: ArrayView2<f64>) -> Projection {
    let (n, k) = x.dim();
    let means: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, k, |i, j| x[[i, j]] - means[j]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut coords = Array2::zeros((n, 2));
    let mut rank_deficient = false;
    for (slot, &c) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[c];
        if lambda <= RANK_TOL * top || top == 0.0 {
            rank_deficient = true;
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best });
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for i in 0..n {
            coords[[i, slot]] = (0..k).map(|j| centered[(i, j)] * axis[j]).sum();
        }
    }
    if rank_deficient {
        log::warn!("profile matrix has rank < 2; second projection coordinate is zero");
    }
    Projection {
        coords,
        rank_deficient,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn idx(pairs: &[(&str, u8)]) -> Vec<(String, u8)> {
        pairs.iter().map(|(p, q)| (p.to_string(), *q)).collect()
    }

    fn profile(id: &str, mix: &[f64]) -> PatientProfile {
        PatientProfile::from_mixture(id, mix.to_vec()).unwrap()
    }

    #[test]
    fn mixture_mean_and_importance() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let p = patient_mixtures(w.view(), &idx(&[("a", 1), ("a", 2)])).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].mixture, vec![0.5, 0.5]);
        assert_eq!(p[0].importance, vec![50.0, 50.0]);

        let w = array![[0.2, 0.6, 0.2]];
        let p = patient_mixtures(w.view(), &idx(&[("b", 4)])).unwrap();
        assert_eq!(p[0].mixture, vec![0.2, 0.6, 0.2]);
    }

    #[test]
    fn mixture_errors() {
        let w = array![[0.0, 0.0]];
        assert!(matches!(
            patient_mixtures(w.view(), &idx(&[("z", 1)])),
            Err(AnalysisError::ZeroMixture(_))
        ));
        assert!(matches!(
            patient_mixtures(w.view(), &idx(&[])),
            Err(AnalysisError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn importance_stats() {
        let ps = vec![profile("a", &[1.0, 0.0]), profile("b", &[0.0, 1.0])];
        let s = topic_importance(&ps).unwrap();
        assert_eq!(s.per_topic[0].mean, 50.0);
        assert_eq!(s.per_topic[1].mean, 50.0);
        assert_eq!(s.per_topic[0].max, 100.0);
        assert_eq!(s.per_topic[0].q1, 25.0);

        let same = vec![profile("a", &[1.0, 3.0]); 4];
        let s = topic_importance(&same).unwrap();
        for t in &s.per_topic {
            assert_eq!(t.q1, t.median);
            assert_eq!(t.median, t.q3);
        }
        assert!(topic_importance(&[]).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 1.75);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[7.0], 0.25), 7.0);
    }

    #[test]
    fn identical_pair_shares_cluster() {
        let ps = vec![profile("a", &[1.0, 0.0]), profile("b", &[0.0, 1.0]), profile("c", &[1.0, 0.0])];
        let cl = patient_clustering(&ps, 2, 1, ProfileSpace::Importance).unwrap();
        assert_eq!(cl.assignments[0], cl.assignments[2]);
        assert_ne!(cl.assignments[0], cl.assignments[1]);
        assert!(patient_clustering(&ps, 4, 1, ProfileSpace::Importance).is_err());
    }

    #[test]
    fn similarity_basics() {
        let ps = vec![profile("a", &[1.0, 0.0]), profile("b", &[0.0, 1.0]), profile("c", &[1.0, 0.0])];
        let cos = patient_similarity(&ps, SimilarityMetric::Cosine, ProfileSpace::Mixture).unwrap();
        assert_eq!(cos[[0, 1]], 0.0);
        assert!((cos[[0, 2]] - 1.0).abs() < 1e-15);
        assert_eq!(cos[[1, 1]], 1.0);
        let eu = patient_similarity(&ps, SimilarityMetric::Euclidean, ProfileSpace::Importance).unwrap();
        assert_eq!(eu[[0, 2]], 0.0);
        assert_eq!(eu[[0, 0]], 0.0);

        let mut bad = ps.clone();
        bad[1].mixture = vec![0.0, 0.0];
        assert!(matches!(
            patient_similarity(&bad, SimilarityMetric::Cosine, ProfileSpace::Mixture),
            Err(AnalysisError::ZeroVector(_))
        ));
        assert!(patient_similarity(&ps[..1], SimilarityMetric::Cosine, ProfileSpace::Mixture).is_err());
    }

    #[test]
    fn triangle_inequality_on_sampled_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ps: Vec<PatientProfile> = (0..30)
            .map(|i| profile(&format!("p{i}"), &(0..12).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            .collect();
        let d = patient_similarity(&ps, SimilarityMetric::Euclidean, ProfileSpace::Importance).unwrap();
        for _ in 0..500 {
            let (i, j, k) = (rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..30));
            assert!(d[[i, k]] <= d[[i, j]] + d[[j, k]] + 1e-12);
        }
        for i in 0..30 {
            for j in 0..30 {
                assert!((d[[i, j]] - d[[j, i]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pca_preserves_centered_2d_geometry() {
        let x = array![[1.0, 2.0], [-3.0, 0.5], [2.0, -2.0], [0.0, -0.5]];
        let p = pca_2d(x.view());
        assert!(!p.rank_deficient);
        let dist = |m: &Array2<f64>, i: usize, j: usize| {
            ((m[[i, 0]] - m[[j, 0]]).powi(2) + (m[[i, 1]] - m[[j, 1]]).powi(2)).sqrt()
        };
        for i in 0..4 {
            for j in 0..4 {
                assert!((dist(&x, i, j) - dist(&p.coords, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_collinear_is_rank_deficient() {
        let x = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]];
        let p = pca_2d(x.view());
        assert!(p.rank_deficient);
        assert!(p.coords.column(1).iter().all(|&v| v == 0.0));
        assert!(p.coords.column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pca_contracts_distances_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ps: Vec<PatientProfile> = (0..94)
            .map(|i| profile(&format!("p{i}"), &(0..12).map(|_| rng.random::<f64>() + 0.01).collect::<Vec<_>>()))
            .collect();
        let p = project_2d(&ps, ProfileSpace::Importance).unwrap();
        let again = project_2d(&ps, ProfileSpace::Importance).unwrap();
        assert_eq!(p, again);
        let x = profile_matrix(&ps, ProfileSpace::Importance);
        for i in 0..94 {
            for j in i + 1..94 {
                let orig: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let proj = ((p.coords[[i, 0]] - p.coords[[j, 0]]).powi(2) + (p.coords[[i, 1]] - p.coords[[j, 1]]).powi(2)).sqrt();
                assert!(proj <= orig + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn importance_sums_to_100_and_is_scale_invariant(
            mix in prop::collection::vec(0.0f64..5.0, 2..14),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(mix.iter().sum::<f64>() > 1e-6);
            let p = profile("a", &mix);
            prop_assert!((p.importance.iter().sum::<f64>() - 100.0).abs() < 1e-6);
            let scaled: Vec<f64> = mix.iter().map(|m| m * scale).collect();
            let q = profile("a", &scaled);
            for (a, b) in p.importance.iter().zip(&q.importance) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn mixtures_commute_with_row_permutation(
            vals in prop::collection::vec(0.01f64..1.0, 30),
            perm_seed in any::<u64>(),
        ) {
            let w = Array2::from_shape_vec((10, 3), vals).unwrap();
            let index: Vec<(String, u8)> = (0..10).map(|r| (format!("p{}", r % 3), (r / 3 + 1) as u8)).collect();
            let mut order: Vec<usize> = (0..10).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..10).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let w2 = Array2::from_shape_fn((10, 3), |(r, c)| w[[order[r], c]]);
            let index2: Vec<(String, u8)> = order.iter().map(|&r| index[r].clone()).collect();
            prop_assert_eq!(
                patient_mixtures(w.view(), &index).unwrap(),
                patient_mixtures(w2.view(), &index2).unwrap()
            );
        }
    }
}
