//! Nonnegative matrix factorization `X ~ W H` under the Frobenius objective,
//! solved with Lee-Seung multiplicative updates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::representations::{DocTermMatrix, Scheme};

/// Denominator floor in the multiplicative updates.
pub const EPSILON: f64 = 1e-12;
/// Floor applied to NNDSVD seeds so no factor entry starts locked at zero.
pub const NNDSVD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FactorizationError {
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("input matrix contains a non-finite entry")]
    NonFinite,
    #[error("input matrix contains a negative entry")]
    Negative,
    #[error("shape mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown init method {0:?} (expected nndsvd or random)")]
    UnknownInit(String),
}

pub type Result<T> = std::result::Result<T, FactorizationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Nndsvd,
    Random,
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::Nndsvd => "nndsvd",
            Init::Random => "random",
        })
    }
}

impl FromStr for Init {
    type Err = FactorizationError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nndsvd" => Ok(Init::Nndsvd),
            "random" => Ok(Init::Random),
            _ => Err(FactorizationError::UnknownInit(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfOptions {
    pub max_iter: usize,
    /// Stop once the relative loss decrease of one iteration drops below this.
    pub tol: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions {
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
            init: Init::Nndsvd,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub k: usize,
    /// documents x topics
    pub w: Array2<f64>,
    /// topics x terms
    pub h: Array2<f64>,
    /// Frobenius reconstruction error after each iteration.
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    pub n_iter: usize,
    pub scheme: Option<Scheme>,
}

impl TopicModel {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// `||X - WH||_F / ||X||_F`.
    pub fn relative_error(&self, x: &Array2<f64>) -> f64 {
        frobenius_residual(x, &self.w, &self.h) / frobenius(x)
    }
}

fn validate(x: ArrayView2<f64>, k: usize) -> Result<()> {
    let max = x.nrows().min(x.ncols());
    if k == 0 || k > max {
        return Err(FactorizationError::KOutOfRange { k, max });
    }
    for &v in x.iter() {
        if !v.is_finite() {
            return Err(FactorizationError::NonFinite);
        }
        if v < 0.0 {
            return Err(FactorizationError::Negative);
        }
    }
    Ok(())
}

pub fn frobenius(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_residual(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let wh = w.dot(h);
    x.iter()
        .zip(wh.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Initial factors for `x`.
pub fn init_factors(
    x: &Array2<f64>,
    k: usize,
    init: Init,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    validate(x.view(), k)?;
    Ok(match init {
        Init::Nndsvd => nndsvd(x, k),
        Init::Random => random_init(x, k, seed),
    })
}

fn random_init(x: &Array2<f64>, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mean = x.mean().unwrap_or(0.0);
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Array2::from_shape_simple_fn((x.nrows(), k), || rng.random::<f64>() * scale);
    let h = Array2::from_shape_simple_fn((k, x.ncols()), || rng.random::<f64>() * scale);
    (w, h)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Nonnegative double SVD seeding (Boutsidis & Gallopoulos).
fn nndsvd(x: &Array2<f64>, k: usize) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = x.dim();
    let dm = DMatrix::from_fn(n, m, |i, j| x[[i, j]]);
    let svd = dm.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut w = Array2::zeros((n, k));
    let mut h = Array2::zeros((k, m));
    for (j, &c) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[c];
        let ucol: Vec<f64> = u.column(c).iter().copied().collect();
        let vrow: Vec<f64> = vt.row(c).iter().copied().collect();
        let (wu, hv): (Vec<f64>, Vec<f64>) = if j == 0 {
            // Leading singular pair of a nonnegative matrix has a single sign.
            let su = s.sqrt();
            (
                ucol.iter().map(|v| su * v.abs()).collect(),
                vrow.iter().map(|v| su * v.abs()).collect(),
            )
        } else {
            let pos = |v: &[f64]| v.iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
            let neg = |v: &[f64]| v.iter().map(|a| (-a).max(0.0)).collect::<Vec<_>>();
            let (xp, xn, yp, yn) = (pos(&ucol), neg(&ucol), pos(&vrow), neg(&vrow));
            let (nxp, nxn, nyp, nyn) = (norm(&xp), norm(&xn), norm(&yp), norm(&yn));
            let (mp, mn) = (nxp * nyp, nxn * nyn);
            let (a, b, na, nb, sigma) = if mp > mn {
                (xp, yp, nxp, nyp, mp)
            } else {
                (xn, yn, nxn, nyn, mn)
            };
            if sigma == 0.0 {
                (vec![0.0; n], vec![0.0; m])
            } else {
                let l = (s * sigma).sqrt();
                (
                    a.iter().map(|v| l * v / na).collect(),
                    b.iter().map(|v| l * v / nb).collect(),
                )
            }
        };
        for i in 0..n {
            w[[i, j]] = wu[i];
        }
        for t in 0..m {
            h[[j, t]] = hv[t];
        }
    }
    w.mapv_inplace(|v| v.max(NNDSVD_FLOOR));
    h.mapv_inplace(|v| v.max(NNDSVD_FLOOR));
    (w, h)
}

fn update_h(x: &Array2<f64>, w: &Array2<f64>, h: &mut Array2<f64>) {
    let numer = w.t().dot(x);
    let denom = w.t().dot(w).dot(&*h);
    ndarray::Zip::from(h)
        .and(&numer)
        .and(&denom)
        .for_each(|h, &n, &d| *h *= n / (d + EPSILON));
}

fn update_w(x: &Array2<f64>, w: &mut Array2<f64>, h: &Array2<f64>) {
    let numer = x.dot(&h.t());
    let denom = w.dot(&h.dot(&h.t()));
    ndarray::Zip::from(w)
        .and(&numer)
        .and(&denom)
        .for_each(|w, &n, &d| *w *= n / (d + EPSILON));
}

pub fn fit_nmf(x: &DocTermMatrix, k: usize, opts: &NmfOptions) -> Result<TopicModel> {
    let mut model = fit_nmf_dense(&x.to_dense(), k, opts)?;
    model.scheme = Some(x.scheme);
    Ok(model)
}

/// Multiplicative-update NMF on a dense matrix.
pub fn fit_nmf_dense(x: &Array2<f64>, k: usize, opts: &NmfOptions) -> Result<TopicModel> {
    let (mut w, mut h) = init_factors(x, k, opts.init, opts.seed)?;
    let mut loss_trace = Vec::with_capacity(opts.max_iter);
    let mut prev = frobenius_residual(x, &w, &h);
    for _ in 0..opts.max_iter {
        update_h(x, &w, &mut h);
        update_w(x, &mut w, &h);
        let loss = frobenius_residual(x, &w, &h);
        loss_trace.push(loss);
        if !loss.is_finite() {
            return Err(FactorizationError::NonFinite);
        }
        if loss == 0.0 || (prev - loss) / prev < opts.tol {
            break;
        }
        prev = loss;
    }
    log::debug!(
        "nmf k={k} stopped after {} iterations, loss {:.6e}",
        loss_trace.len(),
        loss_trace.last().copied().unwrap_or(prev)
    );
    Ok(TopicModel {
        k,
        n_iter: loss_trace.len(),
        w,
        h,
        loss_trace,
        seed: opts.seed,
        scheme: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            max_iter: 2000,
            tol: 1e-10,
        }
    }
}

/// Projects new rows onto fixed topics by updating `W` only.
pub fn transform(h: &Array2<f64>, x_new: &Array2<f64>, opts: &TransformOptions) -> Result<Array2<f64>> {
    if x_new.ncols() != h.ncols() {
        return Err(FactorizationError::DimensionMismatch(format!(
            "X has {} columns, H has {}",
            x_new.ncols(),
            h.ncols()
        )));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(FactorizationError::NonFinite);
    }
    if x_new.iter().any(|&v| v < 0.0) {
        return Err(FactorizationError::Negative);
    }
    let k = h.nrows();
    let scale = (x_new.mean().unwrap_or(0.0) / k as f64).sqrt();
    let mut w = Array2::from_elem((x_new.nrows(), k), scale);
    let mut prev = frobenius_residual(x_new, &w, h);
    for _ in 0..opts.max_iter {
        update_w(x_new, &mut w, h);
        let loss = frobenius_residual(x_new, &w, h);
        if loss == 0.0 || prev == 0.0 || (prev - loss) / prev < opts.tol {
            break;
        }
        prev = loss;
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub label: Option<String>,
    /// `(term, weight)` in descending weight order.
    pub words: Vec<(String, f64)>,
}

impl Topic {
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|(t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSummary {
    pub topics: Vec<Topic>,
}

impl TopicSummary {
    /// Builds a summary from ranked word lists, e.g. a published topic table.
    /// Weights are the reverse rank (`T, T-1, ..., 1`).
    pub fn from_word_lists<S: AsRef<str>>(lists: &[Vec<S>]) -> Self {
        let topics = lists
            .iter()
            .map(|ws| {
                let t = ws.len();
                Topic {
                    label: None,
                    words: ws
                        .iter()
                        .enumerate()
                        .map(|(r, w)| (w.as_ref().to_string(), (t - r) as f64))
                        .collect(),
                }
            })
            .collect();
        TopicSummary { topics }
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Highest-weight `t` terms of every topic; ties resolve lexicographically.
pub fn top_words(model: &TopicModel, vocab: &Vocabulary, t: usize) -> TopicSummary {
    let depth = t.min(vocab.len());
    let topics = model
        .h
        .rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| {
                row[b]
                    .total_cmp(&row[a])
                    .then_with(|| vocab.term(a).cmp(vocab.term(b)))
            });
            Topic {
                label: None,
                words: idx
                    .into_iter()
                    .take(depth)
                    .map(|i| (vocab.term(i).to_string(), row[i]))
                    .collect(),
            }
        })
        .collect();
    TopicSummary { topics }
}
