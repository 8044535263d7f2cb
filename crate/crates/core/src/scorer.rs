//! Desk-scale relevance scorer: a logistic model over fixed query-product
//! cross features, trained by full-batch gradient descent on the mean
//! squared error against soft labels.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, INIT_STREAM};
use crate::store::{cosine, EmbeddingStore};

/// Name recorded in checkpoints for the feature layout of [`cross_features`].
pub const FEATURE_MAP: &str = "hadamard_absdiff_cos_v1";

/// Denominator floor used by [`grad_check`] when both gradients are tiny.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `[e_q * e_p (elementwise), |e_q - e_p| (elementwise), cos(e_q, e_p)]`,
/// of length `2d + 1`.
pub fn cross_features(e_q: &[f64], e_p: &[f64]) -> Result<Vec<f64>> {
    if e_q.len() != e_p.len() {
        return Err(Error::Domain(format!(
            "cross features of vectors with dimensions {} and {}",
            e_q.len(),
            e_p.len()
        )));
    }
    let mut f = Vec::with_capacity(2 * e_q.len() + 1);
    f.extend(e_q.iter().zip(e_p).map(|(a, b)| a * b));
    f.extend(e_q.iter().zip(e_p).map(|(a, b)| (a - b).abs()));
    f.push(cosine(e_q, e_p)?);
    Ok(f)
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl ScorerParams {
    /// All-zero parameters for embeddings of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; 2 * dim + 1],
            b: 0.0,
        }
    }

    /// Embedding dimension these parameters expect.
    pub fn dim(&self) -> usize {
        self.w.len().saturating_sub(1) / 2
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|x| x.is_finite())
    }

    fn logit(&self, features: &[f64]) -> f64 {
        self.w.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.b
    }

    /// Score of already-computed cross features.
    pub fn score_features(&self, features: &[f64]) -> f64 {
        sigmoid(self.logit(features))
    }

    /// `sigmoid(w . cross_features(e_q, e_p) + b)`.
    pub fn score(&self, e_q: &[f64], e_p: &[f64]) -> Result<f64> {
        if 2 * e_q.len() + 1 != self.w.len() {
            return Err(Error::Domain(format!(
                "scorer expects dimension {}, got {}",
                self.dim(),
                e_q.len()
            )));
        }
        Ok(self.score_features(&cross_features(e_q, e_p)?))
    }
}

/// Free-function form of [`ScorerParams::score`].
pub fn score(params: &ScorerParams, e_q: &[f64], e_p: &[f64]) -> Result<f64> {
    params.score(e_q, e_p)
}

/// A (query, product, target) triple for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query_id: String,
    pub product_id: String,
    pub label: f64,
}

/// Cross features and targets resolved against a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn from_examples(examples: &[TrainExample], store: &EmbeddingStore) -> Result<Self> {
        let mut features = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            let q = store.query_index(&ex.query_id)?;
            let p = store.product_index(&ex.product_id)?;
            features.push(cross_features(
                store.query_vector(q),
                store.product_vector(p),
            )?);
            labels.push(ex.label);
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 500,
            seed: 0,
            l2: 1e-4,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Loss after the last update.
    pub final_loss: f64,
    /// Loss at the start of each epoch.
    pub loss_curve: Vec<f64>,
    pub seed: u64,
    pub hyper: TrainHyper,
}

/// `mean((score - label)^2) + l2 * |w|^2`; the bias is not penalised.
pub fn loss(params: &ScorerParams, data: &Dataset, l2: f64) -> f64 {
    let n = data.len().max(1) as f64;
    let sse: f64 = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(f, y)| {
            let r = params.score_features(f) - y;
            r * r
        })
        .sum();
    sse / n + l2 * params.w.iter().map(|w| w * w).sum::<f64>()
}

/// Loss and its analytic gradient, accumulated in dataset order.
pub fn loss_and_grad(params: &ScorerParams, data: &Dataset, l2: f64) -> (f64, ScorerParams) {
    let n = data.len().max(1) as f64;
    let mut grad = ScorerParams {
        w: params.w.iter().map(|w| 2.0 * l2 * w).collect(),
        b: 0.0,
    };
    let mut sse = 0.0;
    for (f, y) in data.features.iter().zip(&data.labels) {
        let s = params.score_features(f);
        let r = s - y;
        sse += r * r;
        // d/dz of (s - y)^2 / n with s = sigmoid(z)
        let dz = 2.0 * r * s * (1.0 - s) / n;
        for (g, x) in grad.w.iter_mut().zip(f) {
            *g += dz * x;
        }
        grad.b += dz;
    }
    let penalty = l2 * params.w.iter().map(|w| w * w).sum::<f64>();
    (sse / n + penalty, grad)
}

/// Fits a scorer by full-batch gradient descent from a small seeded
/// initialisation. Aborts if parameters or loss become non-finite.
pub fn train_dataset(
    data: &Dataset,
    dim: usize,
    hyper: &TrainHyper,
) -> Result<(ScorerParams, TrainReport)> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let mut rng = stream_rng(hyper.seed, INIT_STREAM);
    let mut params = ScorerParams {
        w: (0..2 * dim + 1)
            .map(|_| rng.random_range(-0.01..0.01))
            .collect(),
        b: 0.0,
    };
    let mut curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let (l, grad) = loss_and_grad(&params, data, hyper.l2);
        if !l.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "loss",
            });
        }
        curve.push(l);
        for (w, g) in params.w.iter_mut().zip(&grad.w) {
            *w -= hyper.lr * g;
        }
        params.b -= hyper.lr * grad.b;
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "parameters",
            });
        }
    }
    let final_loss = loss(&params, data, hyper.l2);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: hyper.epochs,
            what: "loss",
        });
    }
    let report = TrainReport {
        epochs: hyper.epochs,
        final_loss,
        loss_curve: curve,
        seed: hyper.seed,
        hyper: *hyper,
    };
    Ok((params, report))
}

/// Resolves `examples` against `store` and trains on them.
pub fn train(
    examples: &[TrainExample],
    store: &EmbeddingStore,
    hyper: &TrainHyper,
) -> Result<(ScorerParams, TrainReport)> {
    hyper.validate()?;
    let data = Dataset::from_examples(examples, store)?;
    train_dataset(&data, store.dim(), hyper)
}

/// Largest coordinate-wise relative error between the analytic gradient and
/// central finite differences of [`loss`]. The denominator of each ratio is
/// `max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check(params: &ScorerParams, data: &Dataset, l2: f64, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Domain(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (_, analytic) = loss_and_grad(params, data, l2);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.w.len() {
        probe.w[i] = params.w[i] + epsilon;
        let up = loss(&probe, data, l2);
        probe.w[i] = params.w[i] - epsilon;
        let down = loss(&probe, data, l2);
        probe.w[i] = params.w[i];
        worst = worst.max(rel(analytic.w[i], (up - down) / (2.0 * epsilon)));
    }
    probe.b = params.b + epsilon;
    let up = loss(&probe, data, l2);
    probe.b = params.b - epsilon;
    let down = loss(&probe, data, l2);
    worst = worst.max(rel(analytic.b, (up - down) / (2.0 * epsilon)));
    Ok(worst)
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub w: Vec<f64>,
    pub b: f64,
    pub feature_map: String,
}

impl Checkpoint {
    pub fn from_params(params: &ScorerParams) -> Self {
        Self {
            d: params.dim(),
            w: params.w.clone(),
            b: params.b,
            feature_map: FEATURE_MAP.to_string(),
        }
    }

    pub fn into_params(self) -> Result<ScorerParams> {
        if self.feature_map != FEATURE_MAP {
            return Err(Error::Config(format!(
                "unsupported feature map `{}` (expected `{FEATURE_MAP}`)",
                self.feature_map
            )));
        }
        if self.w.len() != 2 * self.d + 1 {
            return Err(Error::Config(format!(
                "checkpoint has {} weights for d = {}, expected {}",
                self.w.len(),
                self.d,
                2 * self.d + 1
            )));
        }
        let params = ScorerParams {
            w: self.w,
            b: self.b,
        };
        if !params.is_finite() {
            return Err(Error::Config(
                "checkpoint contains non-finite parameters".into(),
            ));
        }
        Ok(params)
    }

    /// Reads a checkpoint, ignoring any extra top-level fields.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
