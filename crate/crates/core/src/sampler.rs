//! In-batch negative samplers.
//!
//! * `vns`: `k` products drawn uniformly without replacement from the
//!   candidate pool, labelled 0.
//! * `hns`: the `k` candidates most cosine-similar to the query, labelled 0.
//! * `bhns`: candidates ranked by the regularized score
//!   `(1 - theta)^tau * cos(q, p)`, where theta is the false-negative
//!   estimate of the pair; the selected `k` are labelled with their theta.
//!
//! Top-k ties are broken by ascending product id.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::BatchContext;
use crate::corpus::{AnnotatedPair, Corpus};
use crate::error::{Error, Result};
use crate::fne::theta_indexed;
use crate::rng::{query_stream, stream_rng, StreamRng, SHUFFLE_STREAM};
use crate::store::EmbeddingStore;

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_TAU: f64 = 2.0;
pub const DEFAULT_POSITIVITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Vns,
    Hns,
    Bhns,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Vns => "vns",
            SamplerKind::Hns => "hns",
            SamplerKind::Bhns => "bhns",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vns" => Ok(SamplerKind::Vns),
            "hns" => Ok(SamplerKind::Hns),
            "bhns" => Ok(SamplerKind::Bhns),
            other => Err(Error::Config(format!(
                "unknown sampler `{other}` (expected vns, hns or bhns)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Negatives per query.
    pub k: usize,
    /// Exponent of the false-negative down-weighting; bhns only.
    pub tau: f64,
    pub seed: u64,
    /// Minimum label for an annotated pair to count as positive.
    pub positivity_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Bhns,
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            seed: 0,
            positivity_threshold: DEFAULT_POSITIVITY_THRESHOLD,
        }
    }
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau {} must be finite and >= 0",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.positivity_threshold) {
            return Err(Error::Config(format!(
                "positivity threshold {} outside [0, 1]",
                self.positivity_threshold
            )));
        }
        Ok(())
    }
}

/// A negative emitted for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledNegative {
    pub query_id: String,
    pub product_id: String,
    pub source: SamplerKind,
    /// Training label: 0 for vns/hns, theta for bhns.
    pub assigned_label: f64,
    /// False-negative estimate; left at 0 by vns and hns.
    pub theta: f64,
    /// Score the candidate was ranked by; the raw cosine for vns and hns.
    pub regularized_score: f64,
    /// 1-based position in the selection.
    pub rank: usize,
}

/// `(1 - theta)^tau * sim`.
pub fn regularize(theta: f64, tau: f64, sim: f64) -> f64 {
    (1.0 - theta).powf(tau) * sim
}

/// Regularized hard-negative score of `(query_id, product_id)`.
pub fn regularized_score(
    query_id: &str,
    product_id: &str,
    theta: f64,
    tau: f64,
    store: &EmbeddingStore,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} outside [0, 1]")));
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Domain(format!("tau {tau} must be >= 0")));
    }
    let q = store.query_index(query_id)?;
    let p = store.product_index(product_id)?;
    Ok(regularize(theta, tau, store.query_product_cosine(q, p)))
}

struct Scored {
    product: usize,
    score: f64,
    theta: f64,
}

fn by_score_then_id<'a>(store: &'a EmbeddingStore) -> impl Fn(&Scored, &Scored) -> Ordering + 'a {
    move |a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or_else(|| b.score.total_cmp(&a.score))
            .then_with(|| store.product_ids()[a.product].cmp(&store.product_ids()[b.product]))
    }
}

/// Keeps the `k` best candidates, sorted best first.
fn top_k(mut scored: Vec<Scored>, k: usize, store: &EmbeddingStore) -> Vec<Scored> {
    let cmp = by_score_then_id(store);
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, &cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(&cmp);
    scored
}

fn pool_for(query: usize, ctx: &BatchContext, store: &EmbeddingStore) -> Result<Vec<usize>> {
    let pool = ctx.candidate_pool(query);
    if pool.is_empty() {
        return Err(Error::EmptyPool {
            query_id: store.query_ids()[query].clone(),
        });
    }
    Ok(pool)
}

fn emit(
    query: usize,
    picked: Vec<Scored>,
    kind: SamplerKind,
    store: &EmbeddingStore,
) -> Vec<SampledNegative> {
    picked
        .into_iter()
        .enumerate()
        .map(|(i, s)| SampledNegative {
            query_id: store.query_ids()[query].clone(),
            product_id: store.product_ids()[s.product].clone(),
            source: kind,
            assigned_label: if kind == SamplerKind::Bhns {
                s.theta
            } else {
                0.0
            },
            theta: s.theta,
            regularized_score: s.score,
            rank: i + 1,
        })
        .collect()
}

/// Uniform draw of `min(k, |pool|)` distinct candidates.
pub fn sample_vns(
    query_id: &str,
    ctx: &BatchContext,
    cfg: &SamplerConfig,
    store: &EmbeddingStore,
    rng: &mut StreamRng,
) -> Result<Vec<SampledNegative>> {
    cfg.validate()?;
    let q = store.query_index(query_id)?;
    let pool = pool_for(q, ctx, store)?;
    let picked = index::sample(rng, pool.len(), cfg.k.min(pool.len()))
        .into_iter()
        .map(|i| Scored {
            product: pool[i],
            score: store.query_product_cosine(q, pool[i]),
            theta: 0.0,
        })
        .collect();
    Ok(emit(q, picked, SamplerKind::Vns, store))
}

/// The `k` candidates with the highest query-product cosine.
pub fn sample_hns(
    query_id: &str,
    ctx: &BatchContext,
    cfg: &SamplerConfig,
    store: &EmbeddingStore,
) -> Result<Vec<SampledNegative>> {
    cfg.validate()?;
    let q = store.query_index(query_id)?;
    let scored = pool_for(q, ctx, store)?
        .into_iter()
        .map(|p| Scored {
            product: p,
            score: store.query_product_cosine(q, p),
            theta: 0.0,
        })
        .collect();
    Ok(emit(
        q,
        top_k(scored, cfg.k, store),
        SamplerKind::Hns,
        store,
    ))
}

/// Theta for every candidate, top-k by regularized score, selected
/// negatives labelled with their theta.
pub fn sample_bhns(
    query_id: &str,
    ctx: &BatchContext,
    cfg: &SamplerConfig,
    store: &EmbeddingStore,
) -> Result<Vec<SampledNegative>> {
    cfg.validate()?;
    let q = store.query_index(query_id)?;
    let scored = pool_for(q, ctx, store)?
        .into_iter()
        .map(|p| {
            let (theta, _) = theta_indexed(q, p, ctx, store, cfg.positivity_threshold);
            Scored {
                product: p,
                score: regularize(theta, cfg.tau, store.query_product_cosine(q, p)),
                theta,
            }
        })
        .collect();
    Ok(emit(
        q,
        top_k(scored, cfg.k, store),
        SamplerKind::Bhns,
        store,
    ))
}

/// Dispatches on `cfg.kind`. `rng` is only consumed by vns.
pub fn sample(
    query_id: &str,
    ctx: &BatchContext,
    cfg: &SamplerConfig,
    store: &EmbeddingStore,
    rng: &mut StreamRng,
) -> Result<Vec<SampledNegative>> {
    match cfg.kind {
        SamplerKind::Vns => sample_vns(query_id, ctx, cfg, store, rng),
        SamplerKind::Hns => sample_hns(query_id, ctx, cfg, store),
        SamplerKind::Bhns => sample_bhns(query_id, ctx, cfg, store),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerWarning {
    pub batch: usize,
    pub query_id: String,
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for SamplerWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "batch {}: query `{}` has {} candidate(s), {} requested",
            self.batch, self.query_id, self.available, self.requested
        )
    }
}

/// Annotated pairs of a batch plus the negatives sampled for its queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub index: usize,
    pub positives: Vec<AnnotatedPair>,
    pub negatives: Vec<SampledNegative>,
    pub warnings: Vec<SamplerWarning>,
}

/// Shuffles the corpus into batches of `batch_size` (the last may be
/// smaller) and samples negatives for every distinct query of each batch.
///
/// A query whose pool is smaller than `k` (possibly empty) gets what exists
/// and a warning instead of failing the batch.
pub fn build_batches(
    corpus: &Corpus,
    store: &EmbeddingStore,
    cfg: &SamplerConfig,
    batch_size: usize,
) -> Result<Vec<TrainBatch>> {
    cfg.validate()?;
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be at least 2"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidCorpus("cannot batch an empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM));

    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let positives: Vec<AnnotatedPair> =
            chunk.iter().map(|&i| corpus.pairs()[i].clone()).collect();
        let ctx = BatchContext::new(&positives, store, cfg.positivity_threshold)?;
        let mut negatives = Vec::new();
        let mut warnings = Vec::new();
        for (pos, &q) in ctx.queries().iter().enumerate() {
            let query_id = &store.query_ids()[q];
            let mut rng = stream_rng(cfg.seed, query_stream(b, pos));
            let drawn = match sample(query_id, &ctx, cfg, store, &mut rng) {
                Ok(drawn) => drawn,
                Err(Error::EmptyPool { .. }) => Vec::new(),
                Err(e) => return Err(e),
            };
            if drawn.len() < cfg.k {
                warnings.push(SamplerWarning {
                    batch: b,
                    query_id: query_id.clone(),
                    requested: cfg.k,
                    available: drawn.len(),
                });
            }
            negatives.extend(drawn);
        }
        batches.push(TrainBatch {
            index: b,
            positives,
            negatives,
            warnings,
        });
    }
    Ok(batches)
}

/// Where a batch line came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Positive,
    Vns,
    Hns,
    Bhns,
}

impl From<SamplerKind> for Source {
    fn from(kind: SamplerKind) -> Self {
        match kind {
            SamplerKind::Vns => Source::Vns,
            SamplerKind::Hns => Source::Hns,
            SamplerKind::Bhns => Source::Bhns,
        }
    }
}

/// One line of the batch JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub query_id: String,
    pub product_id: String,
    pub label: f64,
    pub source: Source,
    pub theta: Option<f64>,
    pub reg_score: Option<f64>,
    pub rank: Option<usize>,
}

impl TrainBatch {
    /// Annotated pairs first, in batch order, then negatives per query.
    pub fn records(&self) -> Vec<BatchRecord> {
        let positives = self.positives.iter().map(|p| BatchRecord {
            batch: self.index,
            query_id: p.query_id.clone(),
            product_id: p.product_id.clone(),
            label: p.label,
            source: Source::Positive,
            theta: None,
            reg_score: None,
            rank: None,
        });
        let negatives = self.negatives.iter().map(|n| BatchRecord {
            batch: self.index,
            query_id: n.query_id.clone(),
            product_id: n.product_id.clone(),
            label: n.assigned_label,
            source: n.source.into(),
            theta: Some(n.theta),
            reg_score: Some(n.regularized_score),
            rank: Some(n.rank),
        });
        positives.chain(negatives).collect()
    }
}

/// Serializes batches to JSON lines.
pub fn batches_to_jsonl(batches: &[TrainBatch]) -> Result<String> {
    let mut out = String::new();
    for batch in batches {
        for rec in batch.records() {
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_batch_records(path: impl AsRef<Path>) -> Result<Vec<BatchRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BatchRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&rec.label) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("label {} outside [0, 1]", rec.label),
            });
        }
        records.push(rec);
    }
    Ok(records)
}
