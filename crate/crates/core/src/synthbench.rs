//! Synthetic corpora with planted paraphrase clusters, and the sampler
//! comparison run on them.
//!
//! Every cluster has a unit direction `u_c`. Queries and products of the
//! cluster are `sqrt(1 - b^2) u_c + b n` with `b` drawn from `[0, b_max]` and
//! `n` a random unit vector from a noise subspace private to the cluster and
//! orthogonal to every cluster direction. Each query is annotated with one
//! product of its cluster; all other same-cluster pairs are relevant but
//! unlabelled, i.e. planted false negatives.
//!
//! With `b_max^2 = (1 - intra) / 2`, same-cluster cosines are at least
//! `intra`. Cluster directions share a common component so that
//! `u_c . u_d = inter_max`; noise of different clusters is orthogonal, so
//! cross-cluster cosines are `sqrt(1 - b^2) sqrt(1 - b'^2) inter_max`.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::BatchContext;
use crate::corpus::{AnnotatedPair, Corpus};
use crate::error::{Error, Result};
use crate::fne::theta_indexed;
use crate::metrics::auroc;
use crate::rng::{stream_rng, StreamRng, SYNTH_STREAM};
use crate::sampler::{build_batches, SamplerConfig, SamplerKind, TrainBatch};
use crate::scorer::{cross_features, train_dataset, Dataset, TrainHyper};
use crate::store::{cosine, dot, norm, EmbeddingStore};

/// Slack allowed when verifying generated cosines against their bounds.
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_clusters: usize,
    pub queries_per_cluster: usize,
    pub products_per_cluster: usize,
    pub dim: usize,
    pub intra_cluster_cos: f64,
    pub inter_cluster_cos_max: f64,
    /// Annotated labels are drawn from `(1 - label_noise, 1]`.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// 4 clusters x 4 queries x 8 products in 16 dimensions, intra 0.9,
    /// inter 0.2.
    fn default() -> Self {
        Self {
            n_clusters: 4,
            queries_per_cluster: 4,
            products_per_cluster: 8,
            dim: 16,
            intra_cluster_cos: 0.9,
            inter_cluster_cos_max: 0.2,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn noise_radius(&self) -> f64 {
        ((1.0 - self.intra_cluster_cos) / 2.0).sqrt()
    }

    fn shared_component(&self) -> f64 {
        self.inter_cluster_cos_max
    }

    fn uses_shared_direction(&self) -> bool {
        self.shared_component() > 0.0 && self.n_clusters > 1
    }

    /// Dimension of each cluster's private noise subspace; 0 without noise.
    fn noise_dim(&self) -> usize {
        if self.noise_radius() == 0.0 {
            return 0;
        }
        let used = self.n_clusters + usize::from(self.uses_shared_direction());
        self.dim.saturating_sub(used) / self.n_clusters
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.queries_per_cluster == 0 || self.products_per_cluster == 0 {
            return Err(Error::Config(
                "cluster, query and product counts must be positive".into(),
            ));
        }
        if !(self.intra_cluster_cos > 0.0 && self.intra_cluster_cos <= 1.0) {
            return Err(Error::Config(format!(
                "intra_cluster_cos {} outside (0, 1]",
                self.intra_cluster_cos
            )));
        }
        if !(self.inter_cluster_cos_max >= 0.0
            && self.inter_cluster_cos_max < self.intra_cluster_cos)
        {
            return Err(Error::Config(format!(
                "inter_cluster_cos_max {} outside [0, intra_cluster_cos)",
                self.inter_cluster_cos_max
            )));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label_noise {} outside [0, 1)",
                self.label_noise
            )));
        }
        let needed = self.n_clusters
            + usize::from(self.uses_shared_direction())
            + if self.noise_radius() > 0.0 {
                self.n_clusters
            } else {
                0
            };
        if self.dim < needed {
            return Err(Error::Geometry(format!(
                "dimension {} too small: need at least {needed} for {} clusters; use a larger dim",
                self.dim, self.n_clusters
            )));
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct SynthData {
    pub store: EmbeddingStore,
    pub corpus: Corpus,
    /// Same-cluster (query, product) keys that are not annotated.
    pub ground_truth: BTreeSet<(String, String)>,
    pub query_cluster: Vec<usize>,
    pub product_cluster: Vec<usize>,
}

impl SynthData {
    pub fn is_planted_fn(&self, query_id: &str, product_id: &str) -> bool {
        self.ground_truth
            .contains(&(query_id.to_string(), product_id.to_string()))
    }

    /// Every unannotated (query, product) pair of the store, labelled with its
    /// true relevance: 1 for same-cluster pairs (the planted false negatives),
    /// 0 otherwise.
    pub fn heldout_pairs(&self) -> Vec<AnnotatedPair> {
        let annotated: HashSet<(&str, &str)> =
            self.corpus.pairs().iter().map(|p| p.key()).collect();
        let mut out = Vec::new();
        for (qi, q) in self.store.query_ids().iter().enumerate() {
            for (pi, p) in self.store.product_ids().iter().enumerate() {
                if annotated.contains(&(q.as_str(), p.as_str())) {
                    continue;
                }
                let label = if self.query_cluster[qi] == self.product_cluster[pi] {
                    1.0
                } else {
                    0.0
                };
                out.push(AnnotatedPair::new(q.clone(), p.clone(), label));
            }
        }
        out
    }
}

fn gaussian(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Projects `v` onto the orthogonal complement of `basis` (orthonormal) and
/// normalises it. `None` if nothing is left.
fn orthonormal_residual(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    // two passes of modified Gram-Schmidt for numerical orthogonality
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = norm(&v);
    (n > 1e-8).then(|| v.into_iter().map(|x| x / n).collect())
}

fn random_orthonormal(rng: &mut StreamRng, dim: usize, basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    for _ in 0..64 {
        if let Some(v) = orthonormal_residual(gaussian(rng, dim), basis) {
            return Ok(v);
        }
    }
    Err(Error::Geometry(format!(
        "could not draw a direction orthogonal to {} vectors in dimension {dim}; use a larger dim",
        basis.len()
    )))
}

/// Builds the synthetic store, annotated corpus and planted false negatives.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, SYNTH_STREAM);
    let rho = spec.shared_component();
    let b_max = spec.noise_radius();

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let shared = if spec.uses_shared_direction() {
        let g = random_orthonormal(&mut rng, spec.dim, &basis)?;
        basis.push(g.clone());
        Some(g)
    } else {
        None
    };
    let mut directions = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let o = random_orthonormal(&mut rng, spec.dim, &basis)?;
        basis.push(o.clone());
        let u: Vec<f64> = match &shared {
            Some(g) => g
                .iter()
                .zip(&o)
                .map(|(gi, oi)| rho.sqrt() * gi + (1.0 - rho).sqrt() * oi)
                .collect(),
            None => o,
        };
        directions.push(u);
    }
    let mut noise_spaces = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let mut space = Vec::with_capacity(spec.noise_dim());
        for _ in 0..spec.noise_dim() {
            let e = random_orthonormal(&mut rng, spec.dim, &basis)?;
            basis.push(e.clone());
            space.push(e);
        }
        noise_spaces.push(space);
    }

    let member = |rng: &mut StreamRng, c: usize| -> Result<Vec<f64>> {
        let u = &directions[c];
        if b_max == 0.0 {
            return Ok(u.clone());
        }
        let b = b_max * rng.random::<f64>();
        let a = (1.0 - b * b).sqrt();
        let mut n = vec![0.0; spec.dim];
        for e in &noise_spaces[c] {
            let z: f64 = rng.sample(StandardNormal);
            n.iter_mut().zip(e).for_each(|(x, y)| *x += z * y);
        }
        let len = norm(&n);
        if len == 0.0 {
            return Ok(u.clone());
        }
        Ok(u.iter()
            .zip(&n)
            .map(|(ui, ni)| a * ui + b * ni / len)
            .collect())
    };

    let mut queries = Vec::new();
    let mut products = Vec::new();
    let mut query_cluster = Vec::new();
    let mut product_cluster = Vec::new();
    for c in 0..spec.n_clusters {
        for m in 0..spec.queries_per_cluster {
            queries.push((format!("c{c}_q{m}"), member(&mut rng, c)?));
            query_cluster.push(c);
        }
        for m in 0..spec.products_per_cluster {
            products.push((format!("c{c}_p{m}"), member(&mut rng, c)?));
            product_cluster.push(c);
        }
    }
    verify_geometry(spec, &queries, &query_cluster, &products, &product_cluster)?;

    let mut pairs = Vec::new();
    for c in 0..spec.n_clusters {
        for m in 0..spec.queries_per_cluster {
            let label = 1.0 - spec.label_noise * rng.random::<f64>();
            pairs.push(AnnotatedPair::new(
                format!("c{c}_q{m}"),
                format!("c{c}_p{}", m % spec.products_per_cluster),
                label,
            ));
        }
    }
    let annotated: HashSet<(String, String)> = pairs
        .iter()
        .map(|p| (p.query_id.clone(), p.product_id.clone()))
        .collect();
    let mut ground_truth = BTreeSet::new();
    for c in 0..spec.n_clusters {
        for qm in 0..spec.queries_per_cluster {
            for pm in 0..spec.products_per_cluster {
                let key = (format!("c{c}_q{qm}"), format!("c{c}_p{pm}"));
                if !annotated.contains(&key) {
                    ground_truth.insert(key);
                }
            }
        }
    }

    Ok(SynthData {
        store: EmbeddingStore::from_rows(queries, products)?,
        corpus: Corpus::new(pairs)?,
        ground_truth,
        query_cluster,
        product_cluster,
    })
}

fn verify_geometry(
    spec: &SynthSpec,
    queries: &[(String, Vec<f64>)],
    query_cluster: &[usize],
    products: &[(String, Vec<f64>)],
    product_cluster: &[usize],
) -> Result<()> {
    let items: Vec<(&Vec<f64>, usize)> = queries
        .iter()
        .map(|q| &q.1)
        .zip(query_cluster.iter().copied())
        .chain(
            products
                .iter()
                .map(|p| &p.1)
                .zip(product_cluster.iter().copied()),
        )
        .collect();
    for (i, (a, ca)) in items.iter().enumerate() {
        for (b, cb) in &items[i + 1..] {
            let c = cosine(a, b)?;
            let ok = if ca == cb {
                c >= spec.intra_cluster_cos - GEOMETRY_TOLERANCE
            } else {
                c <= spec.inter_cluster_cos_max + GEOMETRY_TOLERANCE
            };
            if !ok {
                return Err(Error::Geometry(format!(
                    "generated cosine {c} violates the bounds; use a larger dim"
                )));
            }
        }
    }
    Ok(())
}

/// Settings of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub spec: SynthSpec,
    pub samplers: Vec<SamplerConfig>,
    pub trainer: TrainHyper,
    /// Each seed regenerates the data and reseeds sampler and trainer.
    pub seeds: Vec<u64>,
    pub batch_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            samplers: [SamplerKind::Vns, SamplerKind::Hns, SamplerKind::Bhns]
                .into_iter()
                .map(SamplerConfig::new)
                .collect(),
            trainer: TrainHyper::default(),
            seeds: (0..20).collect(),
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerBench {
    pub sampler: SamplerKind,
    pub k: usize,
    pub tau: f64,
    /// Mean over seeds of the fraction of emitted negatives that are planted
    /// false negatives.
    pub false_negative_selection_rate: f64,
    /// Mean assigned label over all planted false negatives selected across
    /// seeds; `None` for vns/hns or when none were selected.
    pub mean_pseudo_label_on_planted_fn: Option<f64>,
    /// Mean over seeds of held-out AUROC after training.
    pub auroc_after_training: f64,
    pub per_seed_fn_rate: Vec<f64>,
    pub per_seed_auroc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samplers: Vec<SamplerBench>,
    pub spec: SynthSpec,
    pub trainer: TrainHyper,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

/// One candidate considered for a query in a bench batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub seed: u64,
    pub batch: usize,
    pub query_id: String,
    pub product_id: String,
    pub sampler: SamplerKind,
    pub tau: f64,
    pub selected: bool,
    pub theta: f64,
    pub is_planted_fn: bool,
}

/// Training examples of a set of batches: annotated pairs with their labels
/// and sampled negatives with their assigned labels.
pub fn batch_examples(batches: &[TrainBatch]) -> Vec<crate::scorer::TrainExample> {
    batches
        .iter()
        .flat_map(|b| b.records())
        .map(|r| crate::scorer::TrainExample {
            query_id: r.query_id,
            product_id: r.product_id,
            label: r.label,
        })
        .collect()
}

/// Fraction of emitted negatives that are planted false negatives, plus the
/// assigned labels of those that are.
pub fn false_negative_selections(batches: &[TrainBatch], data: &SynthData) -> (f64, Vec<f64>) {
    let mut total = 0usize;
    let mut planted = Vec::new();
    for n in batches.iter().flat_map(|b| &b.negatives) {
        total += 1;
        if data.is_planted_fn(&n.query_id, &n.product_id) {
            planted.push(n.assigned_label);
        }
    }
    let rate = if total == 0 {
        0.0
    } else {
        planted.len() as f64 / total as f64
    };
    (rate, planted)
}

/// AUROC of a scorer trained on `batches` over the held-out pairs of `data`.
pub fn heldout_auroc(batches: &[TrainBatch], data: &SynthData, hyper: &TrainHyper) -> Result<f64> {
    let train = Dataset::from_examples(&batch_examples(batches), &data.store)?;
    let (params, _) = train_dataset(&train, data.store.dim(), hyper)?;
    let heldout = data.heldout_pairs();
    let mut scores = Vec::with_capacity(heldout.len());
    let mut labels = Vec::with_capacity(heldout.len());
    for p in &heldout {
        let q = data.store.query_index(&p.query_id)?;
        let pi = data.store.product_index(&p.product_id)?;
        let f = cross_features(data.store.query_vector(q), data.store.product_vector(pi))?;
        scores.push(params.score_features(&f));
        labels.push(p.label >= 0.5);
    }
    auroc(&scores, &labels)
}

fn pair_rows(
    seed: u64,
    batches: &[TrainBatch],
    data: &SynthData,
    cfg: &SamplerConfig,
) -> Result<Vec<PairRow>> {
    let store = &data.store;
    let mut rows = Vec::new();
    for batch in batches {
        let ctx = BatchContext::new(&batch.positives, store, cfg.positivity_threshold)?;
        let selected: HashSet<(&str, &str)> = batch
            .negatives
            .iter()
            .map(|n| (n.query_id.as_str(), n.product_id.as_str()))
            .collect();
        for &q in ctx.queries() {
            for p in ctx.candidate_pool(q) {
                let (qid, pid) = (&store.query_ids()[q], &store.product_ids()[p]);
                rows.push(PairRow {
                    seed,
                    batch: batch.index,
                    query_id: qid.clone(),
                    product_id: pid.clone(),
                    sampler: cfg.kind,
                    tau: cfg.tau,
                    selected: selected.contains(&(qid.as_str(), pid.as_str())),
                    theta: theta_indexed(q, p, &ctx, store, cfg.positivity_threshold).0,
                    is_planted_fn: data.is_planted_fn(qid, pid),
                });
            }
        }
    }
    Ok(rows)
}

/// Runs every sampler over every seed. When `rows` is given, every candidate
/// considered is appended to it.
pub fn run_bench_with_rows(
    cfg: &BenchConfig,
    mut rows: Option<&mut Vec<PairRow>>,
) -> Result<BenchReport> {
    if cfg.samplers.is_empty() {
        return Err(Error::Config("no samplers to benchmark".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("no seeds to benchmark".into()));
    }
    cfg.trainer.validate()?;
    for s in &cfg.samplers {
        s.validate()?;
    }

    let n = cfg.samplers.len();
    let mut rates = vec![Vec::new(); n];
    let mut aurocs = vec![Vec::new(); n];
    let mut planted_labels: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &seed in &cfg.seeds {
        let data = generate(&SynthSpec {
            seed,
            ..cfg.spec.clone()
        })?;
        for (i, sampler) in cfg.samplers.iter().enumerate() {
            let scfg = SamplerConfig {
                seed,
                ..sampler.clone()
            };
            let batches = build_batches(&data.corpus, &data.store, &scfg, cfg.batch_size)?;
            let (rate, labels) = false_negative_selections(&batches, &data);
            rates[i].push(rate);
            planted_labels[i].extend(labels);
            let hyper = TrainHyper {
                seed,
                ..cfg.trainer
            };
            aurocs[i].push(heldout_auroc(&batches, &data, &hyper)?);
            if let Some(rows) = rows.as_deref_mut() {
                rows.extend(pair_rows(seed, &batches, &data, &scfg)?);
            }
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let samplers = cfg
        .samplers
        .iter()
        .enumerate()
        .map(|(i, s)| SamplerBench {
            sampler: s.kind,
            k: s.k,
            tau: s.tau,
            false_negative_selection_rate: mean(&rates[i]),
            mean_pseudo_label_on_planted_fn: (s.kind == SamplerKind::Bhns
                && !planted_labels[i].is_empty())
            .then(|| mean(&planted_labels[i])),
            auroc_after_training: mean(&aurocs[i]),
            per_seed_fn_rate: rates[i].clone(),
            per_seed_auroc: aurocs[i].clone(),
        })
        .collect();
    Ok(BenchReport {
        samplers,
        spec: cfg.spec.clone(),
        trainer: cfg.trainer,
        batch_size: cfg.batch_size,
        seeds: cfg.seeds.clone(),
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    run_bench_with_rows(cfg, None)
}

/// Writes pair rows as CSV with a header.
pub fn write_pair_rows_csv<W: std::io::Write>(rows: &[PairRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "batch",
        "query",
        "product",
        "sampler",
        "tau",
        "selected",
        "theta",
        "is_planted_fn",
    ])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.batch.to_string(),
            r.query_id.clone(),
            r.product_id.clone(),
            r.sampler.to_string(),
            r.tau.to_string(),
            r.selected.to_string(),
            r.theta.to_string(),
            r.is_planted_fn.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
