use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bhns_core::corpus::{augment_random_pairs, Corpus, LabelMode, Provenance};
use bhns_core::metrics::{evaluate, Binarization, MetricsConfig, MetricsReport, ScoredPair};
use bhns_core::sampler::{
    batches_to_jsonl, build_batches, read_batch_records, SamplerConfig, SamplerKind,
};
use bhns_core::scorer::{self, Checkpoint, TrainExample, TrainHyper, TrainReport};
use bhns_core::synthbench::{self, BenchConfig, BenchReport, SynthSpec};
use bhns_core::EmbeddingStore;
use serde::Serialize;

use crate::config::{usage, FlatConfig, UsageError};
use crate::{Command, Common, StoreArgs};

const DEFAULT_AUGMENT_FRAC: f64 = 0.2;
const DEFAULT_BATCH_SIZE: usize = 32;
const DEFAULT_BENCH_BATCH_SIZE: usize = 16;
const DEFAULT_BENCH_SEEDS: u64 = 20;
const SEED_ENV: &str = "BHNS_SEED";

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn is_usage(error: &anyhow::Error) -> bool {
    error.chain().any(|cause| {
        cause.downcast_ref::<UsageError>().is_some()
            || cause
                .downcast_ref::<bhns_core::Error>()
                .is_some_and(bhns_core::Error::is_validation)
    })
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = if is_usage(&error) { 2 } else { 1 };
        Failure { code, error }
    }
}

/// The fully resolved settings of a run, embedded in every artifact.
#[derive(Debug, Default, Serialize)]
struct RunConfig {
    command: &'static str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    queries: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    products: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_mode: Option<LabelMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    augment_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainHyper>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samplers: Option<Vec<SamplerConfig>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pairs_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    export_dir: Option<PathBuf>,
}

struct Resolver {
    file: FlatConfig,
    seed: u64,
}

impl Resolver {
    fn new(common: &Common) -> Result<Self> {
        let file = match &common.config {
            Some(path) => FlatConfig::load(path)?,
            None => FlatConfig::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(raw) => Some(
                raw.trim()
                    .parse::<u64>()
                    .map_err(|e| usage(format!("{SEED_ENV}=`{raw}`: {e}")))?,
            ),
            Err(_) => None,
        };
        let seed = match common.seed {
            Some(s) => s,
            None => file.get("seed")?.or(env_seed).unwrap_or(0),
        };
        Ok(Self { file, seed })
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let path: PathBuf = self.file.require(flag, key)?;
        if !path.exists() {
            return Err(usage(format!(
                "--{}: {} does not exist",
                key.replace('_', "-"),
                path.display()
            )));
        }
        Ok(path)
    }

    fn out_path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        Ok(match flag {
            Some(p) => Some(p),
            None => self.file.get(key)?,
        })
    }

    fn store(&self, args: StoreArgs) -> Result<(PathBuf, PathBuf, EmbeddingStore)> {
        let queries = self.path(args.queries, "queries")?;
        let products = self.path(args.products, "products")?;
        let store = EmbeddingStore::load(&queries, &products)?;
        Ok((queries, products, store))
    }

    fn label_mode(&self, flag: Option<String>, default: LabelMode) -> Result<LabelMode> {
        let raw: Option<String> = match flag {
            Some(v) => Some(v),
            None => self.file.get("label_mode")?,
        };
        match raw.as_deref().map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("train") => Ok(LabelMode::Train),
            Some("eval") => Ok(LabelMode::Eval),
            Some(other) => Err(usage(format!(
                "unknown label mode `{other}` (expected train or eval)"
            ))),
        }
    }

    fn augment_frac(&self, flag: Option<f64>, default: f64) -> Result<f64> {
        let frac = self.file.pick(flag, "augment_frac", default)?;
        if !(frac >= 0.0 && frac.is_finite()) {
            return Err(usage(format!("--augment-frac {frac} must be >= 0")));
        }
        Ok(frac)
    }

    fn positive<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr + PartialOrd + Default + std::fmt::Display + Copy,
        T::Err: std::fmt::Display,
    {
        let value = self.file.pick(flag, key, default)?;
        if value.partial_cmp(&T::default()) != Some(std::cmp::Ordering::Greater) {
            return Err(usage(format!(
                "--{} must be positive, got {value}",
                key.replace('_', "-")
            )));
        }
        Ok(value)
    }

    fn trainer(
        &self,
        lr: Option<f64>,
        epochs: Option<usize>,
        l2: Option<f64>,
    ) -> Result<TrainHyper> {
        let d = TrainHyper::default();
        let hyper = TrainHyper {
            lr: self.file.pick(lr, "lr", d.lr)?,
            epochs: self.file.pick(epochs, "epochs", d.epochs)?,
            l2: self.file.pick(l2, "l2", d.l2)?,
            seed: self.seed,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    fn k(&self, flag: Option<u64>) -> Result<usize> {
        let k: usize =
            self.positive(flag.map(|k| k as usize), "k", bhns_core::sampler::DEFAULT_K)?;
        Ok(k)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(value)?).context("writing to stdout")
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest {
            common,
            store,
            annotations,
            augment_frac,
            label_mode,
            out,
        } => ingest(&common, store, annotations, augment_frac, label_mode, out)
            .map_err(Failure::from),
        Command::Sample { .. } => sample(command).map_err(Failure::from),
        Command::Train { .. } => train(command).map_err(Failure::from),
        Command::Eval { .. } => eval(command),
        Command::Bench { .. } => bench(command).map_err(Failure::from),
    }
}

fn load_corpus(
    path: &Path,
    mode: LabelMode,
    store: &EmbeddingStore,
    augment_frac: f64,
    seed: u64,
) -> Result<Corpus> {
    let corpus = Corpus::from_jsonl(path, mode)?;
    corpus.validate_against(store)?;
    Ok(augment_random_pairs(&corpus, store, augment_frac, seed)?)
}

#[derive(Serialize)]
struct IngestSummary {
    run_config: RunConfig,
    dim: usize,
    n_queries: usize,
    n_products: usize,
    n_pairs: usize,
    n_annotated: usize,
    n_augmented: usize,
    label_histogram: BTreeMap<String, usize>,
}

fn ingest(
    common: &Common,
    store_args: StoreArgs,
    annotations: Option<PathBuf>,
    augment_frac: Option<f64>,
    label_mode: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let r = Resolver::new(common)?;
    let (queries, products, store) = r.store(store_args)?;
    let annotations = r.path(annotations, "annotations")?;
    let mode = r.label_mode(label_mode, LabelMode::Train)?;
    let frac = r.augment_frac(augment_frac, DEFAULT_AUGMENT_FRAC)?;
    let out = r.out_path(out, "out")?;
    let corpus = load_corpus(&annotations, mode, &store, frac, r.seed)?;

    let mut label_histogram = BTreeMap::new();
    for p in corpus.pairs() {
        *label_histogram
            .entry(format!("{:.4}", p.label))
            .or_insert(0) += 1;
    }
    if let Some(out) = &out {
        corpus.write_jsonl(out)?;
    }
    print_json(&IngestSummary {
        run_config: RunConfig {
            command: "ingest",
            seed: r.seed,
            queries: Some(queries),
            products: Some(products),
            annotations: Some(annotations),
            out,
            label_mode: Some(mode),
            augment_frac: Some(frac),
            ..Default::default()
        },
        dim: store.dim(),
        n_queries: store.num_queries(),
        n_products: store.num_products(),
        n_pairs: corpus.len(),
        n_annotated: corpus.count(Provenance::Annotated),
        n_augmented: corpus.count(Provenance::RandomAugmented),
        label_histogram,
    })
}

#[derive(Serialize)]
struct SampleManifest {
    run_config: RunConfig,
    n_batches: usize,
    n_positive_records: usize,
    n_negative_records: usize,
    warnings: Vec<String>,
}

fn sample(command: Command) -> Result<()> {
    let Command::Sample {
        common,
        store,
        annotations,
        sampler,
        k,
        tau,
        batch_size,
        augment_frac,
        label_mode,
        threshold,
        out_dir,
    } = command
    else {
        unreachable!()
    };
    let r = Resolver::new(&common)?;
    let (queries, products, store) = r.store(store)?;
    let annotations = r.path(annotations, "annotations")?;
    let out_dir: PathBuf = r.file.require(out_dir, "out_dir")?;
    let mode = r.label_mode(label_mode, LabelMode::Train)?;
    let frac = r.augment_frac(augment_frac, DEFAULT_AUGMENT_FRAC)?;
    let cfg = SamplerConfig {
        kind: r.file.pick(sampler, "sampler", SamplerKind::Bhns)?,
        k: r.k(k)?,
        tau: r.file.pick(tau, "tau", bhns_core::sampler::DEFAULT_TAU)?,
        seed: r.seed,
        positivity_threshold: r.file.pick(
            threshold,
            "threshold",
            bhns_core::sampler::DEFAULT_POSITIVITY_THRESHOLD,
        )?,
    };
    cfg.validate()?;
    let batch_size = r.file.pick(batch_size, "batch_size", DEFAULT_BATCH_SIZE)?;

    let corpus = load_corpus(&annotations, mode, &store, frac, r.seed)?;
    let batches = build_batches(&corpus, &store, &cfg, batch_size)?;

    let warnings: Vec<String> = batches
        .iter()
        .flat_map(|b| b.warnings.iter().map(ToString::to_string))
        .collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let batches_path = out_dir.join("batches.jsonl");
    fs::write(&batches_path, batches_to_jsonl(&batches)?)
        .with_context(|| format!("writing {}", batches_path.display()))?;
    write_json(
        &out_dir.join("run.json"),
        &SampleManifest {
            run_config: RunConfig {
                command: "sample",
                seed: r.seed,
                queries: Some(queries),
                products: Some(products),
                annotations: Some(annotations),
                out: Some(out_dir),
                label_mode: Some(mode),
                augment_frac: Some(frac),
                sampler: Some(cfg),
                batch_size: Some(batch_size),
                ..Default::default()
            },
            n_batches: batches.len(),
            n_positive_records: batches.iter().map(|b| b.positives.len()).sum(),
            n_negative_records: batches.iter().map(|b| b.negatives.len()).sum(),
            warnings,
        },
    )
}

#[derive(Serialize)]
struct CheckpointFile {
    #[serde(flatten)]
    checkpoint: Checkpoint,
    run_config: RunConfig,
    report: TrainReport,
}

fn train(command: Command) -> Result<()> {
    let Command::Train {
        common,
        store,
        batches,
        lr,
        epochs,
        l2,
        out,
    } = command
    else {
        unreachable!()
    };
    let r = Resolver::new(&common)?;
    let (queries, products, store) = r.store(store)?;
    let batches = r.path(batches, "batches")?;
    let out: PathBuf = r.file.require(out, "out")?;
    let hyper = r.trainer(lr, epochs, l2)?;

    let examples: Vec<TrainExample> = read_batch_records(&batches)?
        .into_iter()
        .map(|rec| TrainExample {
            query_id: rec.query_id,
            product_id: rec.product_id,
            label: rec.label,
        })
        .collect();
    let (params, report) = scorer::train(&examples, &store, &hyper)?;
    write_json(
        &out,
        &CheckpointFile {
            checkpoint: Checkpoint::from_params(&params),
            run_config: RunConfig {
                command: "train",
                seed: r.seed,
                queries: Some(queries),
                products: Some(products),
                batches: Some(batches),
                out: Some(out.clone()),
                trainer: Some(hyper),
                ..Default::default()
            },
            report,
        },
    )
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: MetricsReport,
    run_config: RunConfig,
}

fn parse_binarization(raw: &str) -> Result<Binarization> {
    if raw.eq_ignore_ascii_case("median") {
        return Ok(Binarization::Median);
    }
    raw.parse::<f64>()
        .map(Binarization::Threshold)
        .map_err(|_| {
            usage(format!(
                "--auroc-binarize `{raw}`: expected a number or `median`"
            ))
        })
}

fn eval(command: Command) -> Result<(), Failure> {
    let Command::Eval {
        common,
        store,
        annotations,
        checkpoint,
        cutoffs,
        augment_frac,
        label_mode,
        auroc_binarize,
        mrr_threshold,
        out,
    } = command
    else {
        unreachable!()
    };
    let output = (|| -> Result<(EvalOutput, Option<PathBuf>)> {
        let r = Resolver::new(&common)?;
        let (queries, products, store) = r.store(store)?;
        let annotations = r.path(annotations, "annotations")?;
        let checkpoint_path = r.path(checkpoint, "checkpoint")?;
        let out = r.out_path(out, "out")?;
        let mode = r.label_mode(label_mode, LabelMode::Eval)?;
        let frac = r.augment_frac(augment_frac, 0.0)?;
        let defaults = MetricsConfig::default();
        let cutoffs = match cutoffs {
            Some(c) => c.0,
            None => match r.file.get::<crate::config::CommaList<usize>>("cutoffs")? {
                Some(c) => c.0,
                None => defaults.cutoffs.clone(),
            },
        };
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(usage(
                "--cutoffs must be a non-empty list of positive integers".into(),
            ));
        }
        let auroc_binarization = match auroc_binarize {
            Some(raw) => parse_binarization(&raw)?,
            None => match r.file.get::<String>("auroc_binarize")? {
                Some(raw) => parse_binarization(&raw)?,
                None => defaults.auroc_binarization,
            },
        };
        let metrics_cfg = MetricsConfig {
            cutoffs,
            auroc_binarization,
            mrr_threshold: r
                .file
                .pick(mrr_threshold, "mrr_threshold", defaults.mrr_threshold)?,
        };

        let params = Checkpoint::load(&checkpoint_path)?.into_params()?;
        if params.dim() != store.dim() {
            return Err(usage(format!(
                "checkpoint dimension {} does not match embedding dimension {}",
                params.dim(),
                store.dim()
            )));
        }
        let corpus = load_corpus(&annotations, mode, &store, frac, r.seed)?;
        let pairs = corpus
            .pairs()
            .iter()
            .map(|p| {
                let q = store.query_index(&p.query_id)?;
                let pi = store.product_index(&p.product_id)?;
                Ok(ScoredPair {
                    query_id: p.query_id.clone(),
                    product_id: p.product_id.clone(),
                    score: params.score(store.query_vector(q), store.product_vector(pi))?,
                    label: p.label,
                })
            })
            .collect::<bhns_core::Result<Vec<_>>>()?;
        let report = evaluate(&pairs, &metrics_cfg);
        Ok((
            EvalOutput {
                report,
                run_config: RunConfig {
                    command: "eval",
                    seed: r.seed,
                    queries: Some(queries),
                    products: Some(products),
                    annotations: Some(annotations),
                    checkpoint: Some(checkpoint_path),
                    out: out.clone(),
                    label_mode: Some(mode),
                    augment_frac: Some(frac),
                    metrics: Some(metrics_cfg),
                    ..Default::default()
                },
            },
            out,
        ))
    })()
    .map_err(Failure::from)?;

    let (output, out) = output;
    match &out {
        Some(path) => write_json(path, &output).map_err(Failure::from)?,
        None => print_json(&output).map_err(Failure::from)?,
    }
    if output.report.errors.is_empty() {
        return Ok(());
    }
    let detail: Vec<String> = output
        .report
        .errors
        .iter()
        .map(|(metric, message)| format!("{metric}: {message}"))
        .collect();
    Err(Failure {
        code: 1,
        error: anyhow::anyhow!("some metrics could not be computed ({})", detail.join("; ")),
    })
}

#[derive(Serialize)]
struct BenchOutput {
    run_config: RunConfig,
    report: BenchReport,
}

fn bench(command: Command) -> Result<()> {
    let Command::Bench {
        common,
        samplers,
        seeds,
        k,
        tau,
        batch_size,
        n_clusters,
        queries_per_cluster,
        products_per_cluster,
        dim,
        intra_cos,
        inter_cos,
        label_noise,
        lr,
        epochs,
        l2,
        out,
        pairs_csv,
        export_dir,
    } = command
    else {
        unreachable!()
    };
    let r = Resolver::new(&common)?;
    let kinds = match samplers {
        Some(list) => list.0,
        None => match r
            .file
            .get::<crate::config::CommaList<SamplerKind>>("samplers")?
        {
            Some(list) => list.0,
            None => vec![SamplerKind::Vns, SamplerKind::Hns, SamplerKind::Bhns],
        },
    };
    if kinds.is_empty() {
        return Err(usage("--samplers must name at least one sampler".into()));
    }
    let n_seeds: u64 = r.positive(seeds, "seeds", DEFAULT_BENCH_SEEDS)?;
    let k = r.k(k)?;
    let tau = r.file.pick(tau, "tau", bhns_core::sampler::DEFAULT_TAU)?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_clusters: r.file.pick(n_clusters, "n_clusters", d.n_clusters)?,
        queries_per_cluster: r.file.pick(
            queries_per_cluster,
            "queries_per_cluster",
            d.queries_per_cluster,
        )?,
        products_per_cluster: r.file.pick(
            products_per_cluster,
            "products_per_cluster",
            d.products_per_cluster,
        )?,
        dim: r.file.pick(dim, "dim", d.dim)?,
        intra_cluster_cos: r.file.pick(intra_cos, "intra_cos", d.intra_cluster_cos)?,
        inter_cluster_cos_max: r
            .file
            .pick(inter_cos, "inter_cos", d.inter_cluster_cos_max)?,
        label_noise: r.file.pick(label_noise, "label_noise", d.label_noise)?,
        seed: r.seed,
    };
    spec.validate()?;
    let cfg = BenchConfig {
        spec: spec.clone(),
        samplers: kinds
            .iter()
            .map(|&kind| SamplerConfig {
                k,
                tau,
                ..SamplerConfig::new(kind)
            })
            .collect(),
        trainer: r.trainer(lr, epochs, l2)?,
        seeds: (r.seed..r.seed + n_seeds).collect(),
        batch_size: r
            .file
            .pick(batch_size, "batch_size", DEFAULT_BENCH_BATCH_SIZE)?,
    };
    let out = r.out_path(out, "out")?;
    let pairs_csv = r.out_path(pairs_csv, "pairs_csv")?;
    let export_dir = r.out_path(export_dir, "export_dir")?;

    if let Some(dir) = &export_dir {
        export_fixture(dir, &spec)?;
    }
    let mut rows = Vec::new();
    let report = synthbench::run_bench_with_rows(&cfg, pairs_csv.as_ref().map(|_| &mut rows))?;
    if let Some(path) = &pairs_csv {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        synthbench::write_pair_rows_csv(&rows, std::io::BufWriter::new(file))?;
    }
    let output = BenchOutput {
        run_config: RunConfig {
            command: "bench",
            seed: r.seed,
            out: out.clone(),
            batch_size: Some(cfg.batch_size),
            trainer: Some(cfg.trainer),
            synth: Some(spec),
            samplers: Some(cfg.samplers.clone()),
            seeds: Some(cfg.seeds.clone()),
            pairs_csv,
            export_dir,
            ..Default::default()
        },
        report,
    };
    match &out {
        Some(path) => write_json(path, &output),
        None => print_json(&output),
    }
}

/// Writes the synthetic store, its annotated pairs and the relabelled
/// held-out pairs in the formats the other commands read.
fn export_fixture(dir: &Path, spec: &SynthSpec) -> Result<()> {
    let data = synthbench::generate(spec)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    data.store
        .write(dir.join("queries.tsv"), dir.join("products.tsv"))?;
    data.corpus.write_jsonl(dir.join("train.jsonl"))?;
    Corpus::new(data.heldout_pairs())?.write_jsonl(dir.join("heldout.jsonl"))?;
    Ok(())
}
