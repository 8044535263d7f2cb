//! Annotated relevance data: soft-label mapping, per-key averaging and
//! random-pair augmentation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, AUGMENT_STREAM};
use crate::store::EmbeddingStore;

/// Human relevance judgement classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    StronglyRelevant,
    Relevant,
    SomewhatRelevant,
    NotRelevant,
    Offensive,
}

impl FromStr for Category {
    type Err = Error;

    /// Case-, space- and punctuation-insensitive: `"Strongly Relevant"`,
    /// `"strongly_relevant"` and `"StronglyRelevant"` all parse.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "stronglyrelevant" => Ok(Category::StronglyRelevant),
            "relevant" => Ok(Category::Relevant),
            "somewhatrelevant" => Ok(Category::SomewhatRelevant),
            "notrelevant" => Ok(Category::NotRelevant),
            "offensive" => Ok(Category::Offensive),
            _ => Err(Error::InvalidCorpus(format!("unknown category `{s}`"))),
        }
    }
}

/// Which soft-label table to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Train,
    Eval,
}

/// Soft label for a judgement class. Evaluation data uses a coarser table
/// that merges the two relevant classes.
pub fn map_category(category: Category, mode: LabelMode) -> f64 {
    use Category::*;
    match (mode, category) {
        (_, StronglyRelevant) => 1.0,
        (LabelMode::Train, Relevant) => 0.5,
        (LabelMode::Eval, Relevant) => 1.0,
        (LabelMode::Train, SomewhatRelevant) => 0.2,
        (LabelMode::Eval, SomewhatRelevant) => 0.1,
        (_, NotRelevant | Offensive) => 0.1,
    }
}

/// Mean of the scores given by several annotators to one pair.
pub fn average_annotations(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Domain("cannot average an empty score list".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Domain(format!("score {bad} outside [0, 1]")));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Annotated,
    RandomAugmented,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Annotated => "annotated",
            Provenance::RandomAugmented => "random_augmented",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub query_id: String,
    pub product_id: String,
    pub label: f64,
    pub provenance: Provenance,
}

impl AnnotatedPair {
    pub fn new(query_id: impl Into<String>, product_id: impl Into<String>, label: f64) -> Self {
        Self {
            query_id: query_id.into(),
            product_id: product_id.into(),
            label,
            provenance: Provenance::Annotated,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.query_id, &self.product_id)
    }
}

/// A set of labelled (query, product) pairs with unique keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pairs: Vec<AnnotatedPair>,
}

#[derive(Debug, Deserialize)]
struct AnnotationLine {
    query_id: String,
    product_id: String,
    #[serde(default)]
    label: Option<f64>,
    #[serde(default)]
    category: Option<String>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate keys and labels outside `[0, 1]`.
    pub fn new(pairs: Vec<AnnotatedPair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !(0.0..=1.0).contains(&p.label) {
                return Err(Error::InvalidCorpus(format!(
                    "label {} for ({}, {}) outside [0, 1]",
                    p.label, p.query_id, p.product_id
                )));
            }
            if !seen.insert(p.key()) {
                return Err(Error::InvalidCorpus(format!(
                    "duplicate pair ({}, {})",
                    p.query_id, p.product_id
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Reads a JSON-lines annotation file. Each line carries either a numeric
    /// `label` in `[0, 1]` or a `category` mapped with `mode`; repeated keys
    /// are averaged. Pairs keep the order of their first occurrence.
    pub fn from_jsonl(path: impl AsRef<Path>, mode: LabelMode) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut order: Vec<(String, String)> = Vec::new();
        let mut scores: HashMap<(String, String), Vec<f64>> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let rec: AnnotationLine =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let score = match (rec.label, rec.category.as_deref()) {
                (Some(label), None) => {
                    if !(0.0..=1.0).contains(&label) {
                        return Err(parse_err(format!("label {label} outside [0, 1]")));
                    }
                    label
                }
                (None, Some(cat)) => {
                    let cat = cat.parse().map_err(|e: Error| parse_err(e.to_string()))?;
                    map_category(cat, mode)
                }
                (Some(_), Some(_)) => {
                    return Err(parse_err("both `label` and `category` given".into()))
                }
                (None, None) => return Err(parse_err("missing `label` or `category`".into())),
            };
            let key = (rec.query_id, rec.product_id);
            let entry = scores.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(score);
        }
        let pairs = order
            .into_iter()
            .map(|key| {
                let label = average_annotations(&scores[&key])?;
                Ok(AnnotatedPair::new(key.0, key.1, label))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(pairs)
    }

    /// Writes the corpus as JSON lines with numeric labels and provenance.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Checks that every id resolves in `store`.
    pub fn validate_against(&self, store: &EmbeddingStore) -> Result<()> {
        for p in &self.pairs {
            store.query_index(&p.query_id)?;
            store.product_index(&p.product_id)?;
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[AnnotatedPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.provenance == provenance)
            .count()
    }
}

/// Appends `floor(fraction * |corpus|)` random (query, product) pairs with
/// label 0, drawing query and product independently and uniformly from the
/// whole store. Draws that hit an existing key are repeated, giving up after
/// `100 * n` attempts.
pub fn augment_random_pairs(
    corpus: &Corpus,
    store: &EmbeddingStore,
    fraction: f64,
    seed: u64,
) -> Result<Corpus> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::Augmentation(format!(
            "fraction {fraction} must be >= 0"
        )));
    }
    let n = (fraction * corpus.len() as f64).floor() as usize;
    if n == 0 {
        return Ok(corpus.clone());
    }
    if store.num_queries() == 0 || store.num_products() == 0 {
        return Err(Error::Augmentation(
            "store must contain at least one query and one product".into(),
        ));
    }

    let mut taken: HashSet<(String, String)> = corpus
        .pairs
        .iter()
        .map(|p| (p.query_id.clone(), p.product_id.clone()))
        .collect();
    let mut rng = stream_rng(seed, AUGMENT_STREAM);
    let mut pairs = corpus.pairs.clone();
    let max_attempts = 100 * n;
    let mut attempts = 0;
    while pairs.len() < corpus.len() + n {
        if attempts == max_attempts {
            return Err(Error::Augmentation(format!(
                "placed {} of {n} random pairs after {max_attempts} draws; store too small",
                pairs.len() - corpus.len()
            )));
        }
        attempts += 1;
        let q = &store.query_ids()[rng.random_range(0..store.num_queries())];
        let p = &store.product_ids()[rng.random_range(0..store.num_products())];
        let key = (q.clone(), p.clone());
        if taken.insert(key) {
            pairs.push(AnnotatedPair {
                query_id: q.clone(),
                product_id: p.clone(),
                label: 0.0,
                provenance: Provenance::RandomAugmented,
            });
        }
    }
    Ok(Corpus { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn store(nq: usize, np: usize) -> EmbeddingStore {
        let rows = |prefix: &str, n: usize| {
            (0..n)
                .map(|i| (format!("{prefix}{i}"), vec![1.0, i as f64]))
                .collect::<Vec<_>>()
        };
        EmbeddingStore::from_rows(rows("q", nq), rows("p", np)).unwrap()
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| AnnotatedPair::new(format!("q{i}"), format!("p{i}"), 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn category_tables() {
        use Category::*;
        assert_eq!(map_category(StronglyRelevant, LabelMode::Train), 1.0);
        assert_eq!(map_category(Relevant, LabelMode::Train), 0.5);
        assert_eq!(map_category(SomewhatRelevant, LabelMode::Train), 0.2);
        assert_eq!(map_category(NotRelevant, LabelMode::Train), 0.1);
        assert_eq!(map_category(Offensive, LabelMode::Train), 0.1);
        assert_eq!(map_category(StronglyRelevant, LabelMode::Eval), 1.0);
        assert_eq!(map_category(Relevant, LabelMode::Eval), 1.0);
        assert_eq!(map_category(SomewhatRelevant, LabelMode::Eval), 0.1);
        assert_eq!(map_category(NotRelevant, LabelMode::Eval), 0.1);
        assert_eq!(map_category(Offensive, LabelMode::Eval), 0.1);
    }

    #[test]
    fn category_parsing_is_lenient() {
        assert_eq!(
            "Strongly Relevant".parse::<Category>().unwrap(),
            Category::StronglyRelevant
        );
        assert_eq!(
            "not_relevant".parse::<Category>().unwrap(),
            Category::NotRelevant
        );
        assert!("meh".parse::<Category>().is_err());
    }

    #[test]
    fn averaging() {
        assert_eq!(average_annotations(&[1.0, 0.5]).unwrap(), 0.75);
        assert_eq!(average_annotations(&[0.2]).unwrap(), 0.2);
        assert!((average_annotations(&[0.1, 0.1, 0.1]).unwrap() - 0.1).abs() < 1e-15);
        assert!(average_annotations(&[]).is_err());
        assert!(average_annotations(&[1.5]).is_err());
    }

    #[test]
    fn jsonl_ingest_maps_and_averages() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"query_id":"q0","product_id":"p0","category":"Strongly Relevant","annotator":"a"}}"#).unwrap();
        writeln!(f, r#"{{"query_id":"q1","product_id":"p1","label":0.2}}"#).unwrap();
        writeln!(
            f,
            r#"{{"query_id":"q0","product_id":"p0","category":"Relevant"}}"#
        )
        .unwrap();
        let c = Corpus::from_jsonl(f.path(), LabelMode::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs()[0].label, 0.75);
        assert_eq!(c.pairs()[1].label, 0.2);
        let e = Corpus::from_jsonl(f.path(), LabelMode::Eval).unwrap();
        assert_eq!(e.pairs()[0].label, 1.0);
    }

    #[test]
    fn jsonl_rejects_out_of_range_and_ambiguous_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"query_id":"q0","product_id":"p0","label":1.5}}"#).unwrap();
        assert!(matches!(
            Corpus::from_jsonl(f.path(), LabelMode::Train),
            Err(Error::Parse { line: 1, .. })
        ));
        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, r#"{{"query_id":"q0","product_id":"p0","label":0.5}}"#).unwrap();
        writeln!(
            g,
            r#"{{"query_id":"q0","product_id":"p1","label":0.5,"category":"Relevant"}}"#
        )
        .unwrap();
        assert!(matches!(
            Corpus::from_jsonl(g.path(), LabelMode::Train),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn corpus_rejects_duplicate_keys() {
        let pairs = vec![
            AnnotatedPair::new("q", "p", 1.0),
            AnnotatedPair::new("q", "p", 0.5),
        ];
        assert!(Corpus::new(pairs).is_err());
    }

    #[test]
    fn augmentation_adds_twenty_percent_zeros() {
        let out = augment_random_pairs(&corpus(10), &store(10, 10), 0.2, 3).unwrap();
        assert_eq!(out.len(), 12);
        let added = &out.pairs()[10..];
        assert!(added
            .iter()
            .all(|p| p.label == 0.0 && p.provenance == Provenance::RandomAugmented));
        assert_eq!(out.count(Provenance::RandomAugmented), 2);
    }

    #[test]
    fn augmentation_zero_fraction_is_identity() {
        let c = corpus(10);
        assert_eq!(augment_random_pairs(&c, &store(10, 10), 0.0, 3).unwrap(), c);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let (c, s) = (corpus(10), store(10, 10));
        let a = augment_random_pairs(&c, &s, 0.5, 11).unwrap();
        let b = augment_random_pairs(&c, &s, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let other = augment_random_pairs(&c, &s, 0.5, 12).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn augmentation_fails_when_keys_exhausted() {
        // 2x2 store: 4 possible keys, 2 taken, 3 requested.
        let c = Corpus::new(vec![
            AnnotatedPair::new("q0", "p0", 1.0),
            AnnotatedPair::new("q1", "p1", 1.0),
        ])
        .unwrap();
        let err = augment_random_pairs(&c, &store(2, 2), 1.5, 0).unwrap_err();
        assert!(matches!(err, Error::Augmentation(_)));
    }

    #[test]
    fn augmentation_rejects_negative_fraction() {
        assert!(augment_random_pairs(&corpus(3), &store(3, 3), -0.1, 0).is_err());
    }

    #[test]
    fn validate_against_store() {
        let s = store(2, 2);
        assert!(corpus(2).validate_against(&s).is_ok());
        assert!(matches!(
            corpus(3).validate_against(&s),
            Err(Error::UnknownQuery(_))
        ));
    }
}
