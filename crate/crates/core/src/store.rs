//! Frozen query and product embeddings plus the cosine primitive every
//! sampler is built on.
//!
//! File format, one file per namespace: `id<TAB>v1,v2,...,vd`, UTF-8,
//! lines starting with `#` (and blank lines) are skipped. The dimension is
//! taken from the first record.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Absolute slack tolerated before clamping a cosine back into `[-1, 1]`.
const COSINE_CLAMP_WINDOW: f64 = 1e-9;

/// Dot product in ascending index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_with_norms(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    let raw = dot(a, b) / (norm_a * norm_b);
    debug_assert!(
        raw.abs() <= 1.0 + COSINE_CLAMP_WINDOW,
        "cosine overshoot {raw} beyond clamp window"
    );
    raw.clamp(-1.0, 1.0)
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`.
///
/// Products and sums are evaluated in an order that makes the result exactly
/// symmetric in its arguments. Floating-point overshoot past +/-1 is clamped.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine of a zero-norm vector".into()));
    }
    Ok(cosine_with_norms(a, b, na, nb))
}

/// `max(0, cosine(a, b))`, a similarity usable as a probability weight.
pub fn clamped_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(cosine(a, b)?.max(0.0))
}

#[derive(Debug, Clone, Default)]
struct Namespace {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl Namespace {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.vectors[i * dim..(i + 1) * dim]
    }
}

/// Immutable store of query and product embeddings sharing one dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    queries: Namespace,
    products: Namespace,
}

/// One parsed embedding record, tagged with its source line.
type Record = (usize, String, Vec<f64>);

fn parse_embedding_file(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (id, values) = trimmed
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>v1,v2,...`".into()))?;
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let vector = values
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid number `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push((line_no, id.to_string(), vector));
    }
    Ok(records)
}

fn build_namespace(path: &Path, records: Vec<Record>, dim: usize) -> Result<Namespace> {
    let mut ns = Namespace::default();
    for (line, id, vector) in records {
        if vector.len() != dim {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line,
                expected: dim,
                found: vector.len(),
            });
        }
        if ns.index.contains_key(&id) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
        let n = norm(&vector);
        if n == 0.0 {
            return Err(Error::ZeroVector {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
        ns.index.insert(id.clone(), ns.ids.len());
        ns.ids.push(id);
        ns.vectors.extend_from_slice(&vector);
        ns.norms.push(n);
    }
    Ok(ns)
}

impl EmbeddingStore {
    /// Loads a store from a query embedding file and a product embedding file.
    pub fn load(query_path: impl AsRef<Path>, product_path: impl AsRef<Path>) -> Result<Self> {
        let (qp, pp) = (query_path.as_ref(), product_path.as_ref());
        let q_records = parse_embedding_file(qp)?;
        let p_records = parse_embedding_file(pp)?;
        let dim = q_records
            .first()
            .or(p_records.first())
            .map(|r| r.2.len())
            .ok_or_else(|| {
                Error::InvalidStore(format!(
                    "no embeddings in {} or {}",
                    qp.display(),
                    pp.display()
                ))
            })?;
        let queries = build_namespace(qp, q_records, dim)?;
        let products = build_namespace(pp, p_records, dim)?;
        Ok(Self {
            dim,
            queries,
            products,
        })
    }

    /// Builds a store from in-memory rows, enforcing the same invariants as
    /// [`EmbeddingStore::load`].
    pub fn from_rows(
        queries: Vec<(String, Vec<f64>)>,
        products: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let dim = queries
            .first()
            .or(products.first())
            .map(|r| r.1.len())
            .ok_or_else(|| Error::InvalidStore("no embeddings".into()))?;
        if dim == 0 {
            return Err(Error::InvalidStore("dimension must be at least 1".into()));
        }
        if queries
            .iter()
            .chain(&products)
            .any(|(_, v)| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidStore("non-finite embedding value".into()));
        }
        let to_records = |rows: Vec<(String, Vec<f64>)>| -> Vec<Record> {
            rows.into_iter()
                .enumerate()
                .map(|(i, (id, v))| (i + 1, id, v))
                .collect()
        };
        let queries = build_namespace(Path::new("<queries>"), to_records(queries), dim)?;
        let products = build_namespace(Path::new("<products>"), to_records(products), dim)?;
        Ok(Self {
            dim,
            queries,
            products,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    pub fn query_ids(&self) -> &[String] {
        &self.queries.ids
    }

    pub fn product_ids(&self) -> &[String] {
        &self.products.ids
    }

    pub fn query_index(&self, id: &str) -> Result<usize> {
        self.queries
            .index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownQuery(id.to_string()))
    }

    pub fn product_index(&self, id: &str) -> Result<usize> {
        self.products
            .index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownProduct(id.to_string()))
    }

    pub fn query_vector(&self, idx: usize) -> &[f64] {
        self.queries.row(idx, self.dim)
    }

    pub fn product_vector(&self, idx: usize) -> &[f64] {
        self.products.row(idx, self.dim)
    }

    /// Cosine between two queries, by index.
    pub fn query_query_cosine(&self, a: usize, b: usize) -> f64 {
        cosine_with_norms(
            self.query_vector(a),
            self.query_vector(b),
            self.queries.norms[a],
            self.queries.norms[b],
        )
    }

    /// Cosine between a query and a product, by index.
    pub fn query_product_cosine(&self, q: usize, p: usize) -> f64 {
        cosine_with_norms(
            self.query_vector(q),
            self.product_vector(p),
            self.queries.norms[q],
            self.products.norms[p],
        )
    }

    /// Writes both namespaces in the embedding file format.
    pub fn write(
        &self,
        query_path: impl AsRef<Path>,
        product_path: impl AsRef<Path>,
    ) -> Result<()> {
        write_namespace(query_path.as_ref(), &self.queries, self.dim)?;
        write_namespace(product_path.as_ref(), &self.products, self.dim)
    }
}

fn write_namespace(path: &Path, ns: &Namespace, dim: usize) -> Result<()> {
    let mut out = Vec::new();
    for (i, id) in ns.ids.iter().enumerate() {
        let row: Vec<String> = ns.row(i, dim).iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{id}\t{}", row.join(",")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_queries() {
        let q = file_with("# header\nq1\t1,0\nq2\t0,1\n");
        let p = file_with("p1\t0.5,0.5\n");
        let store = EmbeddingStore::load(q.path(), p.path()).unwrap();
        assert_eq!(store.num_queries(), 2);
        assert_eq!(store.dim(), 2);
        assert_eq!(store.query_ids(), ["q1", "q2"]);
        assert_eq!(store.query_vector(1), [0.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let q = file_with("q1\t1,0\nq2\t1,0,0\n");
        let p = file_with("");
        let err = EmbeddingStore::load(q.path(), p.path()).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                line: 2,
                expected: 2,
                found: 3,
                ..
            }
        ));
    }

    #[test]
    fn empty_product_file_is_valid() {
        let q = file_with("q1\t1,0\n");
        let p = file_with("");
        let store = EmbeddingStore::load(q.path(), p.path()).unwrap();
        assert_eq!(store.num_products(), 0);
    }

    #[test]
    fn product_dimension_must_match_queries() {
        let q = file_with("q1\t1,0\n");
        let p = file_with("p1\t1,0,0\n");
        assert!(matches!(
            EmbeddingStore::load(q.path(), p.path()),
            Err(Error::DimensionMismatch { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_duplicates_zero_vectors_and_garbage() {
        let p = file_with("");
        let dup = file_with("q1\t1,0\nq1\t0,1\n");
        assert!(matches!(
            EmbeddingStore::load(dup.path(), p.path()),
            Err(Error::DuplicateId { line: 2, .. })
        ));
        let zero = file_with("q1\t0,0\n");
        assert!(matches!(
            EmbeddingStore::load(zero.path(), p.path()),
            Err(Error::ZeroVector { line: 1, .. })
        ));
        let bad = file_with("q1\t1,x\n");
        assert!(matches!(
            EmbeddingStore::load(bad.path(), p.path()),
            Err(Error::Parse { line: 1, .. })
        ));
        let no_tab = file_with("q1 1,0\n");
        assert!(matches!(
            EmbeddingStore::load(no_tab.path(), p.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let p = file_with("");
        let err = EmbeddingStore::load("/nonexistent/q.tsv", p.path()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/q.tsv"));
    }

    #[test]
    fn cosine_hand_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.7071067811865475).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn clamped_sim_cases() {
        // cosine of these is -0.3
        let a = [1.0, 0.0];
        let b = [-0.3, (1.0f64 - 0.09).sqrt()];
        assert!((cosine(&a, &b).unwrap() + 0.3).abs() < 1e-12);
        assert_eq!(clamped_sim(&a, &b).unwrap(), 0.0);
        let c = [0.8, 0.6];
        assert!((clamped_sim(&a, &c).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(clamped_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn store_cosine_matches_free_function() {
        let store = EmbeddingStore::from_rows(
            vec![("q".into(), vec![0.3, -1.2, 2.0])],
            vec![("p".into(), vec![1.1, 0.4, -0.7])],
        )
        .unwrap();
        let free = cosine(store.query_vector(0), store.product_vector(0)).unwrap();
        assert_eq!(store.query_product_cosine(0, 0), free);
    }

    #[test]
    fn write_then_load_preserves_vectors() {
        let store = EmbeddingStore::from_rows(
            vec![("q1".into(), vec![0.1, 1.0 / 3.0])],
            vec![("p1".into(), vec![-2.5, 1e-7])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (qp, pp) = (dir.path().join("q.tsv"), dir.path().join("p.tsv"));
        store.write(&qp, &pp).unwrap();
        let back = EmbeddingStore::load(&qp, &pp).unwrap();
        assert_eq!(back.query_vector(0), store.query_vector(0));
        assert_eq!(back.product_vector(0), store.product_vector(0));
    }

    fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d)))
    }

    proptest! {
        #[test]
        fn self_cosine_is_one(a in (1usize..16).prop_flat_map(nonzero_vec)) {
            prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cosine_is_symmetric_and_bounded((a, b) in vec_pair()) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            let s = clamped_sim(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn cosine_is_scale_invariant((a, b) in vec_pair(), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let diff = (cosine(&scaled, &b).unwrap() - cosine(&a, &b).unwrap()).abs();
            prop_assert!(diff < 1e-9);
        }
    }
}
