//! In-batch view of annotated pairs: positive sets, candidate pools and the
//! per-product annotations used as false-negative anchors.

use std::collections::{HashMap, HashSet};

use crate::corpus::AnnotatedPair;
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;

/// Annotated pairs of one training batch, resolved against a store.
///
/// `P` is the set of distinct products in the batch, `P_i^+` the products
/// annotated for query `i` with a label at or above the positivity
/// threshold. The candidate pool of query `i` is `P - P_i^+`, in order of
/// first appearance in the batch.
#[derive(Debug, Clone)]
pub struct BatchContext {
    pairs: Vec<AnnotatedPair>,
    threshold: f64,
    queries: Vec<usize>,
    products: Vec<usize>,
    positives: HashMap<usize, HashSet<usize>>,
    by_product: HashMap<usize, Vec<(usize, f64)>>,
}

impl BatchContext {
    pub fn new(pairs: &[AnnotatedPair], store: &EmbeddingStore, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!(
                "positivity threshold {threshold} outside [0, 1]"
            )));
        }
        let mut queries = Vec::new();
        let mut products = Vec::new();
        let mut seen_q = HashSet::new();
        let mut seen_p = HashSet::new();
        let mut positives: HashMap<usize, HashSet<usize>> = HashMap::new();
        let mut by_product: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for pair in pairs {
            let q = store.query_index(&pair.query_id)?;
            let p = store.product_index(&pair.product_id)?;
            if seen_q.insert(q) {
                queries.push(q);
            }
            if seen_p.insert(p) {
                products.push(p);
            }
            if pair.label >= threshold {
                positives.entry(q).or_default().insert(p);
            }
            by_product.entry(p).or_default().push((q, pair.label));
        }
        Ok(Self {
            pairs: pairs.to_vec(),
            threshold,
            queries,
            products,
            positives,
            by_product,
        })
    }

    pub fn pairs(&self) -> &[AnnotatedPair] {
        &self.pairs
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Store indices of the distinct queries, in order of first appearance.
    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    /// Store indices of the distinct products `P`, in order of first appearance.
    pub fn products(&self) -> &[usize] {
        &self.products
    }

    pub fn is_positive(&self, query: usize, product: usize) -> bool {
        self.positives
            .get(&query)
            .is_some_and(|set| set.contains(&product))
    }

    /// `P - P_i^+` for the query with store index `query`.
    pub fn candidate_pool(&self, query: usize) -> Vec<usize> {
        self.products
            .iter()
            .copied()
            .filter(|&p| !self.is_positive(query, p))
            .collect()
    }

    /// In-batch (query, label) annotations of `product` with label >= `threshold`,
    /// in batch order.
    pub fn anchors(
        &self,
        product: usize,
        threshold: f64,
    ) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.by_product
            .get(&product)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&(_, label)| label >= threshold)
    }
}
