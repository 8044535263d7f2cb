//! False-negative estimation.
//!
//! The probability that an unlabelled in-batch pair `(q_i, p_j)` is in fact
//! relevant is estimated through the other queries of the batch that are
//! annotated as relevant to `p_j` (the anchors). Each anchor `q_t` contributes
//! its annotated label weighted by how similar `q_i` is to `q_t`:
//!
//! ```text
//! theta_ij = 1/T_j * sum_t r_tj * max(0, cos(e_i^q, e_t^q))
//! ```
//!
//! With no anchors theta is 0. Terms are summed in batch order.

use serde::Serialize;

use crate::batch::BatchContext;
use crate::error::Result;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FneEstimate {
    pub query_id: String,
    pub product_id: String,
    pub theta: f64,
    pub anchor_count: usize,
}

/// Theta and anchor count for store indices `query` and `product`.
pub fn theta_indexed(
    query: usize,
    product: usize,
    ctx: &BatchContext,
    store: &EmbeddingStore,
    threshold: f64,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (anchor, label) in ctx.anchors(product, threshold) {
        sum += label * store.query_query_cosine(query, anchor).max(0.0);
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Estimates the false-negative probability of `(query_id, product_id)`
/// from the anchors of `product_id` within `ctx`.
pub fn estimate(
    query_id: &str,
    product_id: &str,
    ctx: &BatchContext,
    store: &EmbeddingStore,
    threshold: f64,
) -> Result<FneEstimate> {
    let q = store.query_index(query_id)?;
    let p = store.product_index(product_id)?;
    let (theta, anchor_count) = theta_indexed(q, p, ctx, store, threshold);
    Ok(FneEstimate {
        query_id: query_id.to_string(),
        product_id: product_id.to_string(),
        theta,
        anchor_count,
    })
}
