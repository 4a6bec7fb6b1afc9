//! Random-walk sub-graph sampling for mini-batches.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::model::{ModelContext, Subgraph};
use crate::error::{Error, Result};
use crate::graph_learning::CandidateGraph;

/// Uniform roots, then a fixed-length random walk on `a_geo` from each.
/// A root without neighbours contributes only itself.
pub fn sample_counties<R: Rng + ?Sized>(
    a_geo: &CandidateGraph,
    roots_per_batch: usize,
    walk_length: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = a_geo.n();
    if n == 0 || roots_per_batch == 0 {
        return Err(Error::Config("sub-graph sampling needs ≥1 county and ≥1 root".into()));
    }
    let mut visited = Vec::with_capacity(roots_per_batch * (walk_length + 1));
    for _ in 0..roots_per_batch {
        let mut at = rng.random_range(0..n);
        visited.push(at);
        for _ in 0..walk_length {
            match a_geo.neighbors(at).choose(rng) {
                Some(&next) => {
                    at = next;
                    visited.push(at);
                }
                None => break,
            }
        }
    }
    visited.sort_unstable();
    visited.dedup();
    Ok(visited)
}

/// Visited counties plus every state they belong to.
pub fn sample_subgraph<R: Rng + ?Sized>(
    ctx: &ModelContext,
    roots_per_batch: usize,
    walk_length: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    let counties = sample_counties(&ctx.candidates, roots_per_batch, walk_length, rng)?;
    Ok(Subgraph::induced(ctx, counties))
}
