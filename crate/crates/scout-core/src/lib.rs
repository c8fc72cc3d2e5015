//! Structure-aware spatial prefetching engine and deterministic benchmark
//! simulator.
//!
//! The library models guided spatial query sequences over paged 3D segment
//! datasets: a predictor reconstructs the structures in each query result as
//! an approximate graph, prunes the candidate structures the user may be
//! following, and extrapolates their exit locations to prefetch pages for
//! the next query. Location-only baselines and a logical I/O cost model
//! make the approaches comparable on synthetic branching datasets.

pub mod baselines;
pub mod dataset;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod hilbert;
pub mod index;
pub mod predictor;
pub mod prefetch;

/// Derives an independent stream seed from a base seed (splitmix64 step).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
