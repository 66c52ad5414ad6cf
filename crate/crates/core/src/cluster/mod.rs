//! The four pixel clusterers. All of them are deterministic functions of
//! (matrix, parameters, seed) and produce the same output under any
//! [`Exec`](crate::exec::Exec).

pub mod agnes;
pub mod dbscan;
pub mod gmm;
pub mod grid;
pub mod kmeans;

pub use agnes::{agnes_fit, AgnesConfig, Dendrogram, Linkage, Merge};
pub use dbscan::{dbscan_fit, estimate_eps, DbscanResult};
pub use gmm::{gmm_fit, GmmConfig, GmmFit, GmmModel};
pub use grid::GridIndex;
pub use kmeans::{kmeans_fit, kmeans_fit_from, kmeans_grow, KMeansConfig, KMeansModel};

use crate::error::{Error, Result};
use crate::prep::SampleMatrix;

pub(crate) fn check_k(m: &SampleMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > m.n() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} samples", m.n())));
    }
    Ok(())
}

/// Index of the smallest value; ties go to the lowest index.
#[inline]
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}
