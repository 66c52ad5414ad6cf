//! Density-based clustering over a uniform grid index.

use std::collections::VecDeque;

use serde::Serialize;

use super::grid::GridIndex;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::sq_dist;
use crate::prep::SampleMatrix;
use crate::refine::NOISE;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbscanResult {
    /// Cluster id per sample, or [`NOISE`].
    pub labels: Vec<i32>,
    pub core_flags: Vec<bool>,
    pub eps: f64,
    pub min_pts: usize,
    pub clusters: usize,
}

/// Clusters are grown from core samples in row order; a border sample joins
/// the first cluster that reaches it.
pub fn dbscan_fit(m: &SampleMatrix, eps: f64, min_pts: usize, exec: &Exec) -> Result<DbscanResult> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let index = GridIndex::build(m, eps)?;
    let core_flags = exec.map(m.n(), |i| {
        index.query(m.row(i), eps).map(|nb| nb.len() >= min_pts).unwrap_or(false)
    });

    const UNSEEN: i32 = i32::MIN;
    let mut labels = vec![UNSEEN; m.n()];
    let mut cluster = 0i32;
    let mut queue = VecDeque::new();
    for start in 0..m.n() {
        if labels[start] != UNSEEN || !core_flags[start] {
            continue;
        }
        labels[start] = cluster;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in index.query(m.row(p), eps)? {
                if labels[q] == UNSEEN {
                    labels[q] = cluster;
                    if core_flags[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        cluster += 1;
    }
    for l in &mut labels {
        if *l == UNSEEN {
            *l = NOISE;
        }
    }
    Ok(DbscanResult {
        labels,
        core_flags,
        eps,
        min_pts,
        clusters: cluster as usize,
    })
}

pub const EPS_SUBSAMPLE: usize = 10_000;

/// Radius at the knee of the sorted `(min_pts − 1)`-nearest-neighbour
/// distance curve over an evenly strided subsample of at most 10 000 rows.
pub fn estimate_eps(m: &SampleMatrix, min_pts: usize, exec: &Exec) -> Result<f64> {
    let n = m.n();
    let s = n.min(EPS_SUBSAMPLE);
    let rank = min_pts.saturating_sub(1).max(1);
    if s <= rank {
        return Err(Error::invalid(format!(
            "{n} samples are too few to estimate eps for min_pts = {min_pts}"
        )));
    }
    let picks: Vec<usize> = (0..s).map(|i| i * n / s).collect();
    let mut kth = exec.map(s, |i| {
        let x = m.row(picks[i]);
        let mut d: Vec<f64> = picks
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &p)| sq_dist(x, m.row(p)))
            .collect();
        let (_, v, _) = d.select_nth_unstable_by(rank - 1, f64::total_cmp);
        v.sqrt()
    });
    kth.sort_by(f64::total_cmp);
    let xs: Vec<f64> = (0..kth.len()).map(|i| i as f64).collect();
    let eps = match crate::select::knee_index(&xs, &kth) {
        Some((i, _)) => kth[i],
        None => kth[kth.len() / 2],
    };
    if eps > 0.0 {
        return Ok(eps);
    }
    // heavy duplication: fall back to the smallest positive spacing
    kth.iter()
        .copied()
        .find(|&v| v > 0.0)
        .ok_or_else(|| Error::invalid("all sampled points coincide; eps cannot be estimated"))
}
