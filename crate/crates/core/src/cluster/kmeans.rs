//! Lloyd's k-means with k-means++ seeding and best-of-restarts selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmin, check_k};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::sq_dist;
use crate::prep::SampleMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Relative WCSS change below which iteration stops.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            restarts: 8,
            seed: 0,
            exec: Exec::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub d: usize,
    /// `k × d`, row-major.
    pub centroids: Vec<f64>,
    pub wcss: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// WCSS after each assignment step and transfer sweep of the winning run.
    pub history: Vec<f64>,
}

impl KMeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }
}

/// Nearest centroid per sample and its squared distance.
pub fn assign(m: &SampleMatrix, centroids: &[f64], exec: &Exec) -> (Vec<usize>, Vec<f64>) {
    let d = m.d();
    let pairs = exec.map(m.n(), |i| {
        let x = m.row(i);
        argmin(centroids.chunks_exact(d).map(|c| sq_dist(x, c)))
    });
    pairs.into_iter().unzip()
}

/// Within-cluster sum of squares of `labels` against `centroids`.
pub fn wcss(m: &SampleMatrix, labels: &[usize], centroids: &[f64]) -> f64 {
    let d = m.d();
    m.rows()
        .zip(labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l * d..(l + 1) * d]))
        .sum()
}

fn plus_plus_seed(m: &SampleMatrix, k: usize, rng: &mut ChaCha8Rng, exec: &Exec) -> Vec<f64> {
    let (n, d) = (m.n(), m.d());
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(m.row(rng.random_range(0..n)));
    let mut nearest = exec.map(n, |i| sq_dist(m.row(i), &centroids[..d]));
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(m.row(pick));
        let new = &centroids[c * d..(c + 1) * d];
        let dists = exec.map(n, |i| sq_dist(m.row(i), new));
        for (cur, nd) in nearest.iter_mut().zip(dists) {
            if nd < *cur {
                *cur = nd;
            }
        }
    }
    centroids
}

fn update_centroids(m: &SampleMatrix, labels: &[usize], k: usize, prev: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let d = m.d();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (x, &l) in m.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums[c * d..(c + 1) * d].copy_from_slice(&prev[c * d..(c + 1) * d]);
        } else {
            let inv = counts[c] as f64;
            for s in &mut sums[c * d..(c + 1) * d] {
                *s /= inv;
            }
        }
    }
    (sums, counts)
}

/// Moves each empty centroid onto the sample farthest from its own centroid.
fn repair_empty(m: &SampleMatrix, labels: &[usize], counts: &[usize], centroids: &mut [f64]) {
    let d = m.d();
    let empties: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
    if empties.is_empty() {
        return;
    }
    let mut dist: Vec<f64> = m
        .rows()
        .zip(labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l * d..(l + 1) * d]))
        .collect();
    for c in empties {
        let (far, _) = argmin(dist.iter().map(|&v| -v));
        centroids[c * d..(c + 1) * d].copy_from_slice(m.row(far));
        dist[far] = f64::NEG_INFINITY;
    }
}

/// One sweep of single-sample transfers. A sample moves when leaving its
/// cluster saves more than joining another costs, both centroid shifts
/// included; `centroids` and `counts` are updated in place. Returns the
/// number of moves.
fn hartigan_pass(m: &SampleMatrix, labels: &mut [usize], centroids: &mut [f64], counts: &mut [usize]) -> usize {
    let d = m.d();
    let k = counts.len();
    let mut moves = 0;
    for (i, x) in m.rows().enumerate() {
        let a = labels[i];
        if counts[a] <= 1 {
            continue;
        }
        let na = counts[a] as f64;
        let saving = na / (na - 1.0) * sq_dist(x, &centroids[a * d..(a + 1) * d]);
        let (b, cost) = argmin((0..k).map(|b| {
            if b == a {
                f64::INFINITY
            } else {
                let nb = counts[b] as f64;
                nb / (nb + 1.0) * sq_dist(x, &centroids[b * d..(b + 1) * d])
            }
        }));
        // relative margin keeps rounding from cycling a sample back and forth
        if !(cost < saving * (1.0 - 1e-12)) {
            continue;
        }
        let nb = counts[b] as f64;
        for j in 0..d {
            centroids[a * d + j] = (na * centroids[a * d + j] - x[j]) / (na - 1.0);
            centroids[b * d + j] = (nb * centroids[b * d + j] + x[j]) / (nb + 1.0);
        }
        counts[a] -= 1;
        counts[b] += 1;
        labels[i] = b;
        moves += 1;
    }
    moves
}

/// One Lloyd run from the given centroids, finished with transfer sweeps.
pub fn kmeans_fit_from(m: &SampleMatrix, init: &[f64], cfg: &KMeansConfig) -> Result<(KMeansModel, Vec<usize>)> {
    let d = m.d();
    if init.is_empty() || !init.len().is_multiple_of(d) {
        return Err(Error::Shape(format!("initial centroids length {} is not a multiple of d = {d}", init.len())));
    }
    let k = init.len() / d;
    check_k(m, k)?;
    let mut centroids = init.to_vec();
    let (mut labels, dist) = assign(m, &centroids, &cfg.exec);
    let mut current: f64 = dist.iter().sum();
    let mut history = vec![current];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (mut next, counts) = update_centroids(m, &labels, k, &centroids);
        repair_empty(m, &labels, &counts, &mut next);
        let (next_labels, dist) = assign(m, &next, &cfg.exec);
        let score: f64 = dist.iter().sum();
        history.push(score);
        let stable = next_labels == labels;
        let improvement = current - score;
        centroids = next;
        labels = next_labels;
        current = score;
        if stable || improvement <= cfg.tol * (current + improvement) {
            break;
        }
    }
    let (mut means, mut counts) = update_centroids(m, &labels, k, &centroids);
    let mut passes = 0;
    while passes < cfg.max_iter && hartigan_pass(m, &mut labels, &mut means, &mut counts) > 0 {
        passes += 1;
        let (exact, _) = update_centroids(m, &labels, k, &means);
        means = exact;
        current = wcss(m, &labels, &means);
        history.push(current);
        centroids = means.clone();
    }
    if !current.is_finite() || centroids.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("k-means produced non-finite centroids".into()));
    }
    Ok((
        KMeansModel {
            k,
            d,
            centroids,
            wcss: current,
            iterations,
            restarts_used: 1,
            history,
        },
        labels,
    ))
}

/// Best of `cfg.restarts` k-means++ seeded Lloyd runs (ties: earliest restart).
pub fn kmeans_fit(m: &SampleMatrix, k: usize, cfg: &KMeansConfig) -> Result<(KMeansModel, Vec<usize>)> {
    check_k(m, k)?;
    let restarts = cfg.restarts.max(1);
    let mut best: Option<(KMeansModel, Vec<usize>)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let init = plus_plus_seed(m, k, &mut rng, &cfg.exec);
        let run = kmeans_fit_from(m, &init, cfg)?;
        if best.as_ref().is_none_or(|b| run.0.wcss < b.0.wcss) {
            best = Some(run);
        }
    }
    let (mut model, labels) = best.expect("at least one restart");
    model.restarts_used = restarts;
    Ok((model, labels))
}

/// Refit with one more centroid, seeded from `prev` plus the sample farthest
/// from its nearest `prev` centroid. The result's WCSS never exceeds
/// `prev.wcss`, which makes best-of curves monotone in k.
pub fn kmeans_grow(m: &SampleMatrix, prev: &KMeansModel, cfg: &KMeansConfig) -> Result<(KMeansModel, Vec<usize>)> {
    let (_, dist) = assign(m, &prev.centroids, &cfg.exec);
    let (far, _) = argmin(dist.iter().map(|&v| -v));
    let mut init = prev.centroids.clone();
    init.extend_from_slice(m.row(far));
    kmeans_fit_from(m, &init, cfg)
}
