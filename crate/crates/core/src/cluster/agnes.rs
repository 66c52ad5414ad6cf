//! Agglomerative nesting (bottom-up hierarchical clustering).
//!
//! Merges are found with the nearest-neighbour chain algorithm, which is
//! exact for the reducible linkages offered here. Complete and average
//! linkage keep a condensed distance matrix updated by the Lance–Williams
//! recurrence; Ward keeps cluster centroids and sizes instead, using the
//! closed form of its Lance–Williams recurrence,
//! `d(A,B)² = 2·|A||B|/(|A|+|B|) · ‖c_A − c_B‖²`, so memory stays O(n).

use serde::{Deserialize, Serialize};

use super::check_k;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::sq_dist;
use crate::prep::SampleMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Complete,
    Average,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgnesConfig {
    pub linkage: Linkage,
    /// Largest sample count accepted.
    pub cap: usize,
    #[serde(skip)]
    pub exec: Exec,
}

pub const DEFAULT_CAP: usize = 10_000;

impl Default for AgnesConfig {
    fn default() -> Self {
        Self {
            linkage: Linkage::Ward,
            cap: DEFAULT_CAP,
            exec: Exec::Sequential,
        }
    }
}

/// One merge. Ids below `n` are samples; the i-th merge creates id `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    /// `n − 1` merges in non-decreasing height order.
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Flat partition into `k` clusters, numbered by first occurrence in row order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n;
        if k == 0 || k > n {
            return Err(Error::invalid(format!("cannot cut {n} samples into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            parent[m.a] = n + i;
            parent[m.b] = n + i;
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut ids = std::collections::HashMap::new();
        Ok((0..n)
            .map(|s| {
                let next = ids.len();
                *ids.entry(root(s)).or_insert(next)
            })
            .collect())
    }
}

/// Pairwise linkage distances between live clusters.
trait Dissimilarity {
    fn dist(&self, a: usize, b: usize) -> f64;
    /// Merge `a` into slot `b`; `a` becomes inactive.
    fn merge(&mut self, a: usize, b: usize, active: &[usize]);
    /// Reported height for a merge at linkage distance `d`.
    fn height(&self, d: f64) -> f64 {
        d
    }
}

struct WardCentroids {
    d: usize,
    centroids: Vec<f64>,
    sizes: Vec<usize>,
}

impl Dissimilarity for WardCentroids {
    /// Squared Ward distance.
    fn dist(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.sizes[a] as f64, self.sizes[b] as f64);
        let d = self.d;
        2.0 * na * nb / (na + nb) * sq_dist(&self.centroids[a * d..(a + 1) * d], &self.centroids[b * d..(b + 1) * d])
    }

    fn merge(&mut self, a: usize, b: usize, _active: &[usize]) {
        let d = self.d;
        let (na, nb) = (self.sizes[a] as f64, self.sizes[b] as f64);
        for j in 0..d {
            let v = (na * self.centroids[a * d + j] + nb * self.centroids[b * d + j]) / (na + nb);
            self.centroids[b * d + j] = v;
        }
        self.sizes[b] += self.sizes[a];
    }

    fn height(&self, d: f64) -> f64 {
        d.sqrt()
    }
}

struct Condensed {
    n: usize,
    linkage: Linkage,
    dist: Vec<f64>,
    sizes: Vec<usize>,
}

impl Condensed {
    #[inline]
    fn idx(&self, a: usize, b: usize) -> usize {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.n * i - i * (i + 1) / 2 + j - i - 1
    }
}

impl Dissimilarity for Condensed {
    fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist[self.idx(a, b)]
    }

    fn merge(&mut self, a: usize, b: usize, active: &[usize]) {
        let (na, nb) = (self.sizes[a] as f64, self.sizes[b] as f64);
        for &x in active {
            if x == a || x == b {
                continue;
            }
            let (dax, dbx) = (self.dist(a, x), self.dist(b, x));
            let v = match self.linkage {
                Linkage::Complete => dax.max(dbx),
                Linkage::Average => (na * dax + nb * dbx) / (na + nb),
                Linkage::Ward => unreachable!("ward uses centroids"),
            };
            let i = self.idx(b, x);
            self.dist[i] = v;
        }
        self.sizes[b] += self.sizes[a];
    }
}

/// Raw merges as `(slot a, slot b, height)` in discovery order.
fn nn_chain<D: Dissimilarity>(n: usize, diss: &mut D) -> Vec<(usize, usize, f64)> {
    // active slots kept sorted so scans are in index order
    let mut active: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        if chain.is_empty() {
            chain.push(active[0]);
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, diss.dist(a, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for &x in &active {
                if x == a {
                    continue;
                }
                let dx = diss.dist(a, x);
                if dx < best_d {
                    best = x;
                    best_d = dx;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                let (lo, hi) = if a < best { (a, best) } else { (best, a) };
                out.push((lo, hi, diss.height(best_d)));
                // survivor lives in the lower slot
                diss.merge(hi, lo, &active);
                let pos = active.binary_search(&hi).expect("merged slot is active");
                active.remove(pos);
                break;
            }
            chain.push(best);
        }
    }
    out
}

/// Sorts raw slot merges by height and relabels them with dendrogram ids.
fn to_dendrogram(n: usize, mut raw: Vec<(usize, usize, f64)>) -> Dendrogram {
    raw.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut uf: Vec<usize> = (0..n).collect();
    let mut cluster_of: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let merges = raw
        .into_iter()
        .enumerate()
        .map(|(i, (a, b, h))| {
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            let (ca, cb) = (cluster_of[ra], cluster_of[rb]);
            let s = size[ra] + size[rb];
            uf[rb] = ra;
            size[ra] = s;
            cluster_of[ra] = n + i;
            Merge {
                a: ca.min(cb),
                b: ca.max(cb),
                height: h,
                size: s,
            }
        })
        .collect();
    Dendrogram { n, merges }
}

pub fn build_dendrogram(m: &SampleMatrix, cfg: &AgnesConfig) -> Result<Dendrogram> {
    let n = m.n();
    if n > cfg.cap {
        return Err(Error::TooManySamples { n, cap: cfg.cap });
    }
    let raw = match cfg.linkage {
        Linkage::Ward => {
            let mut w = WardCentroids {
                d: m.d(),
                centroids: m.values().to_vec(),
                sizes: vec![1; n],
            };
            nn_chain(n, &mut w)
        }
        linkage => {
            let rows = cfg.exec.map(n, |i| {
                let x = m.row(i);
                ((i + 1)..n).map(|j| sq_dist(x, m.row(j)).sqrt()).collect::<Vec<_>>()
            });
            let mut c = Condensed {
                n,
                linkage,
                dist: rows.into_iter().flatten().collect(),
                sizes: vec![1; n],
            };
            nn_chain(n, &mut c)
        }
    };
    Ok(to_dendrogram(n, raw))
}

pub fn agnes_fit(m: &SampleMatrix, k: usize, cfg: &AgnesConfig) -> Result<(Dendrogram, Vec<usize>)> {
    check_k(m, k)?;
    let dendrogram = build_dendrogram(m, cfg)?;
    let labels = dendrogram.cut(k)?;
    Ok((dendrogram, labels))
}
