//! Full-covariance Gaussian mixture fitted by expectation-maximisation,
//! initialised from k-means.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::check_k;
use super::kmeans::{kmeans_fit, KMeansConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{cholesky, log_det_from_cholesky, mahalanobis_sq};
use crate::prep::SampleMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-sample log-likelihood gains less than this.
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub reg: f64,
    pub seed: u64,
    /// Restarts for the k-means initialisation.
    pub init_restarts: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            reg: 1e-6,
            seed: 0,
            init_restarts: 8,
            exec: Exec::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub d: usize,
    /// `k × d`
    pub means: Vec<f64>,
    /// `k × d × d`, each symmetric positive definite.
    pub covariances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Total log-likelihood of the fitted data.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Total log-likelihood after the initial E-step and after every accepted EM iteration.
    pub history: Vec<f64>,
}

impl GmmModel {
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.d..(c + 1) * self.d]
    }

    pub fn covariance(&self, c: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.covariances[c * dd..(c + 1) * dd]
    }

    /// Free parameters: `(k-1) + k·d + k·d(d+1)/2`.
    pub fn free_parameters(&self) -> usize {
        let (k, d) = (self.k, self.d);
        (k - 1) + k * d + k * d * (d + 1) / 2
    }

    /// Per-component `ln πₖ + ln N(x | μₖ, Σₖ)`.
    pub fn component_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let comps = Components::new(self)?;
        let mut diff = vec![0.0; self.d];
        let mut scratch = vec![0.0; self.d];
        Ok(comps.log_densities(self, x, &mut diff, &mut scratch))
    }
}

pub struct GmmFit {
    pub model: GmmModel,
    pub labels: Vec<usize>,
    /// `n × k` posterior membership probabilities.
    pub responsibilities: Vec<f64>,
}

struct Components {
    chol: Vec<Vec<f64>>,
    /// `ln πₖ − ½(d ln 2π + ln det Σₖ)`
    offset: Vec<f64>,
}

impl Components {
    fn new(model: &GmmModel) -> Result<Self> {
        let d = model.d;
        let mut chol = Vec::with_capacity(model.k);
        let mut offset = Vec::with_capacity(model.k);
        for c in 0..model.k {
            let l = cholesky(model.covariance(c), d)
                .ok_or_else(|| Error::Numerical(format!("covariance {c} is not positive definite")))?;
            let log_det = log_det_from_cholesky(&l, d);
            offset.push(model.weights[c].ln() - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det));
            chol.push(l);
        }
        Ok(Self { chol, offset })
    }

    fn log_densities(&self, model: &GmmModel, x: &[f64], diff: &mut [f64], scratch: &mut [f64]) -> Vec<f64> {
        (0..model.k)
            .map(|c| {
                for ((o, a), b) in diff.iter_mut().zip(x).zip(model.mean(c)) {
                    *o = a - b;
                }
                self.offset[c] - 0.5 * mahalanobis_sq(&self.chol[c], model.d, diff, scratch)
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Returns total log-likelihood and the flattened responsibilities.
fn e_step(model: &GmmModel, m: &SampleMatrix, exec: &Exec) -> Result<(f64, Vec<f64>)> {
    let comps = Components::new(model)?;
    let k = model.k;
    let rows = exec.map(m.n(), |i| {
        let mut diff = vec![0.0; model.d];
        let mut scratch = vec![0.0; model.d];
        let mut lp = comps.log_densities(model, m.row(i), &mut diff, &mut scratch);
        let lse = log_sum_exp(&lp);
        for v in &mut lp {
            *v = (*v - lse).exp();
        }
        (lse, lp)
    });
    let mut total = 0.0;
    let mut resp = Vec::with_capacity(m.n() * k);
    for (lse, r) in rows {
        total += lse;
        resp.extend(r);
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("log-likelihood is {total}")));
    }
    Ok((total, resp))
}

fn m_step(model: &mut GmmModel, m: &SampleMatrix, resp: &[f64], reg: f64) {
    let (k, d, n) = (model.k, model.d, m.n());
    let mut nk = vec![0.0; k];
    let mut sums = vec![0.0; k * d];
    for (i, x) in m.rows().enumerate() {
        for c in 0..k {
            let r = resp[i * k + c];
            nk[c] += r;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(x) {
                *s += r * v;
            }
        }
    }
    for c in 0..k {
        if nk[c] > 0.0 {
            for s in &mut sums[c * d..(c + 1) * d] {
                *s /= nk[c];
            }
        } else {
            sums[c * d..(c + 1) * d].copy_from_slice(model.mean(c));
        }
    }
    let mut covs = vec![0.0; k * d * d];
    let mut diff = vec![0.0; d];
    for (i, x) in m.rows().enumerate() {
        for c in 0..k {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            for ((o, a), b) in diff.iter_mut().zip(x).zip(&sums[c * d..(c + 1) * d]) {
                *o = a - b;
            }
            let cov = &mut covs[c * d * d..(c + 1) * d * d];
            for p in 0..d {
                for q in 0..=p {
                    cov[p * d + q] += r * diff[p] * diff[q];
                }
            }
        }
    }
    for c in 0..k {
        let cov = &mut covs[c * d * d..(c + 1) * d * d];
        if nk[c] > 0.0 {
            for p in 0..d {
                for q in 0..=p {
                    let v = cov[p * d + q] / nk[c];
                    cov[p * d + q] = v;
                    cov[q * d + p] = v;
                }
                cov[p * d + p] += reg;
            }
        } else {
            cov.copy_from_slice(model.covariance(c));
        }
    }
    model.weights = nk.iter().map(|v| v / n as f64).collect();
    model.means = sums;
    model.covariances = covs;
}

fn argmax_rows(resp: &[f64], k: usize) -> Vec<usize> {
    resp.chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn initialise(m: &SampleMatrix, k: usize, cfg: &GmmConfig) -> Result<GmmModel> {
    let (n, d) = (m.n(), m.d());
    let km_cfg = KMeansConfig {
        seed: cfg.seed,
        restarts: cfg.init_restarts,
        exec: cfg.exec.clone(),
        ..Default::default()
    };
    let (km, labels) = kmeans_fit(m, k, &km_cfg)?;
    let mut counts = vec![0usize; k];
    let mut covs = vec![0.0; k * d * d];
    for (x, &l) in m.rows().zip(&labels) {
        counts[l] += 1;
        let mu = km.centroid(l);
        let cov = &mut covs[l * d * d..(l + 1) * d * d];
        for p in 0..d {
            for q in 0..d {
                cov[p * d + q] += (x[p] - mu[p]) * (x[q] - mu[q]);
            }
        }
    }
    for c in 0..k {
        let cov = &mut covs[c * d * d..(c + 1) * d * d];
        let denom = counts[c].max(1) as f64;
        for v in cov.iter_mut() {
            *v /= denom;
        }
        for p in 0..d {
            cov[p * d + p] += cfg.reg;
        }
    }
    Ok(GmmModel {
        k,
        d,
        means: km.centroids,
        covariances: covs,
        weights: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
        history: Vec::new(),
    })
}

pub fn gmm_fit(m: &SampleMatrix, k: usize, cfg: &GmmConfig) -> Result<GmmFit> {
    check_k(m, k)?;
    if m.n() <= m.d() {
        return Err(Error::invalid(format!(
            "{} samples are too few to estimate {}-dimensional covariances",
            m.n(),
            m.d()
        )));
    }
    if !(cfg.reg >= 0.0) {
        return Err(Error::invalid("covariance regularisation must be non-negative"));
    }
    let n = m.n() as f64;
    let mut model = initialise(m, k, cfg)?;
    let (mut ll, mut resp) = e_step(&model, m, &cfg.exec)?;
    model.history.push(ll);
    while model.iterations < cfg.max_iter {
        let previous = (model.means.clone(), model.covariances.clone(), model.weights.clone());
        m_step(&mut model, m, &resp, cfg.reg);
        let (next, next_resp) = e_step(&model, m, &cfg.exec)?;
        if next < ll {
            // the regularised covariance update is not an exact maximiser, so
            // near convergence it can lose likelihood; keep the better fit
            (model.means, model.covariances, model.weights) = previous;
            break;
        }
        model.iterations += 1;
        model.history.push(next);
        let gain = (next - ll) / n;
        ll = next;
        resp = next_resp;
        if gain < cfg.tol {
            break;
        }
    }
    model.log_likelihood = ll;
    let labels = argmax_rows(&resp, k);
    Ok(GmmFit {
        model,
        labels,
        responsibilities: resp,
    })
}
