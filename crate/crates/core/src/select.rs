//! Model-order selection curves and knee detection.
//!
//! A proposed k is advisory: the pipeline always uses the configured k.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::cluster::gmm::{gmm_fit, GmmConfig, GmmModel};
use crate::cluster::kmeans::{kmeans_fit, kmeans_grow, KMeansConfig};
use crate::error::{Error, Result};
use crate::prep::SampleMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMethod {
    Wcss,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCurve {
    pub method: CurveMethod,
    pub points: Vec<CurvePoint>,
    pub proposed_k: Option<usize>,
}

/// Minimum normalised chord distance for a knee to count.
pub const KNEE_THRESHOLD: f64 = 0.05;

impl SelectionCurve {
    pub fn new(method: CurveMethod, points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("selection curve needs at least one point"));
        }
        if points.windows(2).any(|w| w[0].k >= w[1].k) {
            return Err(Error::invalid("curve k values must be strictly increasing"));
        }
        let proposed_k = match points.len() {
            1 => Some(points[0].k),
            2 => None,
            _ => detect_knee_points(&points),
        };
        Ok(Self {
            method,
            points,
            proposed_k,
        })
    }

    /// `k,score` header, one row per point, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,score\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.k, p.score));
        }
        out
    }
}

/// Index and normalised distance of the point farthest from the chord
/// joining the first and last points, after scaling both axes to [0,1].
/// `None` when the curve is flat in either axis.
pub fn knee_index(xs: &[f64], ys: &[f64]) -> Option<(usize, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return None;
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (x0, xr) = span(xs);
    let (y0, yr) = span(ys);
    if !(xr > 0.0) || !(yr > 0.0) {
        return None;
    }
    let nx: Vec<f64> = xs.iter().map(|x| (x - x0) / xr).collect();
    let ny: Vec<f64> = ys.iter().map(|y| (y - y0) / yr).collect();
    let (ax, ay, bx, by) = (nx[0], ny[0], nx[n - 1], ny[n - 1]);
    let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
    if !(len > 0.0) {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        let dist = ((by - ay) * nx[i] - (bx - ax) * ny[i] + bx * ay - by * ax).abs() / len;
        if best.is_none_or(|(_, b)| dist > b) {
            best = Some((i, dist));
        }
    }
    best
}

fn detect_knee_points(points: &[CurvePoint]) -> Option<usize> {
    let xs: Vec<f64> = points.iter().map(|p| p.k as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.score).collect();
    knee_index(&xs, &ys)
        .filter(|&(_, d)| d >= KNEE_THRESHOLD)
        .map(|(i, _)| points[i].k)
}

/// Max-distance-to-chord knee; `Ok(None)` for near-linear curves.
pub fn detect_knee(curve: &SelectionCurve) -> Result<Option<usize>> {
    if curve.points.len() < 3 {
        return Err(Error::invalid(format!(
            "knee detection needs at least 3 points, got {}",
            curve.points.len()
        )));
    }
    Ok(detect_knee_points(&curve.points))
}

fn check_range(m: &SampleMatrix, range: &RangeInclusive<usize>) -> Result<()> {
    if range.is_empty() {
        return Err(Error::invalid(format!("empty k range {range:?}")));
    }
    if *range.start() < 1 || *range.end() > m.n() {
        return Err(Error::invalid(format!("k range {range:?} must lie within [1, {}]", m.n())));
    }
    Ok(())
}

/// Total WCSS per k. Each k keeps the better of a fresh best-of-restarts fit
/// and a warm start grown from the previous k's solution, so the scores are
/// non-increasing in k.
pub fn wcss_curve(m: &SampleMatrix, range: RangeInclusive<usize>, cfg: &KMeansConfig) -> Result<SelectionCurve> {
    check_range(m, &range)?;
    let mut points = Vec::new();
    let mut prev = None;
    for k in range {
        let (mut best, _) = kmeans_fit(m, k, cfg)?;
        if let Some(p) = &prev {
            let (grown, _) = kmeans_grow(m, p, cfg)?;
            if grown.wcss < best.wcss {
                best = grown;
            }
        }
        points.push(CurvePoint { k, score: best.wcss });
        prev = Some(best);
    }
    SelectionCurve::new(CurveMethod::Wcss, points)
}

/// `p·ln n − 2·L̂` with `p` the full-covariance parameter count. Lower is better.
pub fn bic(model: &GmmModel, m: &SampleMatrix) -> Result<f64> {
    if m.n() == 0 {
        return Err(Error::invalid("BIC needs at least one sample"));
    }
    Ok(model.free_parameters() as f64 * (m.n() as f64).ln() - 2.0 * model.log_likelihood)
}

pub fn bic_curve(m: &SampleMatrix, range: RangeInclusive<usize>, cfg: &GmmConfig) -> Result<SelectionCurve> {
    check_range(m, &range)?;
    let points = range
        .map(|k| {
            let fit = gmm_fit(m, k, cfg)?;
            Ok(CurvePoint {
                k,
                score: bic(&fit.model, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionCurve::new(CurveMethod::Bic, points)
}
