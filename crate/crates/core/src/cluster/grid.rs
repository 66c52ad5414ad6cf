//! Uniform grid over sample space for radius queries.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::prep::SampleMatrix;

pub struct GridIndex<'a> {
    m: &'a SampleMatrix,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    /// Buckets every sample into cubic cells of edge `cell`.
    pub fn build(m: &'a SampleMatrix, cell: f64) -> Result<Self> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::invalid(format!("grid cell edge must be positive, got {cell}")));
        }
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, x) in m.rows().enumerate() {
            cells.entry(cell_of(x, cell)).or_default().push(i);
        }
        Ok(Self { m, cell, cells })
    }

    pub fn matrix(&self) -> &SampleMatrix {
        self.m
    }

    /// Indices of samples within Euclidean distance `eps` of `point`
    /// (inclusive), ascending.
    pub fn query(&self, point: &[f64], eps: f64) -> Result<Vec<usize>> {
        let d = self.m.d();
        if point.len() != d {
            return Err(Error::Shape(format!("query has {} dims, index has {d}", point.len())));
        }
        if !(eps >= 0.0) {
            return Err(Error::invalid(format!("query radius must be non-negative, got {eps}")));
        }
        let reach = (eps / self.cell).ceil() as i64;
        let center = cell_of(point, self.cell);
        let eps2 = eps * eps;
        let mut out = Vec::new();
        // walk the (2·reach+1)^d block; reach is 1 when eps equals the cell edge
        let span = 2 * reach + 1;
        let total = (span as u128).saturating_pow(d as u32);
        if total > self.cells.len() as u128 * 4 {
            // the block is larger than the occupied cells: scan cells instead
            for (key, members) in &self.cells {
                if key.iter().zip(&center).all(|(k, c)| (k - c).abs() <= reach) {
                    self.collect(members, point, eps2, &mut out);
                }
            }
        } else {
            let mut offset = vec![-reach; d];
            let mut key = vec![0i64; d];
            loop {
                for j in 0..d {
                    key[j] = center[j] + offset[j];
                }
                if let Some(members) = self.cells.get(&key) {
                    self.collect(members, point, eps2, &mut out);
                }
                let mut j = 0;
                while j < d {
                    offset[j] += 1;
                    if offset[j] <= reach {
                        break;
                    }
                    offset[j] = -reach;
                    j += 1;
                }
                if j == d {
                    break;
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn collect(&self, members: &[usize], point: &[f64], eps2: f64, out: &mut Vec<usize>) {
        out.extend(members.iter().copied().filter(|&i| sq_dist(self.m.row(i), point) <= eps2));
    }
}

fn cell_of(x: &[f64], cell: f64) -> Vec<i64> {
    x.iter().map(|v| (v / cell).floor() as i64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_radius_returns_everything() {
        let m = SampleMatrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.2], vec![1.0, 1.0]]).unwrap();
        let g = GridIndex::build(&m, 0.1).unwrap();
        assert_eq!(g.query(m.row(0), 10.0).unwrap(), vec![0, 1, 2]);
        assert!(g.query(&[50.0, 50.0], 0.1).unwrap().is_empty());
        assert!(g.query(&[0.0], 0.1).is_err());
    }

    #[test]
    fn boundary_is_inclusive() {
        let m = SampleMatrix::from_rows(&[vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        let g = GridIndex::build(&m, 1.0).unwrap();
        assert_eq!(g.query(&[0.0], 1.0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn negative_coordinates() {
        let m = SampleMatrix::from_rows(&[vec![-0.05, -0.05], vec![0.04, 0.04]]).unwrap();
        let g = GridIndex::build(&m, 0.1).unwrap();
        assert_eq!(g.query(m.row(0), 0.1).unwrap(), vec![0]);
        assert_eq!(g.query(m.row(0), 0.13).unwrap(), vec![0, 1]);
    }
}
