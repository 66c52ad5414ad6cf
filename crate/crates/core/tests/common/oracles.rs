//! Slow, direct reference implementations used as test oracles. They work on
//! plain slices and share no code with the library.

#![allow(dead_code)]

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN by definition: O(n²) neighbourhoods, core components found by
/// depth-first search, clusters numbered by their lowest core index, and each
/// border point given to the lowest-numbered cluster with a core neighbour.
pub fn dbscan(rows: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = rows.len();
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist2(&rows[i], &rows[j]).sqrt() <= eps).collect())
        .collect();
    let core: Vec<bool> = nbrs.iter().map(|v| v.len() >= min_pts).collect();
    let mut comp = vec![-1i32; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] >= 0 {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(p) = stack.pop() {
            for &q in &nbrs[p] {
                if core[q] && comp[q] < 0 {
                    comp[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                comp[i]
            } else {
                nbrs[i].iter().filter(|&&q| core[q]).map(|&q| comp[q]).min().unwrap_or(-1)
            }
        })
        .collect()
}

/// Global minimum WCSS over every split of the rows into two non-empty groups.
pub fn best_two_partition_wcss(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    assert!((2..=20).contains(&n));
    let d = rows[0].len();
    let group_ss = |members: &[usize]| {
        let mut mean = vec![0.0; d];
        for &i in members {
            for j in 0..d {
                mean[j] += rows[i][j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        members.iter().map(|&i| dist2(&rows[i], &mean)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    // sample 0 is fixed in group A to skip mirror images
    for mask in 1u32..(1 << (n - 1)) {
        let (mut a, mut b) = (vec![0], vec![]);
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                b.push(i);
            } else {
                a.push(i);
            }
        }
        best = best.min(group_ss(&a) + group_ss(&b));
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Ward,
    Complete,
    Average,
}

/// Greedy agglomeration over a full distance matrix with Lance–Williams
/// updates (Ward on squared distances). Returns the merge heights in order
/// and the membership after each merge count, as partitions keyed by sample.
pub fn agnes(rows: &[Vec<f64>], link: Link) -> (Vec<f64>, Vec<Vec<usize>>) {
    let n = rows.len();
    let mut dm = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let e = dist2(&rows[i], &rows[j]);
            dm[i][j] = if link == Link::Ward { e } else { e.sqrt() };
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut heights = Vec::new();
    let mut partitions = vec![canonical(&owner)];
    for _ in 1..n {
        let (mut bi, mut bj, mut bd) = (0, 0, f64::INFINITY);
        for i in 0..n {
            for j in i + 1..n {
                if alive[i] && alive[j] && dm[i][j] < bd {
                    (bi, bj, bd) = (i, j, dm[i][j]);
                }
            }
        }
        heights.push(if link == Link::Ward { bd.sqrt() } else { bd });
        let (ni, nj) = (size[bi] as f64, size[bj] as f64);
        for k in 0..n {
            if !alive[k] || k == bi || k == bj {
                continue;
            }
            let nk = size[k] as f64;
            let v = match link {
                Link::Ward => ((ni + nk) * dm[bi][k] + (nj + nk) * dm[bj][k] - nk * bd) / (ni + nj + nk),
                Link::Complete => dm[bi][k].max(dm[bj][k]),
                Link::Average => (ni * dm[bi][k] + nj * dm[bj][k]) / (ni + nj),
            };
            dm[bi][k] = v;
            dm[k][bi] = v;
        }
        alive[bj] = false;
        size[bi] += size[bj];
        for o in owner.iter_mut() {
            if *o == bj {
                *o = bi;
            }
        }
        partitions.push(canonical(&owner));
    }
    (heights, partitions)
}

/// Relabels a partition by first occurrence.
pub fn canonical<T: Copy + Eq + std::hash::Hash>(labels: &[T]) -> Vec<usize> {
    let mut ids = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect()
}

fn grid_neighbors(p: usize, w: usize, h: usize, eight: bool) -> Vec<usize> {
    let (x, y) = ((p % w) as i64, (p / w) as i64);
    let mut out = Vec::new();
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                continue;
            }
            let (nx, ny) = (x + dx, y + dy);
            if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                out.push(ny as usize * w + nx as usize);
            }
        }
    }
    out
}

/// Components of equal non-negative labels by flood fill, each as a sorted pixel list.
pub fn flood_components(labels: &[i32], w: usize, h: usize, eight: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    for s in 0..labels.len() {
        if seen[s] || labels[s] < 0 {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut comp = vec![];
        while let Some(p) = stack.pop() {
            comp.push(p);
            for q in grid_neighbors(p, w, h, eight) {
                if !seen[q] && labels[q] == labels[s] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Small-component merging simulated literally: every round recomputes all
/// components, takes the smallest one below `min_size` that touches a
/// non-negative pixel of another label (ties: lowest first pixel), and
/// relabels it to the label most frequent among its distinct outside
/// neighbour pixels (ties: lowest label). Stops when no candidate remains.
pub fn merge_fixed_point(labels: &[i32], w: usize, h: usize, min_size: usize, eight: bool) -> Vec<i32> {
    let mut labels = labels.to_vec();
    loop {
        let mut best: Option<(usize, usize, i32, Vec<usize>)> = None;
        for comp in flood_components(&labels, w, h, eight) {
            if comp.len() >= min_size {
                continue;
            }
            let inside: std::collections::HashSet<usize> = comp.iter().copied().collect();
            let mut outside = std::collections::BTreeSet::new();
            for &p in &comp {
                for q in grid_neighbors(p, w, h, eight) {
                    if !inside.contains(&q) && labels[q] >= 0 {
                        outside.insert(q);
                    }
                }
            }
            if outside.is_empty() {
                continue;
            }
            let mut counts = std::collections::BTreeMap::<i32, usize>::new();
            for q in outside {
                *counts.entry(labels[q]).or_default() += 1;
            }
            let top = *counts.values().max().unwrap();
            let target = *counts.iter().find(|(_, &c)| c == top).unwrap().0;
            let key = (comp.len(), comp[0]);
            if best.as_ref().is_none_or(|b| key < (b.0, b.1)) {
                best = Some((key.0, key.1, target, comp));
            }
        }
        match best {
            None => return labels,
            Some((_, _, target, comp)) => {
                for p in comp {
                    labels[p] = target;
                }
            }
        }
    }
}
