//! Raster → feature-matrix preparation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::refine::{LabelMap, INVALID};

/// Valid pixels flattened to an `n × d` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    index_map: Vec<usize>,
}

impl SampleMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>, index_map: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if values.len() != n * d || index_map.len() != n {
            return Err(Error::Shape(format!(
                "{n}x{d} matrix needs {} values and {n} indices, got {} and {}",
                n * d,
                values.len(),
                index_map.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample matrix contains non-finite values"));
        }
        if index_map.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("index map must be strictly increasing"));
        }
        Ok(Self { n, d, values, index_map })
    }

    /// Matrix with `index_map = 0..n`, handy for data that does not come from a raster.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), d, values, (0..rows.len()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Minmax,
    Zscore,
    None,
}

/// Per-feature affine map `y = (x - shift) / scale`; `scale == 0` marks a
/// constant feature, which maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub shift: f64,
    pub scale: f64,
}

impl FeatureScaling {
    pub const IDENTITY: FeatureScaling = FeatureScaling { shift: 0.0, scale: 1.0 };

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            (x - self.shift) / self.scale
        }
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }
}

/// Scales each column independently. Column statistics are summed in row
/// order so results are reproducible.
pub fn normalize(m: &SampleMatrix, scheme: Normalization) -> (SampleMatrix, Vec<FeatureScaling>) {
    let params: Vec<FeatureScaling> = (0..m.d)
        .map(|j| match scheme {
            Normalization::None => FeatureScaling::IDENTITY,
            Normalization::Minmax => {
                let (lo, hi) = m
                    .column(j)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                FeatureScaling { shift: lo, scale: hi - lo }
            }
            Normalization::Zscore => {
                let n = m.n as f64;
                let mean = m.column(j).sum::<f64>() / n;
                let var = m.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                FeatureScaling { shift: mean, scale: var.sqrt() }
            }
        })
        .collect();
    let values = m
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| params[i % m.d].apply(v))
        .collect();
    let out = SampleMatrix {
        n: m.n,
        d: m.d,
        values,
        index_map: m.index_map.clone(),
    };
    (out, params)
}

/// One row per valid pixel in row-major order.
pub fn to_samples(r: &Raster) -> Result<SampleMatrix> {
    let d = r.bands() as usize;
    let valid = r.valid_count();
    if valid == 0 {
        return Err(Error::invalid("raster has no valid pixels"));
    }
    let mut values = Vec::with_capacity(valid * d);
    let mut index_map = Vec::with_capacity(valid);
    for p in 0..r.pixels() {
        if r.is_valid(p) {
            index_map.push(p);
            values.extend((0..d).map(|b| r.sample(b, p) as f64));
        }
    }
    Ok(SampleMatrix {
        n: valid,
        d,
        values,
        index_map,
    })
}

/// Scatters per-row labels back onto a `w × h` grid; unlisted pixels get [`INVALID`].
pub fn from_labels(labels: &[i32], m: &SampleMatrix, width: u32, height: u32) -> Result<LabelMap> {
    if labels.len() != m.n {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), m.n)));
    }
    let pixels = width as usize * height as usize;
    if m.index_map.last().is_some_and(|&p| p >= pixels) {
        return Err(Error::Shape(format!("index map exceeds {width}x{height} grid")));
    }
    let mut grid = vec![INVALID; pixels];
    for (&p, &l) in m.index_map.iter().zip(labels) {
        grid[p] = l;
    }
    LabelMap::new(width, height, grid)
}

/// Per-pixel, per-band median over the stack, ignoring invalid inputs.
pub fn median_composite(stack: &[Raster]) -> Result<Raster> {
    let first = stack.first().ok_or_else(|| Error::invalid("empty raster stack"))?;
    for r in &stack[1..] {
        if !r.same_grid(first) || r.bands() != first.bands() {
            return Err(Error::Shape(format!(
                "stack member {} does not match {}",
                r.shape_string(),
                first.shape_string()
            )));
        }
    }
    let pixels = first.pixels();
    let bands = first.bands() as usize;
    let mut data = vec![f32::NAN; pixels * bands];
    let mut mask = vec![false; pixels];
    let mut vals: Vec<f32> = Vec::with_capacity(stack.len());
    for p in 0..pixels {
        if !stack.iter().any(|r| r.is_valid(p)) {
            continue;
        }
        mask[p] = true;
        for b in 0..bands {
            vals.clear();
            vals.extend(stack.iter().filter(|r| r.is_valid(p)).map(|r| r.sample(b, p)));
            vals.sort_by(f32::total_cmp);
            let m = vals.len();
            data[b * pixels + p] = if m % 2 == 1 {
                vals[m / 2]
            } else {
                ((vals[m / 2 - 1] as f64 + vals[m / 2] as f64) / 2.0) as f32
            };
        }
    }
    Raster::new(first.width(), first.height(), first.bands(), data, mask)
}

/// Concatenates bands in the given order; a pixel is valid only where every part is.
pub fn stack_bands(parts: &[Raster]) -> Result<Raster> {
    let first = parts.first().ok_or_else(|| Error::invalid("no rasters to stack"))?;
    for r in &parts[1..] {
        if !r.same_grid(first) {
            return Err(Error::Shape(format!(
                "cannot stack {} with {}",
                r.shape_string(),
                first.shape_string()
            )));
        }
    }
    let pixels = first.pixels();
    let mut data = Vec::with_capacity(pixels * parts.iter().map(|r| r.bands() as usize).sum::<usize>());
    for r in parts {
        data.extend_from_slice(r.data());
    }
    let mask: Vec<bool> = (0..pixels).map(|p| parts.iter().all(|r| r.is_valid(p))).collect();
    let bands = parts.iter().map(|r| r.bands()).sum();
    Raster::new(first.width(), first.height(), bands, data, mask)
}

/// Block-mean pooling over `factor × factor` tiles using valid samples only.
pub fn downsample(r: &Raster, factor: u32) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(r.clone());
    }
    let (w, h) = (r.width() as usize, r.height() as usize);
    let f = factor as usize;
    let (ow, oh) = (w.div_ceil(f), h.div_ceil(f));
    let bands = r.bands() as usize;
    let out_pixels = ow * oh;
    let mut data = vec![f32::NAN; out_pixels * bands];
    let mut mask = vec![false; out_pixels];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = oy * ow + ox;
            let mut sums = vec![0f64; bands];
            let mut count = 0usize;
            for y in oy * f..((oy + 1) * f).min(h) {
                for x in ox * f..((ox + 1) * f).min(w) {
                    let p = y * w + x;
                    if r.is_valid(p) {
                        count += 1;
                        for (b, s) in sums.iter_mut().enumerate() {
                            *s += r.sample(b, p) as f64;
                        }
                    }
                }
            }
            if count > 0 {
                mask[o] = true;
                for (b, s) in sums.iter().enumerate() {
                    data[b * out_pixels + o] = (s / count as f64) as f32;
                }
            }
        }
    }
    Raster::new(ow as u32, oh as u32, r.bands(), data, mask)
}

/// Expands a label map computed on a `factor`-downsampled grid back to the
/// full grid; pixels invalid in `full_mask` get [`INVALID`].
pub fn upsample_labels(coarse: &LabelMap, factor: u32, width: u32, height: u32, full_mask: &[bool]) -> Result<LabelMap> {
    let f = factor.max(1) as usize;
    let (w, h) = (width as usize, height as usize);
    if coarse.width() as usize != w.div_ceil(f) || coarse.height() as usize != h.div_ceil(f) {
        return Err(Error::Shape(format!(
            "coarse grid {}x{} does not match {width}x{height} at factor {factor}",
            coarse.width(),
            coarse.height()
        )));
    }
    if full_mask.len() != w * h {
        return Err(Error::Shape("mask length does not match grid".into()));
    }
    let cw = coarse.width() as usize;
    let labels = (0..w * h)
        .map(|p| {
            if !full_mask[p] {
                INVALID
            } else {
                let (y, x) = (p / w, p % w);
                coarse.labels()[(y / f) * cw + x / f]
            }
        })
        .collect();
    LabelMap::new(width, height, labels)
}
