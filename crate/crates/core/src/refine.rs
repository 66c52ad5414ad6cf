//! Map refinement: connected components, small-region cleanup, explicit
//! remaps, label compaction and legend assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Palette, PaletteEntry, Rgb};

/// DBSCAN noise.
pub const NOISE: i32 = -1;
/// Pixel that was never clustered (masked out or outside the sample set).
pub const INVALID: i32 = -2;

#[inline]
pub fn is_sentinel(label: i32) -> bool {
    label < 0
}

/// Per-pixel cluster labels, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{width}x{height} label map needs {} labels, got {}",
                width as usize * height as usize,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l < INVALID) {
            return Err(Error::invalid(format!("label {bad} is below the sentinel range")));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<i32> {
        self.labels
    }

    /// Distinct non-sentinel labels, ascending.
    pub fn label_set(&self) -> BTreeSet<i32> {
        self.labels.iter().copied().filter(|&l| !is_sentinel(l)).collect()
    }

    /// Single-band raster of label values; [`INVALID`] pixels become NaN
    /// (mask = false) and noise stays `-1.0`.
    pub fn to_raster(&self) -> crate::raster::Raster {
        let data = self
            .labels
            .iter()
            .map(|&l| if l == INVALID { f32::NAN } else { l as f32 })
            .collect();
        let mask = self.labels.iter().map(|&l| l != INVALID).collect();
        crate::raster::Raster::new(self.width, self.height, 1, data, mask)
            .expect("label map dimensions are valid")
    }

    pub fn from_raster(r: &crate::raster::Raster) -> Result<Self> {
        if r.bands() != 1 {
            return Err(Error::Shape(format!("label raster must have 1 band, got {}", r.bands())));
        }
        let labels = (0..r.pixels())
            .map(|p| {
                if !r.is_valid(p) {
                    return Ok(INVALID);
                }
                let v = r.sample(0, p);
                if v.fract() != 0.0 || v < NOISE as f32 || v > i32::MAX as f32 {
                    Err(Error::Format(format!("label raster value {v} at pixel {p} is not a label")))
                } else {
                    Ok(v as i32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(r.width(), r.height(), labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Serialize for Connectivity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        })
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(d)? {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(serde::de::Error::custom(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

const OFFSETS_4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const OFFSETS_8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &OFFSETS_4,
            Connectivity::Eight => &OFFSETS_8,
        }
    }
}

#[inline]
fn neighbors(p: usize, w: usize, h: usize, conn: Connectivity) -> impl Iterator<Item = usize> {
    let (x, y) = ((p % w) as i64, (p / w) as i64);
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then(|| ny as usize * w + nx as usize)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub label: i32,
    pub size: usize,
    pub bbox: BBox,
    /// First pixel in row-major order.
    pub first_pixel: usize,
}

#[derive(Debug, Clone)]
pub struct ComponentMap {
    pub width: u32,
    pub height: u32,
    /// Component id per pixel; `None` on sentinel pixels.
    pub ids: Vec<Option<u32>>,
    pub components: Vec<Component>,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so provisional labels resolve toward scan order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling. Component ids are dense and ordered by
/// each component's first pixel in row-major scan.
pub fn connected_components(lm: &LabelMap, conn: Connectivity) -> ComponentMap {
    let (w, h) = (lm.width as usize, lm.height as usize);
    let labels = &lm.labels;
    let mut provisional = vec![u32::MAX; w * h];
    let mut uf = UnionFind::new(0);
    let backward: &[(i64, i64)] = match conn {
        Connectivity::Four => &OFFSETS_4[..2],
        Connectivity::Eight => &OFFSETS_8[..4],
    };

    for p in 0..w * h {
        let l = labels[p];
        if is_sentinel(l) {
            continue;
        }
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        let mut assigned = u32::MAX;
        for &(dx, dy) in backward {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if labels[q] != l {
                continue;
            }
            if assigned == u32::MAX {
                assigned = provisional[q];
            } else {
                uf.union(assigned, provisional[q]);
            }
        }
        if assigned == u32::MAX {
            assigned = uf.parent.len() as u32;
            uf.parent.push(assigned);
        }
        provisional[p] = assigned;
    }

    let mut dense: HashMap<u32, u32> = HashMap::new();
    let mut ids = vec![None; w * h];
    let mut components: Vec<Component> = Vec::new();
    for p in 0..w * h {
        if provisional[p] == u32::MAX {
            continue;
        }
        let root = uf.find(provisional[p]);
        let next = components.len() as u32;
        let id = *dense.entry(root).or_insert(next);
        let (x, y) = ((p % w) as u32, (p / w) as u32);
        if id == next {
            components.push(Component {
                label: labels[p],
                size: 0,
                bbox: BBox { x0: x, y0: y, x1: x, y1: y },
                first_pixel: p,
            });
        }
        let c = &mut components[id as usize];
        c.size += 1;
        c.bbox.x0 = c.bbox.x0.min(x);
        c.bbox.x1 = c.bbox.x1.max(x);
        c.bbox.y1 = c.bbox.y1.max(y);
        ids[p] = Some(id);
    }
    ComponentMap {
        width: lm.width,
        height: lm.height,
        ids,
        components,
    }
}

/// Label that `pixels` would take: the modal label over distinct outside
/// pixels adjacent to the set, sentinels excluded, ties to the lowest label.
fn modal_neighbor_label(
    pixels: &[usize],
    labels: &[i32],
    w: usize,
    h: usize,
    conn: Connectivity,
    stamp: &mut [u32],
    generation: u32,
) -> Option<i32> {
    let own = labels[pixels[0]];
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &p in pixels {
        stamp[p] = generation;
    }
    for &p in pixels {
        for q in neighbors(p, w, h, conn) {
            if stamp[q] == generation {
                continue;
            }
            stamp[q] = generation;
            let l = labels[q];
            if !is_sentinel(l) && l != own {
                *counts.entry(l).or_default() += 1;
            }
        }
    }
    // max_by_key keeps the last maximum; iterate descending so ties go low.
    counts.into_iter().rev().max_by_key(|&(_, c)| c).map(|(l, _)| l)
}

/// Relabels every component smaller than `min_size` to the modal label
/// around it, smallest component first (ties: earliest first pixel), until
/// only components without valid neighbours remain below the threshold.
pub fn merge_small_components(lm: &LabelMap, min_size: usize, conn: Connectivity) -> LabelMap {
    if min_size <= 1 {
        return lm.clone();
    }
    let (w, h) = (lm.width as usize, lm.height as usize);
    let mut labels = lm.labels.clone();
    let cc = connected_components(lm, conn);

    let mut region_of: Vec<u32> = cc.ids.iter().map(|id| id.unwrap_or(u32::MAX)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cc.components.len()];
    for (p, id) in cc.ids.iter().enumerate() {
        if let Some(id) = id {
            members[*id as usize].push(p);
        }
    }
    let mut first: Vec<usize> = cc.components.iter().map(|c| c.first_pixel).collect();
    // (size, first pixel, region)
    let mut queue: BTreeSet<(usize, usize, u32)> = cc
        .components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.size < min_size)
        .map(|(i, c)| (c.size, c.first_pixel, i as u32))
        .collect();

    let mut stamp = vec![0u32; w * h];
    let mut generation = 0u32;

    while let Some((_, _, region)) = queue.pop_first() {
        generation += 1;
        let target = match modal_neighbor_label(&members[region as usize], &labels, w, h, conn, &mut stamp, generation) {
            Some(t) => t,
            // enclosed by sentinels or the grid edge; adjacency never changes
            None => continue,
        };
        let mut absorbed: BTreeSet<u32> = BTreeSet::new();
        for &p in &members[region as usize] {
            labels[p] = target;
            for q in neighbors(p, w, h, conn) {
                let r = region_of[q];
                if r != u32::MAX && r != region && labels[q] == target {
                    absorbed.insert(r);
                }
            }
        }
        // fold the relabelled region and its same-label neighbours into one
        let mut keep = region;
        for &r in &absorbed {
            if members[r as usize].len() > members[keep as usize].len() {
                keep = r;
            }
        }
        let mut group: Vec<u32> = absorbed.into_iter().collect();
        group.push(region);
        for &r in &group {
            let size = members[r as usize].len();
            if size < min_size {
                queue.remove(&(size, first[r as usize], r));
            }
        }
        let mut merged_first = first[keep as usize];
        for &r in &group {
            if r == keep {
                continue;
            }
            let moved = std::mem::take(&mut members[r as usize]);
            for &p in &moved {
                region_of[p] = keep;
            }
            merged_first = merged_first.min(first[r as usize]);
            members[keep as usize].extend(moved);
        }
        first[keep as usize] = merged_first;
        let size = members[keep as usize].len();
        if size < min_size {
            queue.insert((size, merged_first, keep));
        }
    }
    LabelMap {
        width: lm.width,
        height: lm.height,
        labels,
    }
}

/// One-pass substitution `from → to`.
pub fn remap_labels(lm: &LabelMap, mapping: &[(i32, i32)]) -> Result<LabelMap> {
    if mapping.is_empty() {
        return Ok(lm.clone());
    }
    let present = lm.label_set();
    let mut table: HashMap<i32, i32> = HashMap::new();
    for &(from, to) in mapping {
        if is_sentinel(from) || is_sentinel(to) {
            return Err(Error::invalid(format!("remap {from}->{to} touches a sentinel label")));
        }
        if from == to {
            return Err(Error::invalid(format!("remap {from}->{to} maps a label onto itself")));
        }
        if !present.contains(&from) {
            return Err(Error::invalid(format!("remap source label {from} is not in the map")));
        }
        if table.insert(from, to).is_some() {
            return Err(Error::invalid(format!("label {from} is remapped more than once")));
        }
    }
    if let Some(&(from, to)) = mapping.iter().find(|(_, to)| table.contains_key(to)) {
        return Err(Error::invalid(format!(
            "remap {from}->{to} chains into another remap source"
        )));
    }
    let labels = lm
        .labels
        .iter()
        .map(|l| *table.get(l).unwrap_or(l))
        .collect();
    Ok(LabelMap {
        width: lm.width,
        height: lm.height,
        labels,
    })
}

/// Renumbers surviving labels to `0..L` in order of first row-major
/// occurrence. Returns the `(old, new)` table ordered by `new`.
pub fn compact(lm: &LabelMap) -> (LabelMap, Vec<(i32, i32)>) {
    let mut table: HashMap<i32, i32> = HashMap::new();
    let mut order = Vec::new();
    let labels = lm
        .labels
        .iter()
        .map(|&l| {
            if is_sentinel(l) {
                return l;
            }
            let next = table.len() as i32;
            *table.entry(l).or_insert_with(|| {
                order.push((l, next));
                next
            })
        })
        .collect();
    (
        LabelMap {
            width: lm.width,
            height: lm.height,
            labels,
        },
        order,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: i32,
    pub class: String,
    pub color: Rgb,
}

pub const BENTHIC: &[(&str, Rgb)] = &[
    ("ocean", Rgb([30, 58, 138])),
    ("sand", Rgb([250, 204, 21])),
    ("rock/rubble", Rgb([139, 90, 43])),
];

pub const GEOMORPHIC: &[(&str, Rgb)] = &[
    ("reef flat", Rgb([217, 119, 6])),
    ("lagoon/plateau", Rgb([94, 234, 212])),
    ("reef slope", Rgb([124, 58, 237])),
    ("ocean", Rgb([30, 58, 138])),
];

pub fn preset(name: &str) -> Option<&'static [(&'static str, Rgb)]> {
    match name {
        "benthic" => Some(BENTHIC),
        "geomorphic" => Some(GEOMORPHIC),
        _ => None,
    }
}

pub fn preset_color(class: &str) -> Option<Rgb> {
    BENTHIC
        .iter()
        .chain(GEOMORPHIC)
        .find(|(c, _)| *c == class)
        .map(|(_, rgb)| *rgb)
}

/// Legend as written in configs and refine requests. A preset name assigns
/// the preset's classes to compacted labels `0..L` in order; explicit entries
/// refer to cluster ids after remapping (before compaction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LegendSpec {
    Preset(String),
    Entries(Vec<LegendEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    #[serde(default = "default_min_size")]
    pub min_size: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub remaps: Vec<(i32, i32)>,
}

fn default_min_size() -> usize {
    50
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            min_size: default_min_size(),
            connectivity: Connectivity::Eight,
            remaps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub k: Option<usize>,
    pub seed: u64,
    pub refine: RefineParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HabitatMap {
    pub labelmap: LabelMap,
    pub legend: Vec<LegendEntry>,
    pub provenance: Provenance,
}

impl HabitatMap {
    pub fn palette(&self) -> Palette {
        Palette::new(
            self.legend
                .iter()
                .map(|e| PaletteEntry {
                    label: e.label,
                    color: e.color,
                    name: e.class.clone(),
                    background: false,
                })
                .collect(),
        )
        .expect("legend labels are unique")
    }

    pub fn legend_json(&self) -> String {
        serde_json::to_string_pretty(&self.legend).expect("legend serializes") + "\n"
    }

    /// Distinct class names in the legend.
    pub fn classes(&self) -> BTreeSet<&str> {
        self.legend.iter().map(|e| e.class.as_str()).collect()
    }
}

/// Attaches a legend. Entries for labels absent from the map are dropped;
/// labels without an entry and duplicate entries are errors.
pub fn assign_legend(lm: &LabelMap, entries: &[LegendEntry], provenance: Provenance) -> Result<HabitatMap> {
    let mut seen = HashSet::new();
    let dup: Vec<i32> = entries.iter().filter(|e| !seen.insert(e.label)).map(|e| e.label).collect();
    if !dup.is_empty() {
        return Err(Error::invalid(format!("duplicate legend labels {dup:?}")));
    }
    let present = lm.label_set();
    let uncovered: Vec<i32> = present.iter().copied().filter(|l| !seen.contains(l)).collect();
    if !uncovered.is_empty() {
        return Err(Error::UncoveredLabels(uncovered));
    }
    let mut legend: Vec<LegendEntry> = entries.iter().filter(|e| present.contains(&e.label)).cloned().collect();
    legend.sort_by_key(|e| e.label);
    Ok(HabitatMap {
        labelmap: lm.clone(),
        legend,
        provenance,
    })
}

/// merge → remap → compact → legend.
pub fn refine(raw: &LabelMap, params: &RefineParams, legend: &LegendSpec, provenance: Provenance) -> Result<HabitatMap> {
    if params.min_size == 0 {
        return Err(Error::invalid("min_size must be at least 1"));
    }
    let merged = merge_small_components(raw, params.min_size, params.connectivity);
    let remapped = remap_labels(&merged, &params.remaps)?;
    let (compacted, table) = compact(&remapped);
    let entries: Vec<LegendEntry> = match legend {
        LegendSpec::Preset(name) => {
            let classes = preset(name).ok_or_else(|| Error::invalid(format!("unknown legend preset {name:?}")))?;
            if classes.len() != table.len() {
                return Err(Error::invalid(format!(
                    "preset {name:?} has {} classes but the refined map has {} labels",
                    classes.len(),
                    table.len()
                )));
            }
            classes
                .iter()
                .enumerate()
                .map(|(i, (class, color))| LegendEntry {
                    label: i as i32,
                    class: class.to_string(),
                    color: *color,
                })
                .collect()
        }
        LegendSpec::Entries(entries) => {
            let renumber: HashMap<i32, i32> = table.iter().copied().collect();
            let mut seen = HashSet::new();
            if let Some(e) = entries.iter().find(|e| !seen.insert(e.label)) {
                return Err(Error::invalid(format!("duplicate legend label {}", e.label)));
            }
            let uncovered: Vec<i32> = table.iter().map(|&(old, _)| old).filter(|l| !seen.contains(l)).collect();
            if !uncovered.is_empty() {
                return Err(Error::UncoveredLabels(uncovered));
            }
            entries
                .iter()
                .filter_map(|e| {
                    renumber.get(&e.label).map(|&new| LegendEntry {
                        label: new,
                        class: e.class.clone(),
                        color: e.color,
                    })
                })
                .collect()
        }
    };
    assign_legend(&compacted, &entries, provenance)
}
