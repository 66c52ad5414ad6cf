//! Config-driven end-to-end runs.
//!
//! The run is split into a cluster stage ([`cluster_stage`]) and a refine
//! stage ([`refine_stage`]) so that the HTTP service can cluster once and
//! refine many times through exactly the same code.

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cluster::{
    agnes_fit, dbscan_fit, estimate_eps, gmm_fit, kmeans::wcss, kmeans_fit, AgnesConfig, GmmConfig, KMeansConfig,
    Linkage,
};
use crate::error::{Error, Result, StageExt};
use crate::exec::Exec;
use crate::fsutil::write_atomic;
use crate::prep::{downsample, from_labels, normalize, stack_bands, to_samples, upsample_labels, Normalization, SampleMatrix};
use crate::raster::{encode_bnd, encode_png, load_auto, render_labels, Palette, Raster, Rgb};
use crate::refine::{is_sentinel, preset, refine, HabitatMap, LabelMap, LegendEntry, LegendSpec, Provenance, RefineParams, NOISE};
use crate::select::{bic, bic_curve, wcss_curve, CurveMethod, SelectionCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Benthic,
    Geomorphic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Gmm,
    Agnes,
    Dbscan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Gmm => "gmm",
            Method::Agnes => "agnes",
            Method::Dbscan => "dbscan",
        }
    }

    pub fn curve_method(self) -> Option<CurveMethod> {
        match self {
            Method::Kmeans => Some(CurveMethod::Wcss),
            Method::Gmm => Some(CurveMethod::Bic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        let d = KMeansConfig::default();
        Self {
            max_iter: d.max_iter,
            tol: d.tol,
            restarts: d.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub max_iter: usize,
    pub tol: f64,
    pub reg: f64,
    pub init_restarts: usize,
}

impl Default for GmmParams {
    fn default() -> Self {
        let d = GmmConfig::default();
        Self {
            max_iter: d.max_iter,
            tol: d.tol,
            reg: d.reg,
            init_restarts: d.init_restarts,
        }
    }
}

pub const DEFAULT_AGNES_DOWNSAMPLE: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgnesParams {
    /// Linear downsample factor applied before fitting.
    pub downsample: u32,
    pub cap: usize,
    pub linkage: Linkage,
}

impl Default for AgnesParams {
    fn default() -> Self {
        Self {
            downsample: DEFAULT_AGNES_DOWNSAMPLE,
            cap: crate::cluster::agnes::DEFAULT_CAP,
            linkage: Linkage::Ward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRange {
    pub k_min: usize,
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub mosaic: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bathymetry: Option<PathBuf>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pts: Option<usize>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub agnes: AgnesParams,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(default)]
    pub gmm: GmmParams,
    #[serde(default)]
    pub refine: RefineParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<LegendSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurveRange>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

const FIELDS: &[&str] = &[
    "mode",
    "mosaic",
    "bathymetry",
    "method",
    "k",
    "eps",
    "min_pts",
    "normalization",
    "agnes",
    "kmeans",
    "gmm",
    "refine",
    "legend",
    "seed",
    "output_dir",
    "curves",
];

impl PipelineConfig {
    /// A config with every optional field at its default.
    pub fn new(mode: Mode, mosaic: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            mode,
            mosaic: mosaic.into(),
            bathymetry: None,
            method,
            k: None,
            eps: None,
            min_pts: None,
            normalization: Normalization::default(),
            agnes: AgnesParams::default(),
            kmeans: KMeansParams::default(),
            gmm: GmmParams::default(),
            refine: RefineParams::default(),
            legend: None,
            seed: 0,
            output_dir: default_output_dir(),
            curves: None,
        }
    }

    /// Cross-field rule violations; empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match (self.mode, &self.bathymetry) {
            (Mode::Geomorphic, None) => errs.push("bathymetry required for geomorphic mode".to_string()),
            (Mode::Benthic, Some(_)) => errs.push("bathymetry is only used in geomorphic mode".to_string()),
            _ => {}
        }
        if self.method == Method::Dbscan {
            if self.k.is_some() {
                errs.push("k conflicts with method dbscan (use eps/min_pts)".to_string());
            }
            if let Some(eps) = self.eps {
                if !(eps > 0.0 && eps.is_finite()) {
                    errs.push(format!("eps must be positive, got {eps}"));
                }
            }
            if self.min_pts == Some(0) {
                errs.push("min_pts must be at least 1".to_string());
            }
        } else {
            match self.k {
                None => errs.push(format!("k required for method {}", self.method.name())),
                Some(0) => errs.push("k must be at least 1".to_string()),
                _ => {}
            }
            if self.eps.is_some() || self.min_pts.is_some() {
                errs.push(format!("eps/min_pts only apply to dbscan, not {}", self.method.name()));
            }
        }
        if self.agnes.downsample == 0 {
            errs.push("agnes.downsample must be at least 1".to_string());
        }
        if self.agnes.cap == 0 {
            errs.push("agnes.cap must be at least 1".to_string());
        }
        if self.kmeans.restarts == 0 || self.gmm.init_restarts == 0 {
            errs.push("restarts must be at least 1".to_string());
        }
        if !(self.kmeans.tol >= 0.0) || !(self.gmm.tol >= 0.0) {
            errs.push("tol must be non-negative".to_string());
        }
        if !(self.gmm.reg >= 0.0) {
            errs.push("gmm.reg must be non-negative".to_string());
        }
        if self.refine.min_size == 0 {
            errs.push("refine.min_size must be at least 1".to_string());
        }
        if let Some(LegendSpec::Preset(name)) = &self.legend {
            if preset(name).is_none() {
                errs.push(format!("unknown legend preset {name:?} (expected benthic or geomorphic)"));
            }
        }
        if let Some(c) = self.curves {
            if c.k_min == 0 || c.k_min > c.k_max {
                errs.push(format!("curves range {}..={} is empty or starts at 0", c.k_min, c.k_max));
            }
            if self.method.curve_method().is_none() {
                errs.push(format!("curves are available for kmeans and gmm, not {}", self.method.name()));
            }
        }
        errs
    }

    /// Joins relative input and output paths onto `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.mosaic);
        if let Some(b) = self.bathymetry.as_mut() {
            fix(b);
        }
        fix(&mut self.output_dir);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn kmeans_config(&self, exec: &Exec) -> KMeansConfig {
        KMeansConfig {
            max_iter: self.kmeans.max_iter,
            tol: self.kmeans.tol,
            restarts: self.kmeans.restarts,
            seed: self.seed,
            exec: exec.clone(),
        }
    }

    fn gmm_config(&self, exec: &Exec) -> GmmConfig {
        GmmConfig {
            max_iter: self.gmm.max_iter,
            tol: self.gmm.tol,
            reg: self.gmm.reg,
            seed: self.seed,
            init_restarts: self.gmm.init_restarts,
            exec: exec.clone(),
        }
    }
}

fn take<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str, errs: &mut Vec<String>) -> Option<T> {
    match obj.get(name) {
        None | Some(Value::Null) => None,
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("{name}: {e}"));
                None
            }
        },
    }
}

/// Parses a JSON config and reports every violation found.
pub fn validate_config(text: &str) -> Result<PipelineConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![format!("syntax error at line {} column {}: {e}", e.line(), e.column())])
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::Config(vec!["config must be a JSON object".into()]));
    };
    let mut errs: Vec<String> = obj
        .keys()
        .filter(|k| !FIELDS.contains(&k.as_str()))
        .map(|k| format!("unknown field {k:?}"))
        .collect();

    let mode: Option<Mode> = take(&obj, "mode", &mut errs);
    let mosaic: Option<PathBuf> = take(&obj, "mosaic", &mut errs);
    let method: Option<Method> = take(&obj, "method", &mut errs);
    for (name, present) in [("mode", mode.is_some()), ("mosaic", mosaic.is_some()), ("method", method.is_some())] {
        if !present && !obj.get(name).is_some_and(|v| !v.is_null()) {
            errs.push(format!("missing field {name:?}"));
        }
    }
    let d = PipelineConfig::new(Mode::Benthic, "", Method::Kmeans);
    let cfg = PipelineConfig {
        mode: mode.unwrap_or(d.mode),
        mosaic: mosaic.unwrap_or_default(),
        bathymetry: take(&obj, "bathymetry", &mut errs),
        method: method.unwrap_or(d.method),
        k: take(&obj, "k", &mut errs),
        eps: take(&obj, "eps", &mut errs),
        min_pts: take(&obj, "min_pts", &mut errs),
        normalization: take(&obj, "normalization", &mut errs).unwrap_or(d.normalization),
        agnes: take(&obj, "agnes", &mut errs).unwrap_or(d.agnes),
        kmeans: take(&obj, "kmeans", &mut errs).unwrap_or(d.kmeans),
        gmm: take(&obj, "gmm", &mut errs).unwrap_or(d.gmm),
        refine: take(&obj, "refine", &mut errs).unwrap_or(d.refine),
        legend: take(&obj, "legend", &mut errs),
        seed: take(&obj, "seed", &mut errs).unwrap_or(d.seed),
        output_dir: take(&obj, "output_dir", &mut errs).unwrap_or(d.output_dir),
        curves: take(&obj, "curves", &mut errs),
    };
    // rule checks on fields that failed to parse would only repeat the error
    if mode.is_some() && method.is_some() {
        errs.extend(cfg.violations());
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

/// Reads and validates a config file; relative paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    let mut cfg = validate_config(&text)?;
    cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(pub Vec<StageTiming>);

impl Timings {
    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        self.0.push(StageTiming {
            stage: stage.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub mosaic: Raster,
    pub bathymetry: Option<Raster>,
}

impl Inputs {
    pub fn load(mosaic: &Path, bathymetry: Option<&Path>) -> Result<Self> {
        let mosaic = load_auto(mosaic)?;
        let bathymetry = bathymetry.map(load_auto).transpose()?;
        if let Some(b) = &bathymetry {
            if !b.same_grid(&mosaic) {
                return Err(Error::Shape(format!(
                    "mosaic is {} but bathymetry is {}",
                    mosaic.shape_string(),
                    b.shape_string()
                )));
            }
        }
        Ok(Self { mosaic, bathymetry })
    }

    /// Feature raster for the mode: the mosaic, or mosaic plus bathymetry.
    pub fn features(&self, mode: Mode) -> Result<Raster> {
        match (mode, &self.bathymetry) {
            (Mode::Benthic, _) => Ok(self.mosaic.clone()),
            (Mode::Geomorphic, Some(b)) => stack_bands(&[self.mosaic.clone(), b.clone()]),
            (Mode::Geomorphic, None) => Err(Error::invalid("geomorphic mode needs a bathymetry raster")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wcss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub clusters: usize,
    /// Samples the model was fitted on (after any downsampling).
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_pts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub label: i32,
    pub size: usize,
    pub mean_feature: Vec<f64>,
    pub mean_color: Rgb,
}

/// Raw (unrefined) clustering on the full grid.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub labels: LabelMap,
    pub metrics: Metrics,
    pub stats: Vec<ClusterStats>,
}

impl Clustering {
    /// Raw labels painted with the categorical palette.
    pub fn preview_png(&self) -> Result<Vec<u8>> {
        let max = self.labels.label_set().iter().copied().filter(|&l| !is_sentinel(l)).max();
        let palette = Palette::categorical(max.map_or(0, |m| m as usize + 1));
        encode_png(&render_labels(&self.labels, &palette)?)
    }
}

fn fit_labels(cfg: &PipelineConfig, m: &SampleMatrix, exec: &Exec) -> Result<(Vec<i32>, Metrics)> {
    let mut metrics = Metrics {
        samples: m.n(),
        ..Metrics::default()
    };
    let to_i32 = |v: Vec<usize>| v.into_iter().map(|l| l as i32).collect::<Vec<_>>();
    let labels = match cfg.method {
        Method::Kmeans => {
            let k = cfg.k.unwrap_or(0);
            let (model, labels) = kmeans_fit(m, k, &cfg.kmeans_config(exec))?;
            metrics.wcss = Some(model.wcss);
            metrics.iterations = model.iterations;
            to_i32(labels)
        }
        Method::Gmm => {
            let k = cfg.k.unwrap_or(0);
            let fit = gmm_fit(m, k, &cfg.gmm_config(exec))?;
            metrics.log_likelihood = Some(fit.model.log_likelihood);
            metrics.bic = Some(bic(&fit.model, m)?);
            metrics.iterations = fit.model.iterations;
            to_i32(fit.labels)
        }
        Method::Agnes => {
            let k = cfg.k.unwrap_or(0);
            let acfg = AgnesConfig {
                linkage: cfg.agnes.linkage,
                cap: cfg.agnes.cap,
                exec: exec.clone(),
            };
            let (tree, labels) = agnes_fit(m, k, &acfg)?;
            let centroids = means(m, &labels, k);
            metrics.wcss = Some(wcss(m, &labels, &centroids));
            metrics.iterations = tree.merges.len();
            to_i32(labels)
        }
        Method::Dbscan => {
            let min_pts = cfg.min_pts.unwrap_or(2 * m.d()).max(1);
            let eps = match cfg.eps {
                Some(e) => e,
                None => estimate_eps(m, min_pts, exec)?,
            };
            let res = dbscan_fit(m, eps, min_pts, exec)?;
            metrics.noise = Some(res.labels.iter().filter(|&&l| l == NOISE).count());
            metrics.eps = Some(eps);
            metrics.min_pts = Some(min_pts);
            res.labels
        }
    };
    metrics.clusters = labels.iter().filter(|&&l| l >= 0).collect::<std::collections::BTreeSet<_>>().len();
    Ok((labels, metrics))
}

fn means(m: &SampleMatrix, labels: &[usize], k: usize) -> Vec<f64> {
    let d = m.d();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (row, &l) in m.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

/// Per-label size, mean feature vector and mean display color on the full grid.
pub fn cluster_stats(labels: &LabelMap, features: &Raster) -> Vec<ClusterStats> {
    let bands = features.bands() as usize;
    let mut acc: std::collections::BTreeMap<i32, (usize, Vec<f64>)> = Default::default();
    for (p, &l) in labels.labels().iter().enumerate() {
        if is_sentinel(l) || !features.is_valid(p) {
            continue;
        }
        let e = acc.entry(l).or_insert_with(|| (0, vec![0.0; bands]));
        e.0 += 1;
        for (b, s) in e.1.iter_mut().enumerate() {
            *s += features.sample(b, p) as f64;
        }
    }
    acc.into_iter()
        .map(|(label, (size, sums))| {
            let mean: Vec<f64> = sums.iter().map(|s| s / size as f64).collect();
            let channel = |b: usize| (mean[b.min(bands - 1)].clamp(0.0, 1.0) * 255.0).round() as u8;
            let mean_color = if bands >= 3 {
                Rgb([channel(0), channel(1), channel(2)])
            } else {
                Rgb([channel(0); 3])
            };
            ClusterStats {
                label,
                size,
                mean_feature: mean,
                mean_color,
            }
        })
        .collect()
}

/// downsample (agnes) → samples → normalize → fit → label map on the full grid.
pub fn cluster_stage(cfg: &PipelineConfig, features: &Raster, exec: &Exec, timings: &mut Timings) -> Result<Clustering> {
    let factor = if cfg.method == Method::Agnes { cfg.agnes.downsample.max(1) } else { 1 };
    let fit_raster: Cow<Raster> = if factor > 1 {
        Cow::Owned(timings.time("downsample", || downsample(features, factor))?)
    } else {
        Cow::Borrowed(features)
    };
    let m = timings.time("samples", || {
        let m = to_samples(&fit_raster)?;
        if m.n() == 0 {
            return Err(Error::invalid("raster has no valid pixels"));
        }
        Ok(m)
    })?;
    let nm = timings.time("normalize", || Ok(normalize(&m, cfg.normalization).0))?;
    let (labels, metrics) = timings.time("fit", || fit_labels(cfg, &nm, exec))?;
    let labels = timings.time("labels", || {
        let coarse = from_labels(&labels, &m, fit_raster.width(), fit_raster.height())?;
        if factor > 1 {
            upsample_labels(&coarse, factor, features.width(), features.height(), features.mask())
        } else {
            Ok(coarse)
        }
    })?;
    let stats = cluster_stats(&labels, features);
    Ok(Clustering { labels, metrics, stats })
}

/// Legend used when a config names none: one entry per cluster id with the
/// categorical palette color.
pub fn default_legend(raw: &LabelMap, params: &RefineParams) -> LegendSpec {
    let max = raw
        .label_set()
        .into_iter()
        .chain(params.remaps.iter().map(|&(_, to)| to))
        .filter(|&l| !is_sentinel(l))
        .max();
    let n = max.map_or(0, |m| m as usize + 1);
    let palette = Palette::categorical(n);
    LegendSpec::Entries(
        palette
            .entries()
            .iter()
            .map(|e| LegendEntry {
                label: e.label,
                class: e.name.clone(),
                color: e.color,
            })
            .collect(),
    )
}

pub fn provenance(cfg: &PipelineConfig, refine: &RefineParams) -> Provenance {
    Provenance {
        method: cfg.method.name().to_string(),
        k: cfg.k,
        seed: cfg.seed,
        refine: refine.clone(),
    }
}

/// merge_small → remaps → compact → legend.
pub fn refine_stage(raw: &LabelMap, cfg: &PipelineConfig) -> Result<HabitatMap> {
    let legend = cfg.legend.clone().unwrap_or_else(|| default_legend(raw, &cfg.refine));
    refine(raw, &cfg.refine, &legend, provenance(cfg, &cfg.refine))
}

/// PNG of a habitat map rendered through its legend.
pub fn render_map(h: &HabitatMap) -> Result<Vec<u8>> {
    encode_png(&render_labels(&h.labelmap, &h.palette())?)
}

/// Curve on the normalized samples of a feature raster.
pub fn compute_curve(
    features: &Raster,
    method: CurveMethod,
    normalization: Normalization,
    k_min: usize,
    k_max: usize,
    seed: u64,
    exec: &Exec,
) -> Result<SelectionCurve> {
    let m = normalize(&to_samples(features)?, normalization).0;
    match method {
        CurveMethod::Wcss => {
            let cfg = KMeansConfig {
                seed,
                exec: exec.clone(),
                ..KMeansConfig::default()
            };
            wcss_curve(&m, k_min..=k_max, &cfg)
        }
        CurveMethod::Bic => {
            let cfg = GmmConfig {
                seed,
                exec: exec.clone(),
                ..GmmConfig::default()
            };
            bic_curve(&m, k_min..=k_max, &cfg)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub map_png: Vec<u8>,
    pub labels_bnd: Vec<u8>,
    pub legend_json: String,
    pub curves_csv: Option<String>,
    pub provenance_json: String,
    pub habitat: HabitatMap,
    pub clustering: Clustering,
    pub curve: Option<SelectionCurve>,
}

impl RunArtifacts {
    /// Writes every artifact atomically into `dir`, returning the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<(&str, &[u8])> = vec![
            ("map.png", &self.map_png),
            ("labels.bnd", &self.labels_bnd),
            ("legend.json", self.legend_json.as_bytes()),
            ("provenance.json", self.provenance_json.as_bytes()),
        ];
        if let Some(csv) = &self.curves_csv {
            files.push(("curves.csv", csv.as_bytes()));
        }
        files
            .into_iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                write_atomic(&path, bytes)?;
                Ok(path)
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ProvenanceDoc<'a> {
    version: &'static str,
    config: &'a PipelineConfig,
    method: &'a str,
    k: Option<usize>,
    seed: u64,
    refine: &'a RefineParams,
    threads: usize,
    metrics: &'a Metrics,
    raw_clusters: &'a [ClusterStats],
    legend: &'a [LegendEntry],
    timings_ms: &'a Timings,
}

pub fn provenance_json(
    cfg: &PipelineConfig,
    clustering: &Clustering,
    habitat: &HabitatMap,
    timings: &Timings,
    exec: &Exec,
) -> String {
    let doc = ProvenanceDoc {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        method: cfg.method.name(),
        k: cfg.k,
        seed: cfg.seed,
        refine: &cfg.refine,
        threads: exec.threads(),
        metrics: &clustering.metrics,
        raw_clusters: &clustering.stats,
        legend: &habitat.legend,
        timings_ms: timings,
    };
    serde_json::to_string_pretty(&doc).expect("provenance serializes") + "\n"
}

/// Runs the whole pipeline in memory. Nothing is written; see [`RunArtifacts::write`].
pub fn run_pipeline(cfg: &PipelineConfig, exec: &Exec) -> Result<RunArtifacts> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut timings = Timings::default();
    let inputs = timings.time("load", || Inputs::load(&cfg.mosaic, cfg.bathymetry.as_deref()))?;
    let features = timings.time("stack", || inputs.features(cfg.mode))?;
    let clustering = cluster_stage(cfg, &features, exec, &mut timings)?;
    let curve = match cfg.curves {
        Some(c) => Some(timings.time("curves", || {
            let method = cfg
                .method
                .curve_method()
                .ok_or_else(|| Error::invalid("curves need kmeans or gmm"))?;
            compute_curve(&features, method, cfg.normalization, c.k_min, c.k_max, cfg.seed, exec)
        })?),
        None => None,
    };
    let habitat = timings.time("refine", || refine_stage(&clustering.labels, cfg))?;
    let map_png = timings.time("render", || render_map(&habitat))?;
    let labels_bnd = encode_bnd(&habitat.labelmap.to_raster());
    let legend_json = habitat.legend_json();
    let provenance_json = provenance_json(cfg, &clustering, &habitat, &timings, exec);
    Ok(RunArtifacts {
        map_png,
        labels_bnd,
        legend_json,
        curves_csv: curve.as_ref().map(SelectionCurve::to_csv),
        provenance_json,
        habitat,
        clustering,
        curve,
    })
}
