//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefseg_core::cluster::agnes::{agnes_fit, AgnesConfig, DEFAULT_CAP};
use reefseg_core::cluster::dbscan::dbscan_fit;
use reefseg_core::cluster::gmm::{gmm_fit, GmmConfig};
use reefseg_core::cluster::kmeans::{kmeans_fit, KMeansConfig};
use reefseg_core::pipeline::load_config;
use reefseg_core::prep::{normalize, to_samples};
use reefseg_core::raster::{decode_bnd, encode_bnd, load_png, Raster};
use reefseg_core::refine::{merge_small_components, Connectivity};
use reefseg_core::select::{bic, detect_knee, wcss_curve, CurveMethod, CurvePoint, SelectionCurve};
use reefseg_core::{run_pipeline, Error, Exec, LabelMap, Normalization, SampleMatrix};
use reefseg_service::{Service, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit_s: u64) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    check(secs < limit_s as f64, || format!("took {secs:.1} s, limit {limit_s} s"))?;
    Ok(secs)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * scale).collect()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per: usize, sd: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(center.iter().map(|m| m + sd * gaussian(rng)).collect());
            truth.push(c);
        }
    }
    (rows, truth)
}

// ---- pipeline reproductions ----

fn benthic_gmm() -> Outcome {
    let start = Instant::now();
    let cfg = load_config(&root().join("configs/benthic_gmm.json")).map_err(|e| e.to_string())?;
    check(cfg.k == Some(4) && cfg.refine.remaps.len() == 1, || "config is not k=4 with one remap".into())?;
    let run = run_pipeline(&cfg, &Exec::Sequential).map_err(|e| e.to_string())?;
    check(run.clustering.metrics.clusters == 4, || format!("{} raw clusters", run.clustering.metrics.clusters))?;
    let classes = run.habitat.classes();
    let want = BTreeSet::from(["ocean", "sand", "rock/rubble"]);
    check(classes == want && run.habitat.legend.len() == 3, || format!("classes {classes:?}"))?;
    let secs = within(start, 30)?;
    Ok(format!("classes {classes:?} in {secs:.1} s"))
}

fn geomorphic_kmeans() -> Outcome {
    let start = Instant::now();
    let cfg = load_config(&root().join("configs/geomorphic_kmeans.json")).map_err(|e| e.to_string())?;
    check(cfg.k == Some(7) && cfg.bathymetry.is_some(), || "config is not k=7 with bathymetry".into())?;
    let run = run_pipeline(&cfg, &Exec::Sequential).map_err(|e| e.to_string())?;
    check(run.clustering.metrics.clusters == 7, || format!("{} raw clusters", run.clustering.metrics.clusters))?;
    let classes = run.habitat.classes();
    let want = BTreeSet::from(["reef flat", "lagoon/plateau", "reef slope", "ocean"]);
    check(classes == want && run.habitat.legend.len() == 4, || format!("classes {classes:?}"))?;
    let secs = within(start, 60)?;
    Ok(format!("classes {classes:?} in {secs:.1} s"))
}

fn agnes_cap() -> Outcome {
    let mut cfg = load_config(&root().join("configs/benthic_agnes.json")).map_err(|e| e.to_string())?;
    let downsample = cfg.agnes.downsample;
    cfg.agnes.downsample = 1;
    match run_pipeline(&cfg, &Exec::Sequential) {
        Err(e) if e.to_string().contains("cap") => {}
        Err(e) => return Err(format!("full raster failed for another reason: {e}")),
        Ok(_) => return Err("full raster was accepted".into()),
    }
    cfg.agnes.downsample = downsample;
    let run = run_pipeline(&cfg, &Exec::Sequential).map_err(|e| e.to_string())?;
    let samples = run.clustering.metrics.samples;

    // a fit exactly at the cap
    let mosaic = load_png(&root().join("data/mosaic.png")).map_err(|e| e.to_string())?;
    let (m, _) = normalize(&to_samples(&mosaic).map_err(|e| e.to_string())?, Normalization::Minmax);
    let rows: Vec<Vec<f64>> = m.rows().take(DEFAULT_CAP).map(<[f64]>::to_vec).collect();
    let at_cap = SampleMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (_, labels) = agnes_fit(&at_cap, 4, &AgnesConfig::default()).map_err(|e| e.to_string())?;
    check(labels.len() == DEFAULT_CAP, || "wrong label count".into())?;
    let secs = within(start, 120)?;
    Ok(format!(
        "refused {} px, ran at downsample {downsample} ({samples} samples), n={DEFAULT_CAP} in {secs:.1} s",
        mosaic.valid_count()
    ))
}

// ---- oracle equivalence ----

fn dbscan_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..100 {
        let n = rng.random_range(1..=500);
        let d = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = random_rows(&mut rng, n, d, 1.0)
            .into_iter()
            .map(|r| r.into_iter().map(|v| (v * 40.0).round() / 40.0).collect())
            .collect();
        let eps = rng.random_range(0.02..0.3);
        let min_pts = rng.random_range(1..=8);
        let m = SampleMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let got = dbscan_fit(&m, eps, min_pts, &Exec::Sequential).map_err(|e| e.to_string())?;
        check(got.labels == oracles::dbscan(&rows, eps, min_pts), || format!("case {case} differs"))?;
    }
    let secs = within(start, 10)?;
    Ok(format!("100 instances identical in {secs:.2} s"))
}

fn kmeans_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=3);
        let rows = random_rows(&mut rng, n, d, 1.0);
        let m = SampleMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let cfg = KMeansConfig {
            seed: case,
            ..KMeansConfig::default()
        };
        let (model, _) = kmeans_fit(&m, 2, &cfg).map_err(|e| e.to_string())?;
        let best = oracles::best_two_partition_wcss(&rows);
        let gap = (model.wcss - best).abs();
        worst = worst.max(gap);
        check(gap <= 1e-9, || format!("case {case}: {} vs optimum {best}", model.wcss))?;
    }
    let secs = within(start, 10)?;
    Ok(format!("50 instances, max gap {worst:.1e}, {secs:.2} s"))
}

fn merge_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for case in 0..200 {
        let w = rng.random_range(1..=16);
        let h = rng.random_range(1..=16);
        let classes = rng.random_range(1..=4);
        let labels: Vec<i32> = (0..w * h)
            .map(|_| match rng.random_range(0..20) {
                0 => -2,
                1 => -1,
                _ => rng.random_range(0..classes),
            })
            .collect();
        let min_size = rng.random_range(1..=12);
        let eight = rng.random::<bool>();
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let lm = LabelMap::new(w as u32, h as u32, labels.clone()).map_err(|e| e.to_string())?;
        let got = merge_small_components(&lm, min_size, conn);
        let want = oracles::merge_fixed_point(&labels, w, h, min_size, eight);
        check(got.labels() == &want[..], || format!("case {case} differs"))?;
    }
    let secs = within(start, 10)?;
    Ok(format!("200 grids identical in {secs:.2} s"))
}

// ---- numerical invariants ----

fn gmm_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut worst_drop, mut worst_row, mut worst_pi): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut iterations = 0;
    for case in 0..100 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let n = rng.random_range(20..=200);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| centers[i % k].iter().map(|c| c + 0.5 * gaussian(&mut rng)).collect())
            .collect();
        let m = SampleMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let cfg = GmmConfig {
            seed: case,
            tol: 0.0,
            max_iter: 50,
            ..GmmConfig::default()
        };
        let fit = gmm_fit(&m, k, &cfg).map_err(|e| e.to_string())?;
        iterations += fit.model.history.len() - 1;
        for w in fit.model.history.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        for row in fit.responsibilities.chunks_exact(k) {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        worst_pi = worst_pi.max((fit.model.weights.iter().sum::<f64>() - 1.0).abs());
        check(worst_drop <= 1e-8, || format!("case {case}: log-likelihood fell by {worst_drop:e}"))?;
        check(worst_row <= 1e-9, || format!("case {case}: responsibility row sum off by {worst_row:e}"))?;
        check(worst_pi <= 1e-9, || format!("case {case}: weights sum off by {worst_pi:e}"))?;
    }
    let secs = within(start, 10)?;
    Ok(format!(
        "100 fits, {iterations} EM steps, max drop {worst_drop:.1e}, row err {worst_row:.1e}, pi err {worst_pi:.1e}, {secs:.2} s"
    ))
}

fn kmeans_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for case in 0..100 {
        let n = rng.random_range(10..=300);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=6);
        let m = SampleMatrix::from_rows(&random_rows(&mut rng, n, d, 1.0)).map_err(|e| e.to_string())?;
        let cfg = KMeansConfig {
            seed: case,
            ..KMeansConfig::default()
        };
        let (model, _) = kmeans_fit(&m, k, &cfg).map_err(|e| e.to_string())?;
        check(model.history.windows(2).all(|w| w[1] <= w[0] + 1e-12), || {
            format!("case {case}: WCSS rose within a run")
        })?;
    }
    for case in 0..10 {
        let m = SampleMatrix::from_rows(&random_rows(&mut rng, 200, 3, 1.0)).map_err(|e| e.to_string())?;
        let cfg = KMeansConfig {
            seed: case,
            ..KMeansConfig::default()
        };
        let curve = wcss_curve(&m, 1..=8, &cfg).map_err(|e| e.to_string())?;
        check(curve.points.windows(2).all(|w| w[1].score <= w[0].score), || {
            format!("curve {case} is not non-increasing")
        })?;
    }

    let centers = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]];
    let (rows, truth) = blobs(&mut rng, &centers, 100, 0.05);
    let m = SampleMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let (_, labels) = kmeans_fit(&m, 3, &KMeansConfig::default()).map_err(|e| e.to_string())?;
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let agree = perms
        .iter()
        .map(|p| labels.iter().zip(&truth).filter(|(l, t)| p[**l] == **t).count())
        .max()
        .unwrap_or(0) as f64
        / truth.len() as f64;
    check(agree >= 0.99, || format!("blob agreement {:.3}", agree))?;
    let secs = within(start, 10)?;
    Ok(format!("100 runs monotone, 10 curves monotone, blob agreement {:.1}%, {secs:.2} s", agree * 100.0))
}

fn bic_and_knee() -> Outcome {
    let start = Instant::now();
    let m = SampleMatrix::from_rows(&[vec![0.0], vec![2.0]]).map_err(|e| e.to_string())?;
    let reg = 1e-6;
    let fit = gmm_fit(&m, 1, &GmmConfig { reg, ..GmmConfig::default() }).map_err(|e| e.to_string())?;
    let var = 1.0 + reg;
    let log_density = |x: f64| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - 1.0) * (x - 1.0) / (2.0 * var);
    let ll = log_density(0.0) + log_density(2.0);
    let want = 2.0 * 2f64.ln() - 2.0 * ll;
    let got = bic(&fit.model, &m).map_err(|e| e.to_string())?;
    check((got - want).abs() <= 1e-9, || format!("BIC {got} vs hand value {want}"))?;

    let points = [(1, 100.0), (2, 50.0), (3, 20.0), (4, 18.0), (5, 17.0)]
        .into_iter()
        .map(|(k, score)| CurvePoint { k, score })
        .collect();
    let curve = SelectionCurve::new(CurveMethod::Wcss, points).map_err(|e| e.to_string())?;
    let knee = detect_knee(&curve).map_err(|e| e.to_string())?;
    check(knee == Some(3), || format!("knee {knee:?}"))?;
    let secs = within(start, 10)?;
    Ok(format!("BIC {got:.12} (hand {want:.12}), knee k=3, {secs:.2} s"))
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    for name in ["benthic_gmm.json", "geomorphic_kmeans.json"] {
        let cfg = load_config(&root().join("configs").join(name)).map_err(|e| e.to_string())?;
        let a = run_pipeline(&cfg, &Exec::Sequential).map_err(|e| e.to_string())?;
        let b = run_pipeline(&cfg, &Exec::Sequential).map_err(|e| e.to_string())?;
        check(a.labels_bnd == b.labels_bnd, || format!("{name}: label BND1 differs"))?;
        check(a.map_png == b.map_png, || format!("{name}: PNG differs"))?;
        let decoded = decode_bnd(&a.labels_bnd).map_err(|e| e.to_string())?;
        check(encode_bnd(&decoded) == a.labels_bnd, || format!("{name}: BND1 re-encoding differs"))?;
        details.push(format!("{name} {} B", a.labels_bnd.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for case in 0..20 {
        let (w, h, bands) = (rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=4));
        let n = (w * h) as usize;
        let data: Vec<f32> = (0..n * bands as usize)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff) * if rng.random() { -1.0 } else { 1.0 })
            .collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_range(0..5) > 0).collect();
        let r = Raster::new(w, h, bands, data, mask).map_err(|e| e.to_string())?;
        let bytes = encode_bnd(&r);
        let back = decode_bnd(&bytes).map_err(|e| e.to_string())?;
        check(back == r && encode_bnd(&back) == bytes, || format!("round trip {case} is not bit-exact"))?;
    }
    Ok(format!("{}; 20 random rasters round-trip, {:.1} s", details.join(", "), start.elapsed().as_secs_f64()))
}

// ---- service ----

struct Client {
    app: Router,
}

impl Client {
    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> Result<(StatusCode, Vec<u8>), String> {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .app
            .clone()
            .oneshot(req.body(body).map_err(|e| e.to_string())?)
            .await
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
        Ok((status, bytes.to_vec()))
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> Result<(StatusCode, Value), String> {
        let (status, bytes) = self.call(method, uri, body).await?;
        Ok((status, serde_json::from_slice(&bytes).unwrap_or(Value::Null)))
    }

    async fn expect(&self, method: Method, uri: &str, body: Option<Value>, want: StatusCode) -> Result<Value, String> {
        let (status, v) = self.json(method, uri, body).await?;
        check(status == want, || format!("{uri}: {status} {v}"))?;
        Ok(v)
    }

    async fn dataset(&self) -> Result<String, String> {
        let body = json!({
            "mosaic": root().join("data/mosaic.png"),
            "bathymetry": root().join("data/bathymetry.bnd"),
        });
        let v = self.expect(Method::POST, "/datasets", Some(body), StatusCode::CREATED).await?;
        Ok(v["dataset_id"].as_str().unwrap_or_default().to_string())
    }

    /// Polls until terminal, recording every state observed.
    async fn wait(&self, job: &str) -> Result<(Value, Vec<String>), String> {
        let mut seen: Vec<String> = Vec::new();
        let deadline = Instant::now() + Duration::from_secs(300);
        while Instant::now() < deadline {
            let v = self.expect(Method::GET, &format!("/jobs/{job}"), None, StatusCode::OK).await?;
            let state = v["state"].as_str().unwrap_or_default().to_string();
            if seen.last() != Some(&state) {
                seen.push(state.clone());
            }
            if state == "done" || state == "failed" {
                return Ok((v, seen));
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        Err(format!("job {job} did not finish"))
    }
}

fn legal_path(states: &[&str]) -> bool {
    matches!(states, ["queued", "running", "done"] | ["queued", "running", "failed"])
}

fn rank(state: &str) -> usize {
    match state {
        "queued" => 0,
        "running" => 1,
        _ => 2,
    }
}

async fn concurrent_submissions(client: std::sync::Arc<Client>, dataset: &str) -> Outcome {
    let start = Instant::now();
    let mut handles = Vec::new();
    for i in 0..16u64 {
        let client = client.clone();
        let body = match i % 4 {
            0 => json!({ "dataset_id": dataset, "mode": "benthic", "method": "kmeans", "k": 2 + i % 5, "seed": i }),
            1 => json!({ "dataset_id": dataset, "mode": "geomorphic", "method": "gmm", "params": { "k": 3 }, "seed": i }),
            2 => json!({ "dataset_id": dataset, "mode": "benthic", "method": "agnes", "k": 4, "agnes": { "downsample": 4 + i % 3 } }),
            // refused by the sample cap, so it must end up failed
            _ => json!({ "dataset_id": dataset, "mode": "benthic", "method": "agnes", "k": 4, "agnes": { "downsample": 1 } }),
        };
        handles.push(tokio::spawn(async move {
            let v = client.expect(Method::POST, "/jobs", Some(body), StatusCode::ACCEPTED).await?;
            let id = v["job_id"].as_str().unwrap_or_default().to_string();
            let (job, seen) = client.wait(&id).await?;
            Ok::<_, String>((i, job, seen))
        }));
    }
    let mut done = 0;
    let mut failed = 0;
    for h in handles {
        let (i, job, seen) = h.await.map_err(|e| e.to_string())??;
        check(seen.windows(2).all(|w| rank(&w[0]) < rank(&w[1])), || format!("job {i} observed {seen:?}"))?;
        let history: Vec<&str> = job["history"]
            .as_array()
            .map(|a| a.iter().filter_map(|t| t["state"].as_str()).collect())
            .unwrap_or_default();
        check(legal_path(&history), || format!("job {i} history {history:?}"))?;
        let times: Vec<u64> = job["history"].as_array().unwrap().iter().filter_map(|t| t["at_ms"].as_u64()).collect();
        check(times.windows(2).all(|w| w[0] <= w[1]), || format!("job {i} timestamps go backwards"))?;
        let expect_failed = i % 4 == 3;
        check((job["state"] == "failed") == expect_failed, || format!("job {i} ended {}", job["state"]))?;
        if expect_failed {
            failed += 1;
        } else {
            done += 1;
        }
    }
    let (_, list) = client.json(Method::GET, "/jobs", None).await?;
    check(list.as_array().map(Vec::len) == Some(16), || "job list does not hold 16 jobs".into())?;
    Ok(format!("16 jobs ({done} done, {failed} failed), all histories legal, {:.1} s", start.elapsed().as_secs_f64()))
}

fn random_job(rng: &mut ChaCha8Rng, dataset: &str) -> Value {
    let mode = if rng.random() { "benthic" } else { "geomorphic" };
    let normalization = ["minmax", "zscore", "none"][rng.random_range(0..3)];
    let seed = rng.random_range(0..1000u64);
    let k = rng.random_range(2..=7u64);
    let linkage = ["ward", "complete", "average"][rng.random_range(0..3)];
    match rng.random_range(0..4) {
        0 => json!({ "dataset_id": dataset, "mode": mode, "method": "kmeans", "k": k, "seed": seed, "normalization": normalization }),
        1 => json!({ "dataset_id": dataset, "mode": mode, "method": "gmm", "k": k, "seed": seed, "normalization": normalization }),
        2 => json!({
            "dataset_id": dataset, "mode": mode, "method": "agnes", "k": k, "seed": seed, "normalization": normalization,
            "agnes": { "downsample": rng.random_range(3..=6), "linkage": linkage },
        }),
        _ => json!({
            "dataset_id": dataset, "mode": mode, "method": "dbscan", "seed": seed, "normalization": "minmax",
            "eps": rng.random_range(0.02..0.06), "min_pts": rng.random_range(4..=10),
        }),
    }
}

fn random_refine(rng: &mut ChaCha8Rng) -> Value {
    json!({
        "min_size": rng.random_range(1..=80),
        "connectivity": if rng.random() { 4 } else { 8 },
    })
}

fn cli_replay(config: &Value, dir: &Path) -> Result<Vec<u8>, String> {
    let cfg_path = dir.join("replay.json");
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_reefseg"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), || {
        format!("reefseg run failed: {}", String::from_utf8_lossy(&status.stderr))
    })?;
    std::fs::read(out.join("labels.bnd")).map_err(|e| e.to_string())
}

async fn export_matches_cli(client: &Client, dataset: &str) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut methods = Vec::new();
    for case in 0..10 {
        let body = random_job(&mut rng, dataset);
        let v = client.expect(Method::POST, "/jobs", Some(body.clone()), StatusCode::ACCEPTED).await?;
        let job = v["job_id"].as_str().unwrap_or_default().to_string();
        let (state, _) = client.wait(&job).await?;
        check(state["state"] == "done", || format!("case {case} {body}: {}", state["error"]))?;
        let refine = random_refine(&mut rng);
        let rev = client
            .expect(Method::POST, &format!("/jobs/{job}/refine"), Some(refine), StatusCode::CREATED)
            .await?;
        let rid = rev["revision_id"].as_str().unwrap_or_default();
        let export = client
            .expect(Method::GET, &format!("/jobs/{job}/revisions/{rid}/export"), None, StatusCode::OK)
            .await?;
        let file = |name: &str| -> Result<Vec<u8>, String> {
            BASE64
                .decode(export["files"][name].as_str().unwrap_or_default())
                .map_err(|e| e.to_string())
        };
        let labels = file("labels.bnd")?;
        let provenance: Value = serde_json::from_slice(&file("provenance.json")?).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = provenance["config"].clone();
        let replay = tokio::task::spawn_blocking({
            let dir = dir.path().to_path_buf();
            move || cli_replay(&config, &dir)
        })
        .await
        .map_err(|e| e.to_string())??;
        check(replay == labels, || format!("case {case} {body}: export and CLI replay differ"))?;
        methods.push(body["method"].as_str().unwrap_or_default().to_string());
    }
    Ok(format!("10 configs ({}) byte-identical, {:.1} s", methods.join(","), start.elapsed().as_secs_f64()))
}

fn service_criteria() -> Vec<(&'static str, Outcome)> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("runtime");
    rt.block_on(async {
        let data_root = tempfile::tempdir().expect("tempdir");
        let mut config = ServiceConfig::new(data_root.path());
        config.workers = 4;
        let service = match Service::start(config) {
            Ok(s) => s,
            Err(e) => {
                let e = format!("service did not start: {e}");
                return vec![("service: concurrent state machine", Err(e.clone())), ("service: export equals CLI replay", Err(e))];
            }
        };
        let client = std::sync::Arc::new(Client { app: service.router() });
        let dataset = match client.dataset().await {
            Ok(d) => d,
            Err(e) => return vec![("service: concurrent state machine", Err(e.clone())), ("service: export equals CLI replay", Err(e))],
        };
        let concurrent = concurrent_submissions(client.clone(), &dataset).await;
        let replay = export_matches_cli(&client, &dataset).await;
        vec![("service: concurrent state machine", concurrent), ("service: export equals CLI replay", replay)]
    })
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1 benthic gmm k=4 -> 3 classes", benthic_gmm),
        ("2 geomorphic k=7 -> 4 classes", geomorphic_kmeans),
        ("3 agnes cap and downsample", agnes_cap),
        ("4 dbscan vs brute force", dbscan_oracle),
        ("5 kmeans k=2 vs exhaustive", kmeans_oracle),
        ("6 merge vs fixed point", merge_oracle),
        ("7 gmm em invariants", gmm_invariants),
        ("8 kmeans invariants", kmeans_invariants),
        ("9 bic hand check and knee", bic_and_knee),
        ("10 determinism and bnd round trip", determinism),
    ];
    let mut results: Vec<(&str, Outcome)> = criteria.iter().map(|(name, f)| (*name, f())).collect();
    results.extend(service_criteria());

    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, outcome) in &results {
        let line = match outcome {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(why) => {
                failed.push(*name);
                format!("FAIL  {name}: {why}")
            }
        };
        writeln!(out, "{line}").expect("stdout");
    }
    writeln!(out, "acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len()).expect("stdout");
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn agnes_refusal_is_the_cap_error() {
    let mut cfg = load_config(&root().join("configs/benthic_agnes.json")).unwrap();
    cfg.agnes.downsample = 1;
    let err = run_pipeline(&cfg, &Exec::Sequential).unwrap_err();
    assert!(matches!(err.root(), Error::TooManySamples { cap: DEFAULT_CAP, .. }), "{err}");
}
