use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use reefseg_core::fsutil::write_atomic;
use reefseg_core::pipeline::{compute_curve, provenance_json, refine_stage, render_map, ClusterStats, Clustering, Inputs, Timings};
use reefseg_core::raster::{decode_bnd, decode_png, encode_bnd, load_bnd};
use reefseg_core::refine::{Connectivity, LegendSpec, RefineParams};
use reefseg_core::select::CurveMethod;
use reefseg_core::{validate_config, LabelMap, Mode, Normalization, Raster};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{ApiError, ApiResult};
use crate::model::{now_ms, Dataset, Job, JobState, Transition};
use crate::store::CurveKey;
use crate::AppState;

type AppStateRef = State<Arc<AppState>>;

const UPLOAD_LIMIT: usize = 512 * 1024 * 1024;
const REVISION_FILES: [(&str, &str); 4] = [
    ("map.png", "image/png"),
    ("labels.bnd", "application/octet-stream"),
    ("legend.json", "application/json"),
    ("provenance.json", "application/json"),
];

pub(crate) fn routes(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/curves", get(get_curves))
        .route("/jobs", post(create_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/map.png", get(get_map))
        .route("/jobs/{id}/clusters", get(get_clusters))
        .route("/jobs/{id}/refine", post(refine_job))
        .route("/jobs/{id}/revisions/{rid}/export", get(export_revision))
        .route("/jobs/{id}/revisions/{rid}/{file}", get(revision_file))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        let status = if e.is_syntax() || e.is_eof() {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        ApiError::new(status, "malformed request body").with_details(vec![Value::from(e.to_string())])
    })
}

// ---- datasets ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetPaths {
    mosaic: std::path::PathBuf,
    bathymetry: Option<std::path::PathBuf>,
}

/// Decodes PNG or BND1 bytes by signature; returns the raster and its file extension.
fn decode_any(name: &str, bytes: &[u8]) -> ApiResult<(Raster, &'static str)> {
    let bad = |e: reefseg_core::Error| {
        ApiError::new(StatusCode::BAD_REQUEST, format!("{name} is unreadable")).with_details(vec![Value::from(e.to_string())])
    };
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes).map(|r| (r, "png")).map_err(bad)
    } else if bytes.starts_with(reefseg_core::raster::BND_MAGIC) {
        decode_bnd(bytes).map(|r| (r, "bnd")).map_err(bad)
    } else {
        Err(ApiError::new(StatusCode::BAD_REQUEST, format!("{name} is neither PNG nor BND1")))
    }
}

async fn create_dataset(State(state): AppStateRef, req: Request) -> ApiResult<Response> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let mut parts: Vec<(String, Vec<u8>)> = Vec::new();
    if is_multipart {
        let mut mp = Multipart::from_request(req, &state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            if name != "mosaic" && name != "bathymetry" {
                return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unexpected form field {name:?}")));
            }
            let data = field.bytes().await.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
            parts.push((name, data.to_vec()));
        }
    } else {
        if !state.config.allow_local_paths {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "server-local paths are disabled; upload the rasters as multipart/form-data",
            ));
        }
        let body = Bytes::from_request(req, &state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        let paths: DatasetPaths = parse_json(&body)?;
        let files = std::iter::once(("mosaic", paths.mosaic)).chain(paths.bathymetry.map(|b| ("bathymetry", b)));
        for (name, path) in files {
            let data = tokio::fs::read(&path).await.map_err(|e| {
                ApiError::new(StatusCode::BAD_REQUEST, format!("{name} is unreadable"))
                    .with_details(vec![Value::from(format!("{}: {e}", path.display()))])
            })?;
            parts.push((name.to_string(), data));
        }
    }
    blocking(move || register_dataset(&state, parts)).await
}

fn register_dataset(state: &AppState, parts: Vec<(String, Vec<u8>)>) -> ApiResult<Response> {
    let find = |n: &str| parts.iter().rev().find(|(name, _)| name == n).map(|(_, b)| b.as_slice());
    let mosaic_bytes = find("mosaic").ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "mosaic is required"))?;
    let (mosaic, mosaic_ext) = decode_any("mosaic", mosaic_bytes)?;
    let bathy = find("bathymetry").map(|b| decode_any("bathymetry", b).map(|r| (r, b))).transpose()?;
    if let Some(((b, _), _)) = &bathy {
        if !b.same_grid(&mosaic) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "mosaic and bathymetry are not co-registered").with_details(vec![
                json!({ "mosaic": mosaic.shape_string() }),
                json!({ "bathymetry": b.shape_string() }),
            ]));
        }
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.store.dataset_dir(&id);
    std::fs::create_dir_all(&dir).map_err(ApiError::internal)?;
    let mosaic_path = dir.join(format!("mosaic.{mosaic_ext}"));
    write_atomic(&mosaic_path, mosaic_bytes).map_err(ApiError::internal)?;
    let bathymetry = match bathy {
        Some(((_, ext), bytes)) => {
            let p = dir.join(format!("bathymetry.{ext}"));
            write_atomic(&p, bytes).map_err(ApiError::internal)?;
            Some(p)
        }
        None => None,
    };
    let dataset = Dataset {
        id: id.clone(),
        mosaic: mosaic_path,
        bathymetry,
        width: mosaic.width(),
        height: mosaic.height(),
        bands: mosaic.bands(),
        created_at_ms: now_ms(),
    };
    state.store.add_dataset(dataset.clone()).map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(dataset_json(&dataset))).into_response())
}

fn dataset_json(d: &Dataset) -> Value {
    json!({
        "dataset_id": d.id,
        "width": d.width,
        "height": d.height,
        "bands": d.bands,
        "bathymetry": d.bathymetry.is_some(),
    })
}

async fn get_dataset(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let d = state.store.dataset(&id).ok_or_else(|| ApiError::not_found("dataset", &id))?;
    Ok(Json(dataset_json(&d)))
}

#[derive(Deserialize)]
struct CurveQuery {
    method: String,
    kmin: usize,
    kmax: usize,
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(default)]
    normalization: Normalization,
    #[serde(default)]
    seed: u64,
}

const CURVE_K_LIMIT: usize = 32;

async fn get_curves(
    State(state): AppStateRef,
    Path(id): Path<String>,
    query: Result<Query<CurveQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let dataset = state.store.dataset(&id).ok_or_else(|| ApiError::not_found("dataset", &id))?;
    let method = match q.method.as_str() {
        "kmeans" | "wcss" => CurveMethod::Wcss,
        "gmm" | "bic" => CurveMethod::Bic,
        other => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("curves are available for kmeans and gmm, not {other:?}"),
            ))
        }
    };
    if q.kmin == 0 || q.kmin > q.kmax || q.kmax > CURVE_K_LIMIT {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("k range must satisfy 1 <= kmin <= kmax <= {CURVE_K_LIMIT}"),
        ));
    }
    let mode = q.mode.unwrap_or(Mode::Benthic);
    if mode == Mode::Geomorphic && dataset.bathymetry.is_none() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bathymetry required for geomorphic mode"));
    }
    let key = CurveKey {
        dataset: id,
        method: format!("{method:?}"),
        normalization: format!("{:?}", q.normalization),
        mode: format!("{mode:?}"),
        k_min: q.kmin,
        k_max: q.kmax,
        seed: q.seed,
    };
    if let Some(c) = state.store.curve(&key) {
        return Ok(Json(serde_json::to_value(c).expect("curve serializes")));
    }
    let st = state.clone();
    let curve = blocking(move || {
        let inputs = Inputs::load(&dataset.mosaic, dataset.bathymetry.as_deref()).map_err(ApiError::internal)?;
        let features = inputs.features(mode).map_err(ApiError::internal)?;
        let curve = compute_curve(&features, method, q.normalization, q.kmin, q.kmax, q.seed, &st.config.exec)
            .map_err(|e| ApiError::from_core(StatusCode::UNPROCESSABLE_ENTITY, &e))?;
        st.store.cache_curve(key, curve.clone());
        Ok(curve)
    })
    .await?;
    Ok(Json(serde_json::to_value(curve).expect("curve serializes")))
}

// ---- jobs ----

/// Keys a job request may not set; they come from the dataset or belong to refine requests.
const RESERVED: [&str; 6] = ["mosaic", "bathymetry", "output_dir", "refine", "legend", "curves"];

async fn create_job(State(state): AppStateRef, body: Bytes) -> ApiResult<Response> {
    let request: Value = parse_json(&body)?;
    let Value::Object(obj) = &request else {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "job request must be a JSON object"));
    };
    let dataset_id = obj
        .get("dataset_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "dataset_id is required"))?;
    let dataset = state.store.dataset(dataset_id).ok_or_else(|| ApiError::not_found("dataset", dataset_id))?;

    // top-level fields and `params` together form the pipeline config
    let mut cfg = Map::new();
    let mut problems = Vec::new();
    let params = match obj.get("params") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(p)) => p.clone(),
        Some(_) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "params must be an object")),
    };
    let top = obj.iter().filter(|(k, _)| k.as_str() != "dataset_id" && k.as_str() != "params");
    for (k, v) in top.chain(params.iter()) {
        if RESERVED.contains(&k.as_str()) {
            problems.push(format!("{k} cannot be set on a job"));
        } else if cfg.insert(k.clone(), v.clone()).is_some() {
            problems.push(format!("{k} given twice"));
        }
    }
    if !problems.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid parameters")
            .with_details(problems.into_iter().map(Value::from).collect()));
    }
    cfg.insert("mosaic".into(), json!(dataset.mosaic));
    if cfg.get("mode") == Some(&json!("geomorphic")) {
        if let Some(b) = &dataset.bathymetry {
            cfg.insert("bathymetry".into(), json!(b));
        }
    }
    let config = validate_config(&Value::Object(cfg).to_string())
        .map_err(|e| ApiError::from_core(StatusCode::UNPROCESSABLE_ENTITY, &e))?;

    let now = now_ms();
    let job = Job {
        id: uuid::Uuid::new_v4().simple().to_string(),
        dataset_id: dataset.id.clone(),
        state: JobState::Queued,
        request: request.clone(),
        config,
        metrics: None,
        error: None,
        created_at_ms: now,
        started_at_ms: None,
        finished_at_ms: None,
        history: vec![Transition {
            state: JobState::Queued,
            at_ms: now,
        }],
        timings: Timings::default(),
        revisions: Vec::new(),
        next_revision: 0,
    };
    let id = job.id.clone();
    state.store.insert_job(job).map_err(ApiError::internal)?;
    state.queue.send(id.clone()).map_err(ApiError::internal)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn list_jobs(State(state): AppStateRef) -> Json<Value> {
    Json(serde_json::to_value(state.store.jobs()).expect("jobs serialize"))
}

async fn get_job(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    state.store.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

fn finished_job(state: &AppState, id: &str) -> ApiResult<Job> {
    let job = state.store.job(id).ok_or_else(|| ApiError::not_found("job", id))?;
    if job.state != JobState::Done {
        let mut e = ApiError::new(StatusCode::CONFLICT, format!("job {id} is {:?}, not done", job.state).to_lowercase());
        if let Some(msg) = &job.error {
            e = e.with_details(vec![Value::from(msg.as_str())]);
        }
        return Err(e);
    }
    Ok(job)
}

async fn get_map(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    finished_job(&state, &id)?;
    let bytes = tokio::fs::read(state.store.job_dir(&id).join("map.png")).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn read_stats(state: &AppState, id: &str) -> ApiResult<Vec<ClusterStats>> {
    let bytes = std::fs::read(state.store.job_dir(id).join("clusters.json")).map_err(ApiError::internal)?;
    serde_json::from_slice(&bytes).map_err(ApiError::internal)
}

async fn get_clusters(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    finished_job(&state, &id)?;
    let stats = read_stats(&state, &id)?;
    Ok(Json(json!({ "job_id": id, "clusters": stats })))
}

// ---- refinement and export ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    min_size: Option<usize>,
    connectivity: Option<Connectivity>,
    #[serde(default)]
    remaps: Vec<(i32, i32)>,
    legend: Option<LegendSpec>,
}

async fn refine_job(State(state): AppStateRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let job = finished_job(&state, &id)?;
    let req: RefineRequest = if body.is_empty() {
        parse_json(b"{}")?
    } else {
        parse_json(&body)?
    };
    blocking(move || create_revision(&state, job, req)).await
}

fn create_revision(state: &AppState, job: Job, req: RefineRequest) -> ApiResult<Response> {
    let defaults = RefineParams::default();
    let mut cfg = job.config.clone();
    cfg.refine = RefineParams {
        min_size: req.min_size.unwrap_or(defaults.min_size),
        connectivity: req.connectivity.unwrap_or(defaults.connectivity),
        remaps: req.remaps,
    };
    cfg.legend = req.legend;
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid refinement")
            .with_details(problems.into_iter().map(Value::from).collect()));
    }
    let dir = state.store.job_dir(&job.id);
    let raw = load_bnd(&dir.join("raw_labels.bnd"))
        .and_then(|r| LabelMap::from_raster(&r))
        .map_err(ApiError::internal)?;
    let mut timings = job.timings.clone();
    let habitat = timings
        .time("refine", || refine_stage(&raw, &cfg))
        .map_err(|e| ApiError::from_core(StatusCode::UNPROCESSABLE_ENTITY, &e))?;
    let png = timings.time("render", || render_map(&habitat)).map_err(ApiError::internal)?;
    let clustering = Clustering {
        labels: raw,
        metrics: job.metrics.clone().unwrap_or_default(),
        stats: read_stats(state, &job.id)?,
    };
    let prov = provenance_json(&cfg, &clustering, &habitat, &timings, &state.config.exec);

    let rid = state
        .store
        .reserve_revision(&job.id)
        .ok_or_else(|| ApiError::not_found("job", &job.id))?;
    let rdir = state.store.revision_dir(&job.id, &rid);
    std::fs::create_dir_all(&rdir).map_err(ApiError::internal)?;
    let files: [(&str, Vec<u8>); 4] = [
        ("map.png", png),
        ("labels.bnd", encode_bnd(&habitat.labelmap.to_raster())),
        ("legend.json", habitat.legend_json().into_bytes()),
        ("provenance.json", prov.into_bytes()),
    ];
    for (name, bytes) in &files {
        write_atomic(&rdir.join(name), bytes).map_err(ApiError::internal)?;
    }
    state.store.register_revision(&job.id, &rid).map_err(ApiError::internal)?;
    let classes: Vec<&str> = habitat.classes().into_iter().collect();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "job_id": job.id,
            "revision_id": rid,
            "labels": habitat.legend.len(),
            "classes": classes,
        })),
    )
        .into_response())
}

fn revision_exists(state: &AppState, id: &str, rid: &str) -> ApiResult<()> {
    if state.store.job(id).is_none() {
        return Err(ApiError::not_found("job", id));
    }
    if !state.store.has_revision(id, rid) {
        return Err(ApiError::not_found("revision", rid));
    }
    Ok(())
}

async fn export_revision(State(state): AppStateRef, Path((id, rid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    revision_exists(&state, &id, &rid)?;
    let dir = state.store.revision_dir(&id, &rid);
    let mut files = Map::new();
    for (name, _) in REVISION_FILES {
        let bytes = tokio::fs::read(dir.join(name)).await.map_err(ApiError::internal)?;
        files.insert(name.to_string(), Value::from(BASE64.encode(bytes)));
    }
    Ok(Json(json!({
        "job_id": id,
        "revision_id": rid,
        "encoding": "base64",
        "files": files,
    })))
}

async fn revision_file(State(state): AppStateRef, Path((id, rid, file)): Path<(String, String, String)>) -> ApiResult<Response> {
    revision_exists(&state, &id, &rid)?;
    let (name, mime) = REVISION_FILES
        .iter()
        .find(|(n, _)| *n == file)
        .ok_or_else(|| ApiError::not_found("file", &file))?;
    let bytes = tokio::fs::read(state.store.revision_dir(&id, &rid).join(name))
        .await
        .map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, *mime)], bytes).into_response())
}
