use std::sync::Arc;

use reefseg_core::fsutil::write_atomic;
use reefseg_core::pipeline::{cluster_stage, Inputs, Metrics, Timings};
use reefseg_core::raster::encode_bnd;
use tokio::sync::{mpsc, Mutex};

use crate::model::JobState;
use crate::AppState;

/// Starts `config.workers` tasks draining the FIFO job queue.
pub(crate) fn spawn(state: Arc<AppState>, rx: mpsc::UnboundedReceiver<String>) {
    let rx = Arc::new(Mutex::new(rx));
    for _ in 0..state.config.workers.max(1) {
        let (state, rx) = (state.clone(), rx.clone());
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                let Some(id) = next else { break };
                let st = state.clone();
                if let Err(e) = tokio::task::spawn_blocking(move || run_job(&st, &id)).await {
                    tracing::error!("job worker panicked: {e}");
                }
            }
        });
    }
}

fn run_job(state: &AppState, id: &str) {
    let store = &state.store;
    let job = match store.transition(id, JobState::Running, |_| {}) {
        Ok(job) => job,
        Err(current) => {
            tracing::warn!("job {id} dequeued in state {current:?}; skipped");
            return;
        }
    };
    let dir = store.job_dir(id);
    let outcome = (|| -> reefseg_core::Result<(Metrics, Timings)> {
        let cfg = &job.config;
        let mut timings = Timings::default();
        let inputs = timings.time("load", || Inputs::load(&cfg.mosaic, cfg.bathymetry.as_deref()))?;
        let features = timings.time("stack", || inputs.features(cfg.mode))?;
        let clustering = cluster_stage(cfg, &features, &state.config.exec, &mut timings)?;
        write_atomic(&dir.join("raw_labels.bnd"), &encode_bnd(&clustering.labels.to_raster()))?;
        write_atomic(
            &dir.join("clusters.json"),
            &serde_json::to_vec_pretty(&clustering.stats).expect("stats serialize"),
        )?;
        write_atomic(&dir.join("map.png"), &clustering.preview_png()?)?;
        Ok((clustering.metrics, timings))
    })();
    let result = match outcome {
        Ok((metrics, timings)) => store.transition(id, JobState::Done, |j| {
            j.metrics = Some(metrics);
            j.timings = timings;
        }),
        Err(e) => {
            tracing::info!("job {id} failed: {e}");
            store.transition(id, JobState::Failed, |j| j.error = Some(e.to_string()))
        }
    };
    if let Err(current) = result {
        tracing::error!("job {id} could not finish from state {current:?}");
    }
}
