//! Directory-backed job and dataset store.
//!
//! Layout under the data root:
//!
//! ```text
//! datasets/<id>/dataset.json, mosaic.*, bathymetry.*
//! jobs/<id>/job.json, raw_labels.bnd, clusters.json, map.png
//! jobs/<id>/revisions/<rid>/map.png, labels.bnd, legend.json, provenance.json
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use reefseg_core::fsutil::write_atomic;
use reefseg_core::select::SelectionCurve;

use crate::model::{now_ms, Dataset, Job, JobState, Transition};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CurveKey {
    pub dataset: String,
    pub method: String,
    pub normalization: String,
    pub mode: String,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
}

#[derive(Default)]
struct Inner {
    datasets: HashMap<String, Dataset>,
    jobs: HashMap<String, Job>,
    curves: HashMap<CurveKey, SelectionCurve>,
}

pub struct Store {
    root: PathBuf,
    inner: Mutex<Inner>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    let bytes = std::fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn subdirs(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    out
}

impl Store {
    /// Opens the store, reloading everything on disk. Jobs caught mid-run by
    /// a restart are marked failed; queued jobs are returned for requeueing
    /// in submission order.
    pub fn open(root: &Path) -> std::io::Result<(Self, Vec<String>)> {
        std::fs::create_dir_all(root.join("datasets"))?;
        std::fs::create_dir_all(root.join("jobs"))?;
        let root = std::fs::canonicalize(root)?;
        let mut inner = Inner::default();
        for dir in subdirs(&root.join("datasets")) {
            if let Some(d) = read_json::<Dataset>(&dir.join("dataset.json")) {
                inner.datasets.insert(d.id.clone(), d);
            }
        }
        let mut requeue = Vec::new();
        for dir in subdirs(&root.join("jobs")) {
            let Some(mut job) = read_json::<Job>(&dir.join("job.json")) else {
                continue;
            };
            match job.state {
                JobState::Running => {
                    job.state = JobState::Failed;
                    job.error = Some("interrupted by a service restart".into());
                    job.finished_at_ms = Some(now_ms());
                    job.history.push(Transition {
                        state: JobState::Failed,
                        at_ms: now_ms(),
                    });
                    let _ = write_job(&dir, &job);
                }
                JobState::Queued => requeue.push((job.created_at_ms, job.id.clone())),
                _ => {}
            }
            inner.jobs.insert(job.id.clone(), job);
        }
        requeue.sort();
        let store = Self {
            root,
            inner: Mutex::new(inner),
        };
        Ok((store, requeue.into_iter().map(|(_, id)| id).collect()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    pub fn revision_dir(&self, job: &str, rid: &str) -> PathBuf {
        self.job_dir(job).join("revisions").join(rid)
    }

    pub fn add_dataset(&self, d: Dataset) -> reefseg_core::Result<()> {
        let dir = self.dataset_dir(&d.id);
        write_atomic(&dir.join("dataset.json"), &serde_json::to_vec_pretty(&d).expect("dataset serializes"))?;
        self.inner.lock().unwrap().datasets.insert(d.id.clone(), d);
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Option<Dataset> {
        self.inner.lock().unwrap().datasets.get(id).cloned()
    }

    pub fn insert_job(&self, job: Job) -> reefseg_core::Result<()> {
        let dir = self.job_dir(&job.id);
        std::fs::create_dir_all(&dir).map_err(|e| reefseg_core::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut inner = self.inner.lock().unwrap();
        write_job(&dir, &job)?;
        inner.jobs.insert(job.id.clone(), job);
        Ok(())
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.inner.lock().unwrap().jobs.get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs: Vec<Job> = self.inner.lock().unwrap().jobs.values().cloned().collect();
        jobs.sort_by(|a, b| (a.created_at_ms, &a.id).cmp(&(b.created_at_ms, &b.id)));
        jobs
    }

    /// Moves a job to `next`, applying `update` first. Illegal transitions
    /// leave the job untouched and return its current state.
    pub fn transition(&self, id: &str, next: JobState, update: impl FnOnce(&mut Job)) -> Result<Job, JobState> {
        let mut inner = self.inner.lock().unwrap();
        let job = inner.jobs.get_mut(id).ok_or(JobState::Failed)?;
        if !job.state.can_become(next) {
            return Err(job.state);
        }
        update(job);
        let at = now_ms();
        job.state = next;
        job.history.push(Transition { state: next, at_ms: at });
        match next {
            JobState::Running => job.started_at_ms = Some(at),
            JobState::Done | JobState::Failed => job.finished_at_ms = Some(at),
            JobState::Queued => {}
        }
        let snapshot = job.clone();
        // the in-memory state is authoritative; a failed write is logged only
        if let Err(e) = write_job(&self.job_dir(id), &snapshot) {
            tracing::error!("persisting job {id}: {e}");
        }
        Ok(snapshot)
    }

    /// Allocates the next revision id of a job.
    pub fn reserve_revision(&self, id: &str) -> Option<String> {
        let mut inner = self.inner.lock().unwrap();
        let job = inner.jobs.get_mut(id)?;
        job.next_revision += 1;
        Some(format!("r{}", job.next_revision))
    }

    /// Publishes a revision whose files are already on disk.
    pub fn register_revision(&self, id: &str, rid: &str) -> reefseg_core::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(job) = inner.jobs.get_mut(id) {
            job.revisions.push(rid.to_string());
            let snapshot = job.clone();
            write_job(&self.job_dir(id), &snapshot)?;
        }
        Ok(())
    }

    pub fn has_revision(&self, id: &str, rid: &str) -> bool {
        self.inner
            .lock()
            .unwrap()
            .jobs
            .get(id)
            .is_some_and(|j| j.revisions.iter().any(|r| r == rid))
    }

    pub fn curve(&self, key: &CurveKey) -> Option<SelectionCurve> {
        self.inner.lock().unwrap().curves.get(key).cloned()
    }

    pub fn cache_curve(&self, key: CurveKey, curve: SelectionCurve) {
        self.inner.lock().unwrap().curves.insert(key, curve);
    }
}

fn write_job(dir: &Path, job: &Job) -> reefseg_core::Result<()> {
    write_atomic(&dir.join("job.json"), &serde_json::to_vec_pretty(job).expect("job serializes"))
}
