//! Durable state: an append-only JSONL event log plus a periodic snapshot.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use dataqual::corpus::{Dataset, Sample};
use dataqual::dqi::{component_scores, quality_report, DqiConfig};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::state::{Decision, DraftRecord, DraftStatus, Event, ServiceState, Verdict};
use crate::ServiceError;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Events between snapshots.
const SNAPSHOT_EVERY: u64 = 64;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: ServiceState,
}

/// Single writer, many readers. Readers clone an `Arc` of the latest state;
/// writers serialize through `write_lock`, validate against the current state,
/// append to the log, then publish the new state.
pub struct Store {
    dir: PathBuf,
    cfg: DqiConfig,
    state: RwLock<Arc<ServiceState>>,
    write_lock: Mutex<File>,
}

impl Store {
    /// Opens `dir`, replaying its log; seeds it with `seed` when the log is empty.
    pub fn open(dir: impl AsRef<Path>, seed: Option<Dataset>, cfg: DqiConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let events_path = dir.join(EVENTS_FILE);
        let existing = events_path.exists() && fs::metadata(&events_path)?.len() > 0;
        let state = if existing {
            if seed.is_some() {
                log::info!("state directory already seeded; ignoring the seed dataset");
            }
            Self::replay(&dir)?
        } else {
            let seed = seed.ok_or(ServiceError::EmptyDatasetState(0))?;
            let ev = Event::Seeded {
                schema: seed.schema.clone(),
                samples: seed.samples().to_vec(),
                at: Utc::now(),
            };
            let state = ServiceState::from_seed_event(&ev)?;
            append_line(&mut open_log(&events_path)?, &ev)?;
            state
        };
        Ok(Self {
            state: RwLock::new(Arc::new(state)),
            write_lock: Mutex::new(open_log(&events_path)?),
            dir,
            cfg,
        })
    }

    /// Rebuilds state from the snapshot (if any) and the events after it.
    pub fn replay(dir: &Path) -> Result<ServiceState, ServiceError> {
        let snapshot: Option<ServiceState> = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => Some(serde_json::from_slice::<Snapshot>(&bytes)?.state),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Self::replay_from(dir, snapshot)
    }

    /// Rebuilds state from the event log alone.
    pub fn replay_log(dir: &Path) -> Result<ServiceState, ServiceError> {
        Self::replay_from(dir, None)
    }

    fn replay_from(dir: &Path, snapshot: Option<ServiceState>) -> Result<ServiceState, ServiceError> {
        let reader = BufReader::new(File::open(dir.join(EVENTS_FILE))?);
        let mut state = snapshot;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let n = n as u64 + 1;
            if let Some(s) = &state {
                if n <= s.events_applied {
                    continue;
                }
            }
            let ev: Event =
                serde_json::from_str(&line).map_err(|e| ServiceError::Corrupt(format!("event {n}: {e}")))?;
            match &mut state {
                None => state = Some(ServiceState::from_seed_event(&ev)?),
                Some(s) => s.apply(&ev)?,
            }
        }
        state.ok_or_else(|| ServiceError::Corrupt("empty event log".into()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &DqiConfig {
        &self.cfg
    }

    /// The latest published state.
    pub fn snapshot(&self) -> Arc<ServiceState> {
        self.state.read().clone()
    }

    fn commit(&self, log: &mut File, ev: Event) -> Result<Arc<ServiceState>, ServiceError> {
        let mut next = (*self.snapshot()).clone();
        next.apply(&ev)?;
        append_line(log, &ev)?;
        if next.events_applied.is_multiple_of(SNAPSHOT_EVERY) {
            self.write_snapshot(&next)?;
        }
        let next = Arc::new(next);
        *self.state.write() = next.clone();
        Ok(next)
    }

    fn write_snapshot(&self, state: &ServiceState) -> Result<(), ServiceError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&Snapshot { state: state.clone() })?)?;
        fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    /// Scores `sample` against the current dataset and records it as a draft.
    pub fn post_draft(&self, mut sample: Sample, revises: Option<String>) -> Result<DraftRecord, ServiceError> {
        let base = self.snapshot();
        // The report is computed outside the writer lock; the draft id is
        // re-checked under it.
        sample.id = base.next_draft_id();
        base.dataset.schema.check(&sample)?;
        if let Some(r) = &revises {
            base.draft(r)?;
        }
        let report = quality_report(&base.dataset, None, &sample, &self.cfg)?;
        let mut log = self.write_lock.lock();
        let current = self.snapshot();
        let sample_id = current.next_draft_id();
        let report = if sample_id == sample.id && Arc::ptr_eq(&current.dataset, &base.dataset) {
            report
        } else {
            sample.id = sample_id;
            quality_report(&current.dataset, None, &sample, &self.cfg)?
        };
        let record = DraftRecord {
            draft_id: sample.id.clone(),
            sample,
            report,
            created_at: Utc::now(),
            status: DraftStatus::Draft,
            decision: None,
            revises,
        };
        let state = self.commit(&mut log, Event::DraftCreated { record: record.clone() })?;
        Ok(state.drafts[&record.draft_id].clone())
    }

    /// Idempotent: submitting an already submitted draft returns its id.
    pub fn submit(&self, draft_id: &str) -> Result<String, ServiceError> {
        let mut log = self.write_lock.lock();
        if self.snapshot().draft(draft_id)?.status == DraftStatus::Submitted {
            return Ok(draft_id.to_owned());
        }
        self.commit(
            &mut log,
            Event::Submitted {
                draft_id: draft_id.to_owned(),
                at: Utc::now(),
            },
        )?;
        Ok(draft_id.to_owned())
    }

    pub fn discard(&self, draft_id: &str) -> Result<(), ServiceError> {
        let mut log = self.write_lock.lock();
        self.commit(
            &mut log,
            Event::Discarded {
                draft_id: draft_id.to_owned(),
                at: Utc::now(),
            },
        )?;
        Ok(())
    }

    pub fn decide(
        &self,
        sample_id: &str,
        verdict: Verdict,
        feedback: String,
        validator_id: String,
    ) -> Result<DraftRecord, ServiceError> {
        let mut log = self.write_lock.lock();
        let current = self.snapshot();
        let decision = Decision {
            verdict,
            feedback,
            validator_id,
            decided_at: Utc::now(),
        };
        let mut ev = Event::Decided {
            draft_id: sample_id.to_owned(),
            decision,
            scores: None,
        };
        current.check(&ev)?;
        if verdict == Verdict::Accept {
            let mut after = (*current.dataset).clone();
            after.push(current.draft(sample_id)?.sample.clone())?;
            let scores = component_scores(&after, None, &self.cfg)?;
            if let Event::Decided { scores: s, .. } = &mut ev {
                *s = Some(scores);
            }
        }
        let state = self.commit(&mut log, ev)?;
        Ok(state.drafts[sample_id].clone())
    }
}

fn open_log(path: &Path) -> Result<File, ServiceError> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

fn append_line(log: &mut File, ev: &Event) -> Result<(), ServiceError> {
    let mut line = serde_json::to_vec(ev)?;
    line.push(b'\n');
    log.write_all(&line)?;
    log.sync_data()?;
    Ok(())
}
