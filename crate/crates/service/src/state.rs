//! Events and the state they fold into.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use dataqual::corpus::{Dataset, Sample, TaskSchema};
use dataqual::dqi::{DqiReport, DqiVector};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftStatus {
    Draft,
    Submitted,
    Accepted,
    Rejected,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub feedback: String,
    pub validator_id: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub draft_id: String,
    pub sample: Sample,
    pub report: DqiReport,
    pub created_at: DateTime<Utc>,
    pub status: DraftStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    /// The draft this one revises, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revises: Option<String>,
}

impl DraftRecord {
    pub fn component_level(mut self) -> Self {
        self.report = self.report.component_level();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub sample_id: String,
    pub size: usize,
    pub scores: DqiVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Seeded {
        schema: TaskSchema,
        samples: Vec<Sample>,
        at: DateTime<Utc>,
    },
    DraftCreated {
        record: DraftRecord,
    },
    Submitted {
        draft_id: String,
        at: DateTime<Utc>,
    },
    Discarded {
        draft_id: String,
        at: DateTime<Utc>,
    },
    Decided {
        draft_id: String,
        decision: Decision,
        /// Component scores of the dataset after an acceptance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scores: Option<DqiVector>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub size: usize,
    pub seed_size: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub pending: usize,
    /// Accepted over decided; absent before the first decision.
    pub acceptance_rate: Option<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Everything the event log determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub dataset: Arc<Dataset>,
    pub seed_size: usize,
    pub drafts: BTreeMap<String, DraftRecord>,
    /// Submitted drafts awaiting a decision, in submission order.
    pub queue: Vec<String>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub accepted: usize,
    pub rejected: usize,
    pub next_draft: u64,
    pub events_applied: u64,
}

impl ServiceState {
    pub fn seeded(schema: TaskSchema, samples: Vec<Sample>) -> Result<Self, ServiceError> {
        let dataset = Dataset::new(schema, samples)?;
        if dataset.len() < 2 {
            return Err(ServiceError::EmptyDatasetState(dataset.len()));
        }
        Ok(Self {
            seed_size: dataset.len(),
            dataset: Arc::new(dataset),
            drafts: BTreeMap::new(),
            queue: Vec::new(),
            trajectory: Vec::new(),
            accepted: 0,
            rejected: 0,
            next_draft: 1,
            events_applied: 1,
        })
    }

    pub fn from_seed_event(ev: &Event) -> Result<Self, ServiceError> {
        match ev {
            Event::Seeded { schema, samples, .. } => Self::seeded(schema.clone(), samples.clone()),
            _ => Err(ServiceError::Corrupt("event log does not start with a seed".into())),
        }
    }

    pub fn next_draft_id(&self) -> String {
        format!("draft-{:06}", self.next_draft)
    }

    pub fn draft(&self, id: &str) -> Result<&DraftRecord, ServiceError> {
        self.drafts
            .get(id)
            .ok_or_else(|| ServiceError::UnknownDraft(id.to_owned()))
    }

    /// Checks that `ev` is legal in the current state without applying it.
    pub fn check(&self, ev: &Event) -> Result<(), ServiceError> {
        let expect = |id: &str, want: DraftStatus| -> Result<(), ServiceError> {
            let have = self.draft(id)?.status;
            if have == want {
                Ok(())
            } else {
                Err(ServiceError::WrongState {
                    id: id.to_owned(),
                    status: have,
                })
            }
        };
        match ev {
            Event::Seeded { .. } => Err(ServiceError::Corrupt("second seed event".into())),
            Event::DraftCreated { record } => {
                if self.drafts.contains_key(&record.draft_id) {
                    return Err(ServiceError::Corrupt(format!("duplicate draft {}", record.draft_id)));
                }
                self.dataset.schema.check(&record.sample)?;
                Ok(())
            }
            Event::Submitted { draft_id, .. } | Event::Discarded { draft_id, .. } => {
                expect(draft_id, DraftStatus::Draft)
            }
            Event::Decided { draft_id, decision, .. } => {
                expect(draft_id, DraftStatus::Submitted)?;
                if decision.verdict == Verdict::Reject && decision.feedback.trim().is_empty() {
                    return Err(ServiceError::MissingFeedback);
                }
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, ev: &Event) -> Result<(), ServiceError> {
        self.check(ev)?;
        match ev {
            Event::Seeded { .. } => unreachable!("rejected by check"),
            Event::DraftCreated { record } => {
                self.next_draft += 1;
                self.drafts.insert(record.draft_id.clone(), record.clone());
            }
            Event::Submitted { draft_id, .. } => {
                self.drafts.get_mut(draft_id).expect("checked").status = DraftStatus::Submitted;
                self.queue.push(draft_id.clone());
            }
            Event::Discarded { draft_id, .. } => {
                self.drafts.get_mut(draft_id).expect("checked").status = DraftStatus::Discarded;
            }
            Event::Decided {
                draft_id,
                decision,
                scores,
            } => {
                let record = self.drafts.get_mut(draft_id).expect("checked");
                record.decision = Some(decision.clone());
                self.queue.retain(|q| q != draft_id);
                match decision.verdict {
                    Verdict::Accept => {
                        record.status = DraftStatus::Accepted;
                        let mut dataset = (*self.dataset).clone();
                        dataset.push(record.sample.clone())?;
                        self.dataset = Arc::new(dataset);
                        self.accepted += 1;
                        let scores = scores
                            .clone()
                            .ok_or_else(|| ServiceError::Corrupt(format!("acceptance of {draft_id} has no scores")))?;
                        self.trajectory.push(TrajectoryPoint {
                            sample_id: draft_id.clone(),
                            size: self.dataset.len(),
                            scores,
                        });
                    }
                    Verdict::Reject => {
                        record.status = DraftStatus::Rejected;
                        self.rejected += 1;
                    }
                }
            }
        }
        self.events_applied += 1;
        Ok(())
    }

    pub fn stats(&self) -> Stats {
        let decided = self.accepted + self.rejected;
        Stats {
            size: self.dataset.len(),
            seed_size: self.seed_size,
            accepted: self.accepted,
            rejected: self.rejected,
            pending: self.queue.len(),
            acceptance_rate: (decided > 0).then(|| self.accepted as f64 / decided as f64),
            trajectory: self.trajectory.clone(),
        }
    }
}
