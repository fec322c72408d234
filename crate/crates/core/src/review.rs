//! Annotation queue for the manual verification stage.
//!
//! State is event-sourced from an append-only verdict log: replaying the log
//! over the same candidate list rebuilds the same queue. Leases are held in
//! memory only. Callers pass the current time explicitly.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::splitter::{latest_per_annotator, resolve_verdicts};
use crate::answerability::LabeledPair;
use crate::{Error, Letter, OptionText, QaPair, Result};

pub const DEFAULT_LEASE_MS: u64 = 10 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub question_image_answerable: bool,
    pub distractors_adequate: bool,
    pub image_quality_ok: bool,
}

impl Criteria {
    pub fn all(self) -> bool {
        self.question_image_answerable && self.distractors_adequate && self.image_quality_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict")]
pub struct ReviewVerdict {
    pub pair_id: String,
    pub annotator: String,
    pub criteria: Criteria,
    /// Always the conjunction of the three criteria.
    pub accept: bool,
    pub timestamp_ms: u64,
}

#[derive(Deserialize)]
struct RawVerdict {
    pair_id: String,
    annotator: String,
    criteria: Criteria,
    accept: bool,
    timestamp_ms: u64,
}

impl TryFrom<RawVerdict> for ReviewVerdict {
    type Error = Error;

    fn try_from(r: RawVerdict) -> Result<Self> {
        if r.accept != r.criteria.all() {
            return Err(Error::InvalidData(format!(
                "verdict for {} by {} has accept={} but criteria {:?}",
                r.pair_id, r.annotator, r.accept, r.criteria
            )));
        }
        Ok(ReviewVerdict::new(r.pair_id, r.annotator, r.criteria, r.timestamp_ms))
    }
}

impl ReviewVerdict {
    pub fn new(pair_id: String, annotator: String, criteria: Criteria, timestamp_ms: u64) -> Self {
        ReviewVerdict {
            pair_id,
            annotator,
            accept: criteria.all(),
            criteria,
            timestamp_ms,
        }
    }
}

/// Verdict as posted by a client. A claimed `accept` is ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictSubmission {
    pub pair_id: String,
    pub annotator: String,
    pub criteria: Criteria,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub annotator: String,
    pub expires_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub pair_id: String,
    pub image_url: String,
    pub question: String,
    pub options: [OptionText; 4],
    /// Shown to the annotator, who judges the pair rather than answering it.
    pub answer_letter: Letter,
    pub lease: Option<Lease>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub resolved: usize,
    pub accepted: usize,
    /// `accepted / resolved`, `None` before anything is resolved.
    pub retention_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReviewQueue {
    candidates: Vec<QaPair>,
    position: HashMap<String, usize>,
    image_refs: HashMap<String, String>,
    leases: HashMap<String, Lease>,
    log: Vec<ReviewVerdict>,
    reviewed: Vec<bool>,
    lease_ms: u64,
}

impl ReviewQueue {
    /// `candidates` in presentation order; `image_refs` maps record id to
    /// media path. Records without an image ref fall back to the record id.
    pub fn new(candidates: Vec<QaPair>, image_refs: HashMap<String, String>, lease_ms: u64) -> Result<Self> {
        let mut position = HashMap::new();
        for (i, p) in candidates.iter().enumerate() {
            if position.insert(p.pair_id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("candidate {} listed twice", p.pair_id)));
            }
        }
        let n = candidates.len();
        Ok(ReviewQueue {
            candidates,
            position,
            image_refs,
            leases: HashMap::new(),
            log: Vec::new(),
            reviewed: vec![false; n],
            lease_ms,
        })
    }

    /// Rebuild a queue from a verdict log.
    pub fn replay(
        candidates: Vec<QaPair>,
        image_refs: HashMap<String, String>,
        lease_ms: u64,
        log: Vec<ReviewVerdict>,
    ) -> Result<Self> {
        let mut queue = ReviewQueue::new(candidates, image_refs, lease_ms)?;
        for v in log {
            queue.apply(v)?;
        }
        Ok(queue)
    }

    pub fn log(&self) -> &[ReviewVerdict] {
        &self.log
    }

    pub fn candidates(&self) -> &[QaPair] {
        &self.candidates
    }

    /// The earliest candidate with no verdict and no live lease held by
    /// someone else. An annotator who already holds a live lease gets that
    /// task back with a renewed lease.
    pub fn next_task(&mut self, annotator: &str, now_ms: u64) -> Option<ReviewTask> {
        self.leases.retain(|_, l| l.expires_at_ms > now_ms);
        let held = self
            .leases
            .iter()
            .filter(|(_, l)| l.annotator == annotator)
            .filter_map(|(id, _)| self.position.get(id).copied())
            .min();
        let index = held.or_else(|| {
            (0..self.candidates.len())
                .find(|&i| !self.reviewed[i] && !self.leases.contains_key(&self.candidates[i].pair_id))
        })?;
        let lease = Lease {
            annotator: annotator.to_string(),
            expires_at_ms: now_ms.saturating_add(self.lease_ms),
        };
        let pair = &self.candidates[index];
        self.leases.insert(pair.pair_id.clone(), lease.clone());
        Some(self.task_for(index, Some(lease)))
    }

    fn task_for(&self, index: usize, lease: Option<Lease>) -> ReviewTask {
        let pair = &self.candidates[index];
        let image_ref = self
            .image_refs
            .get(&pair.record_id)
            .map(String::as_str)
            .unwrap_or(pair.record_id.as_str());
        ReviewTask {
            pair_id: pair.pair_id.clone(),
            image_url: format!("/media/{image_ref}"),
            question: pair.question.clone(),
            options: pair.options.clone(),
            answer_letter: pair.answer_letter,
            lease,
        }
    }

    /// Validate a submission and build the record to append to the log.
    /// Does not change the queue; follow with [`ReviewQueue::apply`] once
    /// the record is durable.
    pub fn prepare(&self, submission: VerdictSubmission, now_ms: u64) -> Result<ReviewVerdict> {
        if !self.position.contains_key(&submission.pair_id) {
            return Err(Error::UnknownPair(submission.pair_id));
        }
        if submission.annotator.trim().is_empty() {
            return Err(Error::InvalidData("annotator must be nonempty".into()));
        }
        Ok(ReviewVerdict::new(
            submission.pair_id,
            submission.annotator,
            submission.criteria,
            now_ms,
        ))
    }

    /// Record a verdict and release the pair's lease.
    pub fn apply(&mut self, verdict: ReviewVerdict) -> Result<()> {
        let index = *self
            .position
            .get(&verdict.pair_id)
            .ok_or_else(|| Error::UnknownPair(verdict.pair_id.clone()))?;
        self.reviewed[index] = true;
        self.leases.remove(&verdict.pair_id);
        self.log.push(verdict);
        Ok(())
    }

    pub fn submit(&mut self, submission: VerdictSubmission, now_ms: u64) -> Result<ReviewVerdict> {
        let verdict = self.prepare(submission, now_ms)?;
        self.apply(verdict.clone())?;
        Ok(verdict)
    }

    pub fn progress(&self) -> Progress {
        let resolved = resolve_verdicts(&self.log);
        let accepted = resolved.values().filter(|&&a| a).count();
        Progress {
            total: self.candidates.len(),
            resolved: resolved.len(),
            accepted,
            retention_rate: (!resolved.is_empty()).then(|| accepted as f64 / resolved.len() as f64),
        }
    }

    /// Resolved accept decision per reviewed pair.
    pub fn resolved(&self) -> BTreeMap<String, bool> {
        resolve_verdicts(&self.log)
    }

    pub fn export_labels(&self) -> Vec<LabeledPair> {
        export_labels(&self.log)
    }
}

/// Answerability labels from a verdict log: each annotator's latest
/// `question_image_answerable`, then a majority across annotators, with a
/// tie giving 0. Sorted by pair id.
pub fn export_labels(log: &[ReviewVerdict]) -> Vec<LabeledPair> {
    latest_per_annotator(log)
        .into_iter()
        .map(|(pair_id, by_annotator)| {
            let yes = by_annotator
                .values()
                .filter(|v| v.criteria.question_image_answerable)
                .count();
            let label = u8::from(2 * yes > by_annotator.len());
            LabeledPair { pair_id, label }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<QaPair> {
        (0..n)
            .map(|i| {
                QaPair::new(
                    format!("img{i}"),
                    1,
                    format!("What is in image {i}?"),
                    ["a".into(), "b".into(), "c".into(), "d".into()],
                    Letter::C,
                )
                .unwrap()
            })
            .collect()
    }

    fn queue(n: usize) -> ReviewQueue {
        let refs = (0..n).map(|i| (format!("img{i}"), format!("fig/{i}.jpg"))).collect();
        ReviewQueue::new(pairs(n), refs, 1_000).unwrap()
    }

    const ALL_TRUE: Criteria = Criteria {
        question_image_answerable: true,
        distractors_adequate: true,
        image_quality_ok: true,
    };

    fn submission(q: &ReviewQueue, i: usize, who: &str, criteria: Criteria) -> VerdictSubmission {
        VerdictSubmission {
            pair_id: q.candidates()[i].pair_id.clone(),
            annotator: who.into(),
            criteria,
            accept: None,
        }
    }

    #[test]
    fn first_candidate_leased_then_distinct_tasks() {
        let mut q = queue(3);
        let t1 = q.next_task("ann", 0).unwrap();
        assert_eq!(t1.pair_id, q.candidates()[0].pair_id);
        assert_eq!(t1.image_url, "/media/fig/0.jpg");
        assert_eq!(t1.lease.as_ref().unwrap().expires_at_ms, 1_000);
        let t2 = q.next_task("bob", 10).unwrap();
        assert_ne!(t1.pair_id, t2.pair_id);
        // Asking again returns the held task.
        assert_eq!(q.next_task("ann", 20).unwrap().pair_id, t1.pair_id);
    }

    #[test]
    fn expired_lease_is_reissued() {
        let mut q = queue(1);
        let t = q.next_task("ann", 0).unwrap();
        assert!(q.next_task("bob", 999).is_none());
        assert_eq!(q.next_task("bob", 1_000).unwrap().pair_id, t.pair_id);
    }

    #[test]
    fn accept_is_the_and_of_criteria() {
        let mut q = queue(2);
        let v = q.submit(submission(&q, 0, "a", ALL_TRUE), 5).unwrap();
        assert!(v.accept);
        let mut s = submission(&q, 1, "a", Criteria { image_quality_ok: false, ..ALL_TRUE });
        s.accept = Some(true);
        assert!(!q.submit(s, 6).unwrap().accept);
    }

    #[test]
    fn resubmission_supersedes() {
        let mut q = queue(2);
        q.submit(submission(&q, 0, "a", ALL_TRUE), 1).unwrap();
        let before = q.progress();
        q.submit(submission(&q, 0, "a", Criteria { distractors_adequate: false, ..ALL_TRUE }), 2)
            .unwrap();
        let after = q.progress();
        assert_eq!(before.resolved, after.resolved);
        assert_eq!((before.accepted, after.accepted), (1, 0));
        assert_eq!(q.log().len(), 2);
    }

    #[test]
    fn unknown_pair_and_empty_annotator() {
        let mut q = queue(1);
        let mut s = submission(&q, 0, "a", ALL_TRUE);
        s.pair_id = "nope".into();
        assert!(matches!(q.submit(s, 0), Err(Error::UnknownPair(_))));
        assert!(q.submit(submission(&q, 0, " ", ALL_TRUE), 0).is_err());
    }

    #[test]
    fn progress_retention() {
        let mut q = queue(12);
        assert_eq!(q.progress().retention_rate, None);
        for i in 0..10 {
            let c = if i < 8 { ALL_TRUE } else { Criteria { image_quality_ok: false, ..ALL_TRUE } };
            q.submit(submission(&q, i, "a", c), i as u64).unwrap();
        }
        let p = q.progress();
        assert_eq!((p.total, p.resolved, p.accepted), (12, 10, 8));
        assert_eq!(p.retention_rate, Some(0.8));
    }

    #[test]
    fn replay_reconstructs_state() {
        let mut q = queue(4);
        q.submit(submission(&q, 0, "a", ALL_TRUE), 1).unwrap();
        q.submit(submission(&q, 1, "b", Criteria { question_image_answerable: false, ..ALL_TRUE }), 2)
            .unwrap();
        q.submit(submission(&q, 0, "b", ALL_TRUE), 3).unwrap();
        let refs = (0..4).map(|i| (format!("img{i}"), format!("fig/{i}.jpg"))).collect();
        let mut r = ReviewQueue::replay(pairs(4), refs, 1_000, q.log().to_vec()).unwrap();
        assert_eq!(r.progress(), q.progress());
        assert_eq!(r.resolved(), q.resolved());
        assert_eq!(r.export_labels(), q.export_labels());
        assert_eq!(r.next_task("c", 10).unwrap().pair_id, q.next_task("c", 10).unwrap().pair_id);
    }

    #[test]
    fn label_export() {
        let mut q = queue(3);
        q.submit(submission(&q, 0, "a", ALL_TRUE), 1).unwrap();
        let no = Criteria { question_image_answerable: false, ..ALL_TRUE };
        q.submit(submission(&q, 1, "a", no), 1).unwrap();
        // Tie between two annotators on pair 2 exports 0.
        q.submit(submission(&q, 2, "a", ALL_TRUE), 1).unwrap();
        q.submit(submission(&q, 2, "b", no), 1).unwrap();
        let labels: HashMap<String, u8> =
            q.export_labels().into_iter().map(|l| (l.pair_id, l.label)).collect();
        assert_eq!(labels[&q.candidates()[0].pair_id], 1);
        assert_eq!(labels[&q.candidates()[1].pair_id], 0);
        assert_eq!(labels[&q.candidates()[2].pair_id], 0);
    }

    #[test]
    fn log_records_with_inconsistent_accept_rejected() {
        let v = ReviewVerdict::new("p".into(), "a".into(), ALL_TRUE, 1);
        let mut json = serde_json::to_value(&v).unwrap();
        assert!(serde_json::from_value::<ReviewVerdict>(json.clone()).is_ok());
        json["accept"] = false.into();
        assert!(serde_json::from_value::<ReviewVerdict>(json).is_err());
    }
}
