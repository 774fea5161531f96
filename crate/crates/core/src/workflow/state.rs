//! Event application: the single place where project state changes.
//!
//! Live operations and replay both go through [`Project::apply`], so a log
//! that was accepted live always rebuilds the same state.

use std::collections::{BTreeMap, BTreeSet};

use super::types::*;
use super::EngineError;
use crate::compose::{compose_instructions, normalize_tag, Resolution, SEED_TARGET};
use crate::eval::Decision;
use crate::model::DatasetManifest;
use crate::sim::GoldIntent;

fn wrong_stage(expected: &[Stage], actual: Stage) -> EngineError {
    EngineError::WrongStage {
        expected: expected.to_vec(),
        actual,
    }
}

impl Project {
    /// Builds the initial state from a `project_created` record.
    pub(crate) fn from_creation(rec: &EventRecord, manifest: &DatasetManifest) -> Result<Self, EngineError> {
        let Event::ProjectCreated {
            project_id,
            manifest_ref,
            intent_id,
            experiment_group,
            seed_example,
            collaboration_mode,
        } = &rec.event
        else {
            return Err(EngineError::Validation(format!(
                "first event must be project_created, got {}",
                rec.event.kind()
            )));
        };
        if rec.seq != 1 {
            return Err(EngineError::Validation("project_created must have seq 1".into()));
        }
        super::validate_project_id(project_id)?;
        manifest.intent(intent_id)?;
        let tag = normalize_tag(&seed_example.concept_tag);
        if tag.is_empty() {
            return Err(EngineError::Validation("seed concept tag is empty".into()));
        }
        if seed_example.image_uri.trim().is_empty() {
            return Err(EngineError::Validation("seed image is empty".into()));
        }
        let seed = SeedExample {
            image_uri: seed_example.image_uri.clone(),
            concept_tag: tag,
        };
        let mut resolution = Resolution::new(project_id.clone(), 1);
        resolution.add_candidate(SEED_TARGET, &seed.image_uri, &seed.concept_tag);
        Ok(Project {
            id: project_id.clone(),
            manifest_ref: manifest_ref.clone(),
            intent_id: intent_id.clone(),
            experiment_group: experiment_group.clone(),
            stage: Stage::Find,
            iteration: 1,
            seed_example: seed,
            collaboration_mode: *collaboration_mode,
            created_at: rec.occurred_at,
            submissions: Vec::new(),
            resolution,
            resolved: None,
            bundles: BTreeMap::new(),
            assignments: BTreeMap::new(),
            last_seq: 1,
        })
    }

    /// Validates `rec` against the current state and applies it. On error the
    /// state may be partially modified; callers apply to a copy.
    pub(crate) fn apply(&mut self, rec: &EventRecord, manifest: &DatasetManifest) -> Result<(), EngineError> {
        if rec.seq != self.last_seq + 1 {
            return Err(EngineError::SequenceGap {
                project: self.id.clone(),
                expected: self.last_seq + 1,
                found: rec.seq,
            });
        }
        if self.stage == Stage::Complete {
            return Err(wrong_stage(&[Stage::Find, Stage::Resolve, Stage::Label], Stage::Complete));
        }
        match &rec.event {
            Event::ProjectCreated { .. } => {
                return Err(EngineError::ProjectExists(self.id.clone()));
            }
            Event::SubmissionAdded {
                submission_id,
                worker_id,
                image_uri,
                concept_tag,
            } => {
                self.require(&[Stage::Find])?;
                let tag = normalize_tag(concept_tag);
                if tag.is_empty() {
                    return Err(EngineError::Validation("concept tag is empty".into()));
                }
                if image_uri.trim().is_empty() {
                    return Err(EngineError::Validation("image uri is empty".into()));
                }
                if worker_id.trim().is_empty() {
                    return Err(EngineError::Validation("worker id is empty".into()));
                }
                if self.submissions.iter().any(|s| &s.id == submission_id) || submission_id == SEED_TARGET {
                    return Err(EngineError::Validation(format!("submission id `{submission_id}` already used")));
                }
                if self
                    .submissions
                    .iter()
                    .any(|s| s.iteration == self.iteration && &s.worker_id == worker_id && &s.image_uri == image_uri)
                {
                    return Err(EngineError::DuplicateSubmission {
                        worker: worker_id.clone(),
                        image_uri: image_uri.clone(),
                    });
                }
                self.resolution.add_candidate(submission_id, image_uri, &tag);
                self.submissions.push(AmbiguousSubmission {
                    id: submission_id.clone(),
                    project_id: self.id.clone(),
                    iteration: self.iteration,
                    worker_id: worker_id.clone(),
                    image_uri: image_uri.clone(),
                    concept_tag: tag,
                    submitted_at: rec.occurred_at,
                    seq: rec.seq,
                    coding: None,
                });
            }
            Event::SubmissionCoded { coding } => {
                coding.validate()?;
                let sub = self
                    .submissions
                    .iter_mut()
                    .find(|s| s.id == coding.submission_id)
                    .ok_or_else(|| EngineError::UnknownSubmission(coding.submission_id.clone()))?;
                sub.coding = Some(coding.clone());
            }
            Event::FindClosed {} => {
                self.require(&[Stage::Find])?;
                self.stage = Stage::Resolve;
            }
            Event::ResolutionToggled { target_id } => {
                self.require(&[Stage::Resolve])?;
                self.resolution.toggle(target_id)?;
            }
            Event::ResolutionCommitted {} => {
                self.require(&[Stage::Resolve])?;
                self.resolved = Some(self.resolution.commit()?);
                self.stage = Stage::Label;
            }
            Event::BundleComposed { condition, k, rng_seed } => {
                self.require(&[Stage::Label])?;
                let intent = GoldIntent::new(manifest, &self.intent_id)
                    .map_err(|e| EngineError::Validation(e.to_string()))?;
                let resolved = self.resolved.as_deref().unwrap_or_default();
                let bundle = compose_instructions(
                    &intent.question,
                    *condition,
                    resolved,
                    &intent.example_pool(),
                    *k,
                    *rng_seed,
                )?;
                self.bundles.insert(*condition, bundle);
            }
            Event::AssignmentCreated {
                assignment_id,
                worker_id,
                condition,
                batch,
            } => {
                self.require(&[Stage::Label])?;
                if self.assignments.contains_key(assignment_id) {
                    return Err(EngineError::Validation(format!(
                        "assignment id `{assignment_id}` already used"
                    )));
                }
                if let Some(prior) = self.assignments.values().find(|a| &a.worker_id == worker_id) {
                    return Err(EngineError::QualificationDenied {
                        worker: worker_id.clone(),
                        group: self.experiment_group.clone(),
                        assignment: prior.id.clone(),
                    });
                }
                let mut seen = BTreeSet::new();
                for id in batch {
                    manifest.image(id)?;
                    if manifest.example_pool.contains(id) {
                        return Err(EngineError::Validation(format!(
                            "image `{id}` is reserved for instruction examples"
                        )));
                    }
                    if !seen.insert(id) {
                        return Err(EngineError::Validation(format!("image `{id}` repeated in batch")));
                    }
                }
                let state = if batch.is_empty() {
                    AssignmentState::Submitted
                } else {
                    AssignmentState::Open
                };
                self.assignments.insert(
                    assignment_id.clone(),
                    Assignment {
                        id: assignment_id.clone(),
                        project_id: self.id.clone(),
                        worker_id: worker_id.clone(),
                        condition: *condition,
                        iteration: self.iteration,
                        batch: batch.clone(),
                        labels: BTreeMap::new(),
                        state,
                        created_at: rec.occurred_at,
                    },
                );
            }
            Event::LabelSubmitted {
                assignment_id,
                image_id,
                label,
            } => {
                let a = self
                    .assignments
                    .get_mut(assignment_id)
                    .ok_or_else(|| EngineError::UnknownAssignment(assignment_id.clone()))?;
                if a.state != AssignmentState::Open {
                    return Err(EngineError::AssignmentClosed(assignment_id.clone()));
                }
                if !a.batch.contains(image_id) {
                    return Err(EngineError::ImageNotInBatch {
                        assignment: assignment_id.clone(),
                        image: image_id.clone(),
                    });
                }
                if a.labels.contains_key(image_id) {
                    return Err(EngineError::DuplicateLabel {
                        assignment: assignment_id.clone(),
                        image: image_id.clone(),
                    });
                }
                a.labels.insert(image_id.clone(), *label);
                if a.labels.len() == a.batch.len() {
                    a.state = AssignmentState::Submitted;
                }
            }
            Event::AssignmentExpired { assignment_id } => {
                let a = self
                    .assignments
                    .get_mut(assignment_id)
                    .ok_or_else(|| EngineError::UnknownAssignment(assignment_id.clone()))?;
                if a.state != AssignmentState::Open {
                    return Err(EngineError::AssignmentClosed(assignment_id.clone()));
                }
                a.state = AssignmentState::Expired;
            }
            Event::StageAdvanced { decision } => {
                self.require(&[Stage::Label])?;
                let open = self.assignments.values().filter(|a| !a.is_terminal()).count();
                if open > 0 {
                    return Err(EngineError::OpenAssignments(open));
                }
                match decision {
                    Decision::Complete => self.stage = Stage::Complete,
                    Decision::Iterate => {
                        self.iteration += 1;
                        self.stage = Stage::Find;
                        let mut resolution = Resolution::new(self.id.clone(), self.iteration);
                        resolution.add_candidate(
                            SEED_TARGET,
                            &self.seed_example.image_uri,
                            &self.seed_example.concept_tag,
                        );
                        for s in &self.submissions {
                            resolution.add_candidate(&s.id, &s.image_uri, &s.concept_tag);
                        }
                        self.resolution = resolution;
                        self.resolved = None;
                        self.bundles.clear();
                    }
                }
            }
        }
        self.last_seq = rec.seq;
        Ok(())
    }

    fn require(&self, stages: &[Stage]) -> Result<(), EngineError> {
        if stages.contains(&self.stage) {
            Ok(())
        } else {
            Err(wrong_stage(stages, self.stage))
        }
    }

    /// Seed plus visible submissions with event sequence `<= as_of`.
    pub fn feed(&self, as_of: Option<u64>) -> Vec<FeedEntry> {
        let mut out = vec![FeedEntry {
            submission_id: None,
            image_uri: self.seed_example.image_uri.clone(),
            concept_tag: self.seed_example.concept_tag.clone(),
        }];
        if self.collaboration_mode == CollaborationMode::Feed {
            out.extend(
                self.submissions
                    .iter()
                    .filter(|s| as_of.is_none_or(|limit| s.seq <= limit))
                    .map(|s| FeedEntry {
                        submission_id: Some(s.id.clone()),
                        image_uri: s.image_uri.clone(),
                        concept_tag: s.concept_tag.clone(),
                    }),
            );
        }
        out
    }

    pub fn current_assignments(&self) -> impl Iterator<Item = &Assignment> {
        self.assignments.values().filter(move |a| a.iteration == self.iteration)
    }
}
