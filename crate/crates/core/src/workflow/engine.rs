use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::{EventStore, FileStore, MemoryStore};
use super::types::*;
use super::{validate_project_id, EngineError};
use crate::compose::{Condition, InstructionBundle, ResolutionState, ResolvedExample};
use crate::eval::{
    accuracy_report, stage_one_metrics, Decision, EvaluationReport, Label, LabelRecord, StageOneCoding,
    StageOneMetrics,
};
use crate::model::{derive_partition, load_manifest, DatasetManifest, DOG_MANIFEST_REF};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Advances one second per reading, for reproducible timestamps.
pub struct SteppingClock {
    next: AtomicI64,
}

impl SteppingClock {
    pub fn starting_at(start: DateTime<Utc>) -> Self {
        Self {
            next: AtomicI64::new(start.timestamp()),
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        Self::starting_at(DateTime::UNIX_EPOCH)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let s = self.next.fetch_add(1, Ordering::SeqCst);
        DateTime::from_timestamp(s, 0).expect("timestamp in range")
    }
}

/// Resolves manifest references: `<dir>/<ref>.json` when present, else the
/// bundled `dog` fixture.
pub struct ManifestRegistry {
    dir: Option<PathBuf>,
    cache: Mutex<HashMap<String, Arc<DatasetManifest>>>,
}

impl ManifestRegistry {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn resolve(&self, reference: &str) -> Result<Arc<DatasetManifest>, EngineError> {
        if let Some(m) = lock(&self.cache).get(reference) {
            return Ok(m.clone());
        }
        validate_project_id(reference).map_err(|_| EngineError::UnknownManifest(reference.to_owned()))?;
        let from_dir = self
            .dir
            .as_ref()
            .map(|d| d.join(format!("{reference}.json")))
            .filter(|p| p.is_file());
        let manifest = match from_dir {
            Some(path) => {
                let file = std::fs::File::open(&path)
                    .map_err(|e| EngineError::Storage(format!("{}: {e}", path.display())))?;
                load_manifest(file)?
            }
            None if reference == DOG_MANIFEST_REF => DatasetManifest::dog_fixture(),
            None => return Err(EngineError::UnknownManifest(reference.to_owned())),
        };
        let manifest = Arc::new(manifest);
        lock(&self.cache).insert(reference.to_owned(), manifest.clone());
        Ok(manifest)
    }
}

fn default_collaboration_mode() -> CollaborationMode {
    CollaborationMode::Feed
}

fn default_manifest_ref() -> String {
    DOG_MANIFEST_REF.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateProject {
    /// Generated when absent.
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default = "default_manifest_ref")]
    pub manifest_ref: String,
    pub intent_id: String,
    /// Projects sharing a group share the one-assignment-per-worker rule.
    /// Defaults to the project id.
    #[serde(default)]
    pub experiment_group: Option<String>,
    pub seed_example: SeedExample,
    #[serde(default = "default_collaboration_mode")]
    pub collaboration_mode: CollaborationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelReceipt {
    pub record: LabelRecord,
    /// True when an identical label was already stored; no event was written.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerProfile {
    pub worker_id: String,
    /// Projects in which the worker may no longer take an assignment.
    pub disqualified_projects: BTreeSet<String>,
    pub completed_assignments: Vec<String>,
}

struct Writer {
    project: Arc<Project>,
    log: Vec<EventRecord>,
    manifest: Arc<DatasetManifest>,
}

struct Slot {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Project>>,
}

impl Slot {
    fn new(project: Project, log: Vec<EventRecord>, manifest: Arc<DatasetManifest>) -> Self {
        let project = Arc::new(project);
        Self {
            snapshot: RwLock::new(project.clone()),
            writer: Mutex::new(Writer { project, log, manifest }),
        }
    }

    fn read(&self) -> Arc<Project> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// worker id -> assignment id, for one experiment group.
type GroupMembers = BTreeMap<String, String>;

/// Rebuilds a project from its log. An empty log yields `None`.
pub fn replay(records: &[EventRecord], manifest: &DatasetManifest) -> Result<Option<Project>, EngineError> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let wrap = |project: &str, seq: u64, e: EngineError| EngineError::Replay {
        project: project.to_owned(),
        seq,
        message: e.to_string(),
    };
    let mut project = Project::from_creation(first, manifest).map_err(|e| wrap("?", first.seq, e))?;
    for rec in &records[1..] {
        let id = project.id.clone();
        project.apply(rec, manifest).map_err(|e| wrap(&id, rec.seq, e))?;
    }
    Ok(Some(project))
}

fn default_batch_seed(iteration: u32, condition: Condition) -> u64 {
    let idx = Condition::ALL.iter().position(|c| *c == condition).unwrap_or(0) as u64;
    (u64::from(iteration) << 8) | idx
}

/// The workflow engine: validates operations, appends their events and keeps
/// a replayed state per project.
///
/// Writes to one project are serialized by that project's writer lock;
/// readers take the latest snapshot without waiting for writers. Assignment
/// requests lock the experiment group before the project.
pub struct Engine {
    store: Arc<dyn EventStore>,
    clock: Arc<dyn Clock>,
    manifests: ManifestRegistry,
    projects: RwLock<BTreeMap<String, Arc<Slot>>>,
    groups: Mutex<HashMap<String, Arc<Mutex<GroupMembers>>>>,
}

impl Engine {
    /// Opens an engine over `store`, replaying every stored project.
    pub fn open(
        store: Arc<dyn EventStore>,
        clock: Arc<dyn Clock>,
        manifests: ManifestRegistry,
    ) -> Result<Self, EngineError> {
        let engine = Self {
            store,
            clock,
            manifests,
            projects: RwLock::new(BTreeMap::new()),
            groups: Mutex::new(HashMap::new()),
        };
        for id in engine.store.project_ids()? {
            let records = engine.store.load(&id)?;
            let Some(first) = records.first() else {
                continue;
            };
            let manifest_ref = match &first.event {
                Event::ProjectCreated {
                    project_id,
                    manifest_ref,
                    ..
                } if *project_id == id => manifest_ref.clone(),
                _ => {
                    return Err(EngineError::Replay {
                        project: id,
                        seq: first.seq,
                        message: "log does not start with this project's creation".into(),
                    })
                }
            };
            let manifest = engine.manifests.resolve(&manifest_ref)?;
            let project = replay(&records, &manifest)?.expect("log is not empty");
            engine.register_assignments(&project);
            engine.write_projects().insert(id, Arc::new(Slot::new(project, records, manifest)));
        }
        Ok(engine)
    }

    /// Memory-backed engine with a stepping clock and the bundled manifest.
    pub fn in_memory() -> Self {
        Self::open(
            Arc::new(MemoryStore::new()),
            Arc::new(SteppingClock::default()),
            ManifestRegistry::new(None),
        )
        .expect("empty store replays")
    }

    /// File-backed engine rooted at `data_dir`; manifests are read from
    /// `<data_dir>/manifests`.
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let dir = data_dir.into();
        let store = FileStore::open(&dir)?;
        Self::open(
            Arc::new(store),
            Arc::new(SystemClock),
            ManifestRegistry::new(Some(dir.join("manifests"))),
        )
    }

    fn write_projects(&self) -> std::sync::RwLockWriteGuard<'_, BTreeMap<String, Arc<Slot>>> {
        self.projects.write().unwrap_or_else(|e| e.into_inner())
    }

    fn register_assignments(&self, project: &Project) {
        let group = self.group(&project.experiment_group);
        let mut members = lock(&group);
        for a in project.assignments.values() {
            members.insert(a.worker_id.clone(), a.id.clone());
        }
    }

    fn group(&self, id: &str) -> Arc<Mutex<GroupMembers>> {
        lock(&self.groups).entry(id.to_owned()).or_default().clone()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, EngineError> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownProject(id.to_owned()))
    }

    fn commit(&self, slot: &Slot, w: &mut Writer, event: Event) -> Result<Arc<Project>, EngineError> {
        let rec = EventRecord {
            seq: w.project.last_seq + 1,
            event,
            occurred_at: self.clock.now(),
        };
        let mut next = Project::clone(&w.project);
        next.apply(&rec, &w.manifest)?;
        self.store.append(&next.id, &rec)?;
        let next = Arc::new(next);
        w.project = next.clone();
        w.log.push(rec);
        *slot.snapshot.write().unwrap_or_else(|e| e.into_inner()) = next.clone();
        Ok(next)
    }

    fn write(&self, project_id: &str, event: Event) -> Result<Arc<Project>, EngineError> {
        let slot = self.slot(project_id)?;
        let mut w = lock(&slot.writer);
        self.commit(&slot, &mut w, event)
    }

    pub fn create_project(&self, req: CreateProject) -> Result<Arc<Project>, EngineError> {
        let mut projects = self.write_projects();
        let id = match req.project_id {
            Some(id) => id,
            None => (projects.len() + 1..)
                .map(|n| format!("p{n}"))
                .find(|id| !projects.contains_key(id))
                .expect("unbounded range"),
        };
        validate_project_id(&id)?;
        if projects.contains_key(&id) {
            return Err(EngineError::ProjectExists(id));
        }
        let manifest = self.manifests.resolve(&req.manifest_ref)?;
        let group = req.experiment_group.unwrap_or_else(|| id.clone());
        if group.trim().is_empty() {
            return Err(EngineError::Validation("experiment group is empty".into()));
        }
        let rec = EventRecord {
            seq: 1,
            event: Event::ProjectCreated {
                project_id: id.clone(),
                manifest_ref: req.manifest_ref,
                intent_id: req.intent_id,
                experiment_group: group,
                seed_example: req.seed_example,
                collaboration_mode: req.collaboration_mode,
            },
            occurred_at: self.clock.now(),
        };
        let project = Project::from_creation(&rec, &manifest)?;
        self.store.append(&id, &rec)?;
        let slot = Arc::new(Slot::new(project, vec![rec], manifest));
        let snapshot = slot.read();
        projects.insert(id, slot);
        Ok(snapshot)
    }

    pub fn submit_ambiguous_example(
        &self,
        project_id: &str,
        worker_id: &str,
        image_uri: &str,
        concept_tag: &str,
    ) -> Result<AmbiguousSubmission, EngineError> {
        let slot = self.slot(project_id)?;
        let mut w = lock(&slot.writer);
        let submission_id = format!("s{}", w.project.last_seq + 1);
        let project = self.commit(
            &slot,
            &mut w,
            Event::SubmissionAdded {
                submission_id: submission_id.clone(),
                worker_id: worker_id.to_owned(),
                image_uri: image_uri.to_owned(),
                concept_tag: concept_tag.to_owned(),
            },
        )?;
        Ok(project
            .submissions
            .iter()
            .find(|s| s.id == submission_id)
            .cloned()
            .expect("submission just applied"))
    }

    /// Seed followed, in feed mode, by submissions recorded at or before `as_of`.
    pub fn list_feed(&self, project_id: &str, as_of: Option<u64>) -> Result<Vec<FeedEntry>, EngineError> {
        Ok(self.project(project_id)?.feed(as_of))
    }

    pub fn close_find_stage(&self, project_id: &str) -> Result<Arc<Project>, EngineError> {
        self.write(project_id, Event::FindClosed {})
    }

    pub fn code_submission(
        &self,
        project_id: &str,
        coding: StageOneCoding,
    ) -> Result<AmbiguousSubmission, EngineError> {
        let id = coding.submission_id.clone();
        let project = self.write(project_id, Event::SubmissionCoded { coding })?;
        Ok(project
            .submissions
            .iter()
            .find(|s| s.id == id)
            .cloned()
            .expect("coded submission exists"))
    }

    /// Advances the resolution state of `target_id` (a submission id or `seed`).
    pub fn toggle_example(&self, project_id: &str, target_id: &str) -> Result<ResolutionState, EngineError> {
        let project = self.write(
            project_id,
            Event::ResolutionToggled {
                target_id: target_id.to_owned(),
            },
        )?;
        Ok(project
            .resolution
            .state_of(target_id)
            .expect("toggled target exists"))
    }

    pub fn commit_resolution(&self, project_id: &str) -> Result<Vec<ResolvedExample>, EngineError> {
        let project = self.write(project_id, Event::ResolutionCommitted {})?;
        Ok(project.resolved.clone().unwrap_or_default())
    }

    pub fn compose_bundle(
        &self,
        project_id: &str,
        condition: Condition,
        k: Option<usize>,
        rng_seed: u64,
    ) -> Result<InstructionBundle, EngineError> {
        let project = self.write(project_id, Event::BundleComposed { condition, k, rng_seed })?;
        Ok(project.bundles[&condition].clone())
    }

    /// Draws a batch of `batch_size` labelable images and assigns it to
    /// `worker_id`. Without `rng_seed`, every worker in the same iteration and
    /// condition receives the same batch.
    pub fn request_assignment(
        &self,
        project_id: &str,
        worker_id: &str,
        condition: Condition,
        batch_size: usize,
        rng_seed: Option<u64>,
    ) -> Result<Assignment, EngineError> {
        if worker_id.trim().is_empty() {
            return Err(EngineError::Validation("worker id is empty".into()));
        }
        let slot = self.slot(project_id)?;
        let group_id = slot.read().experiment_group.clone();
        let group = self.group(&group_id);
        let mut members = lock(&group);
        if let Some(prior) = members.get(worker_id) {
            return Err(EngineError::QualificationDenied {
                worker: worker_id.to_owned(),
                group: group_id,
                assignment: prior.clone(),
            });
        }
        let mut w = lock(&slot.writer);
        if w.project.stage != Stage::Label {
            return Err(EngineError::WrongStage {
                expected: vec![Stage::Label],
                actual: w.project.stage,
            });
        }
        let eligible: Vec<String> = w.manifest.labelable_images().into_iter().map(|i| i.id.clone()).collect();
        if batch_size > eligible.len() {
            return Err(EngineError::Validation(format!(
                "batch of {batch_size} requested but only {} images are labelable",
                eligible.len()
            )));
        }
        let seed = rng_seed.unwrap_or_else(|| default_batch_seed(w.project.iteration, condition));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<String> = index::sample(&mut rng, eligible.len(), batch_size)
            .into_iter()
            .map(|i| eligible[i].clone())
            .collect();
        let assignment_id = format!("{project_id}.a{}", w.project.last_seq + 1);
        let project = self.commit(
            &slot,
            &mut w,
            Event::AssignmentCreated {
                assignment_id: assignment_id.clone(),
                worker_id: worker_id.to_owned(),
                condition,
                batch,
            },
        )?;
        members.insert(worker_id.to_owned(), assignment_id.clone());
        Ok(project.assignments[&assignment_id].clone())
    }

    fn assignment_slot(&self, assignment_id: &str) -> Result<Arc<Slot>, EngineError> {
        let unknown = || EngineError::UnknownAssignment(assignment_id.to_owned());
        let (project_id, _) = assignment_id.rsplit_once('.').ok_or_else(unknown)?;
        self.slot(project_id).map_err(|_| unknown())
    }

    /// Records one label. Re-submitting the stored label is a no-op that
    /// reports `duplicate`.
    pub fn submit_label(&self, assignment_id: &str, image_id: &str, label: Label) -> Result<LabelReceipt, EngineError> {
        let slot = self.assignment_slot(assignment_id)?;
        let mut w = lock(&slot.writer);
        let a = w
            .project
            .assignments
            .get(assignment_id)
            .ok_or_else(|| EngineError::UnknownAssignment(assignment_id.to_owned()))?;
        let record = LabelRecord {
            assignment_id: assignment_id.to_owned(),
            worker_id: a.worker_id.clone(),
            image_id: image_id.to_owned(),
            label,
            condition: a.condition,
            project_id: a.project_id.clone(),
        };
        if let Some(existing) = a.labels.get(image_id) {
            if *existing == label {
                return Ok(LabelReceipt { record, duplicate: true });
            }
            return Err(EngineError::DuplicateLabel {
                assignment: assignment_id.to_owned(),
                image: image_id.to_owned(),
            });
        }
        self.commit(
            &slot,
            &mut w,
            Event::LabelSubmitted {
                assignment_id: assignment_id.to_owned(),
                image_id: image_id.to_owned(),
                label,
            },
        )?;
        Ok(LabelReceipt {
            record,
            duplicate: false,
        })
    }

    /// Administrative expiry of an open assignment.
    pub fn expire_assignment(&self, assignment_id: &str) -> Result<Assignment, EngineError> {
        let slot = self.assignment_slot(assignment_id)?;
        let mut w = lock(&slot.writer);
        let project = self.commit(
            &slot,
            &mut w,
            Event::AssignmentExpired {
                assignment_id: assignment_id.to_owned(),
            },
        )?;
        Ok(project.assignments[assignment_id].clone())
    }

    pub fn assignment(&self, assignment_id: &str) -> Result<Assignment, EngineError> {
        self.assignment_slot(assignment_id)?
            .read()
            .assignments
            .get(assignment_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownAssignment(assignment_id.to_owned()))
    }

    pub fn advance_stage(&self, project_id: &str, decision: Decision) -> Result<Arc<Project>, EngineError> {
        self.write(project_id, Event::StageAdvanced { decision })
    }

    pub fn project(&self, project_id: &str) -> Result<Arc<Project>, EngineError> {
        Ok(self.slot(project_id)?.read())
    }

    pub fn project_ids(&self) -> Vec<String> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    pub fn manifest(&self, project_id: &str) -> Result<Arc<DatasetManifest>, EngineError> {
        let slot = self.slot(project_id)?;
        let manifest = lock(&slot.writer).manifest.clone();
        Ok(manifest)
    }

    /// Label records of the current iteration, in assignment and batch order.
    pub fn labels(&self, project_id: &str) -> Result<Vec<LabelRecord>, EngineError> {
        let project = self.project(project_id)?;
        Ok(project
            .current_assignments()
            .flat_map(|a| {
                a.batch.iter().filter_map(move |img| {
                    a.labels.get(img).map(|label| LabelRecord {
                        assignment_id: a.id.clone(),
                        worker_id: a.worker_id.clone(),
                        image_id: img.clone(),
                        label: *label,
                        condition: a.condition,
                        project_id: a.project_id.clone(),
                    })
                })
            })
            .collect())
    }

    pub fn report(&self, project_id: &str) -> Result<EvaluationReport, EngineError> {
        let project = self.project(project_id)?;
        let manifest = self.manifest(project_id)?;
        let gold = derive_partition(&manifest, &project.intent_id)?;
        Ok(accuracy_report(&self.labels(project_id)?, &gold, &manifest)?)
    }

    /// Coding metrics over the current iteration's submissions. `total`
    /// defaults to the number of those submissions.
    pub fn stage_one_metrics(&self, project_id: &str, total: Option<u64>) -> Result<StageOneMetrics, EngineError> {
        let project = self.project(project_id)?;
        let current: Vec<&AmbiguousSubmission> = project
            .submissions
            .iter()
            .filter(|s| s.iteration == project.iteration)
            .collect();
        let codings: Vec<StageOneCoding> = current.iter().filter_map(|s| s.coding.clone()).collect();
        let total = total.unwrap_or(current.len() as u64);
        Ok(stage_one_metrics(&codings, total)?)
    }

    pub fn events(&self, project_id: &str) -> Result<Vec<EventRecord>, EngineError> {
        let slot = self.slot(project_id)?;
        let log = lock(&slot.writer).log.clone();
        Ok(log)
    }

    /// Stable-key-order JSON of the project state.
    pub fn canonical_state(&self, project_id: &str) -> Result<String, EngineError> {
        canonical_json(self.project(project_id)?.as_ref())
    }

    pub fn worker_profile(&self, worker_id: &str) -> WorkerProfile {
        let snapshots: Vec<Arc<Project>> = self
            .projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(|s| s.read())
            .collect();
        let mut groups = BTreeSet::new();
        let mut completed = Vec::new();
        for p in &snapshots {
            for a in p.assignments.values().filter(|a| a.worker_id == worker_id) {
                groups.insert(p.experiment_group.clone());
                if a.state == AssignmentState::Submitted {
                    completed.push(a.id.clone());
                }
            }
        }
        WorkerProfile {
            worker_id: worker_id.to_owned(),
            disqualified_projects: snapshots
                .iter()
                .filter(|p| groups.contains(&p.experiment_group))
                .map(|p| p.id.clone())
                .collect(),
            completed_assignments: completed,
        }
    }
}

/// Serializes through `serde_json::Value`, whose maps keep keys sorted.
pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Result<String, EngineError> {
    let v = serde_json::to_value(value).map_err(|e| EngineError::Storage(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| EngineError::Storage(e.to_string()))
}

/// Canonical state of a project rebuilt by [`replay`].
pub fn canonical_state_of(project: &Project) -> Result<String, EngineError> {
    canonical_json(project)
}
