//! Randomized operation sequences against the engine, with invariant checks
//! after every accepted operation. Shared by the property tests and the
//! acceptance runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use aw_core::compose::Condition;
use aw_core::eval::{Decision, Label, StageOneCoding};
use aw_core::workflow::{
    canonical_state_of, replay, AssignmentState, CollaborationMode, CreateProject, Engine, ManifestRegistry,
    MemoryStore, SeedExample, Stage, SteppingClock,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Op {
    Submit { p: usize, worker: u8, uri: u8, tag: u8 },
    Close { p: usize },
    Code { p: usize, sub: usize, correct: bool, group: Option<u8>, useful: bool },
    Toggle { p: usize, target: usize },
    Commit { p: usize },
    Compose { p: usize, condition: Condition, seed: u64 },
    Assign { p: usize, worker: u8, condition: Condition, size: usize, seed: Option<u64> },
    Label { p: usize, assignment: usize, image: usize, yes: bool },
    Expire { p: usize, assignment: usize },
    Advance { p: usize, iterate: bool },
}

pub const PROJECTS: usize = 3;

pub fn arb_op() -> impl Strategy<Value = Op> {
    let p = 0..PROJECTS;
    let cond = prop::sample::select(Condition::ALL.to_vec());
    prop_oneof![
        4 => (p.clone(), 0u8..6, 0u8..5, 0u8..4).prop_map(|(p, worker, uri, tag)| Op::Submit { p, worker, uri, tag }),
        1 => p.clone().prop_map(|p| Op::Close { p }),
        1 => (p.clone(), 0usize..8, any::<bool>(), prop::option::of(0u8..3), any::<bool>())
            .prop_map(|(p, sub, correct, group, useful)| Op::Code { p, sub, correct, group, useful }),
        3 => (p.clone(), 0usize..8).prop_map(|(p, target)| Op::Toggle { p, target }),
        1 => p.clone().prop_map(|p| Op::Commit { p }),
        1 => (p.clone(), cond.clone(), 0u64..4).prop_map(|(p, condition, seed)| Op::Compose { p, condition, seed }),
        3 => (p.clone(), 0u8..8, cond, 0usize..4, prop::option::of(0u64..3))
            .prop_map(|(p, worker, condition, size, seed)| Op::Assign { p, worker, condition, size, seed }),
        6 => (p.clone(), 0usize..6, 0usize..5, any::<bool>())
            .prop_map(|(p, assignment, image, yes)| Op::Label { p, assignment, image, yes }),
        1 => (p.clone(), 0usize..6).prop_map(|(p, assignment)| Op::Expire { p, assignment }),
        1 => (p, any::<bool>()).prop_map(|(p, iterate)| Op::Advance { p, iterate }),
    ]
}

pub fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(arb_op(), 1..80)
}

pub struct Harness {
    pub store: Arc<MemoryStore>,
    pub engine: Engine,
    pub ids: Vec<String>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Coverage {
    pub accepted: usize,
    pub rejected: usize,
    pub reached_label: bool,
    pub iterated: bool,
}

fn allowed(before: (Stage, u32), after: (Stage, u32)) -> bool {
    use Stage::*;
    before == after
        || matches!(
            (before.0, after.0),
            (Find, Resolve) | (Resolve, Label) | (Label, Complete)
        ) && before.1 == after.1
        || (before.0 == Label && after.0 == Find && after.1 == before.1 + 1)
}

impl Harness {
    /// Projects 0 and 1 share an experiment group; project 1 runs without
    /// a collaboration feed.
    pub fn new() -> Self {
        let store = Arc::new(MemoryStore::new());
        let engine = Engine::open(
            store.clone(),
            Arc::new(SteppingClock::default()),
            ManifestRegistry::new(None),
        )
        .unwrap();
        let specs = [
            ("pa", "1b", "g1", CollaborationMode::Feed),
            ("pb", "2a", "g1", CollaborationMode::None),
            ("pc", "3b", "g2", CollaborationMode::Feed),
        ];
        let ids = specs
            .iter()
            .map(|(id, intent, group, mode)| {
                engine
                    .create_project(CreateProject {
                        project_id: Some((*id).into()),
                        manifest_ref: "dog".into(),
                        intent_id: (*intent).into(),
                        experiment_group: Some((*group).into()),
                        seed_example: SeedExample {
                            image_uri: "small_breed_01".into(),
                            concept_tag: "Toy Dog".into(),
                        },
                        collaboration_mode: *mode,
                    })
                    .unwrap()
                    .id
                    .clone()
            })
            .collect();
        Self { store, engine, ids }
    }

    fn apply(&self, op: &Op) -> bool {
        let e = &self.engine;
        let id = |p: usize| self.ids[p].as_str();
        let project = |p: usize| e.project(id(p)).unwrap();
        let assignment_id = |p: usize, i: usize| {
            let pr = project(p);
            let ids: Vec<String> = pr.assignments.keys().cloned().collect();
            (!ids.is_empty()).then(|| ids[i % ids.len()].clone())
        };
        match op {
            Op::Submit { p, worker, uri, tag } => e
                .submit_ambiguous_example(id(*p), &format!("w{worker}"), &format!("uri://{uri}"), &format!("tag {tag}"))
                .is_ok(),
            Op::Close { p } => e.close_find_stage(id(*p)).is_ok(),
            Op::Code { p, sub, correct, group, useful } => {
                let pr = project(*p);
                if pr.submissions.is_empty() {
                    return false;
                }
                let s = &pr.submissions[sub % pr.submissions.len()];
                let coding = StageOneCoding {
                    submission_id: s.id.clone(),
                    correct: *correct,
                    unique_group_id: group.map(|g| format!("g{g}")),
                    useful: *useful,
                };
                e.code_submission(id(*p), coding).is_ok()
            }
            Op::Toggle { p, target } => {
                let pr = project(*p);
                let targets: Vec<String> = pr.resolution.entries.keys().cloned().collect();
                e.toggle_example(id(*p), &targets[target % targets.len()]).is_ok()
            }
            Op::Commit { p } => e.commit_resolution(id(*p)).is_ok(),
            Op::Compose { p, condition, seed } => e.compose_bundle(id(*p), *condition, None, *seed).is_ok(),
            Op::Assign { p, worker, condition, size, seed } => e
                .request_assignment(id(*p), &format!("w{worker}"), *condition, *size, *seed)
                .is_ok(),
            Op::Label { p, assignment, image, yes } => {
                let Some(a) = assignment_id(*p, *assignment) else {
                    return false;
                };
                let batch = project(*p).assignments[&a].batch.clone();
                // one in six draws deliberately misses the batch
                let image = if batch.is_empty() || *image == 4 {
                    "planes_99".to_owned()
                } else {
                    batch[image % batch.len()].clone()
                };
                match e.submit_label(&a, &image, Label::from_bool(*yes)) {
                    Ok(receipt) => !receipt.duplicate,
                    Err(_) => false,
                }
            }
            Op::Expire { p, assignment } => match assignment_id(*p, *assignment) {
                Some(a) => e.expire_assignment(&a).is_ok(),
                None => false,
            },
            Op::Advance { p, iterate } => {
                let d = if *iterate { Decision::Iterate } else { Decision::Complete };
                e.advance_stage(id(*p), d).is_ok()
            }
        }
    }

    fn check_state(&self) -> Result<(), String> {
        let mut per_group: BTreeMap<(String, String), usize> = BTreeMap::new();
        for id in &self.ids {
            let p = self.engine.project(id).unwrap();
            for a in p.assignments.values() {
                *per_group.entry((p.experiment_group.clone(), a.worker_id.clone())).or_default() += 1;
                let complete = a.labels.len() == a.batch.len();
                if (a.state == AssignmentState::Submitted) != complete {
                    return Err(format!("label completeness violated for {}", a.id));
                }
                if a.labels.keys().any(|k| !a.batch.contains(k)) {
                    return Err(format!("label outside batch in {}", a.id));
                }
            }
        }
        if let Some(((g, w), n)) = per_group.iter().find(|(_, n)| **n > 1) {
            return Err(format!("worker {w} holds {n} assignments in group {g}"));
        }
        Ok(())
    }

    fn check_feeds_and_replay(&self) -> Result<(), String> {
        for id in &self.ids {
            let p = self.engine.project(id).unwrap();
            let mut previous: Option<Vec<_>> = None;
            for s in 0..=p.last_seq {
                let feed = self.engine.list_feed(id, Some(s)).unwrap();
                if let Some(prev) = &previous {
                    if !feed.starts_with(prev) {
                        return Err(format!("feed of {id} at seq {s} is not an extension"));
                    }
                }
                if p.collaboration_mode == CollaborationMode::None && feed.len() != 1 {
                    return Err(format!("feed of {id} grew without collaboration"));
                }
                previous = Some(feed);
            }

            let live = self.engine.canonical_state(id).unwrap();
            let records = self.engine.events(id).unwrap();
            let manifest = self.engine.manifest(id).unwrap();
            let rebuilt = replay(&records, &manifest).map_err(|e| e.to_string())?.unwrap();
            if canonical_state_of(&rebuilt).unwrap() != live {
                return Err(format!("in-memory replay of {id} differs from live state"));
            }
        }
        // reopen from the serialized log lines
        let reopened = Engine::open(
            self.store.clone(),
            Arc::new(SteppingClock::default()),
            ManifestRegistry::new(None),
        )
        .map_err(|e| e.to_string())?;
        for id in &self.ids {
            if reopened.canonical_state(id).unwrap() != self.engine.canonical_state(id).unwrap() {
                return Err(format!("replay of serialized log of {id} differs from live state"));
            }
        }
        Ok(())
    }

    /// Runs `ops`, checking every invariant. Returns the first violation.
    pub fn run(&self, ops: &[Op]) -> Result<Coverage, String> {
        let mut cov = Coverage::default();
        for op in ops {
            let before: Vec<(Stage, u32)> = self
                .ids
                .iter()
                .map(|id| {
                    let p = self.engine.project(id).unwrap();
                    (p.stage, p.iteration)
                })
                .collect();
            let seqs: Vec<u64> = self.ids.iter().map(|id| self.engine.project(id).unwrap().last_seq).collect();
            let accepted = self.apply(op);
            for (i, id) in self.ids.iter().enumerate() {
                let p = self.engine.project(id).unwrap();
                let after = (p.stage, p.iteration);
                if !allowed(before[i], after) {
                    return Err(format!("illegal transition {:?} -> {:?} in {id} by {op:?}", before[i], after));
                }
                if !accepted && p.last_seq != seqs[i] {
                    return Err(format!("rejected {op:?} still appended an event"));
                }
                cov.reached_label |= p.stage == Stage::Label;
                cov.iterated |= p.iteration > 1;
            }
            if accepted {
                cov.accepted += 1;
            } else {
                cov.rejected += 1;
            }
            self.check_state()?;
        }
        self.check_feeds_and_replay()?;
        Ok(cov)
    }
}
