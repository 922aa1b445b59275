//! Efficacy-graded selection of (ANN, machine) pairs for concepts, task
//! scripts and their per-machine assignments.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::graph::MappingKind;
use crate::store::{Op, State, Store};
use crate::Id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MappingKey {
    pub concept: Id,
    pub ann: Id,
    pub machine: Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfficacyRecord {
    pub key: MappingKey,
    pub attempts: u64,
    pub successes: u64,
    /// Store sequence number of the latest outcome.
    pub last_outcome_at: u64,
}

impl EfficacyRecord {
    pub fn fresh(key: MappingKey) -> Self {
        Self {
            key,
            attempts: 0,
            successes: 0,
            last_outcome_at: 0,
        }
    }
}

/// Laplace-smoothed success rate `(successes + 1) / (attempts + 2)`.
pub fn efficacy_score(rec: &EfficacyRecord) -> f64 {
    (rec.successes as f64 + 1.0) / (rec.attempts as f64 + 2.0)
}

pub fn record_outcome(store: &Store, key: MappingKey, success: bool) -> Result<EfficacyRecord> {
    store.commit(|state| {
        if state.concept(key.concept).is_none() {
            return Err(Error::unknown("concept", key.concept));
        }
        if state.ann(key.ann).is_none() {
            return Err(Error::unknown("ann", key.ann));
        }
        if state.machine(key.machine).is_none() {
            return Err(Error::unknown("machine", key.machine));
        }
        let mut rec = state
            .efficacy(&key)
            .copied()
            .unwrap_or_else(|| EfficacyRecord::fresh(key));
        rec.attempts += 1;
        rec.successes += u64::from(success);
        rec.last_outcome_at = state.seq() + 1;
        Ok((Op::Outcome(rec), rec))
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<Id>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

impl MachineFilter {
    pub fn only(id: Id) -> Self {
        Self {
            ids: Some(vec![id]),
            platform: None,
        }
    }

    fn admits(&self, machine: &crate::registry::Machine) -> bool {
        self.ids.as_ref().is_none_or(|ids| ids.contains(&machine.id))
            && self.platform.as_ref().is_none_or(|p| *p == machine.platform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ann: Id,
    pub machine: Id,
    pub record: EfficacyRecord,
}

/// Every (ANN, machine) pair that could serve `concept`: the ANN is mapped
/// from the concept and not retired, and the machine passes the filter and
/// has an adapter binding that uses the ANN for detection.
pub fn candidates(state: &State, concept: Id, filter: &MachineFilter) -> Vec<Candidate> {
    let mut out = Vec::new();
    for m in state.mappings_from(concept).filter(|m| m.kind == MappingKind::Ann) {
        match state.ann(m.target) {
            Some(ann) if !ann.retired => {}
            _ => continue,
        }
        let mut machines: Vec<Id> = state
            .bindings()
            .filter(|b| b.detection_ann == m.target)
            .map(|b| b.machine_id)
            .filter(|id| state.machine(*id).is_some_and(|mc| filter.admits(mc)))
            .collect();
        machines.sort_unstable();
        machines.dedup();
        for machine in machines {
            let key = MappingKey {
                concept,
                ann: m.target,
                machine,
            };
            out.push(Candidate {
                ann: m.target,
                machine,
                record: state
                    .efficacy(&key)
                    .copied()
                    .unwrap_or_else(|| EfficacyRecord::fresh(key)),
            });
        }
    }
    out
}

/// Highest score wins; ties go to the smallest `(ann, machine)`.
pub fn argmax_pair(scored: impl IntoIterator<Item = (Id, Id, f64)>) -> Option<(Id, Id)> {
    let mut best: Option<(Id, Id, f64)> = None;
    for (ann, machine, score) in scored {
        let better = match best {
            None => true,
            Some((ba, bm, bs)) => score > bs || (score == bs && (ann, machine) < (ba, bm)),
        };
        if better {
            best = Some((ann, machine, score));
        }
    }
    best.map(|(a, m, _)| (a, m))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Implementation {
    pub concept_id: Id,
    pub concept: String,
    pub ann_id: Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub concept_id: Id,
    pub ann_id: Id,
    pub machine_id: Id,
    pub score: f64,
}

pub fn select_implementation(state: &State, concept: &str, filter: &MachineFilter) -> Result<Selection> {
    let c = state
        .concept_by_name(concept)
        .ok_or_else(|| Error::unknown("concept", concept))?;
    let cands = candidates(state, c.id, filter);
    let (ann_id, machine_id) = argmax_pair(cands.iter().map(|cd| (cd.ann, cd.machine, efficacy_score(&cd.record))))
        .ok_or_else(|| Error::NoImplementation(c.name.clone()))?;
    let rec = cands
        .iter()
        .find(|cd| cd.ann == ann_id && cd.machine == machine_id)
        .expect("argmax came from the candidate list")
        .record;
    Ok(Selection {
        concept_id: c.id,
        ann_id,
        machine_id,
        score: efficacy_score(&rec),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Goto(GeoPoint),
    Detect {
        concept: String,
        max_ticks: u64,
    },
    Exec {
        motor: String,
        command: String,
        #[serde(default)]
        values: Vec<f64>,
    },
    SuggestAndDetect {
        concept: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    pub steps: Vec<Step>,
}

impl TaskScript {
    /// Used when a machine is handed a bare geographic goal.
    pub fn default_for_goal(goal: GeoPoint) -> Self {
        Self {
            steps: vec![Step::Goto(goal)],
        }
    }

    pub fn validate(&self, state: &State) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::invariant("task script has no steps"));
        }
        for step in &self.steps {
            match step {
                Step::Goto(p) => p.validate()?,
                Step::Detect { concept, max_ticks } => {
                    if *max_ticks == 0 {
                        return Err(Error::invariant("detect step needs max_ticks > 0"));
                    }
                    state
                        .concept_by_name(concept)
                        .ok_or_else(|| Error::unknown("concept", concept))?;
                }
                Step::SuggestAndDetect { concept } => {
                    state
                        .concept_by_name(concept)
                        .ok_or_else(|| Error::unknown("concept", concept))?;
                }
                Step::Exec { values, .. } => {
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invariant("exec values must be finite"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentStatus {
    Queued,
    Delivered,
    Running,
    Done,
    Failed,
}

impl AssignmentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentStatus::Queued => "queued",
            AssignmentStatus::Delivered => "delivered",
            AssignmentStatus::Running => "running",
            AssignmentStatus::Done => "done",
            AssignmentStatus::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, AssignmentStatus::Done | AssignmentStatus::Failed)
    }

    /// Forward by exactly one step, or to `Failed` from any live state.
    pub fn can_move_to(self, next: AssignmentStatus) -> bool {
        use AssignmentStatus::*;
        matches!(
            (self, next),
            (Queued, Delivered) | (Delivered, Running) | (Running, Done) | (Queued | Delivered | Running, Failed)
        )
    }
}

impl fmt::Display for AssignmentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: Id,
    pub task_id: Id,
    pub machine_id: Id,
    /// ANN packages the machine should load, keyed by the concept they detect.
    pub implementations: Vec<Implementation>,
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: Id,
    pub script: TaskScript,
    pub concepts: Vec<String>,
    pub assignments: Vec<Id>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub script: TaskScript,
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default)]
    pub machines: MachineFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task: Task,
    pub assignments: Vec<Assignment>,
}

/// What a polling client receives from its outbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub assignment: Assignment,
    pub script: TaskScript,
}

/// Selects an implementation per concept and queues one assignment per
/// distinct machine. A request without concepts is queued for every machine
/// listed in `machines.ids`.
pub fn submit_task(store: &Store, req: &TaskRequest) -> Result<TaskView> {
    store.commit(|state| {
        req.script.validate(state)?;
        let mut per_machine: BTreeMap<Id, Vec<Implementation>> = BTreeMap::new();
        if req.concepts.is_empty() {
            let ids = req
                .machines
                .ids
                .as_ref()
                .filter(|ids| !ids.is_empty())
                .ok_or_else(|| Error::invariant("a task needs concepts or explicit machine ids"))?;
            for id in ids {
                if state.machine(*id).is_none() {
                    return Err(Error::unknown("machine", id));
                }
                per_machine.entry(*id).or_default();
            }
        }
        for name in &req.concepts {
            let sel = select_implementation(state, name, &req.machines)?;
            let list = per_machine.entry(sel.machine_id).or_default();
            if !list.iter().any(|i| i.concept_id == sel.concept_id) {
                list.push(Implementation {
                    concept_id: sel.concept_id,
                    concept: state.concept(sel.concept_id).expect("selected").name.clone(),
                    ann_id: sel.ann_id,
                });
            }
        }
        let task_id = state.next_id();
        let assignments: Vec<Assignment> = per_machine
            .into_iter()
            .enumerate()
            .map(|(i, (machine_id, implementations))| Assignment {
                id: task_id + 1 + i as u64,
                task_id,
                machine_id,
                implementations,
                status: AssignmentStatus::Queued,
            })
            .collect();
        let task = Task {
            id: task_id,
            script: req.script.clone(),
            concepts: req.concepts.clone(),
            assignments: assignments.iter().map(|a| a.id).collect(),
        };
        let view = TaskView { task, assignments };
        Ok((Op::SubmitTask(view.clone()), view))
    })
}

/// Queues the default goal script for one machine.
pub fn dispatch_goal(store: &Store, machine_id: Id, goal: GeoPoint) -> Result<TaskView> {
    submit_task(
        store,
        &TaskRequest {
            script: TaskScript::default_for_goal(goal),
            concepts: vec![],
            machines: MachineFilter::only(machine_id),
        },
    )
}

/// Hands over every queued assignment of a machine, marking them delivered.
pub fn drain_outbox(store: &Store, machine_id: Id) -> Result<Vec<Delivery>> {
    store.commit(|state| {
        if state.machine(machine_id).is_none() {
            return Err(Error::unknown("machine", machine_id));
        }
        let deliveries: Vec<Delivery> = state
            .queued_for(machine_id)
            .map(|a| {
                let mut assignment = a.clone();
                assignment.status = AssignmentStatus::Delivered;
                let script = state.task(a.task_id).expect("assignment task exists").script.clone();
                Delivery { assignment, script }
            })
            .collect();
        if deliveries.is_empty() {
            return Ok((Op::Noop, deliveries));
        }
        let ids = deliveries.iter().map(|d| d.assignment.id).collect();
        Ok((Op::Deliver { machine_id, ids }, deliveries))
    })
}

pub fn set_assignment_status(store: &Store, id: Id, status: AssignmentStatus) -> Result<Assignment> {
    store.commit(|state| {
        let current = state.assignment(id).ok_or_else(|| Error::unknown("assignment", id))?;
        if !current.status.can_move_to(status) {
            return Err(Error::InvalidTransition {
                from: current.status.as_str(),
                to: status.as_str(),
            });
        }
        let mut next = current.clone();
        next.status = status;
        Ok((Op::SetStatus { id, status }, next))
    })
}

pub fn task_view(state: &State, id: Id) -> Option<TaskView> {
    let task = state.task(id)?.clone();
    let assignments = task
        .assignments
        .iter()
        .filter_map(|a| state.assignment(*a).cloned())
        .collect();
    Some(TaskView { task, assignments })
}
