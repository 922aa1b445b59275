use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{normalize_name, Concept, MappingKind, RelationMapping};
use crate::interop::AnnPackage;
use crate::registry::{AdapterBinding, Machine};
use crate::swarm::{Assignment, AssignmentStatus, EfficacyRecord, MappingKey, Task, TaskView};
use crate::Id;

type MappingKey3 = (Id, MappingKind, Id);

/// One acknowledged mutation. Ops are what the journal stores; applying
/// them in order to an empty state reproduces the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "data", rename_all = "snake_case")]
pub enum Op {
    Noop,
    CreateConcept(Concept),
    DeleteConcept { id: Id },
    Map(RelationMapping),
    Unmap { source: Id, kind: MappingKind, target: Id },
    PutAnn(AnnPackage),
    RetireAnn { id: Id },
    RegisterMachine(Machine),
    BindAdapter(AdapterBinding),
    Outcome(EfficacyRecord),
    SubmitTask(TaskView),
    Deliver { machine_id: Id, ids: Vec<Id> },
    SetStatus { id: Id, status: AssignmentStatus },
}

impl Op {
    /// Record type tag written in front of every journal record.
    pub fn tag(&self) -> u8 {
        match self {
            Op::Noop => 0,
            Op::CreateConcept(_) => 1,
            Op::DeleteConcept { .. } => 2,
            Op::Map(_) => 3,
            Op::Unmap { .. } => 4,
            Op::PutAnn(_) => 5,
            Op::RetireAnn { .. } => 6,
            Op::RegisterMachine(_) => 7,
            Op::BindAdapter(_) => 8,
            Op::Outcome(_) => 9,
            Op::SubmitTask(_) => 10,
            Op::Deliver { .. } => 11,
            Op::SetStatus { .. } => 12,
        }
    }

    fn max_id(&self) -> Option<Id> {
        match self {
            Op::CreateConcept(c) => Some(c.id),
            Op::PutAnn(a) => Some(a.id),
            Op::RegisterMachine(m) => m
                .motors
                .iter()
                .map(|x| x.id)
                .chain(m.sensors.iter().map(|s| s.id))
                .chain([m.id])
                .max(),
            Op::BindAdapter(b) => Some(b.id),
            Op::SubmitTask(v) => v.assignments.iter().map(|a| a.id).chain([v.task.id]).max(),
            _ => None,
        }
    }
}

/// The full in-memory image of the store. Snapshots are cheap `Arc` clones
/// of this and never change once handed out.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    seq: u64,
    next_id: Id,
    concepts: BTreeMap<Id, Concept>,
    concept_names: BTreeMap<String, Id>,
    mappings: BTreeMap<MappingKey3, RelationMapping>,
    /// (target, kind, source)
    reverse: BTreeSet<MappingKey3>,
    anns: BTreeMap<Id, AnnPackage>,
    ann_names: BTreeMap<String, Id>,
    machines: BTreeMap<Id, Machine>,
    machine_names: BTreeMap<String, Id>,
    bindings: BTreeMap<Id, AdapterBinding>,
    efficacy: BTreeMap<MappingKey, EfficacyRecord>,
    tasks: BTreeMap<Id, Task>,
    assignments: BTreeMap<Id, Assignment>,
}

impl Default for State {
    fn default() -> Self {
        Self {
            seq: 0,
            next_id: 1,
            concepts: BTreeMap::new(),
            concept_names: BTreeMap::new(),
            mappings: BTreeMap::new(),
            reverse: BTreeSet::new(),
            anns: BTreeMap::new(),
            ann_names: BTreeMap::new(),
            machines: BTreeMap::new(),
            machine_names: BTreeMap::new(),
            bindings: BTreeMap::new(),
            efficacy: BTreeMap::new(),
            tasks: BTreeMap::new(),
            assignments: BTreeMap::new(),
        }
    }
}

impl State {
    /// Sequence number of the last applied op.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// The id the next inserted entity will receive.
    pub fn next_id(&self) -> Id {
        self.next_id
    }

    pub fn concept(&self, id: Id) -> Option<&Concept> {
        self.concepts.get(&id)
    }

    pub fn concept_by_name(&self, name: &str) -> Option<&Concept> {
        self.concept_names
            .get(&normalize_name(name))
            .and_then(|id| self.concepts.get(id))
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn mapping(&self, source: Id, kind: MappingKind, target: Id) -> Option<&RelationMapping> {
        self.mappings.get(&(source, kind, target))
    }

    pub fn mappings(&self) -> impl Iterator<Item = &RelationMapping> {
        self.mappings.values()
    }

    /// Outgoing mappings of `source`, ordered by (kind, target).
    pub fn mappings_from(&self, source: Id) -> impl Iterator<Item = &RelationMapping> {
        self.mappings
            .range((source, MappingKind::Attribute, 0)..=(source, MappingKind::Ann, Id::MAX))
            .map(|(_, m)| m)
    }

    /// Incoming mappings of `target`, ordered by (kind, source).
    pub fn mappings_into(&self, target: Id) -> impl Iterator<Item = &RelationMapping> {
        self.reverse
            .range((target, MappingKind::Attribute, 0)..=(target, MappingKind::Ann, Id::MAX))
            .map(|&(t, k, s)| &self.mappings[&(s, k, t)])
    }

    pub fn ann(&self, id: Id) -> Option<&AnnPackage> {
        self.anns.get(&id)
    }

    pub fn ann_by_name(&self, name: &str) -> Option<&AnnPackage> {
        self.ann_names.get(name).and_then(|id| self.anns.get(id))
    }

    pub fn anns(&self) -> impl Iterator<Item = &AnnPackage> {
        self.anns.values()
    }

    pub fn machine(&self, id: Id) -> Option<&Machine> {
        self.machines.get(&id)
    }

    pub fn machine_by_name(&self, name: &str) -> Option<&Machine> {
        self.machine_names.get(name).and_then(|id| self.machines.get(id))
    }

    pub fn machines(&self) -> impl Iterator<Item = &Machine> {
        self.machines.values()
    }

    pub fn binding(&self, id: Id) -> Option<&AdapterBinding> {
        self.bindings.get(&id)
    }

    pub fn bindings(&self) -> impl Iterator<Item = &AdapterBinding> {
        self.bindings.values()
    }

    pub fn bindings_for(&self, machine: Id) -> impl Iterator<Item = &AdapterBinding> {
        self.bindings.values().filter(move |b| b.machine_id == machine)
    }

    pub fn efficacy(&self, key: &MappingKey) -> Option<&EfficacyRecord> {
        self.efficacy.get(key)
    }

    pub fn efficacy_records(&self) -> impl Iterator<Item = &EfficacyRecord> {
        self.efficacy.values()
    }

    pub fn task(&self, id: Id) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn assignment(&self, id: Id) -> Option<&Assignment> {
        self.assignments.get(&id)
    }

    pub fn assignments(&self) -> impl Iterator<Item = &Assignment> {
        self.assignments.values()
    }

    /// Queued assignments of one machine in id order.
    pub fn queued_for(&self, machine: Id) -> impl Iterator<Item = &Assignment> {
        self.assignments
            .values()
            .filter(move |a| a.machine_id == machine && a.status == AssignmentStatus::Queued)
    }

    /// Applies an op that was validated against this very state. Applying
    /// is infallible; replay relies on that.
    pub(crate) fn apply(&mut self, seq: u64, op: Op) {
        if let Some(id) = op.max_id() {
            self.next_id = self.next_id.max(id + 1);
        }
        self.seq = seq;
        match op {
            Op::Noop => {}
            Op::CreateConcept(c) => {
                self.concept_names.insert(normalize_name(&c.name), c.id);
                self.concepts.insert(c.id, c);
            }
            Op::DeleteConcept { id } => {
                if let Some(c) = self.concepts.remove(&id) {
                    self.concept_names.remove(&normalize_name(&c.name));
                }
                let outgoing: Vec<MappingKey3> = self.mappings_from(id).map(RelationMapping::key).collect();
                let incoming: Vec<MappingKey3> = self.mappings_into(id).map(RelationMapping::key).collect();
                for key in outgoing.into_iter().chain(incoming) {
                    self.remove_mapping(key);
                }
            }
            Op::Map(m) => {
                self.reverse.insert((m.target, m.kind, m.source));
                self.mappings.insert(m.key(), m);
            }
            Op::Unmap { source, kind, target } => self.remove_mapping((source, kind, target)),
            Op::PutAnn(a) => {
                self.ann_names.insert(a.name.clone(), a.id);
                self.anns.insert(a.id, a);
            }
            Op::RetireAnn { id } => {
                if let Some(a) = self.anns.get_mut(&id) {
                    a.retired = true;
                }
            }
            Op::RegisterMachine(m) => {
                self.machine_names.insert(m.name.clone(), m.id);
                self.machines.insert(m.id, m);
            }
            Op::BindAdapter(b) => {
                self.bindings.insert(b.id, b);
            }
            Op::Outcome(rec) => {
                self.efficacy.insert(rec.key, rec);
            }
            Op::SubmitTask(view) => {
                for a in view.assignments {
                    self.assignments.insert(a.id, a);
                }
                self.tasks.insert(view.task.id, view.task);
            }
            Op::Deliver { ids, .. } => {
                for id in ids {
                    if let Some(a) = self.assignments.get_mut(&id) {
                        a.status = AssignmentStatus::Delivered;
                    }
                }
            }
            Op::SetStatus { id, status } => {
                if let Some(a) = self.assignments.get_mut(&id) {
                    a.status = status;
                }
            }
        }
    }

    fn remove_mapping(&mut self, (s, k, t): MappingKey3) {
        self.mappings.remove(&(s, k, t));
        self.reverse.remove(&(t, k, s));
    }

    pub(crate) fn to_image(&self) -> Image {
        Image {
            seq: self.seq,
            next_id: self.next_id,
            concepts: self.concepts.values().cloned().collect(),
            mappings: self.mappings.values().cloned().collect(),
            anns: self.anns.values().cloned().collect(),
            machines: self.machines.values().cloned().collect(),
            bindings: self.bindings.values().cloned().collect(),
            efficacy: self.efficacy.values().copied().collect(),
            tasks: self.tasks.values().cloned().collect(),
            assignments: self.assignments.values().cloned().collect(),
        }
    }

    pub(crate) fn from_image(image: Image) -> State {
        let mut s = State {
            seq: image.seq,
            next_id: image.next_id,
            ..State::default()
        };
        for c in image.concepts {
            s.concept_names.insert(normalize_name(&c.name), c.id);
            s.concepts.insert(c.id, c);
        }
        for m in image.mappings {
            s.reverse.insert((m.target, m.kind, m.source));
            s.mappings.insert(m.key(), m);
        }
        for a in image.anns {
            s.ann_names.insert(a.name.clone(), a.id);
            s.anns.insert(a.id, a);
        }
        for m in image.machines {
            s.machine_names.insert(m.name.clone(), m.id);
            s.machines.insert(m.id, m);
        }
        s.bindings = image.bindings.into_iter().map(|b| (b.id, b)).collect();
        s.efficacy = image.efficacy.into_iter().map(|r| (r.key, r)).collect();
        s.tasks = image.tasks.into_iter().map(|t| (t.id, t)).collect();
        s.assignments = image.assignments.into_iter().map(|a| (a.id, a)).collect();
        s
    }
}

/// Serialized form of a [`State`]: entity lists only, indexes are rebuilt.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Image {
    seq: u64,
    next_id: Id,
    concepts: Vec<Concept>,
    mappings: Vec<RelationMapping>,
    anns: Vec<AnnPackage>,
    machines: Vec<Machine>,
    bindings: Vec<AdapterBinding>,
    efficacy: Vec<EfficacyRecord>,
    tasks: Vec<Task>,
    assignments: Vec<Assignment>,
}
