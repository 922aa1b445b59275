//! Manifesting: callers name the nested collections they want with dot
//! paths such as `motors.commands`; everything not named is left absent.
//!
//! Vocabulary per node:
//!
//! | node      | segment      | leads to  |
//! |-----------|--------------|-----------|
//! | machine   | `motors`     | motor     |
//! | machine   | `sensors`    | leaf      |
//! | machine   | `adapters`   | leaf      |
//! | motor     | `commands`   | command   |
//! | command   | `arguments`  | leaf      |
//! | concept   | `attributes` | concept   |
//! | concept   | `actions`    | concept   |
//! | concept   | `anns`       | leaf      |
//!
//! ANN packages have no nested collections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::state::State;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::graph::{normalize_name, Concept, MappingKind, StrengthGrade};
use crate::interop::AnnPackage;
use crate::registry::{AdapterBinding, Argument, Command, Machine, Motor, Sensor};
use crate::Id;

pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Concept,
    Machine,
    Ann,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Concept => "concept",
            EntityType::Machine => "machine",
            EntityType::Ann => "ann",
        }
    }

    fn node(self) -> Node {
        match self {
            EntityType::Concept => Node::Concept,
            EntityType::Machine => Node::Machine,
            EntityType::Ann => Node::Leaf,
        }
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concept" | "concepts" => Ok(EntityType::Concept),
            "machine" | "machines" => Ok(EntityType::Machine),
            "ann" | "anns" => Ok(EntityType::Ann),
            other => Err(Error::UnknownEntityType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Machine,
    Motor,
    Command,
    Concept,
    Leaf,
}

impl Node {
    fn child(self, segment: &str) -> Option<Node> {
        match (self, segment) {
            (Node::Machine, "motors") => Some(Node::Motor),
            (Node::Machine, "sensors" | "adapters") => Some(Node::Leaf),
            (Node::Motor, "commands") => Some(Node::Command),
            (Node::Command, "arguments") => Some(Node::Leaf),
            (Node::Concept, "attributes" | "actions") => Some(Node::Concept),
            (Node::Concept, "anns") => Some(Node::Leaf),
            _ => None,
        }
    }

    fn segments(self) -> &'static [&'static str] {
        match self {
            Node::Machine => &["motors", "sensors", "adapters"],
            Node::Motor => &["commands"],
            Node::Command => &["arguments"],
            Node::Concept => &["attributes", "actions", "anns"],
            Node::Leaf => &[],
        }
    }
}

/// A dot-separated path of lowercase segments, at most four deep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExpansionPath(Vec<String>);

impl ExpansionPath {
    /// Parses the syntax only; see [`ExpansionPath::check`] for the vocabulary.
    pub fn parse(raw: &str) -> Result<Self> {
        let bad = || Error::UnknownExpansionPath(raw.to_string());
        let segments: Vec<String> = raw.split('.').map(str::to_string).collect();
        if segments.len() > MAX_DEPTH {
            return Err(bad());
        }
        for s in &segments {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                return Err(bad());
            }
        }
        Ok(ExpansionPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Fails unless every segment is a relation of the node its prefix reaches.
    pub fn check(&self, root: EntityType) -> Result<()> {
        let mut node = root.node();
        for seg in &self.0 {
            node = node
                .child(seg)
                .ok_or_else(|| Error::UnknownExpansionPath(self.to_string()))?;
        }
        Ok(())
    }
}

impl fmt::Display for ExpansionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl FromStr for ExpansionPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExpansionPath::parse(s)
    }
}

impl Serialize for ExpansionPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExpansionPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ExpansionPath::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Splits a comma-separated list, trims each entry and validates it for
/// `root`. The empty string yields no paths.
pub fn parse_expand(raw: &str, root: EntityType) -> Result<Vec<ExpansionPath>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|p| {
            let path = ExpansionPath::parse(p.trim())?;
            path.check(root)?;
            Ok(path)
        })
        .collect()
}

/// Every valid path for `root`, shortest first.
pub fn all_paths(root: EntityType) -> Vec<ExpansionPath> {
    fn walk(node: Node, prefix: &mut Vec<String>, out: &mut Vec<ExpansionPath>) {
        if prefix.len() == MAX_DEPTH {
            return;
        }
        for seg in node.segments() {
            prefix.push(seg.to_string());
            out.push(ExpansionPath(prefix.clone()));
            walk(node.child(seg).unwrap(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(root.node(), &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.depth().cmp(&b.depth()).then_with(|| a.cmp(b)));
    out
}

/// Requested paths folded into a tree: a collection is populated iff some
/// requested path runs through it.
#[derive(Debug, Default)]
struct Tree(BTreeMap<String, Tree>);

impl Tree {
    fn build(paths: &[ExpansionPath]) -> Tree {
        let mut root = Tree::default();
        for p in paths {
            let mut node = &mut root;
            for seg in &p.0 {
                node = node.0.entry(seg.clone()).or_default();
            }
        }
        root
    }

    fn get(&self, seg: &str) -> Option<&Tree> {
        self.0.get(seg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", content = "value", rename_all = "lowercase")]
pub enum Filter {
    All,
    Id(Id),
    /// Case-insensitive exact name.
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandView {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Vec<Argument>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorView {
    pub id: Id,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commands: Option<Vec<CommandView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineView {
    pub id: Id,
    pub name: String,
    pub platform: String,
    pub location: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motors: Option<Vec<MotorView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<Sensor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapters: Option<Vec<AdapterBinding>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnLinkView {
    pub target: Id,
    pub name: String,
    pub strength: StrengthGrade,
    pub retired: bool,
}

/// A mapped concept, seen from the concept that maps to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLinkView {
    pub target: Id,
    pub name: String,
    pub strength: StrengthGrade,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<ConceptLinkView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<ConceptLinkView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anns: Option<Vec<AnnLinkView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptView {
    pub id: Id,
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<ConceptLinkView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<ConceptLinkView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anns: Option<Vec<AnnLinkView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Row {
    Machine(MachineView),
    Concept(ConceptView),
    Ann(AnnPackage),
}

impl Row {
    pub fn id(&self) -> Id {
        match self {
            Row::Machine(m) => m.id,
            Row::Concept(c) => c.id,
            Row::Ann(a) => a.id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bulk,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub mode: Mode,
    pub rows: Vec<Row>,
    pub populated_paths: BTreeSet<ExpansionPath>,
}

fn command_view(c: &Command, t: Option<&Tree>) -> CommandView {
    CommandView {
        name: c.name.clone(),
        arguments: t.and_then(|t| t.get("arguments")).map(|_| c.arguments.clone()),
    }
}

fn motor_view(m: &Motor, t: Option<&Tree>) -> MotorView {
    MotorView {
        id: m.id,
        name: m.name.clone(),
        commands: t
            .and_then(|t| t.get("commands"))
            .map(|ct| m.commands.iter().map(|c| command_view(c, Some(ct))).collect()),
    }
}

fn machine_view(state: &State, m: &Machine, t: &Tree) -> MachineView {
    MachineView {
        id: m.id,
        name: m.name.clone(),
        platform: m.platform.clone(),
        location: m.location,
        motors: t
            .get("motors")
            .map(|mt| m.motors.iter().map(|x| motor_view(x, Some(mt))).collect()),
        sensors: t.get("sensors").map(|_| m.sensors.clone()),
        adapters: t.get("adapters").map(|_| state.bindings_for(m.id).cloned().collect()),
    }
}

type Links = (
    Option<Vec<ConceptLinkView>>,
    Option<Vec<ConceptLinkView>>,
    Option<Vec<AnnLinkView>>,
);

fn concept_links(state: &State, id: Id, t: &Tree) -> Links {
    let concept_kind = |kind: MappingKind, seg: &str| {
        t.get(seg).map(|sub| {
            state
                .mappings_from(id)
                .filter(|m| m.kind == kind)
                .filter_map(|m| {
                    let target = state.concept(m.target)?;
                    let (attributes, actions, anns) = concept_links(state, target.id, sub);
                    Some(ConceptLinkView {
                        target: target.id,
                        name: target.name.clone(),
                        strength: m.strength,
                        attributes,
                        actions,
                        anns,
                    })
                })
                .collect()
        })
    };
    let anns = t.get("anns").map(|_| {
        state
            .mappings_from(id)
            .filter(|m| m.kind == MappingKind::Ann)
            .filter_map(|m| {
                let a = state.ann(m.target)?;
                Some(AnnLinkView {
                    target: a.id,
                    name: a.name.clone(),
                    strength: m.strength,
                    retired: a.retired,
                })
            })
            .collect()
    });
    (
        concept_kind(MappingKind::Attribute, "attributes"),
        concept_kind(MappingKind::Action, "actions"),
        anns,
    )
}

fn concept_view(state: &State, c: &Concept, t: &Tree) -> ConceptView {
    let (attributes, actions, anns) = concept_links(state, c.id, t);
    ConceptView {
        id: c.id,
        name: c.name.clone(),
        description: c.description.clone(),
        attributes,
        actions,
        anns,
    }
}

fn matches(filter: &Filter, id: Id, name: &str) -> bool {
    match filter {
        Filter::All => true,
        Filter::Id(want) => *want == id,
        Filter::Name(want) => normalize_name(want) == normalize_name(name),
    }
}

fn root_ids(state: &State, ty: EntityType, filter: &Filter) -> Vec<Id> {
    match ty {
        EntityType::Concept => state
            .concepts()
            .filter(|c| matches(filter, c.id, &c.name))
            .map(|c| c.id)
            .collect(),
        EntityType::Machine => state
            .machines()
            .filter(|m| matches(filter, m.id, &m.name))
            .map(|m| m.id)
            .collect(),
        EntityType::Ann => state
            .anns()
            .filter(|a| matches(filter, a.id, &a.name))
            .map(|a| a.id)
            .collect(),
    }
}

fn row(state: &State, ty: EntityType, id: Id, t: &Tree) -> Option<Row> {
    Some(match ty {
        EntityType::Concept => Row::Concept(concept_view(state, state.concept(id)?, t)),
        EntityType::Machine => Row::Machine(machine_view(state, state.machine(id)?, t)),
        EntityType::Ann => Row::Ann(state.ann(id)?.clone()),
    })
}

fn checked(ty: EntityType, expand: &[ExpansionPath]) -> Result<Tree> {
    for p in expand {
        p.check(ty)?;
    }
    Ok(Tree::build(expand))
}

/// Materializes every matching root, ordered by id, with exactly the
/// requested paths populated.
pub fn load_bulk(state: &State, ty: EntityType, filter: &Filter, expand: &[ExpansionPath]) -> Result<QueryResult> {
    let tree = checked(ty, expand)?;
    let rows = root_ids(state, ty, filter)
        .into_iter()
        .filter_map(|id| row(state, ty, id, &tree))
        .collect();
    Ok(QueryResult {
        mode: Mode::Bulk,
        rows,
        populated_paths: expand.iter().cloned().collect(),
    })
}

/// Chunked iteration over the roots of one snapshot. Single consumer.
#[derive(Debug)]
pub struct Cursor {
    state: Arc<State>,
    ty: EntityType,
    ids: Vec<Id>,
    pos: usize,
    chunk_size: usize,
    exhausted: bool,
}

impl Cursor {
    pub fn open(state: Arc<State>, ty: EntityType, filter: &Filter, chunk_size: usize) -> Result<Cursor> {
        if chunk_size == 0 {
            return Err(Error::invariant("chunk size must be at least 1"));
        }
        let ids = root_ids(&state, ty, filter);
        Ok(Cursor {
            state,
            ty,
            ids,
            pos: 0,
            chunk_size,
            exhausted: false,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn entity_type(&self) -> EntityType {
        self.ty
    }

    fn take(&mut self, tree: &Tree) -> Vec<Row> {
        let end = (self.pos + self.chunk_size).min(self.ids.len());
        let rows = self.ids[self.pos..end]
            .iter()
            .filter_map(|id| row(&self.state, self.ty, *id, tree))
            .collect();
        self.pos = end;
        if self.pos == self.ids.len() {
            self.exhausted = true;
        }
        rows
    }

    /// Next chunk of shallow rows; empty once the cursor is exhausted.
    pub fn next_chunk(&mut self) -> Vec<Row> {
        if self.exhausted {
            return Vec::new();
        }
        self.take(&Tree::default())
    }

    /// Next chunk with `expand` populated. A bad path leaves the cursor
    /// where it was; calling this after exhaustion is an error.
    pub fn manifest_chunk(&mut self, expand: &[ExpansionPath]) -> Result<Vec<Row>> {
        if self.exhausted {
            return Err(Error::CursorExhausted);
        }
        let tree = checked(self.ty, expand)?;
        Ok(self.take(&tree))
    }
}
