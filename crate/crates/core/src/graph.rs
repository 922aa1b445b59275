//! Concepts, strength-graded relation mappings, and the reasoning that runs
//! over them: context inference, next-detection suggestions and text
//! relevance scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Op, State, Store};
use crate::Id;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: Id,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Attribute,
    Action,
    Ann,
}

impl MappingKind {
    pub const ALL: [MappingKind; 3] = [MappingKind::Attribute, MappingKind::Action, MappingKind::Ann];

    pub fn as_str(self) -> &'static str {
        match self {
            MappingKind::Attribute => "attribute",
            MappingKind::Action => "action",
            MappingKind::Ann => "ann",
        }
    }

    pub fn targets_concept(self) -> bool {
        self != MappingKind::Ann
    }
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(MappingKind::Attribute),
            "action" => Ok(MappingKind::Action),
            "ann" => Ok(MappingKind::Ann),
            other => Err(Error::invariant(format!("unknown mapping kind {other:?}"))),
        }
    }
}

/// Gaussian grade of a relationship's strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthGrade {
    pub mean: f64,
    pub std: f64,
}

impl StrengthGrade {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let g = Self { mean, std };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mean) {
            return Err(Error::invariant(format!("strength mean {} outside [0, 1]", self.mean)));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(Error::invariant(format!(
                "strength std {} must be finite and >= 0",
                self.std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMapping {
    pub source: Id,
    pub kind: MappingKind,
    pub target: Id,
    pub strength: StrengthGrade,
}

impl RelationMapping {
    pub fn key(&self) -> (Id, MappingKind, Id) {
        (self.source, self.kind, self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub concept: Id,
    pub confidence: f64,
}

/// Concepts a machine has detected, each with a confidence in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evidence(pub Vec<EvidenceItem>);

impl Evidence {
    pub fn new(items: impl IntoIterator<Item = (Id, f64)>) -> Self {
        Evidence(
            items
                .into_iter()
                .map(|(concept, confidence)| EvidenceItem { concept, confidence })
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: Id) -> bool {
        self.0.iter().any(|e| e.concept == id)
    }

    /// Checks distinct ids, in-range confidences and that every id names a concept.
    pub fn validate(&self, state: &State) -> Result<BTreeMap<Id, f64>> {
        let mut seen = BTreeMap::new();
        for item in &self.0 {
            if !(0.0..=1.0).contains(&item.confidence) {
                return Err(Error::invariant(format!(
                    "confidence {} for concept {} outside [0, 1]",
                    item.confidence, item.concept
                )));
            }
            if state.concept(item.concept).is_none() {
                return Err(Error::unknown("concept", item.concept));
            }
            if seen.insert(item.concept, item.confidence).is_some() {
                return Err(Error::invariant(format!(
                    "concept {} listed twice in evidence",
                    item.concept
                )));
            }
        }
        Ok(seen)
    }
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase()
}

pub fn create_concept(store: &Store, name: &str, description: &str) -> Result<Concept> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::invariant("concept name must not be empty"));
    }
    store.commit(|state| {
        if state.concept_by_name(name).is_some() {
            return Err(Error::DuplicateName {
                kind: "concept",
                name: name.to_string(),
            });
        }
        let concept = Concept {
            id: state.next_id(),
            name: name.to_string(),
            description: description.to_string(),
        };
        Ok((Op::CreateConcept(concept.clone()), concept))
    })
}

/// Removes a concept together with every mapping that touches it. Mapped
/// concepts themselves are left alone.
pub fn delete_concept(store: &Store, id: Id) -> Result<bool> {
    store.commit(|state| {
        if state.concept(id).is_none() {
            return Ok((Op::Noop, false));
        }
        Ok((Op::DeleteConcept { id }, true))
    })
}

/// Creates a mapping. There is no update: to change a strength, unmap and map again.
pub fn map_relation(
    store: &Store,
    source: Id,
    kind: MappingKind,
    target: Id,
    strength: StrengthGrade,
) -> Result<RelationMapping> {
    strength.validate()?;
    store.commit(|state| {
        if state.concept(source).is_none() {
            return Err(Error::unknown("concept", source));
        }
        if kind.targets_concept() {
            if state.concept(target).is_none() {
                if state.ann(target).is_some() {
                    return Err(Error::KindTargetMismatch {
                        kind: kind.as_str(),
                        target,
                    });
                }
                return Err(Error::unknown("concept", target));
            }
            if source == target {
                return Err(Error::SelfMapping(source));
            }
        } else if state.ann(target).is_none() {
            if state.concept(target).is_some() {
                return Err(Error::KindTargetMismatch {
                    kind: kind.as_str(),
                    target,
                });
            }
            return Err(Error::unknown("ann", target));
        }
        if state.mapping(source, kind, target).is_some() {
            return Err(Error::DuplicateMapping {
                source_id: source,
                kind: kind.as_str(),
                target,
            });
        }
        let m = RelationMapping {
            source,
            kind,
            target,
            strength,
        };
        Ok((Op::Map(m.clone()), m))
    })
}

/// Returns true iff the mapping existed and has been removed.
pub fn unmap_relation(store: &Store, source: Id, kind: MappingKind, target: Id) -> Result<bool> {
    store.commit(|state| {
        if state.concept(source).is_none() {
            return Err(Error::unknown("concept", source));
        }
        if state.mapping(source, kind, target).is_none() {
            return Ok((Op::Noop, false));
        }
        Ok((Op::Unmap { source, kind, target }, true))
    })
}

/// One draw from `Normal(mean, std)` clamped to `[0, 1]`, using a
/// `Xoshiro256PlusPlus` seeded with `seed`.
pub fn sample_strength(mapping: &RelationMapping, seed: u64) -> f64 {
    let StrengthGrade { mean, std } = mapping.strength;
    if std == 0.0 {
        return mean;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let normal = Normal::new(mean, std).expect("validated std");
    normal.sample(&mut rng).clamp(0.0, 1.0)
}

/// Ranks concepts whose attribute/action mappings reach into the evidence.
///
/// `score(c) = sum(mean(m) * conf(target(m)) for m in M(c) reaching evidence) / sum(mean(m) for m in M(c))`
/// where `M(c)` is every attribute and action mapping of `c`. Sorted by score
/// descending, then id ascending. A candidate whose means are all zero scores 0.
pub fn infer_context(state: &State, evidence: &Evidence) -> Result<Vec<(Id, f64)>> {
    if evidence.is_empty() {
        return Err(Error::EmptyEvidence);
    }
    let conf = evidence.validate(state)?;

    let candidates: BTreeSet<Id> = conf
        .keys()
        .flat_map(|&target| state.mappings_into(target))
        .filter(|m| m.kind.targets_concept())
        .map(|m| m.source)
        .collect();

    let mut ranked: Vec<(Id, f64)> = candidates
        .into_iter()
        .map(|c| {
            let (mut hit, mut total) = (0.0, 0.0);
            for m in state.mappings_from(c).filter(|m| m.kind.targets_concept()) {
                total += m.strength.mean;
                if let Some(cf) = conf.get(&m.target) {
                    hit += m.strength.mean * cf;
                }
            }
            (c, if total > 0.0 { hit / total } else { 0.0 })
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Attribute/action targets of `concept` that are not yet in the evidence,
/// strongest first (ties by id). A target mapped both ways is listed once
/// under its stronger mean.
pub fn suggest_next(state: &State, concept: Id, evidence: &Evidence) -> Result<Vec<Id>> {
    if state.concept(concept).is_none() {
        return Err(Error::unknown("concept", concept));
    }
    let mut best: BTreeMap<Id, f64> = BTreeMap::new();
    for m in state.mappings_from(concept).filter(|m| m.kind.targets_concept()) {
        if evidence.contains(m.target) {
            continue;
        }
        let e = best.entry(m.target).or_insert(m.strength.mean);
        *e = e.max(m.strength.mean);
    }
    let mut out: Vec<(Id, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out.into_iter().map(|(id, _)| id).collect())
}

/// Counts the (possibly overlapping) places where `name`'s words occur as a
/// contiguous run of tokens.
fn hits(name: &str, tokens: &[String]) -> usize {
    let words: Vec<String> = name.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() || words.len() > tokens.len() {
        return 0;
    }
    tokens
        .windows(words.len())
        .filter(|w| w.iter().zip(&words).all(|(t, n)| t == n))
        .count()
}

/// `(hits(name(c)) + sum(mean(m) * hits(name(target(m))))) / max(1, |tokens|)`
/// over the attribute and action mappings of `c`.
pub fn score_text_relevance(state: &State, concept: Id, tokens: &[String]) -> Result<f64> {
    let c = state
        .concept(concept)
        .ok_or_else(|| Error::unknown("concept", concept))?;
    let mut score = hits(&c.name, tokens) as f64;
    for m in state.mappings_from(concept).filter(|m| m.kind.targets_concept()) {
        if let Some(target) = state.concept(m.target) {
            score += m.strength.mean * hits(&target.name, tokens) as f64;
        }
    }
    Ok(score / tokens.len().max(1) as f64)
}
